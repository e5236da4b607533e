#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "formdigit/form_template.hpp"
#include "formdigit/models.hpp"
#include "formdigit/registration.hpp"
#include "formdigit/review.hpp"

namespace formdigit {

struct SegregationPolicy {
  double threshold = 0.9;  // confidence < threshold goes to review
};

struct DigitizedRow {
  int row_index = 0;
  bool all_blank = false;
  std::vector<DigitPrediction> digits;  // 10 cells; blank cells carry kBlankDigit
  double phone_confidence = 0.0;        // min over the 10 cells

  std::string digit_string() const;  // "BLANK" for all-blank rows, '_' marks a blank cell
};

enum class FormStatus { Ok, Unprocessed };

struct DigitizedForm {
  std::string form_id;
  FormStatus status = FormStatus::Ok;
  std::string error;  // registration failure, for unprocessed forms
  std::vector<DigitizedRow> rows;
};

struct DigitizeResult {
  DigitizedForm form;
  std::vector<ReviewItem> review;
};

// Template, its features and registration settings, prepared once.
struct PreparedTemplate {
  FormTemplate form;
  GrayImage reference;
  std::vector<Keypoint> features;
  RegistrationConfig registration;
};

PreparedTemplate prepare_template(const FormTemplate& t, const RenderSpec& style,
                                  const RegistrationConfig& cfg = {});

// Crops every cell through the scan->template homography, 32x32 as scanned
// (dark on light).
std::vector<GrayImage> crop_cells(const GrayImage& scan, const Homography& h, const FormTemplate& t);

// models must not be shared between threads (forward passes reuse buffers).
DigitizeResult digitize_form(const GrayImage& scan, const std::string& form_id, const PreparedTemplate& t,
                             ModelSet& models, const SegregationPolicy& policy);

struct Segregation {
  std::vector<std::size_t> high, low;
};
// Low iff confidence < threshold.
Segregation segregate(const std::vector<double>& confidences, const SegregationPolicy& policy);

// Replaces the referenced cells with the operator labels at confidence 1.
// Whole-form items carry no cell and are skipped.
DigitizedForm apply_corrections(const DigitizedForm& form, const std::vector<ReviewItem>& corrections);

struct ScanJob {
  std::string form_id;
  std::filesystem::path path;
};

// Digitizes in parallel; results come back in input order.
std::vector<DigitizeResult> digitize_batch(const std::vector<ScanJob>& jobs, const PreparedTemplate& t,
                                           const ModelSet& models, const SegregationPolicy& policy, int workers);

void write_records_csv(const std::vector<DigitizedForm>& forms, const SegregationPolicy& policy,
                       const std::filesystem::path& path);
std::vector<DigitizedForm> read_records_csv(const std::filesystem::path& path);

// Per-form detail (every cell's prediction and confidence), one JSON object
// per line.
void write_details_jsonl(const std::vector<DigitizedForm>& forms, const std::filesystem::path& path);
std::vector<DigitizedForm> read_details_jsonl(const std::filesystem::path& path);

// Table 2 shape for one threshold.
struct ThresholdRow {
  double threshold = 0;
  double low_fraction = 0;       // share of digits sent to review
  double low_accuracy = 0;       // initial accuracy inside the low group
  double high_accuracy = 0;      // accuracy inside the high group
  double overall_digit = 0;      // after the low group is corrected to truth
  double overall_phone = 0;
};

struct BlankConfusion {
  std::size_t blank_as_blank = 0, blank_as_digit = 0, digit_as_blank = 0, digit_as_digit = 0;
  std::size_t digit_cells_in_blank_rows = 0;  // DIGIT predictions inside rows that are blank in truth
};

struct CorpusMetrics {
  std::size_t forms = 0, unprocessed = 0, phones = 0, digits = 0;
  double digit_accuracy = 0, phone_accuracy = 0;
  BlankConfusion blank;
  std::vector<ThresholdRow> sweep;
};

// Scores digitized forms against ground truth. Unprocessed forms count as
// wrong and fully reviewed.
CorpusMetrics evaluate_corpus(const std::vector<DigitizedForm>& forms, const std::vector<GroundTruth>& truth,
                              const std::vector<double>& thresholds);

nlohmann::json metrics_to_json(const CorpusMetrics& m);
std::string sweep_table(const CorpusMetrics& m);

// A rendered corpus on disk: template.json, reference.png, scans/<id>.png and
// truth.jsonl (one GroundTruth per line, in form order).
struct CorpusSpec {
  int forms = 25;
  double blank_row_fraction = 0.5;  // rows left empty
  RenderSpec render;                // per-form seeds derive from render.seed
  std::string id_prefix = "form-";
};

struct CorpusEntry {
  std::string form_id;
  std::filesystem::path scan;
  GroundTruth truth;
};

// Phone strings and blank rows drawn from the spec's seed; form i is
// rendered with its own derived seed.
std::vector<std::optional<std::string>> random_phone_rows(const FormTemplate& t, double blank_row_fraction,
                                                          std::mt19937_64& rng);
std::vector<CorpusEntry> render_corpus(const FormTemplate& t, const GlyphSource& glyphs, const CorpusSpec& spec,
                                       const std::filesystem::path& dir);
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir);

}  // namespace formdigit
