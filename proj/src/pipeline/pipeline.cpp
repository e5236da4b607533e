#include "formdigit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "formdigit/errors.hpp"

namespace formdigit {

namespace {

DigitizedRow make_row(int row_index, std::vector<DigitPrediction> cells) {
  DigitizedRow r;
  r.row_index = row_index;
  r.digits = std::move(cells);
  r.all_blank = std::all_of(r.digits.begin(), r.digits.end(), [](const DigitPrediction& p) { return p.digit == kBlankDigit; });
  r.phone_confidence = 1.0;
  for (const DigitPrediction& p : r.digits) r.phone_confidence = std::min(r.phone_confidence, p.confidence);
  return r;
}

GrayImage thumbnail(const GrayImage& scan) { return resize_to(scan, 32, 32); }

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

}  // namespace

std::string DigitizedRow::digit_string() const {
  if (all_blank) return "BLANK";
  std::string s;
  for (const DigitPrediction& p : digits) s.push_back(p.digit == kBlankDigit ? '_' : static_cast<char>('0' + p.digit));
  return s;
}

PreparedTemplate prepare_template(const FormTemplate& t, const RenderSpec& style, const RegistrationConfig& cfg) {
  validate(t);
  PreparedTemplate p;
  p.form = t;
  p.registration = cfg;
  if (!t.reference_image_path.empty() && std::filesystem::exists(t.reference_image_path))
    p.reference = read_image(t.reference_image_path);
  else
    p.reference = render_blank_template(t, style);
  p.features = detect_features(p.reference, cfg.features);
  return p;
}

std::vector<GrayImage> crop_cells(const GrayImage& scan, const Homography& h, const FormTemplate& t) {
  std::vector<GrayImage> out;
  out.reserve(t.cell_count());
  for (const BoundingBox& b : t.all_cells()) out.push_back(warp_region(scan, h, b, 32, 32));
  return out;
}

DigitizeResult digitize_form(const GrayImage& scan, const std::string& form_id, const PreparedTemplate& t,
                             ModelSet& models, const SegregationPolicy& policy) {
  DigitizeResult res;
  res.form.form_id = form_id;
  Registration reg;
  try {
    reg = register_scan(scan, t.features, t.reference.height(), t.registration);
  } catch (const NoFeatures& e) {
    res.form.status = FormStatus::Unprocessed;
    res.form.error = e.what();
  } catch (const TooFewMatches& e) {
    res.form.status = FormStatus::Unprocessed;
    res.form.error = e.what();
  } catch (const DegenerateConfiguration& e) {
    res.form.status = FormStatus::Unprocessed;
    res.form.error = e.what();
  }
  if (res.form.status == FormStatus::Unprocessed) {
    ReviewItem item;
    item.id = review_item_id(form_id, -1, -1);
    item.form_id = form_id;
    item.crop = thumbnail(scan);
    item.note = res.form.error;
    res.review.push_back(std::move(item));
    return res;
  }

  const std::vector<GrayImage> crops = crop_cells(scan, reg.homography, t.form);
  std::vector<GrayImage> inputs;
  inputs.reserve(crops.size());
  for (const GrayImage& c : crops) inputs.push_back(invert(c));
  const std::vector<DigitPrediction> blank = predict_digits(models.blank, inputs);

  // Row rule first, then the digit model only where a digit survived.
  std::vector<bool> is_digit(inputs.size(), false);
  std::vector<std::size_t> digit_cells;
  std::size_t k = 0;
  for (const PhoneRow& row : t.form.rows) {
    std::vector<bool> raw;
    for (std::size_t c = 0; c < row.cells.size(); ++c) raw.push_back(blank[k + c].digit == 1);
    const std::vector<bool> kept = apply_row_rule(raw);
    for (std::size_t c = 0; c < row.cells.size(); ++c) {
      is_digit[k + c] = kept[c];
      if (kept[c]) digit_cells.push_back(k + c);
    }
    k += row.cells.size();
  }
  std::vector<GrayImage> digit_inputs;
  for (std::size_t i : digit_cells) digit_inputs.push_back(inputs[i]);
  const std::vector<DigitPrediction> digits = predict_digits(models.digits, digit_inputs);

  std::vector<DigitPrediction> cells(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    cells[i].digit = kBlankDigit;
    // A demoted cell is blank by rule, not by the network's say-so.
    cells[i].confidence = blank[i].digit == 0 ? blank[i].confidence : 1.0 - blank[i].confidence;
  }
  for (std::size_t j = 0; j < digit_cells.size(); ++j) cells[digit_cells[j]] = digits[j];

  k = 0;
  for (const PhoneRow& row : t.form.rows) {
    std::vector<DigitPrediction> rc(cells.begin() + static_cast<std::ptrdiff_t>(k),
                                    cells.begin() + static_cast<std::ptrdiff_t>(k + row.cells.size()));
    for (std::size_t c = 0; c < rc.size(); ++c) {
      if (!is_digit[k + c] || rc[c].confidence >= policy.threshold) continue;
      ReviewItem item;
      item.id = review_item_id(form_id, row.row_index, static_cast<int>(c));
      item.form_id = form_id;
      item.row_index = row.row_index;
      item.cell_index = static_cast<int>(c);
      item.crop = crops[k + c];
      item.predicted = rc[c].digit;
      item.confidence = rc[c].confidence;
      res.review.push_back(std::move(item));
    }
    res.form.rows.push_back(make_row(row.row_index, std::move(rc)));
    k += row.cells.size();
  }
  return res;
}

Segregation segregate(const std::vector<double>& confidences, const SegregationPolicy& policy) {
  Segregation s;
  for (std::size_t i = 0; i < confidences.size(); ++i)
    (confidences[i] < policy.threshold ? s.low : s.high).push_back(i);
  return s;
}

DigitizedForm apply_corrections(const DigitizedForm& form, const std::vector<ReviewItem>& corrections) {
  DigitizedForm out = form;
  for (const ReviewItem& c : corrections) {
    if (c.whole_form()) continue;
    if (c.form_id != form.form_id) throw UnknownCell(c.id + " belongs to form " + c.form_id + ", not " + form.form_id);
    if (!c.operator_label) throw std::invalid_argument(c.id + " carries no operator label");
    auto row = std::find_if(out.rows.begin(), out.rows.end(), [&](const DigitizedRow& r) { return r.row_index == c.row_index; });
    if (row == out.rows.end() || c.cell_index < 0 || c.cell_index >= static_cast<int>(row->digits.size()))
      throw UnknownCell(c.id);
    DigitPrediction& p = row->digits[static_cast<std::size_t>(c.cell_index)];
    p.digit = *c.operator_label;
    p.confidence = 1.0;
    p.embedding.reset();
    *row = make_row(row->row_index, std::move(row->digits));
  }
  return out;
}

std::vector<DigitizeResult> digitize_batch(const std::vector<ScanJob>& jobs, const PreparedTemplate& t,
                                           const ModelSet& models, const SegregationPolicy& policy, int workers) {
  std::vector<DigitizeResult> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    ModelSet mine = models;  // forward passes keep per-instance buffers
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        GrayImage scan;
        try {
          scan = read_image(jobs[i].path);
        } catch (const ImageIoError& e) {
          // An unreadable scan is routed to review like an unregistrable one.
          out[i].form.form_id = jobs[i].form_id;
          out[i].form.status = FormStatus::Unprocessed;
          out[i].form.error = e.what();
          ReviewItem item;
          item.id = review_item_id(jobs[i].form_id, -1, -1);
          item.form_id = jobs[i].form_id;
          item.crop = GrayImage(32, 32);
          item.note = e.what();
          out[i].review.push_back(std::move(item));
          continue;
        }
        out[i] = digitize_form(scan, jobs[i].form_id, t, mine, policy);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

void write_records_csv(const std::vector<DigitizedForm>& forms, const SegregationPolicy& policy,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "form_id,row_index,digits,min_confidence,needs_review\n";
  for (const DigitizedForm& f : forms) {
    if (f.status == FormStatus::Unprocessed) {
      out << f.form_id << ",-1,UNPROCESSED," << fmt(0.0) << ",true\n";
      continue;
    }
    for (const DigitizedRow& r : f.rows) {
      bool review = false;
      for (const DigitPrediction& p : r.digits)
        if (p.digit != kBlankDigit && p.confidence < policy.threshold) review = true;
      out << f.form_id << ',' << r.row_index << ',' << r.digit_string() << ',' << fmt(r.phone_confidence) << ','
          << (review ? "true" : "false") << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<DigitizedForm> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<DigitizedForm> forms;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 5) throw std::runtime_error(path.string() + ": malformed record '" + line + "'");
    if (forms.empty() || forms.back().form_id != f[0]) {
      forms.emplace_back();
      forms.back().form_id = f[0];
    }
    DigitizedForm& form = forms.back();
    if (f[2] == "UNPROCESSED") {
      form.status = FormStatus::Unprocessed;
      continue;
    }
    std::vector<DigitPrediction> cells(kDigitsPerRow);
    const double conf = std::stod(f[3]);
    if (f[2] != "BLANK") {
      if (f[2].size() != kDigitsPerRow) throw std::runtime_error("digit field must have ten characters");
      for (int c = 0; c < kDigitsPerRow; ++c) {
        cells[static_cast<std::size_t>(c)].digit = f[2][static_cast<std::size_t>(c)] == '_' ? kBlankDigit : f[2][static_cast<std::size_t>(c)] - '0';
        cells[static_cast<std::size_t>(c)].confidence = conf;
      }
    } else {
      for (DigitPrediction& p : cells) p.confidence = conf;
    }
    form.rows.push_back(make_row(std::stoi(f[1]), std::move(cells)));
  }
  return forms;
}

void write_details_jsonl(const std::vector<DigitizedForm>& forms, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const DigitizedForm& f : forms) {
    nlohmann::json j = {{"form_id", f.form_id}, {"status", f.status == FormStatus::Ok ? "ok" : "unprocessed"}};
    if (!f.error.empty()) j["error"] = f.error;
    nlohmann::json rows = nlohmann::json::array();
    for (const DigitizedRow& r : f.rows) {
      nlohmann::json cells = nlohmann::json::array();
      for (const DigitPrediction& p : r.digits) cells.push_back({{"digit", label_string(p.digit)}, {"confidence", p.confidence}});
      rows.push_back({{"row_index", r.row_index}, {"all_blank", r.all_blank}, {"cells", cells}});
    }
    j["rows"] = rows;
    out << j.dump() << '\n';
  }
}

std::vector<DigitizedForm> read_details_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DigitizedForm> forms;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    DigitizedForm f;
    f.form_id = j.at("form_id").get<std::string>();
    f.status = j.at("status").get<std::string>() == "ok" ? FormStatus::Ok : FormStatus::Unprocessed;
    f.error = j.value("error", "");
    for (const auto& r : j.at("rows")) {
      std::vector<DigitPrediction> cells;
      for (const auto& c : r.at("cells")) {
        DigitPrediction p;
        p.digit = parse_label(c.at("digit").get<std::string>());
        p.confidence = c.at("confidence").get<double>();
        cells.push_back(p);
      }
      f.rows.push_back(make_row(r.at("row_index").get<int>(), std::move(cells)));
    }
    forms.push_back(std::move(f));
  }
  return forms;
}

CorpusMetrics evaluate_corpus(const std::vector<DigitizedForm>& forms, const std::vector<GroundTruth>& truth,
                              const std::vector<double>& thresholds) {
  if (forms.size() != truth.size()) throw std::invalid_argument("forms and ground truth differ in count");
  CorpusMetrics m;
  m.forms = forms.size();

  // One entry per ground-truth digit: whether the prediction is right and
  // the confidence that decides its group.
  struct Scored {
    bool correct;
    double confidence;
    std::size_t phone;
  };
  std::vector<Scored> scored;
  std::size_t phone_id = 0, phones_right = 0;
  for (std::size_t f = 0; f < forms.size(); ++f) {
    const DigitizedForm& form = forms[f];
    const GroundTruth& gt = truth[f];
    if (form.status == FormStatus::Unprocessed) ++m.unprocessed;
    for (std::size_t r = 0; r < gt.digits.size(); ++r) {
      const DigitizedRow* row = nullptr;
      if (form.status == FormStatus::Ok) {
        for (const DigitizedRow& cand : form.rows)
          if (cand.row_index == static_cast<int>(r)) row = &cand;
        if (!row) throw UnknownCell("form " + form.form_id + " lacks row " + std::to_string(r));
      }
      const bool truth_blank = !gt.digits[r].has_value();
      bool phone_ok = true;
      for (std::size_t c = 0; c < kDigitsPerRow; ++c) {
        const int want = gt.cell_label(r, c);
        const int got = row ? row->digits[c].digit : -2;  // -2: never predicted
        const bool pred_blank = got == kBlankDigit;
        if (row) {
          if (want == kBlankDigit) (pred_blank ? m.blank.blank_as_blank : m.blank.blank_as_digit)++;
          else (pred_blank ? m.blank.digit_as_blank : m.blank.digit_as_digit)++;
          if (truth_blank && !pred_blank) ++m.blank.digit_cells_in_blank_rows;
        }
        if (truth_blank) continue;
        const bool ok = got == want;
        phone_ok = phone_ok && ok;
        scored.push_back({ok, row ? row->digits[c].confidence : 0.0, phone_id});
      }
      if (!truth_blank) {
        phones_right += phone_ok;
        ++phone_id;
      }
    }
  }
  m.phones = phone_id;
  m.digits = scored.size();
  const std::size_t right = static_cast<std::size_t>(std::count_if(scored.begin(), scored.end(), [](const Scored& s) { return s.correct; }));
  m.digit_accuracy = m.digits ? static_cast<double>(right) / m.digits : 0.0;
  m.phone_accuracy = m.phones ? static_cast<double>(phones_right) / m.phones : 0.0;

  std::vector<double> conf;
  for (const Scored& s : scored) conf.push_back(s.confidence);
  for (double th : thresholds) {
    const Segregation seg = segregate(conf, {th});
    ThresholdRow row;
    row.threshold = th;
    std::size_t low_right = 0, high_right = 0;
    for (std::size_t i : seg.low) low_right += scored[i].correct;
    for (std::size_t i : seg.high) high_right += scored[i].correct;
    row.low_fraction = m.digits ? static_cast<double>(seg.low.size()) / m.digits : 0.0;
    row.low_accuracy = seg.low.empty() ? 1.0 : static_cast<double>(low_right) / seg.low.size();
    row.high_accuracy = seg.high.empty() ? 1.0 : static_cast<double>(high_right) / seg.high.size();
    // Every low-group digit is corrected to the truth.
    row.overall_digit = m.digits ? static_cast<double>(seg.low.size() + high_right) / m.digits : 0.0;
    std::vector<bool> phone_ok(m.phones, true);
    std::vector<bool> low(scored.size(), false);
    for (std::size_t i : seg.low) low[i] = true;
    for (std::size_t i = 0; i < scored.size(); ++i)
      if (!low[i] && !scored[i].correct) phone_ok[scored[i].phone] = false;
    row.overall_phone = m.phones ? static_cast<double>(std::count(phone_ok.begin(), phone_ok.end(), true)) / m.phones : 0.0;
    m.sweep.push_back(row);
  }
  return m;
}

nlohmann::json metrics_to_json(const CorpusMetrics& m) {
  nlohmann::json sweep = nlohmann::json::array();
  for (const ThresholdRow& r : m.sweep)
    sweep.push_back({{"threshold", r.threshold},
                     {"percent_data", 100 * r.low_fraction},
                     {"low_group_accuracy", 100 * r.low_accuracy},
                     {"high_group_accuracy", 100 * r.high_accuracy},
                     {"overall_digit", 100 * r.overall_digit},
                     {"overall_phone", 100 * r.overall_phone}});
  return {{"forms", m.forms},
          {"unprocessed", m.unprocessed},
          {"phones", m.phones},
          {"digits", m.digits},
          {"digit_accuracy", 100 * m.digit_accuracy},
          {"phone_accuracy", 100 * m.phone_accuracy},
          {"blank_confusion",
           {{"blank_as_blank", m.blank.blank_as_blank},
            {"blank_as_digit", m.blank.blank_as_digit},
            {"digit_as_blank", m.blank.digit_as_blank},
            {"digit_as_digit", m.blank.digit_as_digit},
            {"digit_cells_in_blank_rows", m.blank.digit_cells_in_blank_rows}}},
          {"threshold_sweep", sweep}};
}

std::string sweep_table(const CorpusMetrics& m) {
  std::ostringstream out;
  out << "threshold,percent_data,low_group_accuracy,high_group_accuracy,overall_digit,overall_phone\n";
  for (const ThresholdRow& r : m.sweep)
    out << fmt(r.threshold, 2) << ',' << fmt(100 * r.low_fraction, 2) << ',' << fmt(100 * r.low_accuracy, 2) << ','
        << fmt(100 * r.high_accuracy, 2) << ',' << fmt(100 * r.overall_digit, 2) << ',' << fmt(100 * r.overall_phone, 2)
        << '\n';
  return out.str();
}

}  // namespace formdigit
