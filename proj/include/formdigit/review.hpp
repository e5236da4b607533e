#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "formdigit/imaging.hpp"

namespace formdigit {

enum class ReviewStatus { Pending, Labeled };

// One low-confidence digit, or a whole form that could not be registered
// (row_index and cell_index are then -1 and the crop is a page thumbnail).
struct ReviewItem {
  std::string id;
  std::string form_id;
  int row_index = -1;
  int cell_index = -1;
  GrayImage crop;  // 32x32, dark ink on light background as scanned
  int predicted = -1;  // digit, or -1 for blank / unknown
  double confidence = 0.0;
  ReviewStatus status = ReviewStatus::Pending;
  std::optional<int> operator_label;  // digit, or -1 for BLANK
  std::string labeled_at;             // ISO-8601 UTC
  std::string note;

  bool whole_form() const { return row_index < 0; }
};

std::string review_item_id(const std::string& form_id, int row_index, int cell_index);

// "0".."9" -> digit, "BLANK" -> -1; anything else throws std::invalid_argument.
int parse_label(const std::string& s);
std::string label_string(int label);

nlohmann::json review_item_to_json(const ReviewItem& item, bool with_crop);
ReviewItem review_item_from_json(const nlohmann::json& j);

struct QueueStats {
  std::size_t pending = 0, labeled = 0, total = 0;
};

// Append-only JSON Lines journal of enqueue and label events; the in-memory
// state is the fold of the journal, so reopening a file restores it.
class ReviewQueue {
 public:
  // Creates the journal if missing. With truncate, any existing one is
  // discarded first.
  explicit ReviewQueue(std::filesystem::path journal, bool truncate = false);

  std::size_t enqueue(const std::vector<ReviewItem>& items);
  std::optional<ReviewItem> next_pending() const;
  std::optional<ReviewItem> find(const std::string& id) const;
  ReviewItem submit_label(const std::string& id, int label);
  // Labeled items in submission order.
  std::vector<ReviewItem> export_labels() const;
  QueueStats stats() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  void apply_enqueue(const ReviewItem& item);
  void append(const nlohmann::json& event);

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::vector<ReviewItem> items_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> label_order_;
};

// Blocks serving the review API (and, if given, static files for the
// operator UI) until the process is stopped.
void serve_review(ReviewQueue& queue, const std::string& host, int port,
                  const std::optional<std::filesystem::path>& static_dir = std::nullopt);

}  // namespace formdigit
