#include <chrono>
#include <ctime>
#include <sstream>

#include "formdigit/errors.hpp"
#include "formdigit/review.hpp"

namespace formdigit {

namespace {

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2) throw std::invalid_argument("odd-length hex string");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("bad hex digit");
  };
  std::vector<std::uint8_t> out(s.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(s[2 * i]) << 4 | nibble(s[2 * i + 1]));
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Round-trips the crop through 8 bits so a reopened journal compares equal.
GrayImage quantized(const GrayImage& img) {
  if (img.empty()) return img;
  return GrayImage::from_bytes(img.width(), img.height(), img.to_bytes());
}

}  // namespace

std::string review_item_id(const std::string& form_id, int row_index, int cell_index) {
  if (row_index < 0) return form_id + ":form";
  return form_id + ":r" + std::to_string(row_index) + ":c" + std::to_string(cell_index);
}

int parse_label(const std::string& s) {
  if (s == "BLANK") return -1;
  if (s.size() == 1 && s[0] >= '0' && s[0] <= '9') return s[0] - '0';
  throw std::invalid_argument("label must be 0-9 or BLANK, got '" + s + "'");
}

std::string label_string(int label) { return label < 0 ? "BLANK" : std::string(1, static_cast<char>('0' + label)); }

nlohmann::json review_item_to_json(const ReviewItem& item, bool with_crop) {
  nlohmann::json j = {{"id", item.id},
                      {"form_id", item.form_id},
                      {"row_index", item.row_index},
                      {"cell_index", item.cell_index},
                      {"predicted", label_string(item.predicted)},
                      {"confidence", item.confidence},
                      {"status", item.status == ReviewStatus::Pending ? "pending" : "labeled"}};
  if (item.operator_label) j["operator_label"] = label_string(*item.operator_label);
  if (!item.labeled_at.empty()) j["labeled_at"] = item.labeled_at;
  if (!item.note.empty()) j["note"] = item.note;
  if (with_crop && !item.crop.empty()) {
    j["crop_width"] = item.crop.width();
    j["crop_height"] = item.crop.height();
    j["crop_hex"] = to_hex(item.crop.to_bytes());
  }
  return j;
}

ReviewItem review_item_from_json(const nlohmann::json& j) {
  ReviewItem it;
  it.id = j.at("id").get<std::string>();
  it.form_id = j.at("form_id").get<std::string>();
  it.row_index = j.at("row_index").get<int>();
  it.cell_index = j.at("cell_index").get<int>();
  it.predicted = parse_label(j.at("predicted").get<std::string>());
  it.confidence = j.at("confidence").get<double>();
  it.status = j.value("status", "pending") == "labeled" ? ReviewStatus::Labeled : ReviewStatus::Pending;
  if (j.contains("operator_label")) it.operator_label = parse_label(j["operator_label"].get<std::string>());
  it.labeled_at = j.value("labeled_at", "");
  it.note = j.value("note", "");
  if (j.contains("crop_hex")) {
    const std::vector<std::uint8_t> bytes = from_hex(j["crop_hex"].get<std::string>());
    it.crop = GrayImage::from_bytes(j.at("crop_width").get<int>(), j.at("crop_height").get<int>(), bytes);
  }
  return it;
}

ReviewQueue::ReviewQueue(std::filesystem::path journal, bool truncate) : path_(std::move(journal)) {
  if (!truncate && std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json ev;
      try {
        ev = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        // A torn final append is dropped; damage anywhere else is fatal.
        if (in.peek() == std::char_traits<char>::eof()) break;
        throw std::runtime_error(path_.string() + ":" + std::to_string(lineno) + ": unreadable journal line");
      }
      const std::string kind = ev.at("event").get<std::string>();
      if (kind == "enqueue") {
        apply_enqueue(review_item_from_json(ev.at("item")));
      } else if (kind == "label") {
        const auto found = index_.find(ev.at("id").get<std::string>());
        if (found == index_.end()) throw UnknownItem(ev.at("id").get<std::string>());
        ReviewItem& it = items_[found->second];
        if (it.status == ReviewStatus::Labeled) continue;  // first label wins
        it.status = ReviewStatus::Labeled;
        it.operator_label = parse_label(ev.at("label").get<std::string>());
        it.labeled_at = ev.value("labeled_at", "");
        label_order_.push_back(found->second);
      }
    }
  }
  if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, truncate ? std::ios::trunc : std::ios::app);
  if (!out_) throw std::runtime_error("cannot open review journal " + path_.string());
}

void ReviewQueue::apply_enqueue(const ReviewItem& item) {
  if (index_.count(item.id)) throw std::invalid_argument("duplicate review item id " + item.id);
  index_[item.id] = items_.size();
  items_.push_back(item);
  items_.back().crop = quantized(item.crop);
  if (items_.back().status == ReviewStatus::Labeled) label_order_.push_back(items_.size() - 1);
}

void ReviewQueue::append(const nlohmann::json& event) {
  out_ << event.dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write to review journal failed");
}

std::size_t ReviewQueue::enqueue(const std::vector<ReviewItem>& items) {
  std::lock_guard lock(mu_);
  std::map<std::string, int> fresh;
  for (const ReviewItem& it : items)
    if (index_.count(it.id) || fresh[it.id]++) throw std::invalid_argument("duplicate review item id " + it.id);
  for (ReviewItem it : items) {
    it.status = ReviewStatus::Pending;
    it.operator_label.reset();
    it.labeled_at.clear();
    apply_enqueue(it);
    append({{"event", "enqueue"}, {"item", review_item_to_json(items_.back(), true)}});
  }
  return items.size();
}

std::optional<ReviewItem> ReviewQueue::next_pending() const {
  std::lock_guard lock(mu_);
  for (const ReviewItem& it : items_)
    if (it.status == ReviewStatus::Pending) return it;
  return std::nullopt;
}

std::optional<ReviewItem> ReviewQueue::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto found = index_.find(id);
  if (found == index_.end()) return std::nullopt;
  return items_[found->second];
}

ReviewItem ReviewQueue::submit_label(const std::string& id, int label) {
  if (label < -1 || label > 9) throw std::invalid_argument("label must be a digit or BLANK");
  std::lock_guard lock(mu_);
  const auto found = index_.find(id);
  if (found == index_.end()) throw UnknownItem(id);
  ReviewItem& it = items_[found->second];
  if (it.status == ReviewStatus::Labeled)
    throw AlreadyLabeled(id + " already carries label " + label_string(*it.operator_label));
  const std::string when = utc_now();
  append({{"event", "label"}, {"id", id}, {"label", label_string(label)}, {"labeled_at", when}});
  it.status = ReviewStatus::Labeled;
  it.operator_label = label;
  it.labeled_at = when;
  label_order_.push_back(found->second);
  return it;
}

std::vector<ReviewItem> ReviewQueue::export_labels() const {
  std::lock_guard lock(mu_);
  std::vector<ReviewItem> out;
  for (std::size_t i : label_order_) out.push_back(items_[i]);
  return out;
}

QueueStats ReviewQueue::stats() const {
  std::lock_guard lock(mu_);
  QueueStats s;
  s.total = items_.size();
  s.labeled = label_order_.size();
  s.pending = s.total - s.labeled;
  return s;
}

}  // namespace formdigit
