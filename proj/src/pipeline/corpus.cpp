#include <fstream>

#include "formdigit/pipeline.hpp"

namespace formdigit {

std::vector<std::optional<std::string>> random_phone_rows(const FormTemplate& t, double blank_row_fraction,
                                                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> digit(0, 9);
  std::vector<std::optional<std::string>> rows(t.rows.size());
  for (auto& r : rows) {
    if (unit(rng) < blank_row_fraction) continue;
    std::string s;
    for (int i = 0; i < kDigitsPerRow; ++i) s.push_back(static_cast<char>('0' + digit(rng)));
    r = s;
  }
  return rows;
}

std::vector<CorpusEntry> render_corpus(const FormTemplate& t, const GlyphSource& glyphs, const CorpusSpec& spec,
                                       const std::filesystem::path& dir) {
  spec.render.validate();
  if (spec.forms < 0) throw std::invalid_argument("form count must be non-negative");
  std::filesystem::create_directories(dir / "scans");
  FormTemplate saved = t;
  write_png(render_blank_template(t, spec.render), dir / "reference.png");
  saved.reference_image_path = "reference.png";
  save_template(saved, dir / "template.json");

  std::mt19937_64 rng(spec.render.seed);
  std::ofstream truth(dir / "truth.jsonl", std::ios::trunc);
  std::vector<CorpusEntry> out;
  for (int i = 0; i < spec.forms; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%05d", i);
    const std::string form_id = spec.id_prefix + id;
    const auto rows = random_phone_rows(t, spec.blank_row_fraction, rng);
    RenderSpec rs = spec.render;
    rs.seed = rng();
    const RenderedScan scan = render_filled_scan(t, rows, glyphs, rs, form_id);
    const std::filesystem::path path = dir / "scans" / (form_id + ".png");
    write_png(scan.image, path);
    truth << ground_truth_to_json(scan.truth, t).dump() << '\n';
    out.push_back({form_id, path, scan.truth});
  }
  if (!truth) throw std::runtime_error("cannot write " + (dir / "truth.jsonl").string());
  return out;
}

std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "truth.jsonl");
  if (!in) throw std::runtime_error("no truth.jsonl in " + dir.string());
  std::vector<CorpusEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    GroundTruth gt = ground_truth_from_json(nlohmann::json::parse(line));
    const std::string id = gt.form;
    out.push_back({id, dir / "scans" / (id + ".png"), std::move(gt)});
  }
  return out;
}

}  // namespace formdigit
