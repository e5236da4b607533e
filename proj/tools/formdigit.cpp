#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "formdigit/errors.hpp"
#include "formdigit/pipeline.hpp"

using namespace formdigit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// --config reads a flat JSON object whose keys are long option names of the
// chosen subcommand.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* app) : app_(app) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        const auto& res = opt->results();
        j[name] = res.size() == 1 ? json(res.front()) : json(res);
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.name = key;
      for (const CLI::App* sub : app_->get_subcommands()) item.parents = {sub->get_name()};
      auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array())
        for (const json& v : value) item.inputs.push_back(text(v));
      else
        item.inputs.push_back(text(value));
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* app_;
};

// Thrown for flag combinations CLI11 cannot express; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

BorderStyle parse_style(const std::string& s) {
  if (s == "dark") return BorderStyle::DarkJoined;
  if (s == "light") return BorderStyle::LightSeparated;
  throw UsageError("--style must be dark or light");
}

class NoGlyphs : public GlyphSource {
 public:
  GrayImage glyph(int, std::mt19937_64&) const override {
    throw std::runtime_error("rendering digits needs --glyphs");
  }
};

DatasetFiles dataset_files(const fs::path& dir, bool emnist) {
  return emnist ? emnist_digit_files(dir) : mnist_files(dir);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " " + p.string() + " does not exist");
}

void require_parent(const fs::path& p) {
  const fs::path parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw UsageError("output directory " + parent.string() + " does not exist");
}

struct ModelPaths {
  std::string dir, blank, digits;

  void add_to(CLI::App* app) {
    app->add_option("--model", dir, "directory holding blank.fsnn and digits.fsnn");
    app->add_option("--blank-model", blank, "blank/digit checkpoint");
    app->add_option("--digit-model", digits, "digit classifier checkpoint");
  }
  void check() const {
    if (dir.empty() && (blank.empty() || digits.empty()))
      throw UsageError("give --model DIR or both --blank-model and --digit-model");
    if (!dir.empty()) {
      require_file(fs::path(dir) / "blank.fsnn", "model");
      require_file(fs::path(dir) / "digits.fsnn", "model");
    } else {
      require_file(blank, "model");
      require_file(digits, "model");
    }
  }
  ModelSet load() const {
    if (!dir.empty() && blank.empty() && digits.empty()) return load_models(dir);
    return {load_checkpoint(blank.empty() ? fs::path(dir) / "blank.fsnn" : fs::path(blank)),
            load_checkpoint(digits.empty() ? fs::path(dir) / "digits.fsnn" : fs::path(digits))};
  }
};

std::vector<ScanJob> collect_scans(const std::vector<std::string>& inputs) {
  std::vector<ScanJob> jobs;
  for (const std::string& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        const std::string ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".pgm")) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) jobs.push_back({f.stem().string(), f});
    } else {
      require_file(p, "scan");
      jobs.push_back({p.stem().string(), p});
    }
  }
  if (jobs.empty()) throw UsageError("no scans found");
  return jobs;
}

std::vector<double> parse_thresholds(const std::vector<double>& t) {
  for (double v : t)
    if (!(v > 0 && v < 1)) throw UsageError("thresholds must lie strictly between 0 and 1");
  return t;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string out, glyphs, template_path, template_id = "form-1", style = "dark", glyph_split = "test";
  bool emnist = false, corner_marks = false;
  int forms = 25, decoys = 0, crop_shift = 0;
  double blank_fraction = 0.5, jitter = 0.01, noise = 0.03;
  std::uint64_t seed = 42;
};

void run_render(const RenderArgs& a) {
  const BorderStyle style = parse_style(a.style);
  if (a.forms < 0) throw UsageError("--forms must be non-negative");
  if (a.blank_fraction < 0 || a.blank_fraction > 1) throw UsageError("--blank-fraction must lie in [0,1]");
  if (a.glyphs.empty() && a.blank_fraction < 1) throw UsageError("--glyphs is required unless --blank-fraction 1");
  if (a.glyph_split != "train" && a.glyph_split != "test") throw UsageError("--glyph-split must be train or test");
  CorpusSpec spec;
  spec.forms = a.forms;
  spec.blank_row_fraction = a.blank_fraction;
  spec.render.border_style = style;
  spec.render.corner_marks = a.corner_marks;
  spec.render.corner_jitter = a.jitter;
  spec.render.noise_sigma = a.noise;
  spec.render.decoys = a.decoys;
  spec.render.crop_shift = a.crop_shift;
  spec.render.seed = a.seed;
  try {
    spec.render.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const FormTemplate t = a.template_path.empty() ? make_default_template(a.template_id, style) : load_template(a.template_path);

  LabeledDigitSet set;
  std::unique_ptr<GlyphSource> glyphs = std::make_unique<NoGlyphs>();
  if (!a.glyphs.empty()) {
    const DatasetFiles f = dataset_files(a.glyphs, a.emnist);
    set = a.glyph_split == "test" ? read_idx(f.test_images, f.test_labels, a.emnist)
                                  : read_idx(f.train_images, f.train_labels, a.emnist);
    glyphs = std::make_unique<DatasetGlyphSource>(set);
  }
  const auto entries = render_corpus(t, *glyphs, spec, a.out);
  std::cout << "rendered " << entries.size() << " forms into " << a.out << '\n';
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string task, dataset, out, template_path, style = "dark";
  bool emnist = false, verbose = false, corner_marks = false;
  int epochs = 50, batch = 256, samples = 20000;
  long limit = 0;
  double lr = 1e-3, val_fraction = 0.2, border_lines = 0.0, margin = 0.1;
  std::uint64_t seed = 42;
};

void run_train(const TrainArgs& a) {
  if (a.task != "blank" && a.task != "softmax" && a.task != "triplet")
    throw UsageError("--task must be blank, softmax or triplet");
  if (a.epochs < 1) throw UsageError("--epochs must be at least 1");
  if (!(a.val_fraction > 0 && a.val_fraction < 1)) throw UsageError("--val-fraction must lie in (0,1)");
  if (a.border_lines < 0 || a.border_lines > 1) throw UsageError("--border-lines must lie in [0,1]");
  const DatasetFiles f = dataset_files(a.dataset, a.emnist);
  require_file(f.train_images, "dataset file");
  require_file(f.train_labels, "dataset file");
  require_parent(a.out);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.border_line_prob = a.border_lines;
  cfg.verbose = a.verbose;

  LabeledDigitSet all = read_idx(f.train_images, f.train_labels, a.emnist);
  if (a.limit > 0) all = all.head(static_cast<std::size_t>(a.limit));
  json meta = {{"task", a.task}, {"seed", a.seed}, {"epochs", a.epochs}, {"dataset", a.emnist ? "emnist-digits" : "mnist"}};
  TrainResult r;
  Network<float> net;
  double test_acc = 0;

  if (a.task == "blank") {
    const BorderStyle style = parse_style(a.style);
    const FormTemplate t = a.template_path.empty() ? make_default_template("form-1", style) : load_template(a.template_path);
    RenderSpec rs;
    rs.border_style = style;
    rs.corner_marks = a.corner_marks;
    DatasetGlyphSource glyphs(all);
    const LabeledDigitSet crops = synthesize_blank_crops(t, rs, glyphs, static_cast<std::size_t>(a.samples), a.seed);
    const Split sp = split(crops, 0.6, 0.2, 0.2, a.seed);
    cfg.crop_pad = 1;
    net = build_blank_classifier(a.seed);
    r = train_model(net, sp.train, sp.val, cfg, LossKind::CrossEntropy);
    test_acc = accuracy(net, sp.test);
    meta["samples"] = a.samples;
  } else {
    const Split sp = split(all, 1 - a.val_fraction, a.val_fraction, 0.0, a.seed);
    const LabeledDigitSet test = fs::exists(f.test_images) ? read_idx(f.test_images, f.test_labels, a.emnist) : LabeledDigitSet{};
    if (a.task == "softmax") {
      net = build_direct_classifier(a.seed);
      r = train_model(net, sp.train, sp.val, cfg, LossKind::CrossEntropy);
    } else {
      TripletConfig tc;
      tc.margin = a.margin;
      tc.batch_size = a.batch;
      Network<float> embedder = build_triplet_embedder(a.seed, tc.embedding_dim);
      r = train_model(embedder, sp.train, sp.val, cfg, LossKind::Triplet, tc);
      fs::path emb_path = a.out;
      emb_path.replace_extension(".embedder.fsnn");
      save_checkpoint(embedder, emb_path, meta);
      net = attach_classifier_head(embedder, sp.train, sp.val, cfg);
      meta["margin"] = a.margin;
    }
    if (test.size()) test_acc = accuracy(net, test);
  }
  meta["epochs_run"] = r.history.size();
  meta["best_epoch"] = r.best_epoch;
  meta["test_accuracy"] = test_acc;
  save_checkpoint(net, a.out, meta);
  write_history_csv(r, a.out + ".history.csv");
  std::cout << std::fixed << std::setprecision(4) << a.task << " test_accuracy " << 100 * test_acc << "% after "
            << r.history.size() << " epochs (best " << r.best_epoch << ")\n";
}

// ------------------------------------------------------------- digitize

struct DigitizeArgs {
  std::string template_path, out, review_out, details, style = "dark";
  std::vector<std::string> scans;
  ModelPaths models;
  double threshold = 0.9;
  double vertical_threshold = MatchFilterConfig{}.vertical_threshold;
  int workers = 1;
};

RegistrationConfig registration_config(double vertical_threshold) {
  if (!(vertical_threshold > 0)) throw UsageError("vertical threshold must be positive");
  RegistrationConfig cfg;
  cfg.matching.vertical_threshold = vertical_threshold;
  return cfg;
}

void run_digitize(const DigitizeArgs& a) {
  if (!(a.threshold > 0 && a.threshold < 1)) throw UsageError("--threshold must lie strictly between 0 and 1");
  if (a.workers < 1) throw UsageError("--workers must be at least 1");
  const RegistrationConfig reg = registration_config(a.vertical_threshold);
  require_file(a.template_path, "template");
  a.models.check();
  const std::vector<ScanJob> jobs = collect_scans(a.scans);
  require_parent(a.out);
  if (!a.review_out.empty()) require_parent(a.review_out);
  if (!a.details.empty()) require_parent(a.details);

  RenderSpec style;
  style.border_style = parse_style(a.style);
  const PreparedTemplate t = prepare_template(load_template(a.template_path), style, reg);
  const ModelSet models = a.models.load();
  const SegregationPolicy policy{a.threshold};
  const std::vector<DigitizeResult> results = digitize_batch(jobs, t, models, policy, a.workers);

  std::vector<DigitizedForm> forms;
  std::vector<ReviewItem> review;
  std::size_t unprocessed = 0;
  for (const DigitizeResult& r : results) {
    forms.push_back(r.form);
    unprocessed += r.form.status == FormStatus::Unprocessed;
    review.insert(review.end(), r.review.begin(), r.review.end());
  }
  write_records_csv(forms, policy, a.out);
  if (!a.details.empty()) write_details_jsonl(forms, a.details);
  if (!a.review_out.empty()) {
    ReviewQueue queue(a.review_out, true);
    queue.enqueue(review);
  }
  std::cout << "digitized " << forms.size() << " forms (" << unprocessed << " unprocessed), " << review.size()
            << " items for review\n";
}

// ---------------------------------------------------------- eval / sweep

struct CorpusArgs {
  std::string corpus, out, details, model, dataset;
  ModelPaths models;
  std::vector<double> thresholds = {0.6, 0.7, 0.8, 0.9};
  double threshold = 0.9;
  double vertical_threshold = MatchFilterConfig{}.vertical_threshold;
  std::vector<double> vertical_thresholds = {50, 100, 150, 200, 300, 500};
  int workers = 1;
  bool emnist = false;
};

std::vector<DigitizedForm> digitize_corpus(const CorpusArgs& a, const std::vector<CorpusEntry>& corpus) {
  if (!a.details.empty() && fs::exists(a.details)) return read_details_jsonl(a.details);
  const PreparedTemplate t = prepare_template(load_template(fs::path(a.corpus) / "template.json"), RenderSpec{},
                                              registration_config(a.vertical_threshold));
  std::vector<ScanJob> jobs;
  for (const CorpusEntry& e : corpus) jobs.push_back({e.form_id, e.scan});
  const std::vector<DigitizeResult> results = digitize_batch(jobs, t, a.models.load(), {a.threshold}, a.workers);
  std::vector<DigitizedForm> forms;
  for (const DigitizeResult& r : results) forms.push_back(r.form);
  return forms;
}

void run_eval(const CorpusArgs& a) {
  if (!a.dataset.empty()) {
    // Classifier accuracy on a digit dataset's test split.
    if (a.model.empty()) throw UsageError("--dataset needs --classifier");
    const DatasetFiles f = dataset_files(a.dataset, a.emnist);
    require_file(f.test_images, "dataset file");
    require_file(a.model, "model");
    Network<float> net = load_checkpoint(a.model);
    const LabeledDigitSet test = read_idx(f.test_images, f.test_labels, a.emnist);
    const json j = {{"dataset", a.emnist ? "emnist-digits" : "mnist"}, {"samples", test.size()}, {"accuracy", 100 * accuracy(net, test)}};
    write_text(a.out, j.dump(2) + "\n");
    return;
  }
  if (a.corpus.empty()) throw UsageError("give --corpus (pipeline metrics) or --dataset (classifier accuracy)");
  require_file(fs::path(a.corpus) / "truth.jsonl", "corpus truth");
  if (a.details.empty() || !fs::exists(a.details)) a.models.check();
  const std::vector<CorpusEntry> corpus = load_corpus(a.corpus);
  const std::vector<DigitizedForm> forms = digitize_corpus(a, corpus);
  std::vector<GroundTruth> truth;
  for (const CorpusEntry& e : corpus) truth.push_back(e.truth);
  const CorpusMetrics m = evaluate_corpus(forms, truth, {a.threshold});
  write_text(a.out, metrics_to_json(m).dump(2) + "\n");
}

void run_sweep(const CorpusArgs& a) {
  const std::vector<double> th = parse_thresholds(a.thresholds);
  require_file(fs::path(a.corpus) / "truth.jsonl", "corpus truth");
  if (a.details.empty() || !fs::exists(a.details)) a.models.check();
  const std::vector<CorpusEntry> corpus = load_corpus(a.corpus);
  const std::vector<DigitizedForm> forms = digitize_corpus(a, corpus);
  std::vector<GroundTruth> truth;
  for (const CorpusEntry& e : corpus) truth.push_back(e.truth);
  write_text(a.out, sweep_table(evaluate_corpus(forms, truth, th)));
}

// Mean cell IoU over a corpus for each vertical filter setting; a form that
// fails to register scores 0.
void run_sweep_registration(const CorpusArgs& a) {
  if (a.vertical_thresholds.empty()) throw UsageError("--vertical-thresholds is empty");
  for (double v : a.vertical_thresholds) registration_config(v);
  require_file(fs::path(a.corpus) / "truth.jsonl", "corpus truth");
  const std::vector<CorpusEntry> corpus = load_corpus(a.corpus);
  const PreparedTemplate t = prepare_template(load_template(fs::path(a.corpus) / "template.json"), RenderSpec{});
  const std::vector<BoundingBox> cells = t.form.all_cells();
  std::vector<GrayImage> scans;
  for (const CorpusEntry& e : corpus) scans.push_back(read_image(e.scan));

  std::ostringstream out;
  out << "vertical_threshold,mean_iou,failed_forms\n";
  for (double v : a.vertical_thresholds) {
    const RegistrationConfig cfg = registration_config(v);
    double total = 0;
    int failed = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      try {
        const Registration r = register_scan(scans[i], t.features, t.reference.height(), cfg);
        total += evaluate_alignment(corpus[i].truth.true_boxes, cells, r.homography);
      } catch (const Error&) {
        ++failed;
      }
    }
    out << v << ',' << std::fixed << std::setprecision(4) << total / static_cast<double>(corpus.size()) << ','
        << failed << '\n' << std::defaultfloat;
  }
  write_text(a.out, out.str());
}

// ------------------------------------------------------ corrections, review

struct CorrectionArgs {
  std::string records, journal, out;
  double threshold = 0.9;
};

void run_apply_corrections(const CorrectionArgs& a) {
  require_file(a.records, "records file");
  require_file(a.journal, "journal");
  require_parent(a.out);
  const std::vector<DigitizedForm> forms = read_records_csv(a.records);
  const ReviewQueue queue(a.journal);
  std::map<std::string, std::vector<ReviewItem>> by_form;
  for (const ReviewItem& it : queue.export_labels()) by_form[it.form_id].push_back(it);
  std::vector<DigitizedForm> fixed;
  std::size_t applied = 0;
  for (const DigitizedForm& f : forms) {
    const auto found = by_form.find(f.form_id);
    if (found == by_form.end()) {
      fixed.push_back(f);
      continue;
    }
    fixed.push_back(apply_corrections(f, found->second));
    applied += found->second.size();
    by_form.erase(found);
  }
  if (!by_form.empty()) throw UnknownCell("labels reference form " + by_form.begin()->first + " which is not in the records");
  write_records_csv(fixed, {a.threshold}, a.out);
  std::cout << "applied " << applied << " corrections\n";
}

struct ServeArgs {
  std::string journal, host = "127.0.0.1", static_dir;
  int port = 8080;
};

void run_serve(const ServeArgs& a) {
  if (a.port < 0 || a.port > 65535) throw UsageError("--port out of range");
  ReviewQueue queue(a.journal);
  const QueueStats s = queue.stats();
  std::cout << "serving " << s.total << " items (" << s.pending << " pending) on http://" << a.host << ':' << a.port
            << std::endl;
  serve_review(queue, a.host, a.port, a.static_dir.empty() ? std::nullopt : std::optional<fs::path>(a.static_dir));
}

int run_gradcheck(std::uint64_t seed) {
  double worst = 0;
  for (const NamedGradCheck& c : gradient_check_suite(seed)) {
    std::cout << std::scientific << std::setprecision(3) << c.result.max_relative_error << "  " << c.name << " ("
              << c.result.checked << " values)\n";
    worst = std::max(worst, c.result.max_relative_error);
  }
  std::cout << "max relative error " << std::scientific << std::setprecision(3) << worst
            << (worst < 1e-4 ? " (ok)" : " (FAILED)") << '\n';
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Digitize handwritten phone numbers from scanned forms"};
  app.require_subcommand(1);
  app.fallthrough(true);  // lets --config follow the subcommand name
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON file with option values for the subcommand");
  app.config_formatter(std::make_shared<JsonConfig>(&app));

  RenderArgs render;
  CLI::App* r = app.add_subcommand("render", "render a synthetic corpus of filled forms");
  r->add_option("--out", render.out, "output directory")->required();
  r->add_option("--forms", render.forms, "number of forms")->capture_default_str();
  r->add_option("--glyphs", render.glyphs, "IDX digit dataset directory for handwriting");
  r->add_flag("--emnist", render.emnist, "glyph directory uses EMNIST digit file names");
  r->add_option("--glyph-split", render.glyph_split, "train or test")->capture_default_str();
  r->add_option("--template", render.template_path, "template JSON (default: built-in 16-row form)");
  r->add_option("--template-id", render.template_id)->capture_default_str();
  r->add_option("--style", render.style, "dark or light cell borders")->capture_default_str();
  r->add_option("--blank-fraction", render.blank_fraction, "share of rows left blank")->capture_default_str();
  r->add_option("--jitter", render.jitter, "corner jitter as a fraction of page size")->capture_default_str();
  r->add_option("--noise", render.noise, "Gaussian luminance noise sigma")->capture_default_str();
  r->add_flag("--marks", render.corner_marks, "print registration marks in the form corners");
  r->add_option("--decoys", render.decoys, "duplicated landmark patches")->capture_default_str();
  r->add_option("--crop-shift", render.crop_shift, "max scanner crop offset in pixels")->capture_default_str();
  r->add_option("--seed", render.seed)->capture_default_str();

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train the blank, softmax or triplet network");
  t->add_option("--task", train.task, "blank, softmax or triplet")->required();
  t->add_option("--dataset", train.dataset, "IDX digit dataset directory")->required();
  t->add_flag("--emnist", train.emnist, "dataset uses EMNIST digit file names");
  t->add_option("--out", train.out, "checkpoint path")->required();
  t->add_option("--epochs", train.epochs)->capture_default_str();
  t->add_option("--batch", train.batch)->capture_default_str();
  t->add_option("--lr", train.lr)->capture_default_str();
  t->add_option("--margin", train.margin, "triplet margin")->capture_default_str();
  t->add_option("--val-fraction", train.val_fraction, "share of the training file held out")->capture_default_str();
  t->add_option("--limit", train.limit, "use only the first N training images");
  t->add_option("--border-lines", train.border_lines, "probability of a stray border stroke per input")
      ->capture_default_str();
  t->add_option("--samples", train.samples, "synthetic crops for --task blank")->capture_default_str();
  t->add_option("--template", train.template_path, "template for --task blank");
  t->add_option("--style", train.style, "dark or light, for --task blank")->capture_default_str();
  t->add_flag("--marks", train.corner_marks, "corner marks on blank-task pages");
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_flag("--verbose", train.verbose, "print one line per epoch");

  CorpusArgs eval;
  CLI::App* e = app.add_subcommand("eval", "score a classifier on a dataset or the pipeline on a corpus");
  e->add_option("--dataset", eval.dataset, "IDX dataset directory (classifier accuracy)");
  e->add_option("--classifier", eval.model, "checkpoint scored with --dataset");
  e->add_flag("--emnist", eval.emnist);
  e->add_option("--corpus", eval.corpus, "rendered corpus directory (pipeline metrics)");
  eval.models.add_to(e);
  e->add_option("--details", eval.details, "reuse a details JSONL instead of digitizing again");
  e->add_option("--threshold", eval.threshold)->capture_default_str();
  e->add_option("--vertical-threshold", eval.vertical_threshold, "registration filter, pixels at reference height")
      ->capture_default_str();
  e->add_option("--workers", eval.workers)->capture_default_str();
  e->add_option("--out", eval.out, "JSON output (default stdout)");

  CorpusArgs sweep;
  CLI::App* s = app.add_subcommand("sweep-threshold", "review share and accuracy across confidence thresholds");
  s->add_option("--corpus", sweep.corpus, "rendered corpus directory")->required();
  sweep.models.add_to(s);
  s->add_option("--details", sweep.details, "reuse a details JSONL instead of digitizing again");
  s->add_option("--thresholds", sweep.thresholds)->delimiter(',')->capture_default_str();
  s->add_option("--workers", sweep.workers)->capture_default_str();
  s->add_option("--out", sweep.out, "CSV output (default stdout)");

  CorpusArgs sreg;
  CLI::App* sr = app.add_subcommand("sweep-registration", "mean cell IoU across vertical filter thresholds");
  sr->add_option("--corpus", sreg.corpus, "rendered corpus directory")->required();
  sr->add_option("--vertical-thresholds", sreg.vertical_thresholds, "pixels at reference height")
      ->delimiter(',')
      ->capture_default_str();
  sr->add_option("--out", sreg.out, "CSV output (default stdout)");

  DigitizeArgs dig;
  CLI::App* d = app.add_subcommand("digitize", "extract phone numbers from scanned forms");
  d->add_option("--template", dig.template_path, "template JSON")->required();
  d->add_option("--scans", dig.scans, "scan files or directories")->required();
  dig.models.add_to(d);
  d->add_option("--threshold", dig.threshold, "confidence below which a digit goes to review")->capture_default_str();
  d->add_option("--out", dig.out, "records CSV")->required();
  d->add_option("--review-out", dig.review_out, "review journal to create (replaced if present)");
  d->add_option("--details", dig.details, "per-cell JSONL");
  d->add_option("--vertical-threshold", dig.vertical_threshold, "registration filter, pixels at reference height")
      ->capture_default_str();
  d->add_option("--workers", dig.workers)->capture_default_str();
  d->add_option("--style", dig.style, "border style when the template has no reference image")->capture_default_str();

  CorrectionArgs corr;
  CLI::App* c = app.add_subcommand("apply-corrections", "merge operator labels into a records CSV");
  c->add_option("--records", corr.records)->required();
  c->add_option("--journal", corr.journal)->required();
  c->add_option("--out", corr.out)->required();
  c->add_option("--threshold", corr.threshold)->capture_default_str();

  ServeArgs serve;
  CLI::App* v = app.add_subcommand("serve-review", "serve the review API over a journal");
  v->add_option("--journal", serve.journal)->required();
  v->add_option("--host", serve.host)->capture_default_str();
  v->add_option("--port", serve.port)->capture_default_str();
  v->add_option("--static", serve.static_dir, "directory with the operator UI");

  std::uint64_t gc_seed = 42;
  CLI::App* g = app.add_subcommand("gradcheck", "finite-difference check of every layer's gradients");
  g->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (r->parsed()) run_render(render);
    else if (t->parsed()) run_train(train);
    else if (e->parsed()) run_eval(eval);
    else if (s->parsed()) run_sweep(sweep);
    else if (sr->parsed()) run_sweep_registration(sreg);
    else if (d->parsed()) run_digitize(dig);
    else if (c->parsed()) run_apply_corrections(corr);
    else if (v->parsed()) run_serve(serve);
    else if (g->parsed()) return run_gradcheck(gc_seed);
  } catch (const UsageError& err) {
    std::cerr << "formdigit: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "formdigit: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
