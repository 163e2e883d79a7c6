#pragma once

// Config-driven experiment runs: filter a manifest to a class subset, split,
// augment, train every listed model, evaluate both checkpoints and report
// one row per model grouped by input type.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/checkpoint.hpp"
#include "wmc/dataset.hpp"
#include "wmc/error.hpp"
#include "wmc/metrics.hpp"
#include "wmc/models.hpp"
#include "wmc/train.hpp"

namespace wmc {

/// wlc-mlp | wlc-lstm | wic-<backbone> | wmc-<backbone>+<variant>
struct ModelId {
  BranchKind branch = BranchKind::wmc;
  BackboneKind backbone = BackboneKind::smallcnn;
  WlcVariant variant = WlcVariant::mlp;

  std::string str() const {
    switch (branch) {
      case BranchKind::wlc_only: return std::string("wlc-") + to_string(variant);
      case BranchKind::wic_only: return std::string("wic-") + to_string(backbone);
      case BranchKind::wmc: break;
    }
    return std::string("wmc-") + to_string(backbone) + "+" + to_string(variant);
  }
};

inline ModelId parse_model_id(const std::string& s) {
  auto variant = [&](const std::string& v) {
    return parse_enum(v, {WlcVariant::mlp, WlcVariant::lstm}, "location variant");
  };
  auto backbone = [&](const std::string& b) {
    return parse_enum(b, {BackboneKind::smallcnn, BackboneKind::precomputed}, "backbone");
  };
  ModelId id;
  if (s.rfind("wlc-", 0) == 0) {
    id.branch = BranchKind::wlc_only;
    id.variant = variant(s.substr(4));
  } else if (s.rfind("wic-", 0) == 0) {
    id.branch = BranchKind::wic_only;
    id.backbone = backbone(s.substr(4));
  } else if (s.rfind("wmc-", 0) == 0) {
    const auto plus = s.find('+');
    if (plus == std::string::npos) fail(ErrorCode::parse, "model id '" + s + "' needs <backbone>+<variant>");
    id.branch = BranchKind::wmc;
    id.backbone = backbone(s.substr(4, plus - 4));
    id.variant = variant(s.substr(plus + 1));
  } else {
    fail(ErrorCode::parse, "unknown model id '" + s + "'");
  }
  return id;
}

inline const char* input_group(BranchKind b) {
  switch (b) {
    case BranchKind::wlc_only: return "Location";
    case BranchKind::wic_only: return "Image";
    case BranchKind::wmc: break;
  }
  return "Image + Location";
}

struct ExperimentConfig {
  std::string name;
  std::vector<std::string> classes;
  std::filesystem::path manifest_path;
  std::vector<std::string> models;
  int epochs = 250;
  std::size_t batch_size = 25;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  FusionPoint fusion_point = FusionPoint::hidden;
  ImageShape image_shape{3, 32, 32};
  std::optional<std::filesystem::path> bodymap_path;
  SplitConfig split;
  bool augment = true;
  /// Binary runs only; defaults to the first listed class.
  std::optional<std::string> positive_class;
  std::size_t feature_dim = 0;
  float dropout_rate = 0.5f;
  std::optional<std::filesystem::path> output_dir;

  Task task() const { return classes.size() == 2 ? Task::binary : Task::multiclass; }

  void validate() const {
    if (classes.size() < 2) fail(ErrorCode::validation, "an experiment needs at least 2 classes");
    if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
      fail(ErrorCode::duplicate, "duplicate class in experiment");
    }
    if (models.empty()) fail(ErrorCode::validation, "experiment lists no models");
    for (const auto& m : models) parse_model_id(m);
    if (epochs < 1) fail(ErrorCode::validation, "epochs must be at least 1");
    if (batch_size < 1) fail(ErrorCode::validation, "batch size must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorCode::validation, "learning rate must be positive");
    if (positive_class && std::find(classes.begin(), classes.end(), *positive_class) == classes.end()) {
      fail(ErrorCode::validation, "positive class '" + *positive_class + "' is not in the experiment");
    }
    split.validate();
  }
};

/// Relative paths resolve against `base_dir` (the config file's directory).
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() ? base_dir / path : path;
  };
  try {
    ExperimentConfig c;
    c.name = j.at("name").get<std::string>();
    c.classes = j.at("classes").get<std::vector<std::string>>();
    c.manifest_path = resolve(j.at("manifest_path").get<std::string>());
    c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.epochs = t.value("epochs", c.epochs);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.learning_rate = t.value("lr", c.learning_rate);
      c.seed = t.value("seed", c.seed);
    }
    c.fusion_point = parse_enum(j.value("fusion_point", std::string{"hidden"}),
                                {FusionPoint::hidden, FusionPoint::probability}, "fusion point");
    if (j.contains("image_size")) {
      const auto& s = j["image_size"];
      if (s.is_number_integer()) {
        c.image_shape.height = c.image_shape.width = s.get<int>();
      } else {
        const auto v = s.get<std::vector<int>>();
        if (v.size() != 3) fail(ErrorCode::parse, "image_size must be an integer or [C, H, W]");
        c.image_shape = {v[0], v[1], v[2]};
      }
    }
    if (j.contains("channels")) c.image_shape.channels = j["channels"].get<int>();
    if (j.contains("bodymap_path")) c.bodymap_path = resolve(j["bodymap_path"].get<std::string>());
    if (j.contains("split")) {
      const auto& s = j["split"];
      c.split.train_fraction = s.value("train", c.split.train_fraction);
      c.split.val_fraction = s.value("val", c.split.val_fraction);
      c.split.test_fraction = s.value("test", c.split.test_fraction);
      c.split.seed = s.value("seed", c.seed);
    } else {
      c.split.seed = c.seed;
    }
    c.augment = j.value("augment", true);
    if (j.contains("positive_class")) c.positive_class = j["positive_class"].get<std::string>();
    c.feature_dim = j.value("feature_dim", std::size_t{0});
    c.dropout_rate = j.value("dropout_rate", 0.5f);
    if (j.contains("output_dir")) c.output_dir = resolve(j["output_dir"].get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("experiment config: ") + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open experiment config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, "experiment config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

struct ReportRow {
  std::string experiment;
  std::string input;  // Location | Image | Image + Location
  std::string model;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::string checkpoint;  // policy the reported values come from
  int epoch = 0;
};

inline nlohmann::json to_json(const ReportRow& r) {
  return {{"experiment", r.experiment}, {"input", r.input},         {"model", r.model},
          {"accuracy", r.accuracy},     {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},                 {"checkpoint", r.checkpoint}, {"epoch", r.epoch}};
}

inline ReportRow report_row_from_json(const nlohmann::json& j) {
  try {
    ReportRow r;
    r.experiment = j.at("experiment").get<std::string>();
    r.input = j.at("input").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.checkpoint = j.value("checkpoint", std::string{});
    r.epoch = j.value("epoch", 0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("report row: ") + e.what());
  }
}

enum class ReportFormat { table_text, delimited };

/// Rows keep their given order; percentages have two decimals.
inline std::string export_report(const std::vector<ReportRow>& rows, ReportFormat format) {
  if (rows.empty()) fail(ErrorCode::validation, "no report rows");
  const std::vector<std::string> head{"Experiment", "Input", "Model", "Accuracy", "Precision", "Recall", "F1-Score"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.experiment, r.input, r.model, format_percent(r.accuracy), format_percent(r.precision),
                     format_percent(r.recall), format_percent(r.f1)});
  }
  std::ostringstream os;
  if (format == ReportFormat::delimited) {
    auto field = [](const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      return q + "\"";
    };
    for (std::size_t i = 0; i < head.size(); ++i) os << (i ? "," : "") << head[i];
    os << '\n';
    for (const auto& row : cells) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << field(row[i]);
      os << '\n';
    }
    return os.str();
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t i = 0; i < head.size(); ++i) width[i] = head[i].size();
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const bool numeric = i >= 3;
      const std::string pad(width[i] - row[i].size(), ' ');
      os << (i ? "  " : "") << (numeric ? pad + row[i] : row[i] + (i + 1 < row.size() ? pad : ""));
    }
    os << '\n';
  };
  line(head);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
  for (const auto& row : cells) line(row);
  return os.str();
}

struct ModelRun {
  std::string id;
  TrainingHistory history;
  Model best_val;
  Model best_combined;
  MetricsReport best_val_metrics;
  MetricsReport best_combined_metrics;
};

struct ExperimentResult {
  std::vector<ReportRow> rows;
  std::vector<ModelRun> runs;
  Manifest manifest;  // filtered, split and augmented
};

struct ExperimentHooks {
  /// Pixel source; defaults to the manifest's own loader.
  ImageLoader loader;
  std::function<void(const std::string& model, const EpochRecord&)> on_epoch;
};

inline std::uint64_t model_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : id) h = (h ^ ch) * 0x100000001b3ull;
  return derive_seed(seed, h);
}

inline ModelSpec spec_for(const ModelId& id, const ExperimentConfig& cfg, const LocationVocabulary& vocab) {
  ModelSpec s = base_spec(cfg.task(), static_cast<int>(cfg.classes.size()), vocab);
  s.branch = id.branch;
  s.wlc_variant = id.variant;
  s.backbone = {id.backbone, id.backbone == BackboneKind::precomputed ? cfg.feature_dim : 0};
  s.fusion_point = cfg.fusion_point;
  s.dropout_rate = cfg.dropout_rate;
  s.image_shape = cfg.image_shape;
  if (id.branch == BranchKind::wic_only) {
    s.vocab_dim = 0;
    s.vocab_fingerprint.clear();
  }
  if (s.task == Task::binary) {
    const std::string pos = cfg.positive_class.value_or(cfg.classes.front());
    s.positive_index = static_cast<int>(std::find(cfg.classes.begin(), cfg.classes.end(), pos) - cfg.classes.begin());
  }
  return s;
}

/// Vocabulary from the body map when given, else from the codes in `m`.
inline LocationVocabulary experiment_vocabulary(const ExperimentConfig& cfg, const Manifest& m) {
  if (cfg.bodymap_path) return LocationVocabulary::from_bodymap(load_bodymap(*cfg.bodymap_path));
  std::vector<int> codes;
  for (const auto& r : m.records)
    if (r.location_code != kBackgroundCode) codes.push_back(r.location_code);
  return LocationVocabulary(std::move(codes));
}

/// Records that already carry a split keep it; otherwise the manifest is split
/// by cfg.split. Augmentation runs after splitting and only when enabled.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Manifest& source,
                                       const ExperimentHooks& hooks = {}) {
  cfg.validate();
  ExperimentResult result;
  Manifest m = filter_classes(source, cfg.classes);
  for (const auto& c : cfg.classes) {
    if (std::none_of(m.records.begin(), m.records.end(), [&](const RoiRecord& r) { return r.class_label == c; })) {
      fail(ErrorCode::not_found, "class '" + c + "' has no records in the manifest");
    }
  }
  const bool presplit = std::all_of(m.records.begin(), m.records.end(),
                                    [](const RoiRecord& r) { return r.split != Split::unassigned; });
  if (!presplit) m = split_manifest(m, cfg.split);
  const ImageLoader loader = hooks.loader ? hooks.loader : default_image_loader(m);
  if (cfg.augment) m = augment_manifest(m, loader);
  const ImageLoader batch_loader = [loader](const RoiRecord& r) { return r.image ? *r.image : loader(r); };
  const auto vocab = experiment_vocabulary(cfg, m);

  std::optional<std::size_t> positive;
  if (cfg.task() == Task::binary) positive = m.class_index(cfg.positive_class.value_or(cfg.classes.front()));

  // Prepared splits are shared by models that need the same inputs.
  std::map<std::pair<bool, bool>, std::array<PreparedSplit, 3>> prepared;
  auto splits_for = [&](const ModelSpec& s) -> const std::array<PreparedSplit, 3>& {
    const BatchInputs in{s.uses_raw_images(), s.uses_features(), s.backbone.feature_dim};
    auto key = std::make_pair(in.images, in.features);
    auto it = prepared.find(key);
    if (it == prepared.end()) {
      std::array<PreparedSplit, 3> arr{prepare_split(m, vocab, Split::train, cfg.image_shape, in, batch_loader),
                                       prepare_split(m, vocab, Split::val, cfg.image_shape, in, batch_loader),
                                       prepare_split(m, vocab, Split::test, cfg.image_shape, in, batch_loader)};
      it = prepared.emplace(key, std::move(arr)).first;
    }
    return it->second;
  };

  for (const auto& name : cfg.models) {
    const ModelId id = parse_model_id(name);
    const ModelSpec spec = spec_for(id, cfg, vocab);
    const auto& data = splits_for(spec);
    Network<float> net(spec, model_seed(cfg.seed, id.str()));
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.adam.learning_rate = cfg.learning_rate;
    tc.seed = model_seed(cfg.seed ^ 0x7EA1ull, id.str());
    if (hooks.on_epoch) tc.on_epoch = [&](const EpochRecord& e) { hooks.on_epoch(id.str(), e); };
    TrainResult tr = train(net, data[0], data[1], tc);

    const auto test_batches = make_ordered_batches(data[2], cfg.batch_size);
    ModelRun run{id.str(),
                 tr.history,
                 Model{Network<float>(spec, tr.best_val), cfg.classes, vocab},
                 Model{Network<float>(spec, tr.best_combined), cfg.classes, vocab},
                 MetricsReport{},
                 MetricsReport{}};
    run.best_val_metrics = evaluate(run.best_val.network, test_batches, positive);
    run.best_combined_metrics = evaluate(run.best_combined.network, test_batches, positive);

    const bool use_val = run.best_val_metrics.accuracy >= run.best_combined_metrics.accuracy;
    const auto& chosen = use_val ? run.best_val_metrics : run.best_combined_metrics;
    ReportRow row{cfg.name,        input_group(id.branch), id.str(), chosen.accuracy, chosen.precision, chosen.recall,
                  chosen.f1,       use_val ? "best_val" : "best_combined",
                  static_cast<int>(*(use_val ? tr.selection.best_val : tr.selection.best_combined)) + 1};
    result.rows.push_back(row);
    result.runs.push_back(std::move(run));
  }

  // Location, then Image, then Image + Location; config order within a group.
  auto rank = [](const std::string& g) { return g == "Location" ? 0 : g == "Image" ? 1 : 2; };
  std::stable_sort(result.rows.begin(), result.rows.end(),
                   [&](const ReportRow& a, const ReportRow& b) { return rank(a.input) < rank(b.input); });
  result.manifest = std::move(m);
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentHooks& hooks = {}) {
  return run_experiment(cfg, load_manifest(cfg.manifest_path), hooks);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

/// rows.json, report.txt, report.csv, history.json and two checkpoints per model.
inline void write_experiment_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  write_text_file(dir / "rows.json", rows.dump(2) + "\n");
  write_text_file(dir / "report.txt", export_report(r.rows, ReportFormat::table_text));
  write_text_file(dir / "report.csv", export_report(r.rows, ReportFormat::delimited));
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& run : r.runs) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : run.history.epochs) {
      epochs.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"train_accuracy", e.train_accuracy},
                        {"val_loss", e.val_loss},
                        {"val_accuracy", e.val_accuracy}});
    }
    hist[run.id] = {{"history", epochs},
                    {"best_val", to_json(run.best_val_metrics)},
                    {"best_combined", to_json(run.best_combined_metrics)}};
    save_checkpoint(dir / (run.id + ".best_val.wmck"), run.best_val);
    save_checkpoint(dir / (run.id + ".best_combined.wmck"), run.best_combined);
  }
  write_text_file(dir / "history.json", hist.dump(2) + "\n");
}

/// Rows from `dir/rows.json` and from every immediate subdirectory holding one,
/// in path order.
inline std::vector<ReportRow> collect_report_rows(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::not_found, "no runs directory " + dir.string());
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(dir / "rows.json")) files.push_back(dir / "rows.json");
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "rows.json")) subs.push_back(e.path() / "rows.json");
  std::sort(subs.begin(), subs.end());
  files.insert(files.end(), subs.begin(), subs.end());
  std::vector<ReportRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, f.string() + ": " + e.what());
    }
    for (const auto& row : j) rows.push_back(report_row_from_json(row));
  }
  if (rows.empty()) fail(ErrorCode::not_found, "no rows.json under " + dir.string());
  return rows;
}

}  // namespace wmc
