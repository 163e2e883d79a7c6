#pragma once

// The `wmc` command line. run_cli takes the arguments after the program name
// and writes to the given streams, so it can be driven from tests.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/checkpoint.hpp"
#include "wmc/dataset.hpp"
#include "wmc/experiment.hpp"
#include "wmc/service.hpp"
#include "wmc/synth.hpp"
#include "wmc/train.hpp"

namespace wmc {

inline std::filesystem::path default_bodymap_path() {
  if (const char* env = std::getenv("WMC_BODYMAP")) return env;
#ifdef WMC_DATA_DIR
  return std::filesystem::path(WMC_DATA_DIR) / "bodymap_demo.json";
#else
  return "bodymap_demo.json";
#endif
}

namespace detail {

inline void write_or_print(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty() || out_path == "-") {
    out << text;
  } else {
    write_text_file(out_path, text);
  }
}

/// Evaluation over a manifest with a loaded model. Manifest classes must be a
/// subset of the model's; `split` narrows to one split.
inline MetricsReport evaluate_manifest(const Model& model, const Manifest& m, std::optional<Split> split,
                                       std::optional<std::string> positive_class) {
  Manifest relabeled = m;
  relabeled.class_set = model.class_set;
  relabeled.validate();
  std::optional<std::size_t> positive;
  if (model.spec().task == Task::binary) {
    positive = static_cast<std::size_t>(model.spec().positive_index);
    if (positive_class) {
      positive = relabeled.class_index(*positive_class);
      if (*positive != static_cast<std::size_t>(model.spec().positive_index)) {
        fail(ErrorCode::validation, "positive class '" + *positive_class + "' differs from the one the model was trained with");
      }
    }
  } else if (positive_class) {
    positive = relabeled.class_index(*positive_class);
  }
  const auto prepared = prepare_split(relabeled, model.vocab, split, model.spec().image_shape, model.inputs(),
                                      default_image_loader(relabeled));
  if (prepared.size() == 0) fail(ErrorCode::validation, "no records to evaluate");
  return evaluate(model.network, make_ordered_batches(prepared, 25), positive);
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-modal wound classification toolkit", "wmc"};
  app.require_subcommand(1);

  // bodymap
  auto* bodymap = app.add_subcommand("bodymap", "Body map lookups and validation");
  bodymap->require_subcommand(1);
  int lookup_code = 0;
  std::string bodymap_file = default_bodymap_path().string();
  auto* lookup = bodymap->add_subcommand("lookup", "Print the region name for a location code");
  lookup->add_option("code", lookup_code, "Location code")->required();
  lookup->add_option("--bodymap", bodymap_file, "Body map file");
  std::string validate_file;
  auto* validate = bodymap->add_subcommand("validate", "Validate a body map file");
  validate->add_option("file", validate_file, "Body map file")->required();

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Manifest tooling");
  dataset->require_subcommand(1);
  std::string manifest_in, manifest_out = "-";
  SplitConfig split_cfg;
  auto* split = dataset->add_subcommand("split", "Assign train/val/test splits per class");
  split->add_option("--manifest", manifest_in, "Input manifest")->required();
  split->add_option("--out", manifest_out, "Output manifest (default stdout)");
  split->add_option("--train", split_cfg.train_fraction, "Train fraction");
  split->add_option("--val", split_cfg.val_fraction, "Validation fraction");
  split->add_option("--test", split_cfg.test_fraction, "Test fraction");
  split->add_option("--seed", split_cfg.seed, "Shuffle seed");
  auto* augment = dataset->add_subcommand("augment", "Add five augmented children per train/val record");
  augment->add_option("--manifest", manifest_in, "Input manifest")->required();
  augment->add_option("--out", manifest_out, "Output manifest (default stdout)");
  std::string synth_spec;
  std::uint64_t synth_seed = 0;
  std::optional<std::size_t> synth_n;
  auto* synth = dataset->add_subcommand("synth", "Generate a synthetic manifest");
  synth->add_option("--spec", synth_spec, "Synthetic spec file")->required();
  synth->add_option("--out", manifest_out, "Output manifest (default stdout)");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--n", synth_n, "Record count (overrides the spec)");

  // train
  std::string config_file, train_out;
  std::optional<std::uint64_t> train_seed;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment config");
  train_cmd->add_option("--config", config_file, "Experiment config")->required();
  train_cmd->add_option("--out", train_out, "Output directory (overrides output_dir)");
  train_cmd->add_option("--seed", train_seed, "Seed (overrides train.seed)");
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

  // eval
  std::string checkpoint_file, eval_manifest, eval_split;
  std::optional<std::string> positive_class;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", checkpoint_file, "Checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "Manifest file")->required();
  eval->add_option("--positive-class", positive_class, "Positive class for binary metrics");
  eval->add_option("--split", eval_split, "Only records of this split");

  // predict
  std::string image_file;
  int predict_location = 0;
  auto* predict = app.add_subcommand("predict", "Predict the class of one image and location");
  predict->add_option("--checkpoint", checkpoint_file, "Checkpoint file")->required();
  predict->add_option("--image", image_file, "PGM/PPM image");
  predict->add_option("--location", predict_location, "Location code")->required();

  // report
  std::string runs_dir, report_format = "text";
  auto* report = app.add_subcommand("report", "Render report rows from run directories");
  report->add_option("--runs", runs_dir, "Runs directory")->required();
  report->add_option("--format", report_format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

  // serve
  int port = 8080;
  std::string host = "127.0.0.1", checkpoints_dir, serve_bodymap = default_bodymap_path().string(), static_dir,
              annotations_file;
  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--port", port, "Port");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--checkpoints", checkpoints_dir, "Directory of .wmck files")->required();
  serve->add_option("--bodymap", serve_bodymap, "Body map file");
  serve->add_option("--static", static_dir, "Static files served at /");
  serve->add_option("--annotations", annotations_file, "Annotation store (JSONL)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (lookup->parsed()) {
      out << load_bodymap(bodymap_file).lookup(lookup_code).name << "\n";
    } else if (validate->parsed()) {
      const auto map = load_bodymap(validate_file);
      const auto vocab = LocationVocabulary::from_bodymap(map);
      out << "ok: " << map.regions().size() << " regions, vocabulary dimension " << vocab.dimension()
          << ", fingerprint " << vocab.fingerprint() << "\n";
    } else if (split->parsed()) {
      const auto m = split_manifest(load_manifest(manifest_in), split_cfg);
      detail::write_or_print(manifest_to_text(m), manifest_out, out);
    } else if (augment->parsed()) {
      const auto m = augment_manifest(load_manifest(manifest_in));
      detail::write_or_print(manifest_to_text(m), manifest_out, out);
    } else if (synth->parsed()) {
      auto spec = load_synthetic_spec(synth_spec);
      if (synth_n) spec.n_records = *synth_n;
      detail::write_or_print(manifest_to_text(synth_generate(spec, synth_seed)), manifest_out, out);
    } else if (train_cmd->parsed()) {
      auto cfg = load_experiment_config(config_file);
      if (train_seed) cfg.seed = cfg.split.seed = *train_seed;
      if (!train_out.empty()) cfg.output_dir = train_out;
      ExperimentHooks hooks;
      if (!quiet) {
        hooks.on_epoch = [&](const std::string& model, const EpochRecord& e) {
          char buf[160];
          std::snprintf(buf, sizeof(buf), "%s epoch %d: loss %.4f acc %.4f val_loss %.4f val_acc %.4f\n",
                        model.c_str(), e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
          err << buf << std::flush;
        };
      }
      const auto result = run_experiment(cfg, hooks);
      if (cfg.output_dir) write_experiment_outputs(result, *cfg.output_dir);
      out << export_report(result.rows, ReportFormat::table_text);
    } else if (eval->parsed()) {
      const auto model = load_checkpoint(checkpoint_file);
      std::optional<Split> s;
      if (!eval_split.empty()) s = parse_split(eval_split);
      const auto r = detail::evaluate_manifest(model, load_manifest(eval_manifest, model.class_set), s, positive_class);
      auto j = to_json(r);
      j["classes"] = model.class_set;
      out << j.dump(2) << "\n";
    } else if (predict->parsed()) {
      const auto model = load_checkpoint(checkpoint_file);
      std::optional<Image> img;
      if (!image_file.empty()) img = read_image_file(image_file);
      const std::string id = std::filesystem::path(checkpoint_file).stem().string();
      out << to_json(predict_one(model, id, img, predict_location)).dump(2) << "\n";
    } else if (report->parsed()) {
      out << export_report(collect_report_rows(runs_dir),
                           report_format == "csv" ? ReportFormat::delimited : ReportFormat::table_text);
    } else if (serve->parsed()) {
      ServiceConfig sc;
      sc.checkpoints_dir = checkpoints_dir;
      sc.bodymap_path = serve_bodymap;
      sc.annotations_path = annotations_file;
      if (!static_dir.empty()) sc.static_dir = static_dir;
      Service service = Service::load(sc);
      httplib::Server server;
      service.mount(server, sc.static_dir);
      err << "serving " << service.models().size() << " checkpoint(s) on http://" << host << ":" << port << "\n"
          << std::flush;
      if (!server.listen(host, port)) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    }
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace wmc
