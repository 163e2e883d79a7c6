#pragma once

// HTTP backend: body-map metadata, prediction against loaded checkpoints and an
// append-only annotation store that exports as a manifest.
//
//   GET  /healthz                 {"status":"ok"}
//   GET  /api/bodymap             the loaded body map
//   GET  /api/checkpoints         [{id, classes, model_spec}]
//   POST /api/predict             {image_b64, location_code, checkpoint_id?, features?}
//   POST /api/annotations         {image_b64 | image_path, location_code, class_label?}
//   GET  /api/annotations/export  manifest text (JSONL)
//
// Errors are {"error": message, "code": kind} with status 400, 404 or 500.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "wmc/base64.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/checkpoint.hpp"
#include "wmc/dataset.hpp"
#include "wmc/error.hpp"
#include "wmc/image.hpp"
#include "wmc/models.hpp"

namespace wmc {

inline constexpr std::size_t kMaxImageBytes = 8u << 20;
/// Class label given to exported annotations that were stored without one.
inline constexpr const char* kUnlabeledClass = "unlabeled";

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline HttpResponse json_response(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json"}; }

inline HttpResponse error_response(int status, ErrorCode code, const std::string& message) {
  return json_response(status, {{"error", message}, {"code", to_string(code)}});
}

struct PredictResult {
  std::vector<std::string> classes;
  std::vector<float> probabilities;
  std::string predicted;
  std::string model;
};

inline nlohmann::json to_json(const PredictResult& r) {
  return {{"classes", r.classes}, {"probabilities", r.probabilities}, {"predicted", r.predicted}, {"model", r.model}};
}

/// Single-record inference: the image is resized to the model's input shape and
/// the location is encoded under the model's stored vocabulary.
inline PredictResult predict_one(const Model& model, const std::string& model_id, const std::optional<Image>& image,
                                 int location_code, const std::vector<float>& features = {}) {
  const ModelSpec& spec = model.spec();
  AlignedBatch b;
  b.record_ids = {"request"};
  b.labels = {0};
  if (spec.uses_location_branch()) {
    if (!model.vocab.contains(location_code)) {
      fail(ErrorCode::validation,
           "location code " + std::to_string(location_code) + " is not in the vocabulary of model '" + model_id + "'");
    }
    b.locations = nn::Tensor<float>({1, model.vocab.dimension()});
    b.locations.at(0, model.vocab.index_of(location_code)) = 1.0f;
  } else {
    b.locations = nn::Tensor<float>({1, 0});
  }
  if (spec.uses_raw_images()) {
    if (!image) fail(ErrorCode::validation, "model '" + model_id + "' needs an image");
    const auto& s = spec.image_shape;
    b.images = nn::Tensor<float>({1, static_cast<std::size_t>(s.channels), static_cast<std::size_t>(s.height),
                                  static_cast<std::size_t>(s.width)},
                                 resize_to_planar(*image, s.channels, s.height, s.width));
  }
  if (spec.uses_features()) {
    if (features.size() != spec.backbone.feature_dim) {
      fail(ErrorCode::validation, "model '" + model_id + "' needs " + std::to_string(spec.backbone.feature_dim) +
                                      " precomputed features");
    }
    b.features = nn::Tensor<float>({1, features.size()}, features);
  }
  const auto probs = model.network.predict(b);
  PredictResult r;
  r.classes = model.class_set;
  r.model = model_id;
  r.probabilities = probs.values();
  r.predicted = model.class_set[static_cast<std::size_t>(predicted_classes(probs, spec)[0])];
  return r;
}

/// Append-only JSONL store. Appends are serialized and flushed line by line.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) ++count_;
    }
  }

  /// Not safe while another thread is appending to `other`.
  AnnotationStore(AnnotationStore&& other) noexcept : path_(std::move(other.path_)), count_(other.count_) {}

  const std::filesystem::path& path() const { return path_; }

  /// Assigns the next id, writes the record and returns the id.
  std::string append(RoiRecord record) {
    std::lock_guard<std::mutex> lock(mu_);
    char id[32];
    std::snprintf(id, sizeof(id), "ann_%06zu", count_ + 1);
    record.id = id;
    const std::string line = record_to_json(record).dump() + "\n";
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot open annotation store " + path_.string());
    out << line;
    out.flush();
    if (!out) fail(ErrorCode::io, "failed writing annotation store " + path_.string());
    ++count_;
    return record.id;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return count_;
  }

  /// Manifest text: a header line with the sorted class set, then one record per line.
  std::string export_manifest() const {
    std::vector<RoiRecord> records;
    {
      std::lock_guard<std::mutex> lock(mu_);
      std::ifstream in(path_);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
          fail(ErrorCode::parse, std::string("annotation store: ") + e.what());
        }
      }
    }
    Manifest m;
    m.provenance = "annotations";
    std::set<std::string> classes;
    for (auto& r : records) {
      if (r.class_label.empty()) r.class_label = kUnlabeledClass;
      classes.insert(r.class_label);
    }
    m.class_set.assign(classes.begin(), classes.end());
    m.records = std::move(records);
    return manifest_to_text(m);
  }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::size_t count_ = 0;
};

struct ServiceConfig {
  std::filesystem::path checkpoints_dir;
  std::filesystem::path bodymap_path;
  std::filesystem::path annotations_path;  // default: <checkpoints_dir>/annotations.jsonl
  std::optional<std::filesystem::path> static_dir;
};

/// Request handling independent of the transport. Loaded state is immutable
/// except the annotation store.
class Service {
 public:
  Service(BodyMap bodymap, std::map<std::string, Model> models, std::filesystem::path annotations_path)
      : bodymap_(std::move(bodymap)), models_(std::move(models)), store_(std::move(annotations_path)) {
    if (models_.empty()) fail(ErrorCode::not_found, "service needs at least one checkpoint");
  }

  /// Loads every *.wmck in the directory; the id is the file stem.
  static Service load(const ServiceConfig& cfg) {
    if (!std::filesystem::is_directory(cfg.checkpoints_dir)) {
      fail(ErrorCode::not_found, "checkpoint directory " + cfg.checkpoints_dir.string() + " does not exist");
    }
    std::map<std::string, Model> models;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.checkpoints_dir))
      if (e.is_regular_file() && e.path().extension() == ".wmck") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) models.emplace(f.stem().string(), load_checkpoint(f));
    if (models.empty()) fail(ErrorCode::not_found, "no .wmck checkpoints in " + cfg.checkpoints_dir.string());
    auto ann = cfg.annotations_path.empty() ? cfg.checkpoints_dir / "annotations.jsonl" : cfg.annotations_path;
    return Service(load_bodymap(cfg.bodymap_path), std::move(models), ann);
  }

  const BodyMap& bodymap() const { return bodymap_; }
  const std::map<std::string, Model>& models() const { return models_; }
  AnnotationStore& annotations() { return store_; }

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      if (method == "GET" && path == "/healthz") return json_response(200, {{"status", "ok"}});
      if (method == "GET" && path == "/api/bodymap") return json_response(200, bodymap_to_json(bodymap_));
      if (method == "GET" && path == "/api/checkpoints") return checkpoints();
      if (method == "POST" && path == "/api/predict") return predict(body);
      if (method == "POST" && path == "/api/annotations") return annotate(body);
      if (method == "GET" && path == "/api/annotations/export") {
        return {200, store_.export_manifest(), "application/x-ndjson"};
      }
      return error_response(404, ErrorCode::not_found, "no route " + method + " " + path);
    } catch (const Error& e) {
      return error_response(status_for(e.code()), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      return error_response(400, ErrorCode::parse, e.what());
    } catch (const std::exception& e) {
      return error_response(500, ErrorCode::state, e.what());
    }
  }

  /// Registers the routes on an httplib server, plus static files at "/".
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = std::nullopt) {
    server.set_payload_max_length(kMaxImageBytes * 4 / 3 + (64u << 10));
    auto bind = [this](const char* method) {
      return [this, method](const httplib::Request& req, httplib::Response& res) {
        const auto r = handle(method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
      };
    };
    for (const char* p : {"/healthz", "/api/bodymap", "/api/checkpoints", "/api/annotations/export"}) {
      server.Get(p, bind("GET"));
    }
    server.Post("/api/predict", bind("POST"));
    server.Post("/api/annotations", bind("POST"));
    if (static_dir && !server.set_mount_point("/", static_dir->string())) {
      fail(ErrorCode::not_found, "static directory " + static_dir->string() + " does not exist");
    }
  }

  static int status_for(ErrorCode c) {
    switch (c) {
      case ErrorCode::parse:
      case ErrorCode::validation:
      case ErrorCode::duplicate:
      case ErrorCode::shape:
      case ErrorCode::range:
      case ErrorCode::fingerprint:
      case ErrorCode::version: return 400;
      case ErrorCode::not_found: return 404;
      default: return 500;
    }
  }

 private:
  static nlohmann::json parse_body(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      if (!j.is_object()) fail(ErrorCode::parse, "request body must be a JSON object");
      return j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, std::string("request body: ") + e.what());
    }
  }

  static int location_field(const nlohmann::json& j) {
    if (!j.contains("location_code") || !j["location_code"].is_number_integer()) {
      fail(ErrorCode::validation, "location_code must be an integer");
    }
    return j["location_code"].get<int>();
  }

  static std::optional<Image> image_field(const nlohmann::json& j) {
    if (!j.contains("image_b64")) return std::nullopt;
    if (!j["image_b64"].is_string()) fail(ErrorCode::validation, "image_b64 must be a string");
    const auto bytes = base64::decode(j["image_b64"].get<std::string>());
    if (bytes.size() > kMaxImageBytes) fail(ErrorCode::validation, "image exceeds the upload limit");
    return decode_pnm(bytes);
  }

  HttpResponse checkpoints() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, m] : models_) out.push_back({{"id", id}, {"classes", m.class_set}, {"model_spec", to_json(m.spec())}});
    return json_response(200, out);
  }

  HttpResponse predict(const std::string& body) const {
    const auto j = parse_body(body);
    std::string id;
    if (j.contains("checkpoint_id")) {
      id = j["checkpoint_id"].get<std::string>();
    } else if (models_.size() == 1) {
      id = models_.begin()->first;
    } else {
      fail(ErrorCode::validation, "checkpoint_id is required when several checkpoints are loaded");
    }
    auto it = models_.find(id);
    if (it == models_.end()) return error_response(404, ErrorCode::not_found, "unknown checkpoint '" + id + "'");
    const int code = location_field(j);
    std::vector<float> features;
    if (j.contains("features")) features = j["features"].get<std::vector<float>>();
    return json_response(200, to_json(predict_one(it->second, id, image_field(j), code, features)));
  }

  HttpResponse annotate(const std::string& body) {
    const auto j = parse_body(body);
    RoiRecord r;
    r.location_code = location_field(j);
    if (r.location_code != kBackgroundCode && !bodymap_.contains(r.location_code)) {
      fail(ErrorCode::validation, "location code " + std::to_string(r.location_code) + " is not in the body map");
    }
    r.image = image_field(j);
    if (!r.image) {
      if (!j.contains("image_path") || !j["image_path"].is_string()) {
        fail(ErrorCode::validation, "annotation needs image_b64 or image_path");
      }
      r.image_path = j["image_path"].get<std::string>();
    }
    if (j.contains("class_label") && !j["class_label"].is_null()) r.class_label = j["class_label"].get<std::string>();
    const std::string id = store_.append(std::move(r));
    return json_response(200, {{"id", id}});
  }

  BodyMap bodymap_;
  std::map<std::string, Model> models_;
  AnnotationStore store_;
};

}  // namespace wmc
