#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"
#include "lfa/classifier.hpp"
#include "lfa/crop.hpp"
#include "lfa/detector.hpp"
#include "lfa/explain.hpp"
#include "lfa/image.hpp"
// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "httplib.h"

namespace lfa {

inline constexpr std::size_t kMaxUploadBytes = 10u * 1024u * 1024u;

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// Error carrying an HTTP-style status code.
struct ServiceError : std::runtime_error {
  int status;
  ServiceError(int code, const std::string& what) : std::runtime_error(what), status(code) {}
};

struct StageTimings {
  double upload_ms = 0, detect_ms = 0, classify_ms = 0, total_ms = 0;
};

struct AnalysisRecord {
  std::string analysis_id;
  std::string image_id;
  std::string status;  // uploaded | analyzing | done | failed | no_membrane
  std::optional<Prediction> result;
  std::optional<BBox> bbox;
  std::vector<Detection> detections;
  StageTimings timings;
  std::string created_at;
  std::string error;
};

inline nlohmann::json to_json(const AnalysisRecord& r) {
  nlohmann::json j{{"analysis_id", r.analysis_id},
                   {"image_id", r.image_id},
                   {"status", r.status},
                   {"created_at", r.created_at},
                   {"timings",
                    {{"upload_ms", r.timings.upload_ms},
                     {"detect_ms", r.timings.detect_ms},
                     {"classify_ms", r.timings.classify_ms},
                     {"total_ms", r.timings.total_ms}}}};
  if (r.result) {
    const auto& p = *r.result;
    j["result"] = {{"label", to_string(p.label)},
                   {"confidence", p.confidence},
                   {"confidence_text", format_confidence(p.confidence)},
                   {"class_probs",
                    {{"POSITIVE", p.class_probs[0]},
                     {"NEGATIVE", p.class_probs[1]},
                     {"INVALID", p.class_probs[2]}}}};
  } else {
    j["result"] = nullptr;
  }
  if (r.bbox) {
    j["bbox"] = {{"x", r.bbox->x}, {"y", r.bbox->y}, {"w", r.bbox->w}, {"h", r.bbox->h}};
  } else {
    j["bbox"] = nullptr;
  }
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : r.detections) {
    dets.push_back({{"x", d.box.x}, {"y", d.box.y}, {"w", d.box.w}, {"h", d.box.h},
                    {"score", d.score}});
  }
  j["detections"] = dets;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline AnalysisRecord analysis_record_from_json(const nlohmann::json& j) {
  AnalysisRecord r;
  r.analysis_id = j.at("analysis_id");
  r.image_id = j.at("image_id");
  r.status = j.at("status");
  r.created_at = j.value("created_at", "");
  const auto& t = j.at("timings");
  r.timings = {t.at("upload_ms"), t.at("detect_ms"), t.at("classify_ms"), t.at("total_ms")};
  if (!j.at("result").is_null()) {
    const auto& p = j.at("result");
    const auto& cp = p.at("class_probs");
    Prediction pred;
    pred.class_probs = {cp.at("POSITIVE"), cp.at("NEGATIVE"), cp.at("INVALID")};
    pred.label = parse_label(p.at("label").get<std::string>());
    pred.confidence = p.at("confidence");
    r.result = pred;
  }
  if (!j.at("bbox").is_null()) {
    const auto& b = j.at("bbox");
    r.bbox = BBox{b.at("x"), b.at("y"), b.at("w"), b.at("h")};
  }
  for (const auto& d : j.value("detections", nlohmann::json::array())) {
    r.detections.push_back({{d.at("x"), d.at("y"), d.at("w"), d.at("h")}, d.at("score")});
  }
  r.error = j.value("error", "");
  return r;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<long long>(ms));
  return buf;
}

// Models the service holds for its whole lifetime; shared read-only.
struct ModelBundle {
  Detector detector;
  Network<float> classifier;
  std::optional<BackgroundSet> background;
  AttributionOptions attribution{16, 16};
  std::size_t attribution_backgrounds = 8;
};

inline ModelBundle load_model_bundle(const std::filesystem::path& dir) {
  ModelBundle m;
  m.detector = load_detector(dir / "detector.lfam");
  DecodedModel c = load_model(dir / "classifier.lfam");
  if (c.kind != ModelKind::Classifier) throw std::runtime_error("classifier.lfam is not a classifier");
  m.classifier = std::move(c.network);
  if (std::filesystem::exists(dir / "background.lfab")) {
    m.background = decode_background(read_file_bytes(dir / "background.lfab"));
  }
  return m;
}

// Upload / analyze / fetch logic over a content-addressed blob directory and
// an append-only record log (store/records.jsonl, last entry per id wins).
class AnalysisService {
 public:
  AnalysisService(std::shared_ptr<const ModelBundle> models, std::filesystem::path store)
      : models_(std::move(models)), store_(std::move(store)) {
    std::filesystem::create_directories(store_ / "blobs");
    std::filesystem::create_directories(store_ / "attributions");
    replay();
  }

  bool models_loaded() const { return models_ != nullptr; }

  struct UploadResult {
    std::string image_id;
    std::string media_type;
    std::size_t bytes = 0;
  };

  UploadResult upload(const std::string& body, const std::string& declared_type) {
    const auto t0 = std::chrono::steady_clock::now();
    if (body.size() > kMaxUploadBytes) throw ServiceError(413, "payload exceeds 10 MiB");
    const auto bytes = as_bytes(body);
    const MediaType sniffed = sniff_media_type(bytes);
    const std::string base_type = declared_type.substr(0, declared_type.find(';'));
    if (base_type != "image/png" && base_type != "image/jpeg") {
      throw ServiceError(415, "media type must be image/png or image/jpeg");
    }
    if (sniffed == MediaType::Unknown) throw ServiceError(415, "payload is not a PNG or JPEG image");
    try {
      decode_image(bytes);
    } catch (const std::exception& e) {
      throw ServiceError(415, std::string("image does not decode: ") + e.what());
    }
    const std::string id = sha256_hex(bytes);
    const auto path = store_ / "blobs" / id;
    {
      std::unique_lock lock(blob_mutex_);
      if (!std::filesystem::exists(path)) write_file_bytes(path, bytes);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      upload_ms_.try_emplace(id, ms);
    }
    return {id, media_type_name(sniffed), body.size()};
  }

  AnalysisRecord analyze(const std::string& image_id) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!valid_id(image_id) || !std::filesystem::exists(store_ / "blobs" / image_id)) {
      throw ServiceError(404, "unknown image_id");
    }
    AnalysisRecord r;
    r.image_id = image_id;
    r.created_at = utc_timestamp();
    {
      std::shared_lock lock(blob_mutex_);
      auto it = upload_ms_.find(image_id);
      r.timings.upload_ms = it != upload_ms_.end() ? it->second : 0.0;
    }
    r.analysis_id = next_analysis_id(image_id);
    try {
      const Image img = decode_image(read_file_bytes(store_ / "blobs" / image_id));
      auto t1 = std::chrono::steady_clock::now();
      r.detections = models_->detector.detect(img);
      auto t2 = std::chrono::steady_clock::now();
      r.timings.detect_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
      if (r.detections.empty()) {
        r.status = "no_membrane";
      } else {
        r.bbox = r.detections.front().box;
        const Image crop = crop_membrane(img, *r.bbox);
        t1 = std::chrono::steady_clock::now();
        r.result = predict(models_->classifier, crop);
        t2 = std::chrono::steady_clock::now();
        r.timings.classify_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
        if (!std::isfinite(r.result->confidence)) throw std::runtime_error("non-finite classifier output");
        r.status = "done";
      }
    } catch (const ServiceError&) {
      throw;
    } catch (const std::exception& e) {
      r.status = "failed";
      r.result.reset();
      r.error = e.what();
    }
    r.timings.total_ms = r.timings.upload_ms +
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    persist(r);
    return r;
  }

  AnalysisRecord get(const std::string& analysis_id) const {
    std::shared_lock lock(records_mutex_);
    auto it = records_.find(analysis_id);
    if (it == records_.end()) throw ServiceError(404, "unknown analysis id");
    return it->second;
  }

  std::size_t record_count() const {
    std::shared_lock lock(records_mutex_);
    return records_.size();
  }

  // Overlay PNG for the predicted class, computed once and cached on disk.
  std::string attribution_png(const std::string& analysis_id) {
    const AnalysisRecord r = get(analysis_id);
    if (r.status != "done" || !r.result || !r.bbox) {
      throw ServiceError(409, "attribution is only available for completed analyses");
    }
    const auto png_path = store_ / "attributions" / (analysis_id + ".png");
    std::lock_guard lock(attribution_mutex_);
    if (std::filesystem::exists(png_path)) {
      const auto b = read_file_bytes(png_path);
      return {b.begin(), b.end()};
    }
    if (!models_->background) throw ServiceError(503, "no background set loaded for attribution");
    const Image img = decode_image(read_file_bytes(store_ / "blobs" / r.image_id));
    const Image crop = crop_membrane(img, *r.bbox);
    const std::size_t s = models_->classifier.input_shape()[0];
    const std::vector<float> pixels = preprocess(crop, s);
    std::vector<float> x = pixels;
    standardize(x);
    BackgroundSet bg = *models_->background;
    if (bg.samples.size() > models_->attribution_backgrounds) bg.samples.resize(models_->attribution_backgrounds);
    const AttributionMap map =
        attribute(models_->classifier, x, ordinal(r.result->label), bg, models_->attribution);
    Plane gray{s, s, pixels};
    for (auto& v : gray.values) v *= 255.0f;
    const Image overlay = render_overlay(gray_to_rgb(gray), map);
    const auto png = encode_png(overlay);
    write_file_bytes(store_ / "attributions" / (analysis_id + ".lfaa"), encode_attribution(map));
    write_file_bytes(png_path, png);
    return {png.begin(), png.end()};
  }

 private:
  static bool valid_id(const std::string& id) {
    if (id.size() != 64) return false;
    for (char c : id) {
      if (!std::isxdigit(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c))) return false;
    }
    return true;
  }

  std::string next_analysis_id(const std::string& image_id) {
    const std::uint64_t seq = sequence_.fetch_add(1);
    const std::string digest = sha256_hex(as_bytes(image_id + ":" + std::to_string(seq)));
    return digest.substr(0, 24);
  }

  void persist(const AnalysisRecord& r) {
    const std::string line = to_json(r).dump() + "\n";
    std::unique_lock lock(records_mutex_);
    std::ofstream out(store_ / "records.jsonl", std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot append to record log");
    out << line;
    out.flush();
    records_[r.analysis_id] = r;
  }

  void replay() {
    std::ifstream in(store_ / "records.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        AnalysisRecord r = analysis_record_from_json(nlohmann::json::parse(line));
        records_[r.analysis_id] = std::move(r);
        sequence_.fetch_add(1);
      } catch (const std::exception&) {
        // A torn final line from a crash is skipped.
      }
    }
  }

  std::shared_ptr<const ModelBundle> models_;
  std::filesystem::path store_;
  mutable std::shared_mutex records_mutex_;
  std::map<std::string, AnalysisRecord> records_;
  std::shared_mutex blob_mutex_;
  std::map<std::string, double> upload_ms_;
  std::mutex attribution_mutex_;
  std::atomic<std::uint64_t> sequence_{0};
};

inline void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Registers the /v1 API (and /console/ static files when the directory
// exists) on `server`.
inline void install_routes(httplib::Server& server, AnalysisService& svc,
                           const std::filesystem::path& console_dir = {}) {
  server.set_payload_max_length(kMaxUploadBytes + 1);
  auto guard = [](httplib::Response& res, auto&& fn) {
    try {
      fn();
    } catch (const ServiceError& e) {
      json_reply(res, e.status, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      json_reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
    } catch (const std::exception& e) {
      json_reply(res, 500, {{"error", e.what()}});
    }
  };
  server.Post("/v1/images", [&svc, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] {
      auto up = svc.upload(req.body, req.get_header_value("Content-Type"));
      json_reply(res, 200, {{"image_id", up.image_id}, {"media_type", up.media_type}, {"bytes", up.bytes}});
    });
  });
  server.Post("/v1/analyses", [&svc, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] {
      const auto body = nlohmann::json::parse(req.body);
      json_reply(res, 200, to_json(svc.analyze(body.at("image_id").get<std::string>())));
    });
  });
  server.Get(R"(/v1/analyses/([0-9a-f]+)/attribution)",
             [&svc, guard](const httplib::Request& req, httplib::Response& res) {
               guard(res, [&] {
                 res.set_content(svc.attribution_png(req.matches[1]), "image/png");
                 res.status = 200;
               });
             });
  server.Get(R"(/v1/analyses/([^/]+))", [&svc, guard](const httplib::Request& req, httplib::Response& res) {
    guard(res, [&] { json_reply(res, 200, to_json(svc.get(req.matches[1]))); });
  });
  server.Get("/v1/healthz", [&svc](const httplib::Request&, httplib::Response& res) {
    json_reply(res, 200, {{"status", "ok"}, {"models_loaded", svc.models_loaded()}});
  });
  if (!console_dir.empty() && std::filesystem::is_directory(console_dir)) {
    server.set_mount_point("/console", console_dir.string());
  }
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(nlohmann::json{{"error", httplib::status_message(res.status)}}.dump(),
                      "application/json");
    }
  });
}

}  // namespace lfa
