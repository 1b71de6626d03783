#pragma once

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfa/classifier.hpp"
#include "lfa/detector.hpp"
#include "lfa/explain.hpp"
#include "lfa/synth.hpp"

namespace lfa {

// A generated corpus on disk: manifest records plus their directory.
struct Corpus {
  std::filesystem::path dir;
  std::vector<ManifestRecord> records;

  Image image(std::size_t i) const { return read_image(dir / records.at(i).path); }
};

inline Corpus load_corpus(const std::filesystem::path& dir) {
  return {dir, read_manifest(dir / "manifest.jsonl")};
}

// Ground-truth membrane crops, preprocessed for the classifier.
inline Dataset classifier_dataset(const Corpus& c, std::size_t size = kClassifierInput) {
  Dataset ds;
  ds.size = size;
  ds.pixels.reserve(c.records.size() * size * size);
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    ds.add(classifier_input(crop_membrane(c.image(i), c.records[i].bbox_exact), size), c.records[i].label);
  }
  return ds;
}

inline std::vector<DetectionExample> detection_examples(const Corpus& c, std::size_t size = 256) {
  std::vector<DetectionExample> out;
  out.reserve(c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    out.push_back(make_detection_example(c.image(i), c.records[i].bbox_exact, size));
  }
  return out;
}

inline std::string detector_history_csv(const DetectorHistory& h) {
  std::ostringstream out;
  out << "epoch,train_objectness,train_box,val_objectness,val_box\n";
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.train_objectness << ',' << e.train_box << ',' << e.val_objectness
        << ',' << e.val_box << '\n';
  }
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct ClassifierRun {
  Network<float> net;
  TrainHistory history;
  Split split;
  BackgroundSet background;
};

// Classifier training on `data`; the background set is drawn from the
// training batches with the config seed.
inline ClassifierRun train_classifier_run(const Dataset& data, const TrainConfig& cfg,
                                          std::size_t background_count,
                                          const EpochCallback& on_epoch = {}) {
  ClassifierRun run;
  run.split = split_batches(data.count(), cfg);
  run.net = build_classifier_model(cfg.seed, data.size);
  run.history = train(run.net, data, run.split.train, run.split.val, cfg, on_epoch);
  std::vector<std::vector<float>> rows;
  for (const auto& b : run.split.train) {
    for (auto i : b) {
      rows.emplace_back(data.pixels.begin() + static_cast<std::ptrdiff_t>(i * data.stride()),
                        data.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * data.stride()));
    }
  }
  std::vector<const std::vector<float>*> pool;
  for (const auto& r : rows) pool.push_back(&r);
  run.background = select_background(pool, background_count, cfg.seed);
  return run;
}

// A band of the same membrane-local size as `line`, moved to the position
// on the membrane farthest from both lines.
inline BBox background_band(const CassetteParams& p, const BBox& line) {
  const double half = line.w / 2;
  const double c1 = p.control_pos * p.membrane_w, c2 = p.test_pos * p.membrane_w;
  double best_u = half, best_d = -1;
  for (int k = 0; k <= 200; ++k) {
    const double u = half + (p.membrane_w - 2 * half) * k / 200.0;
    const double d = std::min(std::abs(u - c1), std::abs(u - c2));
    if (d > best_d) {
      best_d = d;
      best_u = u;
    }
  }
  return {best_u - half, line.y, line.w, line.h};
}

struct BandMasks {
  std::vector<std::uint8_t> control, test, background;
};

// Line bands of a manifest record, on the classifier's size x size grid over
// the ground-truth crop.
inline BandMasks band_masks(const ManifestRecord& r, std::size_t size = kClassifierInput) {
  const CassetteParams& p = r.params;
  const PixelRect rect = pixel_rect(r.bbox_exact, static_cast<std::size_t>(p.canvas_w),
                                    static_cast<std::size_t>(p.canvas_h));
  const BBox control = line_rect(p, p.control_pos), test = line_rect(p, p.test_pos);
  return {band_mask(p, rect, control, size, size), band_mask(p, rect, test, size, size),
          band_mask(p, rect, background_band(p, test), size, size)};
}

// Top-k pixels of one misclassified sample, each tagged with the line band
// it falls in.
inline nlohmann::json forensic_entry(const ManifestRecord& r, const Prediction& pred,
                                     const AttributionMap& map, std::size_t k = 10) {
  const BandMasks m = band_masks(r, map.width);
  nlohmann::json pixels = nlohmann::json::array();
  for (const auto& px : top_pixels(map, k)) {
    const std::size_t i = px.y * map.width + px.x;
    const char* band = m.control[i] ? "control" : m.test[i] ? "test" : "none";
    pixels.push_back({{"x", px.x}, {"y", px.y}, {"value", px.value}, {"band", band}});
  }
  return {{"path", r.path},
          {"true", to_string(r.label)},
          {"predicted", to_string(pred.label)},
          {"confidence", format_confidence(pred.confidence)},
          {"positive_mass_control", positive_mass(map, m.control)},
          {"positive_mass_test", positive_mass(map, m.test)},
          {"top_pixels", pixels}};
}

}  // namespace lfa
