#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "lfa/adam.hpp"
#include "lfa/bbox.hpp"
#include "lfa/crop.hpp"
#include "lfa/image.hpp"
#include "lfa/metrics.hpp"
#include "lfa/model_io.hpp"
#include "lfa/network.hpp"

namespace lfa {

struct DetectorConfig {
  std::size_t input = 256;  // letterbox side
  std::size_t grid = 8;     // S x S cells
  double score_threshold = 0.5;
  double nms_iou = 0.5;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  AdamConfig adam;
  double box_weight = 5.0;
  double val_fraction = 0.2;
  bool flip_augment = true;
  double time_budget_s = 0;  // 0 = none
  std::uint64_t seed = 1;

  void check() const {
    auto open01 = [](double v) { return v > 0.0 && v < 1.0; };
    if (!open01(score_threshold) || !open01(nms_iou)) {
      throw std::invalid_argument("detector thresholds must be in (0, 1)");
    }
    if (grid < 1) throw std::invalid_argument("grid size must be >= 1");
    if (input != 256 || grid != 8) {
      throw std::invalid_argument("the grid detector is built for a 256 letterbox and 8x8 grid");
    }
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (!(val_fraction >= 0 && val_fraction < 1)) {
      throw std::invalid_argument("val_fraction must be in [0, 1)");
    }
  }
};

// The letterbox is framed by a mid-gray border before entering the network
// so that, with valid convolutions, output cell (i, j) is centred on grid
// cell (i, j) of the letterbox.
inline constexpr std::size_t kDetectorFrame = 64;
inline constexpr std::uint8_t kLetterboxGray = 128;

struct Letterbox {
  double scale = 1;
  double pad_x = 0, pad_y = 0;

  BBox to_letterbox(const BBox& b) const {
    return {b.x * scale + pad_x, b.y * scale + pad_y, b.w * scale, b.h * scale};
  }
  BBox to_image(const BBox& b) const {
    return {(b.x - pad_x) / scale, (b.y - pad_y) / scale, b.w / scale, b.h / scale};
  }
};

// Aspect-preserving resize into a size x size canvas, centred, gray padding.
inline Image letterbox(const Image& img, std::size_t size, Letterbox* lb = nullptr) {
  if (img.empty()) throw std::invalid_argument("letterbox: empty image");
  const double scale = std::min(static_cast<double>(size) / img.width,
                                static_cast<double>(size) / img.height);
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width * scale)));
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height * scale)));
  const Image resized = resize_bilinear(img, w, h);
  Image out(size, size, kLetterboxGray);
  const std::size_t ox = (size - w) / 2, oy = (size - h) / 2;
  for (std::size_t r = 0; r < h; ++r) {
    std::copy_n(resized.at(0, r), w * 3, out.at(ox, oy + r));
  }
  if (lb) *lb = {scale, static_cast<double>(ox), static_cast<double>(oy)};
  return out;
}

inline std::vector<LayerSpec> detector_layers() {
  return {LayerSpec::maxpool(),
          LayerSpec::conv(16), LayerSpec::maxpool(),
          LayerSpec::conv(32), LayerSpec::maxpool(),
          LayerSpec::conv(32), LayerSpec::maxpool(),
          LayerSpec::conv(64), LayerSpec::maxpool(),
          LayerSpec::conv(64),
          LayerSpec::conv(5, 1, 1, Activation::None)};
}

inline Network<float> build_detector_network(std::uint64_t seed, std::size_t input = 256) {
  const std::size_t side = input + 2 * kDetectorFrame;
  Network<float> net({side, side, 3}, detector_layers());
  net.initialize(seed);
  return net;
}

inline float detector_pixel(std::uint8_t v) { return v / 127.5f - 1.0f; }

// Writes the framed letterbox of `lb_img` into dst (side x side x 3, values
// mapped to [-1, 1]).
inline void frame_input(const Image& lb_img, float* dst, bool flip_x = false, bool flip_y = false) {
  const std::size_t s = lb_img.width, side = s + 2 * kDetectorFrame;
  const float gray = detector_pixel(kLetterboxGray);
  std::fill(dst, dst + side * side * 3, gray);
  for (std::size_t y = 0; y < s; ++y) {
    const std::size_t sy = flip_y ? s - 1 - y : y;
    float* row = dst + ((y + kDetectorFrame) * side + kDetectorFrame) * 3;
    for (std::size_t x = 0; x < s; ++x) {
      const std::size_t sx = flip_x ? s - 1 - x : x;
      const std::uint8_t* px = lb_img.at(sx, sy);
      for (int c = 0; c < 3; ++c) row[x * 3 + c] = detector_pixel(px[c]);
    }
  }
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Raw head output for one cell -> box in letterbox coordinates.
inline Detection decode_cell(const float* o, std::size_t row, std::size_t col, std::size_t grid,
                             std::size_t size) {
  const double cell = static_cast<double>(size) / grid;
  const double cx = (col + sigmoid(o[0])) * cell;
  const double cy = (row + sigmoid(o[1])) * cell;
  const double w = sigmoid(o[2]) * size;
  const double h = sigmoid(o[3]) * size;
  return {{cx - w / 2, cy - h / 2, w, h}, sigmoid(o[4])};
}

struct IouGrad {
  double iou = 0;
  double d_x1 = 0, d_y1 = 0, d_x2 = 0, d_y2 = 0;  // d IoU / d predicted corners
};

// IoU of a predicted box (x1, y1, x2, y2) against g with its gradient.
inline IouGrad iou_with_grad(double x1, double y1, double x2, double y2, const BBox& g) {
  IouGrad r;
  const double gx2 = g.right(), gy2 = g.bottom();
  const double ix1 = std::max(x1, g.x), ix2 = std::min(x2, gx2);
  const double iy1 = std::max(y1, g.y), iy2 = std::min(y2, gy2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  const double area_p = (x2 - x1) * (y2 - y1);
  if (iw <= 0 || ih <= 0) return r;
  const double inter = iw * ih;
  const double uni = area_p + g.area() - inter;
  r.iou = inter / uni;
  const double d_inter = (uni + inter) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  const double dix1 = x1 > g.x ? -ih : 0.0, dix2 = x2 < gx2 ? ih : 0.0;
  const double diy1 = y1 > g.y ? -iw : 0.0, diy2 = y2 < gy2 ? iw : 0.0;
  r.d_x1 = d_inter * dix1 + d_area * -(y2 - y1);
  r.d_x2 = d_inter * dix2 + d_area * (y2 - y1);
  r.d_y1 = d_inter * diy1 + d_area * -(x2 - x1);
  r.d_y2 = d_inter * diy2 + d_area * (x2 - x1);
  return r;
}

struct DetectorLoss {
  double objectness = 0;
  double box = 0;
};

// Per-image loss on the raw head output (grid*grid*5 values) with the
// gradient written to `grad` (same layout), scaled by `scale`.
//   objectness: BCE at the responsible cell + mean BCE over the others
//   box:        box_weight * (1 - IoU) at the responsible cell
inline DetectorLoss detector_loss(const float* out, const BBox& target, std::size_t grid,
                                  std::size_t size, double box_weight, float* grad,
                                  double scale) {
  const double cell = static_cast<double>(size) / grid;
  const double cx = target.x + target.w / 2, cy = target.y + target.h / 2;
  const auto col = static_cast<std::size_t>(std::clamp(std::floor(cx / cell), 0.0, grid - 1.0));
  const auto row = static_cast<std::size_t>(std::clamp(std::floor(cy / cell), 0.0, grid - 1.0));
  DetectorLoss loss;
  const double neg_weight = grid * grid > 1 ? 1.0 / (grid * grid - 1) : 0.0;
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const float* o = out + (i * grid + j) * 5;
      float* g = grad ? grad + (i * grid + j) * 5 : nullptr;
      const bool pos = i == row && j == col;
      const double p = sigmoid(o[4]);
      const double w = pos ? 1.0 : neg_weight;
      // Stable BCE-with-logits.
      const double z = o[4], t = pos ? 1.0 : 0.0;
      loss.objectness += w * (std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z))));
      if (g) g[4] += static_cast<float>(scale * w * (p - t));
      if (!pos) continue;
      const double sx = sigmoid(o[0]), sy = sigmoid(o[1]), sw = sigmoid(o[2]), sh = sigmoid(o[3]);
      const double px = (j + sx) * cell, py = (i + sy) * cell, pw = sw * size, ph = sh * size;
      const IouGrad ig = iou_with_grad(px - pw / 2, py - ph / 2, px + pw / 2, py + ph / 2, target);
      loss.box = box_weight * (1.0 - ig.iou);
      if (g) {
        const double k = -box_weight * scale;
        const double d_px = ig.d_x1 + ig.d_x2, d_py = ig.d_y1 + ig.d_y2;
        const double d_pw = (ig.d_x2 - ig.d_x1) / 2, d_ph = (ig.d_y2 - ig.d_y1) / 2;
        g[0] += static_cast<float>(k * d_px * cell * sx * (1 - sx));
        g[1] += static_cast<float>(k * d_py * cell * sy * (1 - sy));
        g[2] += static_cast<float>(k * d_pw * size * sw * (1 - sw));
        g[3] += static_cast<float>(k * d_ph * size * sh * (1 - sh));
      }
    }
  }
  return loss;
}

class Detector {
 public:
  Detector() = default;
  Detector(Network<float> net, DetectorConfig cfg) : net_(std::move(net)), cfg_(cfg) {
    const auto& in = net_.input_shape();
    if (in.size() != 3 || in[2] != 3 || in[0] != cfg_.input + 2 * kDetectorFrame) {
      throw std::invalid_argument("detector network input does not match its config");
    }
  }

  const Network<float>& network() const { return net_; }
  Network<float>& network() { return net_; }
  const DetectorConfig& config() const { return cfg_; }
  DetectorConfig& config() { return cfg_; }

  // Every cell's decoded box in original-image coordinates, unfiltered.
  std::vector<Detection> raw_detections(const Image& img) const {
    Letterbox lb;
    const Image boxed = letterbox(img, cfg_.input, &lb);
    const std::size_t side = cfg_.input + 2 * kDetectorFrame;
    Tensor x({1, side, side, 3});
    frame_input(boxed, x.data());
    const Tensor out = net_.infer(x);
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < cfg_.grid; ++i) {
      for (std::size_t j = 0; j < cfg_.grid; ++j) {
        Detection d = decode_cell(out.data() + (i * cfg_.grid + j) * 5, i, j, cfg_.grid, cfg_.input);
        d.box = lb.to_image(d.box);
        dets.push_back(d);
      }
    }
    return dets;
  }

  // Score-thresholded, NMS-filtered detections, best first.
  std::vector<Detection> detect(const Image& img) const {
    std::vector<Detection> kept;
    for (const auto& d : raw_detections(img)) {
      if (d.score >= cfg_.score_threshold && d.box.valid()) kept.push_back(d);
    }
    return nms(std::move(kept), cfg_.nms_iou);
  }

  // Detections above a low floor, for ranking-based metrics.
  std::vector<Detection> detect_for_eval(const Image& img, double floor = 0.01) const {
    std::vector<Detection> kept;
    for (const auto& d : raw_detections(img)) {
      if (d.score >= floor && d.box.valid()) kept.push_back(d);
    }
    return nms(std::move(kept), cfg_.nms_iou);
  }

 private:
  Network<float> net_;
  DetectorConfig cfg_;
};

inline void save_detector(const std::filesystem::path& path, const Detector& d) {
  save_model(path, d.network(), ModelKind::Detector);
}

inline Detector load_detector(const std::filesystem::path& path, DetectorConfig cfg = {}) {
  DecodedModel m = load_model(path);
  if (m.kind != ModelKind::Detector) throw std::runtime_error(path.string() + " is not a detector model");
  cfg.input = m.network.input_shape()[0] - 2 * kDetectorFrame;
  return Detector(std::move(m.network), cfg);
}

// Letterboxed training example.
struct DetectionExample {
  Image boxed;  // cfg.input x cfg.input
  BBox target;  // letterbox coordinates
};

inline DetectionExample make_detection_example(const Image& img, const BBox& truth,
                                               std::size_t size) {
  Letterbox lb;
  DetectionExample ex;
  ex.boxed = letterbox(img, size, &lb);
  ex.target = lb.to_letterbox(truth);
  return ex;
}

struct DetectorEpoch {
  std::size_t epoch = 0;
  double train_objectness = 0, train_box = 0;
  double val_objectness = 0, val_box = 0;
  double seconds = 0;
};

struct DetectorHistory {
  std::vector<DetectorEpoch> epochs;
  std::size_t best_epoch = 0;
};

struct DetectorSplit {
  std::vector<std::size_t> train, val;
};

// Seeded 80/20-style split by config.val_fraction.
inline DetectorSplit split_detection_set(std::size_t n, const DetectorConfig& cfg) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * n + 1e-9));
  DetectorSplit s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return s;
}

inline DetectorLoss detector_set_loss(const Detector& det, const std::vector<DetectionExample>& data,
                                      const std::vector<std::size_t>& idx) {
  const auto& cfg = det.config();
  const std::size_t side = cfg.input + 2 * kDetectorFrame, per = side * side * 3;
  DetectorLoss total;
  for (std::size_t off = 0; off < idx.size(); off += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, idx.size() - off);
    Tensor x({n, side, side, 3});
    for (std::size_t k = 0; k < n; ++k) frame_input(data[idx[off + k]].boxed, x.data() + k * per);
    const Tensor out = det.network().infer(x);
    const std::size_t cells = cfg.grid * cfg.grid * 5;
    for (std::size_t k = 0; k < n; ++k) {
      auto l = detector_loss(out.data() + k * cells, data[idx[off + k]].target, cfg.grid,
                             cfg.input, cfg.box_weight, nullptr, 0);
      total.objectness += l.objectness / idx.size();
      total.box += l.box / idx.size();
    }
  }
  return total;
}

using DetectorEpochCallback = std::function<void(const DetectorEpoch&)>;

// Adam training; restores the epoch with the lowest validation loss
// (objectness + box), earliest on ties.
inline DetectorHistory train_detector(Detector& det, const std::vector<DetectionExample>& data,
                                      const DetectorSplit& split,
                                      const DetectorEpochCallback& on_epoch = {}) {
  const auto& cfg = det.config();
  cfg.check();
  if (split.train.empty()) throw std::invalid_argument("train_detector: empty training set");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  Network<float>& net = det.network();
  auto params = net.parameters();
  AdamState<float> adam(params, cfg.adam);
  Gradients<float> grads = net.zero_gradients();
  std::mt19937_64 rng(cfg.seed ^ 0xA0761D6478BD642Full);
  const std::size_t side = cfg.input + 2 * kDetectorFrame, per = side * side * 3;
  const std::size_t cells = cfg.grid * cfg.grid * 5;
  std::vector<std::size_t> order = split.train;
  DetectorHistory hist;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  for (auto* p : params) best_params.push_back(*p);
  ForwardTrace<float> trace;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    DetectorEpoch st;
    st.epoch = epoch;
    for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - off);
      Tensor x({n, side, side, 3});
      std::vector<BBox> targets(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto& ex = data[order[off + k]];
        const bool fx = cfg.flip_augment && (rng() & 1);
        const bool fy = cfg.flip_augment && (rng() & 1);
        frame_input(ex.boxed, x.data() + k * per, fx, fy);
        BBox t = ex.target;
        if (fx) t.x = cfg.input - t.right();
        if (fy) t.y = cfg.input - t.bottom();
        targets[k] = t;
      }
      const Tensor out = net.forward(x, trace, Mode::Training, &rng);
      Tensor dout(out.shape());
      for (std::size_t k = 0; k < n; ++k) {
        auto l = detector_loss(out.data() + k * cells, targets[k], cfg.grid, cfg.input,
                               cfg.box_weight, dout.data() + k * cells, 1.0 / n);
        if (!std::isfinite(l.objectness) || !std::isfinite(l.box)) {
          throw std::runtime_error("train_detector: non-finite loss at epoch " +
                                   std::to_string(epoch));
        }
        st.train_objectness += l.objectness / order.size();
        st.train_box += l.box / order.size();
      }
      grads.zero();
      net.backward(trace, dout, &grads);
      adam_step(params, grads, adam);
    }
    const DetectorLoss v =
        detector_set_loss(det, data, split.val.empty() ? split.train : split.val);
    st.val_objectness = v.objectness;
    st.val_box = v.box;
    st.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    hist.epochs.push_back(st);
    if (v.objectness + v.box < best) {
      best = v.objectness + v.box;
      hist.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best_params[i] = *params[i];
    }
    if (on_epoch) on_epoch(st);
    if (cfg.time_budget_s > 0 &&
        std::chrono::duration<double>(clock::now() - start).count() >= cfg.time_budget_s) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
  return hist;
}

// Precision / recall at the configured score threshold and IoU 0.5, and
// mAP@50 / mAP@50-95 over all detections above a low score floor.
inline DetectionReport evaluate_detector(const Detector& det, const std::vector<Image>& images,
                                         const std::vector<BBox>& truth) {
  if (images.empty()) throw std::invalid_argument("evaluate_detector: empty set");
  if (images.size() != truth.size()) throw std::invalid_argument("evaluate_detector: size mismatch");
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<BBox>> gts;
  for (std::size_t i = 0; i < images.size(); ++i) {
    dets.push_back(det.detect_for_eval(images[i]));
    gts.push_back({truth[i]});
  }
  return detection_report(dets, gts, det.config().score_threshold);
}

}  // namespace lfa
