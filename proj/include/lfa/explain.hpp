#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfa/image.hpp"
#include "lfa/model_io.hpp"
#include "lfa/network.hpp"

namespace lfa {

// Reference inputs for expected gradients: each entry is one preprocessed
// sample (H * W * C floats, same layout as the network input).
struct BackgroundSet {
  std::vector<std::vector<float>> samples;
  std::uint64_t seed = 0;
  std::string id;  // free-form provenance label
};

struct AttributionMap {
  std::size_t width = 0, height = 0;
  int target_class = 0;
  std::size_t steps = 0;
  std::string background_id;
  std::vector<float> values;  // height * width (summed over channels)

  double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }
};

struct AttributionOptions {
  std::size_t steps = 128;
  std::size_t batch = 32;  // path points per forward/backward pass
};

// Pre-softmax outputs of the final layer for a batch.
inline BasicTensor<float> logits(const Network<float>& net, const BasicTensor<float>& batch) {
  ForwardTrace<float> trace;
  net.forward(batch, trace, Mode::Inference);
  return trace.logits;
}

// Expected gradients: for each background b the gradient of the target logit
// is averaged over `steps` midpoint-rule points on the segment b -> input,
// multiplied by (input - b), then averaged over backgrounds.
inline AttributionMap attribute(const Network<float>& net, const std::vector<float>& input,
                                int target_class, const BackgroundSet& background,
                                const AttributionOptions& opt = {}) {
  if (background.samples.empty()) throw std::invalid_argument("attribute: empty background set");
  if (opt.steps < 1) throw std::invalid_argument("attribute: steps must be >= 1");
  const Shape& in = net.input_shape();
  const std::size_t h = in[0], w = in[1], c = in[2], per = h * w * c;
  if (input.size() != per) throw std::invalid_argument("attribute: input size mismatch");
  for (const auto& b : background.samples) {
    if (b.size() != per) throw std::invalid_argument("attribute: background size mismatch");
  }
  std::vector<double> total(per, 0.0);
  std::vector<double> grad_sum(per);
  ForwardTrace<float> trace;
  for (const auto& base : background.samples) {
    std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
    bool identical = std::equal(base.begin(), base.end(), input.begin());
    if (identical) continue;  // zero path: contributes nothing
    for (std::size_t s0 = 0; s0 < opt.steps; s0 += opt.batch) {
      const std::size_t n = std::min(opt.batch, opt.steps - s0);
      BasicTensor<float> x({n, h, w, c});
      for (std::size_t k = 0; k < n; ++k) {
        const float alpha = static_cast<float>((static_cast<double>(s0 + k) + 0.5) / opt.steps);
        float* dst = x.data() + k * per;
        for (std::size_t i = 0; i < per; ++i) dst[i] = base[i] + alpha * (input[i] - base[i]);
      }
      net.forward(x, trace, Mode::Inference);
      BasicTensor<float> dlogits(trace.logits.shape());
      const std::size_t classes = dlogits.dim(1);
      if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes) {
        throw std::invalid_argument("attribute: target class out of range");
      }
      for (std::size_t k = 0; k < n; ++k) dlogits.at(k, static_cast<std::size_t>(target_class)) = 1.0f;
      BasicTensor<float> gin;
      net.backward(trace, dlogits, nullptr, &gin);
      for (std::size_t k = 0; k < n; ++k) {
        const float* g = gin.data() + k * per;
        for (std::size_t i = 0; i < per; ++i) grad_sum[i] += g[i];
      }
    }
    for (std::size_t i = 0; i < per; ++i) {
      total[i] += grad_sum[i] / opt.steps * (static_cast<double>(input[i]) - base[i]);
    }
  }
  AttributionMap m;
  m.width = w;
  m.height = h;
  m.target_class = target_class;
  m.steps = opt.steps;
  m.background_id = background.id;
  m.values.assign(h * w, 0.0f);
  const double nb = static_cast<double>(background.samples.size());
  for (std::size_t p = 0; p < h * w; ++p) {
    double v = 0;
    for (std::size_t ch = 0; ch < c; ++ch) v += total[p * c + ch];
    m.values[p] = static_cast<float>(v / nb);
  }
  return m;
}

struct CompletenessCheck {
  double residual = 0;
  double attribution_sum = 0;
  double output_gap = 0;  // f(input) - mean_b f(b)
  bool within(double rel) const { return residual <= rel * std::max(1.0, std::abs(output_gap)); }
};

// |sum(attributions) - (f(input) - mean_b f(b))| with f the target logit.
inline CompletenessCheck completeness_residual(const Network<float>& net,
                                               const std::vector<float>& input, int target_class,
                                               const AttributionMap& map,
                                               const BackgroundSet& background) {
  const Shape& in = net.input_shape();
  const std::size_t per = in[0] * in[1] * in[2];
  const auto t = static_cast<std::size_t>(target_class);
  BasicTensor<float> x({1, in[0], in[1], in[2]}, input);
  const double fx = logits(net, x).at(0, t);
  double mean_b = 0;
  const std::size_t chunk = 32;
  for (std::size_t s0 = 0; s0 < background.samples.size(); s0 += chunk) {
    const std::size_t n = std::min(chunk, background.samples.size() - s0);
    BasicTensor<float> b({n, in[0], in[1], in[2]});
    for (std::size_t k = 0; k < n; ++k) {
      std::copy(background.samples[s0 + k].begin(), background.samples[s0 + k].end(),
                b.data() + k * per);
    }
    const auto lb = logits(net, b);
    for (std::size_t k = 0; k < n; ++k) mean_b += lb.at(k, t);
  }
  mean_b /= static_cast<double>(background.samples.size());
  CompletenessCheck c;
  c.attribution_sum = map.sum();
  c.output_gap = fx - mean_b;
  c.residual = std::abs(c.attribution_sum - c.output_gap);
  return c;
}

// Diverging red/blue overlay on the grayscale base: alpha 0.5 * |a| / max|a|.
inline Image render_overlay(const Image& base, const AttributionMap& map) {
  if (base.width != map.width || base.height != map.height) {
    throw std::invalid_argument("render_overlay: image and map dimensions differ");
  }
  float peak = 0;
  for (float v : map.values) peak = std::max(peak, std::abs(v));
  const Plane gray = to_grayscale(base);
  Image out(base.width, base.height);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double g = gray.values[i];
    const double t = peak > 0 ? map.values[i] / peak : 0.0;
    const double a = 0.5 * std::abs(t);
    const double r = t > 0 ? 255.0 : 0.0, b = t < 0 ? 255.0 : 0.0;
    const double rgb[3] = {g * (1 - a) + r * a, g * (1 - a), g * (1 - a) + b * a};
    for (int k = 0; k < 3; ++k) {
      out.pixels[i * 3 + k] = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[k]), 0L, 255L));
    }
  }
  return out;
}

// Sum of positive attribution inside a 0/1 mask.
inline double positive_mass(const AttributionMap& map, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != map.values.size()) throw std::invalid_argument("positive_mass: mask size");
  double s = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && map.values[i] > 0) s += map.values[i];
  }
  return s;
}

struct RankedPixel {
  std::size_t x = 0, y = 0;
  float value = 0;
};

inline std::vector<RankedPixel> top_pixels(const AttributionMap& map, std::size_t k) {
  std::vector<std::size_t> idx(map.values.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const float va = std::abs(map.values[a]), vb = std::abs(map.values[b]);
                      return va != vb ? va > vb : a < b;
                    });
  std::vector<RankedPixel> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({idx[i] % map.width, idx[i] / map.width, map.values[idx[i]]});
  }
  return out;
}

// "LFAA" | u32 width | u32 height | u32 class index | f32 values (LE)
inline std::vector<std::uint8_t> encode_attribution(const AttributionMap& m) {
  ByteWriter w;
  w.raw("LFAA");
  w.u32(static_cast<std::uint32_t>(m.width));
  w.u32(static_cast<std::uint32_t>(m.height));
  w.u32(static_cast<std::uint32_t>(m.target_class));
  for (float v : m.values) w.f32(v);
  return w.bytes();
}

inline AttributionMap decode_attribution(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != "LFAA") throw std::runtime_error("not an LFAA attribution file");
  AttributionMap m;
  m.width = r.u32();
  m.height = r.u32();
  m.target_class = static_cast<int>(r.u32());
  m.values.resize(m.width * m.height);
  for (auto& v : m.values) v = r.f32();
  if (!r.done()) throw std::runtime_error("trailing bytes after LFAA data");
  return m;
}

// "LFAB" | u32 count | u32 floats per sample | u64 seed | f32 samples (LE)
inline std::vector<std::uint8_t> encode_background(const BackgroundSet& b) {
  ByteWriter w;
  w.raw("LFAB");
  w.u32(static_cast<std::uint32_t>(b.samples.size()));
  w.u32(static_cast<std::uint32_t>(b.samples.empty() ? 0 : b.samples[0].size()));
  w.u64(b.seed);
  for (const auto& s : b.samples) {
    for (float v : s) w.f32(v);
  }
  return w.bytes();
}

inline BackgroundSet decode_background(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.raw(4) != "LFAB") throw std::runtime_error("not an LFAB background file");
  BackgroundSet b;
  const std::uint32_t n = r.u32(), per = r.u32();
  b.seed = r.u64();
  b.samples.assign(n, std::vector<float>(per));
  for (auto& s : b.samples) {
    for (auto& v : s) v = r.f32();
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after LFAB data");
  b.id = "seed-" + std::to_string(b.seed);
  return b;
}

// Seeded choice of `count` distinct rows from a pool of preprocessed samples.
inline BackgroundSet select_background(const std::vector<const std::vector<float>*>& pool,
                                       std::size_t count, std::uint64_t seed) {
  if (pool.empty() || count == 0) throw std::invalid_argument("select_background: empty pool");
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, idx.size()));
  BackgroundSet b;
  b.seed = seed;
  b.id = "seed-" + std::to_string(seed);
  for (auto i : idx) b.samples.push_back(*pool[i]);
  return b;
}

}  // namespace lfa
