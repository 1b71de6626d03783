#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lfa/ops.hpp"
#include "lfa/tensor.hpp"

namespace lfa {

namespace detail {

template <typename T>
std::vector<T>& scratch_b() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace detail

enum class LayerKind : std::uint8_t {
  Conv2D = 1,
  MaxPool2D = 2,
  Dropout = 3,
  Flatten = 4,
  Dense = 5,
};

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::MaxPool2D: return "MaxPooling2D";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Dense: return "Dense";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  std::size_t filters = 0;  // output channels for Conv2D, units for Dense
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  Activation activation = Activation::None;
  float dropout_rate = 0.0f;

  static LayerSpec conv(std::size_t filters, std::size_t kh = 3, std::size_t kw = 3,
                        Activation act = Activation::ReLU) {
    return {LayerKind::Conv2D, filters, kh, kw, act, 0.0f};
  }
  static LayerSpec maxpool() { return {LayerKind::MaxPool2D, 0, 2, 2, Activation::None, 0.0f}; }
  static LayerSpec dropout(float rate) {
    return {LayerKind::Dropout, 0, 0, 0, Activation::None, rate};
  }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, Activation::None, 0.0f}; }
  static LayerSpec dense(std::size_t units, Activation act) {
    return {LayerKind::Dense, units, 0, 0, act, 0.0f};
  }

  bool has_parameters() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Dense;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class Mode { Inference, Training };

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> tensors;  // aligned with Network::parameters()

  void zero() {
    for (auto& t : tensors) t.fill(T{0});
  }
};

// State retained by a forward pass for the matching backward pass. Only the
// inputs of parameterised layers are kept; ReLU, pooling and dropout keep a
// byte mask instead of their activations.
template <typename T>
struct ForwardTrace {
  std::vector<Shape> shapes;               // [0] = input, [l + 1] = output of layer l
  std::vector<BasicTensor<T>> inputs;      // input of each Conv2D / Dense layer
  std::vector<std::vector<std::uint8_t>> masks;
  BasicTensor<T> logits;                   // final layer before its activation
};

// Sequential network over the five supported layer kinds. Parameters are
// plain tensors; all forward/backward entry points are const so an immutable
// network can serve concurrent callers.
template <typename T>
class Network {
 public:
  Network() = default;

  // input_shape is per-sample (H, W, C).
  Network(Shape input_shape, std::vector<LayerSpec> specs)
      : input_shape_(std::move(input_shape)), specs_(std::move(specs)) {
    if (input_shape_.size() != 3) {
      throw std::invalid_argument("network input shape must be (H, W, C)");
    }
    if (specs_.empty()) throw std::invalid_argument("network needs at least one layer");
    Shape s = input_shape_;
    s.insert(s.begin(), 1);
    weights_.resize(specs_.size());
    biases_.resize(specs_.size());
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const LayerSpec& spec = specs_[l];
      if (spec.activation == Activation::Softmax && l + 1 != specs_.size()) {
        throw std::invalid_argument("softmax is only supported on the final layer");
      }
      switch (spec.kind) {
        case LayerKind::Conv2D:
          if (s.size() != 4) throw std::invalid_argument("Conv2D needs a 4-d input");
          if (spec.filters == 0 || spec.kernel_h == 0 || spec.kernel_w == 0) {
            throw std::invalid_argument("Conv2D needs filters and kernel size");
          }
          weights_[l] = BasicTensor<T>({spec.kernel_h, spec.kernel_w, s[3], spec.filters});
          biases_[l] = BasicTensor<T>({spec.filters});
          break;
        case LayerKind::Dense:
          if (s.size() != 2) throw std::invalid_argument("Dense needs a flattened input");
          if (spec.filters == 0) throw std::invalid_argument("Dense needs units");
          weights_[l] = BasicTensor<T>({s[1], spec.filters});
          biases_[l] = BasicTensor<T>({spec.filters});
          break;
        case LayerKind::Dropout:
          if (!(spec.dropout_rate >= 0.0f && spec.dropout_rate < 1.0f)) {
            throw std::invalid_argument("dropout rate must be in [0, 1)");
          }
          break;
        default: break;
      }
      s = next_shape(s, spec);
    }
  }

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return specs_; }

  // Output shape of every layer for the given batch size.
  std::vector<Shape> output_shapes(std::size_t batch) const {
    Shape s = input_shape_;
    s.insert(s.begin(), batch);
    std::vector<Shape> shapes;
    for (const auto& spec : specs_) {
      s = next_shape(s, spec);
      shapes.push_back(s);
    }
    return shapes;
  }

  std::vector<BasicTensor<T>*> parameters() {
    std::vector<BasicTensor<T>*> out;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      if (specs_[l].has_parameters()) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
      }
    }
    return out;
  }

  std::vector<const BasicTensor<T>*> parameters() const {
    std::vector<const BasicTensor<T>*> out;
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      if (specs_[l].has_parameters()) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    for (const auto* p : parameters()) g.tensors.emplace_back(p->shape());
    return g;
  }

  // Glorot-uniform weights (fan_out counts the kernel window for Conv2D),
  // zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      if (!specs_[l].has_parameters()) continue;
      auto& wt = weights_[l];
      const std::size_t fan_in = wt.size() / wt.shape().back();
      const std::size_t fan_out = wt.size() / wt.shape()[wt.rank() - 2];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& v : wt.values()) v = static_cast<T>(dist(rng));
      biases_[l].fill(T{0});
    }
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(input_shape_, specs_);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  // Inference-mode forward pass: dropout is the identity.
  BasicTensor<T> infer(const BasicTensor<T>& batch) const {
    return run(batch, nullptr, Mode::Inference, nullptr);
  }

  // Forward pass that records what backward() needs. In training mode the
  // dropout masks are drawn from `rng` (inverted dropout).
  BasicTensor<T> forward(const BasicTensor<T>& batch, ForwardTrace<T>& trace, Mode mode,
                         std::mt19937_64* rng = nullptr) const {
    if (mode == Mode::Training && !rng) {
      for (const auto& s : specs_) {
        if (s.kind == LayerKind::Dropout && s.dropout_rate > 0.0f) {
          throw std::invalid_argument("training-mode dropout needs a random generator");
        }
      }
    }
    return run(batch, &trace, mode, rng);
  }

  // Backpropagates `grad_logits` (gradient w.r.t. the final layer's
  // pre-activation output) and accumulates parameter gradients into `grads`.
  void backward(const ForwardTrace<T>& trace, const BasicTensor<T>& grad_logits,
                Gradients<T>* grads, BasicTensor<T>* grad_input = nullptr) const {
    if (grad_logits.shape() != trace.logits.shape()) {
      throw std::invalid_argument("gradient shape " + shape_string(grad_logits.shape()) +
                                  " does not match logits " +
                                  shape_string(trace.logits.shape()));
    }
    const std::size_t last = specs_.size() - 1;
    BasicTensor<T> g = grad_logits;
    std::size_t param_index = 2 * count_param_layers();
    std::size_t l = specs_.size();
    while (l-- > 0) {
      const LayerSpec& spec = specs_[l];
      if (spec.kind == LayerKind::MaxPool2D && l > 0 && fused(l - 1)) {
        const std::size_t conv = l - 1;
        const bool need_input = conv > 0 || grad_input != nullptr;
        param_index -= 2;
        auto [gw, gb] = grad_slots(grads, param_index, conv);
        const BasicTensor<T>& in = trace.inputs[conv];
        const Shape& conv_shape = trace.shapes[conv + 1];
        const std::size_t n_img = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3);
        const std::size_t ch = conv_shape[1], cw = conv_shape[2], cc = conv_shape[3];
        const std::size_t pooled = (ch / 2) * (cw / 2) * cc;
        BasicTensor<T> gin;
        if (need_input) gin = BasicTensor<T>(in.shape());
        auto& conv_grad = detail::scratch_b<T>();
        conv_grad.resize(ch * cw * cc);
        for (std::size_t n = 0; n < n_img; ++n) {
          std::fill(conv_grad.begin(), conv_grad.end(), T{0});
          detail::maxpool_backward_image(g.data() + n * pooled,
                                         trace.masks[l].data() + n * pooled, ch, cw, cc,
                                         conv_grad.data());
          detail::conv2d_backward_image(in.data() + n * h * w * c, h, w, c, weights_[conv],
                                        conv_grad.data(), gw, gb,
                                        need_input ? gin.data() + n * h * w * c : nullptr);
        }
        g = std::move(gin);
        l = conv;
        if (!need_input) return;
        continue;
      }
      const bool need_input = l > 0 || grad_input != nullptr;
      if (l != last && spec.activation == Activation::ReLU) {
        const auto& mask = trace.masks[l];
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (!mask[i]) g[i] = T{0};
        }
      }
      switch (spec.kind) {
        case LayerKind::Conv2D:
        case LayerKind::Dense: {
          param_index -= 2;
          auto [gw, gb] = grad_slots(grads, param_index, l);
          BasicTensor<T> gin;
          if (spec.kind == LayerKind::Conv2D) {
            conv2d_backward(trace.inputs[l], weights_[l], g, gw, gb,
                            need_input ? &gin : nullptr);
          } else {
            dense_backward(trace.inputs[l], weights_[l], g, gw, gb,
                           need_input ? &gin : nullptr);
          }
          g = std::move(gin);
          break;
        }
        case LayerKind::MaxPool2D:
          g = maxpool2d_backward(trace.shapes[l], trace.masks[l], g);
          break;
        case LayerKind::Dropout:
          if (!trace.masks[l].empty()) {
            const T scale = T{1} / (T{1} - static_cast<T>(spec.dropout_rate));
            for (std::size_t i = 0; i < g.size(); ++i) {
              g[i] = trace.masks[l][i] ? g[i] * scale : T{0};
            }
          }
          break;
        case LayerKind::Flatten:
          g.reshape(trace.shapes[l]);
          break;
      }
      if (!need_input) return;
    }
    if (grad_input) *grad_input = std::move(g);
  }

 private:
  static Shape next_shape(const Shape& s, const LayerSpec& spec) {
    switch (spec.kind) {
      case LayerKind::Conv2D:
        if (s[1] < spec.kernel_h || s[2] < spec.kernel_w) {
          throw std::invalid_argument("Conv2D input " + shape_string(s) +
                                      " smaller than kernel");
        }
        return {s[0], s[1] - spec.kernel_h + 1, s[2] - spec.kernel_w + 1, spec.filters};
      case LayerKind::MaxPool2D:
        if (s.size() != 4 || s[1] < 2 || s[2] < 2) {
          throw std::invalid_argument("MaxPooling2D input " + shape_string(s) +
                                      " too small");
        }
        return {s[0], s[1] / 2, s[2] / 2, s[3]};
      case LayerKind::Dropout: return s;
      case LayerKind::Flatten: return {s[0], shape_product(s) / s[0]};
      case LayerKind::Dense: return {s[0], spec.filters};
    }
    return s;
  }

  std::size_t count_param_layers() const {
    std::size_t n = 0;
    for (const auto& s : specs_) n += s.has_parameters() ? 1 : 0;
    return n;
  }

  void check_input(const BasicTensor<T>& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != input_shape_[0] ||
        batch.dim(2) != input_shape_[1] || batch.dim(3) != input_shape_[2]) {
      throw std::invalid_argument("network input " + shape_string(batch.shape()) +
                                  " does not match (B, " +
                                  shape_string(input_shape_).substr(1));
    }
  }

  // A Conv2D directly followed by MaxPool2D runs image by image so the full
  // convolution output is never materialised.
  bool fused(std::size_t l) const {
    return specs_[l].kind == LayerKind::Conv2D && l + 1 < specs_.size() &&
           specs_[l + 1].kind == LayerKind::MaxPool2D &&
           specs_[l].activation != Activation::Softmax;
  }

  std::pair<BasicTensor<T>*, BasicTensor<T>*> grad_slots(Gradients<T>* grads,
                                                         std::size_t param_index,
                                                         std::size_t layer) const {
    (void)layer;
    if (grads) return {&grads->tensors[param_index], &grads->tensors[param_index + 1]};
    return {nullptr, nullptr};
  }

  BasicTensor<T> run(const BasicTensor<T>& batch, ForwardTrace<T>* trace, Mode mode,
                     std::mt19937_64* rng) const {
    check_input(batch);
    const std::size_t count = specs_.size();
    if (trace) {
      trace->shapes.assign(1, batch.shape());
      trace->inputs.assign(count, {});
      trace->masks.assign(count, {});
    }
    BasicTensor<T> x = batch;
    for (std::size_t l = 0; l < count; ++l) {
      const LayerSpec& spec = specs_[l];
      const bool is_last = l + 1 == count;
      if (fused(l)) {
        const BasicTensor<T>* in = &x;
        if (trace) {
          trace->inputs[l] = std::move(x);
          in = &trace->inputs[l];
        }
        const std::size_t n_img = in->dim(0), h = in->dim(1), w = in->dim(2), c = in->dim(3);
        const std::size_t ch = h - spec.kernel_h + 1, cw = w - spec.kernel_w + 1,
                          cc = spec.filters;
        BasicTensor<T> pooled({n_img, ch / 2, cw / 2, cc});
        const std::size_t per_out = (ch / 2) * (cw / 2) * cc;
        std::uint8_t* codes = nullptr;
        if (trace) {
          trace->masks[l + 1].resize(pooled.size());
          codes = trace->masks[l + 1].data();
        }
        auto& conv_out = detail::scratch_b<T>();
        conv_out.resize(ch * cw * cc);
        for (std::size_t n = 0; n < n_img; ++n) {
          detail::conv2d_image(in->data() + n * h * w * c, h, w, c, weights_[l], biases_[l],
                               spec.activation, conv_out.data());
          detail::maxpool_image(conv_out.data(), ch, cw, cc, pooled.data() + n * per_out,
                                codes ? codes + n * per_out : nullptr,
                                spec.activation == Activation::ReLU);
        }
        if (trace) {
          trace->shapes.push_back({n_img, ch, cw, cc});
          trace->shapes.push_back(pooled.shape());
          if (l + 2 == count) trace->logits = pooled;
        }
        x = std::move(pooled);
        ++l;
        continue;
      }
      switch (spec.kind) {
        case LayerKind::Conv2D:
        case LayerKind::Dense: {
          const BasicTensor<T>* in = &x;
          if (trace) {
            trace->inputs[l] = std::move(x);
            in = &trace->inputs[l];
          }
          BasicTensor<T> y = spec.kind == LayerKind::Conv2D
                                 ? conv2d(*in, weights_[l], biases_[l], Activation::None)
                                 : dense(*in, weights_[l], biases_[l], Activation::None);
          if (trace && is_last) trace->logits = y;
          if (trace && !is_last && spec.activation == Activation::ReLU) {
            auto& mask = trace->masks[l];
            mask.resize(y.size());
            for (std::size_t i = 0; i < y.size(); ++i) mask[i] = y[i] > T{0};
          }
          apply_activation(y, spec.activation);
          x = std::move(y);
          break;
        }
        case LayerKind::MaxPool2D: {
          auto y = maxpool2d(x, trace ? &trace->masks[l] : nullptr);
          if (trace && is_last) trace->logits = y;
          x = std::move(y);
          break;
        }
        case LayerKind::Dropout:
          if (mode == Mode::Training && spec.dropout_rate > 0.0f) {
            // Each 64-bit draw supplies two 32-bit uniforms.
            const auto threshold = static_cast<std::uint64_t>(
                std::llround(static_cast<double>(spec.dropout_rate) * 4294967296.0));
            const T scale = T{1} / (T{1} - static_cast<T>(spec.dropout_rate));
            std::vector<std::uint8_t> local;
            auto& keep = trace ? trace->masks[l] : local;
            keep.resize(x.size());
            std::uint64_t bits = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
              if ((i & 1) == 0) bits = (*rng)();
              const std::uint64_t u = (i & 1) ? (bits >> 32) : (bits & 0xffffffffu);
              keep[i] = u >= threshold;
              x[i] = keep[i] ? x[i] * scale : T{0};
            }
          }
          if (trace && is_last) trace->logits = x;
          break;
        case LayerKind::Flatten:
          x.reshape({x.dim(0), x.size() / x.dim(0)});
          if (trace && is_last) trace->logits = x;
          break;
      }
      if (trace) trace->shapes.push_back(x.shape());
    }
    return x;
  }

  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<BasicTensor<T>> weights_;  // empty for parameter-free layers
  std::vector<BasicTensor<T>> biases_;
};

}  // namespace lfa
