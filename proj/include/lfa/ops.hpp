#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfa/tensor.hpp"

namespace lfa {

enum class Activation : std::uint8_t { None = 0, ReLU = 1, Softmax = 2 };

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// Rows of `col` are output positions, columns are (di, dj, c) triples in the
// same order as the kh x kw x Cin x Cout weight layout.
template <typename T>
void im2col(const T* image, std::size_t h, std::size_t w, std::size_t c,
            std::size_t kh, std::size_t kw, T* col) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const std::size_t row_len = kh * kw * c;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      T* dst = col + (i * ow + j) * row_len;
      for (std::size_t di = 0; di < kh; ++di) {
        const T* src = image + ((i + di) * w + j) * c;
        std::copy(src, src + kw * c, dst);
        dst += kw * c;
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t h, std::size_t w, std::size_t c,
                std::size_t kh, std::size_t kw, T* image) {
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  const std::size_t row_len = kh * kw * c;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      const T* src = col + (i * ow + j) * row_len;
      for (std::size_t di = 0; di < kh; ++di) {
        T* dst = image + ((i + di) * w + j) * c;
        for (std::size_t k = 0; k < kw * c; ++k) dst[k] += src[k];
        src += kw * c;
      }
    }
  }
}

// out[j] += sum_i g[i, j] in a fixed order. Eigen's colwise reduction peels
// by buffer address, which makes the rounding depend on malloc placement.
template <typename T>
void add_column_sums(const T* g, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = g + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j];
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

}  // namespace detail

template <typename T>
void relu_inplace(BasicTensor<T>& t) {
  for (auto& v : t.values()) v = v > T{0} ? v : T{0};
}

// Row-wise softmax over the last axis with max subtraction.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  detail::require(logits.rank() == 2, "softmax expects a (B, K) tensor, got " +
                                          shape_string(logits.shape()));
  BasicTensor<T> out(logits.shape());
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * k;
    T* p = out.data() + r * k;
    const T peak = *std::max_element(z, z + k);
    T total{0};
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = std::exp(z[i] - peak);
      total += p[i];
    }
    for (std::size_t i = 0; i < k; ++i) p[i] /= total;
  }
  return out;
}

template <typename T>
void apply_activation(BasicTensor<T>& t, Activation act) {
  switch (act) {
    case Activation::None: break;
    case Activation::ReLU: relu_inplace(t); break;
    case Activation::Softmax: t = softmax(t); break;
  }
}

namespace detail {

// Convolution of one H x W x C image into `out` (positions x Cout).
template <typename T>
void conv2d_image(const T* image, std::size_t h, std::size_t w, std::size_t c,
                  const BasicTensor<T>& weights, const BasicTensor<T>& bias, Activation act,
                  T* out) {
  const std::size_t kh = weights.dim(0), kw = weights.dim(1), cout = weights.dim(3);
  const std::size_t positions = (h - kh + 1) * (w - kw + 1), row_len = kh * kw * c;
  auto& col = scratch<T>();
  col.resize(positions * row_len);
  im2col(image, h, w, c, kh, kw, col.data());
  if (row_len <= 32) {
    // Packing overhead dominates a GEMM this shallow; accumulate directly.
    constexpr std::size_t kChunk = 16;
    for (std::size_t pos = 0; pos < positions; ++pos) {
      T* o = out + pos * cout;
      const T* x = col.data() + pos * row_len;
      std::size_t oc = 0;
      for (; oc + kChunk <= cout; oc += kChunk) {
        T acc[kChunk];
        for (std::size_t i = 0; i < kChunk; ++i) acc[i] = bias[oc + i];
        for (std::size_t k = 0; k < row_len; ++k) {
          const T xv = x[k];
          const T* wr = weights.data() + k * cout + oc;
          for (std::size_t i = 0; i < kChunk; ++i) acc[i] += xv * wr[i];
        }
        for (std::size_t i = 0; i < kChunk; ++i) o[oc + i] = acc[i];
      }
      for (; oc < cout; ++oc) {
        T acc = bias[oc];
        for (std::size_t k = 0; k < row_len; ++k) acc += x[k] * weights[k * cout + oc];
        o[oc] = acc;
      }
    }
  } else {
    ConstMatrixMap<T> cmat(col.data(), positions, row_len);
    ConstMatrixMap<T> wmat(weights.data(), row_len, cout);
    MatrixMap<T> omat(out, positions, cout);
    omat.noalias() = cmat * wmat;
    omat.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), cout);
  }
  if (act == Activation::ReLU) {
    for (T* v = out; v != out + positions * cout; ++v) *v = *v > T{0} ? *v : T{0};
  }
}

// Backward of conv2d_image given the gradient w.r.t. its pre-activation
// output. Accumulates weight/bias gradients; overwrites grad_image if given.
template <typename T>
void conv2d_backward_image(const T* image, std::size_t h, std::size_t w, std::size_t c,
                           const BasicTensor<T>& weights, const T* grad_out,
                           BasicTensor<T>* grad_weights, BasicTensor<T>* grad_bias,
                           T* grad_image) {
  const std::size_t kh = weights.dim(0), kw = weights.dim(1), cout = weights.dim(3);
  const std::size_t positions = (h - kh + 1) * (w - kw + 1), row_len = kh * kw * c;
  auto& col = scratch<T>();
  col.resize(positions * row_len);
  ConstMatrixMap<T> gout(grad_out, positions, cout);
  if (grad_bias) add_column_sums(grad_out, positions, cout, grad_bias->data());
  MatrixMap<T> cmat(col.data(), positions, row_len);
  if (grad_weights) {
    im2col(image, h, w, c, kh, kw, col.data());
    MatrixMap<T>(grad_weights->data(), row_len, cout).noalias() += cmat.transpose() * gout;
  }
  if (grad_image) {
    cmat.noalias() = gout * ConstMatrixMap<T>(weights.data(), row_len, cout).transpose();
    std::fill(grad_image, grad_image + h * w * c, T{0});
    col2im_add(col.data(), h, w, c, kh, kw, grad_image);
  }
}

// Pool code per output: bits 0-1 select the winning cell of the 2x2 window,
// bit 2 records that the gradient passes (the winner was not clamped by ReLU).
inline constexpr std::uint8_t kPoolPass = 4;

template <typename T>
void maxpool_image(const T* image, std::size_t h, std::size_t w, std::size_t c, T* out,
                   std::uint8_t* codes, bool relu_gate) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      const T* p00 = image + ((2 * i) * w + 2 * j) * c;
      const T* p01 = p00 + c;
      const T* p10 = p00 + w * c;
      const T* p11 = p10 + c;
      T* dst = out + (i * ow + j) * c;
      if (codes) {
        std::uint8_t* code = codes + (i * ow + j) * c;
        for (std::size_t k = 0; k < c; ++k) {
          const T top = std::max(p00[k], p01[k]);
          const T bottom = std::max(p10[k], p11[k]);
          const std::uint8_t top_arg = p01[k] > p00[k] ? 1 : 0;
          const std::uint8_t bottom_arg = p11[k] > p10[k] ? 3 : 2;
          const bool use_bottom = bottom > top;
          const T best = use_bottom ? bottom : top;
          dst[k] = best;
          const std::uint8_t pass = (!relu_gate || best > T{0}) ? kPoolPass : 0;
          code[k] = static_cast<std::uint8_t>((use_bottom ? bottom_arg : top_arg) | pass);
        }
      } else {
        for (std::size_t k = 0; k < c; ++k) {
          dst[k] = std::max(std::max(p00[k], p01[k]), std::max(p10[k], p11[k]));
        }
      }
    }
  }
}

// Scatters pooled gradients back to their window winners; `grad_image` must
// be zeroed by the caller.
template <typename T>
void maxpool_backward_image(const T* grad_out, const std::uint8_t* codes, std::size_t h,
                            std::size_t w, std::size_t c, T* grad_image) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      T* q[4];
      q[0] = grad_image + ((2 * i) * w + 2 * j) * c;
      q[1] = q[0] + c;
      q[2] = q[0] + w * c;
      q[3] = q[2] + c;
      const std::uint8_t* code = codes + (i * ow + j) * c;
      const T* g = grad_out + (i * ow + j) * c;
      for (std::size_t k = 0; k < c; ++k) {
        q[code[k] & 3][k] = (code[k] & kPoolPass) ? g[k] : T{0};
      }
    }
  }
}

}  // namespace detail

// Valid (unpadded) stride-1 convolution. input B x H x W x Cin, weights
// kh x kw x Cin x Cout, bias Cout.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                      const BasicTensor<T>& bias, Activation act = Activation::None) {
  detail::require(input.rank() == 4, "conv2d input must be B x H x W x C, got " +
                                         shape_string(input.shape()));
  detail::require(weights.rank() == 4, "conv2d weights must be kh x kw x Cin x Cout");
  const std::size_t b = input.dim(0), h = input.dim(1), w = input.dim(2),
                    c = input.dim(3);
  const std::size_t kh = weights.dim(0), kw = weights.dim(1),
                    cout = weights.dim(3);
  detail::require(weights.dim(2) == c,
                  "conv2d channel mismatch: input has " + std::to_string(c) +
                      " channels, weights expect " + std::to_string(weights.dim(2)));
  detail::require(bias.size() == cout, "conv2d bias length must equal Cout");
  detail::require(h >= kh && w >= kw, "conv2d input smaller than kernel");
  detail::require(act != Activation::Softmax, "conv2d does not support softmax");
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  BasicTensor<T> out({b, oh, ow, cout});
  for (std::size_t n = 0; n < b; ++n) {
    detail::conv2d_image(input.data() + n * h * w * c, h, w, c, weights, bias, act,
                         out.data() + n * oh * ow * cout);
  }
  return out;
}

// Gradients of a convolution given the gradient w.r.t. its pre-activation
// output. Weight and bias gradients are accumulated when non-null;
// grad_input (optional) is overwritten.
template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& grad_out, BasicTensor<T>* grad_weights,
                     BasicTensor<T>* grad_bias, BasicTensor<T>* grad_input) {
  const std::size_t b = input.dim(0), h = input.dim(1), w = input.dim(2),
                    c = input.dim(3);
  const std::size_t oh = h - weights.dim(0) + 1, ow = w - weights.dim(1) + 1;
  const std::size_t out_stride = oh * ow * weights.dim(3);
  if (grad_input) *grad_input = BasicTensor<T>(input.shape());
  for (std::size_t n = 0; n < b; ++n) {
    detail::conv2d_backward_image(input.data() + n * h * w * c, h, w, c, weights,
                                  grad_out.data() + n * out_stride, grad_weights, grad_bias,
                                  grad_input ? grad_input->data() + n * h * w * c : nullptr);
  }
}

// 2x2 max pooling, stride 2; a trailing odd row/column is dropped. When
// `argmax` is given it receives the winning window offset (0..3) per output.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input,
                         std::vector<std::uint8_t>* argmax = nullptr) {
  detail::require(input.rank() == 4, "maxpool2d input must be B x H x W x C");
  const std::size_t b = input.dim(0), h = input.dim(1), w = input.dim(2),
                    c = input.dim(3);
  detail::require(h >= 2 && w >= 2, "maxpool2d input must be at least 2 x 2");
  const std::size_t oh = h / 2, ow = w / 2;
  BasicTensor<T> out({b, oh, ow, c});
  if (argmax) argmax->resize(out.size());
  for (std::size_t n = 0; n < b; ++n) {
    detail::maxpool_image(input.data() + n * h * w * c, h, w, c,
                          out.data() + n * oh * ow * c,
                          argmax ? argmax->data() + n * oh * ow * c : nullptr, false);
  }
  if (argmax) {
    for (auto& code : *argmax) code &= 3;
  }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const Shape& input_shape,
                                  const std::vector<std::uint8_t>& argmax,
                                  const BasicTensor<T>& grad_out) {
  BasicTensor<T> grad_in(input_shape);
  const std::size_t b = input_shape[0], h = input_shape[1], w = input_shape[2],
                    c = input_shape[3];
  const std::size_t per_out = (h / 2) * (w / 2) * c;
  std::vector<std::uint8_t> codes(argmax.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    codes[i] = static_cast<std::uint8_t>(argmax[i] | detail::kPoolPass);
  }
  for (std::size_t n = 0; n < b; ++n) {
    detail::maxpool_backward_image(grad_out.data() + n * per_out, codes.data() + n * per_out,
                                   h, w, c, grad_in.data() + n * h * w * c);
  }
  return grad_in;
}

// Affine map B x N -> B x M followed by an activation.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias, Activation act = Activation::None) {
  detail::require(input.rank() == 2 && weights.rank() == 2,
                  "dense expects (B, N) input and (N, M) weights");
  const std::size_t b = input.dim(0), n = input.dim(1), m = weights.dim(1);
  detail::require(weights.dim(0) == n,
                  "dense dimension mismatch: input has " + std::to_string(n) +
                      " features, weights expect " + std::to_string(weights.dim(0)));
  detail::require(bias.size() == m, "dense bias length must equal M");
  BasicTensor<T> out({b, m});
  detail::ConstMatrixMap<T> x(input.data(), b, n);
  detail::ConstMatrixMap<T> wm(weights.data(), n, m);
  detail::MatrixMap<T> y(out.data(), b, m);
  y.noalias() = x * wm;
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data(), m);
  apply_activation(out, act);
  return out;
}

template <typename T>
void dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                    const BasicTensor<T>& grad_out, BasicTensor<T>* grad_weights,
                    BasicTensor<T>* grad_bias, BasicTensor<T>* grad_input) {
  const std::size_t b = input.dim(0), n = input.dim(1), m = weights.dim(1);
  detail::ConstMatrixMap<T> x(input.data(), b, n);
  detail::ConstMatrixMap<T> wm(weights.data(), n, m);
  detail::ConstMatrixMap<T> g(grad_out.data(), b, m);
  if (grad_weights) {
    detail::MatrixMap<T>(grad_weights->data(), n, m).noalias() += x.transpose() * g;
  }
  if (grad_bias) detail::add_column_sums(grad_out.data(), b, m, grad_bias->data());
  if (grad_input) {
    *grad_input = BasicTensor<T>(input.shape());
    detail::MatrixMap<T>(grad_input->data(), b, n).noalias() = g * wm.transpose();
  }
}

// Mean over the batch of -ln(p_true), with probabilities clamped at 1e-12.
template <typename T>
double cross_entropy(const BasicTensor<T>& probs, const BasicTensor<T>& onehot) {
  detail::require(probs.rank() == 2 && probs.shape() == onehot.shape(),
                  "cross_entropy expects equally shaped (B, K) tensors");
  const std::size_t b = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    int ones = 0;
    std::size_t truth = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const T v = onehot.at(r, i);
      if (v == T{1}) {
        ++ones;
        truth = i;
      } else if (v != T{0}) {
        ones = -1;
        break;
      }
    }
    detail::require(ones == 1, "malformed one-hot row " + std::to_string(r));
    total -= std::log(std::max(static_cast<double>(probs.at(r, truth)), 1e-12));
  }
  return total / static_cast<double>(b);
}

template <typename T>
BasicTensor<T> one_hot(const std::vector<int>& labels, std::size_t classes) {
  BasicTensor<T> out({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    detail::require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < classes,
                    "label out of range");
    out.at(r, static_cast<std::size_t>(labels[r])) = T{1};
  }
  return out;
}

}  // namespace lfa
