#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfa/adam.hpp"
#include "lfa/image.hpp"
#include "lfa/labels.hpp"
#include "lfa/metrics.hpp"
#include "lfa/model_io.hpp"
#include "lfa/network.hpp"
#include "lfa/ops.hpp"

namespace lfa {

inline constexpr std::size_t kClassifierInput = 128;

inline std::vector<LayerSpec> classifier_layers() {
  return {LayerSpec::conv(128), LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
          LayerSpec::conv(128), LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
          LayerSpec::conv(64),  LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
          LayerSpec::conv(64),  LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
          LayerSpec::conv(32),  LayerSpec::maxpool(), LayerSpec::flatten(),
          LayerSpec::dropout(0.2f), LayerSpec::dense(16, Activation::ReLU),
          LayerSpec::dense(3, Activation::Softmax)};
}

inline Network<float> build_classifier_model(std::uint64_t seed,
                                              std::size_t input = kClassifierInput) {
  Network<float> net({input, input, 1}, classifier_layers());
  net.initialize(seed);
  return net;
}

// Grayscale, bilinear resize to size x size, scaled to [0, 1].
inline std::vector<float> preprocess(const Image& crop, std::size_t size = kClassifierInput) {
  if (crop.empty()) throw std::invalid_argument("preprocess: empty image");
  Plane g = resize_bilinear(to_grayscale(crop), size, size);
  for (auto& v : g.values) v = std::clamp(v / 255.0f, 0.0f, 1.0f);
  return std::move(g.values);
}

// Per-image zero mean, unit variance. Without it the mostly-white crops
// (mean ~0.85) leave the deep stack at chance for several epochs.
inline void standardize(std::vector<float>& x) {
  if (x.empty()) return;
  double sum = 0, sq = 0;
  for (float v : x) sum += v;
  const double mean = sum / static_cast<double>(x.size());
  for (float v : x) sq += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(sq / static_cast<double>(x.size())), 1.0 / 255.0);
  for (auto& v : x) v = static_cast<float>((v - mean) / sd);
}

// What the classifier actually consumes: preprocess, then standardize.
inline std::vector<float> classifier_input(const Image& crop, std::size_t size = kClassifierInput) {
  auto x = preprocess(crop, size);
  standardize(x);
  return x;
}

struct Prediction {
  ClassLabel label = ClassLabel::Invalid;
  double confidence = 0;
  std::array<double, 3> class_probs{};  // by class ordinal
};

// Argmax with ties resolved to the lowest ordinal.
inline Prediction prediction_from_probs(const std::array<double, 3>& probs) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < 3; ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return {label_from_ordinal(static_cast<int>(best)), probs[best], probs};
}

inline std::string format_confidence(double confidence) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", confidence * 100.0);
  return buf;
}

// Preprocessed samples held in one contiguous buffer.
struct Dataset {
  std::size_t size = kClassifierInput;
  std::vector<float> pixels;  // n * size * size
  std::vector<ClassLabel> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t stride() const { return size * size; }
  void add(const std::vector<float>& x, ClassLabel y) {
    if (x.size() != stride()) throw std::invalid_argument("dataset: sample size mismatch");
    pixels.insert(pixels.end(), x.begin(), x.end());
    labels.push_back(y);
  }
  Tensor batch(const std::vector<std::size_t>& idx) const {
    Tensor t({idx.size(), size, size, 1});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(idx[i] * stride()), stride(),
                  t.data() + i * stride());
    }
    return t;
  }
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = 42;
  AdamConfig adam;
  std::array<double, 3> class_weights{1.0, 1.0, 1.0};  // by ordinal
  // Optional early stop: halt once validation accuracy reaches this value.
  double stop_at_val_accuracy = 2.0;
  // Optional wall-clock cap in seconds (0 = none); checked between epochs.
  double time_budget_s = 0;

  void check() const {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw std::invalid_argument("split fractions must sum to 1");
    }
    if (train_fraction <= 0 || val_fraction < 0 || test_fraction < 0) {
      throw std::invalid_argument("split fractions must be non-negative");
    }
  }
};

using Batch = std::vector<std::size_t>;

struct Split {
  std::vector<Batch> train, val, test;
};

// Shuffles sample indices with the config seed, forms full batches (the
// trailing partial batch is dropped) and allocates floor(f * B) batches to
// validation and test; training takes the rest.
inline Split split_batches(std::size_t sample_count, const TrainConfig& cfg) {
  cfg.check();
  const std::size_t total = sample_count / cfg.batch_size;
  if (total < 3) throw std::invalid_argument("split_batches: fewer samples than 3 batches");
  std::vector<std::size_t> order(sample_count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * total + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(cfg.test_fraction * total + 1e-9));
  const std::size_t n_train = total - n_val - n_test;
  Split s;
  for (std::size_t b = 0; b < total; ++b) {
    Batch batch(order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                order.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
    if (b < n_train) s.train.push_back(std::move(batch));
    else if (b < n_train + n_val) s.val.push_back(std::move(batch));
    else s.test.push_back(std::move(batch));
  }
  return s;
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double seconds = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = -1;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss,
                    e.train_acc, e.val_loss, e.val_acc);
      os << buf;
    }
    return os.str();
  }
};

inline std::array<double, 3> probs_row(const Tensor& probs, std::size_t r) {
  return {probs.at(r, 0), probs.at(r, 1), probs.at(r, 2)};
}

struct BatchEval {
  double loss_sum = 0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

inline BatchEval evaluate_batches(const Network<float>& net, const Dataset& data,
                                  const std::vector<Batch>& batches) {
  BatchEval ev;
  for (const auto& b : batches) {
    const Tensor probs = net.infer(data.batch(b));
    std::vector<int> y;
    for (auto i : b) y.push_back(ordinal(data.labels[i]));
    ev.loss_sum += cross_entropy(probs, one_hot<float>(y, 3)) * static_cast<double>(b.size());
    for (std::size_t r = 0; r < b.size(); ++r) {
      ev.correct += prediction_from_probs(probs_row(probs, r)).label == data.labels[b[r]];
    }
    ev.count += b.size();
  }
  return ev;
}

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch Adam on the weighted mean cross-entropy. Training samples are
// re-batched every epoch from a seeded shuffle; the parameters of the epoch
// with the best validation accuracy (earliest on ties) are restored at the end.
inline TrainHistory train(Network<float>& net, const Dataset& data, const std::vector<Batch>& train_set,
                          const std::vector<Batch>& val_set, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {}) {
  cfg.check();
  if (train_set.empty()) throw std::invalid_argument("train: no training batches");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto params = net.parameters();
  AdamState<float> adam(params, cfg.adam);
  Gradients<float> grads = net.zero_gradients();
  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
  std::vector<std::size_t> pool;
  for (const auto& b : train_set) pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t bs = train_set.front().size();

  TrainHistory hist;
  std::vector<Tensor> best;
  for (auto* p : params) best.push_back(*p);
  ForwardTrace<float> trace;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    std::shuffle(pool.begin(), pool.end(), rng);
    EpochStats st;
    st.epoch = epoch;
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t off = 0; off + bs <= pool.size(); off += bs) {
      Batch b(pool.begin() + static_cast<std::ptrdiff_t>(off),
              pool.begin() + static_cast<std::ptrdiff_t>(off + bs));
      const Tensor x = data.batch(b);
      const Tensor probs = net.forward(x, trace, Mode::Training, &rng);
      Tensor dlogits(probs.shape());
      double batch_loss = 0;
      for (std::size_t r = 0; r < b.size(); ++r) {
        const int y = ordinal(data.labels[b[r]]);
        const double w = cfg.class_weights[static_cast<std::size_t>(y)];
        batch_loss += -w * std::log(std::max(static_cast<double>(probs.at(r, y)), 1e-12));
        for (std::size_t k = 0; k < 3; ++k) {
          const double target = static_cast<int>(k) == y ? 1.0 : 0.0;
          dlogits.at(r, k) = static_cast<float>(w * (probs.at(r, k) - target) / b.size());
        }
        correct += prediction_from_probs(probs_row(probs, r)).label == data.labels[b[r]];
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", offset " + std::to_string(off));
      }
      loss_sum += batch_loss;
      seen += b.size();
      grads.zero();
      net.backward(trace, dlogits, &grads);
      adam_step(params, grads, adam);
    }
    st.train_loss = loss_sum / static_cast<double>(seen);
    st.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (!val_set.empty()) {
      const BatchEval ev = evaluate_batches(net, data, val_set);
      st.val_loss = ev.loss_sum / static_cast<double>(ev.count);
      st.val_acc = static_cast<double>(ev.correct) / static_cast<double>(ev.count);
    } else {
      st.val_loss = st.train_loss;
      st.val_acc = st.train_acc;
    }
    st.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    hist.epochs.push_back(st);
    if (st.val_acc > hist.best_val_acc) {
      hist.best_val_acc = st.val_acc;
      hist.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = *params[i];
    }
    if (on_epoch) on_epoch(st);
    if (st.val_acc >= cfg.stop_at_val_accuracy) break;
    if (cfg.time_budget_s > 0 &&
        std::chrono::duration<double>(clock::now() - start).count() >= cfg.time_budget_s) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
  return hist;
}

inline std::vector<Prediction> predict_batch(const Network<float>& net, const Tensor& batch) {
  const Tensor probs = net.infer(batch);
  std::vector<Prediction> out;
  for (std::size_t r = 0; r < probs.dim(0); ++r) out.push_back(prediction_from_probs(probs_row(probs, r)));
  return out;
}

inline Prediction predict(const Network<float>& net, const Image& crop) {
  const std::size_t s = net.input_shape()[0];
  Tensor x({1, s, s, 1}, classifier_input(crop, s));
  return predict_batch(net, x).front();
}

struct ClassifierEvaluation {
  ConfusionMatrix cm;
  ClassMetrics metrics;
  std::vector<ClassLabel> truth;
  std::vector<Prediction> predictions;
  std::vector<std::size_t> indices;  // dataset index of each prediction
};

inline ClassifierEvaluation evaluate_classifier(const Network<float>& net, const Dataset& data,
                                                const std::vector<Batch>& test_set) {
  ClassifierEvaluation ev;
  for (const auto& b : test_set) {
    auto preds = predict_batch(net, data.batch(b));
    for (std::size_t r = 0; r < b.size(); ++r) {
      ev.truth.push_back(data.labels[b[r]]);
      ev.predictions.push_back(preds[r]);
      ev.indices.push_back(b[r]);
    }
  }
  if (ev.truth.empty()) throw std::invalid_argument("evaluate_classifier: empty test set");
  std::vector<ClassLabel> predicted;
  for (const auto& p : ev.predictions) predicted.push_back(p.label);
  ev.cm = confusion_matrix(ev.truth, predicted);
  ev.metrics = prf_scores(ev.cm);
  return ev;
}

}  // namespace lfa
