#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "lfa/network.hpp"

namespace lfa {

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Central-difference check of an explicit gradient at `coordinates` of x.
inline double gradcheck(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> x, std::span<const double> gradient,
                        std::span<const std::size_t> coordinates, double h) {
  std::vector<double> probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t idx : coordinates) {
    const double saved = probe[idx];
    probe[idx] = saved + h;
    const double up = f(probe);
    probe[idx] = saved - h;
    const double down = f(probe);
    probe[idx] = saved;
    worst = std::max(worst, relative_error(gradient[idx], (up - down) / (2.0 * h)));
  }
  return worst;
}

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t kinks_skipped = 0;
};

// Compares backprop gradients of the mean cross-entropy with central finite
// differences at `coordinate_count` parameter coordinates drawn uniformly
// over all parameters. Dropout is disabled (inference-mode forward).
// A probe whose +h or -h pass flips a ReLU or max-pool decision straddles a
// kink, where the central difference does not estimate the derivative; such
// coordinates are counted in kinks_skipped and replaced by fresh draws.
template <typename T>
GradcheckResult gradcheck(Network<T>& net, const BasicTensor<T>& batch,
                          const BasicTensor<T>& onehot, std::size_t coordinate_count,
                          double h, std::uint64_t seed = 7) {
  ForwardTrace<T> trace;
  auto probs = net.forward(batch, trace, Mode::Inference);
  BasicTensor<T> dlogits = probs;
  const T inv_batch = T{1} / static_cast<T>(batch.dim(0));
  for (std::size_t i = 0; i < dlogits.size(); ++i) dlogits[i] = (probs[i] - onehot[i]) * inv_batch;
  auto grads = net.zero_gradients();
  net.backward(trace, dlogits, &grads);

  bool crossed = false;
  auto loss_of = [&]() {
    ForwardTrace<T> t;
    auto p = net.forward(batch, t, Mode::Inference);
    crossed = crossed || t.masks != trace.masks;
    return cross_entropy(p, onehot);
  };

  auto params = net.parameters();
  std::vector<std::size_t> offsets{0};
  for (const auto* p : params) offsets.push_back(offsets.back() + p->size());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, offsets.back() - 1);

  GradcheckResult result;
  const std::size_t max_draws = 20 * coordinate_count;
  for (std::size_t n = 0; result.coordinates_checked < coordinate_count && n < max_draws; ++n) {
    const std::size_t flat = pick(rng);
    const std::size_t which =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                 offsets.begin()) - 1;
    const std::size_t k = flat - offsets[which];
    T& slot = (*params[which])[k];
    const T saved = slot;
    crossed = false;
    slot = static_cast<T>(saved + h);
    const double up = loss_of();
    slot = static_cast<T>(saved - h);
    const double down = loss_of();
    slot = saved;
    if (crossed) {
      ++result.kinks_skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * h);
    result.max_relative_error = std::max(
        result.max_relative_error, relative_error(grads.tensors[which][k], numeric));
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace lfa
