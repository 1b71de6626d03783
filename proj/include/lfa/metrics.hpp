#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfa/bbox.hpp"
#include "lfa/labels.hpp"

namespace lfa {

// Rows = true class, columns = predicted class, both in the display order
// (Invalid, Negative, Positive).
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, 3>, 3> counts{};

  static constexpr std::array<ClassLabel, 3> kOrder = {
      ClassLabel::Invalid, ClassLabel::Negative, ClassLabel::Positive};

  static std::size_t index(ClassLabel c) { return 2 - static_cast<std::size_t>(c); }

  std::uint64_t& operator()(ClassLabel truth, ClassLabel pred) {
    return counts[index(truth)][index(pred)];
  }
  std::uint64_t operator()(ClassLabel truth, ClassLabel pred) const {
    return counts[index(truth)][index(pred)];
  }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : counts) for (auto v : r) t += v;
    return t;
  }
  std::uint64_t trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(12) << "true\\pred";
    for (auto c : kOrder) os << std::right << std::setw(10) << to_string(c);
    os << '\n';
    for (std::size_t r = 0; r < 3; ++r) {
      os << std::left << std::setw(12) << to_string(kOrder[r]);
      for (std::size_t c = 0; c < 3; ++c) os << std::right << std::setw(10) << counts[r][c];
      os << '\n';
    }
    return os.str();
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(const std::vector<ClassLabel>& truth,
                                        const std::vector<ClassLabel>& predicted) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("confusion_matrix: label lists differ in length");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm(truth[i], predicted[i]);
  return cm;
}

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

struct ClassMetrics {
  std::array<PRF, 3> per_class;  // ConfusionMatrix::kOrder
  PRF macro;
  double accuracy = 0;

  const PRF& of(ClassLabel c) const { return per_class[ConfusionMatrix::index(c)]; }
};

inline double safe_ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

inline ClassMetrics prf_scores(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("prf_scores: empty confusion matrix");
  ClassMetrics m;
  for (std::size_t k = 0; k < 3; ++k) {
    std::uint64_t col = 0, row = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      col += cm.counts[j][k];
      row += cm.counts[k][j];
    }
    const double tp = static_cast<double>(cm.counts[k][k]);
    PRF& p = m.per_class[k];
    p.precision = safe_ratio(tp, static_cast<double>(col));
    p.recall = safe_ratio(tp, static_cast<double>(row));
    p.f1 = safe_ratio(2 * p.precision * p.recall, p.precision + p.recall);
    m.macro.precision += p.precision / 3;
    m.macro.recall += p.recall / 3;
    m.macro.f1 += p.f1 / 3;
  }
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return m;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm, const ClassMetrics& m) {
  nlohmann::json j;
  j["order"] = {"INVALID", "NEGATIVE", "POSITIVE"};
  j["confusion_matrix"] = cm.counts;
  j["accuracy"] = m.accuracy;
  for (std::size_t k = 0; k < 3; ++k) {
    std::string name = to_string(ConfusionMatrix::kOrder[k]);
    for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    j[name + "_precision"] = m.per_class[k].precision;
    j[name + "_recall"] = m.per_class[k].recall;
    j[name + "_f1"] = m.per_class[k].f1;
  }
  j["macro_precision"] = m.macro.precision;
  j["macro_recall"] = m.macro.recall;
  j["macro_f1"] = m.macro.f1;
  return j;
}

// ---------------------------------------------------------------- detection

struct RankedHit {
  double score = 0;
  bool true_positive = false;
};

struct PRCurve {
  std::vector<RankedHit> ranked;  // descending score
  std::size_t num_ground_truth = 0;
  std::vector<double> precision;  // cumulative, per rank
  std::vector<double> recall;
};

inline PRCurve make_pr_curve(std::vector<RankedHit> hits, std::size_t num_ground_truth) {
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RankedHit& a, const RankedHit& b) { return a.score > b.score; });
  PRCurve c;
  c.num_ground_truth = num_ground_truth;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i].true_positive;
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    c.recall.push_back(num_ground_truth ? static_cast<double>(tp) / num_ground_truth : 0.0);
  }
  c.ranked = std::move(hits);
  return c;
}

// 101-point interpolated AP: mean over r in {0, 0.01, ..., 1} of the best
// precision achieved at recall >= r (0 if never reached).
inline double average_precision(const PRCurve& c) {
  if (c.num_ground_truth == 0) {
    throw std::invalid_argument("average_precision: no ground-truth objects");
  }
  const std::size_t n = c.precision.size();
  std::vector<double> envelope(c.precision);
  for (std::size_t i = n; i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double sum = 0;
  std::size_t idx = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    while (idx < n && c.recall[idx] < r - 1e-12) ++idx;
    if (idx < n) sum += envelope[idx];
  }
  return sum / 101.0;
}

inline double mean_average_precision(const std::vector<double>& aps) {
  if (aps.empty()) throw std::invalid_argument("mean_average_precision: no APs");
  return std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
}

// Greedy per-image matching in descending score order; each ground-truth
// box absorbs at most one detection with IoU >= threshold.
inline PRCurve match_detections(const std::vector<std::vector<Detection>>& detections,
                                const std::vector<std::vector<BBox>>& ground_truth,
                                double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("match_detections: image count mismatch");
  }
  std::vector<RankedHit> hits;
  std::size_t num_gt = 0;
  for (std::size_t img = 0; img < detections.size(); ++img) {
    const auto& gts = ground_truth[img];
    num_gt += gts.size();
    std::vector<Detection> dets = detections[img];
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false);
    for (const auto& d : dets) {
      double best = iou_threshold;
      std::ptrdiff_t best_j = -1;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (used[j]) continue;
        const double v = iou(d.box, gts[j]);
        if (v >= best) {
          best = v;
          best_j = static_cast<std::ptrdiff_t>(j);
        }
      }
      if (best_j >= 0) used[static_cast<std::size_t>(best_j)] = true;
      hits.push_back({d.score, best_j >= 0});
    }
  }
  return make_pr_curve(std::move(hits), num_gt);
}

inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back(0.50 + 0.05 * k);
  return t;
}

struct DetectionReport {
  double precision = 0;
  double recall = 0;
  double map50 = 0;
  double map50_95 = 0;
  std::vector<double> per_image_iou;  // best IoU of the top detection, 0 if none
};

// Precision / recall at a score threshold and IoU 0.5; AP integrates all
// detections regardless of the threshold.
inline DetectionReport detection_report(const std::vector<std::vector<Detection>>& detections,
                                        const std::vector<std::vector<BBox>>& ground_truth,
                                        double score_threshold = 0.5) {
  if (detections.empty()) throw std::invalid_argument("detection_report: empty set");
  DetectionReport r;
  std::vector<double> aps;
  for (double t : coco_iou_thresholds()) {
    aps.push_back(average_precision(match_detections(detections, ground_truth, t)));
  }
  r.map50 = aps.front();
  r.map50_95 = mean_average_precision(aps);

  std::vector<std::vector<Detection>> kept(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    for (const auto& d : detections[i]) {
      if (d.score >= score_threshold) kept[i].push_back(d);
    }
  }
  PRCurve c = match_detections(kept, ground_truth, 0.5);
  std::size_t tp = 0;
  for (const auto& h : c.ranked) tp += h.true_positive;
  r.precision = safe_ratio(static_cast<double>(tp), static_cast<double>(c.ranked.size()));
  r.recall = safe_ratio(static_cast<double>(tp), static_cast<double>(c.num_ground_truth));

  for (std::size_t i = 0; i < detections.size(); ++i) {
    double best = 0;
    const Detection* top = nullptr;
    for (const auto& d : detections[i]) {
      if (!top || d.score > top->score) top = &d;
    }
    if (top) {
      for (const auto& g : ground_truth[i]) best = std::max(best, iou(top->box, g));
    }
    r.per_image_iou.push_back(best);
  }
  return r;
}

inline nlohmann::json to_json(const DetectionReport& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"map50", r.map50},
          {"map50_95", r.map50_95},
          {"per_image_iou", r.per_image_iou}};
}

}  // namespace lfa
