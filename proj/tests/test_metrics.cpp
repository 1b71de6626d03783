#include <gtest/gtest.h>

#include "lfa/bbox.hpp"
#include "lfa/metrics.hpp"

using namespace lfa;

namespace {

// Reference counts: rows true, columns predicted, order Invalid/Negative/Positive.
ConfusionMatrix reference_matrix() {
  ConfusionMatrix cm;
  cm.counts = {{{30, 0, 0}, {1, 222, 1}, {0, 2, 200}}};
  return cm;
}

}  // namespace

TEST(ConfusionMatrix, ReferenceCountsReproduceScores) {
  const auto m = prf_scores(reference_matrix());
  EXPECT_NEAR(m.accuracy, 0.9912, 2e-4);
  EXPECT_NEAR(m.of(ClassLabel::Invalid).precision, 0.968, 1e-3);
  EXPECT_NEAR(m.of(ClassLabel::Invalid).recall, 1.000, 1e-3);
  EXPECT_NEAR(m.of(ClassLabel::Negative).precision, 0.991, 1e-3);
  EXPECT_NEAR(m.of(ClassLabel::Negative).recall, 222.0 / 224.0, 1e-12);
  EXPECT_NEAR(m.of(ClassLabel::Positive).precision, 0.995, 1e-3);
  EXPECT_NEAR(m.of(ClassLabel::Positive).recall, 0.990, 1e-3);
  EXPECT_NEAR(m.macro.precision, 0.985, 1e-3);
  EXPECT_NEAR(m.macro.recall, (1.0 + 222.0 / 224.0 + 200.0 / 202.0) / 3.0, 1e-12);
  EXPECT_NEAR(m.macro.f1, 0.990, 1e-3);
  EXPECT_EQ(reference_matrix().total(), 456u);
}

TEST(ConfusionMatrix, BuiltFromLabelLists) {
  using L = ClassLabel;
  std::vector<L> truth{L::Positive, L::Negative, L::Invalid, L::Negative};
  std::vector<L> pred{L::Positive, L::Invalid, L::Invalid, L::Negative};
  auto cm = confusion_matrix(truth, pred);
  EXPECT_EQ(cm(L::Negative, L::Invalid), 1u);
  EXPECT_EQ(cm(L::Positive, L::Positive), 1u);
  EXPECT_EQ(cm.trace(), 3u);
  EXPECT_THROW(confusion_matrix(truth, {L::Positive}), std::invalid_argument);
}

TEST(ConfusionMatrix, PerfectAndDegenerate) {
  using L = ClassLabel;
  auto m = prf_scores(confusion_matrix({L::Negative}, {L::Negative}));
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  // classes never seen score zero rather than dividing by zero
  EXPECT_DOUBLE_EQ(m.of(L::Positive).precision, 0.0);
  EXPECT_THROW(prf_scores(ConfusionMatrix{}), std::invalid_argument);
}

TEST(ConfusionMatrix, JsonCarriesOrderAndMacro) {
  auto j = to_json(reference_matrix(), prf_scores(reference_matrix()));
  EXPECT_EQ(j["order"][0], "INVALID");
  EXPECT_EQ(j["confusion_matrix"][1][0], 1);
  EXPECT_NEAR(j["macro_f1"].get<double>(), 0.990, 1e-3);
}

TEST(BBox, IoUOracles) {
  BBox a{0, 0, 2, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {5, 5, 1, 1}), 0.0);
  EXPECT_NEAR(iou(a, {1, 1, 2, 2}), 1.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(iou(a, {2, 0, 2, 2}), 0.0);  // shared edge only
  EXPECT_DOUBLE_EQ(iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(NMS, SuppressesOverlapsKeepsOrder) {
  std::vector<Detection> d{{{0, 0, 10, 10}, 0.6}, {{1, 1, 10, 10}, 0.9}, {{50, 50, 5, 5}, 0.7}};
  auto kept = nms(d, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.7);
  EXPECT_TRUE(nms({}, 0.5).empty());
  // IoU exactly at the threshold survives
  std::vector<Detection> edge{{{0, 0, 2, 2}, 0.9}, {{1, 1, 2, 2}, 0.8}};
  EXPECT_EQ(nms(edge, 1.0 / 7.0).size(), 2u);
}

TEST(AveragePrecision, PerfectRanking) {
  auto c = make_pr_curve({{0.9, true}, {0.8, true}}, 2);
  EXPECT_DOUBLE_EQ(average_precision(c), 1.0);
}

TEST(AveragePrecision, FalsePositiveFirst) {
  // precision envelope: 2/3 up to recall 1
  auto c = make_pr_curve({{0.9, false}, {0.8, true}, {0.7, true}}, 2);
  EXPECT_NEAR(average_precision(c), 2.0 / 3.0, 1e-12);
}

TEST(AveragePrecision, PartialRecall) {
  // recall 0.5 reached at precision 1; r in {0..0.5} -> 51 points
  auto c = make_pr_curve({{0.9, true}}, 2);
  EXPECT_NEAR(average_precision(c), 51.0 / 101.0, 1e-12);
  EXPECT_THROW(average_precision(make_pr_curve({}, 0)), std::invalid_argument);
  EXPECT_DOUBLE_EQ(average_precision(make_pr_curve({}, 3)), 0.0);
}

TEST(DetectionReport, ThresholdSweep) {
  BBox g{0, 0, 10, 10};
  BBox p{0, 0, 10, 8.2};  // IoU 0.82
  auto r = detection_report({{{p, 0.9}}}, {{g}});
  EXPECT_DOUBLE_EQ(r.map50, 1.0);
  // thresholds 0.50..0.80 match (7 of 10)
  EXPECT_NEAR(r.map50_95, 0.7, 1e-12);
  EXPECT_DOUBLE_EQ(r.precision, 1.0);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_NEAR(r.per_image_iou[0], 0.82, 1e-12);
  EXPECT_EQ(coco_iou_thresholds().size(), 10u);
}

TEST(DetectionReport, DuplicateIsFalsePositive) {
  BBox g{0, 0, 10, 10};
  auto c = match_detections({{{g, 0.9}, {g, 0.8}}}, {{g}}, 0.5);
  ASSERT_EQ(c.ranked.size(), 2u);
  EXPECT_TRUE(c.ranked[0].true_positive);
  EXPECT_FALSE(c.ranked[1].true_positive);
}
