#include <gtest/gtest.h>

#include <set>

#include "lfa/classifier.hpp"
#include "lfa/model_io.hpp"

using namespace lfa;

namespace {

// Per-layer parameter arithmetic, independent of Network.
std::size_t classifier_parameter_oracle() {
  auto conv = [](std::size_t cin, std::size_t cout) { return 3 * 3 * cin * cout + cout; };
  auto dense = [](std::size_t n, std::size_t m) { return n * m + m; };
  return conv(1, 128) + conv(128, 128) + conv(128, 64) + conv(64, 64) + conv(64, 32) +
         dense(2 * 2 * 32, 16) + dense(16, 3);
}

}  // namespace

TEST(ClassifierArchitecture, OutputShapesForBatch32) {
  const auto net = build_classifier_model(1);
  const std::vector<Shape> expected{
      {32, 126, 126, 128}, {32, 63, 63, 128}, {32, 63, 63, 128}, {32, 61, 61, 128},
      {32, 30, 30, 128},   {32, 30, 30, 128}, {32, 28, 28, 64},  {32, 14, 14, 64},
      {32, 14, 14, 64},    {32, 12, 12, 64},  {32, 6, 6, 64},    {32, 6, 6, 64},
      {32, 4, 4, 32},      {32, 2, 2, 32},    {32, 128},         {32, 128},
      {32, 16},            {32, 3}};
  EXPECT_EQ(net.output_shapes(32), expected);
}

TEST(ClassifierArchitecture, LayerSequenceAndDropoutRates) {
  const auto layers = classifier_layers();
  ASSERT_EQ(layers.size(), 18u);
  std::size_t drops = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Dropout) {
      EXPECT_FLOAT_EQ(l.dropout_rate, 0.2f);
      ++drops;
    }
    if (l.kind == LayerKind::Conv2D) {
      EXPECT_EQ(l.kernel_h, 3u);
      EXPECT_EQ(l.kernel_w, 3u);
    }
  }
  EXPECT_EQ(drops, 5u);
  EXPECT_EQ(layers.back().activation, Activation::Softmax);
}

TEST(ClassifierArchitecture, ParameterCountMatchesOracle) {
  EXPECT_EQ(classifier_parameter_oracle(), 280163u);
  EXPECT_EQ(build_classifier_model(1).parameter_count(), classifier_parameter_oracle());
}

TEST(ClassifierArchitecture, ForwardRowsSumToOne) {
  const auto net = build_classifier_model(2);
  Tensor x({2, 128, 128, 1});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> d(0, 1);
  for (auto& v : x.values()) v = d(rng);
  const Tensor p = net.infer(x);
  ASSERT_EQ(p.shape(), (Shape{2, 3}));
  for (std::size_t r = 0; r < 2; ++r) EXPECT_NEAR(p.at(r, 0) + p.at(r, 1) + p.at(r, 2), 1.0, 1e-6);
}

TEST(Preprocess, ConstantWhiteCrop) {
  Image white(300, 900, 255);
  auto x = preprocess(white);
  ASSERT_EQ(x.size(), 128u * 128u);
  for (float v : x) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(Preprocess, LuminanceWeights) {
  Image red(1, 1);
  red.at(0, 0)[0] = 255;
  EXPECT_NEAR(to_grayscale(red).values[0] / 255.0f, 0.299f, 1e-6);
  EXPECT_NEAR(preprocess(red, 4)[0], 0.299f, 1e-6);
}

TEST(Preprocess, BilinearCheckerboardAveragesToHalf) {
  Plane p{2, 2, {0, 1, 1, 0}};
  EXPECT_NEAR(resize_bilinear(p, 1, 1).values[0], 0.5f, 1e-7);
}

TEST(Preprocess, StandardizeZeroMeanUnitVariance) {
  std::vector<float> x{0.2f, 0.4f, 0.6f, 0.8f};
  standardize(x);
  double m = 0, v = 0;
  for (float f : x) m += f;
  for (float f : x) v += f * f;
  EXPECT_NEAR(m / 4, 0.0, 1e-6);
  EXPECT_NEAR(v / 4, 1.0, 1e-5);
  // flat crops map to zeros rather than dividing by zero
  auto flat = classifier_input(Image(40, 40, 200), 8);
  for (float f : flat) EXPECT_FLOAT_EQ(f, 0.0f);
}

TEST(Preprocess, EmptyImageThrows) { EXPECT_THROW(preprocess(Image{}), std::invalid_argument); }

TEST(Split, FloorRuleAndPartition) {
  TrainConfig cfg;
  auto s = split_batches(2560, cfg);
  EXPECT_EQ(s.train.size(), 56u);
  EXPECT_EQ(s.val.size(), 12u);
  EXPECT_EQ(s.test.size(), 12u);
  std::set<std::size_t> seen;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& b : *part) {
      EXPECT_EQ(b.size(), 32u);
      for (auto i : b) EXPECT_TRUE(seen.insert(i).second);
    }
  }
  EXPECT_EQ(seen.size(), 2560u);
}

TEST(Split, TrailingPartialBatchDroppedAndTooFewRejected) {
  TrainConfig cfg;
  auto s = split_batches(32 * 10 + 7, cfg);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 10u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_THROW(split_batches(95, cfg), std::invalid_argument);
  cfg.val_fraction = 0.2;
  EXPECT_THROW(split_batches(2560, cfg), std::invalid_argument);
}

TEST(Predict, ArgmaxAndTieBreak) {
  auto p = prediction_from_probs({0.1, 0.8, 0.1});
  EXPECT_EQ(p.label, ClassLabel::Negative);
  EXPECT_DOUBLE_EQ(p.confidence, 0.8);
  EXPECT_EQ(prediction_from_probs({0.4, 0.4, 0.2}).label, ClassLabel::Positive);
  EXPECT_EQ(format_confidence(0.99994), "99.99%");
}

TEST(Predict, ConfidenceIsMaxProbability) {
  const auto net = build_classifier_model(4);
  Image img(90, 30, 180);
  auto p = predict(net, img);
  const double mx = *std::max_element(p.class_probs.begin(), p.class_probs.end());
  EXPECT_DOUBLE_EQ(p.confidence, mx);
  EXPECT_GE(p.confidence, 1.0 / 3.0 - 1e-9);
  EXPECT_NEAR(p.class_probs[0] + p.class_probs[1] + p.class_probs[2], 1.0, 1e-6);
}

TEST(Predict, SaveLoadIsBitwiseIdentical) {
  const auto net = build_classifier_model(5);
  Image img(64, 20, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
  const auto before = predict(net, img);
  auto loaded = decode_model(encode_model(net, ModelKind::Classifier)).network;
  const auto after = predict(loaded, img);
  EXPECT_EQ(before.class_probs, after.class_probs);
}

namespace {

// 4x4 toy images: class decided by which quadrant is bright.
Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.size = 8;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> noise(0, 0.1f);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<int>(i % 3);
    std::vector<float> x(64);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t xx = 0; xx < 8; ++xx) {
        const bool on = (c == 0 && xx < 4 && y < 4) || (c == 1 && xx >= 4 && y < 4) || (c == 2 && y >= 4);
        x[y * 8 + xx] = (on ? 0.9f : 0.1f) + noise(rng);
      }
    ds.add(x, label_from_ordinal(c));
  }
  return ds;
}

Network<float> toy_network(std::uint64_t seed) {
  Network<float> net({8, 8, 1}, {LayerSpec::conv(4), LayerSpec::maxpool(), LayerSpec::dropout(0.2f),
                                 LayerSpec::flatten(), LayerSpec::dense(8, Activation::ReLU),
                                 LayerSpec::dense(3, Activation::Softmax)});
  net.initialize(seed);
  return net;
}

}  // namespace

TEST(Train, DeterministicHistoryAndWeights) {
  auto ds = toy_dataset(96, 1);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  auto split = split_batches(ds.count(), cfg);
  auto a = toy_network(2), b = toy_network(2);
  auto ha = train(a, ds, split.train, split.val, cfg);
  auto hb = train(b, ds, split.train, split.val, cfg);
  ASSERT_EQ(ha.epochs.size(), hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) {
    EXPECT_EQ(ha.epochs[i].train_loss, hb.epochs[i].train_loss);
    EXPECT_EQ(ha.epochs[i].val_acc, hb.epochs[i].val_acc);
  }
  EXPECT_EQ(encode_model(a, ModelKind::Classifier), encode_model(b, ModelKind::Classifier));
}

TEST(Train, OverfitsSingleBatch) {
  auto ds = toy_dataset(32, 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.stop_at_val_accuracy = 1.0;
  std::vector<Batch> one{Batch(32)};
  std::iota(one[0].begin(), one[0].end(), 0);
  auto net = toy_network(4);
  auto h = train(net, ds, one, {}, cfg);
  EXPECT_DOUBLE_EQ(h.best_val_acc, 1.0);
  EXPECT_LE(h.epochs.size(), 200u);
}

TEST(Train, LossNonIncreasingOnSeparableData) {
  auto ds = toy_dataset(192, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  auto split = split_batches(ds.count(), cfg);
  auto net = toy_network(6);
  auto h = train(net, ds, split.train, split.val, cfg);
  for (std::size_t i = 1; i < h.epochs.size(); ++i) {
    EXPECT_LE(h.epochs[i].train_loss, h.epochs[i - 1].train_loss + 1e-9);
  }
}

TEST(Train, HistoryCsvHeader) {
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.75, 0.6, 0.7, 1.0});
  EXPECT_EQ(h.to_csv().substr(0, h.to_csv().find('\n')), "epoch,train_loss,train_acc,val_loss,val_acc");
}

TEST(Evaluate, PerfectAndEmpty) {
  auto ds = toy_dataset(96, 7);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.stop_at_val_accuracy = 1.0;
  auto split = split_batches(ds.count(), cfg);
  auto net = toy_network(8);
  train(net, ds, split.train, split.val, cfg);
  auto ev = evaluate_classifier(net, ds, split.test);
  EXPECT_EQ(ev.cm.total(), 8u);
  EXPECT_DOUBLE_EQ(ev.metrics.accuracy, 1.0);
  EXPECT_THROW(evaluate_classifier(net, ds, {}), std::invalid_argument);
}
