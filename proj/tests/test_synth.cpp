#include <gtest/gtest.h>

#include <filesystem>

#include "lfa/synth.hpp"

using namespace lfa;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lfa_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

CassetteParams upright() {
  CassetteParams p;
  p.control_intensity = 0.9;
  p.noise_sigma = 0;
  return p;
}

// Maps a membrane-local point to the canvas for the upright default cassette.
Point2 membrane_to_canvas(const CassetteParams& p, double u, double v) {
  return {p.center_x - p.body_w / 2 + p.membrane_x + u, p.center_y - p.body_h / 2 + p.membrane_y + v};
}

}  // namespace

TEST(ClassRule, FromIntensities) {
  EXPECT_EQ(class_from_intensities(1.0, 0.8), ClassLabel::Positive);
  EXPECT_EQ(class_from_intensities(0.9, 0.0), ClassLabel::Negative);
  EXPECT_EQ(class_from_intensities(0.0, 0.0), ClassLabel::Invalid);
  EXPECT_EQ(class_from_intensities(0.0, 0.9), ClassLabel::Invalid);
  EXPECT_EQ(class_from_intensities(kVisibleThreshold, kVisibleThreshold), ClassLabel::Positive);
  EXPECT_TRUE(is_faint(0.9, 0.1));
  EXPECT_FALSE(is_faint(0.9, 0.5));
}

TEST(Render, DeterministicAndLabelled) {
  CassetteParams p = upright();
  p.test_intensity = 0.8;
  p.rotation_deg = 7;
  p.noise_sigma = 4;
  p.seed = 17;
  const Sample a = render_sample(p), b = render_sample(p);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.truth.label, ClassLabel::Positive);
  EXPECT_EQ(a.image.width, 320u);
  EXPECT_EQ(a.image.height, 240u);
}

TEST(Render, UprightBoxEqualsConfiguredRectangle) {
  const CassetteParams p = upright();
  const Sample s = render_sample(p);
  const auto o = membrane_to_canvas(p, 0, 0);
  EXPECT_NEAR(s.truth.membrane_bbox.x, o.x, 1e-9);
  EXPECT_NEAR(s.truth.membrane_bbox.y, o.y, 1e-9);
  EXPECT_NEAR(s.truth.membrane_bbox.w, p.membrane_w, 1e-9);
  EXPECT_NEAR(s.truth.membrane_bbox.h, p.membrane_h, 1e-9);
}

TEST(Render, LinesDarkerThanMembrane) {
  CassetteParams p = upright();
  p.control_intensity = 1.0;
  p.test_intensity = 0.0;
  const Sample s = render_sample(p);
  const auto c = membrane_to_canvas(p, p.control_pos * p.membrane_w, p.membrane_h / 2);
  const auto t = membrane_to_canvas(p, p.test_pos * p.membrane_w, p.membrane_h / 2);
  auto lum = [&](Point2 q) {
    const auto* px = s.image.at(static_cast<std::size_t>(q.x), static_cast<std::size_t>(q.y));
    return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
  };
  EXPECT_LT(lum(c), lum(t) - 40);
}

TEST(Render, MembraneOutsideCanvasThrows) {
  CassetteParams p = upright();
  p.center_x = 5;
  EXPECT_THROW(render_sample(p), std::invalid_argument);
  p = upright();
  p.test_intensity = 1.5;
  EXPECT_THROW(render_sample(p), std::invalid_argument);
}

TEST(Render, BoxContainsLinesUnderRotationAndSkew) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    GeneratorRanges r;
    const auto label = label_from_ordinal(static_cast<int>(seed % 3));
    const CassetteParams p = draw_params(r, label, seed, seed % 4 == 0);
    const Sample s = render_sample(p);
    const CassetteProjection proj(p);
    const double mu0 = p.membrane_x - p.body_w / 2, mv0 = p.membrane_y - p.body_h / 2;
    for (const BBox& line : {s.truth.control_line, s.truth.test_line}) {
      for (double u : {line.x, line.right()}) {
        for (double v : {line.y, line.bottom()}) {
          const Point2 q = proj.forward(mu0 + u, mv0 + v);
          EXPECT_GE(q.x, s.truth.membrane_bbox.x - 1e-6);
          EXPECT_LE(q.x, s.truth.membrane_bbox.right() + 1e-6);
          EXPECT_GE(q.y, s.truth.membrane_bbox.y - 1e-6);
          EXPECT_LE(q.y, s.truth.membrane_bbox.bottom() + 1e-6);
        }
      }
    }
    EXPECT_EQ(class_from_intensities(s.truth.control_intensity, s.truth.test_intensity), s.truth.label);
    EXPECT_EQ(s.truth.label, label);
  }
}

TEST(Render, EdgeSamplesCrossBorderWithMembraneInside) {
  GeneratorRanges r;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const CassetteParams p = draw_params(r, ClassLabel::Negative, seed, true);
    const CassetteProjection proj(p);
    const double hw = p.body_w / 2, hh = p.body_h / 2;
    const BBox body = polygon_bounds({proj.forward(-hw, -hh), proj.forward(hw, -hh),
                                      proj.forward(hw, hh), proj.forward(-hw, hh)});
    const bool crosses = body.x < 0 || body.y < 0 || body.right() > p.canvas_w ||
                         body.bottom() > p.canvas_h;
    EXPECT_TRUE(crosses) << "seed " << seed;
    const BBox m = polygon_bounds(membrane_polygon(p));
    EXPECT_GE(m.x, 0.0);
    EXPECT_LE(m.right(), p.canvas_w);
  }
}

TEST(ClassCounts, LargestRemainder) {
  EXPECT_EQ(class_counts(100, {0.4, 0.4, 0.2}), (std::array<std::size_t, 3>{40, 40, 20}));
  const std::array<double, 3> reported_mix{1015.0 / 2568, 1389.0 / 2568, 164.0 / 2568};
  EXPECT_EQ(class_counts(2568, reported_mix), (std::array<std::size_t, 3>{1015, 1389, 164}));
  EXPECT_EQ(class_counts(10, {1.0 / 3, 1.0 / 3, 1.0 / 3}), (std::array<std::size_t, 3>{4, 3, 3}));
  EXPECT_THROW(class_counts(10, {0.5, 0.5, 0.5}), std::invalid_argument);
}

TEST(Ranges, InfeasibleRejected) {
  GeneratorRanges r;
  r.visible_min = 0.05;  // below the visibility threshold
  EXPECT_THROW(r.check(), std::invalid_argument);
  r = GeneratorRanges{};
  r.absent_max = 0.5;
  EXPECT_THROW(r.check(), std::invalid_argument);
}

TEST(Corpus, ManifestMatchesMixAndIsDeterministic) {
  CorpusSpec spec;
  spec.n = 10;
  spec.mix = {0.4, 0.4, 0.2};
  spec.seed = 3;
  spec.ranges.edge_fraction = 0.2;
  const auto d1 = scratch_dir("corpus1"), d2 = scratch_dir("corpus2");
  const auto recs = generate_corpus(spec, d1);
  generate_corpus(spec, d2);
  EXPECT_EQ(read_file_bytes(d1 / "manifest.jsonl"), read_file_bytes(d2 / "manifest.jsonl"));
  std::array<int, 3> counts{};
  std::size_t edges = 0;
  for (const auto& r : recs) {
    ++counts[static_cast<std::size_t>(ordinal(r.label))];
    edges += r.edge;
    EXPECT_EQ(read_file_bytes(d1 / r.path), read_file_bytes(d2 / r.path));
    EXPECT_EQ(class_from_intensities(r.control_intensity, r.test_intensity), r.label);
  }
  EXPECT_EQ(counts, (std::array<int, 3>{4, 4, 2}));
  EXPECT_EQ(edges, 2u);

  const auto back = read_manifest(d1 / "manifest.jsonl");
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].params, recs[i].params);
    EXPECT_EQ(back[i].bbox.x, recs[i].bbox.x);
    EXPECT_EQ(back[i].bbox.w, recs[i].bbox.w);
    // the stored params regenerate the stored image
    EXPECT_EQ(encode_png(render_sample(back[i].params).image), read_file_bytes(d1 / back[i].path));
  }
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Corpus, IntegerBoxCoversExactBox) {
  CorpusSpec spec;
  spec.n = 12;
  spec.seed = 9;
  for (const auto& pl : plan_corpus(spec)) {
    const auto p = draw_params(spec.ranges, pl.label, pl.seed, pl.edge);
    const auto s = render_sample(p);
    const auto r = make_record(p, s.truth, pl.edge, "x.png");
    EXPECT_LE(r.bbox.x, r.bbox_exact.x);
    EXPECT_LE(r.bbox.y, r.bbox_exact.y);
    EXPECT_GE(static_cast<double>(r.bbox.x + r.bbox.w), std::min(r.bbox_exact.right(), 320.0) - 1e-9);
    EXPECT_GE(static_cast<double>(r.bbox.y + r.bbox.h), std::min(r.bbox_exact.bottom(), 240.0) - 1e-9);
  }
}

TEST(Corpus, InvalidTestOnlyVariant) {
  GeneratorRanges r;
  r.invalid_test_only = true;
  const auto p = draw_params(r, ClassLabel::Invalid, 5, false);
  EXPECT_LT(p.control_intensity, kVisibleThreshold);
  EXPECT_GE(p.test_intensity, kVisibleThreshold);
  EXPECT_EQ(render_sample(p).truth.label, ClassLabel::Invalid);
}

TEST(BandMask, CoversLineOnUprightCrop) {
  CassetteParams p = upright();
  const Sample s = render_sample(p);
  const PixelRect rect = pixel_rect(s.truth.membrane_bbox, 320, 240);
  const auto mask = band_mask(p, rect, s.truth.control_line, 128, 128);
  std::size_t on = 0;
  for (auto m : mask) on += m;
  // band share of the crop ~ line_width / membrane_w
  const double share = static_cast<double>(on) / mask.size();
  EXPECT_NEAR(share, p.line_width / p.membrane_w, 0.02);
}
