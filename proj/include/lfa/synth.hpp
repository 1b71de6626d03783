#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "lfa/bbox.hpp"
#include "lfa/crop.hpp"
#include "lfa/image.hpp"
#include "lfa/labels.hpp"

namespace lfa {

// Line intensity at or above which a line counts as developed.
inline constexpr double kVisibleThreshold = 0.08;
// Visible lines at or below this intensity are flagged as faint.
inline constexpr double kFaintCeiling = 0.2;

struct RdtBrand {
  const char* name;
  const char* manufacturer;
  const char* location;
};

inline constexpr std::array<RdtBrand, 10> kRdtBrands = {{
    {"NG-Test IgG-IgM COVID-19", "NG-Biotech", "Guipry, France"},
    {"Anti-SARS-CoV-2 Rapid Test", "Autobio Diagnostic Co.", "Zhengzhou, China"},
    {"Novel Coronavirus 2019 (2019-nCoV) Antibody IgG/IgM Test", "Avioq Bio-Tech Co.",
     "Yantai, China"},
    {"Nadal COVID-19 IgG/IgM Test", "Nal Von Minden GmbH", "Regensburg, Germany"},
    {"Biosynex COVID-19 BSS", "Biosynex", "Illkirch-Graffenstaden, France"},
    {"2019-nCoV Ab Test", "Innovita Biological Technology Co.", "Qian'an, China"},
    {"2019-nCoV IgG/IgM Test", "Biolidics", "Mapex, Singapore"},
    {"COVID-19-Check-1", "Veda Lab", "Alencon, France"},
    {"Finecare SARS-CoV2 Antibody Test", "Guangzhou Wondfo Biotech", "Guangzhou, China"},
    {"Wondfo SARS-CoV2 Antibody Test", "Guangzhou Wondfo Biotech", "Guangzhou, China"},
}};

struct Rgb {
  double r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

enum class ArtifactKind : std::uint8_t { Ink = 0, Smudge = 1, Arrow = 2 };

// Positions are cassette-local: origin at the body centre, unrotated.
struct Artifact {
  ArtifactKind kind = ArtifactKind::Ink;
  double u = 0, v = 0;
  double size = 10;
  double angle_deg = 0;
  double opacity = 0.6;
  Rgb color{30, 30, 60};
  friend bool operator==(const Artifact&, const Artifact&) = default;
};

// Fully explicit description of one rendered photo. Rendering is a pure
// function of these values.
struct CassetteParams {
  int canvas_w = 320;
  int canvas_h = 240;
  int background_texture = 0;  // 0 flat, 1 gradient, 2 stripes, 3 checker
  Rgb background{120, 110, 100};
  Rgb background2{90, 85, 80};

  double center_x = 160, center_y = 120;  // body centre on the canvas
  double body_w = 210, body_h = 80;
  Rgb body_color{236, 236, 232};

  // Membrane window relative to the body's top-left corner, unrotated.
  double membrane_x = 90, membrane_y = 28, membrane_w = 88, membrane_h = 24;
  Rgb membrane_color{244, 240, 236};
  Rgb line_color{160, 40, 90};
  double control_intensity = 1.0;
  double test_intensity = 0.0;
  double line_width = 4;
  double control_pos = 0.3;  // line centres as fractions of membrane_w
  double test_pos = 0.65;

  double rotation_deg = 0;
  double skew = 0;  // relative depth change across the body width
  double gain = 1.0;
  double gradient_x = 0, gradient_y = 0;
  double noise_sigma = 0;
  std::vector<Artifact> artifacts;
  int brand = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const CassetteParams&, const CassetteParams&) = default;
};

struct Point2 {
  double x = 0, y = 0;
};

struct GroundTruth {
  ClassLabel label = ClassLabel::Invalid;
  BBox membrane_bbox;
  std::array<Point2, 4> membrane_polygon{};  // image coordinates, clockwise from top-left
  BBox control_line;                         // membrane-local rectangles
  BBox test_line;
  double control_intensity = 0;
  double test_intensity = 0;
  bool faint = false;
};

struct Sample {
  Image image;
  GroundTruth truth;
};

inline ClassLabel class_from_intensities(double control, double test) {
  if (control < kVisibleThreshold) return ClassLabel::Invalid;
  return test >= kVisibleThreshold ? ClassLabel::Positive : ClassLabel::Negative;
}

inline bool is_faint(double control, double test) {
  auto faint = [](double v) { return v >= kVisibleThreshold && v <= kFaintCeiling; };
  return faint(control) || faint(test);
}

// Maps cassette-local points (origin at body centre) to canvas pixels:
// perspective tilt about the body centre, then rotation, then translation.
class CassetteProjection {
 public:
  explicit CassetteProjection(const CassetteParams& p) {
    const double th = p.rotation_deg * std::numbers::pi / 180.0;
    Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
    persp(2, 0) = 2.0 * p.skew / p.body_w;
    Eigen::Matrix3d rot;
    rot << std::cos(th), -std::sin(th), p.center_x,
           std::sin(th), std::cos(th), p.center_y,
           0, 0, 1;
    h_ = rot * persp;
    inv_ = h_.inverse();
  }

  Point2 forward(double u, double v) const { return apply(h_, u, v); }
  Point2 inverse(double x, double y) const { return apply(inv_, x, y); }

 private:
  static Point2 apply(const Eigen::Matrix3d& m, double a, double b) {
    const double w = m(2, 0) * a + m(2, 1) * b + m(2, 2);
    return {(m(0, 0) * a + m(0, 1) * b + m(0, 2)) / w, (m(1, 0) * a + m(1, 1) * b + m(1, 2)) / w};
  }
  Eigen::Matrix3d h_;
  Eigen::Matrix3d inv_;
};

inline BBox line_rect(const CassetteParams& p, double pos) {
  return {pos * p.membrane_w - p.line_width / 2, 0, p.line_width, p.membrane_h};
}

inline std::array<Point2, 4> membrane_polygon(const CassetteParams& p) {
  CassetteProjection proj(p);
  const double u0 = p.membrane_x - p.body_w / 2, v0 = p.membrane_y - p.body_h / 2;
  const double u1 = u0 + p.membrane_w, v1 = v0 + p.membrane_h;
  return {proj.forward(u0, v0), proj.forward(u1, v0), proj.forward(u1, v1),
          proj.forward(u0, v1)};
}

inline BBox polygon_bounds(const std::array<Point2, 4>& poly) {
  double x0 = poly[0].x, x1 = poly[0].x, y0 = poly[0].y, y1 = poly[0].y;
  for (const auto& q : poly) {
    x0 = std::min(x0, q.x);
    x1 = std::max(x1, q.x);
    y0 = std::min(y0, q.y);
    y1 = std::max(y1, q.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

inline void validate(const CassetteParams& p) {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (p.canvas_w < 8 || p.canvas_h < 8) throw std::invalid_argument("canvas too small");
  if (!in01(p.control_intensity) || !in01(p.test_intensity)) {
    throw std::invalid_argument("line intensities must be in [0, 1]");
  }
  if (p.body_w <= 0 || p.body_h <= 0 || p.membrane_w <= 0 || p.membrane_h <= 0) {
    throw std::invalid_argument("cassette dimensions must be positive");
  }
  if (p.membrane_x < 0 || p.membrane_y < 0 || p.membrane_x + p.membrane_w > p.body_w ||
      p.membrane_y + p.membrane_h > p.body_h) {
    throw std::invalid_argument("membrane window must lie inside the cassette body");
  }
  for (double pos : {p.control_pos, p.test_pos}) {
    const BBox r = line_rect(p, pos);
    if (r.x < 0 || r.right() > p.membrane_w) {
      throw std::invalid_argument("line band must lie inside the membrane");
    }
  }
  if (std::abs(p.skew) >= 0.5) throw std::invalid_argument("perspective skew out of range");
  const BBox b = polygon_bounds(membrane_polygon(p));
  if (b.x < 0 || b.y < 0 || b.right() > p.canvas_w || b.bottom() > p.canvas_h) {
    throw std::invalid_argument("membrane falls outside the canvas");
  }
}

namespace detail {

inline Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}
inline Rgb scale(const Rgb& a, double s) { return {a.r * s, a.g * s, a.b * s}; }

inline double segment_distance(double px, double py, double ax, double ay, double bx,
                               double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * dx), py - (ay + t * dy));
}

inline Rgb background_at(const CassetteParams& p, double x, double y) {
  switch (p.background_texture) {
    case 1: return mix(p.background, p.background2, y / p.canvas_h);
    case 2: {
      const double s = 0.5 + 0.5 * std::sin((x * 0.9 + y * 0.25) * 0.12);
      return mix(p.background, p.background2, s * 0.8);
    }
    case 3: {
      const int cell = std::max(8, p.canvas_w / 12);
      const bool odd = ((static_cast<int>(x) / cell) + (static_cast<int>(y) / cell)) & 1;
      return odd ? p.background2 : p.background;
    }
    default: return p.background;
  }
}

inline Rgb brand_color(int brand) {
  static constexpr std::array<Rgb, 10> palette = {{{40, 90, 170},
                                                   {200, 60, 50},
                                                   {40, 140, 90},
                                                   {230, 150, 30},
                                                   {110, 60, 150},
                                                   {20, 150, 170},
                                                   {170, 40, 110},
                                                   {90, 110, 40},
                                                   {60, 60, 60},
                                                   {30, 100, 200}}};
  return palette[static_cast<std::size_t>(brand) % palette.size()];
}

// Colour of the cassette scene at a cassette-local point, or false when
// the point is off the body.
inline bool cassette_color(const CassetteParams& p, double u, double v, Rgb& out) {
  const double hw = p.body_w / 2, hh = p.body_h / 2;
  const double radius = 0.12 * p.body_h;
  const double qx = std::abs(u) - (hw - radius), qy = std::abs(v) - (hh - radius);
  if (std::abs(u) > hw || std::abs(v) > hh) return false;
  if (qx > 0 && qy > 0 && std::hypot(qx, qy) > radius) return false;

  // Body with a soft bevel towards the rim.
  const double rim = std::min(hw - std::abs(u), hh - std::abs(v));
  Rgb c = scale(p.body_color, rim < 0.06 * p.body_h ? 0.9 : 1.0);

  // Sample well.
  const double wu = -0.33 * p.body_w, wr = 0.2 * p.body_h;
  const double dw = std::hypot(u - wu, v);
  if (dw < wr) c = scale(p.body_color, dw < 0.7 * wr ? 0.78 : 0.68);

  // Brand label strip with pseudo-text dashes.
  const double lu0 = 0.36 * p.body_w, lu1 = 0.47 * p.body_w;
  if (u > lu0 && u < lu1 && std::abs(v) < 0.36 * p.body_h) {
    c = mix(c, brand_color(p.brand), 0.85);
    const double t = (v + 0.36 * p.body_h) / (0.72 * p.body_h);
    if (std::fmod(t * 7.0, 1.0) < 0.35 && std::abs(u - (lu0 + lu1) / 2) < 0.035 * p.body_w) {
      c = scale(c, 0.55);
    }
  }

  const double mu0 = p.membrane_x - hw, mv0 = p.membrane_y - hh;
  const double mu1 = mu0 + p.membrane_w, mv1 = mv0 + p.membrane_h;

  // C / T tick marks above the window.
  const double tick_h = 0.09 * p.body_h, tick_w = 0.012 * p.body_w + 0.5;
  for (double pos : {p.control_pos, p.test_pos}) {
    const double cu = mu0 + pos * p.membrane_w;
    if (std::abs(u - cu) < tick_w && v < mv0 - 0.05 * p.body_h &&
        v > mv0 - 0.05 * p.body_h - tick_h) {
      c = scale(p.body_color, 0.45);
    }
  }

  for (const auto& a : p.artifacts) {
    const double th = a.angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(th), sa = std::sin(th);
    double alpha = 0;
    switch (a.kind) {
      case ArtifactKind::Ink: {
        const double d = segment_distance(u, v, a.u - ca * a.size / 2, a.v - sa * a.size / 2,
                                          a.u + ca * a.size / 2, a.v + sa * a.size / 2);
        alpha = std::clamp(1.2 - d, 0.0, 1.0);
        break;
      }
      case ArtifactKind::Smudge: {
        const double r2 = (u - a.u) * (u - a.u) + (v - a.v) * (v - a.v);
        alpha = std::exp(-r2 / (2 * a.size * a.size / 9));
        break;
      }
      case ArtifactKind::Arrow: {
        const double tipx = a.u + ca * a.size / 2, tipy = a.v + sa * a.size / 2;
        double d = segment_distance(u, v, a.u - ca * a.size / 2, a.v - sa * a.size / 2, tipx,
                                    tipy);
        for (double side : {2.5, -2.5}) {
          const double hx = tipx - 0.3 * a.size * std::cos(th + side * 0.2 - 0.0);
          const double hy = tipy - 0.3 * a.size * std::sin(th + side * 0.2);
          d = std::min(d, segment_distance(u, v, tipx, tipy, hx, hy));
        }
        alpha = std::clamp(1.4 - d, 0.0, 1.0);
        break;
      }
    }
    if (alpha > 0) c = mix(c, a.color, alpha * a.opacity);
  }

  // Recessed frame around the window.
  const double frame = std::max(1.0, 0.08 * p.membrane_h);
  if (u >= mu0 - frame && u <= mu1 + frame && v >= mv0 - frame && v <= mv1 + frame) {
    c = scale(p.body_color, 0.62);
  }
  if (u >= mu0 && u < mu1 && v >= mv0 && v < mv1) {
    c = p.membrane_color;
    const double lu = u - mu0;
    const std::array<std::pair<double, double>, 2> lines = {
        {{p.control_pos, p.control_intensity}, {p.test_pos, p.test_intensity}}};
    for (const auto& [pos, intensity] : lines) {
      if (intensity <= 0) continue;
      const double d = std::abs(lu - pos * p.membrane_w);
      const double cover = std::clamp(p.line_width / 2 + 0.5 - d, 0.0, 1.0);
      if (cover > 0) c = mix(c, p.line_color, intensity * cover);
    }
  }
  out = c;
  return true;
}

}  // namespace detail

inline Sample render_sample(const CassetteParams& p) {
  validate(p);
  const CassetteProjection proj(p);
  Image img(static_cast<std::size_t>(p.canvas_w), static_cast<std::size_t>(p.canvas_h));
  std::mt19937_64 rng(p.seed ^ 0x9E3779B97F4A7C15ull);
  std::normal_distribution<double> noise(0.0, 1.0);
  static constexpr double offsets[2] = {0.25, 0.75};
  for (int y = 0; y < p.canvas_h; ++y) {
    for (int x = 0; x < p.canvas_w; ++x) {
      Rgb acc{};
      for (double oy : offsets) {
        for (double ox : offsets) {
          const double px = x + ox, py = y + oy;
          const Point2 l = proj.inverse(px, py);
          Rgb c;
          if (!detail::cassette_color(p, l.x, l.y, c)) c = detail::background_at(p, px, py);
          acc.r += c.r / 4;
          acc.g += c.g / 4;
          acc.b += c.b / 4;
        }
      }
      const double light = p.gain * (1.0 + p.gradient_x * ((x + 0.5) / p.canvas_w - 0.5) +
                                     p.gradient_y * ((y + 0.5) / p.canvas_h - 0.5));
      std::uint8_t* dst = img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      const double ch[3] = {acc.r, acc.g, acc.b};
      for (int k = 0; k < 3; ++k) {
        const double v = ch[k] * light + p.noise_sigma * noise(rng);
        dst[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  Sample s;
  s.image = std::move(img);
  GroundTruth& gt = s.truth;
  gt.control_intensity = p.control_intensity;
  gt.test_intensity = p.test_intensity;
  gt.label = class_from_intensities(p.control_intensity, p.test_intensity);
  gt.faint = is_faint(p.control_intensity, p.test_intensity);
  gt.membrane_polygon = membrane_polygon(p);
  gt.membrane_bbox = polygon_bounds(gt.membrane_polygon);
  gt.control_line = line_rect(p, p.control_pos);
  gt.test_line = line_rect(p, p.test_pos);
  return s;
}

// Membrane-local band mask resampled onto an out_w x out_h grid spanning
// `rect` of the canvas: 1 where the grid cell centre falls inside `band`.
inline std::vector<std::uint8_t> band_mask(const CassetteParams& p, const PixelRect& rect,
                                           const BBox& band, std::size_t out_w,
                                           std::size_t out_h) {
  const CassetteProjection proj(p);
  std::vector<std::uint8_t> mask(out_w * out_h, 0);
  const double mu0 = p.membrane_x - p.body_w / 2, mv0 = p.membrane_y - p.body_h / 2;
  for (std::size_t j = 0; j < out_h; ++j) {
    for (std::size_t i = 0; i < out_w; ++i) {
      const double x = rect.x + (i + 0.5) * rect.w / static_cast<double>(out_w);
      const double y = rect.y + (j + 0.5) * rect.h / static_cast<double>(out_h);
      const Point2 l = proj.inverse(x, y);
      const double lu = l.x - mu0, lv = l.y - mv0;
      if (lu >= band.x && lu < band.right() && lv >= band.y && lv < band.bottom()) {
        mask[j * out_w + i] = 1;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------- corpora

// Sampling ranges for generate_corpus. Geometric sizes are fractions of the
// canvas / body so the same ranges work at any canvas size.
struct GeneratorRanges {
  int canvas_w = 320;
  int canvas_h = 240;
  double body_frac_min = 0.55, body_frac_max = 0.80;  // body width / canvas width
  double body_aspect_min = 0.34, body_aspect_max = 0.42;
  double membrane_len_min = 0.38, membrane_len_max = 0.46;  // of body width
  double membrane_h_min = 0.26, membrane_h_max = 0.34;      // of body height
  double line_width_min = 0.035, line_width_max = 0.06;     // of membrane width
  double rotation_deg = 15;
  double skew = 0.12;
  double gain_min = 0.75, gain_max = 1.15;
  double gradient = 0.35;
  double noise_min = 1.5, noise_max = 7.0;
  double visible_min = 0.25, visible_max = 1.0;
  double absent_max = 0.03;
  double faint_fraction = 0.05;  // share of visible lines drawn in the faint range
  int max_artifacts = 3;
  double artifact_probability = 0.5;
  double edge_fraction = 0.0;  // share of samples pushed against a canvas border
  bool invalid_test_only = false;

  void check() const {
    auto ordered = [](double a, double b) { return a <= b; };
    if (canvas_w < 64 || canvas_h < 64) throw std::invalid_argument("canvas too small");
    if (!ordered(body_frac_min, body_frac_max) || body_frac_max > 0.95 || body_frac_min <= 0 ||
        !ordered(body_aspect_min, body_aspect_max) ||
        !ordered(membrane_len_min, membrane_len_max) || membrane_len_max > 0.6 ||
        !ordered(membrane_h_min, membrane_h_max) || membrane_h_max > 0.6 ||
        !ordered(line_width_min, line_width_max) || line_width_max > 0.15 ||
        !ordered(gain_min, gain_max) || !ordered(noise_min, noise_max) ||
        !ordered(visible_min, visible_max) || visible_min < kVisibleThreshold ||
        visible_max > 1.0 || absent_max >= kVisibleThreshold || absent_max < 0 ||
        faint_fraction < 0 || faint_fraction > 1 || edge_fraction < 0 || edge_fraction > 1 ||
        rotation_deg < 0 || rotation_deg > 45 || skew < 0 || skew >= 0.5 ||
        body_frac_max * canvas_w * body_aspect_max > canvas_h) {
      throw std::invalid_argument("infeasible generator ranges");
    }
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Exact class counts for n samples by largest-remainder rounding.
// mix is indexed by class ordinal (Positive, Negative, Invalid).
inline std::array<std::size_t, 3> class_counts(std::size_t n, const std::array<double, 3>& mix) {
  double sum = 0;
  for (double m : mix) {
    if (m < 0) throw std::invalid_argument("class mix must be non-negative");
    sum += m;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("class mix must sum to 1");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double q = static_cast<double>(n) * mix[k];
    counts[k] = static_cast<std::size_t>(std::floor(q + 1e-9));
    rem[k] = q - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rem[k] > rem[best] + 1e-12) best = k;
    }
    ++counts[best];
    rem[best] = -1;
    ++assigned;
  }
  return counts;
}

namespace detail {

inline double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

inline Rgb jitter(std::mt19937_64& rng, Rgb base, double amount) {
  return {std::clamp(base.r + uniform(rng, -amount, amount), 0.0, 255.0),
          std::clamp(base.g + uniform(rng, -amount, amount), 0.0, 255.0),
          std::clamp(base.b + uniform(rng, -amount, amount), 0.0, 255.0)};
}

inline double visible_intensity(std::mt19937_64& rng, const GeneratorRanges& r) {
  if (uniform(rng, 0, 1) < r.faint_fraction) return uniform(rng, kVisibleThreshold, kFaintCeiling);
  return uniform(rng, r.visible_min, r.visible_max);
}

}  // namespace detail

// Draws one sample's parameters for `label` from `ranges` using `seed` only.
inline CassetteParams draw_params(const GeneratorRanges& r, ClassLabel label, std::uint64_t seed,
                                  bool edge) {
  r.check();
  std::mt19937_64 rng(seed);
  using detail::uniform;
  CassetteParams p;
  p.seed = seed;
  p.canvas_w = r.canvas_w;
  p.canvas_h = r.canvas_h;
  p.background_texture = static_cast<int>(rng() % 4);
  p.background = {uniform(rng, 40, 200), uniform(rng, 40, 200), uniform(rng, 40, 200)};
  p.background2 = detail::jitter(rng, detail::scale(p.background, 0.7), 25);
  p.body_w = std::round(uniform(rng, r.body_frac_min, r.body_frac_max) * r.canvas_w);
  p.body_h = std::round(uniform(rng, r.body_aspect_min, r.body_aspect_max) * p.body_w);
  const double tint = uniform(rng, 215, 250);
  p.body_color = detail::jitter(rng, {tint, tint, tint - 4}, 6);
  p.membrane_w = std::round(uniform(rng, r.membrane_len_min, r.membrane_len_max) * p.body_w);
  p.membrane_h = std::round(uniform(rng, r.membrane_h_min, r.membrane_h_max) * p.body_h);
  p.membrane_x = std::round(0.55 * p.body_w - p.membrane_w / 2);
  p.membrane_y = std::round((p.body_h - p.membrane_h) / 2);
  p.membrane_color = detail::jitter(rng, {244, 240, 236}, 6);
  p.line_color = detail::jitter(rng, {160, 40, 90}, 18);
  p.line_width = std::max(1.5, uniform(rng, r.line_width_min, r.line_width_max) * p.membrane_w);
  p.control_pos = 0.3 + uniform(rng, -0.02, 0.02);
  p.test_pos = 0.65 + uniform(rng, -0.02, 0.02);

  switch (label) {
    case ClassLabel::Positive:
      p.control_intensity = detail::visible_intensity(rng, r);
      p.test_intensity = detail::visible_intensity(rng, r);
      break;
    case ClassLabel::Negative:
      p.control_intensity = detail::visible_intensity(rng, r);
      p.test_intensity = uniform(rng, 0, r.absent_max);
      break;
    case ClassLabel::Invalid:
      p.control_intensity = uniform(rng, 0, r.absent_max);
      p.test_intensity =
          r.invalid_test_only ? detail::visible_intensity(rng, r) : uniform(rng, 0, r.absent_max);
      break;
  }

  p.rotation_deg = uniform(rng, -r.rotation_deg, r.rotation_deg);
  p.skew = uniform(rng, -r.skew, r.skew);
  p.gain = uniform(rng, r.gain_min, r.gain_max);
  p.gradient_x = uniform(rng, -r.gradient, r.gradient);
  p.gradient_y = uniform(rng, -r.gradient, r.gradient);
  p.noise_sigma = uniform(rng, r.noise_min, r.noise_max);
  p.brand = static_cast<int>(rng() % kRdtBrands.size());

  if (uniform(rng, 0, 1) < r.artifact_probability) {
    const int count = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(r.max_artifacts));
    const double mu0 = p.membrane_x - p.body_w / 2, mv0 = p.membrane_y - p.body_h / 2;
    const double margin = 0.12 * p.body_h;
    for (int k = 0; k < count; ++k) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        Artifact a;
        a.kind = static_cast<ArtifactKind>(rng() % 3);
        a.size = uniform(rng, 0.08, 0.2) * p.body_w;
        a.u = uniform(rng, -0.45, 0.45) * p.body_w;
        a.v = uniform(rng, -0.4, 0.4) * p.body_h;
        a.angle_deg = uniform(rng, 0, 360);
        a.opacity = uniform(rng, 0.3, 0.8);
        a.color = a.kind == ArtifactKind::Smudge
                      ? detail::jitter(rng, {120, 100, 80}, 30)
                      : detail::jitter(rng, {30, 40, 90}, 25);
        const double reach = a.size / 2 + 2;
        const bool clear = a.u + reach < mu0 - margin || a.u - reach > mu0 + p.membrane_w + margin ||
                           a.v + reach < mv0 - margin || a.v - reach > mv0 + p.membrane_h + margin;
        if (clear) {
          p.artifacts.push_back(a);
          break;
        }
      }
    }
  }

  // Placement: keep the projected body on the canvas, or push it across a
  // border while the membrane stays inside.
  p.center_x = 0;
  p.center_y = 0;
  auto body_bounds = [&]() {
    CassetteProjection proj(p);
    const double hw = p.body_w / 2, hh = p.body_h / 2;
    return polygon_bounds({proj.forward(-hw, -hh), proj.forward(hw, -hh), proj.forward(hw, hh),
                           proj.forward(-hw, hh)});
  };
  const BBox body = body_bounds();
  const BBox mem = polygon_bounds(membrane_polygon(p));
  if (!edge) {
    const double xmin = -body.x, xmax = r.canvas_w - body.right();
    const double ymin = -body.y, ymax = r.canvas_h - body.bottom();
    p.center_x = xmax >= xmin ? uniform(rng, xmin, xmax) : (xmin + xmax) / 2;
    p.center_y = ymax >= ymin ? uniform(rng, ymin, ymax) : (ymin + ymax) / 2;
  } else {
    const int side = static_cast<int>(rng() % 4);  // left, right, top, bottom
    const double gap_x = (side == 0) ? mem.x - body.x : body.right() - mem.right();
    const double gap_y = (side == 2) ? mem.y - body.y : body.bottom() - mem.bottom();
    const double inset = uniform(rng, 1.0, std::max(1.5, 0.8 * (side < 2 ? gap_x : gap_y)));
    const double free_x0 = -body.x, free_x1 = r.canvas_w - body.right();
    const double free_y0 = -body.y, free_y1 = r.canvas_h - body.bottom();
    auto along = [&](double lo, double hi) { return hi >= lo ? uniform(rng, lo, hi) : (lo + hi) / 2; };
    switch (side) {
      case 0: p.center_x = inset - mem.x; p.center_y = along(free_y0, free_y1); break;
      case 1: p.center_x = r.canvas_w - inset - mem.right(); p.center_y = along(free_y0, free_y1); break;
      case 2: p.center_y = inset - mem.y; p.center_x = along(free_x0, free_x1); break;
      default: p.center_y = r.canvas_h - inset - mem.bottom(); p.center_x = along(free_x0, free_x1); break;
    }
  }
  validate(p);
  return p;
}

struct ManifestRecord {
  std::string path;
  ClassLabel label = ClassLabel::Invalid;
  PixelRect bbox;
  BBox bbox_exact;
  double control_intensity = 0;
  double test_intensity = 0;
  bool faint = false;
  bool edge = false;
  std::uint64_t seed = 0;
  CassetteParams params;
};

inline nlohmann::json to_json(const Rgb& c) { return {c.r, c.g, c.b}; }
inline Rgb rgb_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline nlohmann::json to_json(const CassetteParams& p) {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : p.artifacts) {
    arts.push_back({{"kind", static_cast<int>(a.kind)}, {"u", a.u}, {"v", a.v},
                    {"size", a.size}, {"angle_deg", a.angle_deg}, {"opacity", a.opacity},
                    {"color", to_json(a.color)}});
  }
  return {{"canvas", {p.canvas_w, p.canvas_h}},
          {"background_texture", p.background_texture},
          {"background", to_json(p.background)},
          {"background2", to_json(p.background2)},
          {"center", {p.center_x, p.center_y}},
          {"body", {p.body_w, p.body_h}},
          {"body_color", to_json(p.body_color)},
          {"membrane", {p.membrane_x, p.membrane_y, p.membrane_w, p.membrane_h}},
          {"membrane_color", to_json(p.membrane_color)},
          {"line_color", to_json(p.line_color)},
          {"control_intensity", p.control_intensity},
          {"test_intensity", p.test_intensity},
          {"line_width", p.line_width},
          {"control_pos", p.control_pos},
          {"test_pos", p.test_pos},
          {"rotation_deg", p.rotation_deg},
          {"skew", p.skew},
          {"gain", p.gain},
          {"gradient", {p.gradient_x, p.gradient_y}},
          {"noise_sigma", p.noise_sigma},
          {"artifacts", arts},
          {"brand", p.brand},
          {"seed", p.seed}};
}

inline CassetteParams params_from_json(const nlohmann::json& j) {
  CassetteParams p;
  p.canvas_w = j.at("canvas").at(0);
  p.canvas_h = j.at("canvas").at(1);
  p.background_texture = j.at("background_texture");
  p.background = rgb_from_json(j.at("background"));
  p.background2 = rgb_from_json(j.at("background2"));
  p.center_x = j.at("center").at(0);
  p.center_y = j.at("center").at(1);
  p.body_w = j.at("body").at(0);
  p.body_h = j.at("body").at(1);
  p.body_color = rgb_from_json(j.at("body_color"));
  const auto& m = j.at("membrane");
  p.membrane_x = m.at(0);
  p.membrane_y = m.at(1);
  p.membrane_w = m.at(2);
  p.membrane_h = m.at(3);
  p.membrane_color = rgb_from_json(j.at("membrane_color"));
  p.line_color = rgb_from_json(j.at("line_color"));
  p.control_intensity = j.at("control_intensity");
  p.test_intensity = j.at("test_intensity");
  p.line_width = j.at("line_width");
  p.control_pos = j.at("control_pos");
  p.test_pos = j.at("test_pos");
  p.rotation_deg = j.at("rotation_deg");
  p.skew = j.at("skew");
  p.gain = j.at("gain");
  p.gradient_x = j.at("gradient").at(0);
  p.gradient_y = j.at("gradient").at(1);
  p.noise_sigma = j.at("noise_sigma");
  for (const auto& a : j.at("artifacts")) {
    Artifact art;
    art.kind = static_cast<ArtifactKind>(a.at("kind").get<int>());
    art.u = a.at("u");
    art.v = a.at("v");
    art.size = a.at("size");
    art.angle_deg = a.at("angle_deg");
    art.opacity = a.at("opacity");
    art.color = rgb_from_json(a.at("color"));
    p.artifacts.push_back(art);
  }
  p.brand = j.at("brand");
  p.seed = j.at("seed");
  return p;
}

inline nlohmann::json to_json(const ManifestRecord& r) {
  return {{"path", r.path},
          {"class", to_string(r.label)},
          {"bbox", {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h}},
          {"bbox_exact", {r.bbox_exact.x, r.bbox_exact.y, r.bbox_exact.w, r.bbox_exact.h}},
          {"control_intensity", r.control_intensity},
          {"test_intensity", r.test_intensity},
          {"faint", r.faint},
          {"edge", r.edge},
          {"brand", kRdtBrands[static_cast<std::size_t>(r.params.brand) % kRdtBrands.size()].name},
          {"seed", r.seed},
          {"params", to_json(r.params)}};
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.path = j.at("path");
  r.label = parse_label(j.at("class").get<std::string>());
  const auto& b = j.at("bbox");
  r.bbox = {b.at(0), b.at(1), b.at(2), b.at(3)};
  if (j.contains("bbox_exact")) {
    const auto& e = j.at("bbox_exact");
    r.bbox_exact = {e.at(0), e.at(1), e.at(2), e.at(3)};
  } else {
    r.bbox_exact = {double(r.bbox.x), double(r.bbox.y), double(r.bbox.w), double(r.bbox.h)};
  }
  r.control_intensity = j.at("control_intensity");
  r.test_intensity = j.at("test_intensity");
  r.faint = j.value("faint", false);
  r.edge = j.value("edge", false);
  r.seed = j.at("seed");
  if (j.contains("params")) r.params = params_from_json(j.at("params"));
  return r;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

struct CorpusSpec {
  std::size_t n = 100;
  std::array<double, 3> mix{1.0 / 3, 1.0 / 3, 1.0 / 3};  // Positive, Negative, Invalid
  GeneratorRanges ranges;
  std::uint64_t seed = 1;
};

// Per-sample plan (label, seed, edge flag) in corpus order; the class
// sequence is shuffled with the corpus seed.
struct PlannedSample {
  ClassLabel label;
  std::uint64_t seed;
  bool edge;
};

inline std::vector<PlannedSample> plan_corpus(const CorpusSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("corpus needs at least one sample");
  spec.ranges.check();
  const auto counts = class_counts(spec.n, spec.mix);
  std::vector<ClassLabel> labels;
  for (int k = 0; k < 3; ++k) labels.insert(labels.end(), counts[k], label_from_ordinal(k));
  std::mt19937_64 rng(splitmix64(spec.seed));
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto edge_count = static_cast<std::size_t>(
      std::llround(spec.ranges.edge_fraction * static_cast<double>(spec.n)));
  std::vector<std::size_t> order(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> edge(spec.n, false);
  for (std::size_t i = 0; i < edge_count; ++i) edge[order[i]] = true;
  std::vector<PlannedSample> plan;
  for (std::size_t i = 0; i < spec.n; ++i) {
    plan.push_back({labels[i], splitmix64(spec.seed * 0x100000001B3ull + i + 1), edge[i]});
  }
  return plan;
}

inline ManifestRecord make_record(const CassetteParams& p, const GroundTruth& gt, bool edge,
                                  std::string path) {
  ManifestRecord r;
  r.path = std::move(path);
  r.label = gt.label;
  r.bbox_exact = gt.membrane_bbox;
  r.bbox = pixel_rect(gt.membrane_bbox, static_cast<std::size_t>(p.canvas_w),
                      static_cast<std::size_t>(p.canvas_h));
  r.control_intensity = gt.control_intensity;
  r.test_intensity = gt.test_intensity;
  r.faint = gt.faint;
  r.edge = edge;
  r.seed = p.seed;
  r.params = p;
  return r;
}

// Renders a corpus into out_dir/images/*.png and writes out_dir/manifest.jsonl.
inline std::vector<ManifestRecord> generate_corpus(const CorpusSpec& spec,
                                                   const std::filesystem::path& out_dir) {
  const auto plan = plan_corpus(spec);
  std::filesystem::create_directories(out_dir / "images");
  std::vector<ManifestRecord> records;
  std::ostringstream manifest;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const CassetteParams p = draw_params(spec.ranges, plan[i].label, plan[i].seed, plan[i].edge);
    Sample s = render_sample(p);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.png", i);
    write_png(out_dir / name, s.image);
    records.push_back(make_record(p, s.truth, plan[i].edge, name));
    manifest << to_json(records.back()).dump() << '\n';
  }
  const std::string text = manifest.str();
  write_file_bytes(out_dir / "manifest.jsonl",
                   std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return records;
}

}  // namespace lfa
