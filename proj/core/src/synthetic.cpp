#include "rcc/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "rcc/errors.hpp"
#include "rcc/rng.hpp"

namespace rcc::slideio {

namespace {

double lattice_value(std::uint64_t seed, std::uint64_t salt, std::int64_t xi, std::int64_t yi) {
  std::uint64_t h = splitmix64(seed ^ (salt * 0xa0761d6478bd642fULL));
  h = splitmix64(h ^ static_cast<std::uint64_t>(xi));
  h = splitmix64(h ^ static_cast<std::uint64_t>(yi));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear value noise over an integer lattice with the given cell size.
double value_noise(std::uint64_t seed, std::uint64_t salt, std::int64_t x, std::int64_t y,
                   int cell) {
  const double fx = static_cast<double>(x) / cell;
  const double fy = static_cast<double>(y) / cell;
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
  const double tx = smoothstep(fx - static_cast<double>(x0));
  const double ty = smoothstep(fy - static_cast<double>(y0));
  const double v00 = lattice_value(seed, salt, x0, y0);
  const double v10 = lattice_value(seed, salt, x0 + 1, y0);
  const double v01 = lattice_value(seed, salt, x0, y0 + 1);
  const double v11 = lattice_value(seed, salt, x0 + 1, y0 + 1);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

cv::Vec3b hsv_to_rgb_u8(double h_deg, double s, double v) {
  h_deg = std::fmod(h_deg, 360.0);
  if (h_deg < 0) h_deg += 360.0;
  s = std::clamp(s, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double xcomp = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = xcomp; break;
    case 1: r = xcomp; g = c; break;
    case 2: g = c; b = xcomp; break;
    case 3: g = xcomp; b = c; break;
    case 4: r = xcomp; b = c; break;
    default: r = c; b = xcomp; break;
  }
  const double m = v - c;
  auto q = [](double t) {
    return static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  };
  return {q(r + m), q(g + m), q(b + m)};
}

constexpr std::uint64_t kSaltHue = 1, kSaltSat = 2, kSaltVal = 3, kSaltBack = 4;

}  // namespace

SyntheticSlide::SyntheticSlide(SyntheticSlideSpec spec, std::vector<geom::Polygon> regions,
                               double hue_shift_deg)
    : SlideSource(spec.slide_id, spec.width, spec.height, spec.base_magnification),
      spec_(std::move(spec)),
      regions_(std::move(regions)),
      hue_shift_(hue_shift_deg) {
  for (const auto& poly : regions_) {
    std::array<double, 4> bb{1e300, 1e300, -1e300, -1e300};
    for (const auto& v : poly) {
      bb[0] = std::min(bb[0], v.x);
      bb[1] = std::min(bb[1], v.y);
      bb[2] = std::max(bb[2], v.x);
      bb[3] = std::max(bb[3], v.y);
    }
    region_bboxes_.push_back(bb);
  }
}

bool SyntheticSlide::is_tissue(std::int64_t x, std::int64_t y) const {
  if (spec_.tissue == TissueShape::kFull) return true;
  const double rx = (0.5 - spec_.tissue_margin_frac) * static_cast<double>(spec_.width);
  const double ry = (0.5 - spec_.tissue_margin_frac) * static_cast<double>(spec_.height);
  if (rx <= 0 || ry <= 0) return false;
  const double dx = (static_cast<double>(x) - 0.5 * static_cast<double>(spec_.width)) / rx;
  const double dy = (static_cast<double>(y) - 0.5 * static_cast<double>(spec_.height)) / ry;
  return dx * dx + dy * dy <= 1.0;
}

bool SyntheticSlide::is_cancer(std::int64_t x, std::int64_t y) const {
  if (!is_tissue(x, y)) return false;
  const double px = static_cast<double>(x);
  const double py = static_cast<double>(y);
  for (std::size_t i = 0; i < regions_.size(); ++i) {
    const auto& bb = region_bboxes_[i];
    if (px < bb[0] || px > bb[2] || py < bb[1] || py > bb[3]) continue;
    if (geom::point_in_polygon(px, py, regions_[i])) return true;
  }
  return false;
}

double SyntheticSlide::tissue_fraction(std::int64_t x, std::int64_t y, std::int64_t w,
                                       std::int64_t h) const {
  std::int64_t count = 0;
  for (std::int64_t yy = y; yy < y + h; ++yy) {
    for (std::int64_t xx = x; xx < x + w; ++xx) {
      if (is_tissue(xx, yy)) ++count;
    }
  }
  return static_cast<double>(count) / (static_cast<double>(w) * static_cast<double>(h));
}

cv::Mat SyntheticSlide::read_region_impl(std::int64_t x, std::int64_t y, std::int64_t w,
                                         std::int64_t h) const {
  cv::Mat out(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  const std::uint64_t seed = spec_.seed;
  for (std::int64_t yy = 0; yy < h; ++yy) {
    auto* row = out.ptr<cv::Vec3b>(static_cast<int>(yy));
    for (std::int64_t xx = 0; xx < w; ++xx) {
      const std::int64_t px = x + xx;
      const std::int64_t py = y + yy;
      cv::Vec3b rgb;
      if (!is_tissue(px, py)) {
        const double n = value_noise(seed, kSaltBack, px, py, 32);
        const double v = spec_.background_value + (n - 0.5) * 2.0 * spec_.background_noise;
        const double s = 0.02 * value_noise(seed, kSaltBack + 7, px, py, 32);
        rgb = hsv_to_rgb_u8(30.0, s, v);
      } else {
        const TextureParams& t = is_cancer(px, py) ? spec_.cancer_texture : spec_.normal_texture;
        const int cell = std::max(1, t.noise_cell_px);
        const double nh = value_noise(seed, kSaltHue, px, py, cell);
        const double ns = value_noise(seed, kSaltSat, px, py, cell);
        const double nv = value_noise(seed, kSaltVal, px, py, cell);
        const double hue = t.hue_deg + hue_shift_ + (nh - 0.5) * t.hue_width_deg;
        const double sat = t.sat_lo + ns * (t.sat_hi - t.sat_lo);
        const double val = t.val_lo + nv * (t.val_hi - t.val_lo);
        rgb = hsv_to_rgb_u8(hue, sat, val);
      }
      row[xx] = rgb;
    }
  }
  return out;
}

namespace {

geom::Polygon sample_star_polygon(Rng& rng, double cx, double cy, double radius, int vertices,
                                  double irregularity) {
  geom::Polygon poly;
  poly.reserve(vertices);
  const double step = 2.0 * std::numbers::pi / vertices;
  for (int i = 0; i < vertices; ++i) {
    const double ang = step * i + rng.uniform(-0.35, 0.35) * step;
    const double r = radius * (1.0 + irregularity * (rng.uniform() * 2.0 - 1.0));
    poly.push_back({cx + r * std::cos(ang), cy + r * std::sin(ang)});
  }
  return poly;
}

bool polygon_in_bounds(const geom::Polygon& poly, std::int64_t w, std::int64_t h) {
  for (const auto& v : poly) {
    if (v.x < 0 || v.y < 0 || v.x > static_cast<double>(w - 1) ||
        v.y > static_cast<double>(h - 1)) {
      return false;
    }
  }
  return true;
}

}  // namespace

SyntheticResult generate_synthetic_slide(const SyntheticSlideSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) {
    throw ValidationError("synthetic slide dimensions must be positive");
  }
  if (spec.num_regions < 0 || spec.points_per_class < 0) {
    throw ValidationError("negative counts in synthetic slide spec");
  }

  Rng root(splitmix64(spec.seed));
  // Deterministic independent streams per concern.
  Rng jitter_rng = root.child(1);
  Rng region_rng = root.child(2);
  Rng point_rng = root.child(3);

  const double hue_shift =
      spec.slide_hue_jitter_deg > 0 ? jitter_rng.normal() * spec.slide_hue_jitter_deg : 0.0;

  std::vector<geom::Polygon> regions;
  if (!spec.fixed_regions.empty()) {
    for (const auto& poly : spec.fixed_regions) {
      const auto norm = geom::normalize_polygon(poly);
      if (const auto err = geom::check_simple_polygon(norm); !err.empty()) {
        throw ValidationError("fixed region invalid: " + err);
      }
      if (!polygon_in_bounds(norm, spec.width, spec.height)) {
        throw ValidationError("fixed region exceeds slide bounds");
      }
      regions.push_back(norm);
    }
  } else {
    const double min_dim = static_cast<double>(std::min(spec.width, spec.height));
    for (int i = 0; i < spec.num_regions; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const double radius =
            min_dim * region_rng.uniform(spec.region_radius_frac_min, spec.region_radius_frac_max);
        const double reach = radius * (1.0 + spec.region_irregularity);
        if (2.0 * reach >= static_cast<double>(spec.width) ||
            2.0 * reach >= static_cast<double>(spec.height)) {
          continue;
        }
        const double cx = region_rng.uniform(reach, static_cast<double>(spec.width) - reach);
        const double cy = region_rng.uniform(reach, static_cast<double>(spec.height) - reach);
        geom::Polygon poly = sample_star_polygon(region_rng, cx, cy, radius, spec.region_vertices,
                                                 spec.region_irregularity);
        if (!polygon_in_bounds(poly, spec.width, spec.height)) continue;
        if (!geom::check_simple_polygon(poly).empty()) continue;
        regions.push_back(std::move(poly));
        placed = true;
      }
      if (!placed) {
        std::ostringstream os;
        os << "cannot place cancer region " << i << " inside " << spec.width << "x" << spec.height
           << " slide; region radius too large";
        throw ValidationError(os.str());
      }
    }
  }

  auto slide = std::make_shared<SyntheticSlide>(spec, regions, hue_shift);

  SyntheticResult result;
  result.slide = slide;
  result.regions.polygons = regions;
  result.regions.label = "cancerous";

  auto sample_point = [&](bool want_cancer) -> ann::PointAnnotation {
    for (int attempt = 0; attempt < 200000; ++attempt) {
      const auto x = static_cast<std::int64_t>(point_rng.uniform_int(spec.width));
      const auto y = static_cast<std::int64_t>(point_rng.uniform_int(spec.height));
      if (!slide->is_tissue(x, y)) continue;
      const bool in_region =
          geom::point_in_any_polygon(static_cast<double>(x), static_cast<double>(y), regions);
      if (in_region == want_cancer) {
        return {x, y, want_cancer ? ann::Polarity::kPositive : ann::Polarity::kNegative};
      }
    }
    throw ValidationError(std::string("cannot sample a ") +
                          (want_cancer ? "cancerous" : "non-cancerous") + " point on slide " +
                          spec.slide_id);
  };

  if (!regions.empty()) {
    for (int i = 0; i < spec.points_per_class; ++i) result.points.push_back(sample_point(true));
  }
  for (int i = 0; i < spec.points_per_class; ++i) result.points.push_back(sample_point(false));
  return result;
}

}  // namespace rcc::slideio
