#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rcc/annotations.hpp"
#include "rcc/geometry.hpp"
#include "rcc/slide.hpp"

namespace rcc::slideio {

// One texture class: hue band plus saturation/value ranges driven by
// seeded lattice value noise. Smaller noise_cell_px means higher spatial
// frequency.
struct TextureParams {
  double hue_deg = 330.0;
  double hue_width_deg = 24.0;
  double sat_lo = 0.28, sat_hi = 0.45;
  double val_lo = 0.60, val_hi = 0.82;
  int noise_cell_px = 48;
};

enum class TissueShape { kFull, kEllipse };

// Fully determines a synthetic slide: the same spec renders bit-identical
// pixels and ground truth on every run.
struct SyntheticSlideSpec {
  std::string slide_id = "synthetic";
  std::int64_t width = 2048;
  std::int64_t height = 2048;
  double base_magnification = 40.0;

  TissueShape tissue = TissueShape::kEllipse;
  double tissue_margin_frac = 0.04;  // ellipse inset per axis

  int num_regions = 2;
  double region_radius_frac_min = 0.10;  // of min(width, height)
  double region_radius_frac_max = 0.20;
  int region_vertices = 24;
  double region_irregularity = 0.35;
  // When non-empty, used verbatim instead of sampling regions.
  std::vector<geom::Polygon> fixed_regions;

  TextureParams normal_texture{330.0, 24.0, 0.28, 0.45, 0.60, 0.82, 48};
  TextureParams cancer_texture{275.0, 24.0, 0.36, 0.58, 0.45, 0.70, 12};
  double background_value = 0.98;
  double background_noise = 0.015;
  // Whole-slide hue shift ~ N(0, sigma), shared by normal and cancer
  // texture; models slide-to-slide stain variation.
  double slide_hue_jitter_deg = 0.0;

  int points_per_class = 5;
  std::uint64_t seed = 0;
};

// Procedural slide: every pixel is a pure function of (spec, regions).
class SyntheticSlide : public SlideSource {
 public:
  SyntheticSlide(SyntheticSlideSpec spec, std::vector<geom::Polygon> regions,
                 double hue_shift_deg);

  const SyntheticSlideSpec& spec() const { return spec_; }
  const std::vector<geom::Polygon>& regions() const { return regions_; }
  double hue_shift_deg() const { return hue_shift_; }

  bool is_tissue(std::int64_t x, std::int64_t y) const;
  bool is_cancer(std::int64_t x, std::int64_t y) const;  // tissue inside a region

  // Fraction of window pixels that are tissue; the ground-truth
  // counterpart of the HSV background filter.
  double tissue_fraction(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;

 protected:
  cv::Mat read_region_impl(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override;

 private:
  SyntheticSlideSpec spec_;
  std::vector<geom::Polygon> regions_;
  std::vector<std::array<double, 4>> region_bboxes_;  // x0,y0,x1,y1
  double hue_shift_;
};

struct SyntheticResult {
  std::shared_ptr<SyntheticSlide> slide;
  ann::RegionAnnotation regions;
  std::vector<ann::PointAnnotation> points;  // positives first, then negatives
};

// Builds the slide, its exact ground-truth regions and suggested Min-Point
// annotations (points_per_class inside regions on tissue, the same number
// on tissue outside all regions).
SyntheticResult generate_synthetic_slide(const SyntheticSlideSpec& spec);

}  // namespace rcc::slideio
