#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <opencv2/core.hpp>

namespace rcc::slideio {

// Read-only access to one slide. Pixel blocks are CV_8UC3, RGB channel
// order, at base magnification. Implementations must be safe for
// concurrent read_region calls.
class SlideSource {
 public:
  SlideSource(std::string slide_id, std::int64_t width, std::int64_t height,
              double base_magnification);
  virtual ~SlideSource() = default;

  const std::string& slide_id() const { return slide_id_; }
  std::int64_t width() const { return width_; }
  std::int64_t height() const { return height_; }
  double base_magnification() const { return base_magnification_; }

  // Returns exactly the requested h x w window. Throws ValidationError
  // when the window is empty or extends outside the slide.
  cv::Mat read_region(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;

 protected:
  virtual cv::Mat read_region_impl(std::int64_t x, std::int64_t y, std::int64_t w,
                                   std::int64_t h) const = 0;

 private:
  std::string slide_id_;
  std::int64_t width_;
  std::int64_t height_;
  double base_magnification_;
};

// A plain raster image (PNG/TIFF) held in memory, RGB.
class RasterSlide : public SlideSource {
 public:
  RasterSlide(std::string slide_id, cv::Mat rgb, double base_magnification);

 protected:
  cv::Mat read_region_impl(std::int64_t x, std::int64_t y, std::int64_t w,
                           std::int64_t h) const override;

 private:
  cv::Mat rgb_;
};

// Sidecar path for a slide file: "slide.png" -> "slide.meta.json".
std::filesystem::path sidecar_path(const std::filesystem::path& slide_path);

// Opens a plain raster slide. Magnification comes from the sidecar JSON
// {"base_magnification": float}; without it (and without an override)
// the slide is rejected.
std::unique_ptr<SlideSource> open_slide(const std::filesystem::path& path,
                                        double magnification_override = 0.0);

}  // namespace rcc::slideio
