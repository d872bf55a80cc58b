#include "rcc/slide.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rcc/errors.hpp"

namespace rcc::slideio {

SlideSource::SlideSource(std::string slide_id, std::int64_t width, std::int64_t height,
                         double base_magnification)
    : slide_id_(std::move(slide_id)),
      width_(width),
      height_(height),
      base_magnification_(base_magnification) {
  if (width_ <= 0 || height_ <= 0) {
    throw ValidationError("slide " + slide_id_ + " has non-positive dimensions");
  }
  if (base_magnification_ <= 0) {
    throw ValidationError("slide " + slide_id_ + " has non-positive magnification");
  }
}

cv::Mat SlideSource::read_region(std::int64_t x, std::int64_t y, std::int64_t w,
                                 std::int64_t h) const {
  if (w <= 0 || h <= 0 || x < 0 || y < 0 || x + w > width_ || y + h > height_) {
    std::ostringstream os;
    os << "read window (" << x << "," << y << "," << w << "," << h << ") out of bounds for slide "
       << slide_id_ << " (" << width_ << "x" << height_ << ")";
    throw ValidationError(os.str());
  }
  cv::Mat block = read_region_impl(x, y, w, h);
  CV_Assert(block.type() == CV_8UC3 && block.rows == h && block.cols == w);
  return block;
}

RasterSlide::RasterSlide(std::string slide_id, cv::Mat rgb, double base_magnification)
    : SlideSource(std::move(slide_id), rgb.cols, rgb.rows, base_magnification),
      rgb_(std::move(rgb)) {
  if (rgb_.type() != CV_8UC3) {
    throw ValidationError("RasterSlide expects a CV_8UC3 RGB image");
  }
}

cv::Mat RasterSlide::read_region_impl(std::int64_t x, std::int64_t y, std::int64_t w,
                                      std::int64_t h) const {
  const cv::Rect roi(static_cast<int>(x), static_cast<int>(y), static_cast<int>(w),
                     static_cast<int>(h));
  return rgb_(roi).clone();
}

std::filesystem::path sidecar_path(const std::filesystem::path& slide_path) {
  std::filesystem::path p = slide_path;
  p.replace_extension(".meta.json");
  return p;
}

std::unique_ptr<SlideSource> open_slide(const std::filesystem::path& path,
                                        double magnification_override) {
  if (!std::filesystem::exists(path)) {
    throw IoError("slide not found: " + path.string());
  }
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw IoError("unreadable slide file: " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);

  double magnification = magnification_override;
  if (magnification <= 0) {
    const auto sidecar = sidecar_path(path);
    if (!std::filesystem::exists(sidecar)) {
      throw ValidationError("missing magnification metadata for " + path.string() +
                            " (no sidecar " + sidecar.string() + ")");
    }
    std::ifstream in(sidecar);
    nlohmann::json j;
    try {
      in >> j;
      magnification = j.at("base_magnification").get<double>();
    } catch (const std::exception& e) {
      throw ValidationError("bad sidecar " + sidecar.string() + ": " + e.what());
    }
  }
  return std::make_unique<RasterSlide>(path.stem().string(), std::move(rgb), magnification);
}

}  // namespace rcc::slideio
