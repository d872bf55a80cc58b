#include "rcc/tensor.hpp"

#include <algorithm>

#include "rcc/errors.hpp"

namespace rcc::nn {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ValidationError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
}

void Tensor::fill(float v) { std::fill(data.begin(), data.end(), v); }

std::vector<float> to_chw_float(const cv::Mat& rgb) {
  if (rgb.empty() || rgb.type() != CV_8UC3) throw ValidationError("expected 8-bit RGB pixels");
  std::vector<float> out(static_cast<std::size_t>(3) * rgb.rows * rgb.cols);
  std::size_t plane = static_cast<std::size_t>(rgb.rows) * rgb.cols;
  for (int r = 0; r < rgb.rows; ++r) {
    const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(r);
    for (int c = 0; c < rgb.cols; ++c) {
      std::size_t i = static_cast<std::size_t>(r) * rgb.cols + c;
      out[i] = row[c][0] / 255.0f;
      out[plane + i] = row[c][1] / 255.0f;
      out[2 * plane + i] = row[c][2] / 255.0f;
    }
  }
  return out;
}

Tensor stack_samples(const std::vector<std::vector<float>>& samples, int channels, int height,
                     int width) {
  if (samples.empty()) throw ValidationError("cannot stack an empty batch");
  std::size_t sample_len = static_cast<std::size_t>(channels) * height * width;
  Tensor out({static_cast<int>(samples.size()), channels, height, width});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != sample_len) throw ValidationError("sample size mismatch in batch");
    std::copy(samples[i].begin(), samples[i].end(), out.data.begin() + i * sample_len);
  }
  return out;
}

}  // namespace rcc::nn
