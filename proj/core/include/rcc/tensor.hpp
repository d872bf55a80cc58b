#pragma once

#include <cstdint>
#include <vector>

#include <opencv2/core.hpp>

namespace rcc::nn {

// Dense float32 tensor, row-major, NCHW for image batches.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }
  void fill(float v);
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::int64_t shape_numel(const std::vector<int>& shape);

// 8-bit RGB image to CHW floats in [0,1].
std::vector<float> to_chw_float(const cv::Mat& rgb);

// Stacks equally sized CHW sample vectors into an NCHW batch.
Tensor stack_samples(const std::vector<std::vector<float>>& samples, int channels, int height,
                     int width);

}  // namespace rcc::nn
