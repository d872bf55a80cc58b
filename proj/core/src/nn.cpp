#include "rcc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Dense>

#include "rcc/errors.hpp"
#include "rcc/hashing.hpp"
#include "rcc/version.hpp"

namespace rcc::nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

Param make_param(std::string name, std::vector<int> shape) {
  Param p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  return p;
}

void he_normal(Tensor& t, double fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / fan_in);
  for (float& v : t.data) v = static_cast<float>(rng.normal() * std);
}

int conv_out_extent(int in, int k, int stride, int pad) {
  int out = (in + 2 * pad - k) / stride + 1;
  if (out <= 0) throw ValidationError("layer output would be empty");
  return out;
}

void check_4d(const Tensor& x) {
  if (x.ndim() != 4) throw ValidationError("expected NCHW tensor");
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng,
               std::string name)
    : in_c_(in_channels), out_c_(out_channels), k_(kernel), stride_(stride), pad_(pad) {
  weight_ = make_param(name + ".weight", {out_c_, in_c_ * k_ * k_});
  bias_ = make_param(name + ".bias", {out_c_});
  he_normal(weight_.value, static_cast<double>(in_c_) * k_ * k_, rng);
}

namespace {

// Column matrix [C*k*k, Ho*Wo] for one sample.
void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            MatRM& col) {
  col.setZero();
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        int row = (c * k + ki) * k + kj;
        for (int ho = 0; ho < Ho; ++ho) {
          int hi = ho * stride - pad + ki;
          if (hi < 0 || hi >= H) continue;
          const float* src = x + (static_cast<std::size_t>(c) * H + hi) * W;
          float* dst = col.data() + static_cast<std::size_t>(row) * Ho * Wo +
                       static_cast<std::size_t>(ho) * Wo;
          for (int wo = 0; wo < Wo; ++wo) {
            int wi = wo * stride - pad + kj;
            if (wi >= 0 && wi < W) dst[wo] = src[wi];
          }
        }
      }
    }
  }
}

void col2im(const MatRM& col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* dx) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        int row = (c * k + ki) * k + kj;
        for (int ho = 0; ho < Ho; ++ho) {
          int hi = ho * stride - pad + ki;
          if (hi < 0 || hi >= H) continue;
          float* dst = dx + (static_cast<std::size_t>(c) * H + hi) * W;
          const float* src = col.data() + static_cast<std::size_t>(row) * Ho * Wo +
                             static_cast<std::size_t>(ho) * Wo;
          for (int wo = 0; wo < Wo; ++wo) {
            int wi = wo * stride - pad + kj;
            if (wi >= 0 && wi < W) dst[wi] += src[wo];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, bool train) {
  (void)train;
  check_4d(x);
  if (x.dim(1) != in_c_) throw ValidationError("conv input channel mismatch");
  input_ = x;
  int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  int Ho = conv_out_extent(H, k_, stride_, pad_);
  int Wo = conv_out_extent(W, k_, stride_, pad_);
  Tensor out({N, out_c_, Ho, Wo});
  Eigen::Map<const MatRM> wm(weight_.value.data.data(), out_c_, in_c_ * k_ * k_);
  MatRM col(in_c_ * k_ * k_, Ho * Wo);
  std::size_t in_stride = static_cast<std::size_t>(in_c_) * H * W;
  std::size_t out_stride = static_cast<std::size_t>(out_c_) * Ho * Wo;
  for (int n = 0; n < N; ++n) {
    im2col(x.data.data() + n * in_stride, in_c_, H, W, k_, stride_, pad_, Ho, Wo, col);
    Eigen::Map<MatRM> om(out.data.data() + n * out_stride, out_c_, Ho * Wo);
    om.noalias() = wm * col;
    for (int oc = 0; oc < out_c_; ++oc) om.row(oc).array() += bias_.value.data[oc];
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  int N = input_.dim(0), H = input_.dim(2), W = input_.dim(3);
  int Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  Tensor dx(input_.shape);
  Eigen::Map<const MatRM> wm(weight_.value.data.data(), out_c_, in_c_ * k_ * k_);
  Eigen::Map<MatRM> dwm(weight_.grad.data.data(), out_c_, in_c_ * k_ * k_);
  MatRM col(in_c_ * k_ * k_, Ho * Wo);
  MatRM dcol(in_c_ * k_ * k_, Ho * Wo);
  std::size_t in_stride = static_cast<std::size_t>(in_c_) * H * W;
  std::size_t out_stride = static_cast<std::size_t>(out_c_) * Ho * Wo;
  for (int n = 0; n < N; ++n) {
    im2col(input_.data.data() + n * in_stride, in_c_, H, W, k_, stride_, pad_, Ho, Wo, col);
    Eigen::Map<const MatRM> gm(grad_out.data.data() + n * out_stride, out_c_, Ho * Wo);
    dwm.noalias() += gm * col.transpose();
    for (int oc = 0; oc < out_c_; ++oc) bias_.grad.data[oc] += gm.row(oc).sum();
    dcol.noalias() = wm.transpose() * gm;
    col2im(dcol, in_c_, H, W, k_, stride_, pad_, Ho, Wo, dx.data.data() + n * in_stride);
  }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

BatchNorm2d::BatchNorm2d(int channels, std::string name, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = make_param(name + ".gamma", {channels});
  beta_ = make_param(name + ".beta", {channels});
  gamma_.value.fill(1.0f);
  running_mean_ = Tensor({channels});
  running_var_ = Tensor({channels});
  running_var_.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  check_4d(x);
  if (x.dim(1) != channels_) throw ValidationError("batchnorm channel mismatch");
  int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  std::int64_t ns = static_cast<std::int64_t>(N) * H * W;
  Tensor out(x.shape);
  batch_mean_.assign(channels_, 0.0);
  batch_inv_std_.assign(channels_, 0.0);
  std::size_t plane = static_cast<std::size_t>(H) * W;

  if (train) {
    input_ = x;
    xhat_ = Tensor(x.shape);
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const float* p = x.data.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      double mean = sum / ns;
      double var = sq / ns - mean * mean;
      if (var < 0) var = 0;
      double inv_std = 1.0 / std::sqrt(var + eps_);
      batch_mean_[c] = mean;
      batch_inv_std_[c] = inv_std;
      double unbiased = ns > 1 ? var * ns / (ns - 1) : var;
      running_mean_.data[c] =
          static_cast<float>((1.0 - momentum_) * running_mean_.data[c] + momentum_ * mean);
      running_var_.data[c] =
          static_cast<float>((1.0 - momentum_) * running_var_.data[c] + momentum_ * unbiased);
      float g = gamma_.value.data[c], b = beta_.value.data[c];
      for (int n = 0; n < N; ++n) {
        std::size_t base = (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          float xh = static_cast<float>((x.data[base + i] - mean) * inv_std);
          xhat_.data[base + i] = xh;
          out.data[base + i] = g * xh + b;
        }
      }
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var_.data[c]) + eps_);
      double mean = running_mean_.data[c];
      batch_mean_[c] = mean;
      batch_inv_std_[c] = inv_std;
      float g = gamma_.value.data[c], b = beta_.value.data[c];
      for (int n = 0; n < N; ++n) {
        std::size_t base = (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          out.data[base + i] = static_cast<float>(g * (x.data[base + i] - mean) * inv_std + b);
      }
    }
    input_ = Tensor();
    xhat_ = Tensor();
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (xhat_.data.empty())
    throw Error("batchnorm backward requires a preceding training-mode forward");
  int N = grad_out.dim(0), H = grad_out.dim(2), W = grad_out.dim(3);
  std::int64_t ns = static_cast<std::int64_t>(N) * H * W;
  std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor dx(grad_out.shape);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < N; ++n) {
      std::size_t base = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double dy = grad_out.data[base + i];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat_.data[base + i];
      }
    }
    gamma_.grad.data[c] += static_cast<float>(sum_dy_xhat);
    beta_.grad.data[c] += static_cast<float>(sum_dy);
    double g = gamma_.value.data[c];
    double inv_std = batch_inv_std_[c];
    for (int n = 0; n < N; ++n) {
      std::size_t base = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        double dy = grad_out.data[base + i];
        double xh = xhat_.data[base + i];
        dx.data[base + i] = static_cast<float>(
            g * inv_std * (dy - sum_dy / ns - xh * sum_dy_xhat / ns));
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::collect_buffers(std::vector<Tensor*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

Tensor ReLU::forward(const Tensor& x, bool train) {
  (void)train;
  Tensor out(x.shape);
  mask_.assign(x.data.size(), 0);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (x.data[i] > 0) {
      out.data[i] = x.data[i];
      mask_[i] = 1;
    }
  }
  return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    dx.data[i] = mask_[i] ? grad_out.data[i] : 0.0f;
  return dx;
}

MaxPool2d::MaxPool2d(int kernel, int stride, int pad)
    : k_(kernel), stride_(stride > 0 ? stride : kernel), pad_(pad) {}

Tensor MaxPool2d::forward(const Tensor& x, bool train) {
  (void)train;
  check_4d(x);
  in_shape_ = x.shape;
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Ho = conv_out_extent(H, k_, stride_, pad_);
  int Wo = conv_out_extent(W, k_, stride_, pad_);
  Tensor out({N, C, Ho, Wo});
  argmax_.assign(out.data.size(), -1);
  std::size_t i = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo, ++i) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_idx = -1;
          for (int ki = 0; ki < k_; ++ki) {
            int hi = ho * stride_ - pad_ + ki;
            if (hi < 0 || hi >= H) continue;
            for (int kj = 0; kj < k_; ++kj) {
              int wi = wo * stride_ - pad_ + kj;
              if (wi < 0 || wi >= W) continue;
              std::int64_t idx = static_cast<std::int64_t>(base) + hi * W + wi;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          }
          out.data[i] = best;
          argmax_[i] = best_idx;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    if (argmax_[i] >= 0) dx.data[argmax_[i]] += grad_out.data[i];
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool train) {
  (void)train;
  check_4d(x);
  in_shape_ = x.shape;
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::size_t plane = static_cast<std::size_t>(H) * W;
  Tensor out({N, C});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const float* p = x.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      out.data[static_cast<std::size_t>(n) * C + c] = static_cast<float>(sum / plane);
    }
  }
  return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  int N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
  std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      float g = grad_out.data[static_cast<std::size_t>(n) * C + c] / static_cast<float>(plane);
      float* p = dx.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = g;
    }
  }
  return dx;
}

Tensor Flatten::forward(const Tensor& x, bool train) {
  (void)train;
  in_shape_ = x.shape;
  Tensor out = x;
  int rest = static_cast<int>(x.numel() / x.dim(0));
  out.shape = {x.dim(0), rest};
  return out;
}

Tensor Flatten::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  dx.shape = in_shape_;
  return dx;
}

Linear::Linear(int in_features, int out_features, Rng& rng, std::string name)
    : in_f_(in_features), out_f_(out_features) {
  weight_ = make_param(name + ".weight", {out_f_, in_f_});
  bias_ = make_param(name + ".bias", {out_f_});
  he_normal(weight_.value, in_f_, rng);
}

Tensor Linear::forward(const Tensor& x, bool train) {
  (void)train;
  if (x.ndim() != 2 || x.dim(1) != in_f_) throw ValidationError("linear input shape mismatch");
  input_ = x;
  int N = x.dim(0);
  Tensor out({N, out_f_});
  Eigen::Map<const MatRM> xm(x.data.data(), N, in_f_);
  Eigen::Map<const MatRM> wm(weight_.value.data.data(), out_f_, in_f_);
  Eigen::Map<MatRM> om(out.data.data(), N, out_f_);
  om.noalias() = xm * wm.transpose();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_f_; ++o) out.data[static_cast<std::size_t>(n) * out_f_ + o] +=
        bias_.value.data[o];
  return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
  int N = input_.dim(0);
  Tensor dx(input_.shape);
  Eigen::Map<const MatRM> gm(grad_out.data.data(), N, out_f_);
  Eigen::Map<const MatRM> xm(input_.data.data(), N, in_f_);
  Eigen::Map<const MatRM> wm(weight_.value.data.data(), out_f_, in_f_);
  Eigen::Map<MatRM> dwm(weight_.grad.data.data(), out_f_, in_f_);
  Eigen::Map<MatRM> dxm(dx.data.data(), N, in_f_);
  dwm.noalias() += gm.transpose() * xm;
  for (int o = 0; o < out_f_; ++o) bias_.grad.data[o] += gm.col(o).sum();
  dxm.noalias() = gm * wm;
  return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

BasicBlock::BasicBlock(int in_channels, int out_channels, int stride, Rng& rng,
                       const std::string& name) {
  conv1_ = std::make_unique<Conv2d>(in_channels, out_channels, 3, stride, 1, rng, name + ".conv1");
  bn1_ = std::make_unique<BatchNorm2d>(out_channels, name + ".bn1");
  conv2_ = std::make_unique<Conv2d>(out_channels, out_channels, 3, 1, 1, rng, name + ".conv2");
  bn2_ = std::make_unique<BatchNorm2d>(out_channels, name + ".bn2");
  if (stride != 1 || in_channels != out_channels) {
    proj_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0, rng, name + ".proj");
    proj_bn_ = std::make_unique<BatchNorm2d>(out_channels, name + ".proj_bn");
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
  Tensor h = bn1_->forward(conv1_->forward(x, train), train);
  h = relu1_.forward(h, train);
  h = bn2_->forward(conv2_->forward(h, train), train);
  Tensor skip = proj_ ? proj_bn_->forward(proj_->forward(x, train), train) : x;
  sum_ = Tensor(h.shape);
  Tensor out(h.shape);
  for (std::size_t i = 0; i < h.data.size(); ++i) {
    float s = h.data[i] + skip.data[i];
    sum_.data[i] = s;
    out.data[i] = s > 0 ? s : 0.0f;
  }
  return out;
}

Tensor BasicBlock::backward(const Tensor& grad_out) {
  Tensor dsum(grad_out.shape);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    dsum.data[i] = sum_.data[i] > 0 ? grad_out.data[i] : 0.0f;
  Tensor dmain = conv1_->backward(bn1_->backward(relu1_.backward(
      conv2_->backward(bn2_->backward(dsum)))));
  Tensor dskip = proj_ ? proj_->backward(proj_bn_->backward(dsum)) : dsum;
  Tensor dx(dmain.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = dmain.data[i] + dskip.data[i];
  return dx;
}

void BasicBlock::collect_params(std::vector<Param*>& out) {
  conv1_->collect_params(out);
  bn1_->collect_params(out);
  conv2_->collect_params(out);
  bn2_->collect_params(out);
  if (proj_) {
    proj_->collect_params(out);
    proj_bn_->collect_params(out);
  }
}

void BasicBlock::collect_buffers(std::vector<Tensor*>& out) {
  bn1_->collect_buffers(out);
  bn2_->collect_buffers(out);
  if (proj_bn_) proj_bn_->collect_buffers(out);
}

Tensor Model::forward(const Tensor& x, bool train) {
  Tensor h = x;
  for (auto& layer : layers) h = layer->forward(h, train);
  return h;
}

Tensor Model::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Model::parameters() {
  std::vector<Param*> out;
  for (auto& layer : layers) layer->collect_params(out);
  return out;
}

std::vector<Tensor*> Model::buffers() {
  std::vector<Tensor*> out;
  for (auto& layer : layers) layer->collect_buffers(out);
  return out;
}

void Model::zero_grad() {
  for (Param* p : parameters()) p->grad.fill(0.0f);
}

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kSmallCnn: return "small_cnn";
    case Architecture::kResNet34: return "resnet34";
  }
  throw Error("bad architecture");
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "small_cnn") return Architecture::kSmallCnn;
  if (s == "resnet34") return Architecture::kResNet34;
  throw ConfigError("unknown architecture: " + s);
}

Model build_model(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (spec.input_size <= 0) throw ConfigError("input_size must be positive");
  Rng rng(hash_combine(splitmix64(spec.init_seed),
                       fnv1a64(to_string(spec.architecture))));
  Model m;
  if (spec.architecture == Architecture::kSmallCnn) {
    if (spec.input_size % 8 != 0)
      throw ConfigError("small_cnn input_size must be a multiple of 8");
    int chans[3] = {8, 16, 32};
    int in_c = 3;
    for (int b = 0; b < 3; ++b) {
      std::string tag = "block" + std::to_string(b);
      m.layers.push_back(std::make_unique<Conv2d>(in_c, chans[b], 3, 1, 1, rng, tag + ".conv"));
      m.layers.push_back(std::make_unique<BatchNorm2d>(chans[b], tag + ".bn"));
      m.layers.push_back(std::make_unique<ReLU>());
      m.layers.push_back(std::make_unique<MaxPool2d>(2));
      in_c = chans[b];
    }
    int spatial = spec.input_size / 8;
    m.layers.push_back(std::make_unique<Flatten>());
    m.layers.push_back(
        std::make_unique<Linear>(32 * spatial * spatial, spec.num_classes, rng, "head"));
  } else {
    m.layers.push_back(std::make_unique<Conv2d>(3, 64, 7, 2, 3, rng, "stem.conv"));
    m.layers.push_back(std::make_unique<BatchNorm2d>(64, "stem.bn"));
    m.layers.push_back(std::make_unique<ReLU>());
    m.layers.push_back(std::make_unique<MaxPool2d>(3, 2, 1));
    int stage_channels[4] = {64, 128, 256, 512};
    int stage_blocks[4] = {3, 4, 6, 3};
    int in_c = 64;
    for (int s = 0; s < 4; ++s) {
      for (int b = 0; b < stage_blocks[s]; ++b) {
        int stride = (s > 0 && b == 0) ? 2 : 1;
        std::string tag = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        m.layers.push_back(
            std::make_unique<BasicBlock>(in_c, stage_channels[s], stride, rng, tag));
        in_c = stage_channels[s];
      }
    }
    m.layers.push_back(std::make_unique<GlobalAvgPool>());
    m.layers.push_back(std::make_unique<Linear>(512, spec.num_classes, rng, "head"));
  }
  if (!spec.pretrained_weights.empty()) load_weights(m, spec.pretrained_weights);
  return m;
}

std::vector<std::vector<double>> softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw ValidationError("softmax expects [N, C] logits");
  int N = logits.dim(0), C = logits.dim(1);
  std::vector<std::vector<double>> probs(N, std::vector<double>(C));
  for (int n = 0; n < N; ++n) {
    const float* row = logits.data.data() + static_cast<std::size_t>(n) * C;
    double mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      probs[n][c] = std::exp(row[c] - mx);
      sum += probs[n][c];
    }
    for (int c = 0; c < C; ++c) probs[n][c] /= sum;
  }
  return probs;
}

Tensor softmax_backward(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::vector<double>>& dprobs) {
  if (probs.size() != dprobs.size()) throw ValidationError("softmax_backward size mismatch");
  int N = static_cast<int>(probs.size());
  int C = N > 0 ? static_cast<int>(probs[0].size()) : 0;
  Tensor dlogits({std::max(N, 1), std::max(C, 1)});
  dlogits.shape = {N, C};
  dlogits.data.assign(static_cast<std::size_t>(N) * C, 0.0f);
  for (int n = 0; n < N; ++n) {
    double dot = 0.0;
    for (int c = 0; c < C; ++c) dot += dprobs[n][c] * probs[n][c];
    for (int c = 0; c < C; ++c)
      dlogits.data[static_cast<std::size_t>(n) * C + c] =
          static_cast<float>(probs[n][c] * (dprobs[n][c] - dot));
  }
  return dlogits;
}

namespace {

constexpr char kWeightsMagic[4] = {'R', 'C', 'C', 'W'};

void write_string(std::ofstream& out, const std::string& s) {
  std::uint32_t len = static_cast<std::uint32_t>(s.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) throw ValidationError("corrupt weights file header");
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  std::uint32_t nd = static_cast<std::uint32_t>(t.shape.size());
  out.write(reinterpret_cast<const char*>(&nd), sizeof nd);
  for (int d : t.shape) {
    std::int32_t v = d;
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void read_tensor(std::ifstream& in, Tensor& t, const std::string& what) {
  std::uint32_t nd = 0;
  in.read(reinterpret_cast<char*>(&nd), sizeof nd);
  std::vector<int> shape(nd);
  for (std::uint32_t i = 0; i < nd; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    shape[i] = v;
  }
  if (!in) throw IoError("truncated weights file while reading " + what);
  if (shape != t.shape) throw ValidationError("weights shape mismatch for " + what);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!in) throw IoError("truncated weights file while reading " + what);
}

}  // namespace

void save_weights(Model& model, const std::filesystem::path& path,
                  const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights " + path.string());
  out.write(kWeightsMagic, 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  write_string(out, config_hash);
  write_string(out, kVersion);
  auto params = model.parameters();
  auto buffers = model.buffers();
  std::uint64_t np = params.size(), nb = buffers.size();
  out.write(reinterpret_cast<const char*>(&np), sizeof np);
  out.write(reinterpret_cast<const char*>(&nb), sizeof nb);
  for (Param* p : params) write_tensor(out, p->value);
  for (Tensor* b : buffers) write_tensor(out, *b);
  if (!out) throw IoError("write failed for weights " + path.string());
}

void load_weights(Model& model, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("weights file not found: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0)
    throw ValidationError("not a weights file: " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != 1) throw ValidationError("unsupported weights version");
  read_string(in);  // config hash
  read_string(in);  // code version
  auto params = model.parameters();
  auto buffers = model.buffers();
  std::uint64_t np = 0, nb = 0;
  in.read(reinterpret_cast<char*>(&np), sizeof np);
  in.read(reinterpret_cast<char*>(&nb), sizeof nb);
  if (np != params.size() || nb != buffers.size())
    throw ValidationError("weights file does not match model: " + path.string());
  for (Param* p : params) read_tensor(in, p->value, p->name);
  std::size_t i = 0;
  for (Tensor* b : buffers) read_tensor(in, *b, "buffer " + std::to_string(i++));
}

std::string read_weights_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("weights file not found: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0)
    throw ValidationError("not a weights file: " + path.string());
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  return read_string(in);
}

std::vector<Tensor> snapshot_state(Model& model) {
  std::vector<Tensor> state;
  for (Param* p : model.parameters()) state.push_back(p->value);
  for (Tensor* b : model.buffers()) state.push_back(*b);
  return state;
}

void restore_state(Model& model, const std::vector<Tensor>& state) {
  auto params = model.parameters();
  auto buffers = model.buffers();
  if (state.size() != params.size() + buffers.size())
    throw ValidationError("model state size mismatch");
  std::size_t i = 0;
  for (Param* p : params) p->value = state[i++];
  for (Tensor* b : buffers) *b = state[i++];
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    for (std::size_t j = 0; j < p->value.data.size(); ++j) {
      double g = p->grad.data[j];
      double m = beta1_ * m_[i].data[j] + (1.0 - beta1_) * g;
      double v = beta2_ * v_[i].data[j] + (1.0 - beta2_) * g * g;
      m_[i].data[j] = static_cast<float>(m);
      v_[i].data[j] = static_cast<float>(v);
      double update = lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
      p->value.data[j] = static_cast<float>(p->value.data[j] - update);
    }
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->grad.fill(0.0f);
}

}  // namespace rcc::nn
