#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rcc/rng.hpp"
#include "rcc/tensor.hpp"

namespace rcc::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  // Learned parameters, in a stable order.
  virtual void collect_params(std::vector<Param*>& out) { (void)out; }
  // Non-learned state that belongs in a checkpoint (BN running stats).
  virtual void collect_buffers(std::vector<Tensor*>& out) { (void)out; }
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng,
         std::string name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  Param weight_;  // [out_c, in_c*k*k]
  Param bias_;    // [out_c]
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(int channels, std::string name, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;

 private:
  int channels_;
  double momentum_, eps_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor input_, xhat_;
  std::vector<double> batch_mean_, batch_inv_std_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<char> mask_;
};

class MaxPool2d : public Layer {
 public:
  explicit MaxPool2d(int kernel, int stride = 0, int pad = 0);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  int k_, stride_, pad_;
  std::vector<int> in_shape_;
  std::vector<std::int64_t> argmax_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<int> in_shape_;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  std::vector<int> in_shape_;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, Rng& rng, std::string name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;

 private:
  int in_f_, out_f_;
  Param weight_;  // [out_f, in_f]
  Param bias_;
  Tensor input_;
};

// Two 3x3 conv residual block with optional strided 1x1 projection skip.
class BasicBlock : public Layer {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, Rng& rng, const std::string& name);
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  void collect_buffers(std::vector<Tensor*>& out) override;

 private:
  std::unique_ptr<Conv2d> conv1_, conv2_, proj_;
  std::unique_ptr<BatchNorm2d> bn1_, bn2_, proj_bn_;
  ReLU relu1_;
  Tensor sum_;  // pre-activation of the output ReLU
};

class Model {
 public:
  std::vector<std::unique_ptr<Layer>> layers;

  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& grad_out);
  std::vector<Param*> parameters();
  std::vector<Tensor*> buffers();
  void zero_grad();
};

enum class Architecture { kSmallCnn, kResNet34 };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct ModelSpec {
  Architecture architecture = Architecture::kSmallCnn;
  int input_size = 224;
  int num_classes = 2;
  std::uint64_t init_seed = 0;
  // Empty means random init; otherwise a weights file to load after build.
  std::string pretrained_weights;
};

Model build_model(const ModelSpec& spec);

// Row-wise softmax of [N, C] logits in double precision.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

// Converts dL/dprobs into dL/dlogits through the softmax Jacobian.
Tensor softmax_backward(const std::vector<std::vector<double>>& probs,
                        const std::vector<std::vector<double>>& dprobs);

// Flat binary dump of parameter values and buffers, shape-checked on load.
// The header carries the producing config's hash and the code version.
void save_weights(Model& model, const std::filesystem::path& path,
                  const std::string& config_hash = "");
void load_weights(Model& model, const std::filesystem::path& path);
std::string read_weights_hash(const std::filesystem::path& path);
std::vector<Tensor> snapshot_state(Model& model);
void restore_state(Model& model, const std::vector<Tensor>& state);

class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace rcc::nn
