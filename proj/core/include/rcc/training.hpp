#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "rcc/nn.hpp"
#include "rcc/patching.hpp"
#include "rcc/slide.hpp"
#include "rcc/ssl.hpp"

#include "json.hpp"

namespace rcc::train {

struct TrainConfig {
  double lr = 0.001;
  int epochs = 25;
  int batch_labeled = 16;
  int batch_unlabeled = 16;
  std::uint64_t seed = 0;
  int plateau_patience = 5;
  double plateau_factor = 10.0;
  int finetune_epochs = 5;
  std::string mode;  // consumer-specific training mode tag
};

void validate(const TrainConfig& config);

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
  double lambda = 0.0;
};

struct Checkpoint {
  nn::ModelSpec spec;
  std::vector<nn::Tensor> state;  // parameter values then buffers
  nlohmann::json config;          // training config snapshot
  std::vector<HistoryRow> history;
  std::string phase;  // "initial" or "finetune"
  double best_metric = 0.0;
  int best_epoch = 0;
  std::string config_hash;
};

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
nn::Model model_from_checkpoint(const Checkpoint& cp);

// Patches held in RAM at training resolution (8-bit RGB, resized).
struct PatchDataset {
  int out_size = 0;
  std::vector<cv::Mat> patches;
  std::vector<int> labels;  // class index, -1 when unlabeled
  std::vector<int> z;       // slide subtype 1..3 or 0
  std::size_t size() const { return patches.size(); }
};

using LabelFn = std::function<int(const patching::PatchRecord&)>;

PatchDataset load_dataset(
    const patching::PatchManifest& manifest,
    const std::map<std::string, std::shared_ptr<slideio::SlideSource>>& sources,
    const LabelFn& label_fn);

// Detector label convention: pos -> 1, neg -> 0, everything else -1.
int binary_label(const patching::PatchRecord& rec);

std::vector<float> augment_to_float(const cv::Mat& patch, std::uint64_t seed);

// Eval-mode forward wrapped for label guessing: patches in, softmax rows out.
ssl::BatchPredictFn make_eval_predict_fn(nn::Model& model);

std::vector<ssl::ProbVector> predict_dataset(nn::Model& model, const PatchDataset& data,
                                             int batch_size = 64);

double accuracy(const std::vector<ssl::ProbVector>& probs, const std::vector<int>& labels);
double mean_cross_entropy(const std::vector<ssl::ProbVector>& probs,
                          const std::vector<int>& labels, int num_classes);
int argmax(const ssl::ProbVector& p);

// Divides the learning rate by `factor` after `patience` epochs without
// improvement of the monitored validation loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, int patience);
  // Returns true when the rate was just reduced.
  bool observe(double val_loss, nn::Adam& opt);

 private:
  double factor_;
  int patience_;
  double best_;
  int since_ = 0;
};

void write_history_csv(const std::vector<HistoryRow>& rows, const std::filesystem::path& path,
                       const std::string& config_hash);
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

}  // namespace rcc::train
