#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rcc/patching.hpp"
#include "rcc/slide.hpp"
#include "rcc/ssl.hpp"
#include "rcc/training.hpp"

namespace rcc::detector {

enum class TrainMode { kLabeledOnly, kFullySupervised, kSsl, kSslFinetune };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

struct DetectorData {
  train::PatchDataset labeled;    // binary labels: 1 cancer, 0 normal
  train::PatchDataset unlabeled;  // ssl modes only
  train::PatchDataset validation;
};

// Initial training phase. labeled_only and fully_supervised run plain
// cross-entropy on their labeled set; ssl modes combine mixmatch batches
// under the ramped lambda schedule. Best epoch by validation AUC.
train::Checkpoint train_detector(const DetectorData& data, const nn::ModelSpec& spec,
                                 const train::TrainConfig& config,
                                 const ssl::SSLConfig& ssl_config,
                                 const std::string& config_hash = "");

// Extension-set phase: continues SSL training with constant
// finetune_lambda, keeping the labeled supervised term. The incoming
// weights count as the epoch-0 candidate, so the result never scores
// below the starting point on validation.
train::Checkpoint finetune_detector(const train::Checkpoint& cp,
                                    const train::PatchDataset& extension_unlabeled,
                                    const train::PatchDataset& labeled,
                                    const train::PatchDataset& validation,
                                    const train::TrainConfig& config,
                                    const ssl::SSLConfig& ssl_config,
                                    const std::string& config_hash = "");

// Eval-mode inference in manifest order, no augmentation.
std::vector<ssl::ProbVector> predict_patches(nn::Model& model, const train::PatchDataset& data,
                                             int batch_size = 64);

struct Hitmap {
  int rows = 0;
  int cols = 0;
  std::int64_t stride = 0;
  std::int64_t src_size = 0;  // effective window edge at base magnification
  std::vector<double> values;  // row-major, NaN for background cells

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols + j]; }
};

Hitmap generate_hitmap(const slideio::SlideSource& slide, nn::Model& model, std::int64_t stride,
                       const patching::FilterParams& filter, std::int64_t src_size, int out_size,
                       int batch_size = 64);

void save_hitmap_csv(const Hitmap& map, const std::filesystem::path& path,
                     const std::string& config_hash);
Hitmap load_hitmap_csv(const std::filesystem::path& path);

cv::Mat render_hitmap_overlay(const slideio::SlideSource& slide, const Hitmap& map,
                              int thumb_max = 1024);
// PNG plus a .meta.json sidecar carrying version and config hash.
void save_overlay_png(const cv::Mat& rgb, const std::filesystem::path& path,
                      const std::string& config_hash);

}  // namespace rcc::detector
