#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rcc/patching.hpp"
#include "rcc/slide.hpp"
#include "rcc/ssl.hpp"
#include "rcc/training.hpp"

namespace rcc::subtyping {

// y: four-class patch label (0 normal, 1 ccRCC, 2 pRCC, 3 chRCC).
// z: the owning slide's diagnosis, always in {1,2,3}; y != 0 implies y == z.
struct HybridTarget {
  int y = 0;
  int z = 1;
};

enum class SubtypeMode { kCe3Class, kCe4Class, kHybrid4Class };

std::string to_string(SubtypeMode mode);
SubtypeMode subtype_mode_from_string(const std::string& s);

struct SubtypeConfig {
  double mu = 5.0;
  double detector_threshold = 0.5;
  SubtypeMode mode = SubtypeMode::kHybrid4Class;
};

void validate(const SubtypeConfig& config);

struct GeneratedLabels {
  patching::PatchManifest manifest;  // labels rewritten to normal / subtype
  std::vector<double> cancer_probs;  // detector output per record, same order
};

// Runs the diagnosis-matched binary detector on every patch; label becomes
// the slide subtype where cancer probability >= threshold, normal below.
GeneratedLabels generate_subtype_labels(
    std::map<int, nn::Model>& detectors, const patching::PatchManifest& manifest,
    const std::map<std::string, std::shared_ptr<slideio::SlideSource>>& sources,
    double threshold);

// s_i = p_i for subtypes i != z, s_z = p_z + p_0. Three-class output.
ssl::ProbVector fold_subtype_probs(const ssl::ProbVector& p4, int z);

// Mean over the batch of H(one_hot(y), p) + mu * H(one_hot(z), fold(p, z)).
double hybrid_loss(const std::vector<ssl::ProbVector>& pred,
                   const std::vector<HybridTarget>& targets, double mu);

struct HybridLossGrad {
  double loss = 0.0;
  std::vector<ssl::ProbVector> dpred;
};

HybridLossGrad hybrid_loss_grad(const std::vector<ssl::ProbVector>& pred,
                                const std::vector<HybridTarget>& targets, double mu);

// Patch datasets carry y in labels and the diagnosis in z. ce_3class trains
// a 3-way model on z, ce_4class plain cross-entropy on y, hybrid_4class the
// hybrid loss on (y, z). Best epoch by validation accuracy.
train::Checkpoint train_subtyper(const train::PatchDataset& data,
                                 const train::PatchDataset& validation,
                                 const nn::ModelSpec& spec, const SubtypeConfig& subtype_config,
                                 const train::TrainConfig& config,
                                 const std::string& config_hash = "");

struct SlidePrediction {
  std::string slide_id;
  std::vector<std::int64_t> xs, ys;  // patch origins, for evidential output
  std::int64_t src_size = 0;
  std::vector<int> patch_classes;           // argmax per patch, 0..3
  std::vector<ssl::ProbVector> patch_probs; // four-class rows
  std::vector<std::int64_t> votes;          // per class 0..3, sums to patch count
  int subtype = 0;                          // final verdict, 1..3
  bool tie_break = false;
  bool fallback = false;  // every patch predicted normal
};

// Majority vote over per-patch argmax classes, normal patches excluded.
// Ties go to the larger summed probability, then fixed class order. When
// everything is normal, the subtype with the largest mean probability wins
// and the fallback flag is set.
SlidePrediction aggregate_votes(const std::vector<ssl::ProbVector>& patch_probs);

// Inference over one slide's patches followed by aggregation. Three-class
// models are widened with a zero normal column first.
SlidePrediction predict_slide(nn::Model& model, const train::PatchDataset& patches,
                              const std::vector<patching::PatchRecord>& records);

void save_evidence_jsonl(const SlidePrediction& pred, const std::filesystem::path& path,
                         const std::string& config_hash);
// Reads xs/ys/classes/probs back; votes and the verdict are not recomputed.
// When config_hash_out is given it receives the header hash.
SlidePrediction load_evidence_jsonl(const std::filesystem::path& path,
                                    std::string* config_hash_out = nullptr);
void save_verdict_json(const SlidePrediction& pred, const std::filesystem::path& path,
                       const std::string& config_hash);
SlidePrediction load_verdict_json(const std::filesystem::path& path);

cv::Mat render_subtype_overlay(const slideio::SlideSource& slide, const SlidePrediction& pred,
                               int thumb_max = 1024);

}  // namespace rcc::subtyping
