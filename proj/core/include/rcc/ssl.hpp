#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <opencv2/core.hpp>

#include "rcc/rng.hpp"

namespace rcc::ssl {

struct SSLConfig {
  int K = 2;                     // augmentations per unlabeled sample
  double T = 0.5;                // sharpening temperature, (0, 1]
  double alpha = 0.75;           // MixUp Beta parameter
  double lambda_max = 15.0;      // unlabeled-loss weight ceiling
  std::int64_t ramp_steps = 1024;
  double finetune_lambda = 15.0;
};

void validate(const SSLConfig& config);

// Scaling rule for the unlabeled-loss ceiling: 75 * C / 10.
double default_lambda_max(int num_classes);

using ProbVector = std::vector<double>;

void check_prob_vector(const ProbVector& p);
ProbVector one_hot(int label, int num_classes);

// Orientation-safe augmentation: 90-degree rotation multiple plus optional
// flips, fully determined by seed.
cv::Mat augment(const cv::Mat& patch, std::uint64_t seed);

// p_i^(1/T) normalized. T = 1 is the identity.
ProbVector sharpen(const ProbVector& p, double T);

// Model evaluation hook: batch of patches to per-patch class probabilities.
using BatchPredictFn = std::function<std::vector<ProbVector>(const std::vector<cv::Mat>&)>;

// sharpen(mean of model outputs over K augmentations, T). No gradient.
ProbVector guess_label(const BatchPredictFn& predict, const cv::Mat& patch, int K, double T,
                       std::uint64_t seed);

struct MixedSample {
  std::vector<float> x;  // CHW pixels in [0,1]
  ProbVector target;
};

// lambda'' = max(lambda', 1 - lambda') with lambda' ~ Beta(alpha, alpha),
// so the mix stays closer to its first argument.
double mixup_lambda(double alpha, Rng& rng);

MixedSample mix(const std::vector<float>& x1, const ProbVector& p1, const std::vector<float>& x2,
                const ProbVector& p2, double lam);

MixedSample mixup(const std::vector<float>& x1, const ProbVector& p1, const std::vector<float>& x2,
                  const ProbVector& p2, double alpha, Rng& rng);

struct LabeledPatch {
  cv::Mat pixels;
  int label = 0;
};

struct MixedBatch {
  std::vector<MixedSample> labeled;    // D_l'
  std::vector<MixedSample> unlabeled;  // D_u', size |unlabeled input| * K
};

// Full procedure: augment labeled once and unlabeled K times, guess
// sharpened targets for the unlabeled copies, shuffle everything into a
// pool, then mix labeled entries against the first |D_l| pool entries and
// unlabeled copies against the rest.
MixedBatch mixmatch(const std::vector<LabeledPatch>& labeled, const std::vector<cv::Mat>& unlabeled,
                    const BatchPredictFn& predict, const SSLConfig& config, int num_classes,
                    std::uint64_t seed);

// Soft-target cross-entropy with log clamped at 1e-12.
double cross_entropy(const ProbVector& target, const ProbVector& pred);

// Mean labeled cross-entropy plus lambda-weighted mean squared error of the
// unlabeled guesses, the latter normalized by class count C.
double ssl_loss(const std::vector<ProbVector>& pred_l, const std::vector<ProbVector>& targets_l,
                const std::vector<ProbVector>& pred_u, const std::vector<ProbVector>& targets_u,
                double lambda, int C);

struct SSLLossGrad {
  double loss = 0.0;
  std::vector<ProbVector> dpred_l;
  std::vector<ProbVector> dpred_u;
};

SSLLossGrad ssl_loss_grad(const std::vector<ProbVector>& pred_l,
                          const std::vector<ProbVector>& targets_l,
                          const std::vector<ProbVector>& pred_u,
                          const std::vector<ProbVector>& targets_u, double lambda, int C);

enum class Phase { kInitial, kFinetune };

// Initial phase ramps linearly from 0 to lambda_max over ramp_steps;
// finetune phase holds finetune_lambda constant.
double lambda_schedule(std::int64_t step, Phase phase, const SSLConfig& config);

}  // namespace rcc::ssl
