#include "rcc/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/core.hpp>

#include "rcc/errors.hpp"
#include "rcc/tensor.hpp"

namespace rcc::ssl {

void validate(const SSLConfig& config) {
  if (config.K < 1) throw ConfigError("ssl K must be >= 1");
  if (!(config.T > 0.0 && config.T <= 1.0)) throw ConfigError("ssl T must be in (0, 1]");
  if (!(config.alpha > 0.0)) throw ConfigError("ssl alpha must be positive");
  if (config.lambda_max < 0.0) throw ConfigError("ssl lambda_max must be >= 0");
  if (config.ramp_steps < 1) throw ConfigError("ssl ramp_steps must be >= 1");
  if (config.finetune_lambda < 0.0) throw ConfigError("ssl finetune_lambda must be >= 0");
}

double default_lambda_max(int num_classes) { return 75.0 * num_classes / 10.0; }

void check_prob_vector(const ProbVector& p) {
  if (p.empty()) throw ValidationError("empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    if (v < -1e-9 || std::isnan(v)) throw ValidationError("probability entries must be >= 0");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ValidationError("probability vector must sum to 1, got " + std::to_string(sum));
}

ProbVector one_hot(int label, int num_classes) {
  if (label < 0 || label >= num_classes)
    throw ValidationError("one_hot label out of range: " + std::to_string(label));
  ProbVector p(num_classes, 0.0);
  p[label] = 1.0;
  return p;
}

cv::Mat augment(const cv::Mat& patch, std::uint64_t seed) {
  if (patch.empty()) throw ValidationError("cannot augment an empty patch");
  Rng rng(splitmix64(seed));
  int quarter_turns = static_cast<int>(rng.uniform_index(4));
  bool hflip = rng.bernoulli(0.5);
  bool vflip = rng.bernoulli(0.5);
  cv::Mat out;  // rotate into a fresh buffer so the caller's patch is never mutated
  switch (quarter_turns) {
    case 1: cv::rotate(patch, out, cv::ROTATE_90_CLOCKWISE); break;
    case 2: cv::rotate(patch, out, cv::ROTATE_180); break;
    case 3: cv::rotate(patch, out, cv::ROTATE_90_COUNTERCLOCKWISE); break;
    default: out = patch.clone(); break;
  }
  if (hflip) cv::flip(out, out, 1);
  if (vflip) cv::flip(out, out, 0);
  return out;
}

ProbVector sharpen(const ProbVector& p, double T) {
  check_prob_vector(p);
  if (!(T > 0.0 && T <= 1.0)) throw ValidationError("sharpen temperature must be in (0, 1]");
  ProbVector out(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::pow(std::max(p[i], 0.0), 1.0 / T);
    sum += out[i];
  }
  if (sum <= 0.0) throw ValidationError("sharpen: all-zero vector");
  for (double& v : out) v /= sum;
  return out;
}

ProbVector guess_label(const BatchPredictFn& predict, const cv::Mat& patch, int K, double T,
                       std::uint64_t seed) {
  if (K < 1) throw ValidationError("guess_label requires K >= 1");
  Rng rng(splitmix64(seed));
  std::vector<cv::Mat> views;
  views.reserve(K);
  for (int k = 0; k < K; ++k) views.push_back(augment(patch, rng.raw()));
  std::vector<ProbVector> preds = predict(views);
  if (preds.size() != static_cast<std::size_t>(K))
    throw ValidationError("predict returned wrong batch size in guess_label");
  std::size_t C = preds[0].size();
  ProbVector mean(C, 0.0);
  for (const ProbVector& q : preds) {
    if (q.size() != C) throw ValidationError("inconsistent class count in guess_label");
    for (std::size_t c = 0; c < C; ++c) mean[c] += q[c] / K;
  }
  return sharpen(mean, T);
}

double mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ValidationError("mixup alpha must be positive");
  double lam = rng.beta(alpha, alpha);
  return std::max(lam, 1.0 - lam);
}

MixedSample mix(const std::vector<float>& x1, const ProbVector& p1, const std::vector<float>& x2,
                const ProbVector& p2, double lam) {
  if (x1.size() != x2.size() || p1.size() != p2.size())
    throw ValidationError("mixup shape mismatch");
  MixedSample out;
  out.x.resize(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i)
    out.x[i] = static_cast<float>(lam * x1[i] + (1.0 - lam) * x2[i]);
  out.target.resize(p1.size());
  for (std::size_t i = 0; i < p1.size(); ++i) out.target[i] = lam * p1[i] + (1.0 - lam) * p2[i];
  return out;
}

MixedSample mixup(const std::vector<float>& x1, const ProbVector& p1, const std::vector<float>& x2,
                  const ProbVector& p2, double alpha, Rng& rng) {
  return mix(x1, p1, x2, p2, mixup_lambda(alpha, rng));
}

MixedBatch mixmatch(const std::vector<LabeledPatch>& labeled, const std::vector<cv::Mat>& unlabeled,
                    const BatchPredictFn& predict, const SSLConfig& config, int num_classes,
                    std::uint64_t seed) {
  validate(config);
  if (labeled.empty()) throw ValidationError("mixmatch requires a non-empty labeled batch");
  Rng root(splitmix64(seed));
  Rng aug_rng = root.child(1);
  Rng shuffle_rng = root.child(2);
  Rng lambda_rng = root.child(3);

  struct PoolEntry {
    std::vector<float> x;
    ProbVector target;
  };
  std::vector<PoolEntry> pool;
  pool.reserve(labeled.size() + unlabeled.size() * config.K);

  for (const LabeledPatch& lp : labeled) {
    cv::Mat view = augment(lp.pixels, aug_rng.raw());
    pool.push_back({nn::to_chw_float(view), one_hot(lp.label, num_classes)});
  }
  std::size_t n_labeled = labeled.size();

  // K augmented copies per unlabeled patch, all sharing one guessed target.
  std::vector<std::vector<cv::Mat>> views(unlabeled.size());
  std::vector<cv::Mat> flat_views;
  for (std::size_t j = 0; j < unlabeled.size(); ++j) {
    for (int k = 0; k < config.K; ++k) {
      views[j].push_back(augment(unlabeled[j], aug_rng.raw()));
      flat_views.push_back(views[j].back());
    }
  }
  if (!unlabeled.empty()) {
    std::vector<ProbVector> preds = predict(flat_views);
    if (preds.size() != flat_views.size())
      throw ValidationError("predict returned wrong batch size in mixmatch");
    for (std::size_t j = 0; j < unlabeled.size(); ++j) {
      ProbVector mean(num_classes, 0.0);
      for (int k = 0; k < config.K; ++k) {
        const ProbVector& q = preds[j * config.K + k];
        if (q.size() != static_cast<std::size_t>(num_classes))
          throw ValidationError("predict class count mismatch in mixmatch");
        for (int c = 0; c < num_classes; ++c) mean[c] += q[c] / config.K;
      }
      ProbVector guess = sharpen(mean, config.T);
      for (int k = 0; k < config.K; ++k)
        pool.push_back({nn::to_chw_float(views[j][k]), guess});
    }
  }

  std::vector<std::size_t> perm(pool.size());
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_rng.shuffle(perm);

  MixedBatch out;
  out.labeled.reserve(n_labeled);
  for (std::size_t i = 0; i < n_labeled; ++i) {
    const PoolEntry& w = pool[perm[i]];
    double lam = mixup_lambda(config.alpha, lambda_rng);
    out.labeled.push_back(mix(pool[i].x, pool[i].target, w.x, w.target, lam));
  }
  out.unlabeled.reserve(pool.size() - n_labeled);
  for (std::size_t m = n_labeled; m < pool.size(); ++m) {
    const PoolEntry& w = pool[perm[m]];
    double lam = mixup_lambda(config.alpha, lambda_rng);
    out.unlabeled.push_back(mix(pool[m].x, pool[m].target, w.x, w.target, lam));
  }
  return out;
}

double cross_entropy(const ProbVector& target, const ProbVector& pred) {
  if (target.size() != pred.size()) throw ValidationError("cross_entropy size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    loss -= target[i] * std::log(std::max(pred[i], 1e-12));
  return loss;
}

namespace {

void check_loss_inputs(const std::vector<ProbVector>& pred_l,
                       const std::vector<ProbVector>& targets_l,
                       const std::vector<ProbVector>& pred_u,
                       const std::vector<ProbVector>& targets_u, int C) {
  if (pred_l.empty()) throw ValidationError("ssl_loss requires a non-empty labeled set");
  if (pred_l.size() != targets_l.size() || pred_u.size() != targets_u.size())
    throw ValidationError("ssl_loss size mismatch");
  if (C < 2) throw ValidationError("ssl_loss needs at least 2 classes");
  auto check_set = [&](const std::vector<ProbVector>& preds,
                       const std::vector<ProbVector>& targets) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].size() != static_cast<std::size_t>(C) ||
          targets[i].size() != static_cast<std::size_t>(C))
        throw ValidationError("ssl_loss class count mismatch");
      check_prob_vector(preds[i]);
      check_prob_vector(targets[i]);
    }
  };
  check_set(pred_l, targets_l);
  check_set(pred_u, targets_u);
}

}  // namespace

double ssl_loss(const std::vector<ProbVector>& pred_l, const std::vector<ProbVector>& targets_l,
                const std::vector<ProbVector>& pred_u, const std::vector<ProbVector>& targets_u,
                double lambda, int C) {
  check_loss_inputs(pred_l, targets_l, pred_u, targets_u, C);
  double labeled = 0.0;
  for (std::size_t i = 0; i < pred_l.size(); ++i)
    labeled += cross_entropy(targets_l[i], pred_l[i]);
  labeled /= static_cast<double>(pred_l.size());
  double unlabeled = 0.0;
  if (!pred_u.empty()) {
    for (std::size_t j = 0; j < pred_u.size(); ++j)
      for (int c = 0; c < C; ++c) {
        double d = targets_u[j][c] - pred_u[j][c];
        unlabeled += d * d;
      }
    unlabeled /= static_cast<double>(C) * static_cast<double>(pred_u.size());
  }
  return labeled + lambda * unlabeled;
}

SSLLossGrad ssl_loss_grad(const std::vector<ProbVector>& pred_l,
                          const std::vector<ProbVector>& targets_l,
                          const std::vector<ProbVector>& pred_u,
                          const std::vector<ProbVector>& targets_u, double lambda, int C) {
  SSLLossGrad out;
  out.loss = ssl_loss(pred_l, targets_l, pred_u, targets_u, lambda, C);
  double nl = static_cast<double>(pred_l.size());
  out.dpred_l.resize(pred_l.size());
  for (std::size_t i = 0; i < pred_l.size(); ++i) {
    out.dpred_l[i].assign(C, 0.0);
    for (int c = 0; c < C; ++c)
      if (pred_l[i][c] > 1e-12) out.dpred_l[i][c] = -targets_l[i][c] / pred_l[i][c] / nl;
  }
  out.dpred_u.resize(pred_u.size());
  if (!pred_u.empty()) {
    double scale = lambda / (static_cast<double>(C) * static_cast<double>(pred_u.size()));
    for (std::size_t j = 0; j < pred_u.size(); ++j) {
      out.dpred_u[j].assign(C, 0.0);
      for (int c = 0; c < C; ++c)
        out.dpred_u[j][c] = scale * 2.0 * (pred_u[j][c] - targets_u[j][c]);
    }
  }
  return out;
}

double lambda_schedule(std::int64_t step, Phase phase, const SSLConfig& config) {
  validate(config);
  if (step < 0) throw ValidationError("lambda_schedule step must be >= 0");
  if (phase == Phase::kFinetune) return config.finetune_lambda;
  double frac = static_cast<double>(step) / static_cast<double>(config.ramp_steps);
  return config.lambda_max * std::min(frac, 1.0);
}

}  // namespace rcc::ssl
