// Microbenchmarks for the pipeline hot paths: model passes, batch mixing,
// losses, vote aggregation, AUC and synthetic slide access.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include <opencv2/core.hpp>

#include "rcc/metrics.hpp"
#include "rcc/nn.hpp"
#include "rcc/patching.hpp"
#include "rcc/ssl.hpp"
#include "rcc/subtyping.hpp"
#include "rcc/synthetic.hpp"
#include "rcc/tensor.hpp"

using namespace rcc;

namespace {

nn::Model bench_model() {
  nn::ModelSpec spec;
  spec.input_size = 32;
  spec.num_classes = 2;
  spec.init_seed = 1;
  return nn::build_model(spec);
}

nn::Tensor random_batch(int n) {
  nn::Tensor x({n, 3, 32, 32});
  std::mt19937 gen(2);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  for (float& v : x.data) v = uni(gen);
  return x;
}

cv::Mat random_patch(std::uint32_t seed) {
  cv::Mat m(32, 32, CV_8UC3);
  std::mt19937 gen(seed);
  for (int r = 0; r < m.rows; ++r) {
    auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < m.cols; ++c)
      row[c] = cv::Vec3b(gen() % 256, gen() % 256, gen() % 256);
  }
  return m;
}

std::vector<ssl::ProbVector> random_rows(int n, int C, std::uint32_t seed) {
  std::mt19937_64 gen(seed);
  std::exponential_distribution<double> exp1(1.0);
  std::vector<ssl::ProbVector> rows;
  rows.reserve(n);
  for (int i = 0; i < n; ++i) {
    ssl::ProbVector p(C);
    double sum = 0.0;
    for (double& v : p) {
      v = exp1(gen);
      sum += v;
    }
    for (double& v : p) v /= sum;
    rows.push_back(std::move(p));
  }
  return rows;
}

void BM_SmallCnnForward(benchmark::State& state) {
  nn::Model model = bench_model();
  const nn::Tensor x = random_batch(16);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, false));
}
BENCHMARK(BM_SmallCnnForward)->Unit(benchmark::kMillisecond);

void BM_SmallCnnTrainStep(benchmark::State& state) {
  nn::Model model = bench_model();
  const nn::Tensor x = random_batch(16);
  for (auto _ : state) {
    model.zero_grad();
    nn::Tensor logits = model.forward(x, true);
    std::vector<std::vector<double>> probs = nn::softmax_rows(logits);
    std::vector<std::vector<double>> dprobs(probs.size(), std::vector<double>(2, 0.0));
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const int y = static_cast<int>(i % 2);
      dprobs[i][y] = -1.0 / std::max(probs[i][y], 1e-12) / static_cast<double>(probs.size());
    }
    benchmark::DoNotOptimize(model.backward(nn::softmax_backward(probs, dprobs)));
  }
}
BENCHMARK(BM_SmallCnnTrainStep)->Unit(benchmark::kMillisecond);

void BM_MixmatchBatch(benchmark::State& state) {
  std::vector<ssl::LabeledPatch> labeled;
  std::vector<cv::Mat> unlabeled;
  for (int i = 0; i < 16; ++i) {
    labeled.push_back({random_patch(100 + i), i % 2});
    unlabeled.push_back(random_patch(200 + i));
  }
  const ssl::SSLConfig cfg;
  const ssl::BatchPredictFn predict = [](const std::vector<cv::Mat>& batch) {
    return std::vector<ssl::ProbVector>(batch.size(), ssl::ProbVector{0.6, 0.4});
  };
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(ssl::mixmatch(labeled, unlabeled, predict, cfg, 2, seed++));
}
BENCHMARK(BM_MixmatchBatch)->Unit(benchmark::kMillisecond);

void BM_SslLossGrad(benchmark::State& state) {
  const auto pred_l = random_rows(64, 2, 10);
  const auto targets_l = random_rows(64, 2, 11);
  const auto pred_u = random_rows(64, 2, 12);
  const auto targets_u = random_rows(64, 2, 13);
  for (auto _ : state)
    benchmark::DoNotOptimize(ssl::ssl_loss_grad(pred_l, targets_l, pred_u, targets_u, 15.0, 2));
}
BENCHMARK(BM_SslLossGrad);

void BM_HybridLossGrad(benchmark::State& state) {
  const auto pred = random_rows(64, 4, 20);
  std::vector<subtyping::HybridTarget> targets;
  for (int i = 0; i < 64; ++i) {
    const int z = 1 + i % 3;
    targets.push_back({(i % 2 == 0) ? 0 : z, z});
  }
  for (auto _ : state) benchmark::DoNotOptimize(subtyping::hybrid_loss_grad(pred, targets, 5.0));
}
BENCHMARK(BM_HybridLossGrad);

void BM_AggregateVotes(benchmark::State& state) {
  const auto rows = random_rows(1024, 4, 30);
  for (auto _ : state) benchmark::DoNotOptimize(subtyping::aggregate_votes(rows));
}
BENCHMARK(BM_AggregateVotes);

void BM_Auc(benchmark::State& state) {
  std::mt19937_64 gen(40);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> scores(10000);
  std::vector<int> labels(10000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = uni(gen);
    labels[i] = static_cast<int>(gen() % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(scores, labels));
}
BENCHMARK(BM_Auc);

void BM_SyntheticRead(benchmark::State& state) {
  slideio::SyntheticSlideSpec spec;
  spec.slide_id = "bench";
  spec.width = 1024;
  spec.height = 1024;
  spec.seed = 7;
  const slideio::SyntheticResult res = slideio::generate_synthetic_slide(spec);
  std::int64_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(res.slide->read_region((i % 4) * 256, ((i / 4) % 4) * 256, 256, 256));
    ++i;
  }
}
BENCHMARK(BM_SyntheticRead)->Unit(benchmark::kMillisecond);

void BM_ExtractUnlabeled(benchmark::State& state) {
  slideio::SyntheticSlideSpec spec;
  spec.slide_id = "bench";
  spec.width = 1024;
  spec.height = 1024;
  spec.seed = 7;
  const slideio::SyntheticResult res = slideio::generate_synthetic_slide(spec);
  const patching::FilterParams params;
  for (auto _ : state)
    benchmark::DoNotOptimize(patching::extract_unlabeled_patches(*res.slide, 256, params, 256, 32));
}
BENCHMARK(BM_ExtractUnlabeled)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
