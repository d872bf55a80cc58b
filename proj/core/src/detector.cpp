#include "rcc/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rcc/errors.hpp"
#include "rcc/hashing.hpp"
#include "rcc/log.hpp"
#include "rcc/metrics.hpp"
#include "rcc/version.hpp"

#include "json.hpp"

namespace rcc::detector {

using nlohmann::json;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kLabeledOnly: return "labeled_only";
    case TrainMode::kFullySupervised: return "fully_supervised";
    case TrainMode::kSsl: return "ssl";
    case TrainMode::kSslFinetune: return "ssl_finetune";
  }
  throw Error("bad train mode");
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "labeled_only") return TrainMode::kLabeledOnly;
  if (s == "fully_supervised") return TrainMode::kFullySupervised;
  if (s == "ssl") return TrainMode::kSsl;
  if (s == "ssl_finetune") return TrainMode::kSslFinetune;
  throw ConfigError("unknown detector train mode: " + s);
}

namespace {

json config_snapshot(const train::TrainConfig& cfg, const ssl::SSLConfig& scfg,
                     const std::string& mode) {
  json j;
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["batch_labeled"] = cfg.batch_labeled;
  j["batch_unlabeled"] = cfg.batch_unlabeled;
  j["seed"] = cfg.seed;
  j["plateau_patience"] = cfg.plateau_patience;
  j["plateau_factor"] = cfg.plateau_factor;
  j["finetune_epochs"] = cfg.finetune_epochs;
  j["mode"] = mode;
  j["ssl"] = {{"K", scfg.K},
              {"T", scfg.T},
              {"alpha", scfg.alpha},
              {"lambda_max", scfg.lambda_max},
              {"ramp_steps", scfg.ramp_steps},
              {"finetune_lambda", scfg.finetune_lambda}};
  return j;
}

void check_labels(const train::PatchDataset& data, int num_classes, const std::string& what) {
  for (int l : data.labels)
    if (l < 0 || l >= num_classes)
      throw ValidationError(what + " dataset has a label outside [0, " +
                            std::to_string(num_classes) + ")");
}

double validation_scores(nn::Model& model, const train::PatchDataset& val, int num_classes,
                         double& val_loss) {
  auto probs = train::predict_dataset(model, val);
  val_loss = train::mean_cross_entropy(probs, val.labels, num_classes);
  if (num_classes == 2) {
    bool has_pos = false, has_neg = false;
    for (int l : val.labels) (l == 1 ? has_pos : has_neg) = true;
    if (has_pos && has_neg) {
      std::vector<double> scores(probs.size());
      for (std::size_t i = 0; i < probs.size(); ++i) scores[i] = probs[i][1];
      return metrics::auc(scores, val.labels);
    }
    log::warn("validation set has a single class; tracking accuracy instead of AUC");
  }
  return train::accuracy(probs, val.labels);
}

struct FitOutcome {
  std::vector<train::HistoryRow> history;
  std::vector<nn::Tensor> best_state;
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

// One training phase over the given datasets. `unlabeled` null means plain
// supervised cross-entropy; otherwise mixmatch SSL with the phase's lambda.
FitOutcome fit(nn::Model& model, nn::Adam& opt, const train::PatchDataset& labeled,
               const train::PatchDataset* unlabeled, const train::PatchDataset& validation,
               const train::TrainConfig& cfg, const ssl::SSLConfig& scfg, ssl::Phase phase,
               int epochs, std::uint64_t seed_salt, int num_classes) {
  FitOutcome out;
  train::PlateauScheduler plateau(cfg.plateau_factor, cfg.plateau_patience);
  Rng root(hash_combine(splitmix64(cfg.seed), seed_salt));
  std::int64_t global_step = 0;
  auto predict = train::make_eval_predict_fn(model);

  std::size_t nl = labeled.size();
  std::size_t nu = unlabeled ? unlabeled->size() : 0;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng erng = root.child(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> lorder(nl), uorder(nu);
    std::iota(lorder.begin(), lorder.end(), 0);
    std::iota(uorder.begin(), uorder.end(), 0);
    erng.shuffle(lorder);
    erng.shuffle(uorder);

    std::size_t bl = static_cast<std::size_t>(cfg.batch_labeled);
    std::size_t bu = static_cast<std::size_t>(cfg.batch_unlabeled);
    std::size_t steps = nl > 0 ? (nl + bl - 1) / bl : (nu + bu - 1) / bu;
    std::size_t ucursor = 0;
    double epoch_loss = 0.0;
    double lambda = 0.0;
    std::size_t counted_steps = 0;

    for (std::size_t step = 0; step < steps; ++step) {
      lambda = unlabeled ? ssl::lambda_schedule(global_step, phase, scfg) : 0.0;
      double loss = 0.0;

      if (!unlabeled) {
        std::size_t begin = step * bl, end = std::min(nl, begin + bl);
        std::vector<std::vector<float>> xs;
        std::vector<ssl::ProbVector> targets;
        for (std::size_t i = begin; i < end; ++i) {
          std::size_t idx = lorder[i];
          xs.push_back(train::augment_to_float(labeled.patches[idx], erng.raw()));
          targets.push_back(ssl::one_hot(labeled.labels[idx], num_classes));
        }
        nn::Tensor x = nn::stack_samples(xs, 3, labeled.out_size, labeled.out_size);
        nn::Tensor logits = model.forward(x, true);
        auto probs = nn::softmax_rows(logits);
        auto g = ssl::ssl_loss_grad(probs, targets, {}, {}, 0.0, num_classes);
        loss = g.loss;
        nn::Tensor dlogits = nn::softmax_backward(probs, g.dpred_l);
        opt.zero_grad();
        model.backward(dlogits);
        opt.step();
      } else if (nl > 0) {
        std::size_t begin = (step * bl) % nl, end = std::min(nl, begin + bl);
        std::vector<ssl::LabeledPatch> lbatch;
        for (std::size_t i = begin; i < end; ++i)
          lbatch.push_back({labeled.patches[lorder[i]], labeled.labels[lorder[i]]});
        std::vector<cv::Mat> ubatch;
        for (std::size_t b = 0; b < bu && nu > 0; ++b)
          ubatch.push_back(unlabeled->patches[uorder[(ucursor + b) % nu]]);
        ucursor += bu;

        ssl::MixedBatch mb =
            ssl::mixmatch(lbatch, ubatch, predict, scfg, num_classes, erng.raw());
        std::vector<std::vector<float>> xs;
        xs.reserve(mb.labeled.size() + mb.unlabeled.size());
        std::vector<ssl::ProbVector> tl, tu;
        for (auto& s : mb.labeled) {
          xs.push_back(s.x);
          tl.push_back(s.target);
        }
        for (auto& s : mb.unlabeled) {
          xs.push_back(s.x);
          tu.push_back(s.target);
        }
        nn::Tensor x = nn::stack_samples(xs, 3, labeled.out_size, labeled.out_size);
        nn::Tensor logits = model.forward(x, true);
        auto probs = nn::softmax_rows(logits);
        std::vector<ssl::ProbVector> pl(probs.begin(), probs.begin() + mb.labeled.size());
        std::vector<ssl::ProbVector> pu(probs.begin() + mb.labeled.size(), probs.end());
        auto g = ssl::ssl_loss_grad(pl, tl, pu, tu, lambda, num_classes);
        loss = g.loss;
        std::vector<ssl::ProbVector> dprobs = g.dpred_l;
        dprobs.insert(dprobs.end(), g.dpred_u.begin(), g.dpred_u.end());
        nn::Tensor dlogits = nn::softmax_backward(probs, dprobs);
        opt.zero_grad();
        model.backward(dlogits);
        opt.step();
      } else {
        // Unlabeled-only consistency step (finetune with no labeled reuse).
        if (lambda == 0.0) {
          ++global_step;
          continue;
        }
        std::vector<cv::Mat> upatches;
        for (std::size_t b = 0; b < bu && nu > 0; ++b)
          upatches.push_back(unlabeled->patches[uorder[(ucursor + b) % nu]]);
        ucursor += bu;
        std::vector<cv::Mat> views;
        for (const cv::Mat& p : upatches)
          for (int k = 0; k < scfg.K; ++k) views.push_back(ssl::augment(p, erng.raw()));
        auto guesses_flat = predict(views);
        std::vector<ssl::ProbVector> targets;
        for (std::size_t j = 0; j < upatches.size(); ++j) {
          ssl::ProbVector mean(num_classes, 0.0);
          for (int k = 0; k < scfg.K; ++k)
            for (int c = 0; c < num_classes; ++c)
              mean[c] += guesses_flat[j * scfg.K + k][c] / scfg.K;
          ssl::ProbVector q = ssl::sharpen(mean, scfg.T);
          for (int k = 0; k < scfg.K; ++k) targets.push_back(q);
        }
        std::vector<std::vector<float>> xs;
        for (const cv::Mat& v : views) xs.push_back(nn::to_chw_float(v));
        nn::Tensor x = nn::stack_samples(xs, 3, unlabeled->out_size, unlabeled->out_size);
        nn::Tensor logits = model.forward(x, true);
        auto probs = nn::softmax_rows(logits);
        double n = static_cast<double>(probs.size());
        double scale = lambda / (num_classes * n);
        std::vector<ssl::ProbVector> dprobs(probs.size(), ssl::ProbVector(num_classes, 0.0));
        for (std::size_t i = 0; i < probs.size(); ++i)
          for (int c = 0; c < num_classes; ++c) {
            double d = probs[i][c] - targets[i][c];
            loss += scale * d * d;
            dprobs[i][c] = scale * 2.0 * d;
          }
        nn::Tensor dlogits = nn::softmax_backward(probs, dprobs);
        opt.zero_grad();
        model.backward(dlogits);
        opt.step();
      }

      if (!std::isfinite(loss))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + " step " +
                    std::to_string(step));
      epoch_loss += loss;
      ++counted_steps;
      ++global_step;
    }

    double val_loss = 0.0;
    double metric = validation_scores(model, validation, num_classes, val_loss);
    plateau.observe(val_loss, opt);
    train::HistoryRow row;
    row.epoch = epoch;
    row.train_loss = counted_steps > 0 ? epoch_loss / counted_steps : 0.0;
    row.val_metric = metric;
    row.lr = opt.lr();
    row.lambda = lambda;
    out.history.push_back(row);
    if (metric > out.best_metric) {
      out.best_metric = metric;
      out.best_epoch = epoch;
      out.best_state = nn::snapshot_state(model);
    }
  }
  if (out.best_state.empty()) out.best_state = nn::snapshot_state(model);
  return out;
}

}  // namespace

train::Checkpoint train_detector(const DetectorData& data, const nn::ModelSpec& spec,
                                 const train::TrainConfig& config,
                                 const ssl::SSLConfig& ssl_config,
                                 const std::string& config_hash) {
  train::validate(config);
  ssl::validate(ssl_config);
  if (spec.num_classes != 2) throw ValidationError("detector models are binary");
  TrainMode mode = train_mode_from_string(config.mode.empty() ? "ssl" : config.mode);

  if (data.labeled.size() == 0)
    throw ValidationError(to_string(mode) + " training requires labeled patches");
  bool is_ssl = mode == TrainMode::kSsl || mode == TrainMode::kSslFinetune;
  if (is_ssl && data.unlabeled.size() == 0)
    throw ValidationError("ssl training requires unlabeled patches");
  if (data.validation.size() == 0) throw ValidationError("validation patches required");
  check_labels(data.labeled, 2, "labeled");
  check_labels(data.validation, 2, "validation");

  nn::Model model = nn::build_model(spec);
  nn::Adam opt(model.parameters(), config.lr);
  FitOutcome fo = fit(model, opt, data.labeled, is_ssl ? &data.unlabeled : nullptr,
                      data.validation, config, ssl_config, ssl::Phase::kInitial, config.epochs,
                      fnv1a64("detector-initial"), 2);

  train::Checkpoint cp;
  cp.spec = spec;
  cp.state = std::move(fo.best_state);
  cp.config = config_snapshot(config, ssl_config, to_string(mode));
  cp.history = std::move(fo.history);
  cp.phase = "initial";
  cp.best_metric = fo.best_metric;
  cp.best_epoch = fo.best_epoch;
  cp.config_hash = config_hash;
  return cp;
}

train::Checkpoint finetune_detector(const train::Checkpoint& cp,
                                    const train::PatchDataset& extension_unlabeled,
                                    const train::PatchDataset& labeled,
                                    const train::PatchDataset& validation,
                                    const train::TrainConfig& config,
                                    const ssl::SSLConfig& ssl_config,
                                    const std::string& config_hash) {
  train::validate(config);
  ssl::validate(ssl_config);
  std::string prev_mode = cp.config.value("mode", "");
  if (prev_mode != "ssl" && prev_mode != "ssl_finetune")
    throw ValidationError("finetune requires a checkpoint trained in ssl mode, got '" +
                          prev_mode + "'");
  if (extension_unlabeled.size() == 0)
    throw ValidationError("finetune requires a non-empty extension manifest");
  if (validation.size() == 0) throw ValidationError("validation patches required");
  if (labeled.size() > 0) check_labels(labeled, 2, "labeled");
  check_labels(validation, 2, "validation");

  nn::Model model = train::model_from_checkpoint(cp);
  nn::Adam opt(model.parameters(), config.lr);

  double val_loss = 0.0;
  double baseline = validation_scores(model, validation, 2, val_loss);
  train::HistoryRow base_row;
  base_row.epoch = 0;
  base_row.train_loss = 0.0;
  base_row.val_metric = baseline;
  base_row.lr = config.lr;
  base_row.lambda = ssl_config.finetune_lambda;

  FitOutcome fo = fit(model, opt, labeled, &extension_unlabeled, validation, config, ssl_config,
                      ssl::Phase::kFinetune, config.finetune_epochs,
                      fnv1a64("detector-finetune"), 2);

  train::Checkpoint out;
  out.spec = cp.spec;
  out.config = config_snapshot(config, ssl_config, "ssl_finetune");
  out.history.push_back(base_row);
  out.history.insert(out.history.end(), fo.history.begin(), fo.history.end());
  out.phase = "finetune";
  if (fo.best_metric > baseline) {
    out.state = std::move(fo.best_state);
    out.best_metric = fo.best_metric;
    out.best_epoch = fo.best_epoch;
  } else {
    out.state = cp.state;
    out.best_metric = baseline;
    out.best_epoch = 0;
  }
  out.config_hash = config_hash;
  return out;
}

std::vector<ssl::ProbVector> predict_patches(nn::Model& model, const train::PatchDataset& data,
                                             int batch_size) {
  return train::predict_dataset(model, data, batch_size);
}

Hitmap generate_hitmap(const slideio::SlideSource& slide, nn::Model& model, std::int64_t stride,
                       const patching::FilterParams& filter, std::int64_t src_size, int out_size,
                       int batch_size) {
  std::int64_t src = patching::effective_size(src_size, slide.base_magnification());
  std::int64_t step = patching::effective_size(stride, slide.base_magnification());
  if (step <= 0) throw ValidationError("stride must be positive");
  Hitmap map;
  map.rows = static_cast<int>(slide.height() / step);
  map.cols = static_cast<int>(slide.width() / step);
  map.stride = step;
  map.src_size = src;
  map.values.assign(static_cast<std::size_t>(map.rows) * map.cols,
                    std::numeric_limits<double>::quiet_NaN());
  if (src > slide.width() || src > slide.height()) return map;

  auto predict = train::make_eval_predict_fn(model);
  std::vector<cv::Mat> batch;
  std::vector<std::size_t> cells;
  auto flush = [&]() {
    if (batch.empty()) return;
    auto probs = predict(batch);
    for (std::size_t i = 0; i < cells.size(); ++i) map.values[cells[i]] = probs[i][1];
    batch.clear();
    cells.clear();
  };
  for (int i = 0; i < map.rows; ++i) {
    for (int j = 0; j < map.cols; ++j) {
      std::int64_t x = std::min<std::int64_t>(j * step, slide.width() - src);
      std::int64_t y = std::min<std::int64_t>(i * step, slide.height() - src);
      cv::Mat window = slide.read_region(x, y, src, src);
      if (!patching::background_filter(window, filter)) continue;
      batch.push_back(patching::resize_patch(window, out_size));
      cells.push_back(static_cast<std::size_t>(i) * map.cols + j);
      if (batch.size() >= static_cast<std::size_t>(batch_size)) flush();
    }
  }
  flush();
  return map;
}

void save_hitmap_csv(const Hitmap& map, const std::filesystem::path& path,
                     const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write hitmap " + path.string());
  out << "# version=" << kVersion << " config_hash=" << config_hash << " stride=" << map.stride
      << " src_size=" << map.src_size << "\n";
  out << std::setprecision(17);
  for (int i = 0; i < map.rows; ++i) {
    for (int j = 0; j < map.cols; ++j) {
      if (j) out << ',';
      out << map.at(i, j);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for hitmap " + path.string());
}

Hitmap load_hitmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("hitmap not found: " + path.string());
  Hitmap map;
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) {
        if (tok.rfind("stride=", 0) == 0) map.stride = std::stoll(tok.substr(7));
        if (tok.rfind("src_size=", 0) == 0) map.src_size = std::stoll(tok.substr(9));
      }
      continue;
    }
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  map.rows = static_cast<int>(rows.size());
  map.cols = rows.empty() ? 0 : static_cast<int>(rows[0].size());
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != map.cols)
      throw ValidationError("ragged hitmap rows in " + path.string());
    map.values.insert(map.values.end(), r.begin(), r.end());
  }
  return map;
}

cv::Mat render_hitmap_overlay(const slideio::SlideSource& slide, const Hitmap& map,
                              int thumb_max) {
  cv::Mat full = slide.read_region(0, 0, slide.width(), slide.height());
  double scale = static_cast<double>(thumb_max) / std::max(full.rows, full.cols);
  if (scale > 1.0) scale = 1.0;
  cv::Mat thumb;
  cv::resize(full, thumb, cv::Size(), scale, scale, cv::INTER_AREA);

  const double alpha = 0.45;
  for (int i = 0; i < map.rows; ++i) {
    for (int j = 0; j < map.cols; ++j) {
      double v = map.at(i, j);
      if (std::isnan(v)) continue;
      int x0 = static_cast<int>(j * map.stride * scale);
      int y0 = static_cast<int>(i * map.stride * scale);
      int x1 = std::min(thumb.cols, static_cast<int>((j + 1) * map.stride * scale));
      int y1 = std::min(thumb.rows, static_cast<int>((i + 1) * map.stride * scale));
      cv::Vec3d heat(255.0 * v, 40.0, 255.0 * (1.0 - v));
      for (int y = y0; y < y1; ++y) {
        cv::Vec3b* row = thumb.ptr<cv::Vec3b>(y);
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c)
            row[x][c] = cv::saturate_cast<uchar>((1.0 - alpha) * row[x][c] + alpha * heat[c]);
      }
    }
  }
  return thumb;
}

void save_overlay_png(const cv::Mat& rgb, const std::filesystem::path& path,
                      const std::string& config_hash) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write " + path.string());
  json meta;
  meta["version"] = kVersion;
  meta["config_hash"] = config_hash;
  std::ofstream out(path.string() + ".meta.json");
  if (!out) throw IoError("cannot write " + path.string() + ".meta.json");
  out << meta.dump(2) << "\n";
}

}  // namespace rcc::detector
