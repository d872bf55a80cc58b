#include "rcc/subtyping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "rcc/errors.hpp"
#include "rcc/hashing.hpp"
#include "rcc/log.hpp"
#include "rcc/version.hpp"

#include "json.hpp"

namespace rcc::subtyping {

using nlohmann::json;

std::string to_string(SubtypeMode mode) {
  switch (mode) {
    case SubtypeMode::kCe3Class: return "ce_3class";
    case SubtypeMode::kCe4Class: return "ce_4class";
    case SubtypeMode::kHybrid4Class: return "hybrid_4class";
  }
  throw Error("bad subtype mode");
}

SubtypeMode subtype_mode_from_string(const std::string& s) {
  if (s == "ce_3class") return SubtypeMode::kCe3Class;
  if (s == "ce_4class") return SubtypeMode::kCe4Class;
  if (s == "hybrid_4class") return SubtypeMode::kHybrid4Class;
  throw ConfigError("unknown subtype mode: " + s);
}

void validate(const SubtypeConfig& config) {
  if (config.mu < 0.0) throw ConfigError("mu must be >= 0");
  if (!(config.detector_threshold > 0.0 && config.detector_threshold < 1.0))
    throw ConfigError("detector_threshold must be in (0, 1)");
}

GeneratedLabels generate_subtype_labels(
    std::map<int, nn::Model>& detectors, const patching::PatchManifest& manifest,
    const std::map<std::string, std::shared_ptr<slideio::SlideSource>>& sources,
    double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ValidationError("detector threshold must be in (0, 1)");
  GeneratedLabels out;
  out.manifest = manifest;
  out.cancer_probs.resize(manifest.records.size(), 0.0);

  // Group record indices by diagnosis so each detector runs in batches.
  std::map<int, std::vector<std::size_t>> by_z;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    int z = manifest.records[i].z;
    if (z < 1 || z > 3)
      throw ValidationError("patch from slide " + manifest.records[i].slide_id +
                            " lacks a slide diagnosis");
    by_z[z].push_back(i);
  }
  for (auto& [z, indices] : by_z) {
    auto det = detectors.find(z);
    if (det == detectors.end())
      throw MissingArtifactError("no detector for diagnosis " +
                                 ann::to_string(static_cast<ann::Diagnosis>(z)));
    auto predict = train::make_eval_predict_fn(det->second);
    const std::size_t batch = 64;
    for (std::size_t start = 0; start < indices.size(); start += batch) {
      std::size_t end = std::min(indices.size(), start + batch);
      std::vector<cv::Mat> patches;
      for (std::size_t k = start; k < end; ++k) {
        const patching::PatchRecord& rec = manifest.records[indices[k]];
        auto src = sources.find(rec.slide_id);
        if (src == sources.end() || !src->second)
          throw MissingArtifactError("no pixel source for slide " + rec.slide_id);
        patches.push_back(patching::load_patch(*src->second, rec));
      }
      auto probs = predict(patches);
      for (std::size_t k = start; k < end; ++k) {
        double p = probs[k - start][1];
        out.cancer_probs[indices[k]] = p;
        patching::PatchRecord& rec = out.manifest.records[indices[k]];
        rec.label = p >= threshold ? patching::label_from_four_class(z)
                                   : patching::PatchLabel::kNormal;
      }
    }
  }
  return out;
}

ssl::ProbVector fold_subtype_probs(const ssl::ProbVector& p4, int z) {
  if (p4.size() != 4) throw ValidationError("fold expects a 4-class probability vector");
  ssl::check_prob_vector(p4);
  if (z < 1 || z > 3) throw ValidationError("subtype z must be in {1,2,3}");
  ssl::ProbVector s(3);
  for (int i = 1; i <= 3; ++i) s[i - 1] = p4[i];
  s[z - 1] += p4[0];
  return s;
}

namespace {

void check_hybrid_inputs(const std::vector<ssl::ProbVector>& pred,
                         const std::vector<HybridTarget>& targets) {
  if (pred.size() != targets.size()) throw ValidationError("hybrid_loss size mismatch");
  if (pred.empty()) throw ValidationError("hybrid_loss on an empty batch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != 4) throw ValidationError("hybrid_loss expects 4-class predictions");
    ssl::check_prob_vector(pred[i]);
    const HybridTarget& t = targets[i];
    if (t.y < 0 || t.y > 3 || t.z < 1 || t.z > 3)
      throw ValidationError("invalid hybrid target");
    if (t.y != 0 && t.y != t.z)
      throw ValidationError("non-normal patch label must equal the slide subtype");
  }
}

}  // namespace

double hybrid_loss(const std::vector<ssl::ProbVector>& pred,
                   const std::vector<HybridTarget>& targets, double mu) {
  if (mu < 0.0) throw ValidationError("mu must be >= 0");
  check_hybrid_inputs(pred, targets);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const HybridTarget& t = targets[i];
    double four = -std::log(std::max(pred[i][t.y], 1e-12));
    double folded = -std::log(std::max(pred[i][0] + pred[i][t.z], 1e-12));
    total += four + mu * folded;
  }
  return total / static_cast<double>(pred.size());
}

HybridLossGrad hybrid_loss_grad(const std::vector<ssl::ProbVector>& pred,
                                const std::vector<HybridTarget>& targets, double mu) {
  HybridLossGrad out;
  out.loss = hybrid_loss(pred, targets, mu);
  double n = static_cast<double>(pred.size());
  out.dpred.assign(pred.size(), ssl::ProbVector(4, 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const HybridTarget& t = targets[i];
    if (pred[i][t.y] > 1e-12) out.dpred[i][t.y] -= 1.0 / pred[i][t.y] / n;
    double fold = pred[i][0] + pred[i][t.z];
    if (mu > 0.0 && fold > 1e-12) {
      out.dpred[i][0] -= mu / fold / n;
      out.dpred[i][t.z] -= mu / fold / n;
    }
  }
  return out;
}

namespace {

json subtype_config_snapshot(const train::TrainConfig& cfg, const SubtypeConfig& scfg) {
  json j;
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["batch_labeled"] = cfg.batch_labeled;
  j["seed"] = cfg.seed;
  j["plateau_patience"] = cfg.plateau_patience;
  j["plateau_factor"] = cfg.plateau_factor;
  j["mode"] = to_string(scfg.mode);
  j["mu"] = scfg.mu;
  j["detector_threshold"] = scfg.detector_threshold;
  return j;
}

}  // namespace

train::Checkpoint train_subtyper(const train::PatchDataset& data,
                                 const train::PatchDataset& validation,
                                 const nn::ModelSpec& spec, const SubtypeConfig& subtype_config,
                                 const train::TrainConfig& config,
                                 const std::string& config_hash) {
  train::validate(config);
  validate(subtype_config);
  SubtypeMode mode = subtype_config.mode;
  int C = spec.num_classes;
  if (mode == SubtypeMode::kCe3Class && C != 3)
    throw ValidationError("ce_3class requires a 3-class model");
  if (mode != SubtypeMode::kCe3Class && C != 4)
    throw ValidationError(to_string(mode) + " requires a 4-class model");
  if (data.size() == 0) throw ValidationError("subtype training requires patches");
  if (validation.size() == 0) throw ValidationError("validation patches required");

  // Effective integer label per mode; hybrid keeps (y, z) pairs.
  auto mode_label = [&](const train::PatchDataset& ds, std::size_t i) {
    if (mode == SubtypeMode::kCe3Class) {
      if (ds.z[i] < 1 || ds.z[i] > 3)
        throw ValidationError("ce_3class requires slide diagnoses on every patch");
      return ds.z[i] - 1;
    }
    int y = ds.labels[i];
    if (y < 0 || y > 3) throw ValidationError("four-class label out of range");
    return y;
  };
  std::vector<HybridTarget> hybrid_targets;
  if (mode == SubtypeMode::kHybrid4Class) {
    hybrid_targets.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      hybrid_targets[i].y = data.labels[i];
      hybrid_targets[i].z = data.z[i];
      if (hybrid_targets[i].y != 0 && hybrid_targets[i].y != hybrid_targets[i].z)
        throw ValidationError("patch label disagrees with slide subtype");
    }
  }

  nn::Model model = nn::build_model(spec);
  nn::Adam opt(model.parameters(), config.lr);
  train::PlateauScheduler plateau(config.plateau_factor, config.plateau_patience);
  Rng root(hash_combine(splitmix64(config.seed), fnv1a64("subtyper")));

  std::vector<int> val_labels(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i) val_labels[i] = mode_label(validation, i);

  std::vector<train::HistoryRow> history;
  std::vector<nn::Tensor> best_state;
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::size_t n = data.size();
  std::size_t bl = static_cast<std::size_t>(config.batch_labeled);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng erng = root.child(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    erng.shuffle(order);
    std::size_t steps = (n + bl - 1) / bl;
    double epoch_loss = 0.0;

    for (std::size_t step = 0; step < steps; ++step) {
      std::size_t begin = step * bl, end = std::min(n, begin + bl);
      std::vector<std::vector<float>> xs;
      std::vector<std::size_t> idx;
      for (std::size_t i = begin; i < end; ++i) {
        idx.push_back(order[i]);
        xs.push_back(train::augment_to_float(data.patches[order[i]], erng.raw()));
      }
      nn::Tensor x = nn::stack_samples(xs, 3, data.out_size, data.out_size);
      nn::Tensor logits = model.forward(x, true);
      auto probs = nn::softmax_rows(logits);

      double loss = 0.0;
      std::vector<ssl::ProbVector> dprobs;
      if (mode == SubtypeMode::kHybrid4Class) {
        std::vector<HybridTarget> batch_targets;
        for (std::size_t i : idx) batch_targets.push_back(hybrid_targets[i]);
        auto g = hybrid_loss_grad(probs, batch_targets, subtype_config.mu);
        loss = g.loss;
        dprobs = std::move(g.dpred);
      } else {
        std::vector<ssl::ProbVector> targets;
        for (std::size_t i : idx) targets.push_back(ssl::one_hot(mode_label(data, i), C));
        auto g = ssl::ssl_loss_grad(probs, targets, {}, {}, 0.0, C);
        loss = g.loss;
        dprobs = std::move(g.dpred_l);
      }
      if (!std::isfinite(loss))
        throw Error("non-finite training loss at epoch " + std::to_string(epoch) + " step " +
                    std::to_string(step));
      epoch_loss += loss;
      nn::Tensor dlogits = nn::softmax_backward(probs, dprobs);
      opt.zero_grad();
      model.backward(dlogits);
      opt.step();
    }

    auto val_probs = train::predict_dataset(model, validation);
    double val_loss = train::mean_cross_entropy(val_probs, val_labels, C);
    double metric = train::accuracy(val_probs, val_labels);
    plateau.observe(val_loss, opt);
    train::HistoryRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / steps;
    row.val_metric = metric;
    row.lr = opt.lr();
    row.lambda = 0.0;
    history.push_back(row);
    if (metric > best_metric) {
      best_metric = metric;
      best_epoch = epoch;
      best_state = nn::snapshot_state(model);
    }
  }

  train::Checkpoint cp;
  cp.spec = spec;
  cp.state = best_state.empty() ? nn::snapshot_state(model) : std::move(best_state);
  cp.config = subtype_config_snapshot(config, subtype_config);
  cp.history = std::move(history);
  cp.phase = "initial";
  cp.best_metric = best_metric;
  cp.best_epoch = best_epoch;
  cp.config_hash = config_hash;
  return cp;
}

SlidePrediction aggregate_votes(const std::vector<ssl::ProbVector>& patch_probs) {
  if (patch_probs.empty()) throw ValidationError("aggregate_votes on an empty slide");
  SlidePrediction pred;
  pred.patch_probs = patch_probs;
  pred.votes.assign(4, 0);
  std::vector<double> prob_sums(4, 0.0);
  for (const ssl::ProbVector& p : patch_probs) {
    if (p.size() != 4) throw ValidationError("aggregate_votes expects 4-class rows");
    ssl::check_prob_vector(p);
    int cls = train::argmax(p);
    pred.patch_classes.push_back(cls);
    ++pred.votes[cls];
    for (int c = 0; c < 4; ++c) prob_sums[c] += p[c];
  }

  std::int64_t best_votes = 0;
  for (int c = 1; c <= 3; ++c) best_votes = std::max(best_votes, pred.votes[c]);
  if (best_votes == 0) {
    // Every patch called normal: highest mean subtype probability decides.
    pred.fallback = true;
    int best = 1;
    for (int c = 2; c <= 3; ++c)
      if (prob_sums[c] > prob_sums[best]) best = c;
    pred.subtype = best;
    return pred;
  }
  std::vector<int> tied;
  for (int c = 1; c <= 3; ++c)
    if (pred.votes[c] == best_votes) tied.push_back(c);
  if (tied.size() == 1) {
    pred.subtype = tied[0];
    return pred;
  }
  pred.tie_break = true;
  int best = tied[0];
  for (std::size_t i = 1; i < tied.size(); ++i)
    if (prob_sums[tied[i]] > prob_sums[best]) best = tied[i];
  pred.subtype = best;
  return pred;
}

SlidePrediction predict_slide(nn::Model& model, const train::PatchDataset& patches,
                              const std::vector<patching::PatchRecord>& records) {
  if (patches.size() == 0) throw ValidationError("no tissue patches on slide");
  if (records.size() != patches.size())
    throw ValidationError("records and patch dataset out of sync");
  auto probs = train::predict_dataset(model, patches);
  // A 3-class model never predicts normal; widen with a zero column.
  for (ssl::ProbVector& p : probs) {
    if (p.size() == 3) p.insert(p.begin(), 0.0);
  }
  SlidePrediction pred = aggregate_votes(probs);
  pred.slide_id = records.front().slide_id;
  pred.src_size = records.front().src_size;
  for (const patching::PatchRecord& rec : records) {
    if (rec.slide_id != pred.slide_id)
      throw ValidationError("predict_slide got patches from multiple slides");
    pred.xs.push_back(rec.x);
    pred.ys.push_back(rec.y);
  }
  return pred;
}

void save_evidence_jsonl(const SlidePrediction& pred, const std::filesystem::path& path,
                         const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write evidence " + path.string());
  json header;
  header["version"] = kVersion;
  header["config_hash"] = config_hash;
  header["slide_id"] = pred.slide_id;
  header["src_size"] = pred.src_size;
  header["records"] = pred.patch_classes.size();
  out << header.dump() << "\n";
  for (std::size_t i = 0; i < pred.patch_classes.size(); ++i) {
    json row;
    row["x"] = pred.xs[i];
    row["y"] = pred.ys[i];
    row["class"] = pred.patch_classes[i];
    row["probs"] = pred.patch_probs[i];
    out << row.dump() << "\n";
  }
  if (!out) throw IoError("write failed for evidence " + path.string());
}

SlidePrediction load_evidence_jsonl(const std::filesystem::path& path,
                                    std::string* config_hash_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open evidence " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty evidence file " + path.string());
  json header = json::parse(line);
  SlidePrediction pred;
  pred.slide_id = header.at("slide_id").get<std::string>();
  pred.src_size = header.at("src_size").get<std::int64_t>();
  if (config_hash_out) *config_hash_out = header.value("config_hash", "");
  const std::size_t expected = header.at("records").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line);
    pred.xs.push_back(row.at("x").get<std::int64_t>());
    pred.ys.push_back(row.at("y").get<std::int64_t>());
    pred.patch_classes.push_back(row.at("class").get<int>());
    pred.patch_probs.push_back(row.at("probs").get<ssl::ProbVector>());
  }
  if (pred.xs.size() != expected)
    throw ValidationError("evidence row count mismatch in " + path.string());
  return pred;
}

void save_verdict_json(const SlidePrediction& pred, const std::filesystem::path& path,
                       const std::string& config_hash) {
  json j;
  j["version"] = kVersion;
  j["config_hash"] = config_hash;
  j["slide_id"] = pred.slide_id;
  j["subtype"] = ann::to_string(static_cast<ann::Diagnosis>(pred.subtype));
  j["votes"] = {{"normal", pred.votes[0]},
                {"ccRCC", pred.votes[1]},
                {"pRCC", pred.votes[2]},
                {"chRCC", pred.votes[3]}};
  j["tie_break"] = pred.tie_break;
  j["fallback"] = pred.fallback;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write verdict " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for verdict " + path.string());
}

SlidePrediction load_verdict_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("verdict not found: " + path.string());
  json j = json::parse(in);
  SlidePrediction pred;
  pred.slide_id = j.at("slide_id").get<std::string>();
  pred.subtype = static_cast<int>(ann::diagnosis_from_string(j.at("subtype").get<std::string>()));
  pred.votes = {j.at("votes").at("normal").get<std::int64_t>(),
                j.at("votes").at("ccRCC").get<std::int64_t>(),
                j.at("votes").at("pRCC").get<std::int64_t>(),
                j.at("votes").at("chRCC").get<std::int64_t>()};
  pred.tie_break = j.at("tie_break").get<bool>();
  pred.fallback = j.at("fallback").get<bool>();
  return pred;
}

cv::Mat render_subtype_overlay(const slideio::SlideSource& slide, const SlidePrediction& pred,
                               int thumb_max) {
  cv::Mat full = slide.read_region(0, 0, slide.width(), slide.height());
  double scale = static_cast<double>(thumb_max) / std::max(full.rows, full.cols);
  if (scale > 1.0) scale = 1.0;
  cv::Mat thumb;
  cv::resize(full, thumb, cv::Size(), scale, scale, cv::INTER_AREA);
  // normal gray, ccRCC red, pRCC green, chRCC blue
  const cv::Vec3d palette[4] = {{128, 128, 128}, {220, 40, 40}, {40, 180, 60}, {50, 80, 230}};
  const double alpha = 0.45;
  for (std::size_t i = 0; i < pred.patch_classes.size(); ++i) {
    const cv::Vec3d& color = palette[pred.patch_classes[i]];
    int x0 = static_cast<int>(pred.xs[i] * scale);
    int y0 = static_cast<int>(pred.ys[i] * scale);
    int x1 = std::min(thumb.cols, static_cast<int>((pred.xs[i] + pred.src_size) * scale));
    int y1 = std::min(thumb.rows, static_cast<int>((pred.ys[i] + pred.src_size) * scale));
    for (int y = y0; y < y1; ++y) {
      cv::Vec3b* row = thumb.ptr<cv::Vec3b>(y);
      for (int x = x0; x < x1; ++x)
        for (int c = 0; c < 3; ++c)
          row[x][c] = cv::saturate_cast<uchar>((1.0 - alpha) * row[x][c] + alpha * color[c]);
    }
  }
  return thumb;
}

}  // namespace rcc::subtyping
