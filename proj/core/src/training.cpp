#include "rcc/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "rcc/errors.hpp"
#include "rcc/version.hpp"

namespace rcc::train {

using nlohmann::json;

void validate(const TrainConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("lr must be positive");
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (config.batch_labeled < 1 || config.batch_unlabeled < 1)
    throw ConfigError("batch sizes must be >= 1");
  if (config.plateau_patience < 1) throw ConfigError("plateau_patience must be >= 1");
  if (!(config.plateau_factor > 1.0)) throw ConfigError("plateau_factor must exceed 1");
  if (config.finetune_epochs < 1) throw ConfigError("finetune_epochs must be >= 1");
}

namespace {

json spec_to_json(const nn::ModelSpec& spec) {
  return {{"architecture", nn::to_string(spec.architecture)},
          {"input_size", spec.input_size},
          {"num_classes", spec.num_classes},
          {"init_seed", spec.init_seed},
          {"pretrained_weights", spec.pretrained_weights}};
}

nn::ModelSpec spec_from_json(const json& j) {
  nn::ModelSpec spec;
  spec.architecture = nn::architecture_from_string(j.at("architecture").get<std::string>());
  spec.input_size = j.at("input_size").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.init_seed = j.at("init_seed").get<std::uint64_t>();
  spec.pretrained_weights = j.value("pretrained_weights", "");
  return spec;
}

}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::ModelSpec spec = cp.spec;
  spec.pretrained_weights.clear();
  nn::Model model = nn::build_model(spec);
  nn::restore_state(model, cp.state);
  nn::save_weights(model, dir / "weights.bin", cp.config_hash);

  json j;
  j["version"] = kVersion;
  j["config_hash"] = cp.config_hash;
  j["phase"] = cp.phase;
  j["model"] = spec_to_json(cp.spec);
  j["train"] = cp.config;
  j["best_epoch"] = cp.best_epoch;
  j["best_metric"] = cp.best_metric;
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + (dir / "config.json").string());

  write_history_csv(cp.history, dir / "history.csv", cp.config_hash);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw MissingArtifactError("checkpoint not found: " + dir.string());
  json j = json::parse(in);
  Checkpoint cp;
  cp.spec = spec_from_json(j.at("model"));
  cp.config = j.at("train");
  cp.phase = j.value("phase", "initial");
  cp.best_epoch = j.value("best_epoch", 0);
  cp.best_metric = j.value("best_metric", 0.0);
  cp.config_hash = j.value("config_hash", "");

  nn::ModelSpec spec = cp.spec;
  spec.pretrained_weights.clear();
  nn::Model model = nn::build_model(spec);
  nn::load_weights(model, dir / "weights.bin");
  cp.state = nn::snapshot_state(model);
  if (std::filesystem::exists(dir / "history.csv"))
    cp.history = read_history_csv(dir / "history.csv");
  return cp;
}

nn::Model model_from_checkpoint(const Checkpoint& cp) {
  nn::ModelSpec spec = cp.spec;
  spec.pretrained_weights.clear();
  nn::Model model = nn::build_model(spec);
  nn::restore_state(model, cp.state);
  return model;
}

PatchDataset load_dataset(
    const patching::PatchManifest& manifest,
    const std::map<std::string, std::shared_ptr<slideio::SlideSource>>& sources,
    const LabelFn& label_fn) {
  PatchDataset ds;
  ds.out_size = manifest.meta.out_size;
  ds.patches.reserve(manifest.records.size());
  for (const patching::PatchRecord& rec : manifest.records) {
    auto it = sources.find(rec.slide_id);
    if (it == sources.end() || !it->second)
      throw MissingArtifactError("no pixel source for slide " + rec.slide_id);
    ds.patches.push_back(patching::load_patch(*it->second, rec));
    ds.labels.push_back(label_fn(rec));
    ds.z.push_back(rec.z);
  }
  return ds;
}

int binary_label(const patching::PatchRecord& rec) {
  switch (rec.label) {
    case patching::PatchLabel::kPos: return 1;
    case patching::PatchLabel::kNeg: return 0;
    default: return -1;
  }
}

std::vector<float> augment_to_float(const cv::Mat& patch, std::uint64_t seed) {
  return nn::to_chw_float(ssl::augment(patch, seed));
}

ssl::BatchPredictFn make_eval_predict_fn(nn::Model& model) {
  return [&model](const std::vector<cv::Mat>& patches) {
    if (patches.empty()) return std::vector<ssl::ProbVector>{};
    std::vector<std::vector<float>> samples;
    samples.reserve(patches.size());
    for (const cv::Mat& p : patches) samples.push_back(nn::to_chw_float(p));
    nn::Tensor x = nn::stack_samples(samples, 3, patches[0].rows, patches[0].cols);
    nn::Tensor logits = model.forward(x, false);
    return nn::softmax_rows(logits);
  };
}

std::vector<ssl::ProbVector> predict_dataset(nn::Model& model, const PatchDataset& data,
                                             int batch_size) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  std::vector<ssl::ProbVector> out;
  out.reserve(data.size());
  auto predict = make_eval_predict_fn(model);
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    std::size_t end = std::min(data.size(), i + batch_size);
    std::vector<cv::Mat> batch(data.patches.begin() + i, data.patches.begin() + end);
    auto probs = predict(batch);
    out.insert(out.end(), probs.begin(), probs.end());
  }
  return out;
}

int argmax(const ssl::ProbVector& p) {
  if (p.empty()) throw ValidationError("argmax of empty vector");
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double accuracy(const std::vector<ssl::ProbVector>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw ValidationError("accuracy size mismatch");
  if (probs.empty()) throw ValidationError("accuracy of empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (argmax(probs[i]) == labels[i]) ++hit;
  return static_cast<double>(hit) / probs.size();
}

double mean_cross_entropy(const std::vector<ssl::ProbVector>& probs,
                          const std::vector<int>& labels, int num_classes) {
  if (probs.size() != labels.size()) throw ValidationError("cross-entropy size mismatch");
  if (probs.empty()) throw ValidationError("cross-entropy of empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    total += ssl::cross_entropy(ssl::one_hot(labels[i], num_classes), probs[i]);
  return total / probs.size();
}

PlateauScheduler::PlateauScheduler(double factor, int patience)
    : factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::observe(double val_loss, nn::Adam& opt) {
  if (val_loss < best_) {
    best_ = val_loss;
    since_ = 0;
    return false;
  }
  if (++since_ >= patience_) {
    opt.set_lr(opt.lr() / factor_);
    since_ = 0;
    return true;
  }
  return false;
}

void write_history_csv(const std::vector<HistoryRow>& rows, const std::filesystem::path& path,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  out << "# version=" << kVersion << " config_hash=" << config_hash << "\n";
  out << "epoch,train_loss,val_metric,lr,lambda\n";
  out << std::setprecision(17);
  for (const HistoryRow& r : rows)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_metric << ',' << r.lr << ','
        << r.lambda << "\n";
  if (!out) throw IoError("write failed for history " + path.string());
}

std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("history not found: " + path.string());
  std::vector<HistoryRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("epoch,", 0) == 0) continue;
    std::istringstream ss(line);
    HistoryRow r;
    char comma;
    ss >> r.epoch >> comma >> r.train_loss >> comma >> r.val_metric >> comma >> r.lr >> comma >>
        r.lambda;
    if (!ss) throw ValidationError("bad history row in " + path.string() + ": " + line);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace rcc::train
