#include "rcc/config.hpp"

#include <fstream>
#include <set>

#include "rcc/errors.hpp"
#include "rcc/hashing.hpp"
#include "rcc/log.hpp"

namespace rcc::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key '" + key + "' in " + ctx);
  }
}

json filter_to_json(const patching::FilterParams& f) {
  return json{{"sat_min", f.sat_min}, {"val_max", f.val_max},
              {"tissue_fraction_min", f.tissue_fraction_min}};
}

patching::FilterParams filter_from_json(const json& j) {
  check_keys(j, "patch.filter", {"sat_min", "val_max", "tissue_fraction_min"});
  patching::FilterParams f;
  f.sat_min = j.value("sat_min", f.sat_min);
  f.val_max = j.value("val_max", f.val_max);
  f.tissue_fraction_min = j.value("tissue_fraction_min", f.tissue_fraction_min);
  return f;
}

json patch_to_json(const patching::PatchConfig& p) {
  json j;
  j["src_size"] = p.src_size;
  j["out_size"] = p.out_size;
  j["stride"] = p.stride;
  j["filter"] = filter_to_json(p.filter);
  j["exclude_point_windows"] = p.exclude_point_windows;
  return j;
}

patching::PatchConfig patch_from_json(const json& j) {
  check_keys(j, "patch", {"src_size", "out_size", "stride", "filter", "exclude_point_windows"});
  patching::PatchConfig p;
  p.src_size = j.value("src_size", p.src_size);
  p.out_size = j.value("out_size", p.out_size);
  p.stride = j.value("stride", p.stride);
  if (j.contains("filter")) p.filter = filter_from_json(j.at("filter"));
  p.exclude_point_windows = j.value("exclude_point_windows", p.exclude_point_windows);
  return p;
}

json ssl_to_json(const ssl::SSLConfig& s) {
  json j;
  j["K"] = s.K;
  j["T"] = s.T;
  j["alpha"] = s.alpha;
  j["lambda_max"] = s.lambda_max;
  j["ramp_steps"] = s.ramp_steps;
  j["finetune_lambda"] = s.finetune_lambda;
  return j;
}

ssl::SSLConfig ssl_from_json(const json& j) {
  check_keys(j, "ssl", {"K", "T", "alpha", "lambda_max", "ramp_steps", "finetune_lambda"});
  ssl::SSLConfig s;
  s.lambda_max = ssl::default_lambda_max(2);
  s.K = j.value("K", s.K);
  s.T = j.value("T", s.T);
  s.alpha = j.value("alpha", s.alpha);
  s.lambda_max = j.value("lambda_max", s.lambda_max);
  s.ramp_steps = j.value("ramp_steps", s.ramp_steps);
  s.finetune_lambda = j.value("finetune_lambda", s.lambda_max);
  return s;
}

json model_to_json(const nn::ModelSpec& m) {
  json j;
  j["architecture"] = nn::to_string(m.architecture);
  j["input_size"] = m.input_size;
  return j;
}

nn::ModelSpec model_from_json(const json& j, const std::string& ctx, int num_classes) {
  check_keys(j, ctx, {"architecture", "input_size"});
  nn::ModelSpec m;
  m.num_classes = num_classes;
  if (j.contains("architecture"))
    m.architecture = nn::architecture_from_string(j.at("architecture").get<std::string>());
  m.input_size = j.value("input_size", m.input_size);
  return m;
}

json train_to_json(const train::TrainConfig& t) {
  json j;
  j["lr"] = t.lr;
  j["epochs"] = t.epochs;
  j["batch_labeled"] = t.batch_labeled;
  j["batch_unlabeled"] = t.batch_unlabeled;
  j["plateau_patience"] = t.plateau_patience;
  j["plateau_factor"] = t.plateau_factor;
  j["finetune_epochs"] = t.finetune_epochs;
  return j;
}

train::TrainConfig train_from_json(const json& j, const std::string& ctx) {
  check_keys(j, ctx,
             {"lr", "epochs", "batch_labeled", "batch_unlabeled", "plateau_patience",
              "plateau_factor", "finetune_epochs"});
  train::TrainConfig t;
  t.lr = j.value("lr", t.lr);
  t.epochs = j.value("epochs", t.epochs);
  t.batch_labeled = j.value("batch_labeled", t.batch_labeled);
  t.batch_unlabeled = j.value("batch_unlabeled", t.batch_unlabeled);
  t.plateau_patience = j.value("plateau_patience", t.plateau_patience);
  t.plateau_factor = j.value("plateau_factor", t.plateau_factor);
  t.finetune_epochs = j.value("finetune_epochs", t.finetune_epochs);
  return t;
}

json synthetic_to_json(const SyntheticSpec& s) {
  json j;
  j["width"] = s.width;
  j["height"] = s.height;
  j["base_magnification"] = s.base_magnification;
  j["points_per_class"] = s.points_per_class;
  j["num_regions"] = s.num_regions;
  j["region_radius_frac"] = json::array({s.region_radius_frac_min, s.region_radius_frac_max});
  j["region_vertices"] = s.region_vertices;
  j["region_irregularity"] = s.region_irregularity;
  j["hue_jitter_deg"] = s.hue_jitter_deg;
  j["normal_hue_deg"] = s.normal_hue_deg;
  j["normal_hue_width_deg"] = s.normal_hue_width_deg;
  j["cancer_hue_width_deg"] = s.cancer_hue_width_deg;
  json hues;
  for (const auto& [diag, hue] : s.subtype_hues)
    hues[ann::to_string(static_cast<ann::Diagnosis>(diag))] = hue;
  j["subtype_hues"] = hues;
  json slides = json::array();
  for (const auto& e : s.slides) {
    json se;
    se["slide_id"] = e.slide_id;
    if (e.diagnosis) se["diagnosis"] = ann::to_string(*e.diagnosis);
    se["split"] = ann::to_string(e.split);
    slides.push_back(se);
  }
  j["slides"] = slides;
  return j;
}

SyntheticSpec synthetic_from_json(const json& j) {
  check_keys(j, "data.synthetic",
             {"width", "height", "base_magnification", "points_per_class", "num_regions",
              "region_radius_frac", "region_vertices", "region_irregularity", "hue_jitter_deg",
              "normal_hue_deg", "normal_hue_width_deg", "cancer_hue_width_deg", "subtype_hues",
              "slides"});
  SyntheticSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.base_magnification = j.value("base_magnification", s.base_magnification);
  s.points_per_class = j.value("points_per_class", s.points_per_class);
  s.num_regions = j.value("num_regions", s.num_regions);
  if (j.contains("region_radius_frac")) {
    const auto& r = j.at("region_radius_frac");
    if (!r.is_array() || r.size() != 2)
      throw ConfigError("data.synthetic.region_radius_frac must be [min, max]");
    s.region_radius_frac_min = r[0].get<double>();
    s.region_radius_frac_max = r[1].get<double>();
  }
  s.region_vertices = j.value("region_vertices", s.region_vertices);
  s.region_irregularity = j.value("region_irregularity", s.region_irregularity);
  s.hue_jitter_deg = j.value("hue_jitter_deg", s.hue_jitter_deg);
  s.normal_hue_deg = j.value("normal_hue_deg", s.normal_hue_deg);
  s.normal_hue_width_deg = j.value("normal_hue_width_deg", s.normal_hue_width_deg);
  s.cancer_hue_width_deg = j.value("cancer_hue_width_deg", s.cancer_hue_width_deg);
  if (j.contains("subtype_hues")) {
    const auto& h = j.at("subtype_hues");
    check_keys(h, "data.synthetic.subtype_hues", {"ccRCC", "pRCC", "chRCC"});
    for (const auto& [name, hue] : h.items())
      s.subtype_hues[static_cast<int>(ann::diagnosis_from_string(name))] = hue.get<double>();
  }
  if (!j.contains("slides")) throw ConfigError("data.synthetic.slides is required");
  for (const auto& e : j.at("slides")) {
    check_keys(e, "data.synthetic.slides[]", {"slide_id", "diagnosis", "split"});
    SyntheticSlideEntry entry;
    entry.slide_id = e.at("slide_id").get<std::string>();
    if (e.contains("diagnosis"))
      entry.diagnosis = ann::diagnosis_from_string(e.at("diagnosis").get<std::string>());
    if (e.contains("split")) entry.split = ann::split_from_string(e.at("split").get<std::string>());
    s.slides.push_back(std::move(entry));
  }
  return s;
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir.generic_string();
  json data;
  if (cfg.synthetic)
    data["synthetic"] = synthetic_to_json(*cfg.synthetic);
  else
    data["slide_index"] = cfg.slide_index.generic_string();
  j["data"] = data;
  j["patch"] = patch_to_json(cfg.patch);
  j["ssl"] = ssl_to_json(cfg.ssl);
  j["detector"] = json{{"model", model_to_json(cfg.detector_model)},
                       {"train", train_to_json(cfg.detector_train)}};
  json sub;
  sub["model"] = model_to_json(cfg.subtyper_model);
  sub["train"] = train_to_json(cfg.subtyper_train);
  sub["mu"] = cfg.subtype.mu;
  sub["detector_threshold"] = cfg.subtype.detector_threshold;
  sub["mode"] = subtyping::to_string(cfg.subtype.mode);
  j["subtyper"] = sub;
  return j;
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, "config", {"name", "seed", "out_dir", "data", "patch", "ssl", "detector",
                           "subtyper"});
  ExperimentConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (cfg.out_dir.is_relative()) cfg.out_dir = base_dir / cfg.out_dir;

  if (!j.contains("data")) throw ConfigError("config requires a 'data' section");
  const auto& data = j.at("data");
  check_keys(data, "data", {"slide_index", "synthetic"});
  if (data.contains("slide_index") == data.contains("synthetic"))
    throw ConfigError("data requires exactly one of 'slide_index' or 'synthetic'");
  if (data.contains("slide_index")) {
    cfg.slide_index = data.at("slide_index").get<std::string>();
    if (cfg.slide_index.is_relative()) cfg.slide_index = base_dir / cfg.slide_index;
  } else {
    cfg.synthetic = synthetic_from_json(data.at("synthetic"));
  }

  if (j.contains("patch")) cfg.patch = patch_from_json(j.at("patch"));
  cfg.ssl = ssl_from_json(j.contains("ssl") ? j.at("ssl") : json::object());

  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    check_keys(d, "detector", {"model", "train"});
    if (d.contains("model")) cfg.detector_model = model_from_json(d.at("model"), "detector.model", 2);
    if (d.contains("train")) cfg.detector_train = train_from_json(d.at("train"), "detector.train");
  }
  cfg.detector_model.num_classes = 2;

  cfg.subtyper_model.num_classes = 4;
  if (j.contains("subtyper")) {
    const auto& s = j.at("subtyper");
    check_keys(s, "subtyper", {"model", "train", "mu", "detector_threshold", "mode"});
    if (s.contains("model")) cfg.subtyper_model = model_from_json(s.at("model"), "subtyper.model", 4);
    if (s.contains("train")) cfg.subtyper_train = train_from_json(s.at("train"), "subtyper.train");
    cfg.subtype.mu = s.value("mu", cfg.subtype.mu);
    cfg.subtype.detector_threshold = s.value("detector_threshold", cfg.subtype.detector_threshold);
    if (s.contains("mode"))
      cfg.subtype.mode = subtyping::subtype_mode_from_string(s.at("mode").get<std::string>());
  }

  // Derived seeds: every stage streams from the experiment seed.
  cfg.patch.seed = cfg.seed;
  cfg.detector_train.seed = cfg.seed;
  cfg.subtyper_train.seed = cfg.seed;
  cfg.detector_model.init_seed = cfg.seed;
  cfg.subtyper_model.init_seed = cfg.seed;
  return cfg;
}

std::string hash_config(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("name");
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

void validate(const ExperimentConfig& cfg) {
  try {
    train::validate(cfg.detector_train);
    train::validate(cfg.subtyper_train);
    ssl::validate(cfg.ssl);
    subtyping::validate(cfg.subtype);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto& p = cfg.patch;
  if (p.src_size <= 0) throw ConfigError("patch.src_size must be positive");
  if (p.out_size <= 0) throw ConfigError("patch.out_size must be positive");
  if (p.stride < 0) throw ConfigError("patch.stride must be >= 0");
  if (p.out_size > p.src_size)
    throw ConfigError("patch.out_size must not exceed patch.src_size");
  if (p.filter.sat_min < 0.0 || p.filter.sat_min > 1.0)
    throw ConfigError("patch.filter.sat_min must be in [0, 1]");
  if (p.filter.val_max <= 0.0 || p.filter.val_max > 1.0)
    throw ConfigError("patch.filter.val_max must be in (0, 1]");
  if (p.filter.tissue_fraction_min < 0.0 || p.filter.tissue_fraction_min > 1.0)
    throw ConfigError("patch.filter.tissue_fraction_min must be in [0, 1]");
  for (const nn::ModelSpec* m : {&cfg.detector_model, &cfg.subtyper_model})
    if (m->input_size <= 0) throw ConfigError("model input_size must be positive");
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    if (s.width <= 0 || s.height <= 0) throw ConfigError("synthetic slide size must be positive");
    if (s.base_magnification <= 0.0)
      throw ConfigError("synthetic base_magnification must be positive");
    if (s.num_regions < 1) throw ConfigError("synthetic num_regions must be >= 1");
    if (s.points_per_class < 1) throw ConfigError("synthetic points_per_class must be >= 1");
    if (!(s.region_radius_frac_min > 0.0) ||
        s.region_radius_frac_max < s.region_radius_frac_min || s.region_radius_frac_max > 0.5)
      throw ConfigError("synthetic region_radius_frac must satisfy 0 < min <= max <= 0.5");
    if (s.slides.empty()) throw ConfigError("synthetic slide list is empty");
    std::set<std::string> ids;
    for (const auto& e : s.slides) {
      if (e.slide_id.empty()) throw ConfigError("synthetic slide_id must be non-empty");
      if (!ids.insert(e.slide_id).second)
        throw ConfigError("duplicate synthetic slide_id '" + e.slide_id + "'");
    }
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config JSON in " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg;
  try {
    cfg = config_from_json(j, path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
  validate(cfg);
  cfg.config_hash = hash_config(cfg);
  return cfg;
}

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& overrides) {
  if (overrides.seed) {
    log::info("override: seed = " + std::to_string(*overrides.seed));
    cfg.seed = *overrides.seed;
    cfg.patch.seed = cfg.seed;
    cfg.detector_train.seed = cfg.seed;
    cfg.subtyper_train.seed = cfg.seed;
    cfg.detector_model.init_seed = cfg.seed;
    cfg.subtyper_model.init_seed = cfg.seed;
  }
  if (overrides.out_dir) {
    log::info("override: out_dir = " + overrides.out_dir->string());
    cfg.out_dir = *overrides.out_dir;
  }
  cfg.config_hash = hash_config(cfg);
}

}  // namespace rcc::config
