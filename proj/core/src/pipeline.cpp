#include "rcc/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rcc/detector.hpp"
#include "rcc/errors.hpp"
#include "rcc/hashing.hpp"
#include "rcc/log.hpp"
#include "rcc/metrics.hpp"
#include "rcc/patching.hpp"
#include "rcc/rng.hpp"
#include "rcc/subtyping.hpp"
#include "rcc/synthetic.hpp"
#include "rcc/training.hpp"
#include "rcc/version.hpp"

#include "json.hpp"

namespace rcc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Refuses to clobber existing results unless forced; leaves a fresh
// empty directory either way.
void ensure_stage_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force)
      throw Error("output directory already contains results: " + dir.string() +
                  " (use --force to regenerate)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing upstream artifact: " + path.string() + " (run `rcc " +
                               producer + "` first)");
}

void check_artifact_hash(const std::string& artifact_hash, const fs::path& path,
                         const config::ExperimentConfig& cfg) {
  if (artifact_hash != cfg.config_hash)
    throw MissingArtifactError("config hash mismatch for " + path.string() + ": artifact has " +
                               artifact_hash + ", current config is " + cfg.config_hash +
                               "; rerun the producing stage");
}

patching::PatchManifest load_manifest_checked(const fs::path& path,
                                              const config::ExperimentConfig& cfg,
                                              const std::string& producer) {
  require_artifact(path, producer);
  patching::PatchManifest m = patching::load_manifest(path);
  check_artifact_hash(m.meta.config_hash, path, cfg);
  return m;
}

// MANIFEST.json: stage name, producing config hash, content hash of every
// input and output file. Outputs are enumerated from the directory itself.
void write_stage_manifest(const config::ExperimentConfig& cfg, const fs::path& dir,
                          const std::string& stage, const std::map<std::string, fs::path>& inputs) {
  json m;
  m["version"] = kVersion;
  m["stage"] = stage;
  m["config_hash"] = cfg.config_hash;
  json in = json::object();
  for (const auto& [name, path] : inputs) in[name] = content_hash(read_file_bytes(path));
  m["inputs"] = in;
  json out = json::object();
  std::map<std::string, fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "MANIFEST.json") continue;
    files[fs::relative(entry.path(), dir).generic_string()] = entry.path();
  }
  for (const auto& [rel, path] : files) out[rel] = content_hash(read_file_bytes(path));
  m["outputs"] = out;
  std::ofstream f(dir / "MANIFEST.json");
  if (!f) throw IoError("cannot write " + (dir / "MANIFEST.json").string());
  f << m.dump(2) << "\n";
}

fs::path index_path(const config::ExperimentConfig& cfg) {
  return cfg.synthetic ? stage_dir(cfg, "synth") / "index.json" : cfg.slide_index;
}

train::Checkpoint load_checkpoint_checked(const fs::path& dir, const config::ExperimentConfig& cfg,
                                          const std::string& producer) {
  require_artifact(dir / "config.json", producer);
  train::Checkpoint cp = train::load_checkpoint(dir);
  check_artifact_hash(cp.config_hash, dir / "config.json", cfg);
  return cp;
}

void filter_by_subtype(patching::PatchManifest& manifest, int z) {
  auto& r = manifest.records;
  r.erase(std::remove_if(r.begin(), r.end(),
                         [z](const patching::PatchRecord& rec) { return rec.z != z; }),
          r.end());
}

int subtype_patch_label(const patching::PatchRecord& rec) {
  if (rec.label == patching::PatchLabel::kPos) return rec.z;
  if (rec.label == patching::PatchLabel::kNeg) return 0;
  throw ValidationError("expected a region-labeled patch, got label '" +
                        patching::to_string(rec.label) + "'");
}

void check_model_matches_patches(const nn::ModelSpec& spec, const patching::ManifestMeta& meta) {
  if (spec.input_size != meta.out_size)
    throw ConfigError("model input_size " + std::to_string(spec.input_size) +
                      " does not match patch out_size " + std::to_string(meta.out_size));
}

// First existing checkpoint among stage-relative candidates.
fs::path find_checkpoint(const config::ExperimentConfig& cfg,
                         const std::vector<std::string>& candidates) {
  for (const auto& c : candidates) {
    fs::path dir = cfg.out_dir / c;
    if (fs::exists(dir / "config.json")) return dir;
  }
  return {};
}

std::string subtype_suffix(const std::string& subtype) {
  return subtype.empty() ? "" : "_" + subtype;
}

}  // namespace

fs::path stage_dir(const config::ExperimentConfig& cfg, const std::string& stage) {
  return cfg.out_dir / stage;
}

ExperimentLock::ExperimentLock(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  path_ = out_dir / ".rcc.lock";
  if (fs::exists(path_))
    throw Error("experiment directory is locked by another run: " + path_.string() +
                " (remove the lock file if no other process is active)");
  std::ofstream f(path_);
  if (!f) throw IoError("cannot create lock file " + path_.string());
  f << "locked\n";
}

ExperimentLock::~ExperimentLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

SlideSet open_slides(const config::ExperimentConfig& cfg) {
  const fs::path index = index_path(cfg);
  require_artifact(index, "synth");
  if (cfg.synthetic) {
    const json j = read_json_file(index);
    if (j.is_object() && j.contains("config_hash"))
      check_artifact_hash(j.at("config_hash").get<std::string>(), index, cfg);
  }
  SlideSet set;
  set.records = ann::load_slide_index(index);
  for (const auto& rec : set.records)
    set.sources[rec.slide_id] = std::shared_ptr<slideio::SlideSource>(slideio::open_slide(rec.path));
  return set;
}

void run_synth(const config::ExperimentConfig& cfg, bool force) {
  if (!cfg.synthetic)
    throw ConfigError("synth requires a data.synthetic section in the config");
  ExperimentLock lock(cfg.out_dir);
  const fs::path dir = stage_dir(cfg, "synth");
  ensure_stage_dir(dir, force);

  const config::SyntheticSpec& s = *cfg.synthetic;
  std::vector<ann::SlideRecord> index;
  for (const auto& entry : s.slides) {
    slideio::SyntheticSlideSpec sp;
    sp.slide_id = entry.slide_id;
    sp.width = s.width;
    sp.height = s.height;
    sp.base_magnification = s.base_magnification;
    sp.points_per_class = s.points_per_class;
    sp.num_regions = s.num_regions;
    sp.region_radius_frac_min = s.region_radius_frac_min;
    sp.region_radius_frac_max = s.region_radius_frac_max;
    sp.region_vertices = s.region_vertices;
    sp.region_irregularity = s.region_irregularity;
    sp.slide_hue_jitter_deg = s.hue_jitter_deg;
    sp.normal_texture.hue_deg = s.normal_hue_deg;
    sp.normal_texture.hue_width_deg = s.normal_hue_width_deg;
    const ann::Diagnosis diag = entry.diagnosis.value_or(ann::Diagnosis::kCcRCC);
    auto hue = s.subtype_hues.find(static_cast<int>(diag));
    if (hue != s.subtype_hues.end()) sp.cancer_texture.hue_deg = hue->second;
    sp.cancer_texture.hue_width_deg = s.cancer_hue_width_deg;
    sp.seed = hash_combine(splitmix64(cfg.seed), fnv1a64(entry.slide_id));

    slideio::SyntheticResult result = slideio::generate_synthetic_slide(sp);

    const fs::path png = dir / (entry.slide_id + ".png");
    cv::Mat rgb = result.slide->read_region(0, 0, sp.width, sp.height);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(png.string(), bgr)) throw IoError("cannot write " + png.string());
    json sidecar;
    sidecar["base_magnification"] = sp.base_magnification;
    sidecar["version"] = kVersion;
    sidecar["config_hash"] = cfg.config_hash;
    std::ofstream sf(slideio::sidecar_path(png));
    if (!sf) throw IoError("cannot write sidecar for " + png.string());
    sf << sidecar.dump(2) << "\n";

    ann::AnnotationSet points;
    points.slides[entry.slide_id].points = result.points;
    const fs::path points_path = dir / (entry.slide_id + ".points.json");
    ann::save_point_annotations(points, points_path, cfg.config_hash);

    ann::AnnotationSet regions;
    regions.slides[entry.slide_id].regions = result.regions;
    const fs::path regions_path = dir / (entry.slide_id + ".regions.json");
    ann::save_region_annotations(regions, regions_path, cfg.config_hash);

    ann::SlideRecord rec;
    rec.slide_id = entry.slide_id;
    rec.path = png;
    rec.diagnosis = diag;
    rec.split = entry.split;
    rec.points_path = points_path;
    rec.regions_path = regions_path;
    index.push_back(std::move(rec));
    log::info("synth: rendered slide " + entry.slide_id + " (" + ann::to_string(diag) + ", " +
              ann::to_string(entry.split) + ")");
  }
  ann::save_slide_index(index, dir / "index.json", cfg.config_hash);
  write_stage_manifest(cfg, dir, "synth", {});
  log::info("synth: wrote " + std::to_string(index.size()) + " slides to " + dir.string());
}

void run_patch(const config::ExperimentConfig& cfg, bool force) {
  ExperimentLock lock(cfg.out_dir);
  const fs::path dir = stage_dir(cfg, "patch");
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  patching::DatasetInputs inputs;
  inputs.slides = set.records;
  inputs.sources = set.sources;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> dims;
  for (const auto& rec : set.records) {
    ann::SlideAnnotations& sa = inputs.annotations.slides[rec.slide_id];
    sa.diagnosis = rec.diagnosis;
    const auto& src = set.sources.at(rec.slide_id);
    dims[rec.slide_id] = {src->width(), src->height()};
    if (rec.points_path) {
      require_artifact(*rec.points_path, "synth");
      ann::AnnotationSet loaded = ann::load_point_annotations(*rec.points_path);
      auto it = loaded.slides.find(rec.slide_id);
      if (it == loaded.slides.end())
        throw ConfigError("point annotation file " + rec.points_path->string() +
                          " has no entry for slide " + rec.slide_id);
      sa.points = it->second.points;
    } else if (rec.split == ann::Split::kTraining) {
      throw ConfigError("training slide " + rec.slide_id + " has no point annotations");
    }
    if (rec.regions_path) {
      require_artifact(*rec.regions_path, "synth");
      ann::AnnotationSet loaded = ann::load_region_annotations(*rec.regions_path);
      auto it = loaded.slides.find(rec.slide_id);
      if (it == loaded.slides.end())
        throw ConfigError("region annotation file " + rec.regions_path->string() +
                          " has no entry for slide " + rec.slide_id);
      sa.regions = it->second.regions;
    }
  }
  ann::validate_point_bounds(inputs.annotations, dims);

  patching::DetectionDataset ds = patching::build_detection_dataset(inputs, cfg.patch);
  for (const std::string& w : ds.warnings) log::warn("patch: " + w);

  struct Named {
    const char* name;
    patching::PatchManifest* manifest;
  };
  std::vector<Named> manifests = {{"train_labeled", &ds.train_labeled},
                                  {"train_unlabeled", &ds.train_unlabeled},
                                  {"extension_unlabeled", &ds.extension_unlabeled},
                                  {"validation", &ds.validation},
                                  {"test", &ds.test},
                                  {"supervised", &ds.supervised}};
  std::ostringstream table;
  table << "# version=" << kVersion << " config_hash=" << cfg.config_hash << "\n";
  table << "manifest,slides,patches,pos,neg,unlabeled\n";
  for (auto& [name, manifest] : manifests) {
    manifest->meta.config_hash = cfg.config_hash;
    patching::save_manifest(*manifest, dir / (std::string(name) + ".jsonl"));
    patching::save_manifest_csv(*manifest, dir / (std::string(name) + ".csv"));
    std::set<std::string> slides;
    std::int64_t pos = 0, neg = 0, unl = 0;
    for (const auto& r : manifest->records) {
      slides.insert(r.slide_id);
      if (r.label == patching::PatchLabel::kPos) ++pos;
      else if (r.label == patching::PatchLabel::kNeg) ++neg;
      else ++unl;
    }
    table << name << "," << slides.size() << "," << manifest->records.size() << "," << pos << ","
          << neg << "," << unl << "\n";
  }
  std::ofstream counts(dir / "counts.csv");
  counts << table.str();
  std::cout << table.str();

  write_stage_manifest(cfg, dir, "patch", {{"index", index_path(cfg)}});
}

void run_train_detector(const config::ExperimentConfig& cfg, const std::string& mode,
                        const std::string& subtype, bool force) {
  const detector::TrainMode tm = detector::train_mode_from_string(mode);
  ExperimentLock lock(cfg.out_dir);
  const fs::path dir = stage_dir(cfg, "detector") / (mode + subtype_suffix(subtype));
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  const fs::path patch_dir = stage_dir(cfg, "patch");
  const bool supervised_grid = tm == detector::TrainMode::kFullySupervised;
  patching::PatchManifest labeled = load_manifest_checked(
      patch_dir / (supervised_grid ? "supervised.jsonl" : "train_labeled.jsonl"), cfg, "patch");
  patching::PatchManifest validation =
      load_manifest_checked(patch_dir / "validation.jsonl", cfg, "patch");
  patching::PatchManifest unlabeled;
  const bool needs_unlabeled =
      tm == detector::TrainMode::kSsl || tm == detector::TrainMode::kSslFinetune;
  if (needs_unlabeled)
    unlabeled = load_manifest_checked(patch_dir / "train_unlabeled.jsonl", cfg, "patch");
  if (supervised_grid && labeled.records.empty())
    throw MissingArtifactError(
        "supervised manifest is empty; fully_supervised needs region annotations on "
        "training and extension slides");
  if (!subtype.empty()) {
    const int z = static_cast<int>(ann::diagnosis_from_string(subtype));
    filter_by_subtype(labeled, z);
    filter_by_subtype(validation, z);
    if (needs_unlabeled) filter_by_subtype(unlabeled, z);
  }
  check_model_matches_patches(cfg.detector_model, labeled.meta);

  detector::DetectorData data;
  data.labeled = train::load_dataset(labeled, set.sources, train::binary_label);
  if (needs_unlabeled)
    data.unlabeled =
        train::load_dataset(unlabeled, set.sources, [](const patching::PatchRecord&) { return -1; });
  data.validation = train::load_dataset(validation, set.sources, train::binary_label);

  train::TrainConfig tc = cfg.detector_train;
  tc.mode = mode;
  train::Checkpoint cp =
      detector::train_detector(data, cfg.detector_model, tc, cfg.ssl, cfg.config_hash);
  train::save_checkpoint(cp, dir);
  write_stage_manifest(cfg, dir, "train-detector", {});
  std::ostringstream os;
  os << "train-detector: mode=" << mode << (subtype.empty() ? "" : " subtype=" + subtype)
     << " best_epoch=" << cp.best_epoch << " val_metric=" << std::setprecision(6)
     << cp.best_metric;
  log::info(os.str());
}

void run_finetune(const config::ExperimentConfig& cfg, const std::string& subtype, bool force) {
  ExperimentLock lock(cfg.out_dir);
  const std::string suffix = subtype_suffix(subtype);
  const fs::path src = stage_dir(cfg, "detector") / ("ssl" + suffix);
  train::Checkpoint cp = load_checkpoint_checked(src, cfg, "train-detector --mode ssl");

  const fs::path dir = stage_dir(cfg, "finetune") / ("ssl_finetune" + suffix);
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  const fs::path patch_dir = stage_dir(cfg, "patch");
  patching::PatchManifest labeled =
      load_manifest_checked(patch_dir / "train_labeled.jsonl", cfg, "patch");
  patching::PatchManifest extension =
      load_manifest_checked(patch_dir / "extension_unlabeled.jsonl", cfg, "patch");
  patching::PatchManifest validation =
      load_manifest_checked(patch_dir / "validation.jsonl", cfg, "patch");
  if (!subtype.empty()) {
    const int z = static_cast<int>(ann::diagnosis_from_string(subtype));
    filter_by_subtype(labeled, z);
    filter_by_subtype(extension, z);
    filter_by_subtype(validation, z);
  }

  auto unlabeled_fn = [](const patching::PatchRecord&) { return -1; };
  train::PatchDataset ext = train::load_dataset(extension, set.sources, unlabeled_fn);
  train::PatchDataset lab = train::load_dataset(labeled, set.sources, train::binary_label);
  train::PatchDataset val = train::load_dataset(validation, set.sources, train::binary_label);

  train::TrainConfig tc = cfg.detector_train;
  tc.mode = "ssl_finetune";
  train::Checkpoint out = detector::finetune_detector(cp, ext, lab, val, tc, cfg.ssl,
                                                      cfg.config_hash);
  train::save_checkpoint(out, dir);
  write_stage_manifest(cfg, dir, "finetune", {{"initial_checkpoint", src / "weights.bin"}});
  std::ostringstream os;
  os << "finetune: best_epoch=" << out.best_epoch << " val_metric=" << std::setprecision(6)
     << out.best_metric;
  log::info(os.str());
}

void run_hitmap(const config::ExperimentConfig& cfg, const std::string& slide_id,
                const std::string& checkpoint, bool force) {
  ExperimentLock lock(cfg.out_dir);
  fs::path cp_dir;
  if (!checkpoint.empty()) {
    cp_dir = cfg.out_dir / checkpoint;
  } else {
    cp_dir = find_checkpoint(cfg, {"finetune/ssl_finetune", "detector/ssl_finetune",
                                   "detector/ssl", "detector/fully_supervised",
                                   "detector/labeled_only"});
    if (cp_dir.empty())
      throw MissingArtifactError("no detector checkpoint found under " +
                                 stage_dir(cfg, "detector").string() +
                                 "; run `rcc train-detector` first");
  }
  train::Checkpoint cp = load_checkpoint_checked(cp_dir, cfg, "train-detector");
  nn::Model model = train::model_from_checkpoint(cp);

  SlideSet set = open_slides(cfg);
  std::vector<const ann::SlideRecord*> targets;
  for (const auto& rec : set.records) {
    if (!slide_id.empty() ? rec.slide_id == slide_id
                          : (rec.split == ann::Split::kValidation ||
                             rec.split == ann::Split::kTest))
      targets.push_back(&rec);
  }
  if (targets.empty())
    throw ConfigError(slide_id.empty() ? "no validation or test slides to map"
                                       : "unknown slide_id '" + slide_id + "'");

  const std::int64_t stride = cfg.patch.stride == 0 ? cfg.patch.src_size : cfg.patch.stride;
  for (const ann::SlideRecord* rec : targets) {
    const fs::path dir = stage_dir(cfg, "hitmap") / rec->slide_id;
    ensure_stage_dir(dir, force);
    const auto& slide = *set.sources.at(rec->slide_id);
    detector::Hitmap map = detector::generate_hitmap(slide, model, stride, cfg.patch.filter,
                                                     cfg.patch.src_size, cfg.patch.out_size);
    detector::save_hitmap_csv(map, dir / "hitmap.csv", cfg.config_hash);
    cv::Mat overlay = detector::render_hitmap_overlay(slide, map);
    detector::save_overlay_png(overlay, dir / "overlay.png", cfg.config_hash);
    write_stage_manifest(cfg, dir, "hitmap", {{"checkpoint", cp_dir / "weights.bin"}});
    log::info("hitmap: " + rec->slide_id + " -> " + (dir / "hitmap.csv").string());
  }
}

void run_gen_labels(const config::ExperimentConfig& cfg, bool force) {
  ExperimentLock lock(cfg.out_dir);
  const fs::path dir = stage_dir(cfg, "gen_labels");
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  const fs::path patch_dir = stage_dir(cfg, "patch");
  patching::PatchManifest combined =
      load_manifest_checked(patch_dir / "train_unlabeled.jsonl", cfg, "patch");
  patching::PatchManifest extension =
      load_manifest_checked(patch_dir / "extension_unlabeled.jsonl", cfg, "patch");
  combined.records.insert(combined.records.end(), extension.records.begin(),
                          extension.records.end());
  combined.finalize();
  if (combined.records.empty())
    throw MissingArtifactError("no unlabeled training or extension patches to label");

  std::set<int> diagnoses;
  for (const auto& rec : combined.records) diagnoses.insert(rec.z);

  std::map<int, nn::Model> detectors;
  std::map<std::string, fs::path> manifest_inputs;
  for (int z : diagnoses) {
    if (z < 1 || z > 3)
      throw ValidationError("slide " + combined.records.front().slide_id +
                            " lacks a slide diagnosis; cannot generate subtype labels");
    const std::string name = ann::to_string(static_cast<ann::Diagnosis>(z));
    const fs::path cp_dir = find_checkpoint(
        cfg, {"finetune/ssl_finetune_" + name, "detector/ssl_" + name,
              "detector/fully_supervised_" + name, "detector/labeled_only_" + name,
              "finetune/ssl_finetune", "detector/ssl", "detector/fully_supervised",
              "detector/labeled_only"});
    if (cp_dir.empty())
      throw MissingArtifactError("no detector checkpoint for diagnosis " + name +
                                 "; run `rcc train-detector` first");
    train::Checkpoint cp = load_checkpoint_checked(cp_dir, cfg, "train-detector");
    detectors.emplace(z, train::model_from_checkpoint(cp));
    manifest_inputs["detector_" + name] = cp_dir / "weights.bin";
    log::info("gen-labels: diagnosis " + name + " uses checkpoint " + cp_dir.string());
  }

  subtyping::GeneratedLabels gl = subtyping::generate_subtype_labels(
      detectors, combined, set.sources, cfg.subtype.detector_threshold);
  gl.manifest.meta.config_hash = cfg.config_hash;
  patching::save_manifest(gl.manifest, dir / "subtype_train.jsonl");
  patching::save_manifest_csv(gl.manifest, dir / "subtype_train.csv");

  std::ofstream probs(dir / "cancer_probs.csv");
  if (!probs) throw IoError("cannot write " + (dir / "cancer_probs.csv").string());
  probs << "# version=" << kVersion << " config_hash=" << cfg.config_hash << "\n";
  probs << "slide_id,x,y,cancer_prob\n";
  probs << std::setprecision(17);
  std::array<std::int64_t, 4> counts{0, 0, 0, 0};
  for (std::size_t i = 0; i < gl.manifest.records.size(); ++i) {
    const auto& r = gl.manifest.records[i];
    probs << r.slide_id << "," << r.x << "," << r.y << "," << gl.cancer_probs[i] << "\n";
    ++counts[static_cast<std::size_t>(patching::four_class_index(r.label))];
  }
  write_stage_manifest(cfg, dir, "gen-labels", manifest_inputs);
  std::ostringstream os;
  os << "gen-labels: " << gl.manifest.records.size() << " patches -> normal=" << counts[0]
     << " ccRCC=" << counts[1] << " pRCC=" << counts[2] << " chRCC=" << counts[3];
  log::info(os.str());
}

void run_train_subtyper(const config::ExperimentConfig& cfg, const std::string& mode, bool force) {
  const subtyping::SubtypeMode sm = subtyping::subtype_mode_from_string(mode);
  ExperimentLock lock(cfg.out_dir);
  const fs::path dir = stage_dir(cfg, "subtyper") / mode;
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  patching::PatchManifest labeled = load_manifest_checked(
      stage_dir(cfg, "gen_labels") / "subtype_train.jsonl", cfg, "gen-labels");
  patching::PatchManifest validation =
      load_manifest_checked(stage_dir(cfg, "patch") / "validation.jsonl", cfg, "patch");
  check_model_matches_patches(cfg.subtyper_model, labeled.meta);

  auto four_class = [](const patching::PatchRecord& rec) {
    const int y = patching::four_class_index(rec.label);
    if (y < 0)
      throw ValidationError("unexpected label '" + patching::to_string(rec.label) +
                            "' in subtype training manifest");
    return y;
  };
  train::PatchDataset data = train::load_dataset(labeled, set.sources, four_class);
  train::PatchDataset val = train::load_dataset(validation, set.sources, subtype_patch_label);

  nn::ModelSpec spec = cfg.subtyper_model;
  spec.num_classes = sm == subtyping::SubtypeMode::kCe3Class ? 3 : 4;
  subtyping::SubtypeConfig sc = cfg.subtype;
  sc.mode = sm;
  train::TrainConfig tc = cfg.subtyper_train;
  tc.mode = mode;
  train::Checkpoint cp = subtyping::train_subtyper(data, val, spec, sc, tc, cfg.config_hash);
  train::save_checkpoint(cp, dir);
  write_stage_manifest(cfg, dir, "train-subtyper", {});
  std::ostringstream os;
  os << "train-subtyper: mode=" << mode << " best_epoch=" << cp.best_epoch
     << " val_accuracy=" << std::setprecision(6) << cp.best_metric;
  log::info(os.str());
}

void run_predict_slides(const config::ExperimentConfig& cfg, const std::string& mode, bool force) {
  ExperimentLock lock(cfg.out_dir);
  const fs::path cp_dir = stage_dir(cfg, "subtyper") / mode;
  train::Checkpoint cp = load_checkpoint_checked(cp_dir, cfg, "train-subtyper");
  nn::Model model = train::model_from_checkpoint(cp);

  const fs::path dir = stage_dir(cfg, "predict") / mode;
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  patching::PatchManifest test =
      load_manifest_checked(stage_dir(cfg, "patch") / "test.jsonl", cfg, "patch");
  if (test.records.empty()) throw MissingArtifactError("test manifest has no patches");

  std::map<std::string, std::vector<patching::PatchRecord>> by_slide;
  for (const auto& rec : test.records) by_slide[rec.slide_id].push_back(rec);

  json verdicts;
  verdicts["version"] = kVersion;
  verdicts["config_hash"] = cfg.config_hash;
  json slides = json::object();
  for (const auto& [id, records] : by_slide) {
    patching::PatchManifest one;
    one.meta = test.meta;
    one.records = records;
    train::PatchDataset patches = train::load_dataset(
        one, set.sources, [](const patching::PatchRecord&) { return -1; });
    subtyping::SlidePrediction pred = subtyping::predict_slide(model, patches, records);

    const fs::path sdir = dir / id;
    fs::create_directories(sdir);
    subtyping::save_evidence_jsonl(pred, sdir / "evidence.jsonl", cfg.config_hash);
    subtyping::save_verdict_json(pred, sdir / "verdict.json", cfg.config_hash);
    cv::Mat overlay = subtyping::render_subtype_overlay(*set.sources.at(id), pred);
    detector::save_overlay_png(overlay, sdir / "overlay.png", cfg.config_hash);

    json v;
    v["subtype"] = ann::to_string(static_cast<ann::Diagnosis>(pred.subtype));
    v["votes"] = {{"normal", pred.votes[0]},
                  {"ccRCC", pred.votes[1]},
                  {"pRCC", pred.votes[2]},
                  {"chRCC", pred.votes[3]}};
    v["tie_break"] = pred.tie_break;
    v["fallback"] = pred.fallback;
    slides[id] = v;
    log::info("predict-slides: " + id + " -> " +
              ann::to_string(static_cast<ann::Diagnosis>(pred.subtype)));
  }
  verdicts["slides"] = slides;
  std::ofstream vf(dir / "verdicts.json");
  if (!vf) throw IoError("cannot write " + (dir / "verdicts.json").string());
  vf << verdicts.dump(2) << "\n";
  write_stage_manifest(cfg, dir, "predict-slides", {{"checkpoint", cp_dir / "weights.bin"}});
}

void run_evaluate(const config::ExperimentConfig& cfg, const std::string& mode, bool force) {
  ExperimentLock lock(cfg.out_dir);
  const fs::path pred_dir = stage_dir(cfg, "predict") / mode;
  require_artifact(pred_dir / "verdicts.json", "predict-slides");
  const json verdicts = read_json_file(pred_dir / "verdicts.json");
  check_artifact_hash(verdicts.value("config_hash", ""), pred_dir / "verdicts.json", cfg);

  const fs::path dir = stage_dir(cfg, "eval") / mode;
  ensure_stage_dir(dir, force);

  SlideSet set = open_slides(cfg);
  patching::PatchManifest test =
      load_manifest_checked(stage_dir(cfg, "patch") / "test.jsonl", cfg, "patch");

  // Slide-level three-way classification against the recorded diagnosis.
  std::vector<int> wsi_true, wsi_pred;
  std::vector<std::string> test_slides;
  for (const auto& rec : set.records) {
    if (rec.split != ann::Split::kTest) continue;
    test_slides.push_back(rec.slide_id);
    const auto& slides = verdicts.at("slides");
    if (!slides.contains(rec.slide_id))
      throw MissingArtifactError("no verdict for test slide " + rec.slide_id +
                                 "; rerun `rcc predict-slides`");
    wsi_true.push_back(static_cast<int>(rec.diagnosis) - 1);
    wsi_pred.push_back(static_cast<int>(ann::diagnosis_from_string(
                           slides.at(rec.slide_id).at("subtype").get<std::string>())) -
                       1);
  }
  if (wsi_true.empty()) throw ConfigError("no test slides to evaluate");
  metrics::EvalReport wsi = metrics::evaluate_classification(
      "wsi_subtype", {"ccRCC", "pRCC", "chRCC"}, wsi_pred, wsi_true);
  wsi.config_hash = cfg.config_hash;

  // Patch-level four-way classification: evidence rows against the
  // region-derived truth, matched by window origin.
  std::map<std::string, std::map<std::pair<std::int64_t, std::int64_t>, int>> truth;
  for (const auto& rec : test.records)
    truth[rec.slide_id][{rec.x, rec.y}] = subtype_patch_label(rec);
  std::vector<int> patch_true, patch_pred;
  for (const std::string& id : test_slides) {
    const fs::path evidence = pred_dir / id / "evidence.jsonl";
    require_artifact(evidence, "predict-slides");
    subtyping::SlidePrediction pred = subtyping::load_evidence_jsonl(evidence);
    const auto& slide_truth = truth.at(id);
    for (std::size_t i = 0; i < pred.patch_classes.size(); ++i) {
      auto it = slide_truth.find({pred.xs[i], pred.ys[i]});
      if (it == slide_truth.end())
        throw ValidationError("evidence window (" + std::to_string(pred.xs[i]) + ", " +
                              std::to_string(pred.ys[i]) + ") on slide " + id +
                              " is not in the test manifest");
      patch_true.push_back(it->second);
      patch_pred.push_back(pred.patch_classes[i]);
    }
  }
  metrics::EvalReport patch = metrics::evaluate_classification(
      "patch_subtype", {"normal", "ccRCC", "pRCC", "chRCC"}, patch_pred, patch_true);
  patch.config_hash = cfg.config_hash;

  metrics::write_report({wsi, patch}, dir);
  write_stage_manifest(cfg, dir, "evaluate", {{"verdicts", pred_dir / "verdicts.json"}});
  std::ostringstream os;
  os << "evaluate: wsi macro_f1=" << std::setprecision(6) << wsi.metrics.macro_f1
     << " patch macro_f1=" << patch.metrics.macro_f1;
  log::info(os.str());
}

}  // namespace rcc::pipeline
