#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rcc/annotations.hpp"
#include "rcc/nn.hpp"
#include "rcc/patching.hpp"
#include "rcc/ssl.hpp"
#include "rcc/subtyping.hpp"
#include "rcc/training.hpp"

#include "json.hpp"

namespace rcc::config {

struct SyntheticSlideEntry {
  std::string slide_id;
  std::optional<ann::Diagnosis> diagnosis;
  ann::Split split = ann::Split::kTraining;
};

// Declarative synthetic dataset: shared geometry and texture parameters
// plus one entry per slide. Per-slide seeds derive from the experiment
// seed and the slide id, so entries can be reordered freely.
struct SyntheticSpec {
  std::int64_t width = 1536;
  std::int64_t height = 1536;
  double base_magnification = 40.0;
  int points_per_class = 5;
  int num_regions = 2;
  double region_radius_frac_min = 0.10;
  double region_radius_frac_max = 0.20;
  int region_vertices = 24;
  double region_irregularity = 0.35;
  double hue_jitter_deg = 0.0;
  double normal_hue_deg = 330.0;
  double normal_hue_width_deg = 24.0;
  double cancer_hue_width_deg = 24.0;
  // Cancer hue per subtype; slides without a diagnosis fall back to ccRCC.
  std::map<int, double> subtype_hues = {{1, 275.0}, {2, 215.0}, {3, 155.0}};
  std::vector<SyntheticSlideEntry> slides;
};

// Everything a full experiment run depends on. The hash covers every
// field that can change an artifact's bytes; name and out_dir are labels
// and stay outside it.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "exp";

  // Exactly one of the two: a prebuilt slide index or a synthetic spec.
  std::filesystem::path slide_index;
  std::optional<SyntheticSpec> synthetic;

  patching::PatchConfig patch;
  ssl::SSLConfig ssl;

  nn::ModelSpec detector_model;
  train::TrainConfig detector_train;

  nn::ModelSpec subtyper_model;
  train::TrainConfig subtyper_train;
  subtyping::SubtypeConfig subtype;

  std::string config_hash;  // hex64 over the canonical JSON form
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir);

// FNV-1a over the canonical dump with name/out_dir removed.
std::string hash_config(const ExperimentConfig& cfg);

void validate(const ExperimentConfig& cfg);

// Parses, validates and hashes. Relative paths resolve against the file's
// directory. Throws ConfigError on malformed or unknown content.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
};

// Applies command-line overrides, logs each one and recomputes the hash.
void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& overrides);

}  // namespace rcc::config
