#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "rcc/annotations.hpp"
#include "rcc/slide.hpp"

namespace rcc::patching {

// Nominal patch geometry is given at this reference magnification; slides
// scanned at a different base magnification get their windows rescaled by
// base/40 so the covered tissue extent stays the same.
inline constexpr double kReferenceMagnification = 40.0;

enum class PatchLabel {
  kUnlabeled,
  kPos,
  kNeg,
  kNormal,  // four-class index 0
  kCcRCC,   // 1
  kPRCC,    // 2
  kChRCC,   // 3
};

std::string to_string(PatchLabel label);
PatchLabel patch_label_from_string(const std::string& s);

// Four-class index for normal/ccRCC/pRCC/chRCC labels, -1 otherwise.
int four_class_index(PatchLabel label);
PatchLabel label_from_four_class(int y);
PatchLabel label_from_diagnosis(ann::Diagnosis d);

struct PatchRecord {
  std::string slide_id;
  std::int64_t x = 0;  // top-left corner, slide pixels at base magnification
  std::int64_t y = 0;
  std::int64_t src_size = 2000;  // window edge length in slide pixels
  int out_size = 224;            // training resolution after resize
  PatchLabel label = PatchLabel::kUnlabeled;
  int z = 0;  // owning slide's subtype (1..3) when known, 0 otherwise
  ann::Split split = ann::Split::kTraining;

  bool operator==(const PatchRecord&) const = default;
};

struct FilterParams {
  double sat_min = 0.05;
  double val_max = 0.95;
  double tissue_fraction_min = 0.25;
};

struct ManifestMeta {
  std::int64_t src_size = 2000;
  int out_size = 224;
  std::int64_t stride = 2000;
  FilterParams filter;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct PatchManifest {
  ManifestMeta meta;
  std::vector<PatchRecord> records;

  // Sorts records by (slide_id, y, x) and rejects duplicate
  // (slide_id, x, y, src_size) entries.
  void finalize();
  std::size_t size() const { return records.size(); }
};

// Keep a patch iff the fraction of pixels with HSV saturation > sat_min
// and value < val_max reaches tissue_fraction_min. Input is 8-bit RGB.
bool background_filter(const cv::Mat& rgb, const FilterParams& params);

// Fraction of pixels passing the tissue test above.
double tissue_pass_fraction(const cv::Mat& rgb, const FilterParams& params);

// Deterministic bilinear resize of a square patch.
cv::Mat resize_patch(const cv::Mat& pixels, int out_size);

std::int64_t effective_size(std::int64_t nominal, double base_magnification);

// One record per point, window centered on the point and clamp-shifted
// into the slide. label pos/neg follows point polarity.
std::vector<PatchRecord> extract_labeled_patches(const slideio::SlideSource& slide,
                                                 const std::vector<ann::PointAnnotation>& points,
                                                 std::int64_t src_size, int out_size);

// Sliding-window grid (stride defaulting to src_size) with the background
// filter applied to every window; records come out in row-major order.
std::vector<PatchRecord> extract_unlabeled_patches(const slideio::SlideSource& slide,
                                                   std::int64_t stride,
                                                   const FilterParams& params,
                                                   std::int64_t src_size, int out_size);

// Center-point rule: pos iff the window center lies inside a region.
void assign_region_labels(std::vector<PatchRecord>& records, const ann::RegionAnnotation& regions);

// Reads the raw window for a record (no resize).
cv::Mat read_patch_pixels(const slideio::SlideSource& slide, const PatchRecord& record);

// Raw window resized to record.out_size.
cv::Mat load_patch(const slideio::SlideSource& slide, const PatchRecord& record);

struct PatchConfig {
  std::int64_t src_size = 2000;
  int out_size = 224;
  std::int64_t stride = 0;  // 0 means src_size (non-overlapping)
  FilterParams filter;
  std::uint64_t seed = 0;
  // Drop unlabeled training windows that contain an annotated point.
  bool exclude_point_windows = true;
};

struct DatasetInputs {
  std::vector<ann::SlideRecord> slides;
  std::map<std::string, std::shared_ptr<slideio::SlideSource>> sources;
  ann::AnnotationSet annotations;
};

struct DetectionDataset {
  PatchManifest train_labeled;       // point-centered, pos/neg
  PatchManifest train_unlabeled;     // sliding window, training slides
  PatchManifest extension_unlabeled; // sliding window, extension slides
  PatchManifest validation;          // region-labeled
  PatchManifest test;                // region-labeled
  PatchManifest supervised;          // region-labeled training+extension grid
  std::vector<std::string> warnings;
};

// Realizes the split semantics for one detection dataset. Training slides
// contribute labeled point patches and filtered unlabeled grid patches;
// extension slides contribute unlabeled grid patches; validation/test
// slides contribute region-labeled grid patches.
DetectionDataset build_detection_dataset(const DatasetInputs& inputs, const PatchConfig& config);

void save_manifest(const PatchManifest& manifest, const std::filesystem::path& path);
PatchManifest load_manifest(const std::filesystem::path& path);
void save_manifest_csv(const PatchManifest& manifest, const std::filesystem::path& path);

}  // namespace rcc::patching
