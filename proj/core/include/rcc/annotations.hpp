#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rcc/geometry.hpp"

namespace rcc::ann {

enum class Polarity { kPositive, kNegative };

// The three subtypes carry the four-class indices 1..3; 0 is "normal".
enum class Diagnosis : int { kCcRCC = 1, kPRCC = 2, kChRCC = 3 };

enum class Split { kTraining, kExtension, kValidation, kTest };

struct PointAnnotation {
  std::int64_t x = 0;
  std::int64_t y = 0;
  Polarity polarity = Polarity::kPositive;

  bool operator==(const PointAnnotation&) const = default;
};

struct RegionAnnotation {
  std::vector<geom::Polygon> polygons;
  std::string label = "cancerous";
};

struct SlideAnnotations {
  std::vector<PointAnnotation> points;
  std::optional<RegionAnnotation> regions;
  std::optional<Diagnosis> diagnosis;
};

struct AnnotationSet {
  std::map<std::string, SlideAnnotations> slides;

  std::size_t point_count() const;
  std::size_t region_count() const;
};

// One slide of a dataset: where it lives and what role it plays.
struct SlideRecord {
  std::string slide_id;
  std::filesystem::path path;
  Diagnosis diagnosis = Diagnosis::kCcRCC;
  Split split = Split::kTraining;
  std::optional<std::filesystem::path> points_path;
  std::optional<std::filesystem::path> regions_path;
};

std::string to_string(Polarity p);
std::string to_string(Diagnosis d);
std::string to_string(Split s);
Polarity polarity_from_string(const std::string& s);
Diagnosis diagnosis_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// Point annotation JSON: a single {"slide_id", "points": [...]} object or
// an array of them. Duplicate (x, y, polarity) entries are dropped with a
// warning. Bounds are checked later, once slide dimensions are known.
AnnotationSet load_point_annotations(const std::filesystem::path& path,
                                     std::vector<std::string>* warnings = nullptr);
void save_point_annotations(const AnnotationSet& set, const std::filesystem::path& path,
                            const std::string& config_hash = "");

// Region annotation JSON: {"slide_id", "regions": [[[x,y],...],...], "label"}.
// Every polygon must be simple and have >= 3 vertices.
AnnotationSet load_region_annotations(const std::filesystem::path& path,
                                      std::vector<std::string>* warnings = nullptr);
void save_region_annotations(const AnnotationSet& set, const std::filesystem::path& path,
                             const std::string& config_hash = "");

// Throws ValidationError if any point lies outside [0,w) x [0,h) of its
// slide. `dims` maps slide_id -> (width, height).
void validate_point_bounds(const AnnotationSet& set,
                           const std::map<std::string, std::pair<std::int64_t, std::int64_t>>& dims);

// Boundary counts as inside.
bool point_in_region(double x, double y, const RegionAnnotation& regions);

std::vector<SlideRecord> load_slide_index(const std::filesystem::path& path);
void save_slide_index(const std::vector<SlideRecord>& slides, const std::filesystem::path& path,
                      const std::string& config_hash = "");

}  // namespace rcc::ann
