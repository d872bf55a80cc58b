#include "rcc/annotations.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "rcc/errors.hpp"
#include "rcc/log.hpp"
#include "rcc/version.hpp"

namespace rcc::ann {

using nlohmann::json;

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

std::size_t AnnotationSet::point_count() const {
  std::size_t n = 0;
  for (const auto& [id, s] : slides) n += s.points.size();
  return n;
}

std::size_t AnnotationSet::region_count() const {
  std::size_t n = 0;
  for (const auto& [id, s] : slides) {
    if (s.regions) n += s.regions->polygons.size();
  }
  return n;
}

std::string to_string(Polarity p) {
  return p == Polarity::kPositive ? "positive" : "negative";
}

std::string to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::kCcRCC: return "ccRCC";
    case Diagnosis::kPRCC: return "pRCC";
    case Diagnosis::kChRCC: return "chRCC";
  }
  throw ValidationError("bad diagnosis value");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTraining: return "training";
    case Split::kExtension: return "extension";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  throw ValidationError("bad split value");
}

Polarity polarity_from_string(const std::string& s) {
  if (s == "positive") return Polarity::kPositive;
  if (s == "negative") return Polarity::kNegative;
  throw ValidationError("unknown point polarity \"" + s + "\"");
}

Diagnosis diagnosis_from_string(const std::string& s) {
  if (s == "ccRCC") return Diagnosis::kCcRCC;
  if (s == "pRCC") return Diagnosis::kPRCC;
  if (s == "chRCC") return Diagnosis::kChRCC;
  throw ValidationError("unknown diagnosis \"" + s + "\"");
}

Split split_from_string(const std::string& s) {
  if (s == "training") return Split::kTraining;
  if (s == "extension") return Split::kExtension;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split \"" + s + "\"");
}

namespace {

void ingest_point_object(const json& j, AnnotationSet& set, std::vector<std::string>* warnings) {
  if (!j.is_object() || !j.contains("slide_id") || !j.contains("points")) {
    throw ValidationError("point annotation object must have slide_id and points");
  }
  const std::string slide_id = j.at("slide_id").get<std::string>();
  auto& slide = set.slides[slide_id];
  std::set<std::tuple<std::int64_t, std::int64_t, int>> seen;
  for (const auto& p : slide.points) {
    seen.insert({p.x, p.y, static_cast<int>(p.polarity)});
  }
  for (const auto& jp : j.at("points")) {
    PointAnnotation p;
    p.x = jp.at("x").get<std::int64_t>();
    p.y = jp.at("y").get<std::int64_t>();
    p.polarity = polarity_from_string(jp.at("label").get<std::string>());
    const auto key = std::make_tuple(p.x, p.y, static_cast<int>(p.polarity));
    if (!seen.insert(key).second) {
      std::ostringstream os;
      os << "duplicate point (" << p.x << "," << p.y << "," << to_string(p.polarity)
         << ") on slide " << slide_id << " dropped";
      if (warnings) warnings->push_back(os.str());
      log::warn(os.str());
      continue;
    }
    slide.points.push_back(p);
  }
}

void ingest_region_object(const json& j, AnnotationSet& set) {
  if (!j.is_object() || !j.contains("slide_id") || !j.contains("regions")) {
    throw ValidationError("region annotation object must have slide_id and regions");
  }
  const std::string slide_id = j.at("slide_id").get<std::string>();
  auto& slide = set.slides[slide_id];
  if (!slide.regions) slide.regions = RegionAnnotation{};
  if (j.contains("label")) slide.regions->label = j.at("label").get<std::string>();
  std::size_t index = slide.regions->polygons.size();
  for (const auto& jpoly : j.at("regions")) {
    geom::Polygon poly;
    for (const auto& jv : jpoly) {
      if (!jv.is_array() || jv.size() != 2) {
        throw ValidationError("region vertex must be a [x, y] pair");
      }
      poly.push_back({jv[0].get<double>(), jv[1].get<double>()});
    }
    poly = geom::normalize_polygon(poly);
    if (const std::string err = geom::check_simple_polygon(poly); !err.empty()) {
      std::ostringstream os;
      os << "slide " << slide_id << " region " << index << ": " << err;
      throw ValidationError(os.str());
    }
    slide.regions->polygons.push_back(std::move(poly));
    ++index;
  }
}

}  // namespace

AnnotationSet load_point_annotations(const std::filesystem::path& path,
                                     std::vector<std::string>* warnings) {
  const json j = read_json_file(path);
  AnnotationSet set;
  if (j.is_array()) {
    for (const auto& obj : j) ingest_point_object(obj, set, warnings);
  } else {
    ingest_point_object(j, set, warnings);
  }
  std::size_t pos = 0, neg = 0;
  for (const auto& [id, s] : set.slides) {
    for (const auto& p : s.points) {
      (p.polarity == Polarity::kPositive ? pos : neg)++;
    }
  }
  log::info("loaded ", set.point_count(), " points (", pos, " positive, ", neg, " negative) from ",
            path.string());
  return set;
}

void save_point_annotations(const AnnotationSet& set, const std::filesystem::path& path,
                            const std::string& config_hash) {
  json out = json::array();
  for (const auto& [slide_id, slide] : set.slides) {
    json entry;
    entry["slide_id"] = slide_id;
    entry["version"] = kVersion;
    if (!config_hash.empty()) entry["config_hash"] = config_hash;
    json points = json::array();
    for (const auto& p : slide.points) {
      points.push_back({{"x", p.x}, {"y", p.y}, {"label", to_string(p.polarity)}});
    }
    entry["points"] = points;
    out.push_back(entry);
  }
  if (out.size() == 1) {
    write_json_file(out[0], path);
  } else {
    write_json_file(out, path);
  }
}

AnnotationSet load_region_annotations(const std::filesystem::path& path,
                                      std::vector<std::string>* warnings) {
  (void)warnings;
  const json j = read_json_file(path);
  AnnotationSet set;
  if (j.is_array()) {
    for (const auto& obj : j) ingest_region_object(obj, set);
  } else {
    ingest_region_object(j, set);
  }
  log::info("loaded ", set.region_count(), " region polygons from ", path.string());
  return set;
}

void save_region_annotations(const AnnotationSet& set, const std::filesystem::path& path,
                             const std::string& config_hash) {
  json out = json::array();
  for (const auto& [slide_id, slide] : set.slides) {
    if (!slide.regions) continue;
    json entry;
    entry["slide_id"] = slide_id;
    entry["version"] = kVersion;
    if (!config_hash.empty()) entry["config_hash"] = config_hash;
    entry["label"] = slide.regions->label;
    json regions = json::array();
    for (const auto& poly : slide.regions->polygons) {
      json jpoly = json::array();
      for (const auto& v : poly) jpoly.push_back({v.x, v.y});
      regions.push_back(jpoly);
    }
    entry["regions"] = regions;
    out.push_back(entry);
  }
  if (out.size() == 1) {
    write_json_file(out[0], path);
  } else {
    write_json_file(out, path);
  }
}

void validate_point_bounds(
    const AnnotationSet& set,
    const std::map<std::string, std::pair<std::int64_t, std::int64_t>>& dims) {
  for (const auto& [slide_id, slide] : set.slides) {
    const auto it = dims.find(slide_id);
    if (it == dims.end()) {
      throw ValidationError("no slide dimensions known for slide " + slide_id);
    }
    const auto [w, h] = it->second;
    for (const auto& p : slide.points) {
      if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) {
        std::ostringstream os;
        os << "point (" << p.x << "," << p.y << ") out of bounds for slide " << slide_id << " ("
           << w << "x" << h << ")";
        throw ValidationError(os.str());
      }
    }
  }
}

bool point_in_region(double x, double y, const RegionAnnotation& regions) {
  return geom::point_in_any_polygon(x, y, regions.polygons);
}

std::vector<SlideRecord> load_slide_index(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  const json* arr = &j;
  if (j.is_object() && j.contains("slides")) arr = &j.at("slides");
  if (!arr->is_array()) throw ValidationError("slide index must be a JSON array: " + path.string());
  std::vector<SlideRecord> out;
  const auto base = path.parent_path();
  for (const auto& e : *arr) {
    SlideRecord r;
    r.slide_id = e.at("slide_id").get<std::string>();
    r.path = base / e.at("path").get<std::string>();
    if (e.contains("diagnosis"))
      r.diagnosis = diagnosis_from_string(e.at("diagnosis").get<std::string>());
    r.split = split_from_string(e.at("split").get<std::string>());
    if (e.contains("points")) r.points_path = base / e.at("points").get<std::string>();
    if (e.contains("regions")) r.regions_path = base / e.at("regions").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void save_slide_index(const std::vector<SlideRecord>& slides, const std::filesystem::path& path,
                      const std::string& config_hash) {
  json arr = json::array();
  const auto base = path.parent_path();
  for (const auto& r : slides) {
    json e;
    e["slide_id"] = r.slide_id;
    e["path"] = std::filesystem::relative(r.path, base).string();
    e["diagnosis"] = to_string(r.diagnosis);
    e["split"] = to_string(r.split);
    if (r.points_path) e["points"] = std::filesystem::relative(*r.points_path, base).string();
    if (r.regions_path) e["regions"] = std::filesystem::relative(*r.regions_path, base).string();
    arr.push_back(e);
  }
  json out;
  out["version"] = kVersion;
  out["config_hash"] = config_hash;
  out["slides"] = std::move(arr);
  write_json_file(out, path);
}

}  // namespace rcc::ann
