#include "rcc/patching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rcc/errors.hpp"
#include "rcc/geometry.hpp"
#include "rcc/log.hpp"
#include "rcc/version.hpp"

#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace rcc::patching {

using nlohmann::json;

std::string to_string(PatchLabel label) {
  switch (label) {
    case PatchLabel::kUnlabeled: return "unlabeled";
    case PatchLabel::kPos: return "pos";
    case PatchLabel::kNeg: return "neg";
    case PatchLabel::kNormal: return "normal";
    case PatchLabel::kCcRCC: return "ccRCC";
    case PatchLabel::kPRCC: return "pRCC";
    case PatchLabel::kChRCC: return "chRCC";
  }
  throw Error("bad patch label");
}

PatchLabel patch_label_from_string(const std::string& s) {
  if (s == "unlabeled") return PatchLabel::kUnlabeled;
  if (s == "pos") return PatchLabel::kPos;
  if (s == "neg") return PatchLabel::kNeg;
  if (s == "normal") return PatchLabel::kNormal;
  if (s == "ccRCC") return PatchLabel::kCcRCC;
  if (s == "pRCC") return PatchLabel::kPRCC;
  if (s == "chRCC") return PatchLabel::kChRCC;
  throw ValidationError("unknown patch label: " + s);
}

int four_class_index(PatchLabel label) {
  switch (label) {
    case PatchLabel::kNormal: return 0;
    case PatchLabel::kCcRCC: return 1;
    case PatchLabel::kPRCC: return 2;
    case PatchLabel::kChRCC: return 3;
    default: return -1;
  }
}

PatchLabel label_from_four_class(int y) {
  switch (y) {
    case 0: return PatchLabel::kNormal;
    case 1: return PatchLabel::kCcRCC;
    case 2: return PatchLabel::kPRCC;
    case 3: return PatchLabel::kChRCC;
  }
  throw ValidationError("four-class index out of range: " + std::to_string(y));
}

PatchLabel label_from_diagnosis(ann::Diagnosis d) {
  switch (d) {
    case ann::Diagnosis::kCcRCC: return PatchLabel::kCcRCC;
    case ann::Diagnosis::kPRCC: return PatchLabel::kPRCC;
    case ann::Diagnosis::kChRCC: return PatchLabel::kChRCC;
  }
  throw Error("bad diagnosis");
}

void PatchManifest::finalize() {
  std::stable_sort(records.begin(), records.end(), [](const PatchRecord& a, const PatchRecord& b) {
    if (a.slide_id != b.slide_id) return a.slide_id < b.slide_id;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    const PatchRecord& p = records[i - 1];
    const PatchRecord& q = records[i];
    if (p.slide_id == q.slide_id && p.x == q.x && p.y == q.y && p.src_size == q.src_size) {
      throw ValidationError("duplicate patch " + p.slide_id + " (" + std::to_string(p.x) + "," +
                            std::to_string(p.y) + ") src=" + std::to_string(p.src_size));
    }
  }
}

double tissue_pass_fraction(const cv::Mat& rgb, const FilterParams& params) {
  if (rgb.empty() || rgb.type() != CV_8UC3) throw ValidationError("patch pixels must be 8-bit RGB");
  std::int64_t pass = 0;
  for (int r = 0; r < rgb.rows; ++r) {
    const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(r);
    for (int c = 0; c < rgb.cols; ++c) {
      const cv::Vec3b& px = row[c];
      int mx = std::max({px[0], px[1], px[2]});
      int mn = std::min({px[0], px[1], px[2]});
      double val = mx / 255.0;
      double sat = mx == 0 ? 0.0 : 1.0 - static_cast<double>(mn) / mx;
      if (sat > params.sat_min && val < params.val_max) ++pass;
    }
  }
  return static_cast<double>(pass) / (static_cast<double>(rgb.rows) * rgb.cols);
}

bool background_filter(const cv::Mat& rgb, const FilterParams& params) {
  return tissue_pass_fraction(rgb, params) >= params.tissue_fraction_min;
}

cv::Mat resize_patch(const cv::Mat& pixels, int out_size) {
  if (pixels.rows != pixels.cols) throw ValidationError("resize_patch expects a square patch");
  if (out_size <= 0) throw ValidationError("out_size must be positive");
  if (pixels.rows == out_size) return pixels.clone();
  cv::Mat out;
  cv::resize(pixels, out, cv::Size(out_size, out_size), 0, 0, cv::INTER_LINEAR);
  return out;
}

std::int64_t effective_size(std::int64_t nominal, double base_magnification) {
  if (base_magnification <= 0) throw ValidationError("base magnification must be positive");
  return std::llround(static_cast<double>(nominal) * base_magnification / kReferenceMagnification);
}

namespace {

std::int64_t clamp_origin(std::int64_t center, std::int64_t src, std::int64_t extent) {
  std::int64_t o = center - src / 2;
  return std::clamp<std::int64_t>(o, 0, extent - src);
}

}  // namespace

std::vector<PatchRecord> extract_labeled_patches(const slideio::SlideSource& slide,
                                                 const std::vector<ann::PointAnnotation>& points,
                                                 std::int64_t src_size, int out_size) {
  std::int64_t src = effective_size(src_size, slide.base_magnification());
  if (src > slide.width() || src > slide.height())
    throw ValidationError("slide " + slide.slide_id() + " smaller than patch size " +
                          std::to_string(src));
  std::vector<PatchRecord> out;
  out.reserve(points.size());
  for (const ann::PointAnnotation& pt : points) {
    PatchRecord rec;
    rec.slide_id = slide.slide_id();
    rec.x = clamp_origin(pt.x, src, slide.width());
    rec.y = clamp_origin(pt.y, src, slide.height());
    rec.src_size = src;
    rec.out_size = out_size;
    rec.label = pt.polarity == ann::Polarity::kPositive ? PatchLabel::kPos : PatchLabel::kNeg;
    out.push_back(rec);
  }
  return out;
}

std::vector<PatchRecord> extract_unlabeled_patches(const slideio::SlideSource& slide,
                                                   std::int64_t stride,
                                                   const FilterParams& params,
                                                   std::int64_t src_size, int out_size) {
  std::int64_t src = effective_size(src_size, slide.base_magnification());
  std::int64_t step = effective_size(stride, slide.base_magnification());
  if (step <= 0) throw ValidationError("stride must be positive");
  std::vector<PatchRecord> out;
  for (std::int64_t y = 0; y + src <= slide.height(); y += step) {
    for (std::int64_t x = 0; x + src <= slide.width(); x += step) {
      cv::Mat pixels = slide.read_region(x, y, src, src);
      if (!background_filter(pixels, params)) continue;
      PatchRecord rec;
      rec.slide_id = slide.slide_id();
      rec.x = x;
      rec.y = y;
      rec.src_size = src;
      rec.out_size = out_size;
      out.push_back(rec);
    }
  }
  return out;
}

void assign_region_labels(std::vector<PatchRecord>& records, const ann::RegionAnnotation& regions) {
  for (PatchRecord& rec : records) {
    const double cx = static_cast<double>(rec.x) + static_cast<double>(rec.src_size) / 2.0;
    const double cy = static_cast<double>(rec.y) + static_cast<double>(rec.src_size) / 2.0;
    rec.label = geom::point_in_any_polygon(cx, cy, regions.polygons) ? PatchLabel::kPos
                                                                     : PatchLabel::kNeg;
  }
}

cv::Mat read_patch_pixels(const slideio::SlideSource& slide, const PatchRecord& record) {
  return slide.read_region(record.x, record.y, record.src_size, record.src_size);
}

cv::Mat load_patch(const slideio::SlideSource& slide, const PatchRecord& record) {
  return resize_patch(read_patch_pixels(slide, record), record.out_size);
}

namespace {

bool window_contains_point(const PatchRecord& rec, const ann::PointAnnotation& pt) {
  return pt.x >= rec.x && pt.x < rec.x + rec.src_size && pt.y >= rec.y &&
         pt.y < rec.y + rec.src_size;
}

const slideio::SlideSource& source_for(const DatasetInputs& inputs, const std::string& slide_id) {
  auto it = inputs.sources.find(slide_id);
  if (it == inputs.sources.end() || !it->second)
    throw MissingArtifactError("no pixel source for slide " + slide_id);
  return *it->second;
}

}  // namespace

DetectionDataset build_detection_dataset(const DatasetInputs& inputs, const PatchConfig& config) {
  DetectionDataset ds;
  std::int64_t stride = config.stride > 0 ? config.stride : config.src_size;

  ManifestMeta meta;
  meta.src_size = config.src_size;
  meta.out_size = config.out_size;
  meta.stride = stride;
  meta.filter = config.filter;
  meta.seed = config.seed;
  ds.train_labeled.meta = meta;
  ds.train_unlabeled.meta = meta;
  ds.extension_unlabeled.meta = meta;
  ds.validation.meta = meta;
  ds.test.meta = meta;
  ds.supervised.meta = meta;

  std::size_t n_training = 0;
  bool supervised_ok = true;
  for (const ann::SlideRecord& sr : inputs.slides) {
    const slideio::SlideSource& slide = source_for(inputs, sr.slide_id);
    auto ann_it = inputs.annotations.slides.find(sr.slide_id);
    const ann::SlideAnnotations* sa =
        ann_it == inputs.annotations.slides.end() ? nullptr : &ann_it->second;
    int z = static_cast<int>(sr.diagnosis);

    auto grid = [&]() {
      auto recs = extract_unlabeled_patches(slide, stride, config.filter, config.src_size,
                                            config.out_size);
      for (PatchRecord& r : recs) {
        r.split = sr.split;
        r.z = z;
      }
      return recs;
    };

    switch (sr.split) {
      case ann::Split::kTraining: {
        ++n_training;
        std::vector<ann::PointAnnotation> points = sa ? sa->points : std::vector<ann::PointAnnotation>{};
        if (points.empty())
          ds.warnings.push_back("training slide " + sr.slide_id + " has no point annotations");
        auto labeled = extract_labeled_patches(slide, points, config.src_size, config.out_size);
        for (PatchRecord& r : labeled) {
          r.split = sr.split;
          r.z = z;
        }
        ds.train_labeled.records.insert(ds.train_labeled.records.end(), labeled.begin(),
                                        labeled.end());
        auto unlabeled = grid();
        if (config.exclude_point_windows && !points.empty()) {
          std::erase_if(unlabeled, [&](const PatchRecord& rec) {
            return std::any_of(points.begin(), points.end(), [&](const ann::PointAnnotation& pt) {
              return window_contains_point(rec, pt);
            });
          });
        }
        ds.train_unlabeled.records.insert(ds.train_unlabeled.records.end(), unlabeled.begin(),
                                          unlabeled.end());
        break;
      }
      case ann::Split::kExtension: {
        auto recs = grid();
        ds.extension_unlabeled.records.insert(ds.extension_unlabeled.records.end(), recs.begin(),
                                              recs.end());
        break;
      }
      case ann::Split::kValidation:
      case ann::Split::kTest: {
        if (!sa || !sa->regions)
          throw ValidationError("no region annotations for evaluation slide " + sr.slide_id);
        auto recs = grid();
        assign_region_labels(recs, *sa->regions);
        PatchManifest& dst = sr.split == ann::Split::kValidation ? ds.validation : ds.test;
        dst.records.insert(dst.records.end(), recs.begin(), recs.end());
        break;
      }
    }

    if (sr.split == ann::Split::kTraining || sr.split == ann::Split::kExtension) {
      if (sa && sa->regions) {
        auto recs = grid();
        assign_region_labels(recs, *sa->regions);
        ds.supervised.records.insert(ds.supervised.records.end(), recs.begin(), recs.end());
      } else {
        supervised_ok = false;
      }
    }
  }

  if (n_training == 0) throw ValidationError("dataset has no training slides");
  if (!supervised_ok) {
    if (!ds.supervised.records.empty())
      ds.warnings.push_back("supervised manifest dropped: not all training/extension slides have regions");
    ds.supervised.records.clear();
  }
  if (ds.extension_unlabeled.records.empty())
    ds.warnings.push_back("no extension patches");
  if (ds.validation.records.empty()) ds.warnings.push_back("no validation patches");
  if (ds.test.records.empty()) ds.warnings.push_back("no test patches");

  ds.train_labeled.finalize();
  ds.train_unlabeled.finalize();
  ds.extension_unlabeled.finalize();
  ds.validation.finalize();
  ds.test.finalize();
  ds.supervised.finalize();
  for (const std::string& w : ds.warnings) log::warn(w);
  return ds;
}

namespace {

json meta_to_json(const ManifestMeta& meta, std::size_t n_records) {
  json j;
  j["config_hash"] = meta.config_hash;
  j["version"] = kVersion;
  j["src_size"] = meta.src_size;
  j["out_size"] = meta.out_size;
  j["stride"] = meta.stride;
  j["seed"] = meta.seed;
  j["filter"] = {{"sat_min", meta.filter.sat_min},
                 {"val_max", meta.filter.val_max},
                 {"tissue_fraction_min", meta.filter.tissue_fraction_min}};
  j["records"] = n_records;
  return j;
}

json record_to_json(const PatchRecord& rec) {
  json j;
  j["slide_id"] = rec.slide_id;
  j["x"] = rec.x;
  j["y"] = rec.y;
  j["src_size"] = rec.src_size;
  j["out_size"] = rec.out_size;
  j["label"] = to_string(rec.label);
  j["z"] = rec.z;
  j["split"] = ann::to_string(rec.split);
  return j;
}

PatchRecord record_from_json(const json& j) {
  PatchRecord rec;
  rec.slide_id = j.at("slide_id").get<std::string>();
  rec.x = j.at("x").get<std::int64_t>();
  rec.y = j.at("y").get<std::int64_t>();
  rec.src_size = j.at("src_size").get<std::int64_t>();
  rec.out_size = j.at("out_size").get<int>();
  rec.label = patch_label_from_string(j.at("label").get<std::string>());
  rec.z = j.value("z", 0);
  rec.split = ann::split_from_string(j.at("split").get<std::string>());
  return rec;
}

}  // namespace

void save_manifest(const PatchManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << meta_to_json(manifest.meta, manifest.records.size()).dump() << "\n";
  for (const PatchRecord& rec : manifest.records) out << record_to_json(rec).dump() << "\n";
  if (!out) throw IoError("write failed for manifest " + path.string());
}

PatchManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("manifest not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty manifest " + path.string());
  json header = json::parse(line);
  PatchManifest manifest;
  manifest.meta.config_hash = header.value("config_hash", "");
  manifest.meta.src_size = header.at("src_size").get<std::int64_t>();
  manifest.meta.out_size = header.at("out_size").get<int>();
  manifest.meta.stride = header.at("stride").get<std::int64_t>();
  manifest.meta.seed = header.at("seed").get<std::uint64_t>();
  const json& f = header.at("filter");
  manifest.meta.filter.sat_min = f.at("sat_min").get<double>();
  manifest.meta.filter.val_max = f.at("val_max").get<double>();
  manifest.meta.filter.tissue_fraction_min = f.at("tissue_fraction_min").get<double>();
  std::size_t expected = header.at("records").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    manifest.records.push_back(record_from_json(json::parse(line)));
  }
  if (manifest.records.size() != expected)
    throw ValidationError("manifest " + path.string() + " truncated: expected " +
                          std::to_string(expected) + " records, found " +
                          std::to_string(manifest.records.size()));
  return manifest;
}

void save_manifest_csv(const PatchManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest csv " + path.string());
  out << "# version=" << kVersion << " config_hash=" << manifest.meta.config_hash << "\n";
  out << "slide_id,x,y,src_size,out_size,label,z,split\n";
  for (const PatchRecord& rec : manifest.records) {
    out << rec.slide_id << ',' << rec.x << ',' << rec.y << ',' << rec.src_size << ','
        << rec.out_size << ',' << to_string(rec.label) << ',' << rec.z << ','
        << ann::to_string(rec.split) << "\n";
  }
  if (!out) throw IoError("write failed for manifest csv " + path.string());
}

}  // namespace rcc::patching
