#include <random>

#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "oracles.hpp"
#include "rcc/errors.hpp"
#include "rcc/patching.hpp"
#include "temp_dir.hpp"

using namespace rcc;
using testutil::TempDir;
using testutil::read_text;

namespace {

// Constant-color slide of arbitrary size without the backing raster.
class ConstSlide : public slideio::SlideSource {
 public:
  ConstSlide(std::string id, std::int64_t w, std::int64_t h, cv::Vec3b rgb, double mag = 40.0)
      : SlideSource(std::move(id), w, h, mag), rgb_(rgb) {}

 protected:
  cv::Mat read_region_impl(std::int64_t, std::int64_t, std::int64_t w,
                           std::int64_t h) const override {
    return cv::Mat(static_cast<int>(h), static_cast<int>(w), CV_8UC3,
                   cv::Scalar(rgb_[0], rgb_[1], rgb_[2]));
  }

 private:
  cv::Vec3b rgb_;
};

const cv::Vec3b kWhite{255, 255, 255};
const cv::Vec3b kPink{230, 160, 200};  // saturated enough to count as tissue

cv::Mat half_tissue_image(int size) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(kWhite[0], kWhite[1], kWhite[2]));
  img(cv::Rect(size / 2, 0, size / 2, size))
      .setTo(cv::Scalar(kPink[0], kPink[1], kPink[2]));
  return img;
}

ann::PointAnnotation pt(std::int64_t x, std::int64_t y,
                        ann::Polarity pol = ann::Polarity::kPositive) {
  return {x, y, pol};
}

}  // namespace

TEST_CASE("labeled windows center on the point and clamp into the slide") {
  ConstSlide slide("s", 10000, 10000, kPink);
  auto recs = patching::extract_labeled_patches(
      slide, {pt(5000, 6000), pt(500, 500), pt(9500, 9900, ann::Polarity::kNegative)}, 2000, 224);
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].x == 4000);
  CHECK(recs[0].y == 5000);
  CHECK(recs[1].x == 0);
  CHECK(recs[1].y == 0);
  CHECK(recs[2].x == 8000);  // clamped at width - src
  CHECK(recs[2].y == 8000);
  for (const auto& r : recs) {
    CHECK(r.src_size == 2000);
    CHECK(r.out_size == 224);
    CHECK(r.slide_id == "s");
  }
  CHECK(recs[0].label == patching::PatchLabel::kPos);
  CHECK(recs[2].label == patching::PatchLabel::kNeg);
}

TEST_CASE("ten points produce ten labeled records with matching polarity") {
  ConstSlide slide("s", 10000, 10000, kPink);
  std::vector<ann::PointAnnotation> points;
  for (int i = 0; i < 5; ++i) points.push_back(pt(1000 + 700 * i, 2000));
  for (int i = 0; i < 5; ++i)
    points.push_back(pt(1000 + 700 * i, 7000, ann::Polarity::kNegative));
  auto recs = patching::extract_labeled_patches(slide, points, 2000, 224);
  REQUIRE(recs.size() == 10);
  int pos = 0;
  for (const auto& r : recs) pos += r.label == patching::PatchLabel::kPos;
  CHECK(pos == 5);
}

TEST_CASE("slide smaller than the window cannot host labeled patches") {
  ConstSlide slide("s", 1000, 1000, kPink);
  CHECK_THROWS_AS(patching::extract_labeled_patches(slide, {pt(500, 500)}, 2000, 224),
                  ValidationError);
}

TEST_CASE("all-background slide yields no unlabeled records") {
  ConstSlide slide("w", 8000, 8000, kWhite);
  auto recs = patching::extract_unlabeled_patches(slide, 2000, {}, 2000, 224);
  CHECK(recs.empty());
}

TEST_CASE("full-tissue slide tiles into the prefix grid") {
  ConstSlide slide("p", 8000, 8000, kPink);
  auto recs = patching::extract_unlabeled_patches(slide, 2000, {}, 2000, 224);
  REQUIRE(recs.size() == 16);  // floor(8000/2000)^2
  CHECK(recs.front().x == 0);
  CHECK(recs.front().y == 0);
  // Row-major order with the expected lattice.
  int idx = 0;
  for (std::int64_t y = 0; y < 8000; y += 2000)
    for (std::int64_t x = 0; x < 8000; x += 2000, ++idx) {
      CHECK(recs[idx].x == x);
      CHECK(recs[idx].y == y);
      CHECK(recs[idx].label == patching::PatchLabel::kUnlabeled);
    }
  // A ragged edge smaller than the window is left uncovered.
  ConstSlide ragged("r", 8192, 8192, kPink);
  CHECK(patching::extract_unlabeled_patches(ragged, 2000, {}, 2000, 224).size() == 16);
}

TEST_CASE("windows are rescaled on slides scanned below the reference magnification") {
  CHECK(patching::effective_size(2000, 40.0) == 2000);
  CHECK(patching::effective_size(2000, 20.0) == 1000);
  CHECK(patching::effective_size(2000, 10.0) == 500);
  CHECK(patching::effective_size(1000, 30.0) == 750);
  CHECK_THROWS_AS(patching::effective_size(2000, 0.0), ValidationError);

  ConstSlide low("low", 4000, 4000, kPink, 20.0);
  auto recs = patching::extract_unlabeled_patches(low, 2000, {}, 2000, 224);
  REQUIRE(recs.size() == 16);  // effective window and stride are 1000
  for (const auto& r : recs) CHECK(r.src_size == 1000);
  auto labeled = patching::extract_labeled_patches(low, {pt(2000, 2000)}, 2000, 224);
  REQUIRE(labeled.size() == 1);
  CHECK(labeled[0].src_size == 1000);
  CHECK(labeled[0].x == 1500);
}

TEST_CASE("background filter: white fails, tissue passes, threshold splits the middle") {
  cv::Mat white(64, 64, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::Mat pink(64, 64, CV_8UC3, cv::Scalar(kPink[0], kPink[1], kPink[2]));
  patching::FilterParams params;
  CHECK_FALSE(patching::background_filter(white, params));
  CHECK(patching::background_filter(pink, params));

  cv::Mat half = half_tissue_image(64);
  CHECK(patching::tissue_pass_fraction(half, params) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(patching::background_filter(half, params));  // 0.5 >= 0.25
  params.tissue_fraction_min = 0.6;
  CHECK_FALSE(patching::background_filter(half, params));
}

TEST_CASE("tissue fraction matches a per-pixel reference on mixed content") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> byte(0, 255);
  cv::Mat img(32, 32, CV_8UC3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      img.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>(byte(gen)),
                                          static_cast<uchar>(byte(gen)),
                                          static_cast<uchar>(byte(gen)));
  patching::FilterParams params;
  // Reference count via the documented HSV rule, computed directly from RGB.
  int passing = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const cv::Vec3b& c = img.at<cv::Vec3b>(y, x);
      const double mx = std::max({c[0], c[1], c[2]}) / 255.0;
      const double mn = std::min({c[0], c[1], c[2]}) / 255.0;
      const double sat = mx > 0 ? 1.0 - mn / mx : 0.0;
      if (sat > params.sat_min && mx < params.val_max) ++passing;
    }
  const double expected = passing / 1024.0;
  CHECK(patching::tissue_pass_fraction(img, params) ==
        doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("center-point rule labels grid records against the region mask") {
  ConstSlide slide("p", 8000, 8000, kPink);
  auto recs = patching::extract_unlabeled_patches(slide, 1000, {}, 1000, 224);
  REQUIRE(recs.size() == 64);

  ann::RegionAnnotation regions;
  regions.polygons = {{{1500, 1500}, {5500, 1800}, {6200, 5400}, {2200, 6000}},
                      {{6500, 6500}, {7800, 6500}, {7800, 7800}, {6500, 7800}}};
  patching::assign_region_labels(recs, regions);

  std::vector<std::vector<oracles::Pt>> opolys;
  for (const auto& poly : regions.polygons) {
    std::vector<oracles::Pt> o;
    for (const auto& v : poly) o.push_back({v.x, v.y});
    opolys.push_back(o);
  }
  for (const auto& r : recs) {
    const double cx = r.x + r.src_size / 2.0;
    const double cy = r.y + r.src_size / 2.0;
    bool inside = false;
    for (const auto& o : opolys) inside = inside || oracles::point_in_polygon(cx, cy, o);
    CHECK(r.label == (inside ? patching::PatchLabel::kPos : patching::PatchLabel::kNeg));
  }
}

TEST_CASE("window whose center sits on the region boundary counts as cancer") {
  std::vector<patching::PatchRecord> recs(1);
  recs[0].x = 1000;
  recs[0].y = 1000;
  recs[0].src_size = 2000;
  ann::RegionAnnotation regions;
  regions.polygons = {{{2000, 2000}, {6000, 2000}, {6000, 6000}, {2000, 6000}}};
  patching::assign_region_labels(recs, regions);
  CHECK(recs[0].label == patching::PatchLabel::kPos);  // center (2000,2000) on the corner
}

TEST_CASE("resize_patch is deterministic and preserves flat patches") {
  cv::Mat flat(64, 64, CV_8UC3, cv::Scalar(120, 80, 200));
  cv::Mat small = patching::resize_patch(flat, 32);
  REQUIRE(small.rows == 32);
  REQUIRE(small.cols == 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) CHECK(small.at<cv::Vec3b>(y, x) == cv::Vec3b(120, 80, 200));

  CHECK(patching::resize_patch(flat, 64).at<cv::Vec3b>(17, 3) == cv::Vec3b(120, 80, 200));

  std::mt19937_64 gen(5);
  cv::Mat noisy(64, 64, CV_8UC3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      noisy.at<cv::Vec3b>(y, x) = cv::Vec3b(gen() % 256, gen() % 256, gen() % 256);
  cv::Mat a = patching::resize_patch(noisy, 24);
  cv::Mat b = patching::resize_patch(noisy, 24);
  CHECK(cv::countNonZero(a.reshape(1) != b.reshape(1)) == 0);
}

TEST_CASE("patch label conversions") {
  using patching::PatchLabel;
  CHECK(patching::four_class_index(PatchLabel::kNormal) == 0);
  CHECK(patching::four_class_index(PatchLabel::kCcRCC) == 1);
  CHECK(patching::four_class_index(PatchLabel::kPRCC) == 2);
  CHECK(patching::four_class_index(PatchLabel::kChRCC) == 3);
  CHECK(patching::four_class_index(PatchLabel::kPos) == -1);
  CHECK(patching::four_class_index(PatchLabel::kUnlabeled) == -1);
  for (int y = 0; y < 4; ++y)
    CHECK(patching::four_class_index(patching::label_from_four_class(y)) == y);
  CHECK(patching::label_from_diagnosis(ann::Diagnosis::kPRCC) == PatchLabel::kPRCC);
  for (auto l : {PatchLabel::kUnlabeled, PatchLabel::kPos, PatchLabel::kNeg, PatchLabel::kNormal,
                 PatchLabel::kCcRCC, PatchLabel::kPRCC, PatchLabel::kChRCC})
    CHECK(patching::patch_label_from_string(patching::to_string(l)) == l);
  CHECK_THROWS_AS(patching::patch_label_from_string("benign"), ValidationError);
}

TEST_CASE("manifest finalize sorts and rejects duplicates") {
  patching::PatchManifest m;
  patching::PatchRecord a, b, c;
  a.slide_id = "s2";
  a.x = 0;
  a.y = 0;
  b.slide_id = "s1";
  b.x = 2000;
  b.y = 0;
  c.slide_id = "s1";
  c.x = 0;
  c.y = 2000;
  m.records = {a, b, c};
  m.finalize();
  CHECK(m.records[0].slide_id == "s1");
  CHECK(m.records[0].x == 2000);  // (s1, y=0) before (s1, y=2000)
  CHECK(m.records[1].y == 2000);
  CHECK(m.records[2].slide_id == "s2");

  m.records.push_back(m.records[0]);
  CHECK_THROWS_AS(m.finalize(), ValidationError);
}

TEST_CASE("manifest JSONL round trip is lossless and stable on disk") {
  TempDir tmp("manifest_rt");
  patching::PatchManifest m;
  m.meta.src_size = 2000;
  m.meta.out_size = 224;
  m.meta.stride = 2000;
  m.meta.seed = 7;
  m.meta.config_hash = "abc123";
  for (int i = 0; i < 5; ++i) {
    patching::PatchRecord r;
    r.slide_id = "s" + std::to_string(i % 2);
    r.x = 2000 * i;
    r.y = 4000 - 1000 * i;
    r.label = i % 2 ? patching::PatchLabel::kPos : patching::PatchLabel::kNeg;
    r.z = 1 + i % 3;
    r.split = ann::Split::kTraining;
    m.records.push_back(r);
  }
  m.finalize();
  patching::save_manifest(m, tmp.file("m.jsonl"));
  auto back = patching::load_manifest(tmp.file("m.jsonl"));
  CHECK(back.meta.src_size == m.meta.src_size);
  CHECK(back.meta.config_hash == "abc123");
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) CHECK(back.records[i] == m.records[i]);

  patching::save_manifest(back, tmp.file("m2.jsonl"));
  CHECK(read_text(tmp.file("m.jsonl")) == read_text(tmp.file("m2.jsonl")));

  patching::save_manifest_csv(m, tmp.file("m.csv"));
  const std::string csv = read_text(tmp.file("m.csv"));
  CHECK(csv.find("slide_id") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 6);  // header + 5 rows
}

TEST_CASE("detection dataset realizes the split semantics") {
  patching::DatasetInputs inputs;
  auto add_slide = [&](const std::string& id, ann::Split split, cv::Vec3b color) {
    ann::SlideRecord sr;
    sr.slide_id = id;
    sr.split = split;
    sr.diagnosis = ann::Diagnosis::kCcRCC;
    inputs.slides.push_back(sr);
    inputs.sources[id] = std::make_shared<ConstSlide>(id, 4000, 4000, color);
  };
  add_slide("train_a", ann::Split::kTraining, kPink);
  add_slide("ext_a", ann::Split::kExtension, kPink);
  add_slide("val_a", ann::Split::kValidation, kPink);
  add_slide("test_a", ann::Split::kTest, kPink);

  inputs.annotations.slides["train_a"].points = {pt(1000, 1000),
                                                 pt(3000, 3000, ann::Polarity::kNegative)};
  ann::RegionAnnotation region;
  region.polygons = {{{0, 0}, {2000, 0}, {2000, 2000}, {0, 2000}}};
  inputs.annotations.slides["train_a"].regions = region;
  inputs.annotations.slides["ext_a"].regions = region;
  inputs.annotations.slides["val_a"].regions = region;
  inputs.annotations.slides["test_a"].regions = region;

  patching::PatchConfig cfg;
  cfg.src_size = 2000;
  cfg.out_size = 224;
  auto ds = patching::build_detection_dataset(inputs, cfg);

  CHECK(ds.train_labeled.size() == 2);
  // 4 grid windows minus the two containing annotated points.
  CHECK(ds.train_unlabeled.size() == 2);
  CHECK(ds.extension_unlabeled.size() == 4);
  CHECK(ds.validation.size() == 4);
  CHECK(ds.test.size() == 4);
  // Supervised pool: region-labeled grids over training + extension slides.
  CHECK(ds.supervised.size() == 8);

  for (const auto& r : ds.validation.records) {
    const bool inside = r.x + 1000 <= 2000 && r.y + 1000 <= 2000;
    CHECK(r.label == (inside ? patching::PatchLabel::kPos : patching::PatchLabel::kNeg));
  }
  int pos = 0;
  for (const auto& r : ds.supervised.records) pos += r.label == patching::PatchLabel::kPos;
  CHECK(pos == 2);  // one per gridded slide

  // No record strays outside its slide's split pool.
  for (const auto& r : ds.train_unlabeled.records) CHECK(r.slide_id == "train_a");
  for (const auto& r : ds.extension_unlabeled.records) CHECK(r.slide_id == "ext_a");
  for (const auto& r : ds.validation.records) CHECK(r.slide_id == "val_a");
  for (const auto& r : ds.test.records) CHECK(r.slide_id == "test_a");
  for (const auto& r : ds.train_labeled.records) CHECK(r.z == 1);

  SUBCASE("disabling point exclusion keeps the full grid") {
    cfg.exclude_point_windows = false;
    auto ds2 = patching::build_detection_dataset(inputs, cfg);
    CHECK(ds2.train_unlabeled.size() == 4);
  }

  SUBCASE("a gridded slide without regions drops the supervised pool") {
    inputs.annotations.slides["ext_a"].regions.reset();
    auto ds2 = patching::build_detection_dataset(inputs, cfg);
    CHECK(ds2.supervised.size() == 0);
    bool warned = false;
    for (const auto& w : ds2.warnings)
      warned = warned || w.find("supervised") != std::string::npos;
    CHECK(warned);
  }
}

TEST_CASE("dataset with no training slides is rejected") {
  patching::DatasetInputs inputs;
  ann::SlideRecord sr;
  sr.slide_id = "v";
  sr.split = ann::Split::kValidation;
  inputs.slides.push_back(sr);
  inputs.sources["v"] = std::make_shared<ConstSlide>("v", 4000, 4000, kPink);
  ann::RegionAnnotation region;
  region.polygons = {{{0, 0}, {2000, 0}, {2000, 2000}, {0, 2000}}};
  inputs.annotations.slides["v"].regions = region;
  patching::PatchConfig cfg;
  CHECK_THROWS_AS(patching::build_detection_dataset(inputs, cfg), ValidationError);
}

TEST_CASE("read and load patch deliver raw and resized windows") {
  ConstSlide slide("p", 4000, 4000, kPink);
  patching::PatchRecord rec;
  rec.slide_id = "p";
  rec.x = 100;
  rec.y = 200;
  rec.src_size = 500;
  rec.out_size = 64;
  cv::Mat raw = patching::read_patch_pixels(slide, rec);
  CHECK(raw.rows == 500);
  CHECK(raw.cols == 500);
  cv::Mat resized = patching::load_patch(slide, rec);
  CHECK(resized.rows == 64);
  CHECK(resized.at<cv::Vec3b>(10, 10) == kPink);
}
