#include <map>

#include "doctest.h"
#include "rcc/annotations.hpp"
#include "rcc/errors.hpp"
#include "temp_dir.hpp"

using namespace rcc;
using testutil::TempDir;
using testutil::read_text;
using testutil::write_text;

TEST_CASE("point annotations load from a single object") {
  TempDir tmp("ann_points");
  write_text(tmp.file("p.json"), R"({
    "slide_id": "s1",
    "points": [
      {"x": 100, "y": 200, "label": "positive"},
      {"x": 300, "y": 400, "label": "negative"}
    ]})");
  auto set = ann::load_point_annotations(tmp.file("p.json"));
  REQUIRE(set.slides.count("s1") == 1);
  const auto& pts = set.slides["s1"].points;
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].x == 100);
  CHECK(pts[0].y == 200);
  CHECK(pts[0].polarity == ann::Polarity::kPositive);
  CHECK(pts[1].polarity == ann::Polarity::kNegative);
}

TEST_CASE("point annotations load from an array of objects") {
  TempDir tmp("ann_points_arr");
  write_text(tmp.file("p.json"), R"([
    {"slide_id": "a", "points": [{"x": 1, "y": 2, "label": "positive"}]},
    {"slide_id": "b", "points": [{"x": 3, "y": 4, "label": "negative"}]}
  ])");
  auto set = ann::load_point_annotations(tmp.file("p.json"));
  CHECK(set.slides.size() == 2);
  CHECK(set.point_count() == 2);
}

TEST_CASE("five positive and five negative points per slide") {
  TempDir tmp("ann_ten");
  std::string body = R"({"slide_id": "s", "points": [)";
  for (int i = 0; i < 10; ++i) {
    if (i) body += ",";
    body += "{\"x\": " + std::to_string(100 * i) + ", \"y\": " + std::to_string(50 * i) +
            ", \"label\": \"" + (i < 5 ? "positive" : "negative") + "\"}";
  }
  body += "]}";
  write_text(tmp.file("p.json"), body);
  auto set = ann::load_point_annotations(tmp.file("p.json"));
  CHECK(set.point_count() == 10);
  int pos = 0;
  for (const auto& p : set.slides["s"].points)
    if (p.polarity == ann::Polarity::kPositive) ++pos;
  CHECK(pos == 5);
}

TEST_CASE("duplicate point is dropped once with a warning") {
  TempDir tmp("ann_dup");
  write_text(tmp.file("p.json"), R"({
    "slide_id": "s1",
    "points": [
      {"x": 10, "y": 20, "label": "positive"},
      {"x": 10, "y": 20, "label": "positive"}
    ]})");
  std::vector<std::string> warnings;
  auto set = ann::load_point_annotations(tmp.file("p.json"), &warnings);
  CHECK(set.point_count() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("duplicate") != std::string::npos);
}

TEST_CASE("same coordinates with opposite polarity are distinct points") {
  TempDir tmp("ann_polarity");
  write_text(tmp.file("p.json"), R"({
    "slide_id": "s1",
    "points": [
      {"x": 10, "y": 20, "label": "positive"},
      {"x": 10, "y": 20, "label": "negative"}
    ]})");
  std::vector<std::string> warnings;
  auto set = ann::load_point_annotations(tmp.file("p.json"), &warnings);
  CHECK(set.point_count() == 2);
  CHECK(warnings.empty());
}

TEST_CASE("unknown polarity label is rejected") {
  TempDir tmp("ann_badlabel");
  write_text(tmp.file("p.json"),
             R"({"slide_id": "s", "points": [{"x": 1, "y": 2, "label": "maybe"}]})");
  CHECK_THROWS_AS(ann::load_point_annotations(tmp.file("p.json")), ValidationError);
}

TEST_CASE("point annotations survive a save/load round trip") {
  TempDir tmp("ann_rt");
  ann::AnnotationSet set;
  set.slides["s1"].points = {{100, 200, ann::Polarity::kPositive},
                             {300, 400, ann::Polarity::kNegative}};
  ann::save_point_annotations(set, tmp.file("p.json"), "cafebabe");
  auto back = ann::load_point_annotations(tmp.file("p.json"));
  REQUIRE(back.slides.count("s1") == 1);
  const auto& pts = back.slides["s1"].points;
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].x == 100);
  CHECK(pts[1].polarity == ann::Polarity::kNegative);
  // Outputs carry provenance fields.
  const std::string text = read_text(tmp.file("p.json"));
  CHECK(text.find("version") != std::string::npos);
  CHECK(text.find("cafebabe") != std::string::npos);
}

TEST_CASE("region annotations: square polygon round trip") {
  TempDir tmp("ann_regions");
  write_text(tmp.file("r.json"), R"({
    "slide_id": "s1",
    "label": "cancerous",
    "regions": [[[0, 0], [1000, 0], [1000, 1000], [0, 1000]]]
  })");
  auto set = ann::load_region_annotations(tmp.file("r.json"));
  REQUIRE(set.slides["s1"].regions.has_value());
  REQUIRE(set.slides["s1"].regions->polygons.size() == 1);
  CHECK(set.slides["s1"].regions->polygons[0].size() == 4);
  CHECK(set.region_count() == 1);

  ann::save_region_annotations(set, tmp.file("r2.json"), "beef");
  auto back = ann::load_region_annotations(tmp.file("r2.json"));
  CHECK(back.slides["s1"].regions->polygons[0].size() == 4);
  CHECK(back.slides["s1"].regions->label == "cancerous");
}

TEST_CASE("region with explicit closing vertex is normalized") {
  TempDir tmp("ann_closing");
  write_text(tmp.file("r.json"), R"({
    "slide_id": "s",
    "regions": [[[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]]]
  })");
  auto set = ann::load_region_annotations(tmp.file("r.json"));
  CHECK(set.slides["s"].regions->polygons[0].size() == 4);
}

TEST_CASE("multiple polygons on one slide are all kept") {
  TempDir tmp("ann_multi");
  write_text(tmp.file("r.json"), R"({
    "slide_id": "s",
    "regions": [
      [[0, 0], [10, 0], [10, 10], [0, 10]],
      [[20, 20], [30, 20], [30, 30], [20, 30]]
    ]})");
  auto set = ann::load_region_annotations(tmp.file("r.json"));
  CHECK(set.slides["s"].regions->polygons.size() == 2);
  CHECK(set.region_count() == 2);
}

TEST_CASE("self-intersecting region polygon is rejected") {
  TempDir tmp("ann_bowtie");
  write_text(tmp.file("r.json"), R"({
    "slide_id": "s",
    "regions": [[[0, 0], [10, 10], [10, 0], [0, 10]]]
  })");
  CHECK_THROWS_AS(ann::load_region_annotations(tmp.file("r.json")), ValidationError);
}

TEST_CASE("point_in_region honors the boundary") {
  ann::RegionAnnotation region;
  region.polygons = {{{0, 0}, {100, 0}, {100, 100}, {0, 100}}};
  CHECK(ann::point_in_region(50, 50, region));
  CHECK(ann::point_in_region(100, 50, region));
  CHECK_FALSE(ann::point_in_region(101, 50, region));
}

TEST_CASE("point bounds validation uses the half-open pixel grid") {
  ann::AnnotationSet set;
  set.slides["s"].points = {{999, 500, ann::Polarity::kPositive}};
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> dims{{"s", {1000, 800}}};
  CHECK_NOTHROW(ann::validate_point_bounds(set, dims));

  set.slides["s"].points = {{1000, 500, ann::Polarity::kPositive}};  // x == width
  CHECK_THROWS_AS(ann::validate_point_bounds(set, dims), ValidationError);

  set.slides["s"].points = {{-1, 0, ann::Polarity::kPositive}};
  CHECK_THROWS_AS(ann::validate_point_bounds(set, dims), ValidationError);

  set.slides["s"].points = {{10, 800, ann::Polarity::kPositive}};  // y == height
  CHECK_THROWS_AS(ann::validate_point_bounds(set, dims), ValidationError);
}

TEST_CASE("enum string conversions round trip and reject junk") {
  for (auto p : {ann::Polarity::kPositive, ann::Polarity::kNegative})
    CHECK(ann::polarity_from_string(ann::to_string(p)) == p);
  for (auto d : {ann::Diagnosis::kCcRCC, ann::Diagnosis::kPRCC, ann::Diagnosis::kChRCC})
    CHECK(ann::diagnosis_from_string(ann::to_string(d)) == d);
  for (auto s : {ann::Split::kTraining, ann::Split::kExtension, ann::Split::kValidation,
                 ann::Split::kTest})
    CHECK(ann::split_from_string(ann::to_string(s)) == s);
  CHECK_THROWS_AS(ann::polarity_from_string("sideways"), ValidationError);
  CHECK_THROWS_AS(ann::diagnosis_from_string("unknown"), ValidationError);
  CHECK_THROWS_AS(ann::split_from_string("holdout"), ValidationError);
}

TEST_CASE("slide index round trip keeps diagnosis, split and paths") {
  TempDir tmp("ann_index");
  std::vector<ann::SlideRecord> slides(2);
  slides[0].slide_id = "s1";
  slides[0].path = tmp.file("s1.png").string();
  slides[0].diagnosis = ann::Diagnosis::kPRCC;
  slides[0].split = ann::Split::kTraining;
  slides[0].points_path = tmp.file("s1.points.json").string();
  slides[1].slide_id = "s2";
  slides[1].path = tmp.file("s2.png").string();
  slides[1].diagnosis = ann::Diagnosis::kChRCC;
  slides[1].split = ann::Split::kTest;
  slides[1].regions_path = tmp.file("s2.regions.json").string();

  ann::save_slide_index(slides, tmp.file("index.json"), "feed");
  auto back = ann::load_slide_index(tmp.file("index.json"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].slide_id == "s1");
  CHECK(back[0].diagnosis == ann::Diagnosis::kPRCC);
  CHECK(back[0].split == ann::Split::kTraining);
  REQUIRE(back[0].points_path.has_value());
  CHECK_FALSE(back[0].regions_path.has_value());
  CHECK(back[1].split == ann::Split::kTest);
  REQUIRE(back[1].regions_path.has_value());
  CHECK(read_text(tmp.file("index.json")).find("feed") != std::string::npos);
}

TEST_CASE("slide index also loads the bare-array form") {
  TempDir tmp("ann_index_arr");
  write_text(tmp.file("index.json"), R"([
    {"slide_id": "x", "path": "x.png", "diagnosis": "ccRCC", "split": "validation"}
  ])");
  auto back = ann::load_slide_index(tmp.file("index.json"));
  REQUIRE(back.size() == 1);
  CHECK(back[0].split == ann::Split::kValidation);
}

TEST_CASE("missing annotation file raises an error") {
  CHECK_THROWS_AS(ann::load_point_annotations("/nonexistent/nowhere.json"), Error);
}
