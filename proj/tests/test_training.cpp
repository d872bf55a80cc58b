#include <memory>

#include "doctest.h"
#include "rcc/errors.hpp"
#include "rcc/slide.hpp"
#include "rcc/training.hpp"
#include "temp_dir.hpp"

using namespace rcc;

namespace {

nn::Model tiny_model(int num_classes = 2, std::uint64_t seed = 1) {
  nn::ModelSpec spec;
  spec.architecture = nn::Architecture::kSmallCnn;
  spec.input_size = 8;
  spec.num_classes = num_classes;
  spec.init_seed = seed;
  return nn::build_model(spec);
}

std::shared_ptr<slideio::RasterSlide> solid_slide(const std::string& id, int size,
                                                  cv::Vec3b color) {
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(color[0], color[1], color[2]));
  return std::make_shared<slideio::RasterSlide>(id, img, 40.0);
}

}  // namespace

TEST_CASE("train config validation") {
  train::TrainConfig c;
  CHECK_NOTHROW(train::validate(c));
  auto bad = [](auto&& mutate) {
    train::TrainConfig b;
    mutate(b);
    CHECK_THROWS_AS(train::validate(b), ConfigError);
  };
  bad([](train::TrainConfig& b) { b.lr = 0.0; });
  bad([](train::TrainConfig& b) { b.epochs = 0; });
  bad([](train::TrainConfig& b) { b.batch_labeled = 0; });
  bad([](train::TrainConfig& b) { b.batch_unlabeled = 0; });
  bad([](train::TrainConfig& b) { b.plateau_patience = 0; });
  bad([](train::TrainConfig& b) { b.plateau_factor = 1.0; });
  bad([](train::TrainConfig& b) { b.finetune_epochs = 0; });
}

TEST_CASE("binary label convention") {
  patching::PatchRecord rec;
  rec.label = patching::PatchLabel::kPos;
  CHECK(train::binary_label(rec) == 1);
  rec.label = patching::PatchLabel::kNeg;
  CHECK(train::binary_label(rec) == 0);
  rec.label = patching::PatchLabel::kUnlabeled;
  CHECK(train::binary_label(rec) == -1);
  rec.label = patching::PatchLabel::kCcRCC;
  CHECK(train::binary_label(rec) == -1);
}

TEST_CASE("history csv round trip") {
  testutil::TempDir tmp("hist");
  std::vector<train::HistoryRow> rows{
      {0, 1.25, 0.5, 0.001, 0.0},
      {1, 0.75, 0.625, 0.001, 7.5},
      {2, 0.5, 0.875, 0.0001, 15.0},
  };
  const auto path = tmp.file("history.csv");
  train::write_history_csv(rows, path, "beefcafe");
  const std::string text = testutil::read_text(path);
  CHECK(text.find("# version=") != std::string::npos);
  CHECK(text.find("beefcafe") != std::string::npos);

  auto back = train::read_history_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].epoch == rows[i].epoch);
    CHECK(back[i].train_loss == rows[i].train_loss);
    CHECK(back[i].val_metric == rows[i].val_metric);
    CHECK(back[i].lr == rows[i].lr);
    CHECK(back[i].lambda == rows[i].lambda);
  }
  CHECK_THROWS_AS(train::read_history_csv(tmp.file("absent.csv")), Error);
}

TEST_CASE("checkpoint round trip preserves weights bit for bit") {
  testutil::TempDir tmp("ckpt");
  nn::Model model = tiny_model(2, 42);

  // Warm the BatchNorm running stats so buffers are nontrivial.
  Rng rng(3);
  nn::Tensor x({2, 3, 8, 8});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  model.forward(x, true);

  train::Checkpoint cp;
  cp.spec = nn::ModelSpec{nn::Architecture::kSmallCnn, 8, 2, 42, ""};
  cp.state = nn::snapshot_state(model);
  cp.config = {{"lr", 0.001}, {"mode", "ssl"}};
  cp.history = {{0, 2.0, 0.5, 0.001, 0.0}, {1, 1.0, 0.75, 0.001, 5.0}};
  cp.phase = "initial";
  cp.best_metric = 0.75;
  cp.best_epoch = 1;
  cp.config_hash = "0badf00d";
  train::save_checkpoint(cp, tmp.path());

  auto back = train::load_checkpoint(tmp.path());
  CHECK(back.spec.architecture == cp.spec.architecture);
  CHECK(back.spec.input_size == 8);
  CHECK(back.spec.num_classes == 2);
  CHECK(back.spec.init_seed == 42);
  CHECK(back.config.at("mode") == "ssl");
  REQUIRE(back.history.size() == 2);
  CHECK(back.history[1].lambda == 5.0);
  CHECK(back.phase == "initial");
  CHECK(back.best_metric == 0.75);
  CHECK(back.best_epoch == 1);
  CHECK(back.config_hash == "0badf00d");
  REQUIRE(back.state.size() == cp.state.size());
  for (std::size_t i = 0; i < cp.state.size(); ++i) {
    REQUIRE(back.state[i].shape == cp.state[i].shape);
    CHECK(back.state[i].data == cp.state[i].data);
  }

  // A model rebuilt from the checkpoint answers identically.
  nn::Model twin = train::model_from_checkpoint(back);
  nn::Tensor probe({1, 3, 8, 8});
  for (std::size_t i = 0; i < probe.data.size(); ++i)
    probe.data[i] = static_cast<float>(i % 13) / 13.0f;
  auto a = model.forward(probe, false);
  auto b = twin.forward(probe, false);
  CHECK(a.data == b.data);

  CHECK_THROWS_AS(train::load_checkpoint(tmp.path() / "nowhere"), MissingArtifactError);
}

TEST_CASE("load_dataset realizes manifest records against slide sources") {
  auto slide = solid_slide("s1", 256, {230, 160, 200});
  std::map<std::string, std::shared_ptr<slideio::SlideSource>> sources{{"s1", slide}};

  patching::PatchManifest manifest;
  manifest.meta.src_size = 64;
  manifest.meta.out_size = 16;
  for (int i = 0; i < 3; ++i) {
    patching::PatchRecord rec;
    rec.slide_id = "s1";
    rec.x = 64 * i;
    rec.y = 0;
    rec.src_size = 64;
    rec.out_size = 16;
    rec.label = i == 0 ? patching::PatchLabel::kPos : patching::PatchLabel::kNeg;
    rec.z = 1;
    manifest.records.push_back(rec);
  }

  auto data = train::load_dataset(manifest, sources, train::binary_label);
  REQUIRE(data.size() == 3);
  CHECK(data.out_size == 16);
  CHECK(data.labels == std::vector<int>{1, 0, 0});
  CHECK(data.z == std::vector<int>{1, 1, 1});
  for (const auto& patch : data.patches) {
    CHECK(patch.rows == 16);
    CHECK(patch.cols == 16);
    CHECK(patch.at<cv::Vec3b>(8, 8) == cv::Vec3b(230, 160, 200));
  }

  patching::PatchRecord orphan;
  orphan.slide_id = "ghost";
  manifest.records.push_back(orphan);
  CHECK_THROWS_AS(train::load_dataset(manifest, sources, train::binary_label), Error);
}

TEST_CASE("argmax takes the first maximum") {
  CHECK(train::argmax({0.1, 0.6, 0.3}) == 1);
  CHECK(train::argmax({0.4, 0.4, 0.2}) == 0);
  CHECK(train::argmax({0.2, 0.4, 0.4}) == 1);
}

TEST_CASE("accuracy and mean cross entropy hand cases") {
  std::vector<ssl::ProbVector> probs{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}};
  std::vector<int> labels{0, 1, 1};
  CHECK(train::accuracy(probs, labels) == doctest::Approx(2.0 / 3.0));
  const double expected =
      (-std::log(0.9) - std::log(0.8) - std::log(0.4)) / 3.0;
  CHECK(train::mean_cross_entropy(probs, labels, 2) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("predict_dataset is batch-size invariant and matches the eval fn") {
  auto slide = solid_slide("s1", 512, {230, 160, 200});
  std::map<std::string, std::shared_ptr<slideio::SlideSource>> sources{{"s1", slide}};
  patching::PatchManifest manifest;
  manifest.meta.out_size = 8;
  for (int i = 0; i < 5; ++i) {
    patching::PatchRecord rec;
    rec.slide_id = "s1";
    rec.x = 64 * i;
    rec.y = 64;
    rec.src_size = 64;
    rec.out_size = 8;
    manifest.records.push_back(rec);
  }
  auto data = train::load_dataset(manifest, sources, train::binary_label);

  nn::Model model = tiny_model();
  auto big = train::predict_dataset(model, data, 64);
  auto small = train::predict_dataset(model, data, 1);
  REQUIRE(big.size() == 5);
  REQUIRE(small.size() == 5);
  for (std::size_t i = 0; i < big.size(); ++i) {
    REQUIRE(big[i].size() == 2);
    CHECK(big[i][0] == doctest::Approx(small[i][0]).epsilon(1e-6));
    double sum = big[i][0] + big[i][1];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  auto fn = train::make_eval_predict_fn(model);
  auto direct = fn(data.patches);
  REQUIRE(direct.size() == 5);
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(direct[i][0] == doctest::Approx(big[i][0]).epsilon(1e-6));
}

TEST_CASE("plateau scheduler divides the rate after sustained stalls") {
  nn::Model model = tiny_model();
  auto params = model.parameters();
  nn::Adam opt(params, 0.01);
  train::PlateauScheduler sched(10.0, 2);

  CHECK_FALSE(sched.observe(1.0, opt));   // establishes the best
  CHECK_FALSE(sched.observe(0.9, opt));   // improvement resets the counter
  CHECK_FALSE(sched.observe(0.95, opt));  // stall 1
  CHECK(opt.lr() == doctest::Approx(0.01));
  CHECK(sched.observe(0.92, opt));  // stall 2 triggers the cut
  CHECK(opt.lr() == doctest::Approx(0.001));
  CHECK_FALSE(sched.observe(0.91, opt));  // counter restarted after the cut
  CHECK_FALSE(sched.observe(0.5, opt));   // new best
  CHECK_FALSE(sched.observe(0.6, opt));
  CHECK(sched.observe(0.7, opt));
  CHECK(opt.lr() == doctest::Approx(0.0001));
}

TEST_CASE("augment_to_float matches augment followed by CHW scaling") {
  cv::Mat patch(8, 8, CV_8UC3);
  Rng rng(11);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      patch.at<cv::Vec3b>(y, x) =
          cv::Vec3b(static_cast<uchar>(rng.uniform_int(256)),
                    static_cast<uchar>(rng.uniform_int(256)),
                    static_cast<uchar>(rng.uniform_int(256)));

  auto v = train::augment_to_float(patch, 21);
  cv::Mat expected_img = ssl::augment(patch, 21);
  auto expected = nn::to_chw_float(expected_img);
  REQUIRE(v.size() == expected.size());
  CHECK(v == expected);
}
