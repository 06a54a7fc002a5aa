#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>

#include "rdseg/image_io.hpp"
#include "rdseg/phantom.hpp"
#include "rdseg/training.hpp"
#include "support/test_support.hpp"

using namespace rdseg;

namespace {

std::vector<SampleRecord> make_phantom_manifest(const std::filesystem::path& dir, int count,
                                                int size, std::uint64_t seed,
                                                const std::vector<int>& lesions) {
  std::vector<SampleRecord> records;
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.size = size;
    spec.lesion_count = lesions[static_cast<std::size_t>(i) % lesions.size()];
    spec.seed = seed + static_cast<std::uint64_t>(i);
    auto sample = generate_phantom(spec);
    auto rec = write_phantom_files(dir, "p" + std::to_string(i), sample);
    rec.image_path = (dir / rec.image_path).string();
    rec.lung_mask_path = (dir / *rec.lung_mask_path).string();
    rec.infection_mask_path = (dir / *rec.infection_mask_path).string();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

TEST_CASE("soft_dice_loss: perfect overlap scores zero") {
  Tensor4<float> pred({1, 1, 2, 2}, {1, 0, 1, 0});
  Tensor4<float> target = pred;
  auto r = soft_dice_loss(pred, target, 1.0f);
  CHECK(r.loss == doctest::Approx(0.0));
}

TEST_CASE("soft_dice_loss: empty prediction and empty target agree via smoothing") {
  Tensor4<float> pred({1, 1, 2, 2});
  Tensor4<float> target({1, 1, 2, 2});
  auto r = soft_dice_loss(pred, target, 1.0f);
  CHECK(r.loss == doctest::Approx(0.0));
}

TEST_CASE("soft_dice_loss: half overlap in the smooth->0 limit") {
  // |p ∩ y| = 2, sum p = sum y = 4: dice = 2*2/8 = 0.5, loss 0.5
  Tensor4<float> pred({1, 1, 2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  Tensor4<float> target({1, 1, 2, 4}, {1, 1, 0, 0, 1, 1, 0, 0});
  auto r = soft_dice_loss(pred, target, 0.0f);
  CHECK(r.loss == doctest::Approx(0.5));
}

TEST_CASE("soft_dice_loss validates inputs") {
  Tensor4<float> pred({1, 1, 2, 2});
  Tensor4<float> target({1, 1, 2, 3});
  CHECK_THROWS_AS(soft_dice_loss(pred, target, 1.0f), std::invalid_argument);
  Tensor4<float> bad({1, 1, 2, 2}, {0.0f, 0.5f, 1.0f, 0.0f});
  CHECK_THROWS_AS(soft_dice_loss(Tensor4<float>({1, 1, 2, 2}), bad, 1.0f),
                  std::invalid_argument);
}

TEST_CASE("soft_dice_loss stays in [0, 1) for probabilistic predictions") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(1e-4, 1.0 - 1e-4);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor4<float> pred({2, 1, 4, 4});
    for (auto& v : pred.data) v = static_cast<float>(unit(rng));
    auto target = testsup::random_binary_tensor({2, 1, 4, 4}, rng).cast<float>();
    auto r = soft_dice_loss(pred, target, 1.0f);
    CHECK(r.loss >= 0.0f);
    CHECK(r.loss < 1.0f);
  }
}

TEST_CASE("adam: zero gradients leave parameters and moments untouched") {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  auto model = build_unet<float>(cfg, 5);
  auto before = model;
  auto opt = make_optimizer_state(model);
  TrainConfig tc;

  adam_step(model, {}, opt, tc);
  CHECK(opt.step == 1);
  for (std::size_t i = 0; i < model.params.entries.size(); ++i) {
    CHECK(model.params.entries[i].tensor.data == before.params.entries[i].tensor.data);
  }
  for (const auto& m : opt.first_moment) {
    for (float v : m.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("adam: first step moves by about the learning rate against the gradient") {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  auto model = build_unet<float>(cfg, 6);
  auto opt = make_optimizer_state(model);
  TrainConfig tc;
  tc.learning_rate = 1e-4;

  const std::string name = "head.b";
  const float before = model.params.get(name).data[0];
  std::map<std::string, Tensor4<float>> grads;
  grads[name] = Tensor4<float>::full({1, 1, 1, 1}, 0.37f);
  adam_step(model, grads, opt, tc);
  const float delta = model.params.get(name).data[0] - before;
  CHECK(delta == doctest::Approx(-1e-4).epsilon(1e-3));
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  auto model = build_unet<float>(cfg, 7);
  auto opt = make_optimizer_state(model);
  TrainConfig tc;
  std::map<std::string, Tensor4<float>> grads;
  grads["enc1.u1.conv1.w"] =
      Tensor4<float>::full(model.params.get("enc1.u1.conv1.w").shape,
                           std::numeric_limits<float>::quiet_NaN());
  bool threw = false;
  try {
    adam_step(model, grads, opt, tc);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("enc1.u1.conv1.w") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("normalize_patch examples") {
  Grid g(1, 2);
  g.v = {0.0, 2.0};
  auto n = normalize_patch(g);
  CHECK(n.v[0] == doctest::Approx(-1.0));
  CHECK(n.v[1] == doctest::Approx(1.0));

  Grid c(3, 3);
  for (auto& v : c.v) v = 5.0;
  auto z = normalize_patch(c);
  for (double v : z.v) CHECK(v == 0.0);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  Grid r(8, 8);
  for (auto& v : r.v) v = dist(rng);
  auto rn = normalize_patch(r);
  double mean = 0.0;
  for (double v : rn.v) mean += v;
  mean /= static_cast<double>(rn.size());
  double var = 0.0;
  for (double v : rn.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(rn.size());
  CHECK(std::abs(mean) < 1e-6);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("prepare_infection_set applies the exclusion and masking rules") {
  testsup::TempDir dir("prep");
  // 3 samples, the middle one without lesions
  auto records = make_phantom_manifest(dir.path(), 3, 64, 500, {2, 0, 1});

  EedOptions eed;
  eed.params.steps = 5;  // keep the test quick
  auto pairs = prepare_infection_set(records, 64, eed);
  REQUIRE(pairs.size() == 2);  // the empty-infection sample is excluded
  CHECK(pairs[0].id == "p0");
  CHECK(pairs[1].id == "p2");

  for (const auto& p : pairs) {
    CHECK(p.image.h == 64);
    CHECK(p.image.w == 64);
    CHECK(p.target.h == 64);
    CHECK(!p.target.empty_mask());
  }
}

TEST_CASE("prepare_infection_set zeroes out-of-lung pixels before normalization") {
  testsup::TempDir dir("prepmask");
  auto records = make_phantom_manifest(dir.path(), 1, 64, 600, {1});

  // With normalization, out-of-lung pixels all map to one constant value
  // (the normalized image of pixels that were exactly zero).
  EedOptions eed;
  eed.params.steps = 3;
  auto pairs = prepare_infection_set(records, 64, eed);
  REQUIRE(pairs.size() == 1);

  const auto lung = read_mask(*records[0].lung_mask_path);
  const RoiBox box = mask_bounding_box(lung, 5);
  const Mask roi_lung = resize_nearest(crop_mask(lung, box), 64, 64);
  double first = 0.0;
  bool seen = false;
  int outside = 0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 64; ++j) {
      if (roi_lung.at(i, j)) continue;
      // interior of the outside region (8-neighbourhood outside too):
      // bilinear resampling blends at the boundary, so skip boundary pixels
      bool boundary = false;
      for (int di = -1; di <= 1 && !boundary; ++di) {
        for (int dj = -1; dj <= 1 && !boundary; ++dj) {
          const int ni = std::clamp(i + di, 0, 63), nj = std::clamp(j + dj, 0, 63);
          boundary = roi_lung.at(ni, nj) != 0;
        }
      }
      if (boundary) continue;
      ++outside;
      if (!seen) {
        first = pairs[0].image.at(i, j);
        seen = true;
      } else {
        CHECK(pairs[0].image.at(i, j) == doctest::Approx(first).epsilon(1e-9));
      }
    }
  }
  CHECK(outside > 50);
}

TEST_CASE("prepare sets reject samples without lung masks") {
  testsup::TempDir dir("nolung");
  auto records = make_phantom_manifest(dir.path(), 1, 64, 700, {1});
  records[0].lung_mask_path.reset();
  CHECK_THROWS_AS(prepare_lung_set(records, 64), std::runtime_error);
  EedOptions eed;
  CHECK_THROWS_AS(prepare_infection_set(records, 64, eed), std::runtime_error);
}

TEST_CASE("empty training sets are rejected") {
  ModelConfig mc;
  mc.levels = 2;
  mc.base_channels = 2;
  mc.input_size = 32;
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(Stage::lung, {}, mc, tc, EedOptions{}), std::runtime_error);
}

TEST_CASE("training is deterministic and the loss drops after one update") {
  testsup::TempDir dir("train");
  auto records = make_phantom_manifest(dir.path(), 4, 32, 800, {1, 2});

  ModelConfig mc;
  mc.levels = 2;
  mc.base_channels = 4;
  mc.input_size = 32;
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 42;
  tc.batch_size = 32;

  auto run1 = train(Stage::lung, records, mc, tc, EedOptions{});
  auto run2 = train(Stage::lung, records, mc, tc, EedOptions{});

  REQUIRE(run1.loss_log.size() == 3);
  CHECK(run1.loss_log == run2.loss_log);
  for (std::size_t i = 0; i < run1.model.params.entries.size(); ++i) {
    CHECK(run1.model.params.entries[i].tensor.data == run2.model.params.entries[i].tensor.data);
  }
  // one batch per epoch: entry 0 is the untrained loss, entry 1 is after one
  // Adam step
  CHECK(run1.loss_log[1].second < run1.loss_log[0].second);
  CHECK(run1.model.train_config_digest == train_config_digest(tc));
}

TEST_CASE("loss log file format is stable") {
  testsup::TempDir dir("log");
  const auto path = dir.path() / "loss.tsv";
  write_loss_log(path, {{1, 0.5}, {2, 0.25}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "1\t5.000000000e-01");
  std::getline(in, line);
  CHECK(line == "2\t2.500000000e-01");
}

TEST_CASE("train_config_digest is stable and sensitive") {
  TrainConfig a, b;
  CHECK(train_config_digest(a) == train_config_digest(b));
  b.learning_rate = 2e-4;
  CHECK(train_config_digest(a) != train_config_digest(b));
}
