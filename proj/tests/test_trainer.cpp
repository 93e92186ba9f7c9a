#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "densecount/dataset.hpp"
#include "densecount/errors.hpp"
#include "densecount/image.hpp"
#include "densecount/trainer.hpp"
#include "support/temp_dir.hpp"

using namespace densecount;

namespace {

// Direct transcription of bias-corrected Adam with L2 added to the gradient.
struct AdamOracle {
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& w, const std::vector<double>& g, double lr, double wd) {
    if (m.empty()) m.assign(w.size(), 0.0), v.assign(w.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + wd * w[i];
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

Image ramp_image(int w, int h) {
  Image img(w, h);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) img.at(c, y, x) = static_cast<float>((c * 7 + y * w + x) % 256) / 255.0f;
    }
  }
  return img;
}

Sample small_sample(int w, int h, std::vector<Point> points, const std::string& id = "s") {
  return {ramp_image(w, h), AnnotationSet(id, w, h, std::move(points))};
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.crop_size = 64;
  c.epochs = 3;
  c.validation_start = 2;
  c.validation_interval = 1;
  c.learning_rate = 1e-3;
  return c;
}

InMemorySource tiny_set(std::size_t n) {
  SyntheticCrowdOptions o;
  o.width = 64;
  o.height = 64;
  o.min_people = 4;
  o.max_people = 10;
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < n; ++i) samples.push_back(synthetic_crowd(o, 7 + i, "tiny" + std::to_string(i)));
  return InMemorySource(std::move(samples));
}

Network<float> seeded_ccnn(std::uint64_t seed) {
  auto net = build_ccnn(false);
  kaiming_init(net, seed);
  return net;
}

}  // namespace

TEST_CASE("adam first steps match hand-computed updates") {
  std::vector<Tensor<double>> params{Tensor<double>({1}, std::vector<double>{1.0})};
  std::vector<Tensor<double>> grads{Tensor<double>({1}, std::vector<double>{0.5})};
  AdamState<double> state;
  adam_step(params, grads, state, 0.1, 0.0);
  // m_hat = g, v_hat = g^2: the step is lr * g / (|g| + eps).
  CHECK(params[0][0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  adam_step(params, grads, state, 0.1, 0.0);
  CHECK(params[0][0] == doctest::Approx(0.8).epsilon(1e-7));
  CHECK(state.t == 2);
}

TEST_CASE("adam weight decay enters through the gradient") {
  std::vector<Tensor<double>> params{Tensor<double>({1}, std::vector<double>{2.0})};
  std::vector<Tensor<double>> grads{Tensor<double>({1}, std::vector<double>{0.0})};
  AdamState<double> state;
  adam_step(params, grads, state, 0.01, 0.5);
  CHECK(params[0][0] == doctest::Approx(1.99).epsilon(1e-7));
}

TEST_CASE("adam with zero gradient and no decay leaves weights unchanged") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> w(17);
  for (auto& x : w) x = n(rng);
  std::vector<Tensor<double>> params{Tensor<double>({17}, w)};
  std::vector<Tensor<double>> grads{Tensor<double>({17})};
  AdamState<double> state;
  for (int i = 0; i < 5; ++i) adam_step(params, grads, state, 0.1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(params[0][i] == w[i]);
}

TEST_CASE("adam agrees with the oracle over random trajectories") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> w(11), w2(5);
    for (auto& x : w) x = n(rng);
    for (auto& x : w2) x = n(rng);
    std::vector<Tensor<double>> params{Tensor<double>({11}, w), Tensor<double>({5}, w2)};
    AdamState<double> state;
    AdamOracle o1, o2;
    const double wd = seed % 2 ? 1e-2 : 0.0;
    for (int step = 0; step < 10; ++step) {
      std::vector<double> g(11), g2(5);
      for (auto& x : g) x = n(rng);
      for (auto& x : g2) x = n(rng);
      std::vector<Tensor<double>> grads{Tensor<double>({11}, g), Tensor<double>({5}, g2)};
      adam_step(params, grads, state, 1e-2, wd);
      o1.step(w, g, 1e-2, wd);
      o2.step(w2, g2, 1e-2, wd);
    }
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(params[0][i] == doctest::Approx(w[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < w2.size(); ++i) CHECK(params[1][i] == doctest::Approx(w2[i]).epsilon(1e-12));
  }
}

TEST_CASE("adam first step never moves a weight by more than lr") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 100.0);
  std::vector<double> w(64), g(64);
  for (auto& x : w) x = n(rng);
  for (auto& x : g) x = n(rng);
  std::vector<Tensor<double>> params{Tensor<double>({64}, w)};
  std::vector<Tensor<double>> grads{Tensor<double>({64}, g)};
  AdamState<double> state;
  adam_step(params, grads, state, 0.05, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(params[0][i] - w[i]) <= 0.05 * (1 + 1e-12));
}

TEST_CASE("adam reads grad slots and rejects mismatched shapes") {
  Tensor<float> p({2}, std::vector<float>{1.0f, 1.0f});
  p.set_requires_grad(true);
  p.grad()[0] = 1.0f;
  std::vector<Tensor<float>> params{p};
  AdamState<float> state;
  adam_step(params, state, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.9f));
  CHECK(p[1] == 1.0f);

  std::vector<Tensor<double>> a{Tensor<double>({3})};
  std::vector<Tensor<double>> g{Tensor<double>({2})};
  AdamState<double> s2;
  CHECK_THROWS_AS(adam_step(a, g, s2, 0.1, 0.0), ContractViolation);
  std::vector<Tensor<double>> none;
  CHECK_THROWS_AS(adam_step(a, none, s2, 0.1, 0.0), ContractViolation);
}

TEST_CASE("crop translates annotations and drops those outside") {
  const auto s = small_sample(20, 16, {{2.5, 3.5}, {10.0, 12.0}, {19.5, 15.5}});
  const auto c = crop_sample(s, 4, 8, 8);
  CHECK(c.image.width == 8);
  CHECK(c.image.height == 8);
  REQUIRE(c.annotations.count() == 1);
  CHECK(c.annotations.points()[0] == Point{6.0, 4.0});
  CHECK(c.image.at(1, 0, 0) == s.image.at(1, 8, 4));
  CHECK(c.image.at(2, 7, 7) == s.image.at(2, 15, 11));
}

TEST_CASE("crop pads small images with zeros") {
  const auto s = small_sample(5, 3, {{4.5, 2.5}});
  const auto c = crop_sample(s, 0, 0, 8);
  CHECK(c.annotations.count() == 1);
  CHECK(c.image.at(0, 2, 4) == s.image.at(0, 2, 4));
  CHECK(c.image.at(0, 2, 5) == 0.0f);
  CHECK(c.image.at(0, 3, 0) == 0.0f);
  CHECK_THROWS_AS(crop_sample(s, 1, 0, 8), ArgumentError);
  CHECK_THROWS_AS(crop_sample(s, -1, 0, 4), ArgumentError);
}

TEST_CASE("flip mirrors pixels and annotations") {
  const auto s = small_sample(10, 4, {{3.2, 1.0}, {9.5, 2.0}});
  const auto f = flip_sample(s);
  CHECK(f.annotations.points()[0].x == doctest::Approx(5.8));
  CHECK(f.annotations.points()[1].x == 0.0);
  CHECK(f.image.at(0, 1, 0) == s.image.at(0, 1, 9));
  const auto ff = flip_sample(f);
  CHECK(ff.image.pixels == s.image.pixels);
}

TEST_CASE("augment is seed-deterministic and keeps points inside the crop") {
  const auto s = synthetic_crowd({}, 5, "a");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r1(seed), r2(seed);
    const auto a = augment(s, 128, 0.5, r1);
    const auto b = augment(s, 128, 0.5, r2);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.annotations.points() == b.annotations.points());
    CHECK(a.annotations.count() <= s.annotations.count());
    for (const auto& p : a.annotations.points()) {
      CHECK(p.x >= 0.0);
      CHECK(p.x < 128.0);
      CHECK(p.y >= 0.0);
      CHECK(p.y < 128.0);
    }
  }
  std::mt19937_64 rng(1);
  const auto same = augment(s, 256, 0.0, rng);
  CHECK(same.image.pixels == s.image.pixels);
  CHECK(same.annotations.points() == s.annotations.points());
}

TEST_CASE("validation schedule") {
  TrainConfig c;
  const auto epochs = validation_epochs(c);
  REQUIRE(epochs.size() == 21);
  CHECK(epochs[0] == 100);
  CHECK(epochs[1] == 105);
  CHECK(epochs[2] == 110);
  CHECK(epochs.back() == 200);
  c.epochs = 99;
  CHECK(validation_epochs(c).empty());
}

TEST_CASE("train config JSON round trip and validation") {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.loss = LossKind::kEuclidean;
  c.bayes.sigma = 4.0;
  c.bayes.background = false;
  c.bayes_sigma_frame = SigmaFrame::kImage;
  c.seed = 42;
  c.checkpoint_dir = "runs/a";
  const auto back = train_config_from_json(train_config_to_json(c));
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.loss == LossKind::kEuclidean);
  CHECK(back.bayes.sigma == 4.0);
  CHECK_FALSE(back.bayes.background);
  CHECK(back.bayes_sigma_frame == SigmaFrame::kImage);
  CHECK(back.seed == 42);
  CHECK(back.checkpoint_dir == "runs/a");

  const auto defaults = train_config_from_json("{}");
  CHECK(defaults.bayes.sigma == 8.0);
  CHECK(defaults.bayes.d_ratio == 0.15);
  CHECK(defaults.crop_size == 512);
  CHECK(defaults.bayes_sigma_frame == SigmaFrame::kMap);

  CHECK_THROWS_AS(train_config_from_json(R"({"lr": 1})"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(R"({"bayes": {"sgima": 1}})"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(R"({"crop_size": 100})"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(R"({"loss": "l1"})"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(R"({"bayes": {"sigma": 0}})"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json("[1"), ArgumentError);
  CHECK_THROWS_AS(train_config_from_json(R"({"epochs": "ten"})"), ArgumentError);
}

TEST_CASE("log rows leave validation columns empty when skipped") {
  CHECK(format_log_row({3, 0.25, std::nullopt, std::nullopt}) == "3,0.25,,");
  CHECK(format_log_row({5, 1.5, 2.0, 2.5}) == "5,1.5,2,2.5");
  const double v = 0.1 + 0.2;
  const auto row = format_log_row({1, v, std::nullopt, std::nullopt});
  CHECK(std::stod(row.substr(2, row.size() - 4)) == v);
}

TEST_CASE("infer_count pads to a multiple of 8") {
  const auto net = seeded_ccnn(2);
  Image img = ramp_image(37, 29);
  const double c = infer_count(net, img);
  const double padded = infer_count(net, pad_to_multiple(img, 8));
  CHECK(c == padded);
  CHECK(std::isfinite(c));
}

TEST_CASE("training overfits a single image") {
  auto set = tiny_set(1);
  auto net = seeded_ccnn(1);
  auto c = tiny_config();
  c.epochs = 200;
  c.validation_start = 1000;
  c.flip_probability = 0.0;
  // The 8x8 output grid needs a kernel narrower than the default.
  c.bayes.sigma = 0.5;
  std::vector<double> losses;
  const auto result = train(net, set, nullptr, c, [&](int, std::size_t, double l) { losses.push_back(l); });
  REQUIRE(losses.size() == 200);
  CHECK(result.steps == 200);
  double last = 0;
  for (int i = 0; i < 10; ++i) last += losses[losses.size() - 1 - i] / 10;
  CHECK(last * 5 < losses.front());
  const auto sample = set.load(0);
  const double gt = static_cast<double>(sample.annotations.count());
  CHECK(std::abs(infer_count(net, sample.image) - gt) < 0.1 * gt);
  CHECK(result.best.metadata.epoch == 200);
  CHECK_FALSE(result.best.metadata.best_val_mae.has_value());
}

TEST_CASE("training with the euclidean loss reduces the loss") {
  auto set = tiny_set(1);
  auto net = seeded_ccnn(1);
  auto c = tiny_config();
  c.loss = LossKind::kEuclidean;
  c.epochs = 60;
  c.validation_start = 1000;
  std::vector<double> losses;
  train(net, set, nullptr, c, [&](int, std::size_t, double l) { losses.push_back(l); });
  CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto set = tiny_set(3);
  auto c = tiny_config();
  c.seed = 9;
  auto n1 = seeded_ccnn(4);
  auto n2 = seeded_ccnn(4);
  const auto r1 = train(n1, set, &set, c);
  const auto r2 = train(n2, set, &set, c);
  CHECK(r1.log == r2.log);
  CHECK(r1.best.weights == r2.best.weights);
  c.seed = 10;
  auto n3 = seeded_ccnn(4);
  const auto r3 = train(n3, set, &set, c);
  CHECK_FALSE(r1.log == r3.log);
}

TEST_CASE("training validates on schedule and writes its outputs") {
  densecount::testing::TempDir dir;
  auto set = tiny_set(2);
  auto net = seeded_ccnn(3);
  auto c = tiny_config();
  c.epochs = 4;
  c.validation_start = 2;
  c.validation_interval = 2;
  c.checkpoint_dir = (dir.path() / "run").string();
  const auto r = train(net, set, &set, c);
  REQUIRE(r.log.size() == 4);
  CHECK(r.steps == 8);
  CHECK_FALSE(r.log[0].val_mae.has_value());
  CHECK(r.log[1].val_mae.has_value());
  CHECK_FALSE(r.log[2].val_mae.has_value());
  CHECK(r.log[3].val_mae.has_value());
  const double best = std::min(*r.log[1].val_mae, *r.log[3].val_mae);
  CHECK(r.best.metadata.best_val_mae == best);
  CHECK(r.best.metadata.epoch == (best == *r.log[1].val_mae ? 2 : 4));

  const auto log = read_text(dir.path() / "run" / "train_log.csv");
  std::string expected = std::string(kTrainLogHeader) + "\n";
  for (const auto& row : r.log) expected += format_log_row(row) + "\n";
  CHECK(log == expected);
  const auto ck = read_checkpoint(dir.path() / "run" / "best.dcnt");
  CHECK(ck.weights == r.best.weights);
  CHECK(ck.metadata == r.best.metadata);
  for (const auto& p : net.parameters()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("training errors") {
  InMemorySource empty;
  auto net = seeded_ccnn(0);
  CHECK_THROWS_AS(train(net, empty, nullptr, tiny_config()), EmptyDatasetError);

  auto set = tiny_set(1);
  auto bad = tiny_config();
  bad.crop_size = 60;
  CHECK_THROWS_AS(train(net, set, nullptr, bad), ArgumentError);

  auto params = net.parameters();
  params.back()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(net, set, nullptr, tiny_config());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    CHECK(what.find("tiny0") != std::string::npos);
    CHECK(what.find("step 1") != std::string::npos);
  }
}

TEST_CASE("PNM images round trip through the reader") {
  densecount::testing::TempDir dir;
  Image img(5, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  write_ppm(img, dir.path() / "a.ppm");
  const auto back = read_image(dir.path() / "a.ppm");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));

  {
    std::ofstream f(dir.path() / "g.pgm");
    f << "P2\n# comment\n2 2\n4\n0 1\n2 4\n";
  }
  const auto g = read_image(dir.path() / "g.pgm");
  CHECK(g.width == 2);
  CHECK(g.at(0, 1, 0) == doctest::Approx(0.5f));
  CHECK(g.at(2, 1, 1) == 1.0f);

  {
    std::ofstream f(dir.path() / "w.pgm", std::ios::binary);
    f << "P5\n1 1\n65535\n";
    f.put(static_cast<char>(0x80)).put(0);
  }
  CHECK(read_image(dir.path() / "w.pgm").at(1, 0, 0) == doctest::Approx(32768.0f / 65535.0f));

  {
    std::ofstream f(dir.path() / "short.ppm", std::ios::binary);
    f << "P6\n4 4\n255\nabc";
  }
  CHECK_THROWS_AS(read_image(dir.path() / "short.ppm"), DataError);
  CHECK_THROWS_AS(read_image(dir.path() / "missing.ppm"), DataError);
}

TEST_CASE("image padding and tensor layout") {
  const auto img = ramp_image(5, 3);
  const auto p = pad_to_multiple(img, 8);
  CHECK(p.width == 8);
  CHECK(p.height == 8);
  CHECK(p.at(2, 2, 4) == img.at(2, 2, 4));
  CHECK(p.at(2, 2, 5) == 0.0f);
  CHECK(pad_to_multiple(p, 8).pixels == p.pixels);
  const auto t = image_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 3, 5});
  CHECK(t.at(0, 1, 2, 3) == img.at(1, 2, 3));
}

TEST_CASE("directory source pairs images with annotations") {
  densecount::testing::TempDir dir;
  std::filesystem::create_directories(dir.path() / "images");
  std::filesystem::create_directories(dir.path() / "annotations");
  write_ppm(ramp_image(8, 6), dir.path() / "images" / "b.ppm");
  write_ppm(ramp_image(8, 6), dir.path() / "images" / "a.ppm");
  write_ppm(ramp_image(8, 6), dir.path() / "images" / "lonely.ppm");
  write_ppm(ramp_image(8, 6), dir.path() / "images" / "wrong.ppm");
  write_annotation_file(AnnotationSet("a", 8, 6, {{1, 1}}), dir.path() / "annotations" / "a.json");
  write_annotation_file(AnnotationSet("b", 8, 6, {{1, 1}, {2, 2}}), dir.path() / "annotations" / "b.json");
  write_annotation_file(AnnotationSet("wrong", 9, 6, {}), dir.path() / "annotations" / "wrong.json");
  write_annotation_file(AnnotationSet("ghost", 8, 6, {}), dir.path() / "annotations" / "ghost.json");

  DirectorySource src(dir.path());
  REQUIRE(src.size() == 3);
  CHECK(src.id(0) == "a");
  CHECK(src.id(1) == "b");
  CHECK(src.load(1).annotations.count() == 2);
  CHECK_THROWS_AS(src.load(2), DataError);
  CHECK(src.unmatched().size() == 2);
  CHECK_THROWS_AS(DirectorySource(dir.path() / "nope"), DataError);
}

TEST_CASE("validation split partitions the indices") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 10 + seed;
    const auto s = split_validation(n, 4, seed);
    CHECK(s.validation.size() == 4);
    CHECK(s.train.size() == n - 4);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    CHECK(all.size() == n);
    CHECK(std::is_sorted(s.train.begin(), s.train.end()));
    const auto again = split_validation(n, 4, seed);
    CHECK(again.validation == s.validation);
  }
  CHECK(split_validation(3, 10, 0).validation.size() == 3);
}

TEST_CASE("synthetic crowds are reproducible and in range") {
  const auto a = synthetic_crowd({}, 1, "x");
  const auto b = synthetic_crowd({}, 1, "x");
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.annotations.points() == b.annotations.points());
  CHECK(a.annotations.count() >= 20);
  CHECK(a.annotations.count() <= 60);
  for (float v : a.image.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}
