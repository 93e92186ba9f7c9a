#include "densecount/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "densecount/errors.hpp"
#include "densecount/evaluator.hpp"
#include "densecount/ops.hpp"
#include "json.hpp"

namespace densecount {

std::string_view to_string(LossKind kind) { return kind == LossKind::kBayes ? "bayes" : "euclidean"; }

LossKind loss_kind_from_string(std::string_view name) {
  if (name == "bayes") return LossKind::kBayes;
  if (name == "euclidean") return LossKind::kEuclidean;
  throw ArgumentError("unknown loss '" + std::string(name) + "' (expected bayes or euclidean)");
}

std::string_view to_string(SigmaFrame frame) { return frame == SigmaFrame::kMap ? "map" : "image"; }

SigmaFrame sigma_frame_from_string(std::string_view name) {
  if (name == "map") return SigmaFrame::kMap;
  if (name == "image") return SigmaFrame::kImage;
  throw ArgumentError("unknown sigma frame '" + std::string(name) + "' (expected map or image)");
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ArgumentError("train config: " + what); };
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (c.crop_size <= 0 || c.crop_size % 8 != 0) fail("crop_size must be a positive multiple of 8");
  if (!(c.flip_probability >= 0.0 && c.flip_probability <= 1.0)) fail("flip_probability must lie in [0, 1]");
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.validation_start < 1) fail("validation_start must be >= 1");
  if (c.validation_interval < 1) fail("validation_interval must be >= 1");
  if (c.validation_size < 0) fail("validation_size must be >= 0");
  if (!(c.bayes.sigma > 0.0)) fail("bayes.sigma must be > 0");
  if (c.bayes.background && !(c.bayes.d_ratio > 0.0)) fail("bayes.d_ratio must be > 0");
  if (!(c.gt_sigma > 0.0)) fail("gt_sigma must be > 0");
}

TrainConfig train_config_from_json(const std::string& text) {
  using nlohmann::json;
  static const std::set<std::string> known{
      "learning_rate", "weight_decay", "loss", "bayes", "bayes_sigma_frame", "gt_sigma",
      "crop_size", "flip_probability", "epochs", "validation_start", "validation_interval",
      "seed", "checkpoint_dir", "architecture", "validation_size"};
  TrainConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ArgumentError("train config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ArgumentError("train config: unknown field '" + key + "'");
    }
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("loss")) c.loss = loss_kind_from_string(j["loss"].get<std::string>());
    if (j.contains("bayes")) {
      const auto& b = j["bayes"];
      for (const auto& [key, value] : b.items()) {
        if (key != "sigma" && key != "d_ratio" && key != "background") {
          throw ArgumentError("train config: unknown field 'bayes." + key + "'");
        }
      }
      c.bayes.sigma = b.value("sigma", c.bayes.sigma);
      c.bayes.d_ratio = b.value("d_ratio", c.bayes.d_ratio);
      c.bayes.background = b.value("background", c.bayes.background);
    }
    if (j.contains("bayes_sigma_frame")) {
      c.bayes_sigma_frame = sigma_frame_from_string(j["bayes_sigma_frame"].get<std::string>());
    }
    c.gt_sigma = j.value("gt_sigma", c.gt_sigma);
    c.crop_size = j.value("crop_size", c.crop_size);
    c.flip_probability = j.value("flip_probability", c.flip_probability);
    c.epochs = j.value("epochs", c.epochs);
    c.validation_start = j.value("validation_start", c.validation_start);
    c.validation_interval = j.value("validation_interval", c.validation_interval);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.architecture = j.value("architecture", c.architecture);
    c.validation_size = j.value("validation_size", c.validation_size);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("train config JSON: ") + e.what());
  }
  validate(c);
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j{{"learning_rate", c.learning_rate},
                   {"weight_decay", c.weight_decay},
                   {"loss", to_string(c.loss)},
                   {"bayes", {{"sigma", c.bayes.sigma}, {"d_ratio", c.bayes.d_ratio}, {"background", c.bayes.background}}},
                   {"bayes_sigma_frame", to_string(c.bayes_sigma_frame)},
                   {"gt_sigma", c.gt_sigma},
                   {"crop_size", c.crop_size},
                   {"flip_probability", c.flip_probability},
                   {"epochs", c.epochs},
                   {"validation_start", c.validation_start},
                   {"validation_interval", c.validation_interval},
                   {"seed", c.seed},
                   {"checkpoint_dir", c.checkpoint_dir},
                   {"architecture", c.architecture},
                   {"validation_size", c.validation_size}};
  return j.dump(2);
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr, double weight_decay) {
  if (params.size() != grads.size()) {
    throw ContractViolation("adam_step: " + std::to_string(params.size()) + " parameters but " +
                            std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ContractViolation("adam_step: state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].size() != params[i].numel()) {
      throw ContractViolation("adam_step: parameter " + std::to_string(i) + " has shape " +
                              shape_to_string(params[i].shape()) + " but its gradient has " +
                              shape_to_string(grads[i].shape()));
    }
  }
  ++state.t;
  constexpr double b1 = AdamState<T>::kBeta1, b2 = AdamState<T>::kBeta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    const auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + weight_decay * static_cast<double>(w[k]);
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + AdamState<T>::kEpsilon);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - step);
    }
  }
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double weight_decay) {
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    Tensor<T> g(p.shape());
    if (p.has_grad()) {
      const auto src = static_cast<const Tensor<T>&>(p).grad();
      std::copy(src.begin(), src.end(), g.data().begin());
    }
    grads.push_back(std::move(g));
  }
  adam_step(params, grads, state, lr, weight_decay);
}

template void adam_step(std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&, AdamState<float>&,
                        double, double);
template void adam_step(std::vector<Tensor<double>>&, const std::vector<Tensor<double>>&, AdamState<double>&,
                        double, double);
template void adam_step(std::vector<Tensor<float>>&, AdamState<float>&, double, double);
template void adam_step(std::vector<Tensor<double>>&, AdamState<double>&, double, double);

Sample crop_sample(const Sample& sample, int x0, int y0, int crop) {
  const Image& src = sample.image;
  const int w = std::max(src.width, crop), h = std::max(src.height, crop);
  if (crop <= 0 || x0 < 0 || y0 < 0 || x0 + crop > w || y0 + crop > h) {
    throw ArgumentError("crop window out of range");
  }
  Image out(crop, crop);
  const int copy_w = std::max(0, std::min(crop, src.width - x0));
  const int copy_h = std::max(0, std::min(crop, src.height - y0));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < copy_h; ++y) {
      const float* from = &src.pixels[(static_cast<std::size_t>(c) * src.height + y0 + y) * src.width + x0];
      std::copy(from, from + copy_w, &out.at(c, y, 0));
    }
  }
  std::vector<Point> points;
  for (const auto& p : sample.annotations.points()) {
    const Point q{p.x - x0, p.y - y0};
    if (q.x >= 0.0 && q.x < crop && q.y >= 0.0 && q.y < crop) points.push_back(q);
  }
  return {std::move(out), AnnotationSet(sample.annotations.image_id(), crop, crop, std::move(points))};
}

Sample flip_sample(const Sample& sample) {
  const Image& src = sample.image;
  Image out(src.width, src.height);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) out.at(c, y, src.width - 1 - x) = src.at(c, y, x);
    }
  }
  std::vector<Point> points;
  for (const auto& p : sample.annotations.points()) {
    points.push_back({std::max(0.0, src.width - 1.0 - p.x), p.y});
  }
  return {std::move(out), AnnotationSet(sample.annotations.image_id(), src.width, src.height, std::move(points))};
}

Sample augment(const Sample& sample, int crop, double flip_probability, std::mt19937_64& rng) {
  const int w = std::max(sample.image.width, crop), h = std::max(sample.image.height, crop);
  // Explicit modular draws keep the augmentation stream independent of the
  // standard library's distribution algorithms.
  const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - crop + 1));
  const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - crop + 1));
  Sample out = crop_sample(sample, x0, y0, crop);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  if (u < flip_probability) out = flip_sample(out);
  return out;
}

double infer_count(const Network<float>& model, const Image& image) {
  const auto y = model.forward(image_to_tensor(pad_to_multiple(image, 8)));
  double total = 0.0;
  for (float v : y.data()) total += v;
  return total;
}

std::vector<int> validation_epochs(const TrainConfig& config) {
  std::vector<int> epochs;
  for (int e = config.validation_start; e <= config.epochs; e += config.validation_interval) epochs.push_back(e);
  return epochs;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

bool validates_at(const TrainConfig& c, int epoch) {
  return epoch >= c.validation_start && (epoch - c.validation_start) % c.validation_interval == 0;
}

struct StepLoss {
  Tensor<float> loss;
  std::size_t annotations = 0;
};

StepLoss step_loss(const Tensor<float>& output, const Sample& sample, const TrainConfig& config, int stride,
                   Tape<float>* tape) {
  if (config.loss == LossKind::kEuclidean) {
    const double scale = 1.0 / stride;
    const auto gt = density_to_tensor<float>(generate_density_map(sample.annotations, config.gt_sigma, scale));
    return {euclidean_loss(output, gt, tape), sample.annotations.count()};
  }
  std::vector<Point> points;
  points.reserve(sample.annotations.count());
  for (const auto& p : sample.annotations.points()) points.push_back({p.x / stride, p.y / stride});
  BayesLossConfig cfg = config.bayes;
  if (config.bayes_sigma_frame == SigmaFrame::kImage) cfg.sigma /= stride;
  return {bayes_loss<float>(points, output, cfg, tape), points.size()};
}

}  // namespace

std::string format_log_row(const EpochLog& row) {
  std::string line = std::to_string(row.epoch) + "," + shortest(row.mean_loss) + ",";
  if (row.val_mae) line += shortest(*row.val_mae);
  line += ",";
  if (row.val_mse) line += shortest(*row.val_mse);
  return line;
}

TrainResult train(Network<float>& model, const SampleSource& train_set, const SampleSource* validation_set,
                  const TrainConfig& config, const StepObserver& observer) {
  validate(config);
  if (train_set.size() == 0) throw EmptyDatasetError();
  const FeatureShape out_shape = infer_output_shape(model.spec(), config.crop_size, config.crop_size);
  if (out_shape.channels != 1 || out_shape.height <= 0 || config.crop_size % out_shape.height != 0) {
    throw ArgumentError("model output " + std::to_string(out_shape.height) + "x" +
                        std::to_string(out_shape.width) + " does not divide the crop size");
  }
  const int stride = static_cast<int>(config.crop_size / out_shape.height);

  std::filesystem::path dir;
  std::ofstream log_file;
  if (!config.checkpoint_dir.empty()) {
    dir = config.checkpoint_dir;
    std::filesystem::create_directories(dir);
    log_file.open(dir / "train_log.csv", std::ios::trunc);
    if (!log_file) throw DataError("cannot write " + (dir / "train_log.csv").string());
    log_file << kTrainLogHeader << '\n';
  }

  if (config.loss == LossKind::kBayes) {
    const MapShape map{static_cast<int>(out_shape.height), static_cast<int>(out_shape.width)};
    const double sigma = config.bayes_sigma_frame == SigmaFrame::kImage ? config.bayes.sigma / stride
                                                                         : config.bayes.sigma;
    spdlog::info("bayes loss: sigma {} map px, background {}, margin = {} x diag({}x{}) = {:.4f} map px", sigma,
                 config.bayes.background, config.bayes.d_ratio, map.height, map.width,
                 effective_margin(config.bayes, map));
  }

  model.set_requires_grad(true);
  AdamState<float> adam;
  std::mt19937_64 rng(config.seed);
  TrainResult result;
  std::optional<double> best_mae;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Sample sample = augment(train_set.load(order[step]), config.crop_size, config.flip_probability, rng);
      Tape<float> tape;
      const auto output = model.forward(image_to_tensor(sample.image), &tape);
      auto [loss, annotations] = step_loss(output, sample, config, stride, &tape);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss " + shortest(value) + " at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step + 1) + " on image '" + train_set.id(order[step]) + "'");
      }
      backward(loss, tape);
      auto params = model.parameters();
      adam_step(params, adam, config.learning_rate, config.weight_decay);
      for (auto& p : params) p.clear_grad();
      loss_sum += value;
      ++result.steps;
      if (observer) observer(epoch, step, value);
    }

    EpochLog row{epoch, loss_sum / static_cast<double>(order.size()), std::nullopt, std::nullopt};
    if (validation_set && validation_set->size() > 0 && validates_at(config, epoch)) {
      const EvalReport report = evaluate(model, *validation_set);
      row.val_mae = report.mae;
      row.val_mse = report.mse;
      if (!best_mae || report.mae < *best_mae) {
        best_mae = report.mae;
        result.best = make_checkpoint(model, {epoch, report.mae});
        if (!dir.empty()) write_checkpoint(result.best, dir / "best.dcnt");
      }
      spdlog::info("epoch {}: loss {:.6g}, val MAE {:.4f}, MSE {:.4f}", epoch, row.mean_loss, report.mae, report.mse);
    } else {
      spdlog::debug("epoch {}: loss {:.6g}", epoch, row.mean_loss);
    }
    if (log_file) log_file << format_log_row(row) << '\n' << std::flush;
    result.log.push_back(row);
  }

  if (!best_mae) {
    result.best = make_checkpoint(model, {config.epochs, std::nullopt});
    if (!dir.empty()) write_checkpoint(result.best, dir / "best.dcnt");
  }
  for (auto& p : model.parameters()) p.set_requires_grad(false);
  return result;
}

}  // namespace densecount
