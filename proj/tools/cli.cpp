#include "cli.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "densecount/checkpoint.hpp"
#include "densecount/errors.hpp"
#include "densecount/evaluator.hpp"
#include "densecount/pruner.hpp"
#include "densecount/trainer.hpp"

namespace densecount::cli {

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct Options {
  std::optional<std::uint64_t> seed;

  std::string config, data, out, ckpt, report, plan, image, export_base, ann, arch;
  double sigma = 15.0;
  double scale = 1.0;
};

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainConfig config = train_config_from_json(read_text(o.config));
  if (o.seed) config.seed = *o.seed;
  config.checkpoint_dir = o.out;

  DirectorySource all(o.data);
  for (const auto& u : all.unmatched()) spdlog::warn("skipping {}", u);
  if (all.size() == 0) throw EmptyDatasetError();
  const auto split = split_validation(all.size(), static_cast<std::size_t>(config.validation_size), config.seed);
  if (split.train.empty()) {
    throw DataError("validation_size " + std::to_string(config.validation_size) + " leaves no training images out of " +
                    std::to_string(all.size()));
  }
  SubsetSource train_set(all, split.train);
  SubsetSource validation_set(all, split.validation);
  spdlog::info("{} training and {} validation images", train_set.size(), validation_set.size());

  Network<float> model(preset_spec(config.architecture));
  kaiming_init(model, config.seed);
  const auto result = train(model, train_set, validation_set.size() ? &validation_set : nullptr, config);

  out << "steps " << result.steps << '\n';
  out << "best epoch " << result.best.metadata.epoch << '\n';
  if (result.best.metadata.best_val_mae) out << "best val mae " << *result.best.metadata.best_val_mae << '\n';
  out << "checkpoint " << (std::filesystem::path(o.out) / "best.dcnt").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto model = load_checkpoint(o.ckpt);
  DirectorySource data(o.data);
  for (const auto& u : data.unmatched()) spdlog::warn("skipping {}", u);
  const auto report = evaluate(model, data);
  for (const auto& f : report.failures) spdlog::warn("failed {}", f);
  write_report_csv(report, o.report);
  out << "images " << report.count() << '\n';
  out << "failed " << report.failures.size() << '\n';
  out << "mae " << report.mae << '\n';
  out << "mse " << report.mse << '\n';
  return 0;
}

int cmd_prune(const Options& o, std::ostream& out) {
  const auto ck = read_checkpoint(o.ckpt);
  const auto model = network_from_checkpoint(ck);
  const auto pruned = apply_plan(model, read_plan_file(o.plan));
  save_checkpoint(pruned, o.out, ck.metadata);
  out << "params " << model.param_count() << " -> " << pruned.param_count() << '\n';
  return 0;
}

int cmd_count(const Options& o, std::ostream& out) {
  const auto model = load_checkpoint(o.ckpt);
  const Image padded = pad_to_multiple(read_image(o.image), 8);
  const auto output = model.forward(image_to_tensor(padded));
  double total = 0.0;
  for (float v : output.data()) total += v;
  out << total << '\n';
  if (!o.export_base.empty()) {
    export_density(tensor_to_density(output, static_cast<double>(output.dim(2)) / padded.height), o.export_base);
  }
  return 0;
}

int cmd_gt(const Options& o, std::ostream& out) {
  const auto map = generate_density_map(read_annotation_file(o.ann), o.sigma, o.scale);
  export_density(map, o.out);
  out << map.sum() << '\n';
  return 0;
}

int cmd_params(const Options& o, std::ostream& out) {
  if (!o.ckpt.empty()) {
    out << count_parameters(read_checkpoint(o.ckpt).spec) << '\n';
  } else {
    out << count_parameters(preset_spec(o.arch)) << '\n';
  }
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Crowd counting with compact density-map networks", "densecount");
  app.require_subcommand(1);
  Options o;
  app.add_option("--seed", o.seed, "Seed for initialization, splits and augmentation");

  auto* train = app.add_subcommand("train", "Train a network on a dataset directory");
  train->add_option("--config", o.config, "Training config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--data", o.data, "Dataset root (images/, annotations/)")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", o.out, "Output directory")->required();
  train->add_option("--seed", o.seed, "Overrides the config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write a CSV report");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", o.report, "Report CSV path")->required();

  auto* prune = app.add_subcommand("prune", "Apply a pruning plan to a checkpoint");
  prune->add_option("--ckpt", o.ckpt, "Input checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--plan", o.plan, "Plan JSON")->required()->check(CLI::ExistingFile);
  prune->add_option("--out", o.out, "Output checkpoint")->required();

  auto* count = app.add_subcommand("count", "Estimate the head count of one image");
  count->add_option("--ckpt", o.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  count->add_option("--image", o.image, "Image file")->required()->check(CLI::ExistingFile);
  count->add_option("--export-density", o.export_base, "Write <base>.dmap and <base>.pgm");

  auto* gt = app.add_subcommand("gt", "Render a ground-truth density map");
  gt->add_option("--ann", o.ann, "Annotation JSON")->required()->check(CLI::ExistingFile);
  gt->add_option("--sigma", o.sigma, "Gaussian std in image pixels")->required();
  gt->add_option("--scale", o.scale, "Map resolution / image resolution")->default_val(1.0);
  gt->add_option("--out", o.out, "Output base path")->required();

  auto* params = app.add_subcommand("params", "Print a parameter count");
  auto* arch_opt = params->add_option("--arch", o.arch, "ccnn, ccnn-pruned or bl-mobilenetv2");
  auto* ckpt_opt = params->add_option("--ckpt", o.ckpt, "Checkpoint")->check(CLI::ExistingFile);
  arch_opt->excludes(ckpt_opt);
  params->require_option(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kUsage;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*eval) return cmd_eval(o, out);
    if (*prune) return cmd_prune(o, out);
    if (*count) return cmd_count(o, out);
    if (*gt) return cmd_gt(o, out);
    return cmd_params(o, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    if (const auto* plan = dynamic_cast<const PlanError*>(&e)) {
      for (const auto& d : plan->details()) err << "  " << d << '\n';
    }
    return kData;
  }
}

}  // namespace densecount::cli
