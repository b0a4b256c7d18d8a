// gcanet command-line entry point: train | infer | eval | noise | summary | bench | synth.
//
// Exit codes: 0 success, 1 runtime failure (including per-file errors during
// infer/noise and aborted training), 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gcanet/bench.hpp"
#include "gcanet/pipeline.hpp"

namespace {

using namespace gcanet;
namespace fs = std::filesystem;

constexpr int kUsageError = 2;

const CLI::Validator kVariant(
    [](std::string& v) {
      return model::parse_variant(v) ? std::string()
                                     : "unknown variant '" + v + "' (baseline, db, cra, full, ppm, msa8)";
    },
    "VARIANT");

const CLI::Validator kRate(
    [](std::string& v) {
      try {
        const double r = std::stod(v);
        return r >= 0.0 && r <= 1.0 ? std::string() : "rho must lie in [0, 1]";
      } catch (const std::exception&) {
        return "'" + v + "' is not a number";
      }
    },
    "RATE");

struct Options {
  fs::path config, out, checkpoint, images, masks, pred;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::string variant;
  std::optional<double> rho;
  std::int64_t size = 256;
  std::int64_t channels = 128;
  int runs = 20;
  int count = 8;
  int log_every = 10;
  std::vector<std::int64_t> tokens{1024, 2048, 4096};
  std::string kind = "both";
};

pipeline::TrainConfig resolve_config(const Options& o, const fs::path& fallback = {}) {
  pipeline::TrainConfig cfg;
  if (!o.config.empty()) cfg = pipeline::load_config(o.config);
  else if (!fallback.empty() && fs::exists(fallback)) cfg = pipeline::load_config(fallback);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (!o.variant.empty()) cfg.variant = *model::parse_variant(o.variant);
  cfg.validate();
  return cfg;
}

int report(const pipeline::InferReport& r) {
  for (const auto& e : r.errors) std::cerr << "error: " << e.file.string() << ": " << e.message << '\n';
  std::cout << "wrote " << r.written.size() << " file(s), " << r.errors.size() << " error(s)\n";
  return r.errors.empty() ? 0 : 1;
}

int run_train(const Options& o) {
  const auto cfg = resolve_config(o);
  if (cfg.dataset.image_dir.empty() || cfg.dataset.mask_dir.empty() || cfg.dataset.split_file.empty()) {
    throw ConfigError("training needs image_dir, mask_dir and split_file in the config");
  }
  const auto samples = data::load(data::resolve(cfg.dataset));
  auto net = model::GcaNet<float>::build(cfg.model_config(), cfg.seed);
  std::cout << "training " << model::variant_name(cfg.variant) << " on " << samples.size() << " sample(s), "
            << cfg.epochs << " epoch(s)\n";
  pipeline::TrainOutputs outputs{o.out, [&](const pipeline::StepRecord& r) {
                                   if (o.log_every > 0 && r.step % o.log_every == 0) {
                                     std::printf("step %lld epoch %lld total %.5f (bce %.5f iou %.5f ssim %.5f)\n",
                                                 static_cast<long long>(r.step), static_cast<long long>(r.epoch),
                                                 r.total, r.bce, r.iou, r.ssim);
                                     std::fflush(stdout);
                                   }
                                 }};
  try {
    const auto res = pipeline::train(net, samples, cfg, outputs);
    std::cout << "final checkpoint " << res.final_checkpoint.string() << '\n';
    if (!res.log.empty()) std::printf("last total %.6f\n", res.log.back().total);
    return 0;
  } catch (const pipeline::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 1;
  }
}

int run_infer(const Options& o) {
  const auto cfg = resolve_config(o, o.checkpoint.parent_path() / "config.txt");
  const auto net = pipeline::load_network(cfg, o.checkpoint);
  pipeline::InferOptions opts;
  opts.noise_rho = o.rho;
  opts.noise_seed = o.seed.value_or(0);
  return report(pipeline::infer(net, o.images, o.out, opts));
}

int run_eval(const Options& o) {
  const auto rep = pipeline::evaluate_directory(o.pred, o.masks, o.out);
  for (const auto& s : rep.skipped) std::cerr << "skipped " << s.file.filename().string() << ": " << s.message << '\n';
  const auto& m = rep.mean;
  std::cout << pipeline::kMetricsHeader << '\n';
  std::printf("mean,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", m.mae, m.mean_f, m.max_f, m.weighted_f, m.s_measure,
              m.e_measure);
  std::cout << rep.rows.size() << " scored, " << rep.skipped.size() << " skipped\n";
  return 0;
}

int run_noise(const Options& o) {
  return report(pipeline::add_noise(o.images, o.out, o.rho.value_or(0.2), o.seed.value_or(0)));
}

int run_summary(const Options& o) {
  const auto cfg = resolve_config(o);
  auto mc = cfg.model_config();
  mc.input_size = o.size;
  const auto cost = model::count_costs(mc, o.size, cfg.seed);
  std::cout << "variant " << model::variant_name(cfg.variant) << ", input " << o.size << "x" << o.size << '\n'
            << model::format_summary(cost) << "params " << cost.params << '\n'
            << "flops " << cost.macs << '\n';
  return 0;
}

int run_bench(const Options& o) {
  std::vector<std::pair<std::string, bench::Attention>> kinds;
  if (o.kind != "msa") kinds.emplace_back("dsa", bench::Attention::kDsa);
  if (o.kind != "dsa") kinds.emplace_back("msa", bench::Attention::kMsa);
  std::cout << "kind,channels,tokens,median_ms\n";
  for (const auto& [name, kind] : kinds) {
    const auto s = bench::measure_scaling(kind, o.channels, o.tokens, o.runs);
    for (const auto& p : s.points) {
      std::printf("%s,%lld,%lld,%.4f\n", name.c_str(), static_cast<long long>(o.channels),
                  static_cast<long long>(p.tokens), p.median_ms);
    }
    std::printf("%s ratio time(N=%lld)/time(N=%lld) = %.3f, log-log slope %.3f\n", name.c_str(),
                static_cast<long long>(o.tokens.back()), static_cast<long long>(o.tokens.front()), s.ratio,
                s.loglog_slope);
    std::fflush(stdout);
  }
  return 0;
}

int run_synth(const Options& o) {
  const auto spec = data::write_synthetic_dataset(o.out, o.count, o.size, o.seed.value_or(0));
  std::cout << "wrote " << o.count << " pair(s) to " << spec.image_dir.parent_path().string() << '\n'
            << "image_dir = " << spec.image_dir.string() << "\nmask_dir = " << spec.mask_dir.string()
            << "\nsplit_file = " << spec.split_file.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GCANet defect saliency: training, inference, evaluation and cost reports"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train a network; writes checkpoints and train_log.csv to --out");
  train->add_option("--config", o.config, "key = value training config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--seed", o.seed, "override the config seed");
  train->add_option("--epochs", o.epochs, "override the config epoch count");
  train->add_option("--variant", o.variant, "ablation variant")->check(kVariant);
  train->add_option("--log-every", o.log_every, "print every N steps (0 = quiet)");

  auto* infer = app.add_subcommand("infer", "write final-stage saliency PNGs for a directory of images");
  infer->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--images", o.images, "input image directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--out", o.out, "output directory")->required();
  infer->add_option("--config", o.config, "training config (default: config.txt beside the checkpoint)")
      ->check(CLI::ExistingFile);
  infer->add_option("--variant", o.variant, "ablation variant")->check(kVariant);
  infer->add_option("--rho", o.rho, "salt-and-pepper rate applied before inference")->check(kRate);
  infer->add_option("--seed", o.seed, "noise seed");

  auto* eval = app.add_subcommand("eval", "score predictions against masks; writes metrics and curves CSV");
  eval->add_option("--pred", o.pred, "prediction directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--masks", o.masks, "ground-truth mask directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", o.out, "output directory for metrics.csv, curves.csv, skipped.txt");

  auto* noise = app.add_subcommand("noise", "write salt-and-pepper corrupted copies of a directory of images");
  noise->add_option("--images", o.images, "input image directory")->required()->check(CLI::ExistingDirectory);
  noise->add_option("--out", o.out, "output directory")->required();
  noise->add_option("--rho", o.rho, "corruption rate (default 0.2)")->check(kRate);
  noise->add_option("--seed", o.seed, "noise seed");

  auto* summary = app.add_subcommand("summary", "print the per-layer parameter and FLOP census");
  summary->add_option("--config", o.config, "training config")->check(CLI::ExistingFile);
  summary->add_option("--variant", o.variant, "ablation variant")->check(kVariant);
  summary->add_option("--size", o.size, "input size (default 256)")->check(CLI::PositiveNumber);

  auto* bench_cmd = app.add_subcommand("bench", "time DSA against multi-head self-attention over token counts");
  bench_cmd->add_option("--channels", o.channels, "channels (default 128)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--runs", o.runs, "timed runs per point (default 20)")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--tokens", o.tokens, "token counts, powers of two (default 1024 2048 4096)");
  bench_cmd->add_option("--kind", o.kind, "dsa, msa or both")->check(CLI::IsMember({"dsa", "msa", "both"}));

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic defect dataset");
  synth->add_option("--out", o.out, "dataset root")->required();
  synth->add_option("--count", o.count, "number of pairs (default 8)")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.size, "image size (default 256)")->check(CLI::Range(16, 4096));
  synth->add_option("--seed", o.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (train->parsed()) return run_train(o);
    if (infer->parsed()) return run_infer(o);
    if (eval->parsed()) return run_eval(o);
    if (noise->parsed()) return run_noise(o);
    if (summary->parsed()) return run_summary(o);
    if (bench_cmd->parsed()) return run_bench(o);
    if (synth->parsed()) return run_synth(o);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
