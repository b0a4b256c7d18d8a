#include "gcanet/pipeline.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "gcanet/checkpoint.hpp"
#include "gcanet/error.hpp"
#include "gcanet/loss.hpp"
#include "gcanet/ops.hpp"

namespace gcanet::pipeline {
namespace fs = std::filesystem;

// ------------------------------------------------------------ configuration

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must not be negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must not be negative");
  augmentation().validate();
  model_config().validate();
}

model::ModelConfig TrainConfig::model_config() const {
  model::ModelConfig c;
  c.input_size = crop;
  return model::apply_variant(c, variant);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{"learning_rate", "batch_size", "epochs",   "seed",
                                              "resize",        "crop",       "flips",    "checkpoint_every",
                                              "variant",       "image_dir",  "mask_dir", "split_file"};
  return keys;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class N>
N parse_number(const std::string& v, const std::string& where) {
  N out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) throw ConfigError(where + ": '" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where + ": '" + v + "' is not a boolean");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

TrainConfig parse_config(std::string_view text, const fs::path& base_dir) {
  TrainConfig c;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  auto resolve_path = [&](const std::string& v) { return fs::path(v).is_relative() ? base_dir / v : fs::path(v); };
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (value.empty()) throw ConfigError(where + ": '" + key + "' has no value");
    if (seen.count(key)) throw ConfigError(where + ": '" + key + "' repeats line " + std::to_string(seen[key]));
    seen[key] = line_no;
    if (key == "learning_rate") c.learning_rate = parse_number<double>(value, where);
    else if (key == "batch_size") c.batch_size = parse_number<std::int64_t>(value, where);
    else if (key == "epochs") c.epochs = parse_number<std::int64_t>(value, where);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(value, where);
    else if (key == "resize") c.resize = parse_number<std::int64_t>(value, where);
    else if (key == "crop") c.crop = parse_number<std::int64_t>(value, where);
    else if (key == "flips") c.flips = parse_bool(value, where);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::int64_t>(value, where);
    else if (key == "variant") {
      const auto v = model::parse_variant(value);
      if (!v) throw ConfigError(where + ": unknown variant '" + value + "'");
      c.variant = *v;
    } else if (key == "image_dir") c.dataset.image_dir = resolve_path(value);
    else if (key == "mask_dir") c.dataset.mask_dir = resolve_path(value);
    else if (key == "split_file") c.dataset.split_file = resolve_path(value);
    else throw ConfigError(where + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string format_config(const TrainConfig& c) {
  std::ostringstream o;
  o << "learning_rate = " << fmt("%.17g", c.learning_rate) << '\n'
    << "batch_size = " << c.batch_size << '\n'
    << "epochs = " << c.epochs << '\n'
    << "seed = " << c.seed << '\n'
    << "resize = " << c.resize << '\n'
    << "crop = " << c.crop << '\n'
    << "flips = " << (c.flips ? "true" : "false") << '\n'
    << "checkpoint_every = " << c.checkpoint_every << '\n'
    << "variant = " << model::variant_name(c.variant) << '\n';
  if (!c.dataset.image_dir.empty()) o << "image_dir = " << c.dataset.image_dir.string() << '\n';
  if (!c.dataset.mask_dir.empty()) o << "mask_dir = " << c.dataset.mask_dir.string() << '\n';
  if (!c.dataset.split_file.empty()) o << "split_file = " << c.dataset.split_file.string() << '\n';
  return o.str();
}

// ------------------------------------------------------------ training

std::string format_log_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.3f", static_cast<long long>(r.step),
                static_cast<long long>(r.epoch), r.bce, r.iou, r.ssim, r.total, r.wall_ms);
  return buf;
}

namespace {

constexpr std::uint64_t kPermutationStream = 0x7065726d;  // "perm"
constexpr std::uint64_t kAugmentStream = 0x61756720;      // "aug "

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed ^ kPermutationStream, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Tensor<float> stack(const std::vector<Tensor<float>>& parts) {
  Shape s = parts.front().shape();
  const auto per = static_cast<std::size_t>(s.numel());
  s.n = static_cast<std::int64_t>(parts.size());
  std::vector<float> data;
  data.reserve(per * parts.size());
  for (const auto& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
  return Tensor<float>(s, std::move(data));
}

std::string first_non_finite_grad(const std::vector<Parameter<float>*>& params) {
  for (const auto* p : params)
    for (float g : p->grad.vec())
      if (!std::isfinite(g)) return "gradient of " + p->name;
  return {};
}

}  // namespace

TrainResult train(model::GcaNet<float>& net, const std::vector<io::Pair>& samples, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  if (samples.empty()) throw ConfigError("training needs at least one sample");
  if (net.config().input_size != config.crop) {
    throw ConfigError("network input size " + std::to_string(net.config().input_size) + " differs from crop " +
                      std::to_string(config.crop));
  }
  const auto params = net.params().all();
  const std::span<Parameter<float>* const> param_span(params);
  const bool write = !outputs.out_dir.empty();
  std::ofstream log;
  if (write) {
    fs::create_directories(outputs.out_dir);
    TrainConfig written = config;
    for (fs::path* p : {&written.dataset.image_dir, &written.dataset.mask_dir, &written.dataset.split_file}) {
      if (!p->empty()) *p = fs::absolute(*p);
    }
    std::ofstream(outputs.out_dir / "config.txt") << format_config(written);
    log.open(outputs.out_dir / "train_log.csv");
    if (!log) throw IoError("cannot write training log in '" + outputs.out_dir.string() + "'");
    log << kLogHeader << '\n';
  }

  Adam<float> opt(params, config.optimizer());
  opt.zero_grad();
  const auto aug = config.augmentation();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  std::int64_t step = 0;
  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, samples.size());
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor<float>> images, masks;
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t idx = order[k];
        Rng rng(derive_seed(config.seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch), idx));
        auto a = data::augment(samples[idx].image, samples[idx].mask, aug, rng);
        images.push_back(std::move(a.image));
        masks.push_back(std::move(a.mask));
      }
      ++step;
      Graph<float> g(true);
      const auto out = net.forward(g.constant(stack(images)));
      const auto loss = loss::total_loss<float>(std::span<const Var<float>>(out.sides), g.constant(stack(masks)));
      std::string bad = loss.breakdown.first_non_finite();
      if (bad.empty() && !std::isfinite(loss.breakdown.total)) bad = "total";
      if (bad.empty()) {
        g.backward(loss.total);
        bad = first_non_finite_grad(params);
      }
      if (!bad.empty()) {
        opt.zero_grad();
        fs::path ckpt;
        if (write) {
          ckpt = outputs.out_dir / "last_good.gcnt";
          save_parameters<float>(ckpt, param_span);
        }
        throw TrainingAborted("non-finite " + bad + " at step " + std::to_string(step) + " (epoch " +
                                  std::to_string(epoch) + ")" +
                                  (write ? "; last good parameters saved to " + ckpt.string() : std::string()),
                              bad, ckpt);
      }
      opt.step();
      const auto& bd = loss.breakdown;
      StepRecord r{step, epoch, bd.bce(), bd.iou(), bd.ssim(), bd.total,
                   std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(r);
      if (write) log << format_log_row(r) << '\n';
      if (outputs.on_step) outputs.on_step(r);
    }
    if (write && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      save_parameters<float>(outputs.out_dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".gcnt"), param_span);
    }
  }
  if (write) {
    result.final_checkpoint = outputs.out_dir / "final.gcnt";
    save_parameters<float>(result.final_checkpoint, param_span);
  }
  return result;
}

model::GcaNet<float> load_network(const TrainConfig& config, const fs::path& checkpoint) {
  auto net = model::GcaNet<float>::build(config.model_config(), config.seed);
  const auto params = net.params().all();
  load_parameters<float>(checkpoint, std::span<Parameter<float>* const>(params));
  return net;
}

// ------------------------------------------------------------ inference

Tensor<float> predict(const model::GcaNet<float>& net, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("predict expects one RGB image [1,3,H,W], got " + s.str());
  const std::int64_t n = net.config().input_size;
  Graph<float> g(false);
  const auto out = net.forward(g.constant(s.h == n && s.w == n ? image : resize_bilinear(image, n, n)));
  const Tensor<float>& map = out.sides[0].value();
  return s.h == n && s.w == n ? map : resize_bilinear(map, s.h, s.w);
}

namespace {

template <class F>
InferReport for_each_image(const fs::path& image_dir, const fs::path& out_dir, F&& produce) {
  InferReport report;
  const auto files = io::list_images(image_dir);
  fs::create_directories(out_dir);
  for (const auto& f : files) {
    try {
      const fs::path dst = out_dir / (f.stem().string() + ".png");
      io::write_png(dst, produce(f));
      report.written.push_back(dst);
    } catch (const std::exception& e) {
      report.errors.push_back({f, e.what()});
    }
  }
  return report;
}

Tensor<float> maybe_noisy(const Tensor<float>& image, const fs::path& file, std::optional<double> rho,
                          std::uint64_t seed) {
  if (!rho) return image;
  Rng rng(derive_seed(seed, file.stem().string()));
  return data::salt_pepper(image, *rho, rng).image;
}

}  // namespace

InferReport infer(const model::GcaNet<float>& net, const fs::path& image_dir, const fs::path& out_dir,
                  const InferOptions& options) {
  if (options.noise_rho && !(*options.noise_rho >= 0.0 && *options.noise_rho <= 1.0)) {
    throw ConfigError("noise rate rho must lie in [0, 1]");
  }
  return for_each_image(image_dir, out_dir, [&](const fs::path& f) {
    const Tensor<float> image = maybe_noisy(io::to_tensor(io::read_image(f)), f, options.noise_rho, options.noise_seed);
    return io::to_gray8(predict(net, image));
  });
}

InferReport add_noise(const fs::path& image_dir, const fs::path& out_dir, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("noise rate rho must lie in [0, 1]");
  return for_each_image(image_dir, out_dir, [&](const fs::path& f) {
    const io::Image8 src = io::read_image(f);
    const Tensor<float> noisy = maybe_noisy(io::to_tensor(src), f, rho, seed);
    return src.channels == 1 ? io::to_gray8(noisy) : io::to_image8(noisy);
  });
}

// ------------------------------------------------------------ evaluation

namespace {

Tensor<double> gray_map(const io::Image8& img) {
  Tensor<double> t(Shape{1, 1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return t;
}

std::string metrics_row(const std::string& name, const metrics::MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.mae, r.mean_f, r.max_f, r.weighted_f,
                r.s_measure, r.e_measure);
  return name + buf;
}

}  // namespace

EvalReport evaluate_directory(const fs::path& pred_dir, const fs::path& mask_dir, const fs::path& out_dir) {
  EvalReport report;
  std::vector<metrics::MetricReport> reports;
  for (const auto& mask_file : io::list_images(mask_dir)) {
    const std::string name = mask_file.stem().string();
    try {
      const auto mask = io::binarize_mask(io::read_image(mask_file, io::ColorMode::kGray)).cast<double>();
      Tensor<double> pred = gray_map(io::read_image(data::find_by_basename(pred_dir, name), io::ColorMode::kGray));
      if (!(pred.shape() == mask.shape())) pred = resize_bilinear(pred, mask.shape().h, mask.shape().w);
      report.rows.push_back({name, metrics::evaluate(pred, mask)});
      reports.push_back(report.rows.back().report);
    } catch (const std::exception& e) {
      report.skipped.push_back({mask_file, e.what()});
    }
  }
  if (reports.empty()) throw IoError("no scorable prediction/mask pairs in '" + mask_dir.string() + "'");
  report.mean = metrics::mean_report(reports);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream m(out_dir / "metrics.csv");
    m << kMetricsHeader << '\n';
    for (const auto& row : report.rows) m << metrics_row(row.name, row.report) << '\n';
    m << metrics_row("mean", report.mean) << '\n';
    std::ofstream c(out_dir / "curves.csv");
    c << "threshold,precision,recall,f\n";
    for (int k = 0; k < metrics::kThresholds; ++k) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", metrics::threshold(k), report.mean.curves.precision[k],
                    report.mean.curves.recall[k], report.mean.curves.f[k]);
      c << buf;
    }
    std::ofstream s(out_dir / "skipped.txt");
    for (const auto& e : report.skipped) s << e.file.filename().string() << '\t' << e.message << '\n';
    if (!m || !c || !s) throw IoError("cannot write evaluation outputs in '" + out_dir.string() + "'");
  }
  return report;
}

}  // namespace gcanet::pipeline
