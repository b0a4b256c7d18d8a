#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gcanet/data.hpp"
#include "gcanet/metrics.hpp"
#include "gcanet/model.hpp"
#include "gcanet/optim.hpp"

namespace gcanet::pipeline {

// ------------------------------------------------------------ configuration

/// Training run settings. The network input size is the crop size.
struct TrainConfig {
  double learning_rate = 5e-4;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 1;
  std::uint64_t seed = 0;
  std::int64_t resize = 256;
  std::int64_t crop = 224;
  bool flips = true;
  /// Write a checkpoint every this many epochs; 0 writes only the final one.
  std::int64_t checkpoint_every = 0;
  model::Variant variant = model::Variant::kFull;
  data::DatasetSpec dataset;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  data::AugmentOptions augmentation() const { return {resize, crop, flips}; }
  AdamOptions optimizer() const { return {learning_rate}; }
  /// Default architecture with this variant at input size `crop`.
  model::ModelConfig model_config() const;
};

/// Keys accepted by the config file, in file order.
const std::vector<std::string>& config_keys();

/// UTF-8 lines `key = value`; `#` starts a comment; blank lines are ignored.
/// Unknown or repeated keys and malformed values throw ConfigError with the
/// line number. Relative dataset paths are resolved against `base_dir`.
TrainConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
TrainConfig load_config(const std::filesystem::path& path);
/// Inverse of parse_config (paths written as given).
std::string format_config(const TrainConfig& config);

// ------------------------------------------------------------ training

struct StepRecord {
  std::int64_t step = 0;   // 1-based
  std::int64_t epoch = 0;  // 1-based
  double bce = 0.0;
  double iou = 0.0;
  double ssim = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;    // since the start of training
};

inline constexpr std::string_view kLogHeader = "step,epoch,bce,iou,ssim,total,wall_ms";
std::string format_log_row(const StepRecord& r);

/// Thrown when a loss term turns non-finite. Parameters are left at their
/// last finite state, which is also saved to `checkpoint` when an output
/// directory was given.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::string term, std::filesystem::path checkpoint)
      : NumericError(what), term_(std::move(term)), checkpoint_(std::move(checkpoint)) {}
  const std::string& term() const { return term_; }
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

 private:
  std::string term_;
  std::filesystem::path checkpoint_;
};

struct TrainOutputs {
  /// When set: train_log.csv, config.txt (dataset paths made absolute),
  /// checkpoint_epoch_<k>.gcnt, final.gcnt, and last_good.gcnt on abort are
  /// written here.
  std::filesystem::path out_dir;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::filesystem::path final_checkpoint;
};

/// Mini-batch Adam on the summed side-output loss. Each epoch visits the
/// samples in a permutation drawn from (seed, epoch); each sample's
/// augmentation stream is keyed by (seed, epoch, sample index), so it does not
/// depend on batch composition or loading order. The final batch of an epoch may
/// be smaller. Throws ConfigError when the net's input size differs from
/// crop or the dataset is empty.
TrainResult train(model::GcaNet<float>& net, const std::vector<io::Pair>& samples, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

/// Builds the configured network and loads a checkpoint into it.
model::GcaNet<float> load_network(const TrainConfig& config, const std::filesystem::path& checkpoint);

// ------------------------------------------------------------ inference

struct InferOptions {
  /// Salt-and-pepper rate applied to each source image before inference.
  std::optional<double> noise_rho;
  std::uint64_t noise_seed = 0;
};

struct FileError {
  std::filesystem::path file;
  std::string message;
};

struct InferReport {
  std::vector<std::filesystem::path> written;
  std::vector<FileError> errors;
};

/// Final-stage saliency of one image at the source resolution: the image is
/// resized (bilinear) to the network input, and the map back.
Tensor<float> predict(const model::GcaNet<float>& net, const Tensor<float>& image);

/// Writes <stem>.png (8-bit gray, round(255 * S)) for every PNG/PGM image
/// in image_dir. Per-file failures are collected and the run continues.
InferReport infer(const model::GcaNet<float>& net, const std::filesystem::path& image_dir,
                  const std::filesystem::path& out_dir, const InferOptions& options = {});

/// Writes a noisy copy of every image in image_dir as <stem>.png.
InferReport add_noise(const std::filesystem::path& image_dir, const std::filesystem::path& out_dir, double rho,
                      std::uint64_t seed);

// ------------------------------------------------------------ evaluation

struct EvalRow {
  std::string name;
  metrics::MetricReport report;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  metrics::MetricReport mean;
  std::vector<FileError> skipped;
};

/// Scores each mask in mask_dir against the same-named prediction in
/// pred_dir (resized bilinearly to the mask when sizes differ). Missing
/// predictions, unreadable files and masks without foreground are skipped
/// and listed. When out_dir is set, writes metrics.csv (one row per image and
/// a final "mean" row), curves.csv (threshold, precision, recall, f of the
/// averaged curves) and skipped.txt. Throws IoError when nothing is scorable.
EvalReport evaluate_directory(const std::filesystem::path& pred_dir, const std::filesystem::path& mask_dir,
                              const std::filesystem::path& out_dir = {});

inline constexpr std::string_view kMetricsHeader = "name,mae,mean_f,max_f,weighted_f,s_measure,e_measure";

}  // namespace gcanet::pipeline
