#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcanet/attention.hpp"

namespace gcanet::model {

/// Block placed on the deepest encoder feature to produce the global feature.
enum class GlobalBlock { kNone, kDsa, kMsa, kPpm };

/// Every architectural knob. Defaults are the full network.
///
/// Encoder stage i (1-based) runs a stem DSConv3x3 with stride 1 for i = 1
/// and 2 otherwise, then `stage_blocks[i-1]` residual pairs of DSConv units.
struct ModelConfig {
  std::array<std::int64_t, 5> stage_channels{16, 32, 64, 96, 128};
  std::array<int, 5> stage_blocks{4, 4, 4, 12, 24};
  int transformer_depth = 2;
  int ffn_expansion = 4;
  int cra_heads = 4;
  int decoder_dilation = 2;
  std::int64_t input_size = 256;
  GlobalBlock global_block = GlobalBlock::kDsa;
  int msa_heads = 8;
  bool use_cra = true;
  bool use_global_injection = true;

  static constexpr int kSideOutputs = 5;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

enum class Variant { kBaseline, kGlobalInjection, kCra, kFull, kPpm, kMsa8 };

/// Command-line names: baseline, db, cra, full, ppm, msa8.
std::string variant_name(Variant v);
std::optional<Variant> parse_variant(const std::string& name);

/// Ablations of `base`:
///   baseline  no global block, no CRA, no global injection
///   db        global injection into every decoder block, no CRA
///   cra       CRA referenced by the global feature, no injection
///   full      both
///   ppm       full with the transformer replaced by pyramid pooling {1,2,3,6}
///   msa8      full with DSA replaced by 8-head self-attention
ModelConfig apply_variant(ModelConfig base, Variant v);
std::vector<std::pair<Variant, ModelConfig>> ablation_variants(const ModelConfig& base);

/// CRA head count used for a decoder of `channels` width: gcd(cra_heads,
/// channels), which is cra_heads for the default schedule.
int cra_heads_for(const ModelConfig& config, std::int64_t channels);

struct LayerInfo {
  std::string name;
  Shape output;
};

template <class T>
struct ModelOutput {
  /// Side outputs [B,1,H,W] in [0,1]: index 0 is the final decoder stage,
  /// then decoders 2..4, then the global-feature head.
  std::array<Var<T>, 5> sides;
  std::array<Var<T>, 5> stages;  // encoder stage outputs
  Var<T> global;
  std::vector<LayerInfo> layers;
};

template <class T>
class GcaNet {
 public:
  /// Deterministic: parameter values depend only on (seed, parameter name).
  static GcaNet build(const ModelConfig& config, std::uint64_t seed);

  GcaNet(GcaNet&&) noexcept = default;
  GcaNet& operator=(GcaNet&&) noexcept = default;

  /// image: [B, 3, input_size, input_size].
  ModelOutput<T> forward(const Var<T>& image) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& params() { return store_; }
  const ParameterStore<T>& params() const { return store_; }
  std::int64_t count_params() const { return store_.element_count(); }

  /// Zeroes every side-output head (weights and biases).
  void zero_side_heads();

  /// Copies values from a network with identical parameter names/shapes.
  template <class U>
  void copy_values_from(const GcaNet<U>& other);

 private:
  struct DsConv {
    Parameter<T>* dw = nullptr;
    Parameter<T>* pw = nullptr;
    Parameter<T>* scale = nullptr;
    Parameter<T>* shift = nullptr;
    int stride = 1;
    int dilation = 1;
  };
  struct ResidualPair {
    DsConv a, b;
  };
  struct Stage {
    DsConv stem;
    std::vector<ResidualPair> blocks;
  };
  struct Conv1x1 {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
  };
  struct TransformerBlock {
    std::optional<attn::DsaParams<T>> dsa;
    std::optional<attn::MsaParams<T>> msa;
    Conv1x1 fc1, fc2;
  };
  struct Ppm {
    std::array<Conv1x1, 4> branches;
    Conv1x1 fuse;
  };
  struct Decoder {
    std::optional<attn::CraParams<T>> cra;
    Conv1x1 high;
    std::optional<Conv1x1> global;
    DsConv conv;
    Conv1x1 head;
  };

  GcaNet() = default;

  DsConv make_dsconv(const std::string& name, std::int64_t cin, std::int64_t cout, int stride, int dilation,
                     double scale_init, std::uint64_t seed);
  Conv1x1 make_conv1x1(const std::string& name, std::int64_t cin, std::int64_t cout, std::uint64_t seed,
                       double gain = kReluGain);
  Var<T> apply(const DsConv& u, const Var<T>& x, bool activate) const;
  Var<T> apply(const Conv1x1& c, const Var<T>& x) const;

  ModelConfig config_;
  ParameterStore<T> store_;
  std::array<Stage, 5> stages_;
  std::vector<TransformerBlock> transformer_;
  std::optional<Ppm> ppm_;
  std::array<Decoder, 4> decoders_;  // index k is decoder k+1
  Conv1x1 global_head_;
};

/// Parameter count and per-layer multiply-accumulate census.
struct LayerCost {
  std::string name;
  Shape output;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct ModelCost {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::vector<LayerCost> layers;
  MacCounter counter;
};

/// Runs one inference pass at `input_size` (batch 1) under a MacCounter.
/// MACs cover convolutions, matrix products and tensor-tensor products.
ModelCost count_costs(const ModelConfig& config, std::int64_t input_size, std::uint64_t seed = 0);

/// Text table: layer, output shape, params, MACs, with totals.
std::string format_summary(const ModelCost& cost);

}  // namespace gcanet::model
