#include "gcanet/model.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

namespace gcanet::model {
namespace {

constexpr std::array<int, 4> kPoolSizes{1, 2, 3, 6};

template <class T>
Var<T> resize_to(const Var<T>& x, std::int64_t h, std::int64_t w) {
  if (x.shape().h == h && x.shape().w == w) return x;
  return upsample_bilinear(x, h, w);
}

std::int64_t ppm_width(std::int64_t c) { return std::max<std::int64_t>(1, c / 4); }

}  // namespace

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] < 1) throw ConfigError("stage_channels must be positive");
    if (i > 0 && stage_channels[i] <= stage_channels[i - 1]) {
      throw ConfigError("stage_channels must be strictly increasing");
    }
  }
  for (int b : stage_blocks) {
    if (b < 0) throw ConfigError("stage_blocks must be non-negative");
  }
  if (input_size < 16 || input_size % 16 != 0) throw ConfigError("input_size must be a positive multiple of 16");
  if (transformer_depth < 0) throw ConfigError("transformer_depth must be non-negative");
  if (ffn_expansion < 1) throw ConfigError("ffn_expansion must be at least 1");
  if (cra_heads < 1) throw ConfigError("cra_heads must be at least 1");
  if (decoder_dilation < 1) throw ConfigError("decoder_dilation must be at least 1");
  if (global_block == GlobalBlock::kMsa && (msa_heads < 1 || stage_channels[4] % msa_heads != 0)) {
    throw ConfigError("msa_heads must divide the deepest stage width");
  }
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kGlobalInjection: return "db";
    case Variant::kCra: return "cra";
    case Variant::kFull: return "full";
    case Variant::kPpm: return "ppm";
    case Variant::kMsa8: return "msa8";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(const std::string& name) {
  for (Variant v : {Variant::kBaseline, Variant::kGlobalInjection, Variant::kCra, Variant::kFull, Variant::kPpm,
                    Variant::kMsa8}) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

ModelConfig apply_variant(ModelConfig c, Variant v) {
  c.global_block = GlobalBlock::kDsa;
  c.use_cra = true;
  c.use_global_injection = true;
  switch (v) {
    case Variant::kBaseline:
      c.global_block = GlobalBlock::kNone;
      c.use_cra = false;
      c.use_global_injection = false;
      break;
    case Variant::kGlobalInjection: c.use_cra = false; break;
    case Variant::kCra: c.use_global_injection = false; break;
    case Variant::kFull: break;
    case Variant::kPpm: c.global_block = GlobalBlock::kPpm; break;
    case Variant::kMsa8:
      c.global_block = GlobalBlock::kMsa;
      c.msa_heads = std::gcd(8, static_cast<int>(c.stage_channels[4]));
      break;
  }
  return c;
}

std::vector<std::pair<Variant, ModelConfig>> ablation_variants(const ModelConfig& base) {
  std::vector<std::pair<Variant, ModelConfig>> out;
  for (Variant v : {Variant::kBaseline, Variant::kGlobalInjection, Variant::kCra, Variant::kFull, Variant::kPpm,
                    Variant::kMsa8}) {
    out.emplace_back(v, apply_variant(base, v));
  }
  return out;
}

int cra_heads_for(const ModelConfig& config, std::int64_t channels) {
  return static_cast<int>(std::gcd(static_cast<std::int64_t>(config.cra_heads), channels));
}

template <class T>
typename GcaNet<T>::DsConv GcaNet<T>::make_dsconv(const std::string& name, std::int64_t cin, std::int64_t cout,
                                                  int stride, int dilation, double scale_init, std::uint64_t seed) {
  DsConv u;
  u.dw = &store_.add(name + ".dw", kaiming_normal<T>(Shape{cin, 1, 3, 3}, 9, seed, name + ".dw", kLinearGain));
  u.pw = &store_.add(name + ".pw", kaiming_normal<T>(Shape{cout, cin, 1, 1}, cin, seed, name + ".pw"));
  u.scale = &store_.add(name + ".scale", Tensor<T>(Shape{1, cout, 1, 1}, static_cast<T>(scale_init)));
  u.shift = &store_.add(name + ".shift", Tensor<T>(Shape{1, cout, 1, 1}));
  u.stride = stride;
  u.dilation = dilation;
  return u;
}

template <class T>
typename GcaNet<T>::Conv1x1 GcaNet<T>::make_conv1x1(const std::string& name, std::int64_t cin, std::int64_t cout,
                                                    std::uint64_t seed, double gain) {
  Conv1x1 c;
  c.w = &store_.add(name + ".w", kaiming_normal<T>(Shape{cout, cin, 1, 1}, cin, seed, name + ".w", gain));
  c.b = &store_.add(name + ".b", Tensor<T>(Shape{1, cout, 1, 1}));
  return c;
}

template <class T>
Var<T> GcaNet<T>::apply(const DsConv& u, const Var<T>& x, bool activate) const {
  Graph<T>& g = x.graph();
  Conv2dSpec dw_spec;
  dw_spec.stride = u.stride;
  dw_spec.dilation = u.dilation;
  dw_spec.groups = static_cast<int>(x.shape().c);
  Var<T> y = conv2d(x, g.param(*u.dw), static_cast<const Var<T>*>(nullptr), dw_spec);
  y = conv2d(y, g.param(*u.pw), static_cast<const Var<T>*>(nullptr), Conv2dSpec{});
  y = affine_channel(y, g.param(*u.scale), g.param(*u.shift));
  return activate ? relu(y) : y;
}

template <class T>
Var<T> GcaNet<T>::apply(const Conv1x1& c, const Var<T>& x) const {
  Graph<T>& g = x.graph();
  const Var<T> b = g.param(*c.b);
  return conv2d(x, g.param(*c.w), &b, Conv2dSpec{});
}

template <class T>
GcaNet<T> GcaNet<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  GcaNet net;
  net.config_ = config;
  const auto& ch = config.stage_channels;

  std::int64_t cin = 3;
  for (int i = 0; i < 5; ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    Stage& st = net.stages_[i];
    st.stem = net.make_dsconv(name + ".stem", cin, ch[i], i == 0 ? 1 : 2, 1, 1.0, seed);
    for (int j = 0; j < config.stage_blocks[i]; ++j) {
      const std::string bn = name + ".block" + std::to_string(j);
      ResidualPair rp;
      rp.a = net.make_dsconv(bn + ".a", ch[i], ch[i], 1, 1, 1.0, seed);
      rp.b = net.make_dsconv(bn + ".b", ch[i], ch[i], 1, 1, 0.0, seed);
      st.blocks.push_back(rp);
    }
    cin = ch[i];
  }

  const std::int64_t c5 = ch[4];
  if (config.global_block == GlobalBlock::kDsa || config.global_block == GlobalBlock::kMsa) {
    for (int t = 0; t < config.transformer_depth; ++t) {
      const std::string name = "transformer." + std::to_string(t);
      TransformerBlock tb;
      if (config.global_block == GlobalBlock::kDsa) {
        tb.dsa = attn::make_dsa(net.store_, name + ".attn", c5, seed);
      } else {
        tb.msa = attn::make_msa(net.store_, name + ".attn", c5, config.msa_heads, seed);
      }
      const std::int64_t hidden = c5 * config.ffn_expansion;
      tb.fc1 = net.make_conv1x1(name + ".ffn.fc1", c5, hidden, seed);
      tb.fc2 = net.make_conv1x1(name + ".ffn.fc2", hidden, c5, seed, kLinearGain);
      net.transformer_.push_back(std::move(tb));
    }
  } else if (config.global_block == GlobalBlock::kPpm) {
    Ppm ppm;
    const std::int64_t w = ppm_width(c5);
    for (std::size_t k = 0; k < kPoolSizes.size(); ++k) {
      ppm.branches[k] = net.make_conv1x1("ppm.pool" + std::to_string(kPoolSizes[k]), c5, w, seed);
    }
    ppm.fuse = net.make_conv1x1("ppm.fuse", c5 + 4 * w, c5, seed);
    net.ppm_ = ppm;
  }

  for (int i = 3; i >= 0; --i) {
    const std::string name = "decoder" + std::to_string(i + 1);
    Decoder& d = net.decoders_[i];
    const std::int64_t high = ch[i + 1];
    if (config.use_cra) {
      d.cra = attn::make_cra(net.store_, name + ".cra", ch[i], high, c5, cra_heads_for(config, ch[i]), seed);
    }
    d.high = net.make_conv1x1(name + ".fuse.high", high, ch[i], seed, kLinearGain);
    if (config.use_global_injection) d.global = net.make_conv1x1(name + ".fuse.global", c5, ch[i], seed, kLinearGain);
    d.conv = net.make_dsconv(name + ".conv", ch[i], ch[i], 1, config.decoder_dilation, 1.0, seed);
  }
  for (int i = 0; i < 4; ++i) {
    net.decoders_[i].head = net.make_conv1x1("head.decoder" + std::to_string(i + 1), ch[i], 1, seed,
                                                  kLinearGain);
  }
  net.global_head_ = net.make_conv1x1("head.global", c5, 1, seed, kLinearGain);
  return net;
}

template <class T>
ModelOutput<T> GcaNet<T>::forward(const Var<T>& image) const {
  const Shape s = image.shape();
  const std::int64_t size = config_.input_size;
  if (s.c != 3 || s.h != size || s.w != size) {
    throw ShapeError("forward: expected [B,3," + std::to_string(size) + "," + std::to_string(size) + "], got " +
                     s.str());
  }
  ModelOutput<T> out;
  auto note = [&out](const std::string& name, const Var<T>& v) { out.layers.push_back({name, v.shape()}); };

  Var<T> x = image;
  for (int i = 0; i < 5; ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    LayerScope stage_scope(name);
    {
      LayerScope scope("stem");
      x = apply(stages_[i].stem, x, true);
    }
    note(name + ".stem", x);
    for (std::size_t j = 0; j < stages_[i].blocks.size(); ++j) {
      const std::string bn = "block" + std::to_string(j);
      LayerScope scope(bn);
      const ResidualPair& rp = stages_[i].blocks[j];
      x = relu(add(x, apply(rp.b, apply(rp.a, x, true), false)));
      note(name + "." + bn, x);
    }
    out.stages[i] = x;
  }

  Var<T> global = x;
  if (!transformer_.empty()) {
    LayerScope scope("transformer");
    for (std::size_t t = 0; t < transformer_.size(); ++t) {
      LayerScope block_scope(std::to_string(t));
      const TransformerBlock& tb = transformer_[t];
      {
        LayerScope attn_scope("attn");
        const Var<T> normed = channel_norm(global);
        global = add(global, tb.dsa ? attn::dsa_forward(normed, *tb.dsa) : attn::msa_forward(normed, *tb.msa));
      }
      {
        LayerScope ffn_scope("ffn");
        global = add(global, apply(tb.fc2, relu(apply(tb.fc1, channel_norm(global)))));
      }
      note("transformer." + std::to_string(t), global);
    }
  } else if (ppm_) {
    LayerScope scope("ppm");
    std::vector<Var<T>> parts{global};
    const Shape gs = global.shape();
    for (std::size_t k = 0; k < kPoolSizes.size(); ++k) {
      const Var<T> pooled = adaptive_avg_pool(global, kPoolSizes[k], kPoolSizes[k]);
      parts.push_back(upsample_bilinear(relu(apply(ppm_->branches[k], pooled)), gs.h, gs.w));
    }
    global = relu(apply(ppm_->fuse, concat_channels<T>(parts)));
    note("ppm", global);
  }
  out.global = global;

  std::array<Var<T>, 4> dec;
  for (int i = 3; i >= 0; --i) {
    const std::string name = "decoder" + std::to_string(i + 1);
    LayerScope dec_scope(name);
    const Decoder& d = decoders_[i];
    const Var<T>& high = i == 3 ? global : dec[i + 1];
    Var<T> low = out.stages[i];
    const std::int64_t h = low.shape().h;
    const std::int64_t w = low.shape().w;
    if (d.cra) {
      LayerScope scope("cra");
      low = attn::cra_forward(low, high, global, *d.cra);
      note(name + ".cra", low);
    }
    Var<T> fused;
    {
      LayerScope scope("fuse");
      fused = add(low, resize_to(apply(d.high, high), h, w));
      if (d.global) fused = add(fused, resize_to(apply(*d.global, global), h, w));
    }
    note(name + ".fuse", fused);
    {
      LayerScope scope("conv");
      dec[i] = apply(d.conv, fused, true);
    }
    note(name + ".conv", dec[i]);
  }

  auto head = [&](const std::string& name, const Conv1x1& c, const Var<T>& f) {
    LayerScope scope("head." + name);
    Var<T> y = sigmoid(resize_to(apply(c, f), size, size));
    note("head." + name, y);
    return y;
  };
  for (int i = 0; i < 4; ++i) out.sides[i] = head("decoder" + std::to_string(i + 1), decoders_[i].head, dec[i]);
  out.sides[4] = head("global", global_head_, global);
  return out;
}

template <class T>
void GcaNet<T>::zero_side_heads() {
  auto zero = [](Conv1x1& c) {
    c.w->value.fill(T{0});
    c.b->value.fill(T{0});
  };
  for (auto& d : decoders_) zero(d.head);
  zero(global_head_);
}

template <class T>
template <class U>
void GcaNet<T>::copy_values_from(const GcaNet<U>& other) {
  for (Parameter<T>* p : store_.all()) {
    const Parameter<U>* src = other.params().find(p->name);
    if (src == nullptr || src->value.shape() != p->value.shape()) {
      throw ShapeError("copy_values_from: no matching parameter '" + p->name + "'");
    }
    p->value = src->value.template cast<T>();
  }
}

template class GcaNet<float>;
template class GcaNet<double>;
template void GcaNet<double>::copy_values_from<float>(const GcaNet<float>&);
template void GcaNet<float>::copy_values_from<double>(const GcaNet<double>&);

ModelCost count_costs(const ModelConfig& config, std::int64_t input_size, std::uint64_t seed) {
  ModelConfig c = config;
  c.input_size = input_size;
  const GcaNet<float> net = GcaNet<float>::build(c, seed);
  ModelCost cost;
  cost.params = net.count_params();
  Graph<float> g(false);
  ModelOutput<float> out;
  {
    CountingScope counting(cost.counter);
    out = net.forward(g.constant(Tensor<float>(Shape{1, 3, input_size, input_size})));
  }
  cost.macs = cost.counter.total(CostKind::kMac);
  const auto params = net.params().all();
  for (const LayerInfo& layer : out.layers) {
    LayerCost lc{layer.name, layer.output, 0, cost.counter.scope_total(layer.name)};
    for (const Parameter<float>* p : params) {
      if (p->name.size() > layer.name.size() && p->name.compare(0, layer.name.size(), layer.name) == 0 &&
          p->name[layer.name.size()] == '.') {
        lc.params += static_cast<std::int64_t>(p->value.size());
      }
    }
    cost.layers.push_back(std::move(lc));
  }
  return cost;
}

std::string format_summary(const ModelCost& cost) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "layer" << std::setw(22) << "output" << std::right << std::setw(12)
     << "params" << std::setw(16) << "MACs" << '\n';
  for (const LayerCost& l : cost.layers) {
    os << std::left << std::setw(28) << l.name << std::setw(22) << l.output.str() << std::right << std::setw(12)
       << l.params << std::setw(16) << l.macs << '\n';
  }
  os << std::left << std::setw(50) << "total" << std::right << std::setw(12) << cost.params << std::setw(16)
     << cost.macs << '\n';
  os << std::fixed << std::setprecision(3) << "params " << static_cast<double>(cost.params) / 1e6 << " M, FLOPs "
     << static_cast<double>(cost.macs) / 1e9 << " G (multiply-accumulates)\n";
  return os.str();
}

}  // namespace gcanet::model
