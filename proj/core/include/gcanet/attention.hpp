#pragma once

#include <cstdint>
#include <string>

#include "gcanet/ops.hpp"
#include "gcanet/params.hpp"

namespace gcanet::attn {

// ------------------------------------------------------------------ DSA
//
// Depth-wise self-attention. With X' the N x C token matrix (N = H*W):
//   Q = X'Wq, K = X'Wk, V = X'Wv
//   g_i = <q_i/|q_i|, k_i/|k_i|>         one score per channel, in [-1, 1]
//   A   = softmax(alpha * [g_1..g_C])   1 x C
//   out = (A broadcast over N  (.)  V) Wo
// Cost is linear in N: 4C^2N for the four projections plus 2CN for the
// score products and the channel weighting.

template <class T>
struct DsaParams {
  Parameter<T>* wq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* wv = nullptr;
  Parameter<T>* wo = nullptr;
  Parameter<T>* alpha = nullptr;

  std::int64_t channels() const { return wq->value.shape().h; }
};

/// Registers "<prefix>.wq" ... "<prefix>.alpha"; matrices C x C, alpha = 1.
template <class T>
DsaParams<T> make_dsa(ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
                      std::uint64_t seed);

template <class T>
struct DsaTrace {
  Tensor<T> scores;     // [B, 1, C, 1], the g_i
  Tensor<T> attention;  // [B, 1, C, 1], softmax(alpha * g)
};

template <class T>
Var<T> dsa_forward(const Var<T>& x, const DsaParams<T>& p, DsaTrace<T>* trace = nullptr);

/// Multiply-accumulates of one DSA pass over N tokens of C channels.
constexpr std::int64_t dsa_flops(std::int64_t channels, std::int64_t tokens) {
  return 4 * channels * channels * tokens + 2 * channels * tokens;
}

// ------------------------------------------------------------------ MSA
//
// Standard scaled dot-product multi-head self-attention over the N spatial
// tokens, the quadratic baseline.

template <class T>
struct MsaParams {
  Parameter<T>* wq = nullptr;
  Parameter<T>* wk = nullptr;
  Parameter<T>* wv = nullptr;
  Parameter<T>* wo = nullptr;
  int heads = 1;

  std::int64_t channels() const { return wq->value.shape().h; }
};

template <class T>
MsaParams<T> make_msa(ParameterStore<T>& store, const std::string& prefix, std::int64_t channels, int heads,
                      std::uint64_t seed);

template <class T>
struct MsaTrace {
  Tensor<T> attention;  // [B, heads, N, N], rows sum to 1
};

template <class T>
Var<T> msa_forward(const Var<T>& x, const MsaParams<T>& p, MsaTrace<T>* trace = nullptr);

constexpr std::int64_t msa_flops(std::int64_t channels, std::int64_t tokens) {
  return 4 * channels * channels * tokens + 2 * tokens * tokens * channels;
}

// ------------------------------------------------------------------ CRA
//
// Channel reference attention. Pooled low-level keys and high-level/global
// queries (GAP -> 1x1 conv -> ReLU, all projected to C_l channels) form
// per-head outer products A1 = Qh^T Kl and A2 = Qg^T Kl. Each row of
// A_c = softmax((A1 + A2) / tau) is a distribution over key channels, and
// output channel a of a head is sum_b A_c[a][b] * F_l[b]. The result is
// projected by a 1x1 conv and added back to F_l. Heads are contiguous channel
// blocks, so A_c is block diagonal.

template <class T>
struct CraParams {
  Parameter<T>* proj_l_w = nullptr;
  Parameter<T>* proj_l_b = nullptr;
  Parameter<T>* proj_h_w = nullptr;
  Parameter<T>* proj_h_b = nullptr;
  Parameter<T>* proj_g_w = nullptr;
  Parameter<T>* proj_g_b = nullptr;
  Parameter<T>* proj_out_w = nullptr;
  Parameter<T>* proj_out_b = nullptr;
  Parameter<T>* tau = nullptr;
  int heads = 1;

  std::int64_t channels() const { return proj_l_w->value.shape().n; }
};

/// Throws ConfigError unless low_channels is divisible by heads.
template <class T>
CraParams<T> make_cra(ParameterStore<T>& store, const std::string& prefix, std::int64_t low_channels,
                      std::int64_t high_channels, std::int64_t global_channels, int heads, std::uint64_t seed);

template <class T>
struct CraTrace {
  Tensor<T> a1;         // [B, heads, d, d]
  Tensor<T> a2;         // [B, heads, d, d]
  Tensor<T> attention;  // [B, heads, d, d], A_c
};

template <class T>
Var<T> cra_forward(const Var<T>& f_low, const Var<T>& f_high, const Var<T>& f_global, const CraParams<T>& p,
                   CraTrace<T>* trace = nullptr);

}  // namespace gcanet::attn
