#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "glimpse/errors.hpp"
#include "glimpse/optim.hpp"
#include "glimpse/tensor.hpp"

namespace glimpse {

// A token sequence is a T×D tensor, one token per row. T=1 is the common
// case here (one fused token per modality); the operators stay valid for
// any T ≥ 1.

struct AttentionParams {
  Tensor w_q, w_k, w_v;  // each D×D
  int head_count = 1;

  int dim() const { return w_q.rows(); }

  void validate() const {
    const int d = dim();
    auto square = [d](const Tensor& w) {
      return w.rows() == d && w.cols() == d;
    };
    if (!square(w_q) || !square(w_k) || !square(w_v))
      throw config_error("attention projections must all be DxD");
    if (head_count <= 0 || d % head_count != 0)
      throw config_error("head count " + std::to_string(head_count) +
                         " does not divide embedding dim " + std::to_string(d));
  }
};

inline AttentionParams make_attention_params(ParameterSet& ps,
                                             const std::string& prefix,
                                             int dim, int heads,
                                             RngStream& rng) {
  AttentionParams p;
  p.w_q = ps.add(prefix + ".wq", glorot(dim, dim, rng));
  p.w_k = ps.add(prefix + ".wk", glorot(dim, dim, rng));
  p.w_v = ps.add(prefix + ".wv", glorot(dim, dim, rng));
  p.head_count = heads;
  p.validate();
  return p;
}

// softmax(Q K^T / sqrt(width)) V. Optionally exposes the attention weight
// matrix (post-softmax) for inspection.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k,
                                   const Tensor& v,
                                   Tensor* weights_out = nullptr) {
  if (q.cols() != k.cols())
    throw dim_error("attention: query width " + std::to_string(q.cols()) +
                    " vs key width " + std::to_string(k.cols()));
  if (k.rows() != v.rows())
    throw dim_error("attention: " + std::to_string(k.rows()) + " keys vs " +
                    std::to_string(v.rows()) + " values");
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(q.cols()));
  Tensor weights = softmax_rows(scores);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

// Multi-head cross-attention: queries from src, keys/values from tgt.
// Heads are width slices of the projected tensors, each attended at scale
// sqrt(D/H), then re-concatenated. No output projection.
inline Tensor cross_attention(const Tensor& src, const Tensor& tgt,
                              const AttentionParams& p,
                              std::vector<Tensor>* head_weights = nullptr) {
  p.validate();
  const int d = p.dim();
  if (src.cols() != d || tgt.cols() != d)
    throw dim_error("cross_attention: token width " +
                    std::to_string(src.cols()) + "/" +
                    std::to_string(tgt.cols()) + " vs projection dim " +
                    std::to_string(d));
  Tensor q = matmul(src, p.w_q);
  Tensor k = matmul(tgt, p.w_k);
  Tensor v = matmul(tgt, p.w_v);
  const int hd = d / p.head_count;
  std::vector<Tensor> heads;
  heads.reserve(p.head_count);
  for (int h = 0; h < p.head_count; ++h) {
    Tensor w;
    heads.push_back(scaled_dot_attention(
        slice_cols(q, h * hd, hd), slice_cols(k, h * hd, hd),
        slice_cols(v, h * hd, hd), head_weights ? &w : nullptr));
    if (head_weights) head_weights->push_back(w);
  }
  return heads.size() == 1 ? heads[0] : concat_cols(heads);
}

inline Tensor self_attention(const Tensor& x, const AttentionParams& p,
                             std::vector<Tensor>* head_weights = nullptr) {
  return cross_attention(x, x, p, head_weights);
}

// Baseline fusion: stack both token sequences and self-attend over the
// combined sequence.
inline Tensor self_attention_fusion(const Tensor& x_v, const Tensor& x_t,
                                    const AttentionParams& p) {
  if (x_v.cols() != x_t.cols())
    throw dim_error("self_attention_fusion: widths " +
                    std::to_string(x_v.cols()) + " vs " +
                    std::to_string(x_t.cols()));
  return self_attention(concat_rows({x_v, x_t}), p);
}

// ---------------------------------------------------------------------------
// Gating.
// ---------------------------------------------------------------------------

struct GateParams {
  // Input-conditioned: g = sigmoid([a ; b] W + bias), W is (2D)×D
  // (or (2D)×1 for a scalar gate). Free mode: g = sigmoid(raw) with raw a
  // learned 1×D (or 1×1) parameter independent of the inputs.
  Tensor w, bias;
  Tensor raw;
  bool scalar = false;
  bool free = false;
};

inline GateParams make_gate_params(ParameterSet& ps, const std::string& prefix,
                                   int dim, bool scalar, bool free,
                                   RngStream& rng) {
  GateParams g;
  g.scalar = scalar;
  g.free = free;
  const int out = scalar ? 1 : dim;
  if (free) {
    g.raw = ps.add(prefix + ".raw", Tensor::leaf(1, out, std::vector<double>(out, 0.0)));
  } else {
    g.w = ps.add(prefix + ".w", glorot(2 * dim, out, rng));
    g.bias = ps.add(prefix + ".b", Tensor::leaf(1, out, std::vector<double>(out, 0.0)));
  }
  return g;
}

inline Tensor gate_value(const Tensor& a, const Tensor& b,
                         const GateParams& g) {
  if (g.free) return sigmoid(g.raw);
  return sigmoid(add_rowvec(matmul(concat_cols({a, b}), g.w), g.bias));
}

// g ⊙ a + (1−g) ⊙ b for gate shapes 1×1 (scalar), 1×D (broadcast over rows)
// or T×D (per-row gates).
inline Tensor gated_combine(const Tensor& a, const Tensor& b, const Tensor& g) {
  check_same_shape(a, b, "gated_combine");
  Tensor one_minus = affine(g, -1.0, 1.0);
  if (g.size() == 1) return add(scale_by(a, g), scale_by(b, one_minus));
  if (g.rows() == a.rows() && g.cols() == a.cols())
    return add(mul(g, a), mul(one_minus, b));
  if (g.rows() == 1 && g.cols() == a.cols())
    return add(mul_rowvec(a, g), mul_rowvec(b, one_minus));
  throw dim_error("gated_combine: gate " + shape_str(g.rows(), g.cols()) +
                  " does not combine " + shape_str(a.rows(), a.cols()));
}

// ---------------------------------------------------------------------------
// Fusion operators.
// ---------------------------------------------------------------------------

enum class Combine { sum, mean, product, gated };

// Y = combine(src, CA(src, tgt)). `gate_override`, when given, replaces the
// computed gate (saturation and symmetry tests).
inline Tensor residual_ca(const Tensor& src, const Tensor& tgt,
                          const AttentionParams& p, Combine combine,
                          const GateParams* gate = nullptr,
                          const Tensor* gate_override = nullptr) {
  Tensor attended = cross_attention(src, tgt, p);
  switch (combine) {
    case Combine::sum: return add(src, attended);
    case Combine::mean: return scale(add(src, attended), 0.5);
    case Combine::product: return mul(src, attended);
    case Combine::gated: {
      if (!gate && !gate_override)
        throw config_error("residual_ca: gated combine needs gate parameters");
      Tensor g = gate_override ? *gate_override : gate_value(src, attended, *gate);
      return gated_combine(src, attended, g);
    }
  }
  throw config_error("residual_ca: unknown combine");
}

// Additive shortcut: the attended stream injected into the other modality.
inline Tensor cross_residual(const Tensor& x_v, const Tensor& x_t_attended) {
  check_same_shape(x_v, x_t_attended, "cross_residual");
  return add(x_v, x_t_attended);
}

// Both directions of cross-attention. Tie weights by passing the same
// params object for p_v and p_t.
inline std::pair<Tensor, Tensor> bi_cross_attention(const Tensor& x_v,
                                                    const Tensor& x_t,
                                                    const AttentionParams& p_v,
                                                    const AttentionParams& p_t) {
  return {cross_attention(x_v, x_t, p_v), cross_attention(x_t, x_v, p_t)};
}

enum class BiCombine { concat, sum, mean, product, gated, self_attention };

// Combines the two attended representations. `gate` is required for gated,
// `sa` for self_attention. concat widens to 2D; self_attention returns the
// stacked attended rows.
inline Tensor bicombine(const Tensor& x_v2, const Tensor& x_t2, BiCombine mode,
                        const GateParams* gate = nullptr,
                        const AttentionParams* sa = nullptr,
                        const Tensor* gate_override = nullptr) {
  check_same_shape(x_v2, x_t2, "bicombine");
  switch (mode) {
    case BiCombine::concat: return concat_cols({x_v2, x_t2});
    case BiCombine::sum: return add(x_v2, x_t2);
    case BiCombine::mean: return scale(add(x_v2, x_t2), 0.5);
    case BiCombine::product: return mul(x_v2, x_t2);
    case BiCombine::gated: {
      if (!gate && !gate_override)
        throw config_error("bicombine: gated mode needs gate parameters");
      Tensor g = gate_override ? *gate_override : gate_value(x_v2, x_t2, *gate);
      return gated_combine(x_v2, x_t2, g);
    }
    case BiCombine::self_attention: {
      if (!sa)
        throw config_error("bicombine: self_attention mode needs attention parameters");
      return self_attention(concat_rows({x_v2, x_t2}), *sa);
    }
  }
  throw config_error("bicombine: unknown mode");
}

// ---------------------------------------------------------------------------
// Transformer encoder layer (post-norm).
// ---------------------------------------------------------------------------

struct EncoderLayerParams {
  AttentionParams attn;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1×D
  Tensor ffn_w1, ffn_b1;                          // D×4D, 1×4D
  Tensor ffn_w2, ffn_b2;                          // 4D×D, 1×D
};

inline EncoderLayerParams make_encoder_layer(ParameterSet& ps,
                                             const std::string& prefix,
                                             int dim, int heads,
                                             RngStream& rng) {
  EncoderLayerParams lp;
  lp.attn = make_attention_params(ps, prefix + ".attn", dim, heads, rng);
  auto ones = [dim] { return std::vector<double>(dim, 1.0); };
  auto zeros = [](int n) { return std::vector<double>(n, 0.0); };
  lp.ln1_gain = ps.add(prefix + ".ln1.g", Tensor::leaf(1, dim, ones()));
  lp.ln1_bias = ps.add(prefix + ".ln1.b", Tensor::leaf(1, dim, zeros(dim)));
  lp.ln2_gain = ps.add(prefix + ".ln2.g", Tensor::leaf(1, dim, ones()));
  lp.ln2_bias = ps.add(prefix + ".ln2.b", Tensor::leaf(1, dim, zeros(dim)));
  const int hidden = 4 * dim;
  lp.ffn_w1 = ps.add(prefix + ".ffn.w1", glorot(dim, hidden, rng));
  lp.ffn_b1 = ps.add(prefix + ".ffn.b1", Tensor::leaf(1, hidden, zeros(hidden)));
  lp.ffn_w2 = ps.add(prefix + ".ffn.w2", glorot(hidden, dim, rng));
  lp.ffn_b2 = ps.add(prefix + ".ffn.b2", Tensor::leaf(1, dim, zeros(dim)));
  return lp;
}

// One layer: attention + residual + layer norm, then a 4D-hidden
// feed-forward + residual + layer norm. `context` selects the key/value
// source; pass x itself for the self-attention placement.
inline Tensor encoder_block(const Tensor& x, const Tensor& context,
                            const EncoderLayerParams& lp) {
  Tensor attended = cross_attention(x, context, lp.attn);
  Tensor h = layer_norm_rows(add(x, attended), lp.ln1_gain, lp.ln1_bias);
  Tensor f = matmul(gelu(add_rowvec(matmul(h, lp.ffn_w1), lp.ffn_b1)), lp.ffn_w2);
  return layer_norm_rows(add(h, add_rowvec(f, lp.ffn_b2)), lp.ln2_gain,
                         lp.ln2_bias);
}

inline Tensor encoder_block(const Tensor& x, const EncoderLayerParams& lp) {
  return encoder_block(x, x, lp);
}

// ---------------------------------------------------------------------------
// Fusion strategy catalogue.
// ---------------------------------------------------------------------------

enum class FusionVariant {
  sa_baseline,
  ca_q_visual,
  ca_q_text,
  residual_ca_sum,
  residual_ca_mean,
  residual_ca_product,
  residual_ca_gated,
  cross_residual_add,
  gated_cross_residual,
  bi_ca_concat_independent,
  bi_ca_concat_shared,
  bi_ca_sum,
  bi_ca_mean,
  bi_ca_product,
  bi_ca_gated,
  bi_ca_sa,
};

inline const std::vector<std::pair<FusionVariant, std::string>>&
fusion_variant_names() {
  static const std::vector<std::pair<FusionVariant, std::string>> table = {
      {FusionVariant::sa_baseline, "sa_baseline"},
      {FusionVariant::ca_q_visual, "ca_q_visual"},
      {FusionVariant::ca_q_text, "ca_q_text"},
      {FusionVariant::residual_ca_sum, "residual_ca_sum"},
      {FusionVariant::residual_ca_mean, "residual_ca_mean"},
      {FusionVariant::residual_ca_product, "residual_ca_product"},
      {FusionVariant::residual_ca_gated, "residual_ca_gated"},
      {FusionVariant::cross_residual_add, "cross_residual"},
      {FusionVariant::gated_cross_residual, "gated_cross_residual"},
      {FusionVariant::bi_ca_concat_independent, "bi_ca_concat_independent"},
      {FusionVariant::bi_ca_concat_shared, "bi_ca_concat_shared"},
      {FusionVariant::bi_ca_sum, "bi_ca_sum"},
      {FusionVariant::bi_ca_mean, "bi_ca_mean"},
      {FusionVariant::bi_ca_product, "bi_ca_product"},
      {FusionVariant::bi_ca_gated, "bi_ca_gated"},
      {FusionVariant::bi_ca_sa, "bi_ca_sa"},
  };
  return table;
}

inline std::string to_string(FusionVariant v) {
  for (const auto& [fv, name] : fusion_variant_names())
    if (fv == v) return name;
  throw config_error("unknown fusion variant");
}

inline FusionVariant fusion_variant_from_string(const std::string& s) {
  for (const auto& [fv, name] : fusion_variant_names())
    if (name == s) return fv;
  throw config_error("unknown fusion variant '" + s + "'");
}

inline bool fusion_doubles_width(FusionVariant v) {
  return v == FusionVariant::bi_ca_concat_independent ||
         v == FusionVariant::bi_ca_concat_shared;
}

inline bool fusion_uses_gate(FusionVariant v) {
  return v == FusionVariant::residual_ca_gated ||
         v == FusionVariant::gated_cross_residual ||
         v == FusionVariant::bi_ca_gated;
}

inline bool fusion_shares_directions(FusionVariant v) {
  return v == FusionVariant::bi_ca_concat_shared;
}

inline bool fusion_is_bidirectional(FusionVariant v) {
  switch (v) {
    case FusionVariant::bi_ca_concat_independent:
    case FusionVariant::bi_ca_concat_shared:
    case FusionVariant::bi_ca_sum:
    case FusionVariant::bi_ca_mean:
    case FusionVariant::bi_ca_product:
    case FusionVariant::bi_ca_gated:
    case FusionVariant::bi_ca_sa:
      return true;
    default:
      return false;
  }
}

// Parameters for one fusion stage, allocated per variant.
struct FusionParams {
  FusionVariant variant = FusionVariant::bi_ca_gated;
  std::optional<AttentionParams> ca;        // unidirectional variants
  std::optional<AttentionParams> bi_v;      // Q = visual direction
  std::optional<AttentionParams> bi_t;      // Q = text direction
  std::optional<AttentionParams> sa;        // sa_baseline / bi_ca_sa combiner
  std::optional<GateParams> gate;
};

inline FusionParams make_fusion_params(ParameterSet& ps, FusionVariant variant,
                                       int dim, int heads, bool scalar_gate,
                                       bool free_gate, RngStream& rng) {
  FusionParams fp;
  fp.variant = variant;
  switch (variant) {
    case FusionVariant::sa_baseline:
      fp.sa = make_attention_params(ps, "fusion.sa", dim, heads, rng);
      break;
    case FusionVariant::ca_q_visual:
    case FusionVariant::ca_q_text:
    case FusionVariant::residual_ca_sum:
    case FusionVariant::residual_ca_mean:
    case FusionVariant::residual_ca_product:
    case FusionVariant::cross_residual_add:
      fp.ca = make_attention_params(ps, "fusion.ca", dim, heads, rng);
      break;
    case FusionVariant::residual_ca_gated:
    case FusionVariant::gated_cross_residual:
      fp.ca = make_attention_params(ps, "fusion.ca", dim, heads, rng);
      fp.gate = make_gate_params(ps, "fusion.gate", dim, scalar_gate, free_gate, rng);
      break;
    case FusionVariant::bi_ca_concat_shared:
      fp.bi_v = make_attention_params(ps, "fusion.bica.shared", dim, heads, rng);
      fp.bi_t = fp.bi_v;  // tied
      break;
    case FusionVariant::bi_ca_concat_independent:
    case FusionVariant::bi_ca_sum:
    case FusionVariant::bi_ca_mean:
    case FusionVariant::bi_ca_product:
    case FusionVariant::bi_ca_gated:
    case FusionVariant::bi_ca_sa:
      fp.bi_v = make_attention_params(ps, "fusion.bica.v", dim, heads, rng);
      fp.bi_t = make_attention_params(ps, "fusion.bica.t", dim, heads, rng);
      if (variant == FusionVariant::bi_ca_gated)
        fp.gate = make_gate_params(ps, "fusion.gate", dim, scalar_gate, free_gate, rng);
      if (variant == FusionVariant::bi_ca_sa)
        fp.sa = make_attention_params(ps, "fusion.bicomb.sa", dim, heads, rng);
      break;
  }
  return fp;
}

// Applies one catalogue entry to a (visual, text) token pair. Output is
// T×D (pooling left to the caller), or T×2D for the concat variants, or
// stacked rows for the self-attention forms.
inline Tensor apply_fusion(const FusionParams& fp, const Tensor& x_v,
                           const Tensor& x_t,
                           const Tensor* gate_override = nullptr) {
  switch (fp.variant) {
    case FusionVariant::sa_baseline:
      return self_attention_fusion(x_v, x_t, *fp.sa);
    case FusionVariant::ca_q_visual:
      return cross_attention(x_v, x_t, *fp.ca);
    case FusionVariant::ca_q_text:
      return cross_attention(x_t, x_v, *fp.ca);
    case FusionVariant::residual_ca_sum:
      return residual_ca(x_t, x_v, *fp.ca, Combine::sum);
    case FusionVariant::residual_ca_mean:
      return residual_ca(x_t, x_v, *fp.ca, Combine::mean);
    case FusionVariant::residual_ca_product:
      return residual_ca(x_t, x_v, *fp.ca, Combine::product);
    case FusionVariant::residual_ca_gated:
      return residual_ca(x_t, x_v, *fp.ca, Combine::gated,
                         fp.gate ? &*fp.gate : nullptr, gate_override);
    case FusionVariant::cross_residual_add:
      return cross_residual(x_v, cross_attention(x_t, x_v, *fp.ca));
    case FusionVariant::gated_cross_residual: {
      Tensor attended = cross_attention(x_t, x_v, *fp.ca);
      Tensor g = gate_override ? *gate_override
                               : gate_value(x_v, attended, *fp.gate);
      return gated_combine(x_v, attended, g);
    }
    case FusionVariant::bi_ca_concat_independent:
    case FusionVariant::bi_ca_concat_shared: {
      auto [v2, t2] = bi_cross_attention(x_v, x_t, *fp.bi_v, *fp.bi_t);
      return bicombine(v2, t2, BiCombine::concat);
    }
    case FusionVariant::bi_ca_sum:
    case FusionVariant::bi_ca_mean:
    case FusionVariant::bi_ca_product:
    case FusionVariant::bi_ca_gated:
    case FusionVariant::bi_ca_sa: {
      auto [v2, t2] = bi_cross_attention(x_v, x_t, *fp.bi_v, *fp.bi_t);
      BiCombine mode = BiCombine::sum;
      if (fp.variant == FusionVariant::bi_ca_mean) mode = BiCombine::mean;
      if (fp.variant == FusionVariant::bi_ca_product) mode = BiCombine::product;
      if (fp.variant == FusionVariant::bi_ca_gated) mode = BiCombine::gated;
      if (fp.variant == FusionVariant::bi_ca_sa) mode = BiCombine::self_attention;
      return bicombine(v2, t2, mode, fp.gate ? &*fp.gate : nullptr,
                       fp.sa ? &*fp.sa : nullptr, gate_override);
    }
  }
  throw config_error("apply_fusion: unknown variant");
}

}  // namespace glimpse
