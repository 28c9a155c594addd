#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "glimpse/fusion.hpp"
#include "glimpse/model.hpp"
#include "glimpse/tensor.hpp"
#include "glimpse/world.hpp"

namespace glimpse {

// Central finite differences against the recorded backward pass. The
// numeric side only ever calls forward evaluations, so it stays an
// independent oracle for the analytic gradients.

struct GradCheckResult {
  std::string name;
  bool passed = false;
  double worst_error = 0.0;   // scaled error, see below
  std::string detail;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: when non-empty, checks whose name contains this string get
  // their analytic gradient perturbed, which must surface as a failure.
  std::string inject_fault;
};

namespace detail {

// |analytic − numeric| scaled by max(1, |analytic|, |numeric|).
inline double scaled_error(double analytic, double numeric) {
  const double denom =
      std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Checks d(scalar_fn)/d(input) for every entry of every listed leaf.
// `scalar_fn` must rebuild the graph from the leaves on each call.
inline GradCheckResult check_gradients(
    const std::string& name, const std::vector<Tensor>& leaves,
    const std::function<Tensor()>& scalar_fn,
    const GradCheckOptions& opt = {}) {
  GradCheckResult res;
  res.name = name;

  for (const Tensor& leaf : leaves) leaf.data_ptr()->grad.clear();
  Tensor out = scalar_fn();
  if (out.size() != 1)
    throw contract_error("gradient check '" + name + "': non-scalar output");
  backward(out);

  const bool faulted =
      !opt.inject_fault.empty() && name.find(opt.inject_fault) != std::string::npos;

  double worst = 0.0;
  std::string detail;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& leaf = leaves[li];
    if (!leaf.requires_grad()) continue;
    // a leaf the output never touched has an implicit zero gradient
    const std::vector<double> grad =
        leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0);
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      auto& v = const_cast<Tensor&>(leaf).mut_values();
      const double saved = v[i];
      v[i] = saved + opt.step;
      const double up = scalar_fn().item();
      v[i] = saved - opt.step;
      const double down = scalar_fn().item();
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      double analytic = grad[i];
      if (faulted) analytic += 0.5 * std::max(1.0, std::abs(analytic));
      const double err = detail::scaled_error(analytic, numeric);
      if (err > worst) {
        worst = err;
        detail = "leaf " + std::to_string(li) + " entry " + std::to_string(i) +
                 ": analytic " + std::to_string(analytic) + " vs numeric " +
                 std::to_string(numeric);
      }
    }
  }
  res.worst_error = worst;
  res.passed = worst < opt.tolerance;
  res.detail = detail;
  return res;
}

namespace detail {

inline Tensor random_leaf(int rows, int cols, RngStream& rng,
                          bool requires_grad = true) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.gaussian(0.0, 0.8);
  return Tensor::leaf(rows, cols, std::move(v), requires_grad);
}

// Fixed random cogradient projection: sum(out ⊙ R) exposes every output
// entry with a generic weight, unlike a plain sum.
inline Tensor project_to_scalar(const Tensor& out, const Tensor& proj) {
  return sum_all(mul(out, proj));
}

}  // namespace detail

// Finite-difference suite over every primitive operator, every fusion
// operator, and the full model loss under each fusion variant at tiny
// dimensions.
inline std::vector<GradCheckResult> run_gradcheck_suite(
    int dim = 8, int heads = 2, const GradCheckOptions& opt = {},
    std::uint64_t seed = 20240901) {
  std::vector<GradCheckResult> results;
  RngStream rng = RngStream::substream(seed, "gradcheck");

  auto proj_for = [&rng](int rows, int cols) {
    return detail::random_leaf(rows, cols, rng, false);
  };

  // --- primitive tensor ops ---
  {
    Tensor a = detail::random_leaf(3, 4, rng);
    Tensor b = detail::random_leaf(4, 2, rng);
    Tensor p = proj_for(3, 2);
    results.push_back(check_gradients(
        "op.matmul", {a, b}, [&] { return detail::project_to_scalar(matmul(a, b), p); },
        opt));
  }
  {
    Tensor x = detail::random_leaf(3, 4, rng);
    Tensor p = proj_for(4, 3);
    results.push_back(check_gradients(
        "op.transpose", {x},
        [&] { return detail::project_to_scalar(transpose(x), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, 5, rng);
    Tensor p = proj_for(3, 5);
    results.push_back(check_gradients(
        "op.softmax_rows", {x},
        [&] { return detail::project_to_scalar(softmax_rows(x), p); }, opt));
  }
  for (auto [kind, tag] : {std::pair{ElemOp::add, "add"},
                           std::pair{ElemOp::sub, "sub"},
                           std::pair{ElemOp::mul, "mul"}}) {
    Tensor a = detail::random_leaf(2, 3, rng);
    Tensor b = detail::random_leaf(2, 3, rng);
    Tensor p = proj_for(2, 3);
    results.push_back(check_gradients(
        std::string("op.elementwise.") + tag, {a, b},
        [&, kind = kind] {
          return detail::project_to_scalar(elementwise(a, b, kind), p);
        },
        opt));
  }
  {
    Tensor a = detail::random_leaf(2, 3, rng);
    Tensor b = detail::random_leaf(2, 2, rng);
    Tensor p = proj_for(2, 5);
    results.push_back(check_gradients(
        "op.concat_cols", {a, b},
        [&] { return detail::project_to_scalar(concat_cols({a, b}), p); }, opt));
  }
  {
    Tensor a = detail::random_leaf(2, 3, rng);
    Tensor b = detail::random_leaf(1, 3, rng);
    Tensor p = proj_for(3, 3);
    results.push_back(check_gradients(
        "op.concat_rows", {a, b},
        [&] { return detail::project_to_scalar(concat_rows({a, b}), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, 6, rng);
    Tensor p = proj_for(3, 2);
    results.push_back(check_gradients(
        "op.slice_cols", {x},
        [&] { return detail::project_to_scalar(slice_cols(x, 2, 2), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, 4, rng);
    Tensor b = detail::random_leaf(1, 4, rng);
    Tensor p = proj_for(3, 4);
    results.push_back(check_gradients(
        "op.add_rowvec", {x, b},
        [&] { return detail::project_to_scalar(add_rowvec(x, b), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, 4, rng);
    Tensor v = detail::random_leaf(1, 4, rng);
    Tensor p = proj_for(3, 4);
    results.push_back(check_gradients(
        "op.mul_rowvec", {x, v},
        [&] { return detail::project_to_scalar(mul_rowvec(x, v), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(2, 4, rng);
    Tensor p = proj_for(2, 4);
    results.push_back(check_gradients(
        "op.affine", {x},
        [&] { return detail::project_to_scalar(affine(x, -1.7, 0.3), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(2, 4, rng);
    Tensor s = detail::random_leaf(1, 1, rng);
    Tensor p = proj_for(2, 4);
    results.push_back(check_gradients(
        "op.scale_by", {x, s},
        [&] { return detail::project_to_scalar(scale_by(x, s), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(2, 5, rng);
    Tensor p = proj_for(2, 5);
    results.push_back(check_gradients(
        "op.sigmoid", {x},
        [&] { return detail::project_to_scalar(sigmoid(x), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(2, 5, rng);
    Tensor p = proj_for(2, 5);
    results.push_back(check_gradients(
        "op.gelu", {x}, [&] { return detail::project_to_scalar(gelu(x), p); },
        opt));
  }
  {
    Tensor x = detail::random_leaf(4, 3, rng);
    Tensor p = proj_for(1, 3);
    results.push_back(check_gradients(
        "op.mean_rows", {x},
        [&] { return detail::project_to_scalar(mean_rows(x), p); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, 3, rng);
    results.push_back(
        check_gradients("op.sum_all", {x}, [&] { return sum_all(x); }, opt));
  }
  {
    Tensor x = detail::random_leaf(3, dim, rng);
    Tensor g = detail::random_leaf(1, dim, rng);
    Tensor b = detail::random_leaf(1, dim, rng);
    Tensor p = proj_for(3, dim);
    results.push_back(check_gradients(
        "op.layer_norm_rows", {x, g, b},
        [&] { return detail::project_to_scalar(layer_norm_rows(x, g, b), p); },
        opt));
  }
  {
    Tensor x = detail::random_leaf(4, 5, rng);
    const std::vector<int> targets{1, 0, 4, 2};
    results.push_back(check_gradients(
        "op.cross_entropy_mean", {x},
        [&] { return cross_entropy_mean(x, targets); }, opt));
  }

  // --- attention / fusion operators ---
  auto make_attn = [&](int d, int h) {
    AttentionParams p;
    p.w_q = detail::random_leaf(d, d, rng);
    p.w_k = detail::random_leaf(d, d, rng);
    p.w_v = detail::random_leaf(d, d, rng);
    p.head_count = h;
    return p;
  };
  auto attn_leaves = [](const AttentionParams& p) {
    return std::vector<Tensor>{p.w_q, p.w_k, p.w_v};
  };

  {
    Tensor q = detail::random_leaf(2, dim, rng);
    Tensor k = detail::random_leaf(3, dim, rng);
    Tensor v = detail::random_leaf(3, dim, rng);
    Tensor p = proj_for(2, dim);
    results.push_back(check_gradients(
        "fusion.scaled_dot_attention", {q, k, v},
        [&] { return detail::project_to_scalar(scaled_dot_attention(q, k, v), p); },
        opt));
  }
  {
    AttentionParams ap = make_attn(dim, heads);
    Tensor src = detail::random_leaf(2, dim, rng);
    Tensor tgt = detail::random_leaf(3, dim, rng);
    Tensor p = proj_for(2, dim);
    auto leaves = attn_leaves(ap);
    leaves.push_back(src);
    leaves.push_back(tgt);
    results.push_back(check_gradients(
        "fusion.cross_attention", leaves,
        [&] { return detail::project_to_scalar(cross_attention(src, tgt, ap), p); },
        opt));
  }
  {
    AttentionParams ap = make_attn(dim, heads);
    Tensor xv = detail::random_leaf(1, dim, rng);
    Tensor xt = detail::random_leaf(1, dim, rng);
    Tensor p = proj_for(2, dim);
    auto leaves = attn_leaves(ap);
    leaves.push_back(xv);
    leaves.push_back(xt);
    results.push_back(check_gradients(
        "fusion.self_attention_fusion", leaves,
        [&] {
          return detail::project_to_scalar(self_attention_fusion(xv, xt, ap), p);
        },
        opt));
  }
  for (auto [mode, tag] : {std::pair{Combine::sum, "sum"},
                           std::pair{Combine::mean, "mean"},
                           std::pair{Combine::product, "product"}}) {
    AttentionParams ap = make_attn(dim, heads);
    Tensor src = detail::random_leaf(2, dim, rng);
    Tensor tgt = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, dim);
    auto leaves = attn_leaves(ap);
    leaves.push_back(src);
    leaves.push_back(tgt);
    results.push_back(check_gradients(
        std::string("fusion.residual_ca.") + tag, leaves,
        [&, mode = mode] {
          return detail::project_to_scalar(residual_ca(src, tgt, ap, mode), p);
        },
        opt));
  }
  {
    AttentionParams ap = make_attn(dim, heads);
    GateParams gate;
    gate.w = detail::random_leaf(2 * dim, dim, rng);
    gate.bias = detail::random_leaf(1, dim, rng);
    Tensor src = detail::random_leaf(2, dim, rng);
    Tensor tgt = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, dim);
    auto leaves = attn_leaves(ap);
    leaves.insert(leaves.end(), {gate.w, gate.bias, src, tgt});
    results.push_back(check_gradients(
        "fusion.residual_ca.gated", leaves,
        [&] {
          return detail::project_to_scalar(
              residual_ca(src, tgt, ap, Combine::gated, &gate), p);
        },
        opt));
  }
  {
    Tensor a = detail::random_leaf(2, dim, rng);
    Tensor b = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, dim);
    results.push_back(check_gradients(
        "fusion.cross_residual", {a, b},
        [&] { return detail::project_to_scalar(cross_residual(a, b), p); }, opt));
  }
  {
    AttentionParams pv = make_attn(dim, heads);
    AttentionParams pt = make_attn(dim, heads);
    Tensor xv = detail::random_leaf(1, dim, rng);
    Tensor xt = detail::random_leaf(1, dim, rng);
    Tensor p = proj_for(1, dim);
    std::vector<Tensor> leaves = {pv.w_q, pv.w_k, pv.w_v, pt.w_q, pt.w_k,
                                  pt.w_v, xv,    xt};
    results.push_back(check_gradients(
        "fusion.bi_cross_attention", leaves,
        [&] {
          auto [v2, t2] = bi_cross_attention(xv, xt, pv, pt);
          return detail::project_to_scalar(add(v2, t2), p);
        },
        opt));
  }
  for (auto [mode, tag] : {std::pair{BiCombine::concat, "concat"},
                           std::pair{BiCombine::sum, "sum"},
                           std::pair{BiCombine::mean, "mean"},
                           std::pair{BiCombine::product, "product"}}) {
    Tensor a = detail::random_leaf(2, dim, rng);
    Tensor b = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, mode == BiCombine::concat ? 2 * dim : dim);
    results.push_back(check_gradients(
        std::string("fusion.bicombine.") + tag, {a, b},
        [&, mode = mode] {
          return detail::project_to_scalar(bicombine(a, b, mode), p);
        },
        opt));
  }
  {
    GateParams gate;
    gate.w = detail::random_leaf(2 * dim, dim, rng);
    gate.bias = detail::random_leaf(1, dim, rng);
    Tensor a = detail::random_leaf(2, dim, rng);
    Tensor b = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, dim);
    results.push_back(check_gradients(
        "fusion.bicombine.gated", {gate.w, gate.bias, a, b},
        [&] {
          return detail::project_to_scalar(
              bicombine(a, b, BiCombine::gated, &gate), p);
        },
        opt));
  }
  {
    AttentionParams sa = make_attn(dim, heads);
    Tensor a = detail::random_leaf(1, dim, rng);
    Tensor b = detail::random_leaf(1, dim, rng);
    Tensor p = proj_for(2, dim);
    auto leaves = attn_leaves(sa);
    leaves.insert(leaves.end(), {a, b});
    results.push_back(check_gradients(
        "fusion.bicombine.self_attention", leaves,
        [&] {
          return detail::project_to_scalar(
              bicombine(a, b, BiCombine::self_attention, nullptr, &sa), p);
        },
        opt));
  }
  {
    ParameterSet ps;
    EncoderLayerParams lp = make_encoder_layer(ps, "enc", dim, heads, rng);
    Tensor x = detail::random_leaf(2, dim, rng);
    Tensor ctx = detail::random_leaf(2, dim, rng);
    Tensor p = proj_for(2, dim);
    std::vector<Tensor> leaves = {x, ctx};
    for (const auto& n : ps.names()) leaves.push_back(ps.get(n));
    results.push_back(check_gradients(
        "fusion.encoder_block.self", leaves,
        [&] { return detail::project_to_scalar(encoder_block(x, lp), p); }, opt));
    results.push_back(check_gradients(
        "fusion.encoder_block.cross", leaves,
        [&] { return detail::project_to_scalar(encoder_block(x, ctx, lp), p); },
        opt));
  }
  {
    Tensor x = detail::random_leaf(1, 3 * 4, rng);
    Tensor w = detail::random_leaf(3 * 4, dim, rng);
    Tensor b = detail::random_leaf(1, dim, rng);
    Tensor p = proj_for(1, dim);
    results.push_back(check_gradients(
        "history.project", {x, w, b},
        [&] { return detail::project_to_scalar(project_history(x, w, &b), p); },
        opt));
  }

  // --- full model loss per fusion variant ---
  for (const auto& [variant, name] : fusion_variant_names()) {
    ModelConfig cfg;
    cfg.embed_dim = dim;
    cfg.layers = 1;
    cfg.heads = heads;
    cfg.history_len = 3;
    cfg.txt_dim = 4;
    cfg.class_count = 3;
    cfg.modalities = {true, true, true};
    cfg.fusion = variant;
    cfg.keyframe = KeyframePolicy::none;
    cfg.corruption = {};
    Model m = build_model(cfg, make_vocabulary(cfg.class_count), seed + 17);

    std::vector<Sample> batch(2);
    for (int i = 0; i < 2; ++i) {
      batch[i].rgb = detail::random_leaf(1, dim, rng, false);
      batch[i].depth = detail::random_leaf(1, dim, rng, false);
      batch[i].history = {static_cast<int>(rng.uniform_int(0, 2)),
                          static_cast<int>(rng.uniform_int(0, 2))};
      batch[i].target = static_cast<int>(rng.uniform_int(0, 2));
    }
    std::vector<int> targets{batch[0].target, batch[1].target};
    std::vector<Tensor> leaves;
    for (const auto& pname : m.params.names()) leaves.push_back(m.params.get(pname));

    results.push_back(check_gradients(
        "model.loss." + name, leaves,
        [&] {
          Tensor logits = forward_batch(m, batch, Mode::train);
          return cross_entropy(logits, targets);
        },
        opt));
  }

  return results;
}

}  // namespace glimpse
