// SPDX-License-Identifier: Apache-2.0
#include "tokentm/explainers.hpp"

#include <algorithm>
#include <cmath>

#include "tokentm/error.hpp"

namespace tokentm {

const char* method_name(Method method) {
  switch (method) {
    case Method::kTokenTM: return "tokentm";
    case Method::kRawAttention: return "raw_attention";
    case Method::kRollout: return "rollout";
    case Method::kEq8Baseline: return "eq8_baseline";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kTokenTM, Method::kRawAttention, Method::kRollout, Method::kEq8Baseline}) {
    if (name == method_name(m)) return m;
  }
  throw InputError("unknown method '" + name + "' (expected tokentm, raw_attention, rollout or eq8_baseline)");
}

double token_length(std::span<const double> token) {
  double acc = 0.0;
  for (double v : token) acc += v * v;
  return std::sqrt(acc);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: length mismatch");
  const double la = token_length(a), lb = token_length(b);
  if (la == 0.0 || lb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (la * lb), -1.0, 1.0);
}

std::vector<double> necc(const Tensor& reference, const Tensor& transformed) {
  if (reference.shape() != transformed.shape() || reference.rank() != 2) {
    throw DimensionError("necc: token matrices differ in shape");
  }
  const std::size_t n = reference.rows();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = cosine(reference.row(i), transformed.row(i));
  const double peak = n ? *std::max_element(out.begin(), out.end()) : 0.0;
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

TransformWeights transformation_weights(const Tensor& reference, const Tensor& transformed,
                                        const ExplainerConfig& config) {
  if (reference.shape() != transformed.shape() || reference.rank() != 2) {
    throw DimensionError("transformation_weights: token matrices differ in shape");
  }
  const std::size_t n = reference.rows();
  TransformWeights out;
  out.length_ratio.assign(n, 1.0);
  out.necc.assign(n, 1.0);
  if (config.use_length) {
    for (std::size_t i = 0; i < n; ++i) {
      const double original = token_length(reference.row(i));
      const double changed = token_length(transformed.row(i));
      if (original > 0.0) {
        out.length_ratio[i] = changed / original;
      } else {
        out.length_ratio[i] = changed > 0.0 ? config.length_ratio_cap : 0.0;
      }
    }
  }
  if (config.use_necc) out.necc = necc(reference, transformed);
  out.w.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.w[i] = out.length_ratio[i] * out.necc[i];
  return out;
}

Tensor update_map_mhsa(const LayerTrace& trace, std::span<const Tensor> grads, const ExplainerConfig& config) {
  if (trace.kind != SublayerKind::kMhsa) throw DimensionError("update_map_mhsa: trace is not an MHSA sublayer");
  if (grads.size() != trace.heads.size() || trace.heads.empty()) {
    throw DimensionError("update_map_mhsa: " + std::to_string(grads.size()) + " gradient maps for " +
                         std::to_string(trace.heads.size()) + " heads");
  }
  const std::size_t n = trace.reference.rows();
  Tensor mean({n, n});
  for (std::size_t h = 0; h < trace.heads.size(); ++h) {
    const HeadTrace& head = trace.heads[h];
    const TransformWeights tw = transformation_weights(trace.reference, head.transformed, config);
    const Tensor weighted = scale_columns(head.attention, tw.w);
    mean = add(mean, hadamard(positive_part(grads[h]), weighted));
  }
  return add(Tensor::identity(n), scale(mean, 1.0 / static_cast<double>(trace.heads.size())));
}

Tensor update_map_ffn(const LayerTrace& trace, const ExplainerConfig& config) {
  if (trace.kind != SublayerKind::kFfn) throw DimensionError("update_map_ffn: trace is not an FFN sublayer");
  const TransformWeights tw = transformation_weights(trace.reference, trace.transformed, config);
  return add(Tensor::identity(tw.w.size()), Tensor::diagonal(tw.w));
}

ContributionMap initial_contribution(const Tensor& input_tokens, const ExplainerConfig& config) {
  if (input_tokens.rank() != 2) throw DimensionError("initial_contribution: tokens must be a matrix");
  ContributionMap out;
  out.C = config.use_length ? Tensor::diagonal(row_norms(input_tokens)) : Tensor::identity(input_tokens.rows());
  return out;
}

namespace {

std::size_t applied_depth(std::size_t n_sublayers, const ExplainerConfig& config) {
  return config.depth_limit ? std::min(*config.depth_limit, n_sublayers) : n_sublayers;
}

}  // namespace

ContributionMap aggregate(const Tensor& input_tokens, std::span<const LayerTrace> traces, const AttnGradSet& grads,
                          const ExplainerConfig& config) {
  if (!config.use_af) {
    ContributionMap out;
    out.C = Tensor::identity(input_tokens.rows());
    for (std::size_t s = 0; s < traces.size(); ++s) {
      if (traces[s].kind != SublayerKind::kMhsa) continue;
      out.C = update_map_mhsa(traces[s], grads.for_sublayer(s).heads, config);
      out.layers_applied = 1;
      break;
    }
    return out;
  }
  ContributionMap out = initial_contribution(input_tokens, config);
  const std::size_t depth = applied_depth(traces.size(), config);
  for (std::size_t s = 0; s < depth; ++s) {
    const Tensor update = traces[s].kind == SublayerKind::kMhsa
                              ? update_map_mhsa(traces[s], grads.for_sublayer(s).heads, config)
                              : update_map_ffn(traces[s], config);
    out.C = matmul(update, out.C);
    ++out.layers_applied;
  }
  return out;
}

Tensor rollout_map(std::span<const LayerTrace> traces, const ExplainerConfig& config) {
  if (traces.empty()) throw DimensionError("rollout_map: no traces");
  const std::size_t n = traces.front().output.rows();
  Tensor rollout = Tensor::identity(n);
  const std::size_t depth = applied_depth(traces.size(), config);
  for (std::size_t s = 0; s < depth; ++s) {
    const LayerTrace& trace = traces[s];
    if (trace.kind != SublayerKind::kMhsa) continue;
    Tensor mixed = Tensor::identity(n);
    for (const auto& head : trace.heads) mixed = add(mixed, scale(head.attention, 1.0 / static_cast<double>(trace.heads.size())));
    for (std::size_t i = 0; i < n; ++i) {
      auto row = mixed.mutable_row(i);
      double total = 0.0;
      for (double v : row) total += v;
      for (auto& v : row) v /= total;
    }
    rollout = matmul(mixed, rollout);
  }
  return rollout;
}

constexpr double kFlatRelativeSpread = 1e-12;

Heatmap extract_heatmap(const Tensor& C, std::size_t grid, std::size_t cls_index) {
  if (C.rank() != 2 || C.rows() != C.cols()) throw DimensionError("extract_heatmap: map must be square");
  if (grid == 0 || C.rows() != 1 + grid * grid) {
    throw DimensionError("extract_heatmap: " + std::to_string(C.rows()) + " tokens do not fit a " +
                         std::to_string(grid) + "x" + std::to_string(grid) + " patch grid plus [CLS]");
  }
  if (cls_index >= C.rows()) throw DimensionError("extract_heatmap: cls index out of range");
  Heatmap out;
  out.grid = grid;
  for (std::size_t j = 0; j < C.cols(); ++j) {
    if (j != cls_index) out.raw.push_back(C(cls_index, j));
  }
  const auto [lo, hi] = std::minmax_element(out.raw.begin(), out.raw.end());
  const double span = *hi - *lo;
  std::vector<double> normalized(out.raw.size(), 0.0);
  // Spreads at rounding level are treated as a constant row.
  if (span > kFlatRelativeSpread * std::max(std::abs(*lo), std::abs(*hi))) {
    for (std::size_t i = 0; i < normalized.size(); ++i) normalized[i] = (out.raw[i] - *lo) / span;
  }
  out.values = Tensor({grid, grid}, std::move(normalized));
  return out;
}

namespace {

// Explanation math always runs in real64, whatever precision the forward used.
ForwardResult as_real64(const ForwardResult& fr) {
  ForwardResult out;
  out.tokens = fr.tokens.as(DType::kReal64);
  out.logits = fr.logits.as(DType::kReal64);
  out.probs = fr.probs.as(DType::kReal64);
  for (const auto& t : fr.traces) {
    LayerTrace c = t;
    c.input = t.input.as(DType::kReal64);
    c.reference = t.reference.as(DType::kReal64);
    c.transformed = t.transformed.as(DType::kReal64);
    c.output = t.output.as(DType::kReal64);
    for (auto& h : c.heads) {
      h.attention = h.attention.as(DType::kReal64);
      h.transformed = h.transformed.as(DType::kReal64);
    }
    out.traces.push_back(std::move(c));
  }
  return out;
}

}  // namespace

Heatmap explain_forward(const ModelBundle& bundle, const ForwardResult& fr_in, std::size_t target_class,
                        const ExplainerConfig& config) {
  if (fr_in.tokens.dtype() != DType::kReal64) return explain_forward(bundle, as_real64(fr_in), target_class, config);
  const ForwardResult& fr = fr_in;
  const std::size_t grid = bundle.config().grid();
  switch (config.method) {
    case Method::kTokenTM:
    case Method::kEq8Baseline: {
      ExplainerConfig effective = config;
      if (config.method == Method::kEq8Baseline) {
        effective.use_af = effective.use_length = effective.use_necc = false;
      }
      const AttnGradSet grads = attention_gradients(bundle, fr, target_class);
      return extract_heatmap(aggregate(fr.tokens, fr.traces, grads, effective).C, grid);
    }
    case Method::kRollout:
      return extract_heatmap(rollout_map(fr.traces, config), grid);
    case Method::kRawAttention: {
      const std::size_t depth = applied_depth(fr.traces.size(), config);
      for (std::size_t s = depth; s-- > 0;) {
        const LayerTrace& trace = fr.traces[s];
        if (trace.kind != SublayerKind::kMhsa) continue;
        const std::size_t n = trace.output.rows();
        Tensor mean({n, n});
        for (const auto& head : trace.heads) mean = add(mean, scale(head.attention, 1.0 / static_cast<double>(trace.heads.size())));
        return extract_heatmap(mean, grid);
      }
      throw DimensionError("raw_attention: model has no attention layer");
    }
  }
  throw InputError("unknown explanation method");
}

Explanation explain_tokens(const ModelBundle& bundle, const Tensor& tokens, std::optional<std::size_t> target_class,
                           const ExplainerConfig& config) {
  const ForwardResult fr = forward(bundle, tokens);
  Explanation out;
  out.predicted_class = fr.predicted_class();
  out.target_class = target_class.value_or(out.predicted_class);
  if (out.target_class >= bundle.config().n_classes) {
    throw InputError("class index " + std::to_string(out.target_class) + " out of range");
  }
  out.target_prob = fr.probs[out.target_class];
  out.probs = fr.probs;
  out.heatmap = explain_forward(bundle, fr, out.target_class, config);
  return out;
}

Explanation explain(const ModelBundle& bundle, const Tensor& normalized_image, std::optional<std::size_t> target_class,
                    const ExplainerConfig& config) {
  return explain_tokens(bundle, tokenize(bundle, normalized_image), target_class, config);
}

}  // namespace tokentm
