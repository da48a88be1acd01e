// SPDX-License-Identifier: Apache-2.0
//
// Token-transformation-aware attribution and attention-only baselines.
//
// TokenTM measures how much each sublayer's transformation changes a token
// (length ratio and a softmax over cosine correlations), folds that into a
// per-sublayer update map U, and multiplies the maps onto a diagonal of input
// token lengths. The [CLS] row of the product is the explanation.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokentm/gradients.hpp"
#include "tokentm/model.hpp"
#include "tokentm/tensor.hpp"

namespace tokentm {

enum class Method { kTokenTM, kRawAttention, kRollout, kEq8Baseline };

const char* method_name(Method method);
/// Accepts "tokentm", "raw_attention", "rollout", "eq8_baseline".
Method parse_method(const std::string& name);

struct ExplainerConfig {
  Method method = Method::kTokenTM;
  bool use_af = true;      // aggregate across sublayers
  bool use_length = true;  // length ratios in W and length-diagonal C⁰
  bool use_necc = true;    // cosine-correlation softmax in W
  std::optional<std::size_t> depth_limit;  // apply only the first k sublayers
  double length_ratio_cap = 1e6;           // ratio used when L(E_i) == 0 < L(Ẽ_i)
};

/// Euclidean length of one token.
double token_length(std::span<const double> token);

/// Cosine similarity, defined as 0 when either vector has zero length.
double cosine(std::span<const double> a, std::span<const double> b);

/// Softmax over the per-token cosines between original and transformed tokens.
std::vector<double> necc(const Tensor& reference, const Tensor& transformed);

struct TransformWeights {
  std::vector<double> w;             // diagonal of W
  std::vector<double> length_ratio;  // 1 exactly when lengths are disabled
  std::vector<double> necc;          // 1 exactly when NECC is disabled
};

TransformWeights transformation_weights(const Tensor& reference, const Tensor& transformed,
                                        const ExplainerConfig& config = {});

/// U = I + mean_h[(∂p/∂A_h)⁺ ⊙ (A_h·W_h)].
Tensor update_map_mhsa(const LayerTrace& trace, std::span<const Tensor> grads, const ExplainerConfig& config = {});

/// U = I + diag(w); FFN mixing is token-local so there is no gradient term.
Tensor update_map_ffn(const LayerTrace& trace, const ExplainerConfig& config = {});

struct ContributionMap {
  Tensor C;
  std::size_t layers_applied = 0;
};

/// C⁰: diag of input token lengths, or I when lengths are disabled.
ContributionMap initial_contribution(const Tensor& input_tokens, const ExplainerConfig& config = {});

/// Folds update maps onto C⁰ in execution order. With use_af off the result is
/// the single update map of the first MHSA sublayer (attention-only rule
/// applied to the input tokens, C⁰ = I).
ContributionMap aggregate(const Tensor& input_tokens, std::span<const LayerTrace> traces, const AttnGradSet& grads,
                          const ExplainerConfig& config = {});

/// Attention rollout: product over MHSA sublayers of row-normalized (mean_h A + I).
Tensor rollout_map(std::span<const LayerTrace> traces, const ExplainerConfig& config = {});

struct Heatmap {
  std::size_t grid = 0;
  Tensor values;            // [grid×grid], min-max normalized to [0,1]
  std::vector<double> raw;  // [CLS] row without the [CLS] column, before normalization
};

/// Row `cls_index` of C minus its [CLS] column, as a normalized grid×grid map.
/// A constant row yields an all-zero map; so does a row whose spread is
/// within 1e-12 of its magnitude (rounding noise).
Heatmap extract_heatmap(const Tensor& C, std::size_t grid, std::size_t cls_index = 0);

struct Explanation {
  Heatmap heatmap;
  std::size_t target_class = 0;
  double target_prob = 0.0;
  std::size_t predicted_class = 0;
  Tensor probs;
};

/// Runs forward (and the reverse pass when the method needs gradients) on
/// already-computed tokens. `target_class` defaults to the predicted class.
Explanation explain_tokens(const ModelBundle& bundle, const Tensor& tokens, std::optional<std::size_t> target_class,
                           const ExplainerConfig& config = {});

/// Same, from a normalized [H×W×3] image.
Explanation explain(const ModelBundle& bundle, const Tensor& normalized_image, std::optional<std::size_t> target_class,
                    const ExplainerConfig& config = {});

/// Explanation heatmap from a finished forward pass.
Heatmap explain_forward(const ModelBundle& bundle, const ForwardResult& forward_result, std::size_t target_class,
                        const ExplainerConfig& config = {});

}  // namespace tokentm
