// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "tokentm/model.hpp"
#include "tokentm/tensor.hpp"

namespace tokentm {

/// ∂p(c)/∂A_h for one MHSA sublayer.
struct LayerAttentionGrads {
  std::size_t sublayer = 0;   // index into ForwardResult::traces
  std::vector<Tensor> heads;  // [n×n] each, aligned with LayerTrace::heads
};

struct AttnGradSet {
  std::vector<LayerAttentionGrads> layers;  // one per MHSA sublayer, execution order
  std::size_t target_class = 0;
  double target_prob = 0.0;

  /// Grads for trace `sublayer`; throws if that sublayer is not an MHSA layer.
  const LayerAttentionGrads& for_sublayer(std::size_t sublayer) const;
};

/// Gradient of the softmax probability of `target_class` with respect to every
/// recorded attention map. Each A_h is treated as an independent input at its
/// recorded value: the derivative flows through A_h·Ẽ_h and the full remainder
/// of the network (including later softmaxes), but not into the Q/K projections
/// that produced A_h itself. Computed in real64 by an explicit reverse pass.
AttnGradSet attention_gradients(const ModelBundle& bundle, const ForwardResult& forward_result,
                                std::size_t target_class);

/// Reverse of y = LN(x)·γ + β for one matrix of tokens, given ∂/∂y.
Tensor layernorm_backward(const Tensor& x, const Tensor& gamma, double eps, const Tensor& grad_out);

}  // namespace tokentm
