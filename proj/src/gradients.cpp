// SPDX-License-Identifier: Apache-2.0
#include "tokentm/gradients.hpp"

#include <cmath>

#include "tokentm/error.hpp"

namespace tokentm {

const LayerAttentionGrads& AttnGradSet::for_sublayer(std::size_t sublayer) const {
  for (const auto& layer : layers) {
    if (layer.sublayer == sublayer) return layer;
  }
  throw DimensionError("no attention gradients recorded for sublayer " + std::to_string(sublayer));
}

Tensor layernorm_backward(const Tensor& x, const Tensor& gamma, double eps, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape() || gamma.size() != x.cols()) {
    throw DimensionError("layernorm_backward: shape mismatch");
  }
  const std::size_t d = x.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  Tensor grad_in(x.shape());
  std::vector<double> xhat(d), gxhat(d);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xrow = x.row(i);
    const auto grow = grad_out.row(i);
    double mean = 0.0;
    for (double v : xrow) mean += v;
    mean *= inv_d;
    double var = 0.0;
    for (double v : xrow) var += (v - mean) * (v - mean);
    var *= inv_d;
    const double rstd = 1.0 / std::sqrt(var + eps);

    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xrow[j] - mean) * rstd;
      gxhat[j] = grow[j] * gamma[j];
      mean_g += gxhat[j];
      mean_gx += gxhat[j] * xhat[j];
    }
    mean_g *= inv_d;
    mean_gx *= inv_d;
    auto out = grad_in.mutable_row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = rstd * (gxhat[j] - mean_g - xhat[j] * mean_gx);
  }
  grad_in.finalize("layernorm_backward");
  return grad_in;
}

namespace {

// ∂/∂S of A = softmax_rows(S), given ∂/∂A.
Tensor softmax_backward(const Tensor& attention, const Tensor& grad_attention) {
  Tensor grad(attention.shape());
  for (std::size_t i = 0; i < attention.rows(); ++i) {
    const auto a = attention.row(i);
    const auto g = grad_attention.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * g[j];
    auto out = grad.mutable_row(i);
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] * (g[j] - dot);
  }
  return grad;
}

Tensor ffn_backward(const ModelBundle& bundle, const LayerTrace& trace, const Tensor& grad_out) {
  const auto& c = bundle.config();
  const std::size_t b = trace.block;
  const Tensor pre = add_row_vector(matmul(trace.reference, bundle.block_weight(b, "ffn.w1")),
                                    bundle.block_weight(b, "ffn.b1"));
  Tensor grad_pre = matmul_nt(grad_out, bundle.block_weight(b, "ffn.w2"));
  for (std::size_t i = 0; i < grad_pre.size(); ++i) grad_pre[i] *= gelu_derivative(pre[i]);
  const Tensor grad_ref = matmul_nt(grad_pre, bundle.block_weight(b, "ffn.w1"));
  return add(grad_out, layernorm_backward(trace.input, bundle.block_weight(b, "ln2.g"), c.layernorm_eps, grad_ref));
}

Tensor mhsa_backward(const ModelBundle& bundle, const LayerTrace& trace, const Tensor& grad_out,
                     LayerAttentionGrads& record) {
  const auto& c = bundle.config();
  const std::size_t b = trace.block;
  const std::size_t dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& y = trace.reference;
  const Tensor& wq = bundle.block_weight(b, "attn.wq");
  const Tensor& wk = bundle.block_weight(b, "attn.wk");
  const Tensor& wv = bundle.block_weight(b, "attn.wv");
  const Tensor& wo = bundle.block_weight(b, "attn.wo");
  const Tensor q = add_row_vector(matmul(y, wq), bundle.block_weight(b, "attn.bq"));
  const Tensor k = add_row_vector(matmul(y, wk), bundle.block_weight(b, "attn.bk"));

  Tensor grad_ref(y.shape());
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const HeadTrace& head = trace.heads[h];
    Tensor grad_attention = matmul_nt(grad_out, head.transformed);

    // Value path: Ẽ_h = (y·Wv_h + bv_h)·Wo_h + const.
    const Tensor grad_transformed = matmul_tn(head.attention, grad_out);
    const Tensor grad_value = matmul_nt(grad_transformed, row_block(wo, h * dh, dh));
    grad_ref = add(grad_ref, matmul_nt(grad_value, column_block(wv, h * dh, dh)));

    // Score path. A_h is an independent input for its own gradient, but the
    // tokens feeding this layer's softmax depend on every earlier layer.
    const Tensor grad_scores = scale(softmax_backward(head.attention, grad_attention), inv_sqrt);
    const Tensor qh = column_block(q, h * dh, dh);
    const Tensor kh = column_block(k, h * dh, dh);
    grad_ref = add(grad_ref, matmul_nt(matmul(grad_scores, kh), column_block(wq, h * dh, dh)));
    grad_ref = add(grad_ref, matmul_nt(matmul_tn(grad_scores, qh), column_block(wk, h * dh, dh)));

    record.heads.push_back(std::move(grad_attention));
  }
  return add(grad_out, layernorm_backward(trace.input, bundle.block_weight(b, "ln1.g"), c.layernorm_eps, grad_ref));
}

}  // namespace

AttnGradSet attention_gradients(const ModelBundle& bundle_in, const ForwardResult& fr, std::size_t target_class) {
  const auto& c = bundle_in.config();
  if (target_class >= c.n_classes) {
    throw InputError("class index " + std::to_string(target_class) + " out of range for " +
                     std::to_string(c.n_classes) + " classes");
  }
  if (fr.traces.size() != c.n_sublayers()) {
    throw ModelError("attention_gradients: expected " + std::to_string(c.n_sublayers()) + " traces, got " +
                     std::to_string(fr.traces.size()));
  }
  const ModelBundle bundle = bundle_in.dtype() == DType::kReal64 ? bundle_in : bundle_in.as(DType::kReal64);

  AttnGradSet out;
  out.target_class = target_class;
  out.target_prob = fr.probs[target_class];
  if (fr.traces.empty()) return out;

  // Head: p = softmax(LN(x_cls)·W + b); ∂p_c/∂logit_j = p_c(δ_cj − p_j).
  const std::size_t n = fr.traces.back().output.rows();
  const Tensor& final_tokens = fr.traces.back().output;
  Tensor grad_logits({1, c.n_classes});
  for (std::size_t j = 0; j < c.n_classes; ++j) {
    grad_logits(0, j) = out.target_prob * ((j == target_class ? 1.0 : 0.0) - fr.probs[j]);
  }
  const Tensor grad_cls_norm = matmul_nt(grad_logits, bundle.weight("head.w"));
  const Tensor grad_cls = layernorm_backward(row_block(final_tokens, 0, 1).as(DType::kReal64),
                                             bundle.weight("norm.g"), c.layernorm_eps, grad_cls_norm);
  Tensor grad({n, c.d_model});
  std::copy(grad_cls.values().begin(), grad_cls.values().end(), grad.mutable_row(0).begin());

  std::vector<LayerAttentionGrads> reversed;
  for (std::size_t s = fr.traces.size(); s-- > 0;) {
    const LayerTrace& trace = fr.traces[s];
    if (trace.kind == SublayerKind::kFfn) {
      grad = ffn_backward(bundle, trace, grad);
    } else {
      if (trace.heads.size() != c.n_heads) throw ModelError("attention_gradients: trace is missing head captures");
      LayerAttentionGrads record;
      record.sublayer = s;
      grad = mhsa_backward(bundle, trace, grad, record);
      reversed.push_back(std::move(record));
    }
  }
  out.layers.assign(std::make_move_iterator(reversed.rbegin()), std::make_move_iterator(reversed.rend()));
  return out;
}

}  // namespace tokentm
