// SPDX-License-Identifier: Apache-2.0
#include "tokentm/model.hpp"

#include <algorithm>
#include <cmath>

#include "tokentm/error.hpp"

namespace tokentm {

std::string block_tensor_name(std::size_t block, const std::string& leaf) {
  return "block." + std::to_string(block) + "." + leaf;
}

std::vector<std::pair<std::string, Shape>> expected_tensors(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> out = {
      {"patch_embed.w", {d, 3, c.patch_size, c.patch_size}},
      {"patch_embed.b", {d}},
      {"cls_token", {d}},
      {"pos_embed", {c.n_tokens(), d}},
  };
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    for (const char* leaf : {"ln1.g", "ln1.b", "attn.bq", "attn.bk", "attn.bv", "attn.bo", "ln2.g",
                             "ln2.b", "ffn.b2"}) {
      out.emplace_back(block_tensor_name(b, leaf), Shape{d});
    }
    for (const char* leaf : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
      out.emplace_back(block_tensor_name(b, leaf), Shape{d, d});
    }
    out.emplace_back(block_tensor_name(b, "ffn.w1"), Shape{d, c.d_ff});
    out.emplace_back(block_tensor_name(b, "ffn.b1"), Shape{c.d_ff});
    out.emplace_back(block_tensor_name(b, "ffn.w2"), Shape{c.d_ff, d});
  }
  out.emplace_back("norm.g", Shape{d});
  out.emplace_back("norm.b", Shape{d});
  out.emplace_back("head.w", Shape{d, c.n_classes});
  out.emplace_back("head.b", Shape{c.n_classes});
  return out;
}

ModelBundle::ModelBundle(ModelDescription description, TensorMap weights)
    : description_(std::move(description)), weights_(std::move(weights)) {
  description_.config.validate();
  std::vector<std::string> problems;
  for (const auto& [name, shape] : expected_tensors(description_.config)) {
    const auto it = weights_.find(name);
    if (it == weights_.end()) {
      problems.push_back("missing " + name);
    } else if (it->second.shape() != shape) {
      problems.push_back(name + " has shape " + shape_to_string(it->second.shape()) + ", expected " +
                         shape_to_string(shape));
    }
  }
  if (!problems.empty()) {
    std::string msg = "model weights do not match config:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ModelError(msg);
  }
  const bool all_f32 = std::all_of(weights_.begin(), weights_.end(),
                                   [](const auto& kv) { return kv.second.dtype() == DType::kReal32; });
  dtype_ = all_f32 ? DType::kReal32 : DType::kReal64;
}

ModelBundle ModelBundle::load(const std::filesystem::path& weights_path,
                              const std::filesystem::path& config_path) {
  auto description = load_model_description(config_path);
  auto container = read_weight_container(weights_path);
  return ModelBundle(std::move(description), std::move(container.tensors));
}

const Tensor& ModelBundle::weight(const std::string& name) const {
  const auto it = weights_.find(name);
  if (it == weights_.end()) throw ModelError("no tensor named " + name);
  return it->second;
}

const Tensor& ModelBundle::block_weight(std::size_t block, const std::string& leaf) const {
  return weight(block_tensor_name(block, leaf));
}

ModelBundle ModelBundle::as(DType dtype) const {
  TensorMap converted;
  for (const auto& [name, t] : weights_) converted.emplace(name, t.as(dtype));
  ModelBundle out(description_, std::move(converted));
  out.dtype_ = dtype;
  return out;
}

const char* sublayer_kind_name(SublayerKind kind) { return kind == SublayerKind::kMhsa ? "mhsa" : "ffn"; }

std::size_t ForwardResult::predicted_class() const {
  const auto v = probs.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Tensor normalize_image(const Tensor& image, const Normalization& norm) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw InputError("expected an H×W×3 image, got " + shape_to_string(image.shape()));
  }
  Tensor out = image;
  auto v = out.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t c = i % 3;
    v[i] = (v[i] - norm.mean[c]) / norm.std[c];
  }
  out.finalize("normalize_image");
  return out;
}

Tensor tokenize(const ModelBundle& bundle, const Tensor& image_in) {
  const auto& c = bundle.config();
  if (image_in.rank() != 3 || image_in.dim(0) != c.image_size || image_in.dim(1) != c.image_size ||
      image_in.dim(2) != 3) {
    throw InputError("image shape " + shape_to_string(image_in.shape()) + " does not match model input [" +
                     std::to_string(c.image_size) + "x" + std::to_string(c.image_size) + "x3]");
  }
  const Tensor image = image_in.as(bundle.dtype());
  const std::size_t p = c.patch_size, g = c.grid(), d = c.d_model;
  const std::size_t patch_len = 3 * p * p;

  // Patches as rows in (channel, ky, kx) order to match the conv kernel layout.
  Tensor patches({g * g, patch_len}, bundle.dtype());
  for (std::size_t py = 0; py < g; ++py) {
    for (std::size_t px = 0; px < g; ++px) {
      auto row = patches.mutable_row(py * g + px);
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t ky = 0; ky < p; ++ky)
          for (std::size_t kx = 0; kx < p; ++kx) row[k++] = image(py * p + ky, px * p + kx, ch);
    }
  }
  const Tensor kernel = bundle.weight("patch_embed.w").reshaped({d, patch_len});
  const Tensor embedded = add_row_vector(matmul_nt(patches, kernel), bundle.weight("patch_embed.b"));

  Tensor tokens({c.n_tokens(), d}, bundle.dtype());
  const Tensor& cls = bundle.weight("cls_token");
  std::copy(cls.values().begin(), cls.values().end(), tokens.mutable_row(0).begin());
  std::copy(embedded.values().begin(), embedded.values().end(), tokens.mutable_row(1).begin());
  return add(tokens, bundle.weight("pos_embed"));
}

namespace {

LayerTrace run_mhsa(const ModelBundle& bundle, std::size_t block, std::size_t sublayer, const Tensor& x,
                    const ForwardOptions& options) {
  const auto& c = bundle.config();
  const std::size_t dh = c.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerTrace trace;
  trace.kind = SublayerKind::kMhsa;
  trace.block = block;
  trace.reference = layernorm(x, bundle.block_weight(block, "ln1.g"), bundle.block_weight(block, "ln1.b"),
                              c.layernorm_eps);
  const Tensor& y = trace.reference;
  const Tensor q = add_row_vector(matmul(y, bundle.block_weight(block, "attn.wq")),
                                  bundle.block_weight(block, "attn.bq"));
  const Tensor k = add_row_vector(matmul(y, bundle.block_weight(block, "attn.wk")),
                                  bundle.block_weight(block, "attn.bk"));
  const Tensor v = add_row_vector(matmul(y, bundle.block_weight(block, "attn.wv")),
                                  bundle.block_weight(block, "attn.bv"));
  const Tensor& wo = bundle.block_weight(block, "attn.wo");
  const Tensor bo_share = scale(bundle.block_weight(block, "attn.bo"), 1.0 / static_cast<double>(c.n_heads));

  Tensor mixed(x.shape(), x.dtype());
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const Tensor qh = column_block(q, h * dh, dh);
    const Tensor kh = column_block(k, h * dh, dh);
    Tensor attention = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    if (options.attention_hook) options.attention_hook(sublayer, h, attention);
    Tensor transformed =
        add_row_vector(matmul(column_block(v, h * dh, dh), row_block(wo, h * dh, dh)), bo_share);
    mixed = add(mixed, matmul(attention, transformed));
    if (options.record_traces) trace.heads.push_back({std::move(attention), std::move(transformed)});
  }
  trace.output = add(x, mixed);
  if (options.record_traces) trace.input = x;
  return trace;
}

LayerTrace run_ffn(const ModelBundle& bundle, std::size_t block, const Tensor& x, const ForwardOptions& options) {
  const auto& c = bundle.config();
  LayerTrace trace;
  trace.kind = SublayerKind::kFfn;
  trace.block = block;
  trace.reference = layernorm(x, bundle.block_weight(block, "ln2.g"), bundle.block_weight(block, "ln2.b"),
                              c.layernorm_eps);
  const Tensor hidden = gelu(add_row_vector(matmul(trace.reference, bundle.block_weight(block, "ffn.w1")),
                                            bundle.block_weight(block, "ffn.b1")));
  trace.transformed =
      add_row_vector(matmul(hidden, bundle.block_weight(block, "ffn.w2")), bundle.block_weight(block, "ffn.b2"));
  trace.output = add(x, trace.transformed);
  if (options.record_traces) trace.input = x;
  return trace;
}

}  // namespace

ForwardResult forward(const ModelBundle& bundle, const Tensor& tokens_in, const ForwardOptions& options) {
  const auto& c = bundle.config();
  if (tokens_in.rank() != 2 || tokens_in.cols() != c.d_model || tokens_in.rows() == 0) {
    throw ModelError("forward: tokens of shape " + shape_to_string(tokens_in.shape()) +
                     " do not match d_model " + std::to_string(c.d_model));
  }
  ForwardResult result;
  result.tokens = tokens_in.as(bundle.dtype());
  Tensor x = result.tokens;
  for (std::size_t b = 0; b < c.n_blocks; ++b) {
    LayerTrace attn = run_mhsa(bundle, b, 2 * b, x, options);
    x = attn.output;
    LayerTrace ffn = run_ffn(bundle, b, x, options);
    x = ffn.output;
    if (options.record_traces) {
      result.traces.push_back(std::move(attn));
      result.traces.push_back(std::move(ffn));
    }
  }
  const Tensor cls = layernorm(row_block(x, 0, 1), bundle.weight("norm.g"), bundle.weight("norm.b"), c.layernorm_eps);
  const Tensor logits = add_row_vector(matmul(cls, bundle.weight("head.w")), bundle.weight("head.b"));
  result.probs = softmax_rows(logits).reshaped({c.n_classes});
  result.logits = logits.reshaped({c.n_classes});
  return result;
}

}  // namespace tokentm
