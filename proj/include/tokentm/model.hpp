// SPDX-License-Identifier: Apache-2.0
//
// Pre-LN ViT forward pass with trace capture.
//
// Canonical tensor names (matrices map row vectors on the left, y = x·W):
//
//   patch_embed.w        [d, 3, patch, patch]   (conv kernel layout)
//   patch_embed.b        [d]
//   cls_token            [d]
//   pos_embed            [n_tokens, d]
//   block.{i}.ln1.g/.b   [d]
//   block.{i}.attn.wq/wk/wv/wo   [d, d]   head h owns columns (rows for wo)
//   block.{i}.attn.bq/bk/bv/bo   [d]        [h·d_head, (h+1)·d_head)
//   block.{i}.ln2.g/.b   [d]
//   block.{i}.ffn.w1     [d, d_ff]      block.{i}.ffn.b1   [d_ff]
//   block.{i}.ffn.w2     [d_ff, d]      block.{i}.ffn.b2   [d]
//   norm.g / norm.b      [d]
//   head.w               [d, n_classes] head.b             [n_classes]

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tokentm/model_config.hpp"
#include "tokentm/tensor.hpp"
#include "tokentm/weight_container.hpp"

namespace tokentm {

std::string block_tensor_name(std::size_t block, const std::string& leaf);

/// Every tensor a config requires, with its exact shape.
std::vector<std::pair<std::string, Shape>> expected_tensors(const ModelConfig& config);

class ModelBundle {
 public:
  /// Validates that every required tensor is present with the expected shape.
  ModelBundle(ModelDescription description, TensorMap weights);

  static ModelBundle load(const std::filesystem::path& weights_path,
                          const std::filesystem::path& config_path);

  const ModelConfig& config() const { return description_.config; }
  const ModelDescription& description() const { return description_; }
  const Normalization& normalization() const { return description_.normalization; }
  const TensorMap& weights() const { return weights_; }
  const Tensor& weight(const std::string& name) const;
  const Tensor& block_weight(std::size_t block, const std::string& leaf) const;

  /// Copy with every weight converted to `dtype`.
  ModelBundle as(DType dtype) const;
  DType dtype() const { return dtype_; }

 private:
  ModelDescription description_;
  TensorMap weights_;
  DType dtype_ = DType::kReal64;
};

enum class SublayerKind { kMhsa, kFfn };

const char* sublayer_kind_name(SublayerKind kind);

struct HeadTrace {
  Tensor attention;    // A_h [n×n]
  Tensor transformed;  // Ẽ_h = (E_ref·W^V_h + b^V_h)·W^O_h + b^O / n_heads
};

/// What one sublayer saw and produced.
struct LayerTrace {
  SublayerKind kind = SublayerKind::kMhsa;
  std::size_t block = 0;
  Tensor input;                  // tokens entering the sublayer (skip path)
  Tensor reference;              // layer-normalized input fed to the transformation
  std::vector<HeadTrace> heads;  // MHSA only
  Tensor transformed;            // FFN only: Ẽ = FFN_inner(reference)
  Tensor output;
};

struct ForwardResult {
  Tensor tokens;  // tokens entering the first block
  Tensor logits;  // [n_classes]
  Tensor probs;   // [n_classes]
  std::vector<LayerTrace> traces;

  std::size_t predicted_class() const;
};

/// Called with (sublayer index, head, attention) right after each softmax;
/// the callback may overwrite the attention map that the layer then uses.
using AttentionHook = std::function<void(std::size_t, std::size_t, Tensor&)>;

struct ForwardOptions {
  bool record_traces = true;
  AttentionHook attention_hook;
};

/// [H×W×3] image in [0,1] -> normalized image with the bundle's per-channel constants.
Tensor normalize_image(const Tensor& image, const Normalization& normalization);

/// Patch embedding of an already-normalized [H×W×3] image, with [CLS]
/// prepended and positional embeddings added. Result is [n×d].
Tensor tokenize(const ModelBundle& bundle, const Tensor& image);

ForwardResult forward(const ModelBundle& bundle, const Tensor& tokens,
                      const ForwardOptions& options = {});

}  // namespace tokentm
