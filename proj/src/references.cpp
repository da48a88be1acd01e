// SPDX-License-Identifier: Apache-2.0
#include "tokentm/references.hpp"

#include "tokentm/error.hpp"
#include "tokentm/image_io.hpp"

namespace tokentm {

std::vector<ReferenceCheck> check_references(const ModelBundle& bundle, const std::filesystem::path& config_dir) {
  std::vector<ReferenceCheck> checks;
  for (const auto& ref : bundle.description().references) {
    const auto path = config_dir / ref.image;
    if (!std::filesystem::exists(path)) throw InputError("reference image not found: " + path.string());
    if (ref.logits.size() != bundle.config().n_classes) {
      throw ModelError("reference " + ref.image + " has " + std::to_string(ref.logits.size()) + " logits");
    }
    ReferenceCheck check;
    check.image = ref.image;
    check.hash_matches = fnv1a64_file(path) == ref.fnv1a64;
    const Tensor tokens = tokenize(bundle, normalize_image(load_image(path), bundle.normalization()));
    const ForwardResult fr = forward(bundle, tokens, ForwardOptions{.record_traces = false, .attention_hook = {}});
    check.logits_max_abs_diff = max_abs_difference(fr.logits, Tensor::vector(ref.logits));
    if (!ref.tokens.empty()) {
      if (ref.tokens.shape() != tokens.shape()) {
        throw ModelError("reference " + ref.image + " tokens have shape " + shape_to_string(ref.tokens.shape()));
      }
      check.tokens_max_abs_diff = max_abs_difference(tokens, ref.tokens);
    }
    checks.push_back(std::move(check));
  }
  return checks;
}

}  // namespace tokentm
