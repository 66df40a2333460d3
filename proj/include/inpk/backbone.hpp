#pragma once
// The frozen dual encoder: a text transformer with a projection into the
// shared space, and a vision transformer over patch tokens with its own
// projection. Nothing here is ever trained by the prompt learner.

#include <cstdint>
#include <vector>

#include "inpk/nn.hpp"

namespace inpk {

struct BackboneSpec {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t text_layers = 4;
  std::size_t vision_layers = 4;
  std::size_t patches = 16;
  std::size_t max_positions = 64;  // text position table rows
  std::uint64_t seed = 12;
  // Query/key maps are shrunk by attn_scale and FFN down-maps by ffn_scale so
  // the random stack mixes tokens smoothly instead of scrambling them.
  double attn_scale = 0.1;
  double ffn_scale = 0.3;
  double position_scale = 0.02;
};

struct Backbone {
  BackboneSpec spec;
  std::vector<TransformerLayer> text_layers;
  Tensor text_positions;  // [max_positions x d]
  LayerNormParams text_final;
  Tensor text_projection;  // [d x d]
  std::vector<TransformerLayer> vision_layers;
  Tensor vision_positions;  // [(1 + patches) x d]
  Tensor vision_class_token;  // [d]
  LayerNormParams vision_final;
  Tensor vision_projection;  // [d x d]

  std::size_t dim() const { return spec.dim; }
  ParamList text_params() const;
  ParamList vision_params() const;
};

Backbone make_backbone(const BackboneSpec& spec);

}  // namespace inpk
