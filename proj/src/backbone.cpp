#include "inpk/backbone.hpp"

#include <cmath>

#include "inpk/errors.hpp"

namespace inpk {
namespace {

TransformerLayer frozen_layer(const BackboneSpec& s, Rng& rng) {
  auto l = make_transformer_layer(s.dim, s.heads, s.hidden, rng);
  for (Tensor* w : {&l.attn.q.weight, &l.attn.k.weight})
    for (auto& x : w->values_mut()) x *= s.attn_scale;
  for (auto& x : l.ffn.down.weight.values_mut()) x *= s.ffn_scale;
  return l;
}

}  // namespace

Backbone make_backbone(const BackboneSpec& s) {
  if (s.dim == 0 || s.patches == 0 || s.max_positions < 2)
    throw ConfigError("backbone needs a positive width, patches and at least two positions");
  if (s.heads == 0 || s.dim % s.heads != 0)
    throw ConfigError("embedding width " + std::to_string(s.dim) + " is not divisible by " +
                      std::to_string(s.heads) + " heads");
  Rng rng(s.seed);
  Backbone b;
  b.spec = s;
  for (std::size_t i = 0; i < s.text_layers; ++i) b.text_layers.push_back(frozen_layer(s, rng));
  for (std::size_t i = 0; i < s.vision_layers; ++i) b.vision_layers.push_back(frozen_layer(s, rng));
  b.text_positions = Tensor::randn({s.max_positions, s.dim}, s.position_scale, rng);
  b.vision_positions = Tensor::randn({1 + s.patches, s.dim}, s.position_scale, rng);
  b.vision_class_token = Tensor::randn({s.dim}, 1.0, rng);
  b.text_final = make_layer_norm(s.dim);
  b.vision_final = make_layer_norm(s.dim);
  // Placeholder maps until the projections are fitted to the world.
  const double pstd = 1.0 / static_cast<double>(s.dim);
  b.text_projection = Tensor::randn({s.dim, s.dim}, pstd, rng);
  b.vision_projection = Tensor::randn({s.dim, s.dim}, pstd, rng);
  return b;
}

ParamList Backbone::text_params() const {
  ParamList out;
  for (std::size_t i = 0; i < text_layers.size(); ++i)
    append_params(out, "text.layer" + std::to_string(i), text_layers[i]);
  out.push_back({"text.positions", text_positions});
  append_params(out, "text.final", text_final);
  out.push_back({"text.projection", text_projection});
  return out;
}

ParamList Backbone::vision_params() const {
  ParamList out;
  for (std::size_t i = 0; i < vision_layers.size(); ++i)
    append_params(out, "vision.layer" + std::to_string(i), vision_layers[i]);
  out.push_back({"vision.positions", vision_positions});
  out.push_back({"vision.class_token", vision_class_token});
  append_params(out, "vision.final", vision_final);
  out.push_back({"vision.projection", vision_projection});
  return out;
}

}  // namespace inpk
