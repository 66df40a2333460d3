#include "inpk/nn.hpp"

#include <cmath>

#include "inpk/errors.hpp"

namespace inpk {

Linear make_linear(std::size_t in, std::size_t out, double stddev, Rng& rng) {
  return {Tensor::randn({in, out}, stddev, rng), Tensor({out})};
}

LayerNormParams make_layer_norm(std::size_t d) { return {Tensor::full({d}, 1.0), Tensor({d})}; }

AttnParams make_attention(std::size_t d, std::size_t heads, double stddev, Rng& rng) {
  if (heads == 0 || d % heads != 0)
    throw ConfigError("embedding width " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  AttnParams p;
  p.q = make_linear(d, d, stddev, rng);
  p.k = make_linear(d, d, stddev, rng);
  p.v = make_linear(d, d, stddev, rng);
  p.out = make_linear(d, d, stddev, rng);
  p.heads = heads;
  return p;
}

FfnParams make_ffn(std::size_t d, std::size_t hidden, Rng& rng) {
  if (hidden == 0) throw ConfigError("feed-forward hidden width must be at least 1");
  return {make_linear(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)), rng),
          make_linear(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng)};
}

TransformerLayer make_transformer_layer(std::size_t d, std::size_t heads, std::size_t hidden,
                                        Rng& rng) {
  TransformerLayer l;
  l.ln_attn = make_layer_norm(d);
  l.attn = make_attention(d, heads, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  l.ln_ffn = make_layer_norm(d);
  l.ffn = make_ffn(d, hidden, rng);
  return l;
}

Tensor linear(Graph& g, const Tensor& x, const Linear& p) {
  return add_bias(g, matmul(g, x, p.weight), p.bias);
}

Tensor layer_norm(Graph& g, const Tensor& x, const LayerNormParams& p) {
  return layer_norm(g, x, p.gain, p.bias);
}

AttentionResult multi_head_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttnParams& p, AttentionLayout layout) {
  layout.heads = p.heads;
  auto r = scaled_dot_attention(g, linear(g, q, p.q), linear(g, k, p.k), linear(g, v, p.v), layout);
  r.output = linear(g, r.output, p.out);
  return r;
}

Tensor ffn(Graph& g, const Tensor& x, const FfnParams& p) {
  return linear(g, gelu(g, linear(g, x, p.up)), p.down);
}

Tensor transformer_layer(Graph& g, const Tensor& x, const TransformerLayer& p,
                         const AttentionLayout& layout) {
  const Tensor h = layer_norm(g, x, p.ln_attn);
  const Tensor a = add(g, x, multi_head_attention(g, h, h, h, p.attn, layout).output);
  return add(g, a, ffn(g, layer_norm(g, a, p.ln_ffn), p.ffn));
}

void append_params(ParamList& out, const std::string& prefix, const Linear& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

void append_params(ParamList& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

void append_params(ParamList& out, const std::string& prefix, const AttnParams& p) {
  append_params(out, prefix + ".q", p.q);
  append_params(out, prefix + ".k", p.k);
  append_params(out, prefix + ".v", p.v);
  append_params(out, prefix + ".out", p.out);
}

void append_params(ParamList& out, const std::string& prefix, const FfnParams& p) {
  append_params(out, prefix + ".up", p.up);
  append_params(out, prefix + ".down", p.down);
}

void append_params(ParamList& out, const std::string& prefix, const TransformerLayer& p) {
  append_params(out, prefix + ".ln_attn", p.ln_attn);
  append_params(out, prefix + ".attn", p.attn);
  append_params(out, prefix + ".ln_ffn", p.ln_ffn);
  append_params(out, prefix + ".ffn", p.ffn);
}

std::size_t param_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_requires_grad(const ParamList& params, bool flag) {
  for (auto p : params) p.tensor.set_requires_grad(flag);
}

}  // namespace inpk
