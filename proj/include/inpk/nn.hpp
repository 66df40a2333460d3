#pragma once
// Transformer building blocks composed from the primitives in ops.hpp.
//
// Weights are stored input-major ([in x out]) so a row batch maps with a
// single matmul: y = x W + b.

#include <string>
#include <vector>

#include "inpk/ops.hpp"
#include "inpk/tensor.hpp"

namespace inpk {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttnParams {
  Linear q, k, v, out;
  std::size_t heads = 1;
};

struct FfnParams {
  Linear up;    // d -> hidden
  Linear down;  // hidden -> d
};

// Pre-norm residual layer: x + MHA(LN(x)); then + FFN(LN(.)).
struct TransformerLayer {
  LayerNormParams ln_attn;
  AttnParams attn;
  LayerNormParams ln_ffn;
  FfnParams ffn;
};

Linear make_linear(std::size_t in, std::size_t out, double stddev, Rng& rng);
LayerNormParams make_layer_norm(std::size_t d);
AttnParams make_attention(std::size_t d, std::size_t heads, double stddev, Rng& rng);
FfnParams make_ffn(std::size_t d, std::size_t hidden, Rng& rng);
TransformerLayer make_transformer_layer(std::size_t d, std::size_t heads, std::size_t hidden,
                                        Rng& rng);

Tensor linear(Graph& g, const Tensor& x, const Linear& p);
Tensor layer_norm(Graph& g, const Tensor& x, const LayerNormParams& p);

// Projects q/k/v, attends per head, concatenates and applies the output map.
// q holds layout.batch*layout.query_len rows, k and v batch*key_len rows.
AttentionResult multi_head_attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v,
                                     const AttnParams& p, AttentionLayout layout);
// up-map, GELU, down-map. The residual is the caller's.
Tensor ffn(Graph& g, const Tensor& x, const FfnParams& p);
Tensor transformer_layer(Graph& g, const Tensor& x, const TransformerLayer& p,
                         const AttentionLayout& layout);

void append_params(ParamList& out, const std::string& prefix, const Linear& p);
void append_params(ParamList& out, const std::string& prefix, const LayerNormParams& p);
void append_params(ParamList& out, const std::string& prefix, const AttnParams& p);
void append_params(ParamList& out, const std::string& prefix, const FfnParams& p);
void append_params(ParamList& out, const std::string& prefix, const TransformerLayer& p);

std::size_t param_count(const ParamList& params);
void set_requires_grad(const ParamList& params, bool flag);

}  // namespace inpk
