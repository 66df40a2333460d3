#pragma once
// Knowledge-infused text encoder.
//
// Learnable prompt tokens are prepended to each class's knowledge tokens.
// Before each of the first `depth` frozen layers an attribute-aware attention
// block lets the prompts query that class's knowledge states:
//   A     = MHA(LN1(P), LN1(E), LN1(E)) + P
//   P_hat = FFN(LN2(A)) + A
// and the layer then runs on [P_hat, E]. Deeper layers run on [P, E] as is.
// The class feature is the projected final state at the EOS position.

#include <span>
#include <vector>

#include "inpk/backbone.hpp"
#include "inpk/nn.hpp"
#include "inpk/vocab.hpp"

namespace inpk {

struct AttrAttnBlock {
  LayerNormParams ln_attn;  // shared by queries and keys/values
  AttnParams attn;
  LayerNormParams ln_ffn;
  FfnParams ffn;
};

// Attention and FFN output maps start scaled by output_scale, so a fresh
// block is close to the identity on the prompts.
AttrAttnBlock make_attr_attn_block(std::size_t d, std::size_t heads, std::size_t hidden,
                                   double output_scale, Rng& rng);
// Zeros the attention output map and the FFN down-map (weights and biases).
void zero_output_maps(AttrAttnBlock& block);
void append_params(ParamList& out, const std::string& prefix, const AttrAttnBlock& block);

// prompts: [batch*M x d], knowledge: [batch*n x d], key_valid: batch*n flags.
// Each sequence's prompts attend only to that sequence's knowledge.
Tensor attr_aware_attention(Graph& g, const Tensor& prompts, const Tensor& knowledge,
                            const AttrAttnBlock& block, std::size_t batch,
                            std::span<const std::uint8_t> key_valid);

// Embedded token sequences ready for the text stack, positions added.
// Trailing columns that are PAD in every sequence are dropped; they sit after
// every EOS under a causal mask, so they never influence a feature.
struct TextInput {
  Tensor tokens;  // [count*len x d]
  std::size_t count = 0;
  std::size_t len = 0;
  std::vector<std::size_t> eos;
  std::vector<std::uint8_t> valid;  // count*len
};

TextInput make_text_input(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                          std::span<const TokenSequence> seqs);

struct LayerTrace {
  bool fused = false;
  Tensor prompts;  // prompt states entering the layer (after fusion, if any)
  Tensor tokens;   // knowledge-token states entering the layer
};

struct TextTrace {
  std::vector<LayerTrace> layers;
  std::size_t fusion_count() const;
};

// prompts: shared [M x d] tokens, or an undefined tensor for M = 0.
// blocks must hold at least `depth` entries. Returns [count x d] features.
Tensor encode_prompted(Graph& g, const Backbone& bb, const TextInput& in, const Tensor& prompts,
                       std::span<const AttrAttnBlock> blocks, std::size_t depth,
                       TextTrace* trace = nullptr);

// The hand-written prompt path: no learnable tokens, no fusion.
Tensor encode_frozen(Graph& g, const Backbone& bb, const TextInput& in);

// Pre-projection final EOS states (unit-normalized rows from the last LN).
Tensor encode_hidden(Graph& g, const Backbone& bb, const TextInput& in);

}  // namespace inpk
