#include "inpk/text_encoder.hpp"

#include <algorithm>
#include <numeric>

#include "inpk/errors.hpp"

namespace inpk {
namespace {

void zero(Linear& l) {
  std::fill(l.weight.values_mut().begin(), l.weight.values_mut().end(), 0.0);
  std::fill(l.bias.values_mut().begin(), l.bias.values_mut().end(), 0.0);
}

// Row indices that interleave per-sequence blocks of two stacked tensors:
// rows [0, n*a) hold n blocks of a rows, rows [n*a, n*(a+b)) n blocks of b.
std::vector<std::size_t> interleave_index(std::size_t n, std::size_t a, std::size_t b) {
  std::vector<std::size_t> idx;
  idx.reserve(n * (a + b));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < a; ++i) idx.push_back(s * a + i);
    for (std::size_t i = 0; i < b; ++i) idx.push_back(n * a + s * b + i);
  }
  return idx;
}

std::vector<std::size_t> slice_index(std::size_t n, std::size_t stride, std::size_t offset,
                                     std::size_t count) {
  std::vector<std::size_t> idx;
  idx.reserve(n * count);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < count; ++i) idx.push_back(s * stride + offset + i);
  return idx;
}

Tensor project_eos(Graph& g, const Backbone& bb, const Tensor& tokens, const TextInput& in,
                   bool project) {
  std::vector<std::size_t> rows(in.count);
  for (std::size_t s = 0; s < in.count; ++s) rows[s] = s * in.len + in.eos[s];
  const Tensor h = layer_norm(g, gather_rows(g, tokens, rows), bb.text_final);
  return project ? matmul(g, h, bb.text_projection) : h;
}

}  // namespace

AttrAttnBlock make_attr_attn_block(std::size_t d, std::size_t heads, std::size_t hidden,
                                   double output_scale, Rng& rng) {
  AttrAttnBlock b;
  b.ln_attn = make_layer_norm(d);
  b.attn = make_attention(d, heads, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  b.ln_ffn = make_layer_norm(d);
  b.ffn = make_ffn(d, hidden, rng);
  for (Tensor* w : {&b.attn.out.weight, &b.ffn.down.weight})
    for (auto& x : w->values_mut()) x *= output_scale;
  return b;
}

void zero_output_maps(AttrAttnBlock& block) {
  zero(block.attn.out);
  zero(block.ffn.down);
}

void append_params(ParamList& out, const std::string& prefix, const AttrAttnBlock& b) {
  append_params(out, prefix + ".ln_attn", b.ln_attn);
  append_params(out, prefix + ".attn", b.attn);
  append_params(out, prefix + ".ln_ffn", b.ln_ffn);
  append_params(out, prefix + ".ffn", b.ffn);
}

Tensor attr_aware_attention(Graph& g, const Tensor& prompts, const Tensor& knowledge,
                            const AttrAttnBlock& block, std::size_t batch,
                            std::span<const std::uint8_t> key_valid) {
  if (batch == 0 || prompts.rows() % batch != 0 || knowledge.rows() % batch != 0)
    throw DimensionError("attribute attention: " + shape_str(prompts.shape()) + " prompts and " +
                         shape_str(knowledge.shape()) + " knowledge rows do not split into " +
                         std::to_string(batch) + " sequences");
  AttentionLayout lay;
  lay.batch = batch;
  lay.query_len = prompts.rows() / batch;
  lay.key_len = knowledge.rows() / batch;
  lay.key_valid.assign(key_valid.begin(), key_valid.end());
  const Tensor q = layer_norm(g, prompts, block.ln_attn);
  const Tensor kv = layer_norm(g, knowledge, block.ln_attn);
  const Tensor a = add(g, multi_head_attention(g, q, kv, kv, block.attn, lay).output, prompts);
  return add(g, ffn(g, layer_norm(g, a, block.ln_ffn), block.ffn), a);
}

TextInput make_text_input(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                          std::span<const TokenSequence> seqs) {
  if (seqs.empty()) throw DimensionError("text input needs at least one sequence");
  if (vocab.dim() != bb.dim())
    throw DimensionError("vocabulary width " + std::to_string(vocab.dim()) +
                         " differs from backbone width " + std::to_string(bb.dim()));
  TextInput in;
  in.count = seqs.size();
  for (const auto& s : seqs) in.len = std::max(in.len, s.content_length());
  if (in.len > bb.spec.max_positions)
    throw TruncationError(in.len, bb.spec.max_positions);
  std::vector<std::size_t> ids, pos;
  for (const auto& s : seqs) {
    in.eos.push_back(s.eos_position);
    const auto valid = s.valid_mask();
    for (std::size_t i = 0; i < in.len; ++i) {
      ids.push_back(s.ids.at(i));
      pos.push_back(i);
      in.valid.push_back(valid[i]);
    }
  }
  in.tokens = add(g, embed(g, ids, vocab), gather_rows(g, bb.text_positions, pos));
  return in;
}

std::size_t TextTrace::fusion_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerTrace& l) { return l.fused; }));
}

Tensor encode_prompted(Graph& g, const Backbone& bb, const TextInput& in, const Tensor& prompts,
                       std::span<const AttrAttnBlock> blocks, std::size_t depth,
                       TextTrace* trace) {
  const std::size_t L = bb.text_layers.size();
  if (depth > L)
    throw ConfigError("injection depth " + std::to_string(depth) + " exceeds the " +
                      std::to_string(L) + " text layers");
  const std::size_t M = prompts.defined() ? prompts.rows() : 0;
  if (depth > 0 && M == 0) throw ConfigError("fusion needs at least one prompt token");
  if (blocks.size() < depth)
    throw ConfigError("injection depth " + std::to_string(depth) + " needs " +
                      std::to_string(depth) + " attention blocks, got " +
                      std::to_string(blocks.size()));
  if (M > 0 && prompts.cols() != bb.dim())
    throw DimensionError("prompt width " + std::to_string(prompts.cols()) +
                         " differs from backbone width " + std::to_string(bb.dim()));
  if (trace) trace->layers.clear();

  const std::size_t C = in.count, n = in.len, T = M + n;
  AttentionLayout lay;
  lay.batch = C;
  lay.query_len = lay.key_len = T;
  lay.causal = true;
  lay.key_valid.reserve(C * T);
  for (std::size_t s = 0; s < C; ++s) {
    lay.key_valid.insert(lay.key_valid.end(), M, 1);
    lay.key_valid.insert(lay.key_valid.end(), in.valid.begin() + static_cast<std::ptrdiff_t>(s * n),
                         in.valid.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
  }

  Tensor E = in.tokens;
  Tensor P;
  std::vector<std::size_t> join, take_p, take_e;
  if (M > 0) {
    std::vector<std::size_t> rep(C * M);
    for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i % M;
    P = gather_rows(g, prompts, rep);
    join = interleave_index(C, M, n);
    take_p = slice_index(C, T, 0, M);
    take_e = slice_index(C, T, M, n);
  }
  for (std::size_t i = 0; i < L; ++i) {
    const bool fuse = i < depth;
    if (fuse) P = attr_aware_attention(g, P, E, blocks[i], C, in.valid);
    if (trace) trace->layers.push_back({fuse, P, E});
    if (M == 0) {
      E = transformer_layer(g, E, bb.text_layers[i], lay);
      continue;
    }
    const Tensor X = transformer_layer(g, gather_rows(g, concat_rows(g, P, E), join),
                                       bb.text_layers[i], lay);
    P = gather_rows(g, X, take_p);
    E = gather_rows(g, X, take_e);
  }
  return project_eos(g, bb, E, in, true);
}

Tensor encode_frozen(Graph& g, const Backbone& bb, const TextInput& in) {
  return encode_prompted(g, bb, in, Tensor(), {}, 0);
}

Tensor encode_hidden(Graph& g, const Backbone& bb, const TextInput& in) {
  AttentionLayout lay;
  lay.batch = in.count;
  lay.query_len = lay.key_len = in.len;
  lay.causal = true;
  lay.key_valid = in.valid;
  Tensor E = in.tokens;
  for (const auto& layer : bb.text_layers) E = transformer_layer(g, E, layer, lay);
  return project_eos(g, bb, E, in, false);
}

}  // namespace inpk
