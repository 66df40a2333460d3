#include "inpk/model.hpp"

#include <algorithm>

#include "inpk/errors.hpp"

namespace inpk {

void validate(const ModelConfig& cfg, const Backbone& bb) {
  validate(cfg.loss);
  const std::size_t L = bb.text_layers.size();
  if (cfg.fusion && cfg.depth > L)
    throw ConfigError("injection depth " + std::to_string(cfg.depth) + " exceeds the " +
                      std::to_string(L) + " text layers");
  if (cfg.fused_depth() > 0 && cfg.prompt_len == 0)
    throw ConfigError("fusion needs at least one prompt token");
  if (cfg.heads == 0 || bb.dim() % cfg.heads != 0)
    throw ConfigError("embedding width " + std::to_string(bb.dim()) + " is not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  if (cfg.context_len > bb.spec.max_positions)
    throw ConfigError("context length " + std::to_string(cfg.context_len) + " exceeds the " +
                      std::to_string(bb.spec.max_positions) + " text positions");
  if (!(cfg.prompt_init_std >= 0.0)) throw ConfigError("prompt init scale must be non-negative");
}

ParamList PromptModel::params() const {
  ParamList out;
  if (prompts.defined()) out.push_back({"prompts", prompts});
  for (std::size_t i = 0; i < blocks.size(); ++i)
    append_params(out, "block" + std::to_string(i), blocks[i]);
  if (has_projection()) append_params(out, "projection", projection);
  return out;
}

PromptModel make_prompt_model(const ModelConfig& cfg, const Backbone& bb, Rng& rng) {
  validate(cfg, bb);
  const std::size_t d = bb.dim();
  PromptModel m;
  m.cfg = cfg;
  if (cfg.prompt_len > 0) m.prompts = Tensor::randn({cfg.prompt_len, d}, cfg.prompt_init_std, rng);
  for (std::size_t i = 0; i < cfg.fused_depth(); ++i)
    m.blocks.push_back(
        make_attr_attn_block(d, cfg.heads, cfg.block_hidden, cfg.block_output_scale, rng));
  if (m.has_projection()) m.projection = make_text_to_vision(d, cfg.projection_init, rng);
  set_requires_grad(m.params(), true);
  return m;
}

std::size_t expected_param_count(const ModelConfig& cfg, std::size_t d) {
  const std::size_t h = cfg.block_hidden;
  const std::size_t block = 2 * (2 * d)        // two layer norms
                            + 4 * (d * d + d)  // q, k, v, out
                            + (d * h + h) + (h * d + d);
  std::size_t n = cfg.prompt_len * d + cfg.fused_depth() * block;
  if (cfg.projection && cfg.prompt_len > 0) n += d * d + d;
  return n;
}

std::vector<TokenSequence> knowledge_tokens(const KnowledgeCorpus& corpus,
                                            std::span<const std::size_t> classes,
                                            const Vocabulary& vocab, const ModelConfig& cfg) {
  std::vector<TokenSequence> out;
  out.reserve(classes.size());
  for (std::size_t c : classes) {
    if (c >= corpus.size()) throw LookupError("class " + std::to_string(c) + " not in corpus");
    KnowledgeEntry e = corpus.entries[c];
    const std::size_t keep = cfg.knowledge ? std::min(cfg.attributes, e.attributes.size()) : 0;
    e.attributes.resize(keep);
    out.push_back(tokenize_knowledge(e, vocab, cfg.context_len, cfg.prompt_len));
  }
  return out;
}

std::vector<TokenSequence> template_tokens(const KnowledgeCorpus& corpus,
                                           std::span<const std::size_t> classes,
                                           const Vocabulary& vocab, const PromptTemplate& tmpl,
                                           std::size_t context_len) {
  std::vector<TokenSequence> out;
  out.reserve(classes.size());
  for (std::size_t c : classes) {
    if (c >= corpus.size()) throw LookupError("class " + std::to_string(c) + " not in corpus");
    out.push_back(tokenize_prompt(tmpl, corpus.entries[c].class_name, vocab, context_len));
  }
  return out;
}

Tensor text_features(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                     const PromptModel& model, std::span<const TokenSequence> seqs,
                     TextTrace* trace) {
  const auto in = make_text_input(g, bb, vocab, seqs);
  return encode_prompted(g, bb, in, model.prompts, model.blocks, model.cfg.fused_depth(), trace);
}

Tensor frozen_text_features(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                            std::span<const TokenSequence> seqs) {
  return encode_frozen(g, bb, make_text_input(g, bb, vocab, seqs));
}

Tensor image_features(Graph& g, const Backbone& bb, const PromptModel& model, const Tensor& images,
                      std::size_t batch) {
  Tensor pv;
  if (model.has_projection()) pv = project_prompts(g, model.prompts, model.projection);
  return encode_image(g, bb, images, batch, pv);
}

Tensor frozen_image_features(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch) {
  return encode_image(g, bb, images, batch, Tensor());
}

}  // namespace inpk
