#pragma once
// The trainable prompt state (P_t, the fusion blocks, the text-to-vision map)
// and the forward passes that combine it with a frozen backbone.

#include <span>
#include <vector>

#include "inpk/backbone.hpp"
#include "inpk/knowledge.hpp"
#include "inpk/objective.hpp"
#include "inpk/text_encoder.hpp"
#include "inpk/vision.hpp"
#include "inpk/vocab.hpp"

namespace inpk {

struct ModelConfig {
  std::size_t prompt_len = 6;   // M
  std::size_t depth = 3;        // J, fused layers from the bottom
  std::size_t attributes = 8;   // N, knowledge words used per class
  std::size_t context_len = 24;
  std::size_t heads = 4;
  std::size_t block_hidden = 64;
  bool knowledge = true;
  bool fusion = true;
  bool projection = true;
  double prompt_init_std = 1.0;  // word-embedding scale
  double block_output_scale = 0.05;
  ProjInit projection_init = ProjInit::gaussian;
  LossConfig loss;

  // Number of layers that actually fuse: depth when fusion is on, else 0.
  std::size_t fused_depth() const { return fusion ? depth : 0; }
};

// Throws ConfigError for impossible settings against a backbone.
void validate(const ModelConfig& cfg, const Backbone& bb);

struct PromptModel {
  ModelConfig cfg;
  Tensor prompts;  // [M x d]; undefined when M = 0
  std::vector<AttrAttnBlock> blocks;
  TextToVisionProj projection;  // present iff cfg.projection and M > 0

  bool has_projection() const { return cfg.projection && cfg.prompt_len > 0; }
  // Trainable tensors in a fixed order with stable names.
  ParamList params() const;
};

PromptModel make_prompt_model(const ModelConfig& cfg, const Backbone& bb, Rng& rng);
// |P_t| + sum |blocks| + |F| from the configuration alone.
std::size_t expected_param_count(const ModelConfig& cfg, std::size_t dim);

// Knowledge-path token sequences (class name + the first N attributes, or the
// bare name with knowledge off) for the given classes.
std::vector<TokenSequence> knowledge_tokens(const KnowledgeCorpus& corpus,
                                            std::span<const std::size_t> classes,
                                            const Vocabulary& vocab, const ModelConfig& cfg);
// Hand-written template sequences for the frozen reference path.
std::vector<TokenSequence> template_tokens(const KnowledgeCorpus& corpus,
                                           std::span<const std::size_t> classes,
                                           const Vocabulary& vocab, const PromptTemplate& tmpl,
                                           std::size_t context_len);

Tensor text_features(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                     const PromptModel& model, std::span<const TokenSequence> seqs,
                     TextTrace* trace = nullptr);
Tensor frozen_text_features(Graph& g, const Backbone& bb, const Vocabulary& vocab,
                            std::span<const TokenSequence> seqs);
Tensor image_features(Graph& g, const Backbone& bb, const PromptModel& model, const Tensor& images,
                      std::size_t batch);
Tensor frozen_image_features(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch);

}  // namespace inpk
