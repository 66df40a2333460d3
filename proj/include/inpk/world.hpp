#pragma once
// A complete frozen environment: backbone, image generator and the fitted
// text/vision projections that stand in for contrastive pretraining.
//
// The projections are fitted by ridge regression so that, over a large set of
// random word-bag concepts, both encoders map a concept to the same target:
//   t(c) = scale * (semantic * unit(mean word vector of c) + offset)
// where offset is a fixed unit direction shared by every concept and filler
// words are left out of the mean.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "inpk/backbone.hpp"
#include "inpk/knowledge.hpp"
#include "inpk/vision.hpp"
#include "inpk/vocab.hpp"

namespace inpk {

struct AlignSpec {
  std::size_t concepts = 1024;
  std::size_t min_words = 2;
  std::size_t max_words = 8;
  double ridge = 1e-3;  // per concept
  double feature_scale = 0.1;
  double semantic = 0.3;
  double noise = 0.5;
  std::uint64_t seed = 5;
  // Share of concept captions that start with 2-4 filler words ("a photo of
  // ..."). Filler carries no meaning, so the fit learns to look past it.
  double filler_rate = 0.5;
  std::vector<std::string> filler{"a", "an", "the", "photo", "picture", "of", "image"};
};

struct WorldSpec {
  std::uint64_t world_seed = 11;
  double name_semantics = 0.8;
  BackboneSpec backbone;
  ImageWorldSpec images;  // images.seed is overwritten with world_seed
  AlignSpec align;
};

struct World {
  WorldSpec spec;
  Backbone backbone;
  ImageWorld images;
};

World build_world(const WorldSpec& spec);

// Vocabulary over the corpora and extra texts, keyed by the world's seed.
Vocabulary world_vocabulary(const World& world, std::span<const KnowledgeCorpus* const> corpora,
                            std::span<const std::string> extra_texts);

}  // namespace inpk
