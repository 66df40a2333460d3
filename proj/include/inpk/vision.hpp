#pragma once
// Vision side: prompted image encoding, the text-to-vision prompt map, and the
// synthetic image generator.

#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "inpk/backbone.hpp"
#include "inpk/knowledge.hpp"
#include "inpk/nn.hpp"
#include "inpk/vocab.hpp"

namespace inpk {

// Single affine map turning text prompts into vision prompts.
struct TextToVisionProj {
  Linear map;  // [d x d], bias [d]
};

enum class ProjInit { identity, gaussian, zero };

TextToVisionProj make_text_to_vision(std::size_t d, ProjInit init, Rng& rng);
void append_params(ParamList& out, const std::string& prefix, const TextToVisionProj& p);

Tensor project_prompts(Graph& g, const Tensor& text_prompts, const TextToVisionProj& p);

// images: batch stacked token blocks of [(1 + patches) x d], class token first.
// vision_prompts: [M x d] appended after every image's patches, or undefined.
// Returns [batch x d] features read at the class-token position.
Tensor encode_image(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch,
                    const Tensor& vision_prompts);
// Same, stopping at the normalized class-token state (no projection).
Tensor encode_image_hidden(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch);

struct ImageWorldSpec {
  std::uint64_t seed = 11;
  double noise = 0.5;
  // Attribute a is drawn with weight 2*sigmoid(saliency * <u, e_a>) on a
  // fixed direction u: some attributes are visually loud, others faint.
  double saliency = 3.0;
  // Attributes listed for more than one class of a corpus are drawn at this
  // weight: generic traits are visually faint next to distinctive ones.
  double common_weight = 1.0;
};

// Patch j of an image is the anchor of attribute (j mod N) in sorted order
// plus isotropic noise; an attribute's anchor is a fixed linear image of its
// word embedding, times its saliency.
class ImageWorld {
 public:
  ImageWorld(const ImageWorldSpec& spec, const Backbone& bb);

  const ImageWorldSpec& spec() const { return spec_; }
  std::vector<double> anchor(const std::vector<double>& phrase_vec, bool weighted = true) const;
  double saliency(const std::vector<double>& phrase_vec) const;

  // [(1 + patches) x d] tokens for the class. noise < 0 uses ImageWorldSpec::noise.
  // `common` holds the attributes drawn at common_weight.
  Tensor synth_image(const KnowledgeEntry& entry, const Vocabulary& vocab, std::uint64_t seed,
                     double noise = -1.0, const std::set<std::string>* common = nullptr) const;
  Tensor synth_image(std::size_t class_id, const KnowledgeCorpus& corpus, const Vocabulary& vocab,
                     std::uint64_t seed, double noise = -1.0) const;
  // Image of an explicit anchor list (unweighted), used when fitting the
  // backbone's projections.
  Tensor synth_from_vectors(std::span<const std::vector<double>> phrase_vecs, std::uint64_t seed,
                            double noise) const;

 private:
  Tensor assemble(std::vector<std::vector<double>> anchors, std::uint64_t seed, double noise) const;

  ImageWorldSpec spec_;
  std::size_t dim_ = 0;
  std::size_t patches_ = 0;
  std::vector<double> class_token_;
  std::vector<double> map_;        // [d x d]
  std::vector<double> direction_;  // unit [d]
};

// Stacks images into one [(n*(1+patches)) x d] leaf.
Tensor stack_images(std::span<const Tensor> images);

// Line-delimited sample records: sample_id<TAB>class_id<TAB>seed.
struct SampleRecord {
  std::string sample_id;
  std::size_t class_id = 0;
  std::uint64_t seed = 0;
  bool operator==(const SampleRecord&) const = default;
};

void write_manifest(std::ostream& out, std::span<const SampleRecord> samples);
std::vector<SampleRecord> parse_manifest(std::istream& in);

}  // namespace inpk
