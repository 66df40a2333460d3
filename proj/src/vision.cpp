#include "inpk/vision.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "inpk/errors.hpp"
#include "inpk/ops.hpp"

namespace inpk {

TextToVisionProj make_text_to_vision(std::size_t d, ProjInit init, Rng& rng) {
  TextToVisionProj p;
  p.map.bias = Tensor({d});
  switch (init) {
    case ProjInit::gaussian:
      p.map.weight = Tensor::randn({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
      break;
    case ProjInit::identity:
      p.map.weight = Tensor({d, d});
      for (std::size_t i = 0; i < d; ++i) p.map.weight.values_mut()[i * d + i] = 1.0;
      break;
    case ProjInit::zero:
      p.map.weight = Tensor({d, d});
      break;
  }
  return p;
}

void append_params(ParamList& out, const std::string& prefix, const TextToVisionProj& p) {
  append_params(out, prefix, p.map);
}

Tensor project_prompts(Graph& g, const Tensor& text_prompts, const TextToVisionProj& p) {
  return linear(g, text_prompts, p.map);
}

namespace {

Tensor run_vision(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch,
                  const Tensor& prompts, bool project) {
  const std::size_t d = bb.dim(), n = 1 + bb.spec.patches;
  if (batch == 0 || images.rows() != batch * n || images.cols() != d)
    throw DimensionError("images " + shape_str(images.shape()) + " are not " +
                         std::to_string(batch) + " blocks of [" + std::to_string(n) + "x" +
                         std::to_string(d) + "]");
  std::vector<std::size_t> pos(batch * n);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % n;
  Tensor X = add(g, images, gather_rows(g, bb.vision_positions, pos));
  std::size_t T = n;
  if (prompts.defined() && prompts.rows() > 0) {
    if (prompts.cols() != d)
      throw DimensionError("vision prompts " + shape_str(prompts.shape()) + " do not match width " +
                           std::to_string(d));
    const std::size_t M = prompts.rows();
    T = n + M;
    std::vector<std::size_t> join;
    join.reserve(batch * T);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n; ++i) join.push_back(b * n + i);
      for (std::size_t i = 0; i < M; ++i) join.push_back(batch * n + i);
    }
    X = gather_rows(g, concat_rows(g, X, prompts), join);
  }
  AttentionLayout lay;
  lay.batch = batch;
  lay.query_len = lay.key_len = T;
  for (const auto& layer : bb.vision_layers) X = transformer_layer(g, X, layer, lay);
  std::vector<std::size_t> cls(batch);
  for (std::size_t b = 0; b < batch; ++b) cls[b] = b * T;
  const Tensor h = layer_norm(g, gather_rows(g, X, cls), bb.vision_final);
  return project ? matmul(g, h, bb.vision_projection) : h;
}

}  // namespace

Tensor encode_image(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch,
                    const Tensor& vision_prompts) {
  return run_vision(g, bb, images, batch, vision_prompts, true);
}

Tensor encode_image_hidden(Graph& g, const Backbone& bb, const Tensor& images, std::size_t batch) {
  return run_vision(g, bb, images, batch, Tensor(), false);
}

ImageWorld::ImageWorld(const ImageWorldSpec& spec, const Backbone& bb)
    : spec_(spec), dim_(bb.dim()), patches_(bb.spec.patches) {
  const auto cls = bb.vision_class_token.values();
  class_token_.assign(cls.begin(), cls.end());
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ull + 1);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
  map_.resize(dim_ * dim_);
  for (auto& x : map_) x = n(rng);
  direction_.resize(dim_);
  for (auto& x : direction_) x = n(rng);
  const double norm = std::sqrt(std::inner_product(direction_.begin(), direction_.end(),
                                                   direction_.begin(), 0.0));
  for (auto& x : direction_) x /= norm;
}

double ImageWorld::saliency(const std::vector<double>& v) const {
  if (spec_.saliency == 0.0) return 1.0;
  const double s = std::inner_product(direction_.begin(), direction_.end(), v.begin(), 0.0);
  return 2.0 / (1.0 + std::exp(-spec_.saliency * s));
}

std::vector<double> ImageWorld::anchor(const std::vector<double>& v, bool weighted) const {
  if (v.size() != dim_) throw DimensionError("anchor input has the wrong width");
  const double w = weighted ? saliency(v) : 1.0;
  std::vector<double> a(dim_, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += map_[i * dim_ + j] * v[j];
    a[i] = w * s;
  }
  return a;
}

Tensor ImageWorld::assemble(std::vector<std::vector<double>> anchors, std::uint64_t seed,
                            double noise) const {
  if (anchors.empty()) throw ValidationError("an image needs at least one anchor");
  std::vector<double> t;
  t.reserve((1 + patches_) * dim_);
  t.insert(t.end(), class_token_.begin(), class_token_.end());
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t p = 0; p < patches_; ++p) {
    const auto& a = anchors[p % anchors.size()];
    for (std::size_t j = 0; j < dim_; ++j) t.push_back(a[j] + (noise > 0.0 ? noise * n(rng) : 0.0));
  }
  return Tensor({1 + patches_, dim_}, std::move(t));
}

Tensor ImageWorld::synth_image(const KnowledgeEntry& entry, const Vocabulary& vocab,
                               std::uint64_t seed, double noise,
                               const std::set<std::string>* common) const {
  if (entry.attributes.empty())
    throw ValidationError("class '" + entry.class_name + "' has no attributes to render");
  auto attrs = entry.attributes;
  std::sort(attrs.begin(), attrs.end());
  std::vector<std::vector<double>> anchors;
  for (const auto& a : attrs) {
    auto v = anchor(vocab.phrase_vector(a));
    if (common && common->count(a))
      for (auto& x : v) x *= spec_.common_weight;
    anchors.push_back(std::move(v));
  }
  return assemble(std::move(anchors), seed, noise < 0.0 ? spec_.noise : noise);
}

Tensor ImageWorld::synth_image(std::size_t class_id, const KnowledgeCorpus& corpus,
                               const Vocabulary& vocab, std::uint64_t seed, double noise) const {
  if (class_id >= corpus.size())
    throw LookupError("class " + std::to_string(class_id) + " not in a corpus of " +
                      std::to_string(corpus.size()));
  if (spec_.common_weight == 1.0) return synth_image(corpus.entries[class_id], vocab, seed, noise);
  std::map<std::string, int> uses;
  for (const auto& e : corpus.entries)
    for (const auto& a : e.attributes) ++uses[a];
  std::set<std::string> common;
  for (const auto& [a, n] : uses)
    if (n > 1) common.insert(a);
  return synth_image(corpus.entries[class_id], vocab, seed, noise, &common);
}

Tensor ImageWorld::synth_from_vectors(std::span<const std::vector<double>> vecs,
                                      std::uint64_t seed, double noise) const {
  std::vector<std::vector<double>> anchors;
  for (const auto& v : vecs) anchors.push_back(anchor(v, false));
  return assemble(std::move(anchors), seed, noise);
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw DimensionError("no images to stack");
  const std::size_t r = images[0].rows(), c = images[0].cols();
  std::vector<double> v;
  v.reserve(images.size() * r * c);
  for (const auto& im : images) {
    if (im.rows() != r || im.cols() != c) throw DimensionError("images differ in shape");
    v.insert(v.end(), im.values().begin(), im.values().end());
  }
  return Tensor({images.size() * r, c}, std::move(v));
}

void write_manifest(std::ostream& out, std::span<const SampleRecord> samples) {
  for (const auto& s : samples) out << s.sample_id << '\t' << s.class_id << '\t' << s.seed << '\n';
}

std::vector<SampleRecord> parse_manifest(std::istream& in) {
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleRecord r;
    std::string cls, seed, extra;
    if (!std::getline(ls, r.sample_id, '\t') || !std::getline(ls, cls, '\t') ||
        !std::getline(ls, seed, '\t') || std::getline(ls, extra, '\t'))
      throw ParseError("expected sample_id<TAB>class_id<TAB>seed", lineno);
    try {
      std::size_t used = 0;
      r.class_id = std::stoull(cls, &used);
      if (used != cls.size()) throw std::invalid_argument(cls);
      r.seed = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw ParseError("class id and seed must be unsigned integers", lineno);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace inpk
