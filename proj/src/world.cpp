#include "inpk/world.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "inpk/errors.hpp"
#include "inpk/text_encoder.hpp"

namespace inpk {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_mat(const Tensor& t) {
  return Eigen::Map<const Mat>(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                               static_cast<Eigen::Index>(t.cols()));
}

void store(Tensor& dst, const Mat& m) {
  auto v = dst.values_mut();
  if (v.size() != static_cast<std::size_t>(m.size())) throw DimensionError("projection size mismatch");
  std::copy(m.data(), m.data() + m.size(), v.begin());
}

Mat ridge_fit(const Mat& h, const Mat& target, double lambda) {
  Mat a = h.transpose() * h;
  a.diagonal().array() += lambda;
  return a.ldlt().solve(h.transpose() * target);
}

void fit_projections(World& w) {
  const auto& a = w.spec.align;
  if (a.concepts == 0 || a.min_words == 0 || a.max_words < a.min_words)
    throw ConfigError("alignment needs concepts and a valid word-count range");
  const std::size_t d = w.backbone.dim();
  const std::uint64_t seed = w.spec.world_seed;

  // A private lexicon so concept words never collide with corpus words.
  const std::size_t lex_size = 400;
  std::vector<std::string> lex(lex_size);
  std::vector<std::vector<double>> rows(lex_size);
  for (std::size_t i = 0; i < lex_size; ++i) {
    lex[i] = "_concept" + std::to_string(i);
    rows[i] = word_vector(lex[i], d, seed);
  }
  for (const auto& f : a.filler) {
    if (std::find(lex.begin(), lex.end(), f) != lex.end()) continue;
    lex.push_back(f);
    rows.push_back(word_vector(f, d, seed));
  }
  const Vocabulary vocab(d, seed, lex, rows);

  Rng rng(a.seed);
  std::uniform_int_distribution<std::size_t> count(a.min_words, a.max_words);
  std::uniform_int_distribution<std::size_t> filler_count(2, 4);
  std::bernoulli_distribution use_filler(a.filler_rate);
  if (a.filler_rate < 0.0 || a.filler_rate > 1.0) throw ConfigError("filler_rate must lie in [0, 1]");
  if (a.filler_rate > 0.0 && a.filler.empty()) throw ConfigError("filler_rate > 0 needs filler words");
  std::vector<double> offset = word_vector("_offset", d, seed);
  const double on = std::sqrt(std::inner_product(offset.begin(), offset.end(), offset.begin(), 0.0));
  for (auto& x : offset) x /= on;

  const std::size_t Q = a.concepts;
  Mat ht(Q, d), hv(Q, d), target(Q, d);
  const std::size_t chunk = 64;
  for (std::size_t start = 0; start < Q; start += chunk) {
    const std::size_t n = std::min(chunk, Q - start);
    std::vector<TokenSequence> seqs;
    std::vector<Tensor> images;
    for (std::size_t q = 0; q < n; ++q) {
      std::vector<std::size_t> pick(lex_size);  // concept words only
      std::iota(pick.begin(), pick.end(), 0);
      const std::size_t k = count(rng);
      std::vector<std::size_t> chosen;
      std::sample(pick.begin(), pick.end(), std::back_inserter(chosen), k, rng);
      std::shuffle(chosen.begin(), chosen.end(), rng);
      KnowledgeEntry e;
      e.class_name = lex[chosen[0]];
      if (use_filler(rng)) {
        std::uniform_int_distribution<std::size_t> fw(0, a.filler.size() - 1);
        std::string prefix;
        for (std::size_t i = 0, nf = filler_count(rng); i < nf; ++i) prefix += a.filler[fw(rng)] + " ";
        e.class_name = prefix + e.class_name;
      }
      std::vector<std::vector<double>> vecs;
      std::vector<double> mean(d, 0.0);
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        if (i > 0) e.attributes.push_back(lex[chosen[i]]);
        vecs.push_back(rows[chosen[i]]);
        for (std::size_t j = 0; j < d; ++j) mean[j] += rows[chosen[i]][j];
      }
      const double mn = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
      for (std::size_t j = 0; j < d; ++j)
        target(static_cast<Eigen::Index>(start + q), static_cast<Eigen::Index>(j)) =
            a.feature_scale * (a.semantic * mean[j] / mn + offset[j]);
      seqs.push_back(tokenize_knowledge(e, vocab, w.backbone.spec.max_positions));
      images.push_back(w.images.synth_from_vectors(vecs, a.seed * 1000003 + start + q, a.noise));
    }
    Graph g(GradMode::inference);
    const auto in = make_text_input(g, w.backbone, vocab, seqs);
    const Mat t = to_mat(encode_hidden(g, w.backbone, in));
    const Mat v = to_mat(encode_image_hidden(g, w.backbone, stack_images(images), n));
    ht.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = t;
    hv.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = v;
  }
  const double lam = a.ridge * static_cast<double>(Q);
  store(w.backbone.text_projection, ridge_fit(ht, target, lam));
  store(w.backbone.vision_projection, ridge_fit(hv, target, lam));
}

}  // namespace

World build_world(const WorldSpec& spec) {
  Backbone bb = make_backbone(spec.backbone);
  ImageWorldSpec is = spec.images;
  is.seed = spec.world_seed;
  World w{spec, bb, ImageWorld(is, bb)};
  w.spec.images = is;
  fit_projections(w);
  return w;
}

Vocabulary world_vocabulary(const World& world, std::span<const KnowledgeCorpus* const> corpora,
                            std::span<const std::string> extra_texts) {
  VocabSpec vs;
  vs.dim = world.backbone.dim();
  vs.world_seed = world.spec.world_seed;
  vs.name_semantics = world.spec.name_semantics;
  return build_vocabulary(corpora, extra_texts, vs);
}

}  // namespace inpk
