#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "inpk/errors.hpp"
#include "inpk/vision.hpp"
#include "../support/testing.hpp"

using namespace inpk;
using namespace inpk::testing;

namespace {

struct Fixture {
  Task task = make_task(tiny_config());
  const Backbone& bb = task.world.backbone;
  const ImageWorld& images = task.world.images;

  Tensor image(std::size_t cls, std::uint64_t seed) const {
    return images.synth_image(cls, task.corpus, task.vocab, seed);
  }

  PromptModel model(std::size_t M, ProjInit init = ProjInit::gaussian, bool projection = true) const {
    ModelConfig cfg = task.cfg.model;
    cfg.prompt_len = M;
    if (M == 0) cfg.depth = 0;
    cfg.projection = projection;
    cfg.projection_init = init;
    Rng rng(9);
    return make_prompt_model(cfg, bb, rng);
  }
};

// Reorders the patch rows of one [(1 + P) x d] image, keeping the class token first.
Tensor permute_patches(const Tensor& im, const std::vector<std::size_t>& perm) {
  const std::size_t d = im.cols();
  std::vector<double> v(im.values().begin(), im.values().end());
  for (std::size_t p = 0; p < perm.size(); ++p)
    for (std::size_t j = 0; j < d; ++j) v[(1 + p) * d + j] = im.at(1 + perm[p], j);
  return Tensor(im.shape(), std::move(v));
}

}  // namespace

TEST_SUITE("text-to-vision map") {
  TEST_CASE("identity map copies the text prompts") {
    Rng rng(1);
    const auto F = make_text_to_vision(8, ProjInit::identity, rng);
    const Tensor P = random_tensor({3, 8}, rng, 1.0, false);
    Graph g;
    CHECK(bit_equal(project_prompts(g, P, F), P));
  }

  TEST_CASE("zero map leaves only the bias") {
    Rng rng(2);
    auto F = make_text_to_vision(8, ProjInit::zero, rng);
    for (auto& b : F.map.bias.values_mut()) b = 0.25;
    const Tensor P = random_tensor({3, 8}, rng, 1.0, false);
    Graph g;
    const Tensor v = project_prompts(g, P, F);
    for (double x : v.values()) CHECK(x == 0.25);
  }

  TEST_CASE("the map is affine") {
    Rng rng(3);
    auto F = make_text_to_vision(8, ProjInit::gaussian, rng);
    for (auto& b : F.map.bias.values_mut()) b = 0.1;
    for (int t = 0; t < 100; ++t) {
      const Tensor x = random_tensor({2, 8}, rng, 1.0, false), y = random_tensor({2, 8}, rng, 1.0, false);
      const double a = std::uniform_real_distribution<double>(-2, 2)(rng);
      Graph g;
      const Tensor mix = add(g, scale(g, x, a), scale(g, y, 1.0 - a));
      const Tensor lhs = project_prompts(g, mix, F);
      const Tensor rhs = add(g, scale(g, project_prompts(g, x, F), a),
                             scale(g, project_prompts(g, y, F), 1.0 - a));
      CHECK(max_abs_diff(lhs.values(), rhs.values()) < 1e-12);
    }
  }
}

TEST_SUITE("image encoder") {
  TEST_CASE("no prompts is the frozen path, bit for bit") {
    Fixture f;
    const Tensor im = f.image(0, 4);
    const auto m = f.model(0);
    Graph g(GradMode::inference);
    CHECK(bit_equal(image_features(g, f.bb, m, im, 1), frozen_image_features(g, f.bb, im, 1)));
  }

  TEST_CASE("projection off also leaves images unprompted") {
    Fixture f;
    const Tensor im = f.image(1, 4);
    const auto m = f.model(2, ProjInit::gaussian, false);
    Graph g(GradMode::inference);
    CHECK(bit_equal(image_features(g, f.bb, m, im, 1), frozen_image_features(g, f.bb, im, 1)));
  }

  TEST_CASE("vision prompts change the feature") {
    Fixture f;
    const Tensor im = f.image(1, 4);
    const auto m = f.model(2);
    Graph g(GradMode::inference);
    CHECK_FALSE(bit_equal(image_features(g, f.bb, m, im, 1), frozen_image_features(g, f.bb, im, 1)));
  }

  TEST_CASE("batched encoding equals one image at a time") {
    Fixture f;
    const auto m = f.model(2);
    const std::vector<Tensor> ims{f.image(0, 1), f.image(1, 2), f.image(2, 3)};
    Graph g(GradMode::inference);
    const Tensor all = image_features(g, f.bb, m, stack_images(ims), 3);
    for (std::size_t b = 0; b < 3; ++b) {
      const Tensor one = image_features(g, f.bb, m, ims[b], 1);
      for (std::size_t j = 0; j < f.bb.dim(); ++j) CHECK(std::abs(one.at(0, j) - all.at(b, j)) < 1e-12);
    }
  }

  TEST_CASE("patch order matters only through the position table") {
    Fixture f;
    const Tensor im = f.image(2, 5);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    REQUIRE(perm.size() == f.bb.spec.patches);
    const Tensor shuffled = permute_patches(im, perm);
    {
      Graph g(GradMode::inference);
      const Tensor a = frozen_image_features(g, f.bb, im, 1), b = frozen_image_features(g, f.bb, shuffled, 1);
      CHECK(max_abs_diff(a.values(), b.values()) > 1e-9);
    }
    Backbone flat = f.bb;
    flat.vision_positions = Tensor(f.bb.vision_positions.shape());
    Graph g(GradMode::inference);
    const Tensor a = frozen_image_features(g, flat, im, 1), b = frozen_image_features(g, flat, shuffled, 1);
    CHECK(max_abs_diff(a.values(), b.values()) < 1e-12);
  }

  TEST_CASE("malformed image batches") {
    Fixture f;
    Graph g;
    CHECK_THROWS_AS(frozen_image_features(g, f.bb, f.image(0, 1), 2), DimensionError);
    CHECK_THROWS_AS(frozen_image_features(g, f.bb, Tensor({1 + f.bb.spec.patches, f.bb.dim() + 1}), 1),
                    DimensionError);
  }
}

TEST_SUITE("vision gradients") {
  TEST_CASE("gradient reaches the map but never the frozen backbone") {
    Fixture f;
    const auto m = f.model(2);
    Graph g;
    g.backward(sum(g, image_features(g, f.bb, m, f.image(0, 1), 1)));
    const auto proj = m.projection.map.weight.grad();
    double n = 0;
    for (double v : proj) n += v * v;
    CHECK(n > 0.0);
    for (const auto& nt : f.bb.vision_params()) CHECK_FALSE(nt.tensor.has_grad());
    CHECK_FALSE(f.bb.vision_class_token.has_grad());
  }

  TEST_CASE("the text prompts receive gradient through the vision side") {
    Fixture f;
    const auto with = f.model(2);
    auto without = with;
    without.cfg.projection = false;
    const auto seqs = knowledge_tokens(f.task.corpus, std::vector<std::size_t>{0, 1, 2}, f.task.vocab, with.cfg);
    const Tensor im = f.image(0, 1);
    auto grad_of = [&](const PromptModel& m) {
      Tensor p = m.prompts;
      p.zero_grad();
      Graph g;
      const Tensor x = image_features(g, f.bb, m, im, 1);
      const Tensor t = text_features(g, f.bb, f.task.vocab, m, seqs);
      g.backward(sum(g, matmul(g, x, transpose(g, t))));
      return std::vector<double>(p.grad().begin(), p.grad().end());
    };
    const auto a = grad_of(with), b = grad_of(without);
    CHECK(max_abs_diff(a, b) > 1e-9);
  }

  TEST_CASE("image-feature gradients against central differences") {
    Fixture f;
    const auto m = f.model(2);
    const Tensor im = f.image(1, 2);
    Rng rng(4);
    const Tensor w = random_tensor({1, f.bb.dim()}, rng, 1.0, false);
    const auto reps = check_op({m.prompts, m.projection.map.weight, m.projection.map.bias},
                               [&](Graph& g) { return sum(g, mul(g, image_features(g, f.bb, m, im, 1), w)); },
                               1e-5, 1e-5);
    for (const auto& r : reps) CHECK(r.worst_rel < 1e-4);
  }
}

TEST_SUITE("synthetic images") {
  TEST_CASE("noise-free images ignore the seed; noisy ones are seed-deterministic") {
    Fixture f;
    const auto& e = f.task.corpus.entries[0];
    CHECK(bit_equal(f.images.synth_image(e, f.task.vocab, 1, 0.0), f.images.synth_image(e, f.task.vocab, 2, 0.0)));
    CHECK(bit_equal(f.image(0, 7), f.image(0, 7)));
    CHECK_FALSE(bit_equal(f.image(0, 7), f.image(0, 8)));
  }

  TEST_CASE("image layout: class token, then attribute anchors cycling in sorted order") {
    Fixture f;
    const auto& e = f.task.corpus.entries[1];
    const Tensor im = f.images.synth_image(e, f.task.vocab, 1, 0.0);
    REQUIRE(im.rows() == 1 + f.bb.spec.patches);
    for (std::size_t j = 0; j < f.bb.dim(); ++j) CHECK(im.at(0, j) == f.bb.vision_class_token.values()[j]);
    auto attrs = e.attributes;
    std::sort(attrs.begin(), attrs.end());
    for (std::size_t p = 0; p < f.bb.spec.patches; ++p) {
      const auto a = f.images.anchor(f.task.vocab.phrase_vector(attrs[p % attrs.size()]));
      for (std::size_t j = 0; j < f.bb.dim(); ++j) CHECK(im.at(1 + p, j) == a[j]);
    }
  }

  TEST_CASE("saliency weights lie in (0, 2) and are 1 when disabled") {
    Fixture f;
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
      const auto v = word_vector("w" + std::to_string(t), f.bb.dim(), 3);
      const double s = f.images.saliency(v);
      CHECK(s > 0.0);
      CHECK(s < 2.0);
    }
    ImageWorldSpec flat = f.images.spec();
    flat.saliency = 0.0;
    const ImageWorld w(flat, f.bb);
    CHECK(w.saliency(word_vector("x", f.bb.dim(), 3)) == 1.0);
  }

  TEST_CASE("the frozen path beats chance on held-out images") {
    // 6 classes x 40 images; chance is 1/6. Require the accuracy to clear the
    // one-sided 99.9% binomial bound of a chance-level classifier.
    ExperimentConfig cfg = small_config();
    cfg.test_per_class = 40;
    const Task task = make_task(cfg);
    std::vector<std::size_t> all(task.corpus.size());
    std::iota(all.begin(), all.end(), 0);
    const double acc = accuracy(task, task.corpus, nullptr, all, 17);
    const double n = 6.0 * 40.0, p = 1.0 / 6.0;
    CHECK(acc > p + 3.09 * std::sqrt(p * (1 - p) / n));
  }

  TEST_CASE("sample manifests round-trip") {
    const std::vector<SampleRecord> s{{"a", 0, 11}, {"b", 3, 18446744073709551615ull}};
    std::stringstream io;
    write_manifest(io, s);
    CHECK(parse_manifest(io) == s);
    std::istringstream bad("x\ty\t1\n");
    CHECK_THROWS(parse_manifest(bad));
  }
}
