#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "inpk/errors.hpp"
#include "inpk/train_eval.hpp"
#include "../support/testing.hpp"

using namespace inpk;
using namespace inpk::testing;

namespace {

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Top-1 accuracy of a model on an explicit sample list.
double accuracy_on(const Task& task, const PromptModel& m, std::span<const std::size_t> classes,
                   std::span<const SampleRecord> samples) {
  const auto& bb = task.world.backbone;
  const auto data = render(task, task.corpus, classes, samples);
  Graph g(GradMode::inference);
  const Tensor f = text_features(g, bb, task.vocab, m, knowledge_tokens(task.corpus, classes, task.vocab, m.cfg));
  const Tensor x = image_features(g, bb, m, data.images, data.count);
  const auto pred = argmax_rows(class_probs(g, x, f, task.cfg.model.loss.tau));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < data.count; ++i) ok += pred[i] == data.labels[i];
  return static_cast<double>(ok) / static_cast<double>(data.count);
}

}  // namespace

TEST_SUITE("harmonic mean") {
  TEST_CASE("reference values") {
    CHECK(harmonic_mean(0.8269, 0.6322) == doctest::Approx(0.716566).epsilon(1e-5));
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
    CHECK(harmonic_mean(0.0, 0.5) == 0.0);
    CHECK_THROWS_AS(harmonic_mean(-0.1, 0.5), DomainError);
  }

  TEST_CASE("HM(x, x) = x and HM never exceeds the arithmetic mean") {
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
      const double b = u(rng), n = u(rng);
      CHECK(harmonic_mean(b, b) == doctest::Approx(b).epsilon(1e-15));
      CHECK(harmonic_mean(b, n) <= (b + n) / 2 + 1e-15);
      CHECK(harmonic_mean(b, n) >= std::min(b, n) - 1e-15);
      CHECK(harmonic_mean(b, n) == harmonic_mean(n, b));
    }
  }
}

TEST_SUITE("class split") {
  TEST_CASE("ten classes at one half") {
    const auto s = split_classes(10, 0.5, 3);
    CHECK(s.base.size() == 5);
    CHECK(s.novel.size() == 5);
    std::set<std::size_t> all(s.base.begin(), s.base.end());
    all.insert(s.novel.begin(), s.novel.end());
    CHECK(all.size() == 10);
    CHECK(*all.rbegin() == 9);
    const auto again = split_classes(10, 0.5, 3);
    CHECK(again.base == s.base);
    CHECK(again.novel == s.novel);
  }

  TEST_CASE("splits are disjoint and exhaustive for any size") {
    for (std::size_t n = 2; n < 40; ++n)
      for (double fr : {0.3, 0.5, 0.7}) {
        const auto nb = static_cast<std::size_t>(std::lround(fr * static_cast<double>(n)));
        if (nb == 0 || nb >= n) {
          CHECK_THROWS_AS(split_classes(n, fr, n), ConfigError);
          continue;
        }
        const auto s = split_classes(n, fr, n);
        std::vector<std::size_t> all = s.base;
        all.insert(all.end(), s.novel.begin(), s.novel.end());
        std::sort(all.begin(), all.end());
        CHECK(all == iota_n(n));
      }
  }

  TEST_CASE("invalid fractions") {
    CHECK_THROWS_AS(split_classes(10, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(split_classes(10, 1.0, 1), ConfigError);
  }
}

TEST_SUITE("training") {
  TEST_CASE("parameter census") {
    const Task task = make_task(tiny_config());
    Rng rng(1);
    const auto m = make_prompt_model(task.cfg.model, task.world.backbone, rng);
    // d = 8, M = 2, J = 2, hidden 8: prompts 16; per block 2 layer norms (32),
    // four 8x8 maps with bias (288), FFN (72 + 72); projection 72.
    CHECK(param_count(m.params()) == 16 + 2 * 464 + 72);
    for (std::size_t M : {0, 1, 3})
      for (std::size_t J : {0, 1, 2})
        for (bool proj : {false, true}) {
          if (M == 0 && J > 0) continue;
          ModelConfig cfg = task.cfg.model;
          cfg.prompt_len = M;
          cfg.depth = J;
          cfg.projection = proj;
          Rng r(2);
          CHECK(param_count(make_prompt_model(cfg, task.world.backbone, r).params()) ==
                expected_param_count(cfg, 8));
        }
  }

  TEST_CASE("the frozen backbone has no trainable parameters in the census") {
    const Task task = make_task(tiny_config());
    const auto tr = train(task, 1, task.split.base, 1);
    std::set<const void*> frozen;
    for (const auto& nt : task.world.backbone.text_params()) CHECK_FALSE(nt.tensor.requires_grad());
    for (const auto& nt : task.world.backbone.vision_params()) CHECK_FALSE(nt.tensor.requires_grad());
    for (const auto& nt : tr.model.params()) CHECK(nt.tensor.requires_grad());
  }

  TEST_CASE("training is a pure function of the seed") {
    const Task task = make_task(tiny_config());
    const auto a = train(task, 5, task.split.base, 2), b = train(task, 5, task.split.base, 2);
    const auto pa = a.model.params(), pb = b.model.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(pa[i].tensor, pb[i].tensor));
    CHECK(a.rng_state == b.rng_state);
    for (std::size_t s = 0; s < a.log.size(); ++s) CHECK(a.log[s].loss_total == b.log[s].loss_total);
    const auto c = train(task, 6, task.split.base, 2);
    CHECK_FALSE(bit_equal(pa[0].tensor, c.model.params()[0].tensor));
  }

  TEST_CASE("knowledge off, fusion off and no text loss still trains") {
    ExperimentConfig cfg = tiny_config();
    cfg.model.knowledge = false;
    cfg.model.fusion = false;
    cfg.model.loss.lambda = 0.0;
    cfg.optim.steps = 10;
    const Task task = make_task(cfg);
    std::size_t calls = 0;
    const auto tr = train(task, 1, task.split.base, 2, [&](const StepLog&) { ++calls; });
    CHECK(calls == 10);
    REQUIRE(tr.log.size() == 10);
    for (const auto& s : tr.log) {
      CHECK(std::isfinite(s.loss_total));
      CHECK(s.loss_total == s.loss_ce);
    }
    CHECK(tr.model.blocks.empty());
  }

  TEST_CASE("the logged loss is CE plus lambda times the text loss") {
    const Task task = make_task(tiny_config());
    const auto tr = train(task, 1, task.split.base, 2);
    for (const auto& s : tr.log)
      CHECK(s.loss_total == doctest::Approx(s.loss_ce + 25.0 * s.loss_text).epsilon(1e-12));
  }

  TEST_CASE("a long run memorizes its training images") {
    ExperimentConfig cfg = small_config();
    cfg.model.loss.lambda = 0.0;
    cfg.optim.steps = 150;
    cfg.optim.lr = 0.1;
    const Task task = make_task(cfg);
    const auto tr = train(task, 3, task.split.base, cfg.shots);
    const auto samples = train_samples(task.split.base, cfg.shots, 3);
    CHECK(accuracy_on(task, tr.model, task.split.base, samples) >= 0.9);
    CHECK(tr.log.back().loss_ce < tr.log.front().loss_ce);
  }

  TEST_CASE("images without class signal score at chance") {
    // Every class lists the same attribute set, so images are exchangeable
    // across classes. 6 classes x 100 images: accuracy must sit inside the
    // two-sided 99.9% binomial interval around 1/6.
    ExperimentConfig cfg = small_config();
    cfg.corpus = {7, 6, 4, 4, 1.0};
    cfg.test_per_class = 100;
    const Task task = make_task(cfg);
    for (std::size_t i = 1; i < task.corpus.size(); ++i) {
      auto a = task.corpus.entries[i].attributes, b = task.corpus.entries[0].attributes;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      REQUIRE(a == b);
    }
    const auto all = iota_n(6);
    const double p = 1.0 / 6.0, sd = std::sqrt(p * (1 - p) / 600.0);
    CHECK(std::abs(accuracy(task, task.corpus, nullptr, all, 21) - p) < 3.29 * sd);
    const auto tr = train(task, 1, all, 2);
    CHECK(std::abs(accuracy(task, task.corpus, &tr.model, all, 21) - p) < 3.29 * sd);
  }

  TEST_CASE("divergence raises a numerical error") {
    ExperimentConfig cfg = tiny_config();
    cfg.optim.lr = 1e200;
    cfg.optim.clip_norm = 0.0;
    cfg.optim.steps = 20;
    const Task task = make_task(cfg);
    CHECK_THROWS_AS(train(task, 1, task.split.base, 2), NumericalError);
  }

  TEST_CASE("configuration checks") {
    auto bad = [](auto edit) {
      ExperimentConfig cfg = tiny_config();
      edit(cfg);
      return cfg;
    };
    CHECK_THROWS_AS(validate(bad([](auto& c) { c.shots = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](auto& c) { c.seeds.clear(); })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](auto& c) { c.optim.lr = 0; })), ConfigError);
    CHECK_THROWS_AS(validate(bad([](auto& c) { c.base_fraction = 1.0; })), ConfigError);
    CHECK_THROWS_AS(make_task(bad([](auto& c) { c.model.depth = 5; })), ConfigError);
    CHECK_THROWS_AS(make_task(bad([](auto& c) { c.model.heads = 3; })), ConfigError);
    CHECK_THROWS_AS(parse_protocol("zero_shot"), ConfigError);
    for (auto p : {Protocol::base_to_novel, Protocol::few_shot, Protocol::cross_dataset})
      CHECK(parse_protocol(protocol_name(p)) == p);
  }
}

TEST_SUITE("evaluation") {
  TEST_CASE("reports are consistent with their rows") {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1, 2};
    const Task task = make_task(cfg);
    const auto rep = run_protocol(task, Protocol::base_to_novel, "tiny");
    REQUIRE(rep.rows.size() == 2);
    double b = 0, n = 0;
    for (const auto& r : rep.rows) {
      REQUIRE(r.novel);
      REQUIRE(r.hm);
      CHECK(*r.hm == harmonic_mean(r.base, *r.novel));
      CHECK(r.base >= 0.0);
      CHECK(r.base <= 1.0);
      b += r.base;
      n += *r.novel;
    }
    CHECK(rep.mean_base == doctest::Approx(b / 2).epsilon(1e-15));
    CHECK(*rep.mean_hm == harmonic_mean(rep.mean_base, *rep.mean_novel));
    CHECK(rep.label == "tiny");
  }

  TEST_CASE("few-shot has no novel split; cross-dataset reads the target") {
    const Task task = make_task(tiny_config());
    const auto fs = train_for_protocol(task, Protocol::few_shot, 1);
    CHECK(fs.classes == iota_n(task.corpus.size()));
    const auto r = evaluate(task, fs.model, Protocol::few_shot, 1);
    CHECK_FALSE(r.novel.has_value());
    CHECK_FALSE(r.hm.has_value());
    const auto bn = train_for_protocol(task, Protocol::base_to_novel, 1);
    CHECK(bn.classes == task.split.base);
    const auto x = evaluate(task, bn.model, Protocol::cross_dataset, 1);
    CHECK(x.novel.has_value());
  }

  TEST_CASE("evaluation is deterministic") {
    const Task task = make_task(tiny_config());
    const auto tr = train(task, 1, task.split.base, 2);
    CHECK(accuracy(task, task.corpus, &tr.model, task.split.novel, 4) ==
          accuracy(task, task.corpus, &tr.model, task.split.novel, 4));
    CHECK(feature_drift(task, tr.model, task.split.base) >= 0.0);
  }
}

TEST_SUITE("ablations") {
  TEST_CASE("component preset: five rows up to the full model") {
    const auto rows = ablation_rows("components", tiny_config());
    REQUIRE(rows.size() == 5);
    CHECK(rows.back().label == "full");
    CHECK(rows.back().knowledge);
    CHECK(rows.back().fusion);
    CHECK(rows.back().projection);
    std::set<std::tuple<bool, bool, bool>> seen;
    for (const auto& r : rows) {
      CHECK(r.cfg.model.knowledge == r.knowledge);
      CHECK(r.cfg.model.fusion == r.fusion);
      CHECK(r.cfg.model.projection == r.projection);
      seen.insert({r.knowledge, r.fusion, r.projection});
    }
    CHECK(seen.size() == 5);
  }

  TEST_CASE("depth preset starts at one fused layer and stays in range") {
    ExperimentConfig cfg = tiny_config();
    cfg.world.backbone.text_layers = 12;
    const auto rows = ablation_rows("depth", cfg);
    REQUIRE_FALSE(rows.empty());
    CHECK(rows.front().cfg.model.depth == 1);
    std::vector<std::size_t> js;
    for (const auto& r : rows) js.push_back(r.cfg.model.depth);
    CHECK(js == std::vector<std::size_t>{1, 3, 6, 9, 12});
    const auto small = ablation_rows("depth", tiny_config());
    for (const auto& r : small) CHECK(r.cfg.model.depth <= 2);
  }

  TEST_CASE("pki preset pairs each baseline with its knowledge variant") {
    const auto rows = ablation_rows("pki", tiny_config());
    REQUIRE(rows.size() == 4);
    for (std::size_t i = 0; i < 4; i += 2) {
      CHECK_FALSE(rows[i].knowledge);
      CHECK_FALSE(rows[i].fusion);
      CHECK(rows[i + 1].knowledge);
      CHECK(rows[i + 1].fusion);
      CHECK(rows[i + 1].cfg.model.depth == 1);
      CHECK(rows[i + 1].label == rows[i].label + "+pki");
      CHECK(rows[i].cfg.model.loss.lambda == rows[i + 1].cfg.model.loss.lambda);
    }
    CHECK(rows[0].cfg.model.loss.lambda == 0.0);
    CHECK(rows[2].cfg.model.loss.lambda == 25.0);
  }

  TEST_CASE("unknown presets list the known ones") {
    try {
      ablation_rows("nope", tiny_config());
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      for (const auto& p : ablation_presets()) CHECK(std::string(e.what()).find(p) != std::string::npos);
    }
  }

  TEST_CASE("paired t-test against reference values") {
    // Reference p-values from an independent Student-t implementation.
    const std::vector<double> a1{0.7, 0.72, 0.69, 0.71, 0.73}, b1{0.5, 0.55, 0.51, 0.6, 0.52};
    CHECK(paired_t_pvalue(a1, b1) == doctest::Approx(0.0002868511698910437).epsilon(1e-9));
    const std::vector<double> a2{1, 2, 3, 4, 5}, b2(5, 0.0);
    CHECK(paired_t_pvalue(a2, b2) == doctest::Approx(0.0066177997818413475).epsilon(1e-9));
    const std::vector<double> a3{0.1, 0.3, 0.2}, b3{0.2, 0.1, 0.25};
    CHECK(paired_t_pvalue(a3, b3) == doctest::Approx(0.4370059211651288).epsilon(1e-9));
    // swapping the samples mirrors the one-sided p-value
    CHECK(paired_t_pvalue(b1, a1) == doctest::Approx(1.0 - 0.0002868511698910437).epsilon(1e-9));
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(paired_t_pvalue(one, one), DimensionError);
  }
}
