#include "inpk/train_eval.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "inpk/errors.hpp"

namespace inpk {
namespace {

constexpr std::uint64_t kTestSalt = 0x7e57'0001;
constexpr std::uint64_t kTargetSalt = 0x7e57'0002;
constexpr std::size_t kEvalChunk = 128;

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer over a simple combination.
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull) * 0xBF58476D1CE4E5B9ull ^
                    (c + 1) * 0x94D049BB133111EBull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<std::size_t> all_classes(const KnowledgeCorpus& c) {
  std::vector<std::size_t> ids(c.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

Tensor select_images(const LabeledImages& data, std::span<const std::size_t> idx) {
  const std::size_t block = data.images.rows() / data.count, d = data.images.cols();
  const auto src = data.images.values();
  std::vector<double> v;
  v.reserve(idx.size() * block * d);
  for (std::size_t i : idx)
    v.insert(v.end(), src.begin() + static_cast<std::ptrdiff_t>(i * block * d),
             src.begin() + static_cast<std::ptrdiff_t>((i + 1) * block * d));
  return Tensor({idx.size() * block, d}, std::move(v));
}

// Frozen template-path features for the classes (constant across training).
Tensor reference_features(const Task& task, const KnowledgeCorpus& corpus,
                          std::span<const std::size_t> classes) {
  Graph g(GradMode::inference);
  const auto seqs =
      template_tokens(corpus, classes, task.vocab, task.tmpl, task.cfg.model.context_len);
  return frozen_text_features(g, task.world.backbone, task.vocab, seqs).detach();
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::base_to_novel: return "base_to_novel";
    case Protocol::few_shot: return "few_shot";
    case Protocol::cross_dataset: return "cross_dataset";
  }
  return "?";
}

Protocol parse_protocol(const std::string& name) {
  for (auto p : {Protocol::base_to_novel, Protocol::few_shot, Protocol::cross_dataset})
    if (protocol_name(p) == name) return p;
  throw ConfigError("unknown protocol '" + name +
                    "' (expected base_to_novel, few_shot or cross_dataset)");
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.model.loss);
  if (cfg.shots == 0 || cfg.few_shot_shots == 0) throw ConfigError("shots must be at least 1");
  if (cfg.test_per_class == 0) throw ConfigError("test_per_class must be at least 1");
  if (!(cfg.base_fraction > 0.0 && cfg.base_fraction < 1.0))
    throw ConfigError("base_fraction must lie strictly between 0 and 1");
  if (cfg.seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(cfg.optim.lr > 0.0) || cfg.optim.batch == 0)
    throw ConfigError("learning rate and batch size must be positive");
  if (!(cfg.optim.clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
}

double harmonic_mean(double base, double novel) {
  if (base < 0.0 || novel < 0.0) throw DomainError("accuracies must be non-negative");
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

ClassSplit split_classes(std::size_t num_classes, double fraction_base, std::uint64_t seed) {
  if (!(fraction_base > 0.0 && fraction_base < 1.0))
    throw ConfigError("base fraction must lie strictly between 0 and 1");
  const auto nb = static_cast<std::size_t>(
      std::lround(fraction_base * static_cast<double>(num_classes)));
  if (nb == 0 || nb >= num_classes)
    throw ConfigError("a split of " + std::to_string(num_classes) + " classes at " +
                      std::to_string(fraction_base) + " leaves one side empty");
  std::vector<std::size_t> ids(num_classes);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ClassSplit s;
  s.base.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nb));
  s.novel.assign(ids.begin() + static_cast<std::ptrdiff_t>(nb), ids.end());
  std::sort(s.base.begin(), s.base.end());
  std::sort(s.novel.begin(), s.novel.end());
  return s;
}

Task make_task(const ExperimentConfig& cfg, const KnowledgeCorpus* source,
               const KnowledgeCorpus* target) {
  validate(cfg);
  KnowledgeCorpus corpus = source ? *source : synthesize_corpus(cfg.corpus);
  KnowledgeCorpus tgt = target ? *target : synthesize_corpus(cfg.target_corpus);
  World world = build_world(cfg.world);
  const KnowledgeCorpus* both[] = {&corpus, &tgt};
  const std::string extra[] = {cfg.template_text};
  PromptTemplate tmpl(cfg.template_text);
  Vocabulary vocab = world_vocabulary(world, both, extra);
  validate(cfg.model, world.backbone);
  ClassSplit split = split_classes(corpus.size(), cfg.base_fraction, cfg.split_seed);
  return Task{cfg, std::move(corpus), std::move(tgt), std::move(world), std::move(vocab),
              std::move(split), std::move(tmpl)};
}

std::vector<SampleRecord> train_samples(std::span<const std::size_t> classes, std::size_t shots,
                                        std::uint64_t run_seed) {
  std::vector<SampleRecord> out;
  for (std::size_t c : classes)
    for (std::size_t s = 0; s < shots; ++s)
      out.push_back({"train_c" + std::to_string(c) + "_s" + std::to_string(s), c,
                     mix(run_seed, c, s)});
  return out;
}

std::vector<SampleRecord> test_samples(std::span<const std::size_t> classes, std::size_t per_class,
                                       std::uint64_t salt) {
  std::vector<SampleRecord> out;
  for (std::size_t c : classes)
    for (std::size_t s = 0; s < per_class; ++s)
      out.push_back({"test_c" + std::to_string(c) + "_" + std::to_string(s), c,
                     mix(salt, c, s + 1'000'000)});
  return out;
}

LabeledImages render(const Task& task, const KnowledgeCorpus& corpus,
                     std::span<const std::size_t> classes, std::span<const SampleRecord> samples) {
  if (samples.empty()) throw ConfigError("no samples to render");
  std::vector<Tensor> imgs;
  LabeledImages out;
  for (const auto& s : samples) {
    auto it = std::find(classes.begin(), classes.end(), s.class_id);
    if (it == classes.end())
      throw LookupError("sample '" + s.sample_id + "' has a class outside the class set");
    out.labels.push_back(static_cast<std::size_t>(it - classes.begin()));
    imgs.push_back(task.world.images.synth_image(s.class_id, corpus, task.vocab, s.seed));
  }
  out.images = stack_images(imgs);
  out.count = samples.size();
  return out;
}

TrainResult train(const Task& task, std::uint64_t seed, std::span<const std::size_t> classes,
                  std::size_t shots, const std::function<void(const StepLog&)>& on_step) {
  const auto& cfg = task.cfg;
  const auto& bb = task.world.backbone;
  Rng rng(seed);
  TrainResult r;
  r.classes.assign(classes.begin(), classes.end());
  r.model = make_prompt_model(cfg.model, bb, rng);
  const auto params = r.model.params();

  const auto samples = train_samples(classes, shots, seed);
  const LabeledImages data = render(task, task.corpus, classes, samples);
  const Tensor f_ref = reference_features(task, task.corpus, classes);
  const auto seqs = knowledge_tokens(task.corpus, classes, task.vocab, cfg.model);

  const std::size_t n = data.count, bs = std::min(cfg.optim.batch, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& lc = cfg.model.loss;
  for (std::size_t step = 0; step < cfg.optim.steps; ++step) {
    for (std::size_t i = 0; i < bs; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(bs));
    std::vector<std::size_t> labels(bs);
    for (std::size_t i = 0; i < bs; ++i) labels[i] = data.labels[idx[i]];

    Graph g;
    const Tensor ft = text_features(g, bb, task.vocab, r.model, seqs);
    const Tensor x = image_features(g, bb, r.model, select_images(data, idx), bs);
    const Tensor probs = class_probs(g, x, ft, lc.tau);
    const Tensor ce = loss_ce(g, probs, labels);
    const Tensor lt = loss_text(g, ft, f_ref);
    const Tensor total = loss_total(g, ce, lt, lc.lambda);
    StepLog log{step, ce.item(), lt.item(), total.item()};
    if (!finite(log.loss_total))
      throw NumericalError("loss became non-finite at step " + std::to_string(step));
    r.log.push_back(log);
    if (on_step) on_step(log);
    if (params.empty()) continue;

    for (auto p : params) p.tensor.zero_grad();
    g.backward(total);
    double norm2 = 0.0;
    for (const auto& p : params)
      for (double v : p.tensor.grad()) norm2 += v * v;
    if (!finite(norm2))
      throw NumericalError("gradient became non-finite at step " + std::to_string(step));
    const double clip = cfg.optim.clip_norm > 0.0 && std::sqrt(norm2) > cfg.optim.clip_norm
                            ? cfg.optim.clip_norm / std::sqrt(norm2)
                            : 1.0;
    const double lr = cfg.optim.lr * 0.5 *
                      (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                      static_cast<double>(cfg.optim.steps)));
    bool ok = true;
    for (auto p : params) {
      auto v = p.tensor.values_mut();
      const auto gr = p.tensor.grad();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] -= lr * clip * gr[i];
        ok = ok && finite(v[i]);
      }
    }
    // an overflowing update would otherwise surface later as a masked-attention error
    if (!ok) throw NumericalError("parameters became non-finite at step " + std::to_string(step));
  }
  std::ostringstream os;
  os << rng;
  r.rng_state = os.str();
  return r;
}

double accuracy(const Task& task, const KnowledgeCorpus& corpus, const PromptModel* model,
                std::span<const std::size_t> classes, std::uint64_t salt) {
  if (classes.empty()) throw ConfigError("empty evaluation class set");
  const auto& bb = task.world.backbone;
  Graph g(GradMode::inference);
  Tensor f;
  if (model) {
    f = text_features(g, bb, task.vocab, *model, knowledge_tokens(corpus, classes, task.vocab, model->cfg));
  } else {
    f = frozen_text_features(
        g, bb, task.vocab,
        template_tokens(corpus, classes, task.vocab, task.tmpl, task.cfg.model.context_len));
  }
  const auto samples = test_samples(classes, task.cfg.test_per_class, salt);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    const std::size_t m = std::min(kEvalChunk, samples.size() - start);
    const auto data = render(task, corpus, classes, std::span(samples).subspan(start, m));
    Graph ge(GradMode::inference);
    const Tensor x = model ? image_features(ge, bb, *model, data.images, m)
                           : frozen_image_features(ge, bb, data.images, m);
    const auto pred = argmax_rows(class_probs(ge, x, f, task.cfg.model.loss.tau));
    for (std::size_t i = 0; i < m; ++i) correct += pred[i] == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double feature_drift(const Task& task, const PromptModel& model,
                     std::span<const std::size_t> classes) {
  Graph g(GradMode::inference);
  const Tensor ft = text_features(g, task.world.backbone, task.vocab, model,
                                  knowledge_tokens(task.corpus, classes, task.vocab, model.cfg));
  return loss_text(g, ft, reference_features(task, task.corpus, classes)).item();
}

void finalize(EvalReport& report) {
  const double n = static_cast<double>(report.rows.size());
  if (report.rows.empty()) return;
  double b = 0, nv = 0;
  bool has_novel = true;
  for (const auto& r : report.rows) {
    b += r.base;
    has_novel = has_novel && r.novel.has_value();
    if (r.novel) nv += *r.novel;
  }
  report.mean_base = b / n;
  if (has_novel) {
    report.mean_novel = nv / n;
    report.mean_hm = harmonic_mean(report.mean_base, *report.mean_novel);
  }
}

SeedReport evaluate(const Task& task, const PromptModel& model, Protocol protocol,
                    std::uint64_t seed) {
  SeedReport r;
  r.protocol = protocol;
  r.seed = seed;
  switch (protocol) {
    case Protocol::base_to_novel:
      r.base = accuracy(task, task.corpus, &model, task.split.base, kTestSalt);
      r.novel = accuracy(task, task.corpus, &model, task.split.novel, kTestSalt);
      break;
    case Protocol::few_shot:
      r.base = accuracy(task, task.corpus, &model, all_classes(task.corpus), kTestSalt);
      return r;
    case Protocol::cross_dataset:
      if (task.target.size() == 0) throw ConfigError("cross-dataset evaluation needs a target corpus");
      r.base = accuracy(task, task.corpus, &model, all_classes(task.corpus), kTestSalt);
      r.novel = accuracy(task, task.target, &model, all_classes(task.target), kTargetSalt);
      break;
  }
  r.hm = harmonic_mean(r.base, *r.novel);
  return r;
}

TrainResult train_for_protocol(const Task& task, Protocol protocol, std::uint64_t seed,
                               const std::function<void(const StepLog&)>& on_step) {
  switch (protocol) {
    case Protocol::base_to_novel: return train(task, seed, task.split.base, task.cfg.shots, on_step);
    case Protocol::few_shot:
      return train(task, seed, all_classes(task.corpus), task.cfg.few_shot_shots, on_step);
    case Protocol::cross_dataset:
      return train(task, seed, all_classes(task.corpus), task.cfg.shots, on_step);
  }
  throw ConfigError("unknown protocol");
}

EvalReport run_protocol(const Task& task, Protocol protocol, const std::string& label) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport rep;
  rep.label = label.empty() ? task.cfg.name : label;
  for (auto seed : task.cfg.seeds) {
    const TrainResult tr = train_for_protocol(task, protocol, seed);
    rep.rows.push_back(evaluate(task, tr.model, protocol, seed));
  }
  finalize(rep);
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::vector<std::string> ablation_presets() {
  return {"components", "depth", "prompt-and-attrs", "pki"};
}

std::vector<AblationRow> ablation_rows(const std::string& preset, const ExperimentConfig& base) {
  std::vector<AblationRow> rows;
  auto variant = [&](std::string label, bool know, bool fuse, bool proj) {
    AblationRow r{std::move(label), know, fuse, proj, base};
    r.cfg.model.knowledge = know;
    r.cfg.model.fusion = fuse;
    r.cfg.model.projection = proj;
    r.cfg.name = r.label;
    return r;
  };
  if (preset == "components") {
    rows.push_back(variant("prompts+projection", false, false, true));
    rows.push_back(variant("knowledge+projection", true, false, true));
    rows.push_back(variant("attention+projection", false, true, true));
    rows.push_back(variant("knowledge+attention", true, true, false));
    rows.push_back(variant("full", true, true, true));
  } else if (preset == "depth") {
    const std::size_t L = base.world.backbone.text_layers;
    std::set<std::size_t> seen;
    for (std::size_t of12 : {1, 3, 6, 9, 12}) {
      const std::size_t j = std::max<std::size_t>(1, (of12 * L + 11) / 12);
      if (!seen.insert(j).second) continue;
      auto r = variant("depth=" + std::to_string(j), true, true, true);
      r.cfg.model.depth = j;
      rows.push_back(std::move(r));
    }
  } else if (preset == "prompt-and-attrs") {
    for (std::size_t m : {1, 2, 4, 6, 8}) {
      auto r = variant("prompts=" + std::to_string(m), true, true, true);
      r.cfg.model.prompt_len = m;
      rows.push_back(std::move(r));
    }
    for (std::size_t n : {1, 2, 4, 8}) {
      if (n > base.corpus.attributes) continue;
      auto r = variant("attributes=" + std::to_string(n), true, true, true);
      r.cfg.model.attributes = n;
      rows.push_back(std::move(r));
    }
  } else if (preset == "pki") {
    // Plain learnable prompts, without and with the text regularizer, each
    // with and without knowledge fused once before the first layer.
    for (double lam : {0.0, base.model.loss.lambda}) {
      const std::string tag = lam == 0.0 ? "prompts" : "prompts+text-reg";
      auto off = variant(tag, false, false, false);
      off.cfg.model.loss.lambda = lam;
      auto on = variant(tag + "+pki", true, true, false);
      on.cfg.model.loss.lambda = lam;
      on.cfg.model.depth = 1;
      rows.push_back(std::move(off));
      rows.push_back(std::move(on));
    }
  } else {
    std::string known;
    for (const auto& p : ablation_presets()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("unknown ablation preset '" + preset + "' (known: " + known + ")");
  }
  return rows;
}

std::vector<EvalReport> run_ablation_suite(const std::string& preset, const ExperimentConfig& base) {
  std::vector<EvalReport> out;
  for (const auto& row : ablation_rows(preset, base)) {
    const Task task = make_task(row.cfg);
    out.push_back(run_protocol(task, Protocol::base_to_novel, row.label));
  }
  return out;
}

double paired_t_pvalue(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw DimensionError("paired test needs two equal-length samples of at least 2");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) return mean > 0.0 ? 0.0 : 1.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::cdf(boost::math::complement(dist, t));
}

}  // namespace inpk
