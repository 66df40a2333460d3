#pragma once
// Few-shot training, the three evaluation protocols and the ablation suites.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "inpk/knowledge.hpp"
#include "inpk/model.hpp"
#include "inpk/vocab.hpp"
#include "inpk/world.hpp"

namespace inpk {

enum class Protocol { base_to_novel, few_shot, cross_dataset };
std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& name);  // ConfigError if unknown

struct OptimConfig {
  double lr = 0.1;
  std::size_t steps = 200;
  std::size_t batch = 32;
  double clip_norm = 1.0;  // global gradient-norm cap; 0 disables
};

struct ExperimentConfig {
  std::string name = "default";
  SynthSpec corpus{7, 20, 8, 40, 0.5};
  SynthSpec target_corpus{8, 20, 8, 40, 0.5};  // cross-dataset target
  WorldSpec world;
  ModelConfig model;
  OptimConfig optim;
  std::size_t shots = 16;
  std::size_t few_shot_shots = 4;
  std::size_t test_per_class = 50;
  double base_fraction = 0.5;
  std::uint64_t split_seed = 3;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string template_text = "a photo of a {}";
};

void validate(const ExperimentConfig& cfg);

// Harmonic mean 2bn/(b+n); 0 when both are 0.
double harmonic_mean(double base, double novel);

struct ClassSplit {
  std::vector<std::size_t> base;
  std::vector<std::size_t> novel;
};
ClassSplit split_classes(std::size_t num_classes, double fraction_base, std::uint64_t seed);

// Everything shared across seeds: corpora, vocabulary, frozen world, split.
struct Task {
  ExperimentConfig cfg;
  KnowledgeCorpus corpus;
  KnowledgeCorpus target;  // empty unless loaded or synthesized for cross-dataset
  World world;
  Vocabulary vocab;
  ClassSplit split;
  PromptTemplate tmpl;
};

// target: optional pre-loaded cross-dataset corpus; synthesized otherwise.
Task make_task(const ExperimentConfig& cfg, const KnowledgeCorpus* source = nullptr,
               const KnowledgeCorpus* target = nullptr);

struct LabeledImages {
  Tensor images;  // stacked token blocks
  std::vector<std::size_t> labels;  // index into the class list
  std::size_t count = 0;
};

// Deterministic sample seeds for training shots and test images.
std::vector<SampleRecord> train_samples(std::span<const std::size_t> classes, std::size_t shots,
                                        std::uint64_t run_seed);
std::vector<SampleRecord> test_samples(std::span<const std::size_t> classes, std::size_t per_class,
                                       std::uint64_t salt);
LabeledImages render(const Task& task, const KnowledgeCorpus& corpus,
                     std::span<const std::size_t> classes, std::span<const SampleRecord> samples);

struct StepLog {
  std::size_t step = 0;
  double loss_ce = 0;
  double loss_text = 0;
  double loss_total = 0;
};

struct TrainResult {
  PromptModel model;
  std::vector<StepLog> log;
  std::string rng_state;
  std::vector<std::size_t> classes;
};

// Optimizes P_t, the fusion blocks and F on `shots` images per class with SGD
// and cosine decay. NumericalError on a non-finite loss.
TrainResult train(const Task& task, std::uint64_t seed, std::span<const std::size_t> classes,
                  std::size_t shots, const std::function<void(const StepLog&)>& on_step = {});

// Top-1 accuracy over the class set with the prompted model (or the frozen
// zero-shot path when model is null).
double accuracy(const Task& task, const KnowledgeCorpus& corpus, const PromptModel* model,
                std::span<const std::size_t> classes, std::uint64_t salt);

// Mean per-class L1 distance between prompted and frozen features.
double feature_drift(const Task& task, const PromptModel& model, std::span<const std::size_t> classes);

struct SeedReport {
  Protocol protocol = Protocol::base_to_novel;
  std::uint64_t seed = 0;
  double base = 0;
  std::optional<double> novel;
  std::optional<double> hm;
};

struct EvalReport {
  std::string label;
  std::vector<SeedReport> rows;
  double mean_base = 0;
  std::optional<double> mean_novel;
  std::optional<double> mean_hm;  // harmonic mean of mean_base and mean_novel
  double wall_seconds = 0;
};

void finalize(EvalReport& report);

// Evaluation of a trained model under one protocol.
SeedReport evaluate(const Task& task, const PromptModel& model, Protocol protocol,
                    std::uint64_t seed);

// Trains on the class set and shot count the protocol prescribes: base classes
// with `shots` for base-to-novel, all classes with `few_shot_shots` for
// few-shot, all source classes with `shots` for cross-dataset.
TrainResult train_for_protocol(const Task& task, Protocol protocol, std::uint64_t seed,
                               const std::function<void(const StepLog&)>& on_step = {});

// Train + evaluate every seed of the config under the protocol.
EvalReport run_protocol(const Task& task, Protocol protocol, const std::string& label = {});

struct AblationRow {
  std::string label;
  bool knowledge = true, fusion = true, projection = true;
  ExperimentConfig cfg;
};
std::vector<std::string> ablation_presets();
std::vector<AblationRow> ablation_rows(const std::string& preset, const ExperimentConfig& base);
std::vector<EvalReport> run_ablation_suite(const std::string& preset, const ExperimentConfig& base);

// One-sided paired t-test that mean(a - b) > 0. Returns the p-value.
double paired_t_pvalue(std::span<const double> a, std::span<const double> b);

}  // namespace inpk
