// inpk: corpus synthesis, training, evaluation, ablation suites and checkpoint
// inspection. Exit codes: 0 success, 2 usage/config/integrity, 3 numerical.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "inpk/checkpoint.hpp"
#include "inpk/config.hpp"
#include "inpk/errors.hpp"
#include "inpk/knowledge.hpp"
#include "inpk/report.hpp"
#include "inpk/train_eval.hpp"

using namespace inpk;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 2, kNumerical = 3;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
  std::string corpus;  // optional knowledge file replacing the synthesized source corpus
};

struct Resolved {
  ExperimentConfig cfg;
  json effective;
  std::string raw;  // config file bytes
};

// Precedence: defaults < config file < PKI_SEED < --set flags.
Resolved resolve(const ConfigArgs& a) {
  Resolved r;
  json user = json::object();
  if (!a.path.empty()) {
    r.raw = read_file(a.path);
    user = parse_toml(r.raw);
  }
  if (const char* env = std::getenv("PKI_SEED")) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long s = std::strtoull(env, &end, 10);
    if (*env == '\0' || *end != '\0' || errno != 0 || env[0] == '-')
      throw ConfigError(std::string("PKI_SEED must be a non-negative integer, got '") + env + "'");
    user["seeds"] = json::array({s});
  }
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_override(user, kv.substr(0, eq), kv.substr(eq + 1));
  }
  r.cfg = config_from_json(user);
  r.effective = config_to_json(r.cfg);
  return r;
}

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.path, "TOML config file (defaults when omitted)");
  cmd->add_option("--set", a.sets, "override a config key, e.g. --set model.depth=2")
      ->take_all();
  cmd->add_option("--corpus", a.corpus, "knowledge file to use as the source corpus");
}

std::string default_out(const ExperimentConfig& cfg, const std::string& what) {
  return (fs::path("runs") / (cfg.name + "-" + what)).string();
}

// Refuses to reuse an output directory that already holds a manifest.
void guard_out(const std::string& out, bool force) {
  if (fs::exists(fs::path(out) / "manifest.json") && !force)
    throw UsageError("'" + out + "' already holds a run; pass --force to overwrite");
  fs::create_directories(out);
}

struct ArtifactWriter {
  std::string root;
  RunManifest manifest;

  void put(const std::string& rel, const std::string& bytes) {
    write_file((fs::path(root) / rel).string(), bytes);
    manifest.artifacts[rel] = sha256_hex(bytes);
  }
  void finish() {
    write_file((fs::path(root) / "manifest.json").string(), to_json(manifest).dump(2) + "\n");
  }
};

RunManifest base_manifest(const std::string& command, const ConfigArgs& a, const Resolved& r,
                          const std::string& out) {
  RunManifest m;
  m.command = command;
  m.config_path = a.path.empty() ? "" : fs::absolute(a.path).string();
  m.config_sha256 = sha256_hex(r.raw);
  m.effective_config = r.effective;
  m.seeds = r.cfg.seeds;
  m.out_dir = out;
  return m;
}

std::optional<KnowledgeCorpus> maybe_corpus(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_knowledge(path);
}

std::string ckpt_name(std::uint64_t seed) { return "seed" + std::to_string(seed) + ".ckpt"; }

// ---- corpus ---------------------------------------------------------------

int cmd_corpus_synth(const SynthSpec& spec, const std::string& out, bool force) {
  if (fs::exists(out) && !force)
    throw UsageError("'" + out + "' exists; pass --force to overwrite");
  const KnowledgeCorpus c = synthesize_corpus(spec);
  save_knowledge(out, c);
  std::printf("wrote %zu classes x %zu attributes to %s (sha256 %s)\n", c.size(), spec.attributes,
              out.c_str(), sha256_file(out).c_str());
  return kOk;
}

int cmd_corpus_validate(const std::string& path) {
  const KnowledgeCorpus c = load_knowledge(path);
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& e : c.entries) {
    lo = std::min(lo, e.attributes.size());
    hi = std::max(hi, e.attributes.size());
  }
  std::printf("ok: %zu classes, %zu-%zu attributes, mean attribute jaccard %.4f\n", c.size(),
              c.size() ? lo : 0, hi, mean_attribute_jaccard(c));
  for (const auto& [k, v] : c.provenance) std::printf("  %s = %s\n", k.c_str(), v.c_str());
  return kOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const ConfigArgs& a, const std::string& protocol_arg, std::string out, bool force) {
  const Resolved r = resolve(a);
  const Protocol protocol = parse_protocol(protocol_arg);
  if (out.empty()) out = default_out(r.cfg, "train");
  guard_out(out, force);
  const auto source = maybe_corpus(a.corpus);
  const Task task = make_task(r.cfg, source ? &*source : nullptr);

  ArtifactWriter w{out, base_manifest("train", a, r, out)};
  if (source) {
    std::ostringstream ss;
    write_knowledge(ss, *source);
    w.put("source_corpus.tsv", ss.str());
  }
  w.put("config.json", r.effective.dump(2) + "\n");
  for (auto seed : r.cfg.seeds) {
    std::string log;
    const TrainResult tr = train_for_protocol(task, protocol, seed, [&](const StepLog& s) {
      log += step_json(s).dump() + "\n";
    });
    Checkpoint ck;
    ck.config = {{"experiment", r.effective}, {"protocol", protocol_name(protocol)},
                 {"seed", seed}, {"classes", tr.classes}};
    ck.rng_state = tr.rng_state;
    ck.tensors = tr.model.params();
    w.put(ckpt_name(seed), serialize_checkpoint(ck));
    w.put("seed" + std::to_string(seed) + ".log.jsonl", log);
    const auto& last = tr.log.back();
    std::fprintf(stderr, "seed %llu: %zu steps, final loss_total %.6f (ce %.6f, text %.6f)\n",
                 static_cast<unsigned long long>(seed), tr.log.size(), last.loss_total,
                 last.loss_ce, last.loss_text);
  }
  w.manifest.protocol = protocol_name(protocol);
  w.finish();
  std::printf("%s\n", (fs::path(out) / "manifest.json").string().c_str());
  return kOk;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const std::string& run, const std::string& protocol_arg, const std::string& target,
             std::string out, bool force) {
  const RunManifest m = manifest_from_json(json::parse(read_file((fs::path(run) / "manifest.json").string())));
  if (m.command != "train") throw UsageError("'" + run + "' is not a training run");
  verify_manifest(m, run);
  const json& cfg_json = m.effective_config;
  const std::string& trained = m.protocol;
  const Protocol protocol = parse_protocol(protocol_arg.empty() ? trained : protocol_arg);
  if (protocol_name(protocol) != trained)
    throw ConfigError("run was trained for protocol " + trained + ", cannot evaluate it as " +
                      protocol_name(protocol));
  const ExperimentConfig cfg = config_from_json(cfg_json);

  std::optional<KnowledgeCorpus> source;
  if (m.artifacts.count("source_corpus.tsv"))
    source = load_knowledge((fs::path(run) / "source_corpus.tsv").string());
  const auto tgt = maybe_corpus(target);
  const Task task = make_task(cfg, source ? &*source : nullptr, tgt ? &*tgt : nullptr);

  if (out.empty()) out = run;
  const std::string stem = "eval_" + protocol_name(protocol);
  const fs::path csv_path = fs::path(out) / (stem + ".csv");
  if (fs::exists(csv_path) && !force)
    throw UsageError("'" + csv_path.string() + "' exists; pass --force to overwrite");

  EvalReport rep;
  rep.label = cfg.name;
  for (auto seed : m.seeds) {
    const Checkpoint ck = load_checkpoint((fs::path(run) / ckpt_name(seed)).string());
    if (ck.config.at("experiment") != m.effective_config)
      throw IntegrityError("checkpoint for seed " + std::to_string(seed) +
                           " was written by a different config");
    Rng rng(seed);
    PromptModel model = make_prompt_model(cfg.model, task.world.backbone, rng);
    restore_params(ck, model);
    rep.rows.push_back(evaluate(task, model, protocol, seed));
  }
  finalize(rep);

  const std::string csv = report_csv({rep});
  json summary = {{"report", report_json(rep)}, {"config", cfg_json}, {"run", fs::absolute(run).string()}};
  if (!target.empty()) summary["target_corpus"] = {{"path", target}, {"sha256", sha256_file(target)}};
  write_file(csv_path.string(), csv);
  write_file((fs::path(out) / (stem + ".json")).string(), summary.dump(2) + "\n");
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

// ---- ablate ---------------------------------------------------------------

int cmd_ablate(const ConfigArgs& a, const std::string& preset, std::string out, bool force) {
  const auto presets = ablation_presets();
  if (std::find(presets.begin(), presets.end(), preset) == presets.end()) {
    std::string list;
    for (const auto& p : presets) list += (list.empty() ? "" : ", ") + p;
    throw UsageError("unknown preset '" + preset + "' (available: " + list + ")");
  }
  const Resolved r = resolve(a);
  if (!a.corpus.empty()) throw UsageError("ablate synthesizes its corpora; --corpus is not supported");
  if (out.empty()) out = default_out(r.cfg, "ablate-" + preset);
  guard_out(out, force);
  const auto reports = run_ablation_suite(preset, r.cfg);

  json rows = json::array();
  for (const auto& rep : reports) rows.push_back(report_json(rep));
  json summary = {{"preset", preset}, {"reports", rows}, {"config", r.effective}};
  // Paired comparisons of the first row against each other row.
  if (reports.size() > 1 && reports.front().mean_hm) {
    std::vector<double> first;
    for (const auto& s : reports.front().rows) first.push_back(*s.hm);
    json tests = json::array();
    for (std::size_t i = 1; i < reports.size(); ++i) {
      std::vector<double> other;
      for (const auto& s : reports[i].rows) other.push_back(*s.hm);
      if (other.size() != first.size() || first.size() < 2) continue;
      tests.push_back({{"a", reports.front().label},
                       {"b", reports[i].label},
                       {"p_one_sided", paired_t_pvalue(first, other)}});
    }
    summary["paired_tests"] = tests;
  }
  ArtifactWriter w{out, base_manifest("ablate", a, r, out)};
  const std::string csv = report_csv(reports);
  w.put("ablate_" + preset + ".csv", csv);
  w.put("ablate_" + preset + ".json", summary.dump(2) + "\n");
  w.finish();
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

// ---- inspect --------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const std::string bytes = read_file(path);
  const Checkpoint ck = deserialize_checkpoint(bytes);
  json tensors = json::array();
  std::size_t total = 0;
  for (const auto& nt : ck.tensors) {
    double sq = 0;
    for (double v : nt.tensor.values()) sq += v * v;
    total += nt.tensor.numel();
    tensors.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"l2", std::sqrt(sq)}});
  }
  const json info = {{"path", path},
                     {"sha256", sha256_hex(bytes)},
                     {"version", kCheckpointVersion},
                     {"parameters", total},
                     {"tensors", tensors},
                     {"meta", ck.config}};
  std::printf("%s\n", info.dump(2).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt tuning with class knowledge on a synthetic dual encoder"};
  app.require_subcommand(1);

  auto* corpus = app.add_subcommand("corpus", "synthesize or validate knowledge files");
  corpus->require_subcommand(1);
  SynthSpec spec;
  std::string synth_out, validate_path;
  bool synth_force = false;
  auto* synth = corpus->add_subcommand("synth", "write a synthetic knowledge corpus");
  synth->add_option("--classes", spec.num_classes, "number of classes")->capture_default_str();
  synth->add_option("--attrs", spec.attributes, "attributes per class")->capture_default_str();
  synth->add_option("--pool", spec.pool, "size of the shared attribute pool")->capture_default_str();
  synth->add_option("--share", spec.share, "fraction of attributes drawn from the pool")
      ->capture_default_str();
  synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output file")->required();
  synth->add_flag("--force", synth_force, "overwrite an existing file");
  auto* validate_cmd = corpus->add_subcommand("validate", "check a knowledge file");
  validate_cmd->add_option("file", validate_path, "knowledge file")->required();

  ConfigArgs train_args, ablate_args;
  std::string train_protocol = "base_to_novel", train_out, eval_run, eval_protocol, eval_target,
              eval_out, preset, ablate_out, inspect_path;
  bool train_force = false, eval_force = false, ablate_force = false;

  auto* train_cmd = app.add_subcommand("train", "train prompts for every configured seed");
  add_config_options(train_cmd, train_args);
  train_cmd->add_option("--protocol", train_protocol,
                        "base_to_novel | few_shot | cross_dataset (selects the training split)")
      ->capture_default_str();
  train_cmd->add_option("--out", train_out, "artifact directory (default runs/<name>-train)");
  train_cmd->add_flag("--force", train_force, "overwrite an existing run");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate the checkpoints of a training run");
  eval_cmd->add_option("--run", eval_run, "training run directory")->required();
  eval_cmd->add_option("--protocol", eval_protocol, "defaults to the protocol the run was trained for");
  eval_cmd->add_option("--target-corpus", eval_target, "knowledge file for cross-dataset targets");
  eval_cmd->add_option("--out", eval_out, "report directory (default: the run directory)");
  eval_cmd->add_flag("--force", eval_force, "overwrite existing reports");

  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation preset");
  add_config_options(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--preset", preset, "components | depth | prompt-and-attrs | pki")
      ->required();
  ablate_cmd->add_option("--out", ablate_out, "artifact directory (default runs/<name>-ablate-<preset>)");
  ablate_cmd->add_flag("--force", ablate_force, "overwrite an existing run");

  auto* inspect_cmd = app.add_subcommand("inspect", "verify and summarize a checkpoint");
  inspect_cmd->add_option("checkpoint", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_corpus_synth(spec, synth_out, synth_force);
    if (validate_cmd->parsed()) return cmd_corpus_validate(validate_path);
    if (train_cmd->parsed()) return cmd_train(train_args, train_protocol, train_out, train_force);
    if (eval_cmd->parsed()) return cmd_eval(eval_run, eval_protocol, eval_target, eval_out, eval_force);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, preset, ablate_out, ablate_force);
    if (inspect_cmd->parsed()) return cmd_inspect(inspect_path);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
