#pragma once
// Result files and run manifests.
//
// CSV columns are fixed: label,protocol,seed,base,novel,hm. Per-seed rows come
// first, then one row with seed "mean". Empty novel/hm cells mean the protocol
// has no novel split. Values are printed with 17 significant digits so the
// files round-trip doubles exactly and diff cleanly between runs.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "inpk/train_eval.hpp"

namespace inpk {

std::string report_csv(const std::vector<EvalReport>& reports);
nlohmann::json report_json(const EvalReport& report);
nlohmann::json step_json(const StepLog& s);

struct RunManifest {
  std::string command;
  std::string protocol;  // training protocol; empty for ablation runs
  std::string config_path;  // empty when only defaults and flags were used
  std::string config_sha256;  // of the config file bytes, or of "" when absent
  nlohmann::json effective_config;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  std::map<std::string, std::string> artifacts;  // path relative to out_dir -> sha256
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
std::string sha256_file(const std::string& path);

// Re-hashes every artifact under root (and the config file when it still exists) and
// throws IntegrityError on the first mismatch.
void verify_manifest(const RunManifest& m, const std::string& root);

}  // namespace inpk
