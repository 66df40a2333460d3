#include "inpk/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "inpk/checkpoint.hpp"
#include "inpk/errors.hpp"

namespace inpk {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "label,protocol,seed,base,novel,hm\n";
  for (const auto& rep : reports) {
    if (rep.rows.empty()) continue;
    const std::string proto = protocol_name(rep.rows.front().protocol);
    for (const auto& r : rep.rows)
      out << rep.label << ',' << protocol_name(r.protocol) << ',' << r.seed << ',' << num(r.base)
          << ',' << opt(r.novel) << ',' << opt(r.hm) << '\n';
    out << rep.label << ',' << proto << ",mean," << num(rep.mean_base) << ','
        << opt(rep.mean_novel) << ',' << opt(rep.mean_hm) << '\n';
  }
  return out.str();
}

json report_json(const EvalReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"protocol", protocol_name(r.protocol)},
                    {"seed", r.seed},
                    {"base", r.base},
                    {"novel", opt_json(r.novel)},
                    {"hm", opt_json(r.hm)}});
  return {{"label", rep.label},
          {"rows", rows},
          {"mean", {{"base", rep.mean_base}, {"novel", opt_json(rep.mean_novel)},
                    {"hm", opt_json(rep.mean_hm)}}}};
}

json step_json(const StepLog& s) {
  return {{"step", s.step},
          {"loss_ce", s.loss_ce},
          {"loss_text", s.loss_text},
          {"loss_total", s.loss_total}};
}

json to_json(const RunManifest& m) {
  return {{"command", m.command},
          {"protocol", m.protocol},
          {"config_path", m.config_path},
          {"config_sha256", m.config_sha256},
          {"effective_config", m.effective_config},
          {"seeds", m.seeds},
          {"out_dir", m.out_dir},
          {"artifacts", m.artifacts}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.protocol = j.at("protocol").get<std::string>();
    m.config_path = j.at("config_path").get<std::string>();
    m.config_sha256 = j.at("config_sha256").get<std::string>();
    m.effective_config = j.at("effective_config");
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.out_dir = j.at("out_dir").get<std::string>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing '" + path + "'");
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

void verify_manifest(const RunManifest& m, const std::string& root) {
  namespace fs = std::filesystem;
  if (!m.config_path.empty() && fs::exists(m.config_path) &&
      sha256_file(m.config_path) != m.config_sha256)
    throw IntegrityError("config '" + m.config_path + "' changed since the run was recorded");
  for (const auto& [rel, hash] : m.artifacts) {
    const std::string path = (fs::path(root) / rel).string();
    if (!fs::exists(path)) throw IntegrityError("artifact '" + path + "' is missing");
    if (sha256_file(path) != hash) throw IntegrityError("artifact '" + path + "' checksum mismatch");
  }
}

}  // namespace inpk
