#include "inpk/config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "inpk/errors.hpp"

namespace inpk {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (unsigned char c : k)
    if (!(std::isalnum(c) || c == '_' || c == '-')) return false;
  return true;
}

// Drops a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_str && c == '\\') {
      ++i;
      continue;
    }
    if (c == '"') in_str = !in_str;
    if (c == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

class ValueParser {
 public:
  ValueParser(std::string_view s, std::size_t line) : s_(s), line_(line) {}

  json parse() {
    json v = value(true);
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) { throw ParseError(what, line_); }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  json value(bool allow_array) {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return string();
    if (c == '[') {
      if (!allow_array) fail("nested arrays are not supported");
      return array();
    }
    return scalar();
  }

  json string() {
    ++pos_;
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  json array() {
    ++pos_;
    json arr = json::array();
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return arr;
    }
    while (true) {
      arr.push_back(value(false));
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return arr;
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  json scalar() {
    std::size_t end = pos_;
    while (end < s_.size() && s_[end] != ',' && s_[end] != ']' &&
           !std::isspace(static_cast<unsigned char>(s_[end])))
      ++end;
    const std::string tok(s_.substr(pos_, end - pos_));
    pos_ = end;
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char c : tok)
      if (c != '_') digits.push_back(c);
    if (digits.empty()) fail("missing value");
    const bool integral = digits.find_first_of(".eE") == std::string::npos &&
                          digits.find_first_not_of("+-0123456789") == std::string::npos;
    char* stop = nullptr;
    if (integral) {
      errno = 0;
      if (digits[0] == '-') {
        const long long v = std::strtoll(digits.c_str(), &stop, 10);
        if (*stop == '\0' && errno == 0) return v;
      } else {
        const unsigned long long v = std::strtoull(digits.c_str(), &stop, 10);
        if (*stop == '\0' && errno == 0) return v;
      }
      fail("integer out of range: " + tok);
    }
    const double v = std::strtod(digits.c_str(), &stop);
    if (*stop != '\0' || !std::isfinite(v)) fail("invalid value '" + tok + "'");
    return v;
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

// Overlays `user` on `defaults`, requiring every user key to exist with a
// compatible type.
void merge_checked(json& defaults, const json& user, const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& d = defaults[it.key()];
    const json& u = it.value();
    if (d.is_object()) {
      if (!u.is_object()) throw ConfigError("config key '" + key + "' must be a table");
      merge_checked(d, u, key);
    } else if (d.is_boolean()) {
      if (!u.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
      d = u;
    } else if (d.is_number_unsigned()) {
      if (!u.is_number_unsigned())
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
      d = u;
    } else if (d.is_number()) {
      if (!u.is_number()) throw ConfigError("config key '" + key + "' must be a number");
      d = u.get<double>();
    } else if (d.is_string()) {
      if (!u.is_string()) throw ConfigError("config key '" + key + "' must be a string");
      d = u;
    } else if (d.is_array()) {
      if (!u.is_array()) throw ConfigError("config key '" + key + "' must be an array");
      for (const auto& e : u)
        if (!e.is_number_unsigned())
          throw ConfigError("config key '" + key + "' must hold non-negative integers");
      d = u;
    }
  }
}

json synth_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"classes", s.num_classes},
          {"attributes", s.attributes},
          {"pool", s.pool},
          {"share", s.share}};
}

SynthSpec synth_from(const json& j) {
  SynthSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.num_classes = j.at("classes").get<std::size_t>();
  s.attributes = j.at("attributes").get<std::size_t>();
  s.pool = j.at("pool").get<std::size_t>();
  s.share = j.at("share").get<double>();
  return s;
}

}  // namespace

json parse_toml(std::string_view text) {
  json root = json::object();
  json* table = &root;
  std::set<std::string> tables_seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3 || line[1] == '[')
        throw ParseError("malformed table header", lineno);
      const std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!tables_seen.insert(name).second)
        throw ParseError("table [" + name + "] defined twice", lineno);
      table = &root;
      std::stringstream parts(name);
      std::string part;
      while (std::getline(parts, part, '.')) {
        part = trim(part);
        if (!bare_key(part)) throw ParseError("invalid table name '" + name + "'", lineno);
        json& next = (*table)[part];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ParseError("'" + part + "' is not a table", lineno);
        table = &next;
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!bare_key(key)) throw ParseError("invalid key '" + key + "'", lineno);
    if (table->contains(key)) throw ParseError("duplicate key '" + key + "'", lineno);
    (*table)[key] = ValueParser(std::string_view(line).substr(eq + 1), lineno).parse();
  }
  return root;
}

std::string projection_init_name(ProjInit p) {
  switch (p) {
    case ProjInit::identity: return "identity";
    case ProjInit::gaussian: return "gaussian";
    case ProjInit::zero: return "zero";
  }
  return "?";
}

ProjInit parse_projection_init(const std::string& name) {
  for (auto p : {ProjInit::identity, ProjInit::gaussian, ProjInit::zero})
    if (projection_init_name(p) == name) return p;
  throw ConfigError("unknown projection_init '" + name + "' (expected identity, gaussian or zero)");
}

json config_to_json(const ExperimentConfig& c) {
  const auto& b = c.world.backbone;
  const auto& a = c.world.align;
  const auto& m = c.model;
  return {
      {"name", c.name},
      {"seeds", c.seeds},
      {"shots", c.shots},
      {"few_shot_shots", c.few_shot_shots},
      {"test_per_class", c.test_per_class},
      {"base_fraction", c.base_fraction},
      {"split_seed", c.split_seed},
      {"template", c.template_text},
      {"corpus", synth_json(c.corpus)},
      {"target_corpus", synth_json(c.target_corpus)},
      {"world",
       {{"seed", c.world.world_seed},
        {"name_semantics", c.world.name_semantics},
        {"noise", c.world.images.noise},
        {"saliency", c.world.images.saliency},
        {"common_weight", c.world.images.common_weight},
        {"backbone",
         {{"dim", b.dim},
          {"heads", b.heads},
          {"hidden", b.hidden},
          {"text_layers", b.text_layers},
          {"vision_layers", b.vision_layers},
          {"patches", b.patches},
          {"max_positions", b.max_positions},
          {"seed", b.seed},
          {"attn_scale", b.attn_scale},
          {"ffn_scale", b.ffn_scale},
          {"position_scale", b.position_scale}}},
        {"align",
         {{"concepts", a.concepts},
          {"min_words", a.min_words},
          {"max_words", a.max_words},
          {"ridge", a.ridge},
          {"feature_scale", a.feature_scale},
          {"semantic", a.semantic},
          {"noise", a.noise},
          {"filler_rate", a.filler_rate},
          {"seed", a.seed}}}}},
      {"model",
       {{"prompt_len", m.prompt_len},
        {"depth", m.depth},
        {"attributes", m.attributes},
        {"context_len", m.context_len},
        {"heads", m.heads},
        {"block_hidden", m.block_hidden},
        {"knowledge", m.knowledge},
        {"fusion", m.fusion},
        {"projection", m.projection},
        {"prompt_init_std", m.prompt_init_std},
        {"block_output_scale", m.block_output_scale},
        {"projection_init", projection_init_name(m.projection_init)},
        {"tau", m.loss.tau},
        {"lambda", m.loss.lambda}}},
      {"optim",
       {{"lr", c.optim.lr},
        {"steps", c.optim.steps},
        {"batch", c.optim.batch},
        {"clip_norm", c.optim.clip_norm}}},
  };
}

ExperimentConfig config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a table");
  json j = config_to_json(ExperimentConfig{});
  merge_checked(j, user, "");
  ExperimentConfig c;
  c.name = j.at("name").get<std::string>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.shots = j.at("shots").get<std::size_t>();
  c.few_shot_shots = j.at("few_shot_shots").get<std::size_t>();
  c.test_per_class = j.at("test_per_class").get<std::size_t>();
  c.base_fraction = j.at("base_fraction").get<double>();
  c.split_seed = j.at("split_seed").get<std::uint64_t>();
  c.template_text = j.at("template").get<std::string>();
  c.corpus = synth_from(j.at("corpus"));
  c.target_corpus = synth_from(j.at("target_corpus"));
  const auto& w = j.at("world");
  c.world.world_seed = w.at("seed").get<std::uint64_t>();
  c.world.name_semantics = w.at("name_semantics").get<double>();
  c.world.images.noise = w.at("noise").get<double>();
  c.world.images.saliency = w.at("saliency").get<double>();
  c.world.images.common_weight = w.at("common_weight").get<double>();
  const auto& b = w.at("backbone");
  auto& bb = c.world.backbone;
  bb.dim = b.at("dim").get<std::size_t>();
  bb.heads = b.at("heads").get<std::size_t>();
  bb.hidden = b.at("hidden").get<std::size_t>();
  bb.text_layers = b.at("text_layers").get<std::size_t>();
  bb.vision_layers = b.at("vision_layers").get<std::size_t>();
  bb.patches = b.at("patches").get<std::size_t>();
  bb.max_positions = b.at("max_positions").get<std::size_t>();
  bb.seed = b.at("seed").get<std::uint64_t>();
  bb.attn_scale = b.at("attn_scale").get<double>();
  bb.ffn_scale = b.at("ffn_scale").get<double>();
  bb.position_scale = b.at("position_scale").get<double>();
  const auto& a = w.at("align");
  auto& al = c.world.align;
  al.concepts = a.at("concepts").get<std::size_t>();
  al.min_words = a.at("min_words").get<std::size_t>();
  al.max_words = a.at("max_words").get<std::size_t>();
  al.ridge = a.at("ridge").get<double>();
  al.feature_scale = a.at("feature_scale").get<double>();
  al.semantic = a.at("semantic").get<double>();
  al.noise = a.at("noise").get<double>();
  al.filler_rate = a.at("filler_rate").get<double>();
  al.seed = a.at("seed").get<std::uint64_t>();
  const auto& m = j.at("model");
  auto& mc = c.model;
  mc.prompt_len = m.at("prompt_len").get<std::size_t>();
  mc.depth = m.at("depth").get<std::size_t>();
  mc.attributes = m.at("attributes").get<std::size_t>();
  mc.context_len = m.at("context_len").get<std::size_t>();
  mc.heads = m.at("heads").get<std::size_t>();
  mc.block_hidden = m.at("block_hidden").get<std::size_t>();
  mc.knowledge = m.at("knowledge").get<bool>();
  mc.fusion = m.at("fusion").get<bool>();
  mc.projection = m.at("projection").get<bool>();
  mc.prompt_init_std = m.at("prompt_init_std").get<double>();
  mc.block_output_scale = m.at("block_output_scale").get<double>();
  mc.projection_init = parse_projection_init(m.at("projection_init").get<std::string>());
  mc.loss.tau = m.at("tau").get<double>();
  mc.loss.lambda = m.at("lambda").get<double>();
  const auto& o = j.at("optim");
  c.optim.lr = o.at("lr").get<double>();
  c.optim.steps = o.at("steps").get<std::size_t>();
  c.optim.batch = o.at("batch").get<std::size_t>();
  c.optim.clip_norm = o.at("clip_norm").get<double>();
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path, std::string* raw) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (raw) *raw = text;
  return config_from_json(parse_toml(text));
}

void apply_override(json& j, const std::string& dotted_key, const std::string& value) {
  json* node = &j;
  std::stringstream parts(dotted_key);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) keys.push_back(part);
  if (keys.empty()) throw ConfigError("empty override key");
  json defaults = config_to_json(ExperimentConfig{});
  const json* proto = &defaults;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!proto->is_object() || !proto->contains(keys[i]))
      throw ConfigError("unknown config key '" + dotted_key + "'");
    proto = &(*proto)[keys[i]];
    if (i + 1 < keys.size()) {
      json& next = (*node)[keys[i]];
      if (next.is_null()) next = json::object();
      node = &next;
    }
  }
  json parsed;
  if (proto->is_string()) {
    parsed = value;
  } else {
    try {
      parsed = ValueParser(value, 0).parse();
    } catch (const ParseError&) {
      throw ConfigError("cannot parse value '" + value + "' for '" + dotted_key + "'");
    }
  }
  (*node)[keys.back()] = parsed;
}

}  // namespace inpk
