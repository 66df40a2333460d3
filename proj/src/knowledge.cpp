#include "inpk/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "inpk/errors.hpp"

namespace inpk {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// Pronounceable nonce words; the lexicon is closed, so only uniqueness matters.
class WordGen {
 public:
  explicit WordGen(std::uint64_t seed) : rng_(seed) {}

  std::string fresh() {
    static constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ru", "te", "sa", "vo",
                                                 "ni", "pe", "da", "zu", "ri", "ko", "la",
                                                 "fe", "gi", "mo", "tu", "ba", "xe"};
    std::uniform_int_distribution<int> pick(0, 19);
    for (std::size_t tries = 0;; ++tries) {
      const std::size_t n = 3 + tries / 64;
      std::string w;
      for (std::size_t i = 0; i < n; ++i) w += kSyllables[pick(rng_)];
      if (used_.insert(w).second) return w;
    }
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::unordered_set<std::string> used_;
};

}  // namespace

const std::string* KnowledgeCorpus::provenance_value(const std::string& key) const {
  for (const auto& [k, v] : provenance)
    if (k == key) return &v;
  return nullptr;
}

KnowledgeCorpus parse_knowledge(std::istream& in) {
  KnowledgeCorpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#!", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 2)
        throw ParseError("provenance line must look like '#!key=value'", lineno);
      corpus.provenance.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    if (line.empty() || line[0] == '#' || blank(line)) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2) throw ParseError("expected class name followed by attributes", lineno);
    for (const auto& f : fields)
      if (blank(f)) throw ParseError("empty field", lineno);
    KnowledgeEntry e;
    e.class_id = corpus.entries.size();
    e.class_name = fields[0];
    e.attributes.assign(fields.begin() + 1, fields.end());
    std::set<std::string> seen;
    for (const auto& a : e.attributes)
      if (!seen.insert(a).second)
        throw ValidationError("line " + std::to_string(lineno) + ": class '" + e.class_name +
                              "' repeats attribute '" + a + "'");
    corpus.entries.push_back(std::move(e));
  }
  validate(corpus);
  return corpus;
}

KnowledgeCorpus load_knowledge(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open knowledge file '" + path + "'");
  return parse_knowledge(in);
}

void write_knowledge(std::ostream& out, const KnowledgeCorpus& corpus) {
  for (const auto& [k, v] : corpus.provenance) out << "#!" << k << '=' << v << '\n';
  for (const auto& e : corpus.entries) {
    out << e.class_name;
    for (const auto& a : e.attributes) out << '\t' << a;
    out << '\n';
  }
}

void save_knowledge(const std::string& path, const KnowledgeCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write knowledge file '" + path + "'");
  write_knowledge(out, corpus);
  if (!out) throw UsageError("failed writing knowledge file '" + path + "'");
}

void validate(const KnowledgeCorpus& corpus) {
  std::set<std::string> names;
  for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
    const auto& e = corpus.entries[i];
    if (e.class_id != i)
      throw ValidationError("class ids must be contiguous from 0; entry " + std::to_string(i) +
                            " has id " + std::to_string(e.class_id));
    if (blank(e.class_name)) throw ValidationError("entry " + std::to_string(i) + " has no name");
    if (!names.insert(e.class_name).second)
      throw ValidationError("duplicate class name '" + e.class_name + "'");
    if (e.attributes.empty())
      throw ValidationError("class '" + e.class_name + "' has no attributes");
    std::set<std::string> seen;
    for (const auto& a : e.attributes) {
      if (blank(a)) throw ValidationError("class '" + e.class_name + "' has an empty attribute");
      if (!seen.insert(a).second)
        throw ValidationError("class '" + e.class_name + "' repeats attribute '" + a + "'");
    }
  }
}

KnowledgeCorpus synthesize_corpus(const SynthSpec& spec) {
  if (spec.num_classes == 0) throw ConfigError("corpus needs at least one class");
  if (spec.attributes == 0) throw ConfigError("corpus needs at least one attribute per class");
  if (!(spec.share >= 0.0 && spec.share <= 1.0))
    throw ConfigError("sharing rate must lie in [0, 1]");
  const auto shared_n =
      static_cast<std::size_t>(std::lround(spec.share * static_cast<double>(spec.attributes)));
  if (spec.attributes > spec.pool || shared_n > spec.pool)
    throw ConfigError("attribute count " + std::to_string(spec.attributes) +
                      " exceeds the shared pool of " + std::to_string(spec.pool));

  WordGen words(spec.seed);
  std::vector<std::string> pool(spec.pool);
  for (auto& w : pool) w = words.fresh();

  KnowledgeCorpus c;
  c.provenance = {{"generator", "synthetic"},
                  {"seed", std::to_string(spec.seed)},
                  {"attributes", std::to_string(spec.attributes)},
                  {"pool", std::to_string(spec.pool)},
                  {"share", std::to_string(spec.share)},
                  {"instruction", kInstructionTemplate}};
  std::uniform_int_distribution<int> name_len(1, 2);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    KnowledgeEntry e;
    e.class_id = k;
    const int parts = name_len(words.rng());
    for (int i = 0; i < parts; ++i) e.class_name += (i ? " " : "") + words.fresh();
    std::vector<std::string> picked;
    std::sample(pool.begin(), pool.end(), std::back_inserter(picked), shared_n, words.rng());
    std::shuffle(picked.begin(), picked.end(), words.rng());
    while (picked.size() < spec.attributes) picked.push_back(words.fresh());
    e.attributes = std::move(picked);
    c.entries.push_back(std::move(e));
  }
  return c;
}

KnowledgeCorpus strip_attributes(const KnowledgeCorpus& corpus) {
  KnowledgeCorpus out = corpus;
  for (auto& e : out.entries) e.attributes.clear();
  return out;
}

double mean_attribute_jaccard(const KnowledgeCorpus& corpus) {
  const auto& es = corpus.entries;
  if (es.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < es.size(); ++i)
    for (std::size_t j = i + 1; j < es.size(); ++j) {
      std::set<std::string> a(es[i].attributes.begin(), es[i].attributes.end());
      std::set<std::string> b(es[j].attributes.begin(), es[j].attributes.end());
      std::size_t inter = 0;
      for (const auto& w : a) inter += b.count(w);
      const std::size_t uni = a.size() + b.size() - inter;
      total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

}  // namespace inpk
