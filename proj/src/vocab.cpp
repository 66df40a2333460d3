#include "inpk/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>

#include "inpk/errors.hpp"
#include "inpk/ops.hpp"

namespace inpk {
namespace {

constexpr const char* kSpecials[] = {"<pad>", "<bos>", "<eos>"};

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

TokenSequence pack(std::vector<std::size_t> content, std::size_t context_len, std::size_t reserved) {
  const std::size_t need = content.size() + 2 + reserved;
  if (need > context_len) throw TruncationError(need, context_len);
  TokenSequence t;
  t.ids.reserve(context_len);
  t.ids.push_back(Vocabulary::kBos);
  t.ids.insert(t.ids.end(), content.begin(), content.end());
  t.eos_position = t.ids.size();
  t.ids.push_back(Vocabulary::kEos);
  t.ids.resize(context_len, Vocabulary::kPad);
  return t;
}

void append_ids(std::vector<std::size_t>& out, std::string_view text, const Vocabulary& vocab) {
  for (const auto& w : split_words(text)) out.push_back(vocab.id(w));
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<double> word_vector(std::string_view word, std::size_t dim, std::uint64_t world_seed) {
  std::string key = std::to_string(world_seed);
  key.push_back('\x1f');
  key.append(word);
  Rng rng(fnv1a(key));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = n(rng);
  return v;
}

Vocabulary::Vocabulary(std::size_t dim, std::uint64_t world_seed, std::vector<std::string> words,
                       const std::vector<std::vector<double>>& rows)
    : world_seed_(world_seed) {
  if (words.size() != rows.size()) throw DimensionError("vocabulary needs one row per word");
  words_.assign(std::begin(kSpecials), std::end(kSpecials));
  words_.insert(words_.end(), words.begin(), words.end());
  std::vector<double> table;
  table.reserve(words_.size() * dim);
  table.resize(dim, 0.0);  // PAD
  for (const char* s : {kSpecials[1], kSpecials[2]}) {
    const auto v = word_vector(s, dim, world_seed);
    table.insert(table.end(), v.begin(), v.end());
  }
  for (const auto& r : rows) {
    if (r.size() != dim) throw DimensionError("vocabulary row has the wrong width");
    table.insert(table.end(), r.begin(), r.end());
  }
  for (std::size_t i = 0; i < words_.size(); ++i)
    if (!index_.emplace(words_[i], i).second)
      throw ValidationError("vocabulary word '" + words_[i] + "' listed twice");
  table_ = Tensor({words_.size(), dim}, std::move(table));
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.count(std::string(word)) != 0;
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw LookupError("unknown token '" + std::string(word) + "'");
  return it->second;
}

const std::string& Vocabulary::word(std::size_t id) const {
  if (id >= words_.size())
    throw LookupError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(words_.size()));
  return words_[id];
}

std::vector<double> Vocabulary::phrase_vector(std::string_view phrase) const {
  const auto words = split_words(phrase);
  if (words.empty()) throw ValidationError("empty phrase");
  std::vector<double> v(dim(), 0.0);
  for (const auto& w : words) {
    const std::size_t r = id(w);
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += table_.at(r, j);
  }
  for (auto& x : v) x /= static_cast<double>(words.size());
  return v;
}

Vocabulary build_vocabulary(std::span<const KnowledgeCorpus* const> corpora,
                            std::span<const std::string> extra_texts, const VocabSpec& spec) {
  const double a = spec.name_semantics;
  if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("name_semantics must lie in [0, 1]");
  const std::size_t d = spec.dim;
  std::set<std::string> specials(std::begin(kSpecials), std::end(kSpecials));
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (specials.count(w)) throw ValidationError("'" + w + "' is a reserved token");
    if (seen.insert(w).second) words.push_back(w);
  };
  // Class-name token -> mean raw vector of its class's attribute phrases.
  std::unordered_map<std::string, std::vector<double>> meaning;
  for (const auto* c : corpora) {
    for (const auto& e : c->entries) {
      const auto name = split_words(e.class_name);
      if (name.empty()) throw ValidationError("class " + std::to_string(e.class_id) + " has no tokens");
      std::vector<double> m(d, 0.0);
      for (const auto& attr : e.attributes) {
        const auto aw = split_words(attr);
        for (const auto& w : aw) {
          add(w);
          const auto v = word_vector(w, d, spec.world_seed);
          for (std::size_t j = 0; j < d; ++j) m[j] += v[j] / static_cast<double>(aw.size());
        }
      }
      for (const auto& w : name) {
        add(w);
        if (!e.attributes.empty()) meaning.emplace(w, m);
      }
    }
  }
  for (const auto& t : extra_texts)
    for (const auto& w : split_words(t)) add(w);

  std::vector<std::vector<double>> rows;
  rows.reserve(words.size());
  for (const auto& w : words) {
    auto v = word_vector(w, d, spec.world_seed);
    if (auto it = meaning.find(w); it != meaning.end() && a > 0.0) {
      const auto& m = it->second;
      double n2 = 0.0;
      for (double x : m) n2 += x * x;
      if (n2 > 0.0) {
        const double s = a * std::sqrt(static_cast<double>(d) / n2);
        const double r = std::sqrt(1.0 - a * a);
        for (std::size_t j = 0; j < d; ++j) v[j] = s * m[j] + r * v[j];
      }
    }
    rows.push_back(std::move(v));
  }
  return Vocabulary(d, spec.world_seed, std::move(words), rows);
}

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  const auto first = text_.find("{}");
  if (first == std::string::npos || text_.find("{}", first + 2) != std::string::npos)
    throw ValidationError("prompt template needs exactly one '{}' slot: \"" + text_ + "\"");
}

std::string PromptTemplate::fill(std::string_view class_name) const {
  std::string out = text_;
  out.replace(out.find("{}"), 2, class_name);
  return out;
}

std::vector<std::uint8_t> TokenSequence::valid_mask() const {
  std::vector<std::uint8_t> m(ids.size(), 0);
  std::fill(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(eos_position + 1), 1);
  return m;
}

TokenSequence tokenize_knowledge(const KnowledgeEntry& entry, const Vocabulary& vocab,
                                 std::size_t context_len, std::size_t reserved) {
  std::vector<std::size_t> content;
  append_ids(content, entry.class_name, vocab);
  if (content.empty())
    throw ValidationError("class " + std::to_string(entry.class_id) + " has no name tokens");
  for (const auto& a : entry.attributes) append_ids(content, a, vocab);
  return pack(std::move(content), context_len, reserved);
}

TokenSequence tokenize_prompt(const PromptTemplate& tmpl, std::string_view class_name,
                              const Vocabulary& vocab, std::size_t context_len,
                              std::size_t reserved) {
  std::vector<std::size_t> content;
  append_ids(content, tmpl.fill(class_name), vocab);
  return pack(std::move(content), context_len, reserved);
}

Tensor embed(Graph& g, std::span<const std::size_t> ids, const Vocabulary& vocab) {
  return gather_rows(g, vocab.table(), ids);
}

}  // namespace inpk
