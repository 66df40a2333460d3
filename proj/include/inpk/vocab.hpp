#pragma once
// Closed word-level vocabulary, prompt templates and tokenization.
//
// Tokenization lowercases and splits on whitespace. Embedding rows are a pure
// function of (word, world seed), so two vocabularies built over different
// corpora agree on every word they share. PAD has the all-zero row.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "inpk/knowledge.hpp"
#include "inpk/tensor.hpp"

namespace inpk {

std::vector<std::string> split_words(std::string_view text);

// Deterministic N(0, 1) vector keyed by the word and the world seed.
std::vector<double> word_vector(std::string_view word, std::size_t dim, std::uint64_t world_seed);

struct VocabSpec {
  std::size_t dim = 32;
  std::uint64_t world_seed = 11;
  // Class-name tokens mix this fraction of their class's mean attribute
  // direction into their own vector, so a bare name carries some meaning.
  double name_semantics = 0.8;
};

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  Vocabulary() = default;
  // words[i] gets id i + 3 and row rows[i]; the three specials come first.
  Vocabulary(std::size_t dim, std::uint64_t world_seed, std::vector<std::string> words,
             const std::vector<std::vector<double>>& rows);

  std::size_t size() const { return words_.size(); }
  std::size_t dim() const { return table_.cols(); }
  bool contains(std::string_view word) const;
  std::size_t id(std::string_view word) const;  // LookupError if unknown
  const std::string& word(std::size_t id) const;
  const Tensor& table() const { return table_; }
  Tensor& table() { return table_; }
  std::uint64_t world_seed() const { return world_seed_; }

  // Mean embedding row of a (possibly multi-word) phrase.
  std::vector<double> phrase_vector(std::string_view phrase) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
  Tensor table_;
  std::uint64_t world_seed_ = 0;
};

// Vocabulary over every word of the corpora plus the extra texts.
Vocabulary build_vocabulary(std::span<const KnowledgeCorpus* const> corpora,
                            std::span<const std::string> extra_texts, const VocabSpec& spec);

// A hand-written prompt with exactly one "{}" slot for the class name.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text);
  const std::string& text() const { return text_; }
  std::string fill(std::string_view class_name) const;

 private:
  std::string text_;
};

struct TokenSequence {
  std::vector<std::size_t> ids;  // exactly context_len entries
  std::size_t eos_position = 0;
  std::size_t content_length() const { return eos_position + 1; }
  std::vector<std::uint8_t> valid_mask() const;  // 1 up to and including EOS
};

// [BOS, class tokens, attribute tokens, EOS, PAD...]. `reserved` slots are
// held back for prompt tokens; TruncationError when the content does not fit.
TokenSequence tokenize_knowledge(const KnowledgeEntry& entry, const Vocabulary& vocab,
                                 std::size_t context_len, std::size_t reserved = 0);
// [BOS, template words with the name filled in, EOS, PAD...].
TokenSequence tokenize_prompt(const PromptTemplate& tmpl, std::string_view class_name,
                              const Vocabulary& vocab, std::size_t context_len,
                              std::size_t reserved = 0);

// Rows of the embedding table; LookupError for an out-of-range id.
Tensor embed(Graph& g, std::span<const std::size_t> ids, const Vocabulary& vocab);

}  // namespace inpk
