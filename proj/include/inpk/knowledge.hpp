#pragma once
// Offline class knowledge: a class name plus N attribute phrases per class.
//
// File format, UTF-8, one record per line:
//   class_name<TAB>attr_1<TAB>...<TAB>attr_N
// Lines starting with '#' are comments; '#!key=value' lines are provenance
// metadata and survive a load/save round trip in order.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace inpk {

struct KnowledgeEntry {
  std::size_t class_id = 0;
  std::string class_name;
  std::vector<std::string> attributes;

  bool operator==(const KnowledgeEntry&) const = default;
};

struct KnowledgeCorpus {
  std::vector<std::pair<std::string, std::string>> provenance;
  std::vector<KnowledgeEntry> entries;

  bool operator==(const KnowledgeCorpus&) const = default;
  std::size_t size() const { return entries.size(); }
  const std::string* provenance_value(const std::string& key) const;
};

// The instruction a generator model is given per class; kept as provenance.
inline constexpr const char* kInstructionTemplate =
    "Please provide the discriminative features about the [fine class] for recognition among "
    "all [coarse class]";

// Throws ParseError (with line number) or ValidationError.
KnowledgeCorpus parse_knowledge(std::istream& in);
KnowledgeCorpus load_knowledge(const std::string& path);
void write_knowledge(std::ostream& out, const KnowledgeCorpus& corpus);
void save_knowledge(const std::string& path, const KnowledgeCorpus& corpus);

// Entry invariants: non-empty name and attributes, no duplicate attribute in
// an entry, no duplicate class name, ids contiguous from 0.
void validate(const KnowledgeCorpus& corpus);

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t num_classes = 20;
  std::size_t attributes = 25;
  std::size_t pool = 40;
  double share = 0.5;
};

// Per class, round(share*N) attributes come from a common pool of `pool`
// words and the rest are unique to the class. Pure function of the spec.
KnowledgeCorpus synthesize_corpus(const SynthSpec& spec);

// Same classes with every attribute removed (the knowledge-off input).
KnowledgeCorpus strip_attributes(const KnowledgeCorpus& corpus);

// Mean pairwise Jaccard overlap of attribute sets; 0 for fewer than 2 classes.
double mean_attribute_jaccard(const KnowledgeCorpus& corpus);

}  // namespace inpk
