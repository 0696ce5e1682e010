#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "icelab/record.hpp"

namespace icelab {

// Whitespace word vocabulary with the begin and end tokens at 0 and 1.
class Vocab {
 public:
  static constexpr const char* kBosText = "<s>";
  static constexpr const char* kEosText = "</s>";

  Vocab();
  // Rebuilds from an ordered word list whose first two entries are the
  // reserved tokens.
  explicit Vocab(const std::vector<std::string>& words);

  Token add(const std::string& word);
  // Adds every whitespace-separated word of `text`.
  void add_text(std::string_view text);

  bool contains(const std::string& word) const;
  Token id(const std::string& word) const;
  const std::string& word(Token t) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  TokenSeq tokenize(std::string_view text) const;
  std::string detokenize(std::span<const Token> seq) const;

  bool operator==(const Vocab& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> index_;
};

struct ProbePair {
  std::string prompt;
  std::string target;
  bool operator==(const ProbePair&) const = default;
};

struct EditRecord {
  std::string prompt;
  std::vector<std::string> ground_truth;
  std::string target_new;
  std::vector<std::string> context;
  std::vector<ProbePair> portability_probes;
  std::vector<std::string> locality_probes;
  bool operator==(const EditRecord&) const = default;
};

struct EditDataset {
  std::vector<EditRecord> records;
  Vocab vocab;
  // "loaded" or "synthetic(seed=..,entities=..,relations=..)".
  std::string provenance = "loaded";
  bool operator==(const EditDataset&) const = default;
};

struct LoadResult {
  EditDataset dataset;
  // Records lacking one of the optional fields (context, probes).
  std::size_t warnings = 0;
};

// Accepts a bare array of records or an object {vocab, provenance, records}.
// Without a stored vocabulary one is built from the record text.
LoadResult parse_edit_records(std::string_view json_text);
LoadResult load_edit_records(const std::filesystem::path& path);

std::string edit_records_json(const EditDataset& dataset);
void save_edit_records(const EditDataset& dataset, const std::filesystem::path& path);

TokenizedRecord tokenize_record(const Vocab& vocab, const EditRecord& record);
std::vector<TokenizedRecord> tokenize_dataset(const EditDataset& dataset);

// Throws InputError when any sequence of the record cannot be scored within
// `context_window` tokens (begin token included).
void check_record_fits(const TokenizedRecord& r, int context_window, int extra_tokens);

struct WorldConfig {
  std::uint64_t seed = 0;
  int n_entities = 30;
  int n_relations = 3;
  int n_edits = 10;
  // Documents that state a subject's facts.
  int docs_per_subject = 6;
  // Context-then-query documents per (subject, relation) pair.
  int context_docs_per_fact = 3;
  int locality_probes = 3;
  // Chance that a subject-document sentence names a random object of the
  // relation instead of the true one.
  double fact_noise = 0.0;
};

struct Fact {
  int subject = 0;
  int relation = 0;
  std::string subject_name;
  std::string object;
  std::string query;  // canonical question
};

struct SynthWorld {
  std::vector<TokenSeq> corpus;
  EditDataset dataset;
  std::vector<Fact> facts;
  // Index into `facts` of the fact edited by each record.
  std::vector<std::size_t> edited_facts;
};

inline constexpr int kMaxRelations = 4;

SynthWorld synth_world(const WorldConfig& config);

}  // namespace icelab
