#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rfid {

struct Passage {
  std::string title;
  std::string context;
};

/// One question with its retrieved passages. `labels[k]` is true when passage k
/// is rational (contains a gold answer span); labels are always recomputed
/// from the text, never read from disk.
struct QAExample {
  std::string id;
  std::string question;
  std::vector<std::string> answers;
  std::vector<Passage> passages;
  std::vector<bool> labels;

  std::size_t num_passages() const { return passages.size(); }
  std::size_t num_rational() const;
};

enum class MatchPolicy {
  kTokenBoundary,  // normalized answer tokens appear contiguously in the normalized passage
  kSubstring,      // normalized answer is a character substring of the normalized passage
};

// ---------------------------------------------------------------------------
// Text utilities

/// Lowercases, strips ASCII punctuation, drops the articles a/an/the and
/// collapses whitespace. Idempotent.
std::string normalize_answer(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");
std::string trim(std::string_view text);

bool label_rationale(const Passage& passage, const std::vector<std::string>& answers,
                     MatchPolicy policy = MatchPolicy::kTokenBoundary);

/// "Question : <q> ; Title : <t> ; Context : <c>" with no trailing space.
std::string format_input(std::string_view question, const Passage& passage);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Vocabulary();

  /// Adds `token` if absent; returns its id. Reserved spellings map to their ids.
  int add(const std::string& token);
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Sorted vocabulary over every whitespace token of every formatted input and
/// answer in `corpora`.
Vocabulary build_vocabulary(const std::vector<const std::vector<QAExample>*>& corpora);

struct TokenizedPair {
  std::vector<int> ids;
  std::vector<bool> attention_mask;
};

/// Whitespace tokenization, truncated or right-padded to exactly `length`.
TokenizedPair tokenize(std::string_view text, const Vocabulary& vocab, int length);

/// Answer ids without padding (no BOS/EOS).
std::vector<int> encode_answer(std::string_view answer, const Vocabulary& vocab);

/// Joins tokens with single spaces, dropping PAD/BOS/EOS.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Corpus I/O

struct RecordError {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct CorpusLoadResult {
  std::vector<QAExample> examples;
  std::vector<RecordError> rejected;
};

/// Reads DPR-style JSONL, keeping the first `passages` contexts of each record
/// in retriever order. Bad records are rejected individually; throws DataError
/// only when the file cannot be opened.
CorpusLoadResult load_corpus(const std::filesystem::path& path, int passages,
                             MatchPolicy policy = MatchPolicy::kTokenBoundary);

/// Like load_corpus but throws DataError on the first rejected record.
std::vector<QAExample> load_corpus_strict(const std::filesystem::path& path, int passages,
                                          MatchPolicy policy = MatchPolicy::kTokenBoundary);

void relabel(QAExample& example, MatchPolicy policy = MatchPolicy::kTokenBoundary);

void write_corpus(const std::filesystem::path& path, const std::vector<QAExample>& corpus);
void write_labels(const std::filesystem::path& path, const std::vector<QAExample>& corpus);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthesisConfig {
  int passages = 4;
  int min_rational = 1;
  int max_rational = 1;
  double confusability = 0.7;
  int entity_tokens = 3;
  int filler_tokens = 6;
  int name_pool = 120;
  int value_pool = 64;
  int filler_pool = 80;
  int train_size = 2000;
  int dev_size = 250;
  int test_size = 250;
  std::uint64_t seed = 0;

  void validate() const;
  int total_size() const { return train_size + dev_size + test_size; }
};

struct SyntheticCorpus {
  std::vector<QAExample> train;
  std::vector<QAExample> dev;
  std::vector<QAExample> test;
  /// Ground-truth rational flags as planted by the generator (parallel to the splits).
  std::vector<std::vector<bool>> planted_train, planted_dev, planted_test;
};

/// Template words shared by every synthetic passage regardless of entity.
const std::vector<std::string>& synthetic_template_tokens();

SyntheticCorpus generate_synthetic_corpus(const SynthesisConfig& cfg);

void to_json(nlohmann::json& j, const SynthesisConfig& c);
void from_json(const nlohmann::json& j, SynthesisConfig& c);

}  // namespace rfid
