#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rfid/data.hpp"
#include "rfid/parameters.hpp"

namespace rfid {

/// True iff the normalized prediction equals some normalized gold answer.
bool exact_match(std::string_view prediction, const std::vector<std::string>& golds);

/// What a reader produces for one question: the answer text and, when it
/// has a rationale head, one predicted label per passage.
struct ReaderOutput {
  std::string answer;
  std::vector<int> preds;
};

using Reader = std::function<ReaderOutput(const QAExample&)>;

/// Greedy-decoding reader over trained parameters.
Reader model_reader(const Parameters<float>& params, const Vocabulary& vocab);

/// Returns the first gold answer and the gold labels.
Reader oracle_reader();

struct ExampleRecord {
  std::string id;
  std::string prediction;
  std::vector<std::string> answers;
  bool em = false;
  std::vector<int> preds;
  std::vector<int> labels;
};

struct EvalReport {
  int n_questions = 0;
  double exact_match = 0.0;
  double ratn_accuracy = 0.0;
  double ratn_precision = 0.0;  // 0 when nothing is predicted rational
  double ratn_recall = 0.0;     // 0 when nothing is labeled rational
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::vector<ExampleRecord> records;  // sorted by id
};

/// Runs the reader on every question (in parallel) and scores EM and the
/// per-passage rationale predictions. Readers that return no preds leave the
/// rationale counters at zero.
EvalReport evaluate(const std::vector<QAExample>& corpus, const Reader& reader);

/// Throws DataError naming the first field on which a checkpoint and a
/// corpus disagree (passages, vocabulary).
void check_compatibility(const ModelConfig& cfg, const Vocabulary& ckpt_vocab,
                         const std::vector<QAExample>& corpus, const Vocabulary* corpus_vocab);

nlohmann::json to_json(const EvalReport& report, bool with_records = false);
void write_records_jsonl(const std::filesystem::path& path, const EvalReport& report);

}  // namespace rfid
