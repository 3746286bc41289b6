#include <algorithm>
#include <fstream>

#include "rfid/errors.hpp"
#include "rfid/eval.hpp"
#include "rfid/model.hpp"
#include "rfid/parallel.hpp"

namespace rfid {

using nlohmann::json;

bool exact_match(std::string_view prediction, const std::vector<std::string>& golds) {
  const std::string pred = normalize_answer(prediction);
  return std::any_of(golds.begin(), golds.end(),
                     [&](const std::string& g) { return normalize_answer(g) == pred; });
}

Reader model_reader(const Parameters<float>& params, const Vocabulary& vocab) {
  return [&params, &vocab](const QAExample& ex) {
    auto gen = generate<float>(ex.question, ex.passages, vocab, params, params.config().max_target);
    return ReaderOutput{std::move(gen.text), std::move(gen.preds)};
  };
}

Reader oracle_reader() {
  return [](const QAExample& ex) {
    ReaderOutput out;
    out.answer = ex.answers.empty() ? std::string() : ex.answers.front();
    for (bool l : ex.labels) out.preds.push_back(l ? 1 : 0);
    return out;
  };
}

EvalReport evaluate(const std::vector<QAExample>& corpus, const Reader& reader) {
  std::vector<const QAExample*> order;
  for (const auto& ex : corpus) order.push_back(&ex);
  std::sort(order.begin(), order.end(),
            [](const QAExample* a, const QAExample* b) { return a->id < b->id; });

  EvalReport report;
  report.records.resize(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    const auto& ex = *order[i];
    auto out = reader(ex);
    auto& rec = report.records[i];
    rec.id = ex.id;
    rec.answers = ex.answers;
    rec.em = exact_match(out.answer, ex.answers);
    rec.prediction = std::move(out.answer);
    rec.preds = std::move(out.preds);
    for (bool l : ex.labels) rec.labels.push_back(l ? 1 : 0);
  });

  long correct = 0;
  for (const auto& rec : report.records) {
    correct += rec.em;
    if (rec.preds.empty()) continue;
    require(rec.preds.size() == rec.labels.size(), "evaluate: pred count != passage count");
    for (std::size_t k = 0; k < rec.preds.size(); ++k) {
      const bool p = rec.preds[k] == 1;
      const bool y = rec.labels[k] == 1;
      if (p && y) ++report.tp;
      else if (p) ++report.fp;
      else if (y) ++report.fn;
      else ++report.tn;
    }
  }
  report.n_questions = static_cast<int>(report.records.size());
  if (report.n_questions > 0) {
    report.exact_match = static_cast<double>(correct) / report.n_questions;
  }
  const long pairs = report.tp + report.fp + report.tn + report.fn;
  if (pairs > 0) report.ratn_accuracy = static_cast<double>(report.tp + report.tn) / pairs;
  if (report.tp + report.fp > 0) {
    report.ratn_precision = static_cast<double>(report.tp) / (report.tp + report.fp);
  }
  if (report.tp + report.fn > 0) {
    report.ratn_recall = static_cast<double>(report.tp) / (report.tp + report.fn);
  }
  return report;
}

void check_compatibility(const ModelConfig& cfg, const Vocabulary& ckpt_vocab,
                         const std::vector<QAExample>& corpus, const Vocabulary* corpus_vocab) {
  for (const auto& ex : corpus) {
    if (static_cast<int>(ex.passages.size()) != cfg.passages) {
      throw DataError("passages: checkpoint expects " + std::to_string(cfg.passages) +
                      " per question, " + ex.id + " has " + std::to_string(ex.passages.size()));
    }
  }
  if (static_cast<int>(ckpt_vocab.size()) != cfg.vocab_size) {
    throw DataError("vocab_size: checkpoint header says " + std::to_string(cfg.vocab_size) +
                    ", vocabulary has " + std::to_string(ckpt_vocab.size()));
  }
  if (corpus_vocab && !(*corpus_vocab == ckpt_vocab)) {
    throw DataError("vocabulary: corpus vocabulary (" + std::to_string(corpus_vocab->size()) +
                    " tokens) differs from the checkpoint's (" +
                    std::to_string(ckpt_vocab.size()) + " tokens)");
  }
}

json to_json(const EvalReport& r, bool with_records) {
  json j = {{"n_questions", r.n_questions},
            {"exact_match", r.exact_match},
            {"ratn_accuracy", r.ratn_accuracy},
            {"ratn_precision", r.ratn_precision},
            {"ratn_recall", r.ratn_recall},
            {"tp", r.tp},
            {"fp", r.fp},
            {"tn", r.tn},
            {"fn", r.fn}};
  if (with_records) {
    json recs = json::array();
    for (const auto& rec : r.records) {
      recs.push_back({{"id", rec.id},
                      {"prediction", rec.prediction},
                      {"answers", rec.answers},
                      {"em", rec.em},
                      {"preds", rec.preds},
                      {"labels", rec.labels}});
    }
    j["records"] = std::move(recs);
  }
  return j;
}

void write_records_jsonl(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& rec : report.records) {
    out << json{{"id", rec.id},
                {"prediction", rec.prediction},
                {"answers", rec.answers},
                {"em", rec.em},
                {"preds", rec.preds},
                {"labels", rec.labels}}
               .dump()
        << '\n';
  }
}

}  // namespace rfid
