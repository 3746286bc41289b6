#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rfid/errors.hpp"
#include "rfid/eval.hpp"
#include "support.hpp"

using namespace rfid;

namespace {

std::vector<QAExample> corpus_with_labels(int questions, int passages, int rational_at) {
  std::vector<QAExample> out;
  for (int q = 0; q < questions; ++q) {
    QAExample ex;
    ex.id = "q" + std::to_string(q);
    ex.question = "when ?";
    ex.answers = {"19" + std::to_string(10 + q)};
    for (int k = 0; k < passages; ++k) {
      ex.passages.push_back({"t", k == rational_at ? "in " + ex.answers[0] : "in 1800"});
    }
    relabel(ex);
    out.push_back(ex);
  }
  return out;
}

}  // namespace

TEST_CASE("oracle reader scores EM 1") {
  const auto corpus = corpus_with_labels(10, 4, 2);
  const auto report = evaluate(corpus, oracle_reader());
  CHECK(report.n_questions == 10);
  CHECK(report.exact_match == 1.0);
  CHECK(report.ratn_accuracy == 1.0);
  CHECK(report.ratn_precision == 1.0);
  CHECK(report.ratn_recall == 1.0);
}

TEST_CASE("all-spurious classifier with one rational passage in four") {
  const auto corpus = corpus_with_labels(12, 4, 1);
  Reader zero = [](const QAExample& ex) {
    return ReaderOutput{"nothing", std::vector<int>(ex.passages.size(), 0)};
  };
  const auto r = evaluate(corpus, zero);
  CHECK(r.exact_match == 0.0);
  CHECK(r.ratn_accuracy == doctest::Approx(0.75));
  CHECK(r.ratn_recall == 0.0);
  CHECK(r.ratn_precision == 0.0);
  CHECK(r.tp == 0);
  CHECK(r.fn == 12);
  CHECK(r.tn == 36);
}

TEST_CASE("report is consistent with its records and ordered by id") {
  auto corpus = corpus_with_labels(9, 3, 0);
  std::reverse(corpus.begin(), corpus.end());
  Reader alternating = [](const QAExample& ex) {
    const bool odd = (ex.id.back() - '0') % 2 == 1;
    return ReaderOutput{odd ? ex.answers[0] : "x", {odd ? 1 : 0, 1, 0}};
  };
  const auto r = evaluate(corpus, alternating);
  for (std::size_t i = 1; i < r.records.size(); ++i) CHECK(r.records[i - 1].id < r.records[i].id);
  long correct = 0, agree = 0, pairs = 0;
  for (const auto& rec : r.records) {
    correct += rec.em;
    for (std::size_t k = 0; k < rec.preds.size(); ++k) {
      agree += rec.preds[k] == rec.labels[k];
      ++pairs;
    }
  }
  CHECK(r.exact_match == doctest::Approx(static_cast<double>(correct) / r.n_questions));
  CHECK(r.ratn_accuracy == doctest::Approx(static_cast<double>(agree) / pairs));
  CHECK(r.ratn_accuracy == doctest::Approx(static_cast<double>(r.tp + r.tn) / (3 * r.n_questions)));

  const auto again = evaluate(corpus, alternating);
  CHECK(to_json(again, true) == to_json(r, true));
  for (const char* key : {"exact_match", "ratn_accuracy", "ratn_precision", "ratn_recall"}) {
    const double v = to_json(r)[key].get<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("model reader is deterministic") {
  const auto corpus = generate_synthetic_corpus(rfid::testing::small_synthesis(2, 6));
  const auto vocab = build_vocabulary({&corpus.train, &corpus.dev});
  const auto params = initialize_parameters<float>(rfid::testing::tiny_model(vocab.size(), 2));
  const auto a = evaluate(corpus.dev, model_reader(params, vocab));
  const auto b = evaluate(corpus.dev, model_reader(params, vocab));
  CHECK(to_json(a, true) == to_json(b, true));
  CHECK(a.tp + a.fp + a.tn + a.fn == 2 * a.n_questions);
}

TEST_CASE("compatibility check names the mismatched field") {
  const auto corpus = corpus_with_labels(2, 3, 0);
  Vocabulary vocab;
  vocab.add("x");
  ModelConfig cfg;
  cfg.passages = 4;
  cfg.vocab_size = vocab.size();
  try {
    check_compatibility(cfg, vocab, corpus, nullptr);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("passages") != std::string::npos);
  }
  cfg.passages = 3;
  CHECK_NOTHROW(check_compatibility(cfg, vocab, corpus, nullptr));
  Vocabulary other;
  other.add("y");
  try {
    check_compatibility(cfg, vocab, corpus, &other);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("vocabulary") != std::string::npos);
  }
}
