#include <algorithm>
#include <cstdio>
#include <sstream>

#include "rfid/analysis.hpp"
#include "rfid/errors.hpp"
#include "rfid/eval.hpp"
#include "rfid/parallel.hpp"

namespace rfid {

using nlohmann::json;

double passage_cross_attention(const AttentionTrace& trace, int k) {
  require(k >= 0 && k < trace.passages, "passage_cross_attention: passage index out of range");
  double total = 0.0;
  for (int l = 0; l < trace.layers; ++l) {
    double layer = 0.0;
    for (int h = 0; h < trace.heads; ++h) {
      const auto& s = trace.scores[static_cast<std::size_t>(l * trace.heads + h)];
      layer += s.middleCols(trace.position(k, 0), trace.tokens).sum();
    }
    total += layer / trace.heads;
  }
  return total;
}

double guidance_cross_attention(const AttentionTrace& trace, int k) {
  require(k >= 0 && k < trace.passages, "guidance_cross_attention: passage index out of range");
  if (!trace.guided) return 0.0;
  double total = 0.0;
  for (int l = 0; l < trace.layers; ++l) {
    double layer = 0.0;
    for (int h = 0; h < trace.heads; ++h) {
      layer += trace.scores[static_cast<std::size_t>(l * trace.heads + h)]
                   .col(trace.guidance_position(k))
                   .sum();
    }
    total += layer / trace.heads;
  }
  return total;
}

QuestionAttention attribute(const std::string& id, const std::vector<bool>& labels,
                            const AttentionTrace& trace) {
  require(static_cast<int>(labels.size()) == trace.passages, "attribute: label count mismatch");
  QuestionAttention q;
  q.id = id;
  q.steps = trace.steps;
  for (int k = 0; k < trace.passages; ++k) {
    q.labels.push_back(labels[static_cast<std::size_t>(k)] ? 1 : 0);
    q.ca.push_back(passage_cross_attention(trace, k));
    q.guidance.push_back(guidance_cross_attention(trace, k));
    q.n_pos += q.labels.back();
  }
  return q;
}

CARatioReport ca_ratio(std::vector<QuestionAttention> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const QuestionAttention& a, const QuestionAttention& b) { return a.id < b.id; });
  CARatioReport r;
  double pos_sum = 0.0;
  double neg_sum = 0.0;
  for (const auto& q : rows) {
    const int n = static_cast<int>(q.ca.size());
    double pos = 0.0;
    double neg = 0.0;
    for (int k = 0; k < n; ++k) (q.labels[static_cast<std::size_t>(k)] ? pos : neg) += q.ca[static_cast<std::size_t>(k)];
    if (q.n_pos > 0) {
      pos_sum += pos / q.n_pos;
      ++r.n_pos_included;
    } else {
      ++r.excluded_no_pos;
    }
    if (q.n_pos < n) {
      neg_sum += neg / (n - q.n_pos);
      ++r.n_neg_included;
    } else {
      ++r.excluded_all_pos;
    }
  }
  r.n_questions = static_cast<int>(rows.size());
  if (r.n_pos_included > 0) r.mean_ca_pos = pos_sum / r.n_pos_included;
  if (r.n_neg_included > 0) r.mean_ca_neg = neg_sum / r.n_neg_included;
  if (r.n_pos_included == 0) {
    r.null_reason = "no question has a positive passage";
  } else if (r.n_neg_included == 0) {
    r.null_reason = "no question has a negative passage";
  } else if (r.mean_ca_neg <= 0.0) {
    r.null_reason = "mean CA on negative passages is zero";
  } else {
    r.r_pos_neg = r.mean_ca_pos / r.mean_ca_neg;
  }
  r.rows = std::move(rows);
  return r;
}

CARatioReport ca_ratio(const std::vector<QAExample>& corpus, const Parameters<float>& params,
                       const Vocabulary& vocab) {
  std::vector<QuestionAttention> rows(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto& ex = corpus[i];
    auto gen = generate<float>(ex.question, ex.passages, vocab, params, params.config().max_target);
    rows[i] = attribute(ex.id, ex.labels, gen.trace);
  });
  return ca_ratio(std::move(rows));
}

namespace {

std::string excerpt(const std::string& text, std::size_t limit = 60) {
  if (text.size() <= limit) return text;
  return text.substr(0, limit - 3) + "...";
}

}  // namespace

CaseReport case_report(const std::string& id, const std::vector<QAExample>& corpus,
                       const Parameters<float>& params, const Vocabulary& vocab) {
  auto it = std::find_if(corpus.begin(), corpus.end(),
                         [&](const QAExample& ex) { return ex.id == id; });
  if (it == corpus.end()) throw NotFoundError("unknown question id: " + id);
  const auto& ex = *it;
  auto gen = generate<float>(ex.question, ex.passages, vocab, params, params.config().max_target);
  const auto q = attribute(ex.id, ex.labels, gen.trace);

  CaseReport report;
  report.id = ex.id;
  report.question = ex.question;
  report.prediction = gen.text;
  report.answers = ex.answers;
  report.em = exact_match(gen.text, ex.answers);
  for (std::size_t k = 0; k < ex.passages.size(); ++k) {
    report.rows.push_back({static_cast<int>(k), q.labels[k], gen.preds[k], q.ca[k], q.guidance[k],
                           ex.passages[k].title, excerpt(ex.passages[k].context)});
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const CaseRow& a, const CaseRow& b) { return a.ca > b.ca; });
  return report;
}

std::string format_case_report(const CaseReport& r) {
  std::ostringstream out;
  out << "id:         " << r.id << '\n'
      << "question:   " << r.question << '\n'
      << "prediction: " << r.prediction << (r.em ? "  (EM)" : "") << '\n'
      << "gold:       ";
  for (std::size_t i = 0; i < r.answers.size(); ++i) out << (i ? " | " : "") << r.answers[i];
  out << "\n\n";
  std::size_t title_width = 5;
  for (const auto& row : r.rows) title_width = std::max(title_width, row.title.size());
  char line[512];
  std::snprintf(line, sizeof line, "%-7s %-5s %-4s %10s %10s  %-*s  %s\n", "passage", "label",
                "pred", "CA", "guidance", static_cast<int>(title_width), "title", "excerpt");
  out << line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-7d %-5d %-4d %10.6f %10.6f  %-*s  ", row.passage,
                  row.label, row.pred, row.ca, row.guidance, static_cast<int>(title_width),
                  row.title.c_str());
    out << line << row.excerpt << '\n';
  }
  return out.str();
}

json to_json(const CARatioReport& r, bool with_rows) {
  json j = {{"mean_ca_pos", r.mean_ca_pos},
            {"mean_ca_neg", r.mean_ca_neg},
            {"r_pos_neg", r.r_pos_neg ? json(*r.r_pos_neg) : json(nullptr)},
            {"n_questions", r.n_questions},
            {"n_pos_included", r.n_pos_included},
            {"n_neg_included", r.n_neg_included},
            {"excluded_no_pos", r.excluded_no_pos},
            {"excluded_all_pos", r.excluded_all_pos}};
  if (!r.r_pos_neg) j["null_reason"] = r.null_reason;
  if (with_rows) {
    json rows = json::array();
    for (const auto& q : r.rows) {
      rows.push_back({{"id", q.id},
                      {"n_pos", q.n_pos},
                      {"steps", q.steps},
                      {"labels", q.labels},
                      {"ca", q.ca},
                      {"guidance", q.guidance}});
    }
    j["rows"] = std::move(rows);
  }
  return j;
}

json to_json(const CaseReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"passage", row.passage},
                    {"label", row.label},
                    {"pred", row.pred},
                    {"ca", row.ca},
                    {"guidance", row.guidance},
                    {"title", row.title},
                    {"excerpt", row.excerpt}});
  }
  return {{"id", r.id},
          {"question", r.question},
          {"prediction", r.prediction},
          {"answers", r.answers},
          {"em", r.em},
          {"rows", rows}};
}

}  // namespace rfid
