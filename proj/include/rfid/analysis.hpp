#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rfid/data.hpp"
#include "rfid/model.hpp"
#include "rfid/parameters.hpp"

namespace rfid {

/// CA of passage k: summed over decoder layers, generated steps and the
/// passage's token positions, averaged over heads. The guidance slot is not
/// included.
double passage_cross_attention(const AttentionTrace& trace, int k);

/// Head-averaged attention on the guidance slot of passage k, summed over
/// layers and steps. Zero for unguided traces.
double guidance_cross_attention(const AttentionTrace& trace, int k);

struct QuestionAttention {
  std::string id;
  std::vector<int> labels;
  std::vector<double> ca;        // per passage
  std::vector<double> guidance;  // per passage
  int n_pos = 0;
  int steps = 0;
};

QuestionAttention attribute(const std::string& id, const std::vector<bool>& labels,
                            const AttentionTrace& trace);

struct CARatioReport {
  double mean_ca_pos = 0.0;
  double mean_ca_neg = 0.0;
  std::optional<double> r_pos_neg;
  std::string null_reason;  // set when r_pos_neg is empty
  int n_questions = 0;
  int n_pos_included = 0;   // questions with at least one positive
  int n_neg_included = 0;   // questions with at least one negative
  int excluded_no_pos = 0;
  int excluded_all_pos = 0;
  std::vector<QuestionAttention> rows;  // sorted by id
};

/// Two-level average: per question the mean CA of its positive (negative)
/// passages, then the mean of those over eligible questions.
CARatioReport ca_ratio(std::vector<QuestionAttention> rows);

/// Generates every question greedily and reduces its trace.
CARatioReport ca_ratio(const std::vector<QAExample>& corpus, const Parameters<float>& params,
                       const Vocabulary& vocab);

struct CaseRow {
  int passage = 0;
  int label = 0;
  int pred = 0;
  double ca = 0.0;
  double guidance = 0.0;
  std::string title;
  std::string excerpt;
};

struct CaseReport {
  std::string id;
  std::string question;
  std::string prediction;
  std::vector<std::string> answers;
  bool em = false;
  std::vector<CaseRow> rows;  // CA descending, passage index on ties
};

/// Throws NotFoundError when `id` is absent.
CaseReport case_report(const std::string& id, const std::vector<QAExample>& corpus,
                       const Parameters<float>& params, const Vocabulary& vocab);

std::string format_case_report(const CaseReport& report);

nlohmann::json to_json(const CARatioReport& report, bool with_rows = false);
nlohmann::json to_json(const CaseReport& report);

}  // namespace rfid
