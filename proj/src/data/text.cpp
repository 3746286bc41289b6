#include <algorithm>
#include <cctype>

#include "rfid/data.hpp"

namespace rfid {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

bool contains_sequence(const std::vector<std::string>& haystack,
                       const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

std::size_t QAExample::num_rational() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

std::string trim(std::string_view text) {
  auto first = std::find_if_not(text.begin(), text.end(), is_space);
  auto last = std::find_if_not(text.rbegin(), text.rend(), is_space).base();
  return first < last ? std::string(first, last) : std::string();
}

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    if (is_punct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::vector<std::string> kept;
  for (auto& tok : split_whitespace(lowered)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    kept.push_back(std::move(tok));
  }
  return join(kept);
}

bool label_rationale(const Passage& passage, const std::vector<std::string>& answers,
                     MatchPolicy policy) {
  const std::string text = normalize_answer(passage.title + " " + passage.context);
  const auto text_tokens = policy == MatchPolicy::kTokenBoundary
                               ? split_whitespace(text)
                               : std::vector<std::string>{};
  for (const auto& answer : answers) {
    const std::string norm = normalize_answer(answer);
    if (norm.empty()) continue;
    if (policy == MatchPolicy::kSubstring) {
      if (text.find(norm) != std::string::npos) return true;
    } else if (contains_sequence(text_tokens, split_whitespace(norm))) {
      return true;
    }
  }
  return false;
}

std::string format_input(std::string_view question, const Passage& passage) {
  std::string out = "Question : ";
  out += question;
  out += " ; Title : ";
  out += passage.title;
  out += " ; Context : ";
  out += passage.context;
  while (!out.empty() && is_space(out.back())) out.pop_back();
  return out;
}

}  // namespace rfid
