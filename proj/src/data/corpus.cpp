#include <fstream>

#include <json.hpp>

#include "rfid/data.hpp"
#include "rfid/errors.hpp"

namespace rfid {

using nlohmann::json;

namespace {

std::string require_string(const json& obj, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end()) throw DataError(std::string("missing field \"") + field + "\"");
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw DataError(std::string("field \"") + field + "\" is not a string");
}

QAExample parse_record(const std::string& line, std::size_t line_no, int passages,
                       MatchPolicy policy) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw DataError("record is not a JSON object");

  QAExample ex;
  ex.id = obj.contains("id") ? require_string(obj, "id") : "line-" + std::to_string(line_no);
  ex.question = require_string(obj, "question");

  auto answers = obj.find("answers");
  if (answers == obj.end()) throw DataError("missing field \"answers\"");
  if (!answers->is_array() || answers->empty()) {
    throw DataError("field \"answers\" must be a non-empty array");
  }
  for (const auto& a : *answers) {
    if (!a.is_string()) throw DataError("field \"answers\" holds a non-string entry");
    ex.answers.push_back(a.get<std::string>());
  }

  auto ctxs = obj.find("ctxs");
  if (ctxs == obj.end()) throw DataError("missing field \"ctxs\"");
  if (!ctxs->is_array()) throw DataError("field \"ctxs\" is not an array");
  if (static_cast<int>(ctxs->size()) < passages) {
    throw DataError("record has " + std::to_string(ctxs->size()) + " contexts, need " +
                    std::to_string(passages));
  }
  for (int k = 0; k < passages; ++k) {
    const auto& c = (*ctxs)[static_cast<std::size_t>(k)];
    if (!c.is_object()) throw DataError("context " + std::to_string(k) + " is not an object");
    Passage p{require_string(c, "title"), require_string(c, "text")};
    if (trim(p.title).empty() || trim(p.context).empty()) {
      throw DataError("context " + std::to_string(k) + " has an empty title or text");
    }
    ex.passages.push_back(std::move(p));
  }
  relabel(ex, policy);
  return ex;
}

}  // namespace

void relabel(QAExample& example, MatchPolicy policy) {
  example.labels.clear();
  for (const auto& p : example.passages) {
    example.labels.push_back(label_rationale(p, example.answers, policy));
  }
}

CorpusLoadResult load_corpus(const std::filesystem::path& path, int passages,
                             MatchPolicy policy) {
  if (passages < 1) throw ConfigError("passages per question must be >= 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus: " + path.string());
  CorpusLoadResult result;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      result.examples.push_back(parse_record(line, line_no, passages, policy));
    } catch (const DataError& e) {
      result.rejected.push_back({line_no, e.what()});
    }
  }
  return result;
}

std::vector<QAExample> load_corpus_strict(const std::filesystem::path& path, int passages,
                                          MatchPolicy policy) {
  auto result = load_corpus(path, passages, policy);
  if (!result.rejected.empty()) {
    const auto& first = result.rejected.front();
    throw DataError(path.string() + ":" + std::to_string(first.line) + ": " + first.reason);
  }
  return std::move(result.examples);
}

void write_corpus(const std::filesystem::path& path, const std::vector<QAExample>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus: " + path.string());
  for (const auto& ex : corpus) {
    json ctxs = json::array();
    for (const auto& p : ex.passages) ctxs.push_back({{"title", p.title}, {"text", p.context}});
    json obj = {{"id", ex.id}, {"question", ex.question}, {"answers", ex.answers},
                {"ctxs", ctxs}};
    out << obj.dump() << '\n';
  }
}

void write_labels(const std::filesystem::path& path, const std::vector<QAExample>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write labels: " + path.string());
  for (const auto& ex : corpus) {
    json obj = {{"id", ex.id}, {"labels", ex.labels}};
    out << obj.dump() << '\n';
  }
}

}  // namespace rfid
