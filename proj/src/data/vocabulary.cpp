#include <algorithm>
#include <fstream>
#include <set>

#include "rfid/data.hpp"
#include "rfid/errors.hpp"

namespace rfid {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const auto& tok : kReserved) {
    index_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(tok);
  }
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = size();
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  require(id >= 0 && id < size(), "token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary: " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary: " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return from_tokens(lines);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < kReserved.size() ||
      !std::equal(kReserved.begin(), kReserved.end(), tokens.begin())) {
    throw DataError("vocabulary must start with the reserved tokens <pad> <s> </s> <unk>");
  }
  Vocabulary vocab;
  for (std::size_t i = kReserved.size(); i < tokens.size(); ++i) {
    if (tokens[i].empty() || vocab.contains(tokens[i])) {
      throw DataError("vocabulary token at line " + std::to_string(i + 1) +
                      " is empty or duplicated");
    }
    vocab.add(tokens[i]);
  }
  return vocab;
}

Vocabulary build_vocabulary(const std::vector<const std::vector<QAExample>*>& corpora) {
  std::set<std::string> seen;
  for (const auto* corpus : corpora) {
    for (const auto& ex : *corpus) {
      for (const auto& p : ex.passages) {
        for (auto& tok : split_whitespace(format_input(ex.question, p))) seen.insert(tok);
      }
      for (const auto& a : ex.answers) {
        for (auto& tok : split_whitespace(a)) seen.insert(tok);
      }
    }
  }
  Vocabulary vocab;
  for (const auto& tok : seen) vocab.add(tok);
  return vocab;
}

TokenizedPair tokenize(std::string_view text, const Vocabulary& vocab, int length) {
  require(length >= 0, "tokenize: negative length");
  TokenizedPair out;
  out.ids.assign(static_cast<std::size_t>(length), Vocabulary::kPad);
  out.attention_mask.assign(static_cast<std::size_t>(length), false);
  const auto tokens = split_whitespace(text);
  const std::size_t n = std::min(tokens.size(), static_cast<std::size_t>(length));
  for (std::size_t i = 0; i < n; ++i) {
    out.ids[i] = vocab.id(tokens[i]);
    out.attention_mask[i] = true;
  }
  return out;
}

std::vector<int> encode_answer(std::string_view answer, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : split_whitespace(answer)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> toks;
  for (int id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    toks.push_back(vocab.token(id));
  }
  return join(toks);
}

}  // namespace rfid
