#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "rfid/data.hpp"
#include "rfid/errors.hpp"
#include "rfid/random.hpp"

namespace rfid {

namespace {

struct Relation {
  const char* question;   // "{E}" marks the entity
  const char* statement;  // "{E}" entity, "{V}" value
};

constexpr Relation kRelations[] = {
    {"when was {E} born ?", "{E} was born in {V} ."},
    {"when was {E} founded ?", "{E} was founded in {V} ."},
    {"when did {E} die ?", "{E} died in {V} ."},
    {"when was {E} crowned ?", "{E} was crowned in {V} ."},
};
constexpr int kNumRelations = static_cast<int>(std::size(kRelations));

constexpr int kFirstYear = 1500;
constexpr int kLastYear = 1999;

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "river",   "valley",   "north",   "south",   "east",     "west",    "coast",   "harbor",
      "market",  "castle",   "bridge",  "tower",   "garden",   "forest",  "island",  "mountain",
      "village", "province", "temple",  "library", "museum",   "theater", "school",  "college",
      "army",    "navy",     "council", "court",   "church",   "abbey",   "mill",    "farm",
      "bronze",  "silver",   "golden",  "iron",    "stone",    "marble",  "timber",  "glass",
      "famous",  "ancient",  "modern",  "large",   "small",    "quiet",   "busy",    "remote",
      "early",   "later",    "often",   "rarely",  "widely",   "locally", "known",   "noted",
      "painter", "poet",     "sailor",  "merchant", "scholar", "soldier", "builder", "priest",
      "music",   "poetry",   "trade",   "wine",    "wool",     "salt",    "grain",   "horses",
      "rain",    "snow",     "winter",  "summer",  "spring",   "autumn",  "festival", "fair",
      "lake",    "canal",    "road",    "gate",    "square",   "hall",    "palace",  "fort",
      "crown",   "banner",   "shield",  "sword",   "ship",     "fleet",   "map",     "chart",
      "letters", "records",  "legends", "songs",   "tales",    "books",   "maps",    "coins",
      "wealth",  "power",    "honor",   "faith",   "peace",    "war",     "treaty",  "charter",
  };
  return words;
}

std::vector<std::string> template_words() {
  std::set<std::string> words = {"Question", ":", ";", "Title", "Context"};
  for (const auto& rel : kRelations) {
    for (const char* text : {rel.question, rel.statement}) {
      for (auto& tok : split_whitespace(text)) {
        if (tok != "{E}" && tok != "{V}") words.insert(tok);
      }
    }
  }
  return {words.begin(), words.end()};
}

std::vector<std::string> make_name_pool(int count, std::mt19937_64& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::unordered_set<std::string> banned(filler_words().begin(), filler_words().end());
  for (const auto& w : template_words()) banned.insert(w);
  std::vector<std::string> all;
  for (char c1 : consonants)
    for (char v1 : vowels)
      for (char c2 : consonants)
        for (char v2 : vowels) {
          std::string w{c1, v1, c2, v2};
          if (!banned.count(w)) all.push_back(std::move(w));
        }
  if (count > static_cast<int>(all.size())) {
    throw ConfigError("name_pool larger than the available pseudo-word inventory");
  }
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

std::string fill(const char* tmpl, const std::string& entity, const std::string& value) {
  std::vector<std::string> out;
  for (auto& tok : split_whitespace(tmpl)) {
    if (tok == "{E}") out.push_back(entity);
    else if (tok == "{V}") out.push_back(value);
    else out.push_back(tok);
  }
  return join(out);
}

template <class T>
T pick(const std::vector<T>& pool, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> dist(0, pool.size() - 1);
  return pool[dist(rng)];
}

// Draws `count` distinct entries of `pool` that are not in `excluded`.
std::vector<std::string> draw_distinct(const std::vector<std::string>& pool, int count,
                                       const std::set<std::string>& excluded,
                                       std::mt19937_64& rng) {
  std::vector<std::string> candidates;
  for (const auto& w : pool) {
    if (!excluded.count(w)) candidates.push_back(w);
  }
  if (static_cast<int>(candidates.size()) < count) {
    throw ConfigError("synthetic pools too small: need " + std::to_string(count) +
                      " fresh tokens, have " + std::to_string(candidates.size()));
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(static_cast<std::size_t>(count));
  return candidates;
}

int shared_count(double confusability, int n) {
  return static_cast<int>(std::lround(confusability * n));
}

std::string passage_context(const std::string& statement, const std::vector<std::string>& filler,
                            bool statement_first) {
  const std::string filler_sentence = join(filler) + " .";
  if (filler.empty()) return statement;
  return statement_first ? statement + " " + filler_sentence : filler_sentence + " " + statement;
}

}  // namespace

const std::vector<std::string>& synthetic_template_tokens() {
  static const std::vector<std::string> words = template_words();
  return words;
}

void SynthesisConfig::validate() const {
  if (passages < 1) throw ConfigError("synthesis: passages must be >= 1");
  if (min_rational < 0 || max_rational < min_rational || max_rational > passages) {
    throw ConfigError("synthesis: rational range must satisfy 0 <= min <= max <= passages");
  }
  if (!(confusability >= 0.0 && confusability <= 1.0)) {
    throw ConfigError("synthesis: confusability must lie in [0, 1]");
  }
  if (entity_tokens < 1) throw ConfigError("synthesis: entity_tokens must be >= 1");
  if (filler_tokens < 0) throw ConfigError("synthesis: filler_tokens must be >= 0");
  if (name_pool < 2 * entity_tokens) {
    throw ConfigError("synthesis: name_pool must hold at least two disjoint entities");
  }
  if (value_pool < 2 || value_pool > kLastYear - kFirstYear + 1) {
    throw ConfigError("synthesis: value_pool must lie in [2, " +
                      std::to_string(kLastYear - kFirstYear + 1) + "]");
  }
  if (filler_pool < 0 || filler_pool > static_cast<int>(filler_words().size())) {
    throw ConfigError("synthesis: filler_pool must lie in [0, " +
                      std::to_string(filler_words().size()) + "]");
  }
  if (filler_tokens > filler_pool) {
    throw ConfigError("synthesis: filler_tokens exceeds filler_pool");
  }
  if (train_size < 0 || dev_size < 0 || test_size < 0 || total_size() < 1) {
    throw ConfigError("synthesis: split sizes must be non-negative with a positive total");
  }
  // Each (entity, relation) pair is used once; cap demand well below the supply.
  const double entities = std::pow(static_cast<double>(name_pool), entity_tokens);
  if (static_cast<double>(total_size()) > 0.5 * entities * kNumRelations) {
    throw ConfigError("synthesis: name_pool too small for the requested corpus size");
  }
}

SyntheticCorpus generate_synthetic_corpus(const SynthesisConfig& cfg) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, "data");
  const auto names = make_name_pool(cfg.name_pool, rng);

  std::vector<int> years(kLastYear - kFirstYear + 1);
  std::iota(years.begin(), years.end(), kFirstYear);
  std::shuffle(years.begin(), years.end(), rng);
  std::vector<std::string> values;
  for (int i = 0; i < cfg.value_pool; ++i) values.push_back(std::to_string(years[i]));

  const std::vector<std::string> fillers(filler_words().begin(),
                                         filler_words().begin() + cfg.filler_pool);

  std::set<std::pair<std::string, int>> used;
  std::uniform_int_distribution<int> relation_dist(0, kNumRelations - 1);
  std::uniform_int_distribution<int> rational_dist(cfg.min_rational, cfg.max_rational);
  std::bernoulli_distribution coin(0.5);

  const int shared_entity = std::min(shared_count(cfg.confusability, cfg.entity_tokens),
                                     cfg.entity_tokens - 1);
  const int shared_filler = shared_count(cfg.confusability, cfg.filler_tokens);

  auto make_example = [&](const std::string& id, std::vector<bool>& planted) {
    int relation = 0;
    std::vector<std::string> entity;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw ConfigError("synthesis: could not find a fresh (entity, relation)");
      relation = relation_dist(rng);
      entity = draw_distinct(names, cfg.entity_tokens, {}, rng);
      if (used.emplace(join(entity), relation).second) break;
    }
    const Relation& rel = kRelations[relation];
    const std::string value = pick(values, rng);
    std::string wrong;
    do wrong = pick(values, rng);
    while (wrong == value);

    QAExample ex;
    ex.id = id;
    ex.question = fill(rel.question, join(entity), value);
    ex.answers = {value};

    const int n_rational = rational_dist(rng);
    std::vector<Passage> rational, spurious;
    std::set<std::string> rational_fillers;
    std::vector<std::string> reference_filler;
    for (int i = 0; i < n_rational; ++i) {
      auto filler = draw_distinct(fillers, cfg.filler_tokens, {}, rng);
      if (i == 0) reference_filler = filler;
      rational_fillers.insert(filler.begin(), filler.end());
      rational.push_back({join(entity), passage_context(fill(rel.statement, join(entity), value),
                                                        filler, coin(rng))});
    }

    // Confusable entity: keeps `shared_entity` tokens in place, swaps the rest.
    std::vector<std::string> confusable = entity;
    {
      std::vector<int> slots(static_cast<std::size_t>(cfg.entity_tokens));
      std::iota(slots.begin(), slots.end(), 0);
      std::shuffle(slots.begin(), slots.end(), rng);
      const std::set<std::string> taken(entity.begin(), entity.end());
      const int swaps = cfg.entity_tokens - shared_entity;
      auto fresh = draw_distinct(names, swaps, taken, rng);
      for (int i = 0; i < swaps; ++i) confusable[static_cast<std::size_t>(slots[i])] = fresh[i];
    }
    for (int i = n_rational; i < cfg.passages; ++i) {
      std::vector<std::string> filler;
      if (!reference_filler.empty()) {
        auto kept = reference_filler;
        std::shuffle(kept.begin(), kept.end(), rng);
        kept.resize(static_cast<std::size_t>(shared_filler));
        filler = kept;
      }
      auto fresh = draw_distinct(fillers, cfg.filler_tokens - static_cast<int>(filler.size()),
                                 rational_fillers, rng);
      filler.insert(filler.end(), fresh.begin(), fresh.end());
      std::shuffle(filler.begin(), filler.end(), rng);
      spurious.push_back({join(confusable),
                          passage_context(fill(rel.statement, join(confusable), wrong), filler,
                                          coin(rng))});
    }

    std::vector<std::pair<Passage, bool>> all;
    for (auto& p : rational) all.emplace_back(std::move(p), true);
    for (auto& p : spurious) all.emplace_back(std::move(p), false);
    std::shuffle(all.begin(), all.end(), rng);
    planted.clear();
    for (auto& [p, label] : all) {
      ex.passages.push_back(std::move(p));
      planted.push_back(label);
    }
    relabel(ex);
    return ex;
  };

  SyntheticCorpus corpus;
  auto make_split = [&](const char* prefix, int count, std::vector<QAExample>& out,
                        std::vector<std::vector<bool>>& planted) {
    for (int i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05d", prefix, i);
      planted.emplace_back();
      out.push_back(make_example(id, planted.back()));
    }
  };
  make_split("train", cfg.train_size, corpus.train, corpus.planted_train);
  make_split("dev", cfg.dev_size, corpus.dev, corpus.planted_dev);
  make_split("test", cfg.test_size, corpus.test, corpus.planted_test);
  return corpus;
}

}  // namespace rfid
