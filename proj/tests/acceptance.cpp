// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Criteria 7 to 9 train nine models and take a while.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "rfid/analysis.hpp"
#include "rfid/eval.hpp"
#include "rfid/model.hpp"
#include "rfid/training.hpp"
#include "support.hpp"

using namespace rfid;
using rfid::testing::read_file;
using rfid::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Settings {
  int steps = 5000;
  double lr = 1e-3;
  int eval_interval = 250;
  int dev_limit = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string keep;  // directory for run artifacts; temp when empty
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// --- 1 --------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = generate_synthetic_corpus(rfid::testing::small_synthesis(2, 8));
  const auto vocab = build_vocabulary({&corpus.train});
  const auto cfg = rfid::testing::tiny_model(vocab.size(), 2);
  const auto params = initialize_parameters<double>(cfg);
  std::vector<EncodedExample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(encode_example(corpus.train[i], vocab, cfg));
  const auto report = gradient_check(params, batch, GradientCheckOptions{});
  const double elapsed = seconds_since(t0);

  std::set<std::string> names;
  bool enough = true;
  for (const auto& t : report.tensors) {
    names.insert(t.name);
    const auto size = params.at(t.name).size();
    enough = enough && t.checked >= std::min<Eigen::Index>(200, size);
  }
  const bool covers = names.count("rationale_embedding") && names.count("classifier.weight") &&
                      names.count("classifier.bias") && names.size() == params.size();
  std::string detail = "max rel err " + fmt(report.max_relative_error) + " over " +
                       std::to_string(report.tensors.size()) + " tensors, " + fmt(elapsed, 3) + " s";
  for (const auto& o : report.offending) detail += "; offending " + o;
  return {report.passed && covers && enough && elapsed < 60.0, detail};
}

// --- 2 --------------------------------------------------------------------

Outcome shape_invariants() {
  const auto corpus = generate_synthetic_corpus(rfid::testing::small_synthesis(4, 8));
  const auto vocab = build_vocabulary({&corpus.train});
  bool ok = true;
  double worst_row = 0.0;
  std::string detail;
  for (int k : {2, 3, 4}) {
    for (bool guided : {true, false}) {
      auto cfg = rfid::testing::tiny_model(vocab.size(), k);
      cfg.guide_decoder = guided;
      const auto params = initialize_parameters<double>(cfg);
      auto ex = corpus.train[0];
      ex.passages.resize(static_cast<std::size_t>(k));
      ex.labels.resize(static_cast<std::size_t>(k));
      const auto out = forward<double>(encode_example(ex, vocab, cfg), params);
      const int expected = guided ? k * (cfg.max_tokens + 1) : k * cfg.max_tokens;
      ok = ok && out.trace.memory_length == expected;
      for (const auto& s : out.trace.scores) {
        ok = ok && s.cols() == expected;
        for (int r = 0; r < s.rows(); ++r) worst_row = std::max(worst_row, std::abs(s.row(r).sum() - 1.0));
      }
    }
  }
  ok = ok && worst_row <= 1e-6;
  std::set<std::size_t> counts;
  for (int k = 1; k <= 8; ++k) {
    auto cfg = rfid::testing::tiny_model(vocab.size(), k);
    counts.insert(Parameters<float>(cfg).count());
  }
  ok = ok && counts.size() == 1;
  detail = "memory K(L+1) guided / KL unguided, worst row-sum error " + fmt(worst_row) +
           ", parameter counts for K=1..8: " + std::to_string(counts.size()) + " distinct";
  return {ok, detail};
}

// --- 3 --------------------------------------------------------------------

Outcome loss_ledger() {
  const auto corpus = generate_synthetic_corpus(rfid::testing::small_synthesis(2, 64));
  const auto vocab = build_vocabulary({&corpus.train, &corpus.dev});
  auto mcfg = rfid::testing::tiny_model(vocab.size(), 2);
  mcfg.max_tokens = 16;
  TrainConfig tcfg;
  tcfg.total_steps = 100;
  tcfg.eval_interval = 50;
  tcfg.batch_size = 4;
  tcfg.learning_rate = 1e-3;
  int rows = 0, mismatches = 0;
  bool frozen_ok = true;
  for (Variant v : {Variant::kRFiD, Variant::kRFiDNoGuide, Variant::kFiD}) {
    tcfg.variant = v;
    const auto result = train(corpus.train, corpus.dev, vocab, tcfg, mcfg);
    for (const auto& l : result.steps) {
      ++rows;
      mismatches += l.total - (l.ratn + l.fid) != 0.0;
    }
    for (const auto& r : result.log) {
      ++rows;
      mismatches += r.loss.total - (r.loss.ratn + r.loss.fid) != 0.0;
    }
    if (v == Variant::kFiD) {
      const auto init = initialize_parameters<float>(result.model);
      for (const char* name : {"classifier.weight", "classifier.bias", "rationale_embedding"}) {
        const auto& a = init.at(name);
        const auto& b = result.final_params.at(name);
        frozen_ok = frozen_ok && std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
      }
      // The trained tensors must actually have moved.
      frozen_ok = frozen_ok && !(init.at("lm_head.weight") == result.final_params.at("lm_head.weight"));
    }
  }
  return {mismatches == 0 && frozen_ok && rows >= 300,
          std::to_string(rows) + " logged losses, " + std::to_string(mismatches) +
              " ledger mismatches; FiD head and E^ratn " + (frozen_ok ? "bitwise unchanged" : "CHANGED")};
}

// --- 4 --------------------------------------------------------------------

double reference_ca(const AttentionTrace& t, int k) {
  double total = 0.0;
  for (int l = 0; l < t.layers; ++l) {
    for (int h = 0; h < t.heads; ++h) {
      for (int s = 0; s < t.steps; ++s) {
        for (int j = 0; j < t.tokens; ++j) total += t.at(l, h, s, t.position(k, j)) / t.heads;
      }
    }
  }
  return total;
}

Outcome attention_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> kd(1, 3), ld(1, 4), lyd(1, 2), hd(1, 2), sd(1, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    AttentionTrace t;
    t.layers = lyd(rng);
    t.heads = hd(rng);
    t.steps = sd(rng);
    t.passages = kd(rng);
    t.tokens = ld(rng);
    t.guided = c % 2 == 0;
    t.memory_length = t.passages * (t.guided ? t.tokens + 1 : t.tokens);
    t.scores.assign(static_cast<std::size_t>(t.layers * t.heads),
                    Eigen::MatrixXd(t.steps, t.memory_length));
    for (auto& s : t.scores) {
      for (int r = 0; r < s.rows(); ++r) {
        for (int col = 0; col < s.cols(); ++col) s(r, col) = u(rng);
        s.row(r) /= s.row(r).sum();
      }
    }
    for (int k = 0; k < t.passages; ++k) {
      worst = std::max(worst, std::abs(passage_cross_attention(t, k) - reference_ca(t, k)));
    }
  }
  return {worst <= 1e-6, "100 random traces, max deviation " + fmt(worst)};
}

// --- 5 --------------------------------------------------------------------

Outcome labeling_properties() {
  const bool a = !label_rationale({"Match", "yesterday Messi scored twice"}, {"Lionel Messi"});
  const bool b = label_rationale({"Book", "chapter 2 of the story"}, {"2"});
  const bool c = label_rationale({"Match", "yesterday Lionel Messi scored twice"}, {"Lionel Messi"});

  const std::vector<std::string> alphabet{"a", "b", "c", "ab", "the", "2", "x", "y"};
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(0, 6), alen(1, 2);
  auto words = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + alphabet[pick(rng)];
    return s;
  };
  int violations = 0, positives = 0;
  for (int i = 0; i < 1000; ++i) {
    const Passage p{words(len(rng)), words(len(rng))};
    const std::vector<std::string> answers{words(alen(rng))};
    const bool before = label_rationale(p, answers);
    positives += before;
    // Extend at both ends of the title + context text the labeler scans.
    const Passage longer{words(len(rng)) + " " + p.title, p.context + " " + words(len(rng))};
    if (before && !label_rationale(longer, answers)) ++violations;
  }
  return {a && b && c && violations == 0 && positives > 0,
          std::string("Messi/Lionel Messi ") + (a ? "false" : "TRUE") + ", \"2\" " + (b ? "true" : "FALSE") +
              ", exact span " + (c ? "true" : "FALSE") + "; monotonicity violations " +
              std::to_string(violations) + "/1000 (" + std::to_string(positives) + " positive)"};
}

// --- 6 --------------------------------------------------------------------

Outcome untrained_ratio() {
  SynthesisConfig sc;
  sc.min_rational = 2;
  sc.max_rational = 2;
  sc.train_size = 10;
  sc.dev_size = 1;
  sc.test_size = 200;
  const auto corpus = generate_synthetic_corpus(sc);
  const auto vocab = build_vocabulary({&corpus.train, &corpus.dev, &corpus.test});
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  const auto params = initialize_parameters<float>(cfg);
  const auto report = ca_ratio(corpus.test, params, vocab);
  const double r = report.r_pos_neg.value_or(0.0);
  return {report.r_pos_neg && report.n_questions >= 200 && r >= 0.85 && r <= 1.15,
          "r_pos/neg " + fmt(r) + " over " + std::to_string(report.n_questions) +
              " balanced questions (2 of 4 rational)"};
}

// --- 7, 8, 9 ----------------------------------------------------------------

struct RunResult {
  Variant variant;
  std::uint64_t seed;
  double test_em = 0.0;
  double ratio = 0.0;
  double dev_ratn_acc = 0.0;
  double seconds = 0.0;
};

struct Experiment {
  SyntheticCorpus corpus;
  Vocabulary vocab;
  std::vector<RunResult> runs;

  double mean(Variant v, double RunResult::*field) const {
    double s = 0.0;
    int n = 0;
    for (const auto& r : runs) {
      if (r.variant == v) {
        s += r.*field;
        ++n;
      }
    }
    return n ? s / n : 0.0;
  }
};

Experiment run_experiment(const Settings& s, const std::filesystem::path& root) {
  Experiment e{generate_synthetic_corpus(SynthesisConfig{}), {}, {}};
  e.vocab = build_vocabulary({&e.corpus.train, &e.corpus.dev, &e.corpus.test});
  for (Variant v : {Variant::kFiD, Variant::kRFiDNoGuide, Variant::kRFiD}) {
    for (auto seed : s.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      TrainConfig tcfg;
      tcfg.variant = v;
      tcfg.seed = seed;
      tcfg.total_steps = s.steps;
      tcfg.learning_rate = s.lr;
      tcfg.eval_interval = s.eval_interval;
      tcfg.dev_limit = s.dev_limit;
      TrainOptions opts;
      opts.out_dir = root / (to_string(v) + "-seed" + std::to_string(seed));
      const auto result = train(e.corpus.train, e.corpus.dev, e.vocab, tcfg, ModelConfig{}, opts);
      RunResult r{v, seed};
      r.test_em = evaluate(e.corpus.test, model_reader(result.best_params, e.vocab)).exact_match;
      r.ratio = ca_ratio(e.corpus.test, result.best_params, e.vocab).r_pos_neg.value_or(0.0);
      if (trains_classifier(v)) {
        r.dev_ratn_acc = evaluate(e.corpus.dev, model_reader(result.best_params, e.vocab)).ratn_accuracy;
      }
      r.seconds = seconds_since(t0);
      std::cerr << "  " << to_string(v) << " seed " << seed << ": test EM " << fmt(r.test_em)
                << ", r_pos/neg " << fmt(r.ratio) << ", dev ratn acc " << fmt(r.dev_ratn_acc) << ", "
                << fmt(r.seconds, 3) << " s" << std::endl;
      e.runs.push_back(r);
    }
  }
  return e;
}

// Bag-of-words logistic probe over passage tokens and tokens shared with the
// question, trained on train passages and scored on dev passages.
double probe_accuracy(const SyntheticCorpus& corpus, const Vocabulary& vocab) {
  const int v = static_cast<int>(vocab.size());
  auto features = [&](const std::vector<QAExample>& split, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
    std::size_t n = 0;
    for (const auto& ex : split) n += ex.passages.size();
    x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), 2 * v + 1);
    y.resize(static_cast<Eigen::Index>(n));
    Eigen::Index row = 0;
    for (const auto& ex : split) {
      std::set<int> question;
      for (const auto& w : split_whitespace(ex.question)) question.insert(vocab.id(w));
      for (std::size_t k = 0; k < ex.passages.size(); ++k, ++row) {
        const auto& p = ex.passages[k];
        for (const auto& w : split_whitespace(p.title + " " + p.context)) {
          const int id = vocab.id(w);
          x(row, id) = 1.0;
          if (question.count(id)) x(row, v + id) = 1.0;
        }
        x(row, 2 * v) = 1.0;
        y(row) = ex.labels[k] ? 1.0 : 0.0;
      }
    }
  };
  Eigen::MatrixXd xt, xd;
  Eigen::VectorXd yt, yd;
  features(corpus.train, xt, yt);
  features(corpus.dev, xd, yd);
  // L2-regularized logistic regression fitted by Newton's method.
  const double ridge = 1.0;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(xt.cols());
  for (int it = 0; it < 25; ++it) {
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-(xt * w).array()).exp());
    const Eigen::VectorXd g = xt.transpose() * (p.matrix() - yt) + ridge * w;
    Eigen::MatrixXd h = xt.transpose() * (p * (1.0 - p)).matrix().asDiagonal() * xt;
    h.diagonal().array() += ridge;
    const Eigen::VectorXd delta = h.ldlt().solve(g);
    w -= delta;
    if (delta.norm() < 1e-8) break;
  }
  const Eigen::VectorXd z = xd * w;
  int correct = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) correct += (z(i) > 0.0) == (yd(i) > 0.5);
  return static_cast<double>(correct) / static_cast<double>(z.size());
}

// --- 10 -------------------------------------------------------------------

int shell(const std::string& args) {
  const std::string cmd = std::string(RFID_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string without_wall_clock(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

Outcome reproducibility() {
  TempDir dir("acceptance-repro");
  const std::string tiny =
      " --steps 40 --eval-interval 20 --dev-limit 20 --batch-size 8 --lr 1e-3 --hidden 32 --heads 2"
      " --enc-layers 1 --dec-layers 1 --quiet";
  std::vector<std::string> failures;
  std::map<std::string, std::string> first;
  for (int round = 0; round < 2; ++round) {
    const auto base = dir / ("round" + std::to_string(round));
    const auto d = (base / "data").string();
    const auto r = (base / "run").string();
    const auto ckpt = (base / "run" / "best.ckpt").string();
    int code = shell("gen-data --out " + d);
    code |= shell("train --data " + d + " --out " + r + tiny);
    code |= shell("eval --ckpt " + ckpt + " --data " + d + " --out " + (base / "eval.json").string() +
                  " --records " + (base / "records.jsonl").string());
    code |= shell("analyze --ckpt " + ckpt + " --data " + d + " --rows --out " +
                  (base / "analysis.json").string());
    if (code != 0) return {false, "CLI pipeline exited with an error in round " + std::to_string(round)};
    std::map<std::string, std::string> files;
    for (const char* f : {"data/train.jsonl", "data/dev.jsonl", "data/test.jsonl", "data/vocab.txt",
                          "data/test.labels.jsonl", "run/best.ckpt", "run/last.ckpt", "eval.json",
                          "records.jsonl", "analysis.json"}) {
      files[f] = read_file(base / f);
    }
    files["run/metrics.csv"] = without_wall_clock(read_file(base / "run" / "metrics.csv"));
    if (round == 0) {
      first = files;
    } else {
      for (const auto& [name, bytes] : files) {
        if (bytes.empty() || bytes != first[name]) failures.push_back(name);
      }
    }
  }
  std::string detail = failures.empty() ? "11 artifacts byte-identical across reruns" : "differs:";
  for (const auto& f : failures) detail += " " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  std::vector<int> only;
  CLI::App app{"Acceptance criteria"};
  app.add_option("--steps", s.steps, "training steps per run for criteria 7-9");
  app.add_option("--lr", s.lr, "learning rate for criteria 7-9");
  app.add_option("--dev-limit", s.dev_limit, "dev questions used for checkpoint selection");
  app.add_option("--seeds", s.seeds, "seeds for criteria 7-9")->delimiter(',');
  app.add_option("--keep", s.keep, "keep run artifacts in this directory");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto wanted = [&](int n) { return only.empty() || std::count(only.begin(), only.end(), n); };
  auto report = [&](int n, const std::string& title, const Outcome& o) {
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << n << ". " << title << ": " << o.detail
              << std::endl;
  };
  auto check = [&](int n, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    try {
      report(n, title, fn());
    } catch (const std::exception& e) {
      report(n, title, {false, std::string("threw: ") + e.what()});
    }
  };

  check(1, "gradient correctness", gradient_correctness);
  check(2, "shape and normalization invariants", shape_invariants);
  check(3, "loss ledger and FiD freezing", loss_ledger);
  check(4, "attention oracle equivalence", attention_oracle);
  check(5, "labeling properties", labeling_properties);
  check(6, "untrained ratio sanity", untrained_ratio);

  if (wanted(7) || wanted(8) || wanted(9)) {
    std::optional<TempDir> tmp;
    std::filesystem::path root;
    if (s.keep.empty()) {
      tmp.emplace("acceptance-runs");
      root = tmp->path();
    } else {
      root = s.keep;
      std::filesystem::create_directories(root);
    }
    std::optional<Experiment> e;
    std::string error;
    try {
      e = run_experiment(s, root);
    } catch (const std::exception& ex) {
      error = std::string("experiment threw: ") + ex.what();
    }
    const auto budget = " (" + std::to_string(s.steps) + " steps, lr " + fmt(s.lr) + ")";
    check(7, "EM ordering", [&]() -> Outcome {
      if (!e) return {false, error};
      const double f = e->mean(Variant::kFiD, &RunResult::test_em);
      const double n = e->mean(Variant::kRFiDNoGuide, &RunResult::test_em);
      const double r = e->mean(Variant::kRFiD, &RunResult::test_em);
      return {r > f && n > f, "mean test EM rfid " + fmt(r) + ", rfid-noguide " + fmt(n) + ", fid " +
                                  fmt(f) + budget};
    });
    check(8, "cross-attention ratio ordering", [&]() -> Outcome {
      if (!e) return {false, error};
      const double f = e->mean(Variant::kFiD, &RunResult::ratio);
      const double n = e->mean(Variant::kRFiDNoGuide, &RunResult::ratio);
      const double r = e->mean(Variant::kRFiD, &RunResult::ratio);
      return {r > n && n > f, "mean r_pos/neg rfid " + fmt(r) + ", rfid-noguide " + fmt(n) + ", fid " +
                                  fmt(f) + budget};
    });
    check(9, "rationale head quality", [&]() -> Outcome {
      const auto corpus = generate_synthetic_corpus(SynthesisConfig{});
      const auto vocab = build_vocabulary({&corpus.train, &corpus.dev, &corpus.test});
      const double probe = probe_accuracy(corpus, vocab);
      if (probe < 0.95) return {false, "probe oracle only reaches " + fmt(probe)};
      if (!e) return {false, error};
      const double acc = e->mean(Variant::kRFiD, &RunResult::dev_ratn_acc);
      return {acc >= 0.9, "probe oracle " + fmt(probe) + "; mean rfid dev rationale accuracy " + fmt(acc)};
    });
  }

  check(10, "reproducibility", reproducibility);
  std::cout << (failures ? "FAILED: " + std::to_string(failures) + " criteria" : "all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
