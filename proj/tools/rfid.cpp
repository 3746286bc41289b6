// Command-line front end: data synthesis, training, evaluation, attention
// analysis, case studies and the paired variant experiment.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rfid/analysis.hpp"
#include "rfid/checkpoint.hpp"
#include "rfid/config.hpp"
#include "rfid/data.hpp"
#include "rfid/errors.hpp"
#include "rfid/eval.hpp"
#include "rfid/parallel.hpp"
#include "rfid/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rfid;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

std::string split_path(const std::string& data, const std::string& split) {
  if (split != "train" && split != "dev" && split != "test") {
    throw ConfigError("unknown split '" + split + "' (expected train, dev or test)");
  }
  return (fs::path(data) / (split + ".jsonl")).string();
}

std::vector<QAExample> load_split(const std::string& data, const std::string& split, int passages) {
  try {
    return load_corpus_strict(split_path(data, split), passages);
  } catch (const ConfigError&) {
    throw;
  } catch (const DataError& e) {
    throw DataError(std::string("passages/corpus: ") + e.what());
  }
}

std::optional<Vocabulary> load_data_vocab(const std::string& data) {
  const auto path = fs::path(data) / "vocab.txt";
  if (!fs::exists(path)) return std::nullopt;
  return Vocabulary::load(path);
}

struct TrainFlags {
  std::string data, variant = "rfid", config, out;
  bool resume = false, quiet = false;
  int stop_after = 0;
  std::optional<double> lr, wd, ratn_weight;
  std::optional<int> batch, steps, eval_interval, dev_limit;
  std::optional<std::uint64_t> seed;
  std::optional<int> passages, max_tokens, hidden, enc_layers, dec_layers, heads, ffn_hidden,
      max_target;
};

void add_config_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "JSON file with optional \"model\" and \"train\" objects");
  cmd->add_option("--lr", f.lr, "learning rate (default 1e-4)");
  cmd->add_option("--weight-decay", f.wd, "decoupled weight decay (default 0.01)");
  cmd->add_option("--ratn-weight", f.ratn_weight, "weight of L_ratn (default 1)");
  cmd->add_option("--batch-size", f.batch, "questions per step (default 16)");
  cmd->add_option("--steps", f.steps, "optimizer steps (default 2000)");
  cmd->add_option("--eval-interval", f.eval_interval, "steps between log rows (default 250)");
  cmd->add_option("--dev-limit", f.dev_limit, "dev questions evaluated while training, 0 = all");
  cmd->add_option("--passages", f.passages, "passages per question K (default 4)");
  cmd->add_option("--max-tokens", f.max_tokens, "tokens per passage L (default 32)");
  cmd->add_option("--hidden", f.hidden, "model width d (default 64)");
  cmd->add_option("--enc-layers", f.enc_layers, "encoder layers (default 2)");
  cmd->add_option("--dec-layers", f.dec_layers, "decoder layers (default 2)");
  cmd->add_option("--heads", f.heads, "attention heads (default 4)");
  cmd->add_option("--ffn-hidden", f.ffn_hidden, "feed-forward width, 0 = 4d (default 0)");
  cmd->add_option("--max-target", f.max_target, "decoder positions incl. BOS (default 8)");
}

std::pair<ModelConfig, TrainConfig> resolve_configs(const TrainFlags& f) {
  ModelConfig m;
  TrainConfig t;
  if (!f.config.empty()) {
    const json j = read_json_file(f.config);
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    if (j.contains("model")) m = j["model"].get<ModelConfig>();
    if (j.contains("train")) t = j["train"].get<TrainConfig>();
  }
  if (f.lr) t.learning_rate = *f.lr;
  if (f.wd) t.weight_decay = *f.wd;
  if (f.ratn_weight) t.ratn_weight = *f.ratn_weight;
  if (f.batch) t.batch_size = *f.batch;
  if (f.steps) t.total_steps = *f.steps;
  if (f.eval_interval) t.eval_interval = *f.eval_interval;
  if (f.dev_limit) t.dev_limit = *f.dev_limit;
  if (f.seed) t.seed = *f.seed;
  if (f.passages) m.passages = *f.passages;
  if (f.max_tokens) m.max_tokens = *f.max_tokens;
  if (f.hidden) m.hidden = *f.hidden;
  if (f.enc_layers) m.enc_layers = *f.enc_layers;
  if (f.dec_layers) m.dec_layers = *f.dec_layers;
  if (f.heads) m.heads = *f.heads;
  if (f.ffn_hidden) m.ffn_hidden = *f.ffn_hidden;
  if (f.max_target) m.max_target = *f.max_target;
  t.variant = parse_variant(f.variant);
  t.validate();
  return {m, t};
}

struct TrainedRun {
  TrainResult result;
  Vocabulary vocab;
};

TrainedRun run_training(const TrainFlags& f, const std::string& out_dir, bool verbose) {
  auto [mcfg, tcfg] = resolve_configs(f);
  auto vocab = load_data_vocab(f.data);
  if (!vocab) throw DataError("vocab.txt not found in " + f.data);
  mcfg.vocab_size = static_cast<int>(vocab->size());
  mcfg.validate();
  const auto train_set = load_split(f.data, "train", mcfg.passages);
  const auto dev_set = load_split(f.data, "dev", mcfg.passages);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume = f.resume;
  opts.stop_after = f.stop_after;
  opts.verbose = verbose;
  return {train(train_set, dev_set, *vocab, tcfg, mcfg, opts), *vocab};
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out, const std::string& config,
                 std::optional<std::uint64_t> seed) {
  SynthesisConfig cfg;
  if (!config.empty()) cfg = read_json_file(config).get<SynthesisConfig>();
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const auto corpus = generate_synthetic_corpus(cfg);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out + ": " + ec.message());
  const fs::path dir(out);
  const std::pair<const char*, const std::vector<QAExample>*> splits[] = {
      {"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}};
  for (const auto& [name, examples] : splits) {
    write_corpus(dir / (std::string(name) + ".jsonl"), *examples);
    write_labels(dir / (std::string(name) + ".labels.jsonl"), *examples);
  }
  const auto vocab = build_vocabulary({&corpus.train, &corpus.dev, &corpus.test});
  vocab.save(dir / "vocab.txt");
  std::ofstream(dir / "synthesis.json") << json(cfg).dump(2) << '\n';

  std::cout << "wrote " << out << "\n";
  for (const auto& [name, examples] : splits) {
    std::map<int, int> histogram;
    for (const auto& ex : *examples) ++histogram[ex.num_rational()];
    std::cout << "  " << name << ": " << examples->size() << " questions, K=" << cfg.passages
              << ", rational passages per question:";
    for (const auto& [n, count] : histogram) std::cout << ' ' << n << "->" << count;
    std::cout << '\n';
  }
  std::cout << "  vocabulary: " << vocab.size() << " tokens\n";
  return 0;
}

int cmd_train(const TrainFlags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  auto run = run_training(f, f.out, !f.quiet);
  const auto& r = run.result;
  const auto dev_set = load_split(f.data, "dev", r.model.passages);
  const auto report = evaluate(dev_set, model_reader(r.best_params, run.vocab));
  const auto variant = parse_variant(f.variant);
  std::cout << "variant " << to_string(variant) << ", steps " << r.completed_steps
            << ", best step " << r.best_step << "\n";
  std::cout << "dev EM " << format_double(report.exact_match);
  if (trains_classifier(variant)) {
    std::cout << ", dev rationale accuracy " << format_double(report.ratn_accuracy);
  }
  std::cout << '\n';
  return 0;
}

struct ReportFlags {
  std::string ckpt, data, split = "dev", out, records, id;
  bool oracle = false, rows = false, json_out = false;
};

struct LoadedModel {
  Checkpoint ckpt;
  std::vector<QAExample> corpus;
};

LoadedModel load_model_and_corpus(const ReportFlags& f) {
  if (f.ckpt.empty()) throw ConfigError("--ckpt is required");
  Checkpoint ckpt = load_checkpoint(f.ckpt);
  auto corpus = load_split(f.data, f.split, ckpt.model.passages);
  const auto data_vocab = load_data_vocab(f.data);
  check_compatibility(ckpt.model, ckpt.vocabulary, corpus, data_vocab ? &*data_vocab : nullptr);
  return {std::move(ckpt), std::move(corpus)};
}

int cmd_eval(const ReportFlags& f) {
  EvalReport report;
  if (f.oracle) {
    int passages = SynthesisConfig{}.passages;
    if (!f.ckpt.empty()) {
      passages = load_checkpoint(f.ckpt).model.passages;
    } else if (const auto meta = fs::path(f.data) / "synthesis.json"; fs::exists(meta)) {
      passages = read_json_file(meta.string()).get<SynthesisConfig>().passages;
    }
    const auto corpus = load_split(f.data, f.split, passages);
    report = evaluate(corpus, oracle_reader());
  } else {
    const auto m = load_model_and_corpus(f);
    report = evaluate(m.corpus, model_reader(m.ckpt.params, m.ckpt.vocabulary));
  }
  if (!f.records.empty()) write_records_jsonl(f.records, report);
  write_text(f.out, to_json(report).dump(2) + "\n");
  if (!f.out.empty() && f.out != "-") {
    std::cout << "EM " << format_double(report.exact_match) << " over " << report.n_questions
              << " questions\n";
  }
  return 0;
}

int cmd_analyze(const ReportFlags& f) {
  auto m = load_model_and_corpus(f);
  if (!f.id.empty()) {
    std::erase_if(m.corpus, [&](const QAExample& ex) { return ex.id != f.id; });
    if (m.corpus.empty()) throw NotFoundError("unknown question id: " + f.id);
  }
  const auto report = ca_ratio(m.corpus, m.ckpt.params, m.ckpt.vocabulary);
  write_text(f.out, to_json(report, f.rows || !f.id.empty()).dump(2) + "\n");
  return 0;
}

int cmd_case(const ReportFlags& f) {
  if (f.id.empty()) throw ConfigError("--id is required");
  const auto m = load_model_and_corpus(f);
  const auto report = case_report(f.id, m.corpus, m.ckpt.params, m.ckpt.vocabulary);
  write_text(f.out, f.json_out ? to_json(report).dump(2) + "\n" : format_case_report(report));
  return 0;
}

struct ExperimentFlags {
  TrainFlags train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string split = "test";
};

int cmd_experiment(const ExperimentFlags& f) {
  if (f.train.out.empty()) throw ConfigError("--out is required");
  if (f.seeds.empty()) throw ConfigError("--seeds must list at least one seed");
  fs::create_directories(f.train.out);
  const fs::path csv_path = fs::path(f.train.out) / "experiment.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw DataError("cannot write " + csv_path.string());
  csv << "variant,seed,EM,ratn_acc,r_pos_neg\n";
  csv.flush();

  const Variant variants[] = {Variant::kFiD, Variant::kRFiD, Variant::kRFiDNoGuide};
  struct Sums {
    double em = 0, acc = 0, ratio = 0;
    int n = 0, n_ratio = 0;
  };
  std::map<Variant, Sums> sums;
  for (auto seed : f.seeds) {
    for (Variant v : variants) {
      TrainFlags tf = f.train;
      tf.variant = to_string(v);
      tf.seed = seed;
      const std::string dir =
          (fs::path(f.train.out) / (to_string(v) + "-seed" + std::to_string(seed))).string();
      std::cout << "training " << to_string(v) << " seed " << seed << " -> " << dir << std::endl;
      auto run = run_training(tf, dir, false);
      const auto& params = run.result.best_params;
      const auto corpus = load_split(f.train.data, f.split, params.config().passages);
      const auto report = evaluate(corpus, model_reader(params, run.vocab));
      const auto ratio = ca_ratio(corpus, params, run.vocab);
      auto& s = sums[v];
      s.em += report.exact_match;
      s.acc += report.ratn_accuracy;
      ++s.n;
      if (ratio.r_pos_neg) {
        s.ratio += *ratio.r_pos_neg;
        ++s.n_ratio;
      }
      csv << to_string(v) << ',' << seed << ',' << format_double(report.exact_match) << ','
          << (trains_classifier(v) ? format_double(report.ratn_accuracy) : "") << ','
          << (ratio.r_pos_neg ? format_double(*ratio.r_pos_neg) : "") << '\n';
      csv.flush();
    }
  }
  std::map<Variant, double> mean_em, mean_ratio;
  for (Variant v : variants) {
    const auto& s = sums[v];
    mean_em[v] = s.em / s.n;
    mean_ratio[v] = s.n_ratio ? s.ratio / s.n_ratio : std::nan("");
    csv << to_string(v) << ",mean," << format_double(mean_em[v]) << ','
        << (trains_classifier(v) ? format_double(s.acc / s.n) : "") << ','
        << (s.n_ratio ? format_double(mean_ratio[v]) : "") << '\n';
  }
  csv.close();

  const auto R = Variant::kRFiD, N = Variant::kRFiDNoGuide, F = Variant::kFiD;
  auto verdict = [](bool ok) { return ok ? "holds" : "does not hold"; };
  std::cout << "mean EM: rfid " << format_double(mean_em[R]) << ", rfid-noguide "
            << format_double(mean_em[N]) << ", fid " << format_double(mean_em[F]) << '\n';
  std::cout << "mean r_pos/neg: rfid " << format_double(mean_ratio[R]) << ", rfid-noguide "
            << format_double(mean_ratio[N]) << ", fid " << format_double(mean_ratio[F]) << '\n';
  std::cout << "EM ordering rfid >= rfid-noguide >= fid: "
            << verdict(mean_em[R] >= mean_em[N] && mean_em[N] >= mean_em[F]) << '\n';
  std::cout << "ratio ordering rfid > rfid-noguide > fid: "
            << verdict(mean_ratio[R] > mean_ratio[N] && mean_ratio[N] > mean_ratio[F]) << '\n';
  std::cout << "wrote " << csv_path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fusion-in-decoder reader with rationale guidance on synthetic QA"};
  app.require_subcommand(1, 1);
  int threads = 0;
  app.add_option("--threads", threads, "worker cap; falls back to RFID_THREADS, then all cores");

  std::string gen_out, gen_config;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--config", gen_config, "JSON synthesis config")->check(CLI::ExistingFile);
  gen->add_option("--seed", gen_seed, "generator seed (default 0)");

  TrainFlags tf;
  auto* tr = app.add_subcommand("train", "train one variant");
  tr->add_option("--data", tf.data, "corpus directory from gen-data")->required();
  tr->add_option("--variant", tf.variant, "fid | rfid | rfid-noguide (default rfid)")
      ->check(CLI::IsMember({"fid", "rfid", "rfid-noguide"}));
  tr->add_option("--out", tf.out, "run directory")->required();
  tr->add_option("--seed", tf.seed, "seed for init and batch order (default 0)");
  tr->add_flag("--resume", tf.resume, "continue from <out>/last.ckpt");
  tr->add_option("--stop-after", tf.stop_after, "stop after this many steps (for resuming)");
  tr->add_flag("--quiet", tf.quiet, "do not echo log rows");
  add_config_flags(tr, tf);

  ReportFlags ef;
  auto* ev = app.add_subcommand("eval", "exact match and rationale metrics");
  ev->add_option("--ckpt", ef.ckpt, "checkpoint file");
  ev->add_option("--data", ef.data, "corpus directory")->required();
  ev->add_option("--split", ef.split, "train | dev | test (default dev)");
  ev->add_option("--out", ef.out, "report path (default stdout)");
  ev->add_option("--records", ef.records, "per-question JSONL path");
  ev->add_flag("--oracle", ef.oracle, "score a reader that returns the gold answer");

  ReportFlags af;
  af.split = "test";
  auto* an = app.add_subcommand("analyze", "cross-attention ratio on positive vs negative passages");
  an->add_option("--ckpt", af.ckpt, "checkpoint file")->required();
  an->add_option("--data", af.data, "corpus directory")->required();
  an->add_option("--split", af.split, "train | dev | test (default test)");
  an->add_option("--id", af.id, "restrict to one question");
  an->add_option("--out", af.out, "report path (default stdout)");
  an->add_flag("--rows", af.rows, "include per-question rows");

  ReportFlags cf;
  cf.split = "test";
  auto* cs = app.add_subcommand("case", "per-passage attention table for one question");
  cs->add_option("--ckpt", cf.ckpt, "checkpoint file")->required();
  cs->add_option("--data", cf.data, "corpus directory")->required();
  cs->add_option("--split", cf.split, "train | dev | test (default test)");
  cs->add_option("--id", cf.id, "question id")->required();
  cs->add_option("--out", cf.out, "report path (default stdout)");
  cs->add_flag("--json", cf.json_out, "emit JSON instead of a text table");

  ExperimentFlags xf;
  auto* ex = app.add_subcommand("experiment", "train fid, rfid and rfid-noguide per seed");
  ex->add_option("--data", xf.train.data, "corpus directory")->required();
  ex->add_option("--seeds", xf.seeds, "seeds (default 0 1 2)")->delimiter(',');
  ex->add_option("--out", xf.train.out, "output directory")->required();
  ex->add_option("--split", xf.split, "split scored after training (default test)");
  add_config_flags(ex, xf.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (threads > 0) set_thread_count(threads);
    if (*gen) return cmd_gen_data(gen_out, gen_config, gen_seed);
    if (*tr) return cmd_train(tf);
    if (*ev) return cmd_eval(ef);
    if (*an) return cmd_analyze(af);
    if (*cs) return cmd_case(cf);
    if (*ex) return cmd_experiment(xf);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NotFoundError& e) {
    std::cerr << "not found: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
