#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "rfid/checkpoint.hpp"
#include "rfid/errors.hpp"
#include "rfid/eval.hpp"
#include "rfid/random.hpp"
#include "rfid/training.hpp"

namespace rfid {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<int> batch_indices(int dataset_size, int batch_size, std::uint64_t seed, int step) {
  require(dataset_size > 0 && batch_size > 0 && step >= 1, "batch_indices: bad arguments");
  const int size = std::min(batch_size, dataset_size);
  const int per_epoch = dataset_size / size;
  const int epoch = (step - 1) / per_epoch;
  const int slot = (step - 1) % per_epoch;
  std::vector<int> order(static_cast<std::size_t>(dataset_size));
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed, "batch" + std::to_string(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return {order.begin() + slot * size, order.begin() + (slot + 1) * size};
}

std::string metrics_header() { return "step,L_ratn,L_FiD,L_total,dev_EM,dev_ratn_acc,wall_clock_s"; }

std::string format_log_row(const LogRow& row) {
  char buf[256];
  std::string out = std::to_string(row.step);
  std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,", row.loss.ratn, row.loss.fid,
                row.loss.total);
  out += buf;
  if (row.dev_em) {
    std::snprintf(buf, sizeof buf, "%.6f", *row.dev_em);
    out += buf;
  }
  out += ',';
  if (row.dev_ratn_acc) {
    std::snprintf(buf, sizeof buf, "%.6f", *row.dev_ratn_acc);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.3f", row.wall_clock_s);
  return out + buf;
}

namespace {

std::vector<LogRow> read_metrics(const fs::path& path, int up_to_step) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot resume: missing " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != metrics_header()) throw DataError("cannot resume: unexpected header in " + path.string());
  std::vector<LogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw DataError("cannot resume: malformed row in " + path.string());
    LogRow row;
    row.step = std::stoi(f[0]);
    row.loss = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
    if (!f[4].empty()) row.dev_em = std::stod(f[4]);
    if (!f[5].empty()) row.dev_ratn_acc = std::stod(f[5]);
    row.wall_clock_s = std::stod(f[6]);
    if (row.step <= up_to_step) rows.push_back(row);
  }
  return rows;
}

void write_metrics(const fs::path& path, const std::vector<LogRow>& rows) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << metrics_header() << '\n';
    for (const auto& row : rows) out << format_log_row(row) << '\n';
  }
  fs::rename(tmp, path);
}

Checkpoint make_checkpoint(const Parameters<float>& params, const Vocabulary& vocab) {
  Checkpoint ckpt(params.config());
  ckpt.vocabulary = vocab;
  ckpt.params = params;
  return ckpt;
}

}  // namespace

TrainResult train(const std::vector<QAExample>& train_set, const std::vector<QAExample>& dev_set,
                  const Vocabulary& vocab, const TrainConfig& tcfg, ModelConfig mcfg,
                  const TrainOptions& options) {
  tcfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  mcfg.seed = tcfg.seed;
  mcfg.guide_decoder = guides_decoder(tcfg.variant);
  mcfg.vocab_size = static_cast<int>(vocab.size());
  mcfg.validate();

  const auto start = std::chrono::steady_clock::now();
  double clock_offset = 0.0;
  auto elapsed = [&] {
    return clock_offset +
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  std::vector<EncodedExample> encoded;
  encoded.reserve(train_set.size());
  for (const auto& ex : train_set) encoded.push_back(encode_example(ex, vocab, mcfg));
  std::vector<QAExample> dev = dev_set;
  if (tcfg.dev_limit > 0 && static_cast<int>(dev.size()) > tcfg.dev_limit) {
    dev.resize(static_cast<std::size_t>(tcfg.dev_limit));
  }

  TrainResult result(mcfg);
  Parameters<float> params = initialize_parameters<float>(mcfg);
  const AdamWOptions adam{tcfg.learning_rate, tcfg.weight_decay, tcfg.beta1, tcfg.beta2,
                          tcfg.epsilon};
  AdamW<float> optimizer(mcfg, adam, trainable_mask(params.layout(), tcfg.variant));
  Parameters<float> grads = params.zeros_like();
  Parameters<float> best = params;

  const bool persist = !options.out_dir.empty();
  const fs::path metrics_path = options.out_dir / "metrics.csv";
  const fs::path best_path = options.out_dir / "best.ckpt";
  const fs::path last_path = options.out_dir / "last.ckpt";
  if (persist) fs::create_directories(options.out_dir);

  int step = 0;
  if (options.resume) {
    if (!persist) throw ConfigError("resume requires an output directory");
    Checkpoint last = load_checkpoint(last_path);
    if (!(last.model == mcfg)) throw ConfigError("resume: model config differs from last.ckpt");
    if (!(last.vocabulary == vocab)) throw ConfigError("resume: vocabulary differs from last.ckpt");
    TrainConfig saved = last.meta.at("train_config").get<TrainConfig>();
    saved.total_steps = tcfg.total_steps;
    if (!(saved == tcfg)) throw ConfigError("resume: train config differs from last.ckpt");
    params = last.params;
    for (std::size_t i = 0; i < params.size(); ++i) {
      optimizer.first_moment()[i] = last.extras.at("adam.m." + params.name(i));
      optimizer.second_moment()[i] = last.extras.at("adam.v." + params.name(i));
    }
    step = last.meta.at("step").get<int>();
    optimizer.set_steps(step);
    result.best_dev_em = last.meta.at("best_dev_em").get<double>();
    result.best_step = last.meta.at("best_step").get<int>();
    best = result.best_step >= 0 ? load_checkpoint(best_path).params : params;
    result.log = read_metrics(metrics_path, step);
    if (!result.log.empty()) clock_offset = result.log.back().wall_clock_s;
  }

  auto save_last = [&] {
    if (!persist) return;
    Checkpoint ckpt = make_checkpoint(params, vocab);
    ckpt.meta = {{"variant", to_string(tcfg.variant)},
                 {"train_config", tcfg},
                 {"step", step},
                 {"best_dev_em", result.best_dev_em},
                 {"best_step", result.best_step}};
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.extras.emplace("adam.m." + params.name(i), optimizer.first_moment()[i]);
      ckpt.extras.emplace("adam.v." + params.name(i), optimizer.second_moment()[i]);
    }
    save_checkpoint(last_path, ckpt);
  };

  auto log_row = [&](const LossBreakdown& loss) {
    LogRow row;
    row.step = step;
    row.loss = loss;
    if (!dev.empty()) {
      const auto report = evaluate(dev, model_reader(params, vocab));
      row.dev_em = report.exact_match;
      if (trains_classifier(tcfg.variant)) row.dev_ratn_acc = report.ratn_accuracy;
      if (report.exact_match > result.best_dev_em) {
        result.best_dev_em = report.exact_match;
        result.best_step = step;
        best = params;
        if (persist) {
          Checkpoint ckpt = make_checkpoint(best, vocab);
          ckpt.meta = {{"variant", to_string(tcfg.variant)},
                       {"step", step},
                       {"dev_em", report.exact_match}};
          save_checkpoint(best_path, ckpt);
        }
      }
    }
    row.wall_clock_s = elapsed();
    result.log.push_back(row);
    save_last();
    if (persist) write_metrics(metrics_path, result.log);
    if (options.verbose) std::cerr << format_log_row(row) << '\n';
  };

  auto run_batch = [&](int batch_step, bool update) {
    const auto idx = batch_indices(static_cast<int>(encoded.size()), tcfg.batch_size, tcfg.seed,
                                   batch_step);
    std::vector<const EncodedExample*> batch;
    for (int i : idx) batch.push_back(&encoded[static_cast<std::size_t>(i)]);
    BatchTape<float> tape;
    auto out = forward_batch<float>(params, batch, update ? &tape : nullptr);
    const auto labels = batch_labels(batch);
    const auto gold = batch_targets(batch, out.target_len);
    Matrix<float> d_ratn, d_logits;
    const double ratn = rationale_loss<float>(out.rationale_logits, labels, update ? &d_ratn : nullptr);
    const double fid = seq2seq_loss<float>(out.logits, gold, update ? &d_logits : nullptr);
    LossBreakdown loss;
    try {
      loss = total_loss(tcfg.ratn_weight * ratn, fid, tcfg.variant);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(batch_step) + ": " + e.what() +
                         (persist ? "; last good checkpoint kept at " + last_path.string() : ""));
    }
    if (update) {
      if (trains_classifier(tcfg.variant)) {
        d_ratn *= static_cast<float>(tcfg.ratn_weight);
      } else {
        d_ratn.setZero();
      }
      grads.set_zero();
      backward_batch<float>(params, tape, d_ratn, d_logits, grads);
      optimizer.step(params, grads);
      if (!params.all_finite()) {
        throw NumericError("step " + std::to_string(batch_step) + ": parameters became non-finite" +
                           (persist ? "; last good checkpoint kept at " + last_path.string() : ""));
      }
    }
    return loss;
  };

  if (step == 0) log_row(run_batch(1, false));

  while (step < tcfg.total_steps) {
    const LossBreakdown loss = run_batch(step + 1, true);
    ++step;
    result.steps.push_back(loss);
    if (step % tcfg.eval_interval == 0) log_row(loss);
    if (options.stop_after > 0 && step >= options.stop_after && step < tcfg.total_steps) {
      save_last();
      break;
    }
  }
  if (step == tcfg.total_steps && step % tcfg.eval_interval != 0) save_last();

  result.completed_steps = step;
  result.final_params = params;
  result.best_params = result.best_step >= 0 ? best : params;
  return result;
}

}  // namespace rfid
