#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "rfid/checkpoint.hpp"
#include "support.hpp"

using namespace rfid;
using rfid::testing::read_file;
using rfid::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, const TempDir& dir) {
  const auto log = dir / "cli.out";
  const std::string cmd = std::string(RFID_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

int count_lines(const std::filesystem::path& path) {
  const auto text = read_file(path);
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

std::string small_data(const TempDir& dir, const std::string& name, int passages = 2) {
  auto cfg = rfid::testing::small_synthesis(passages, 24);
  rfid::testing::write_file(dir / (name + ".json"), nlohmann::json(cfg).dump());
  const auto out = (dir / name).string();
  const auto r = run("gen-data --out " + out + " --config " + (dir / (name + ".json")).string(), dir);
  REQUIRE(r.code == 0);
  return out;
}

const std::string kModel =
    " --passages 2 --hidden 16 --heads 2 --enc-layers 1 --dec-layers 1 --max-tokens 16 --max-target 4"
    " --batch-size 4 --lr 1e-3";
const std::string kTiny = kModel + " --quiet";

}  // namespace

TEST_CASE("gen-data defaults and determinism") {
  TempDir dir("cli-gen");
  const auto a = (dir / "a").string();
  const auto b = (dir / "b").string();
  auto r = run("gen-data --out " + a, dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train: 2000 questions, K=4") != std::string::npos);
  CHECK(count_lines(dir / "a" / "train.jsonl") == 2000);
  CHECK(count_lines(dir / "a" / "dev.jsonl") == 250);
  CHECK(count_lines(dir / "a" / "test.jsonl") == 250);
  CHECK(count_lines(dir / "a" / "test.labels.jsonl") == 250);
  REQUIRE(run("gen-data --out " + b, dir).code == 0);
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "train.labels.jsonl", "vocab.txt"}) {
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
  }
  REQUIRE(run("gen-data --seed 3 --out " + b, dir).code == 0);
  CHECK(read_file(dir / "a" / "train.jsonl") != read_file(dir / "b" / "train.jsonl"));
}

TEST_CASE("usage and config errors exit with 2") {
  TempDir dir("cli-usage");
  CHECK(run("gen-data --out x --config " + (dir / "missing.json").string(), dir).code == 2);
  CHECK(run("gen-data --out x --bogus", dir).code == 2);
  CHECK(run("", dir).code == 2);
  CHECK(run("frobnicate", dir).code == 2);
  rfid::testing::write_file(dir / "bad.json", R"({"name_pool": 2})");
  CHECK(run("gen-data --out " + (dir / "o").string() + " --config " + (dir / "bad.json").string(), dir).code == 2);
  CHECK(run("train --data x --out y --variant fusion", dir).code == 2);
  CHECK(run("--help", dir).code == 0);
}

TEST_CASE("train, eval, analyze and case") {
  TempDir dir("cli-train");
  const auto data = small_data(dir, "data");
  const auto fid = (dir / "fid").string();
  const auto ng = (dir / "ng").string();

  auto r = run("train --data " + data + " --variant fid --out " + fid + " --steps 8 --eval-interval 4" + kTiny, dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("dev EM") != std::string::npos);
  std::istringstream csv(read_file(dir / "fid" / "metrics.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    const auto first = line.find(',');
    CHECK(std::stod(line.substr(first + 1)) == 0.0);  // L_ratn column
    ++rows;
  }
  CHECK(rows == 3);

  r = run("train --data " + data + " --variant rfid-noguide --out " + ng + " --steps 4 --eval-interval 4" + kTiny, dir);
  REQUIRE(r.code == 0);
  const auto ckpt = load_checkpoint(dir / "ng" / "best.ckpt");
  CHECK_FALSE(ckpt.model.guide_decoder);

  const auto best = (dir / "ng" / "best.ckpt").string();
  r = run("eval --oracle --data " + data + " --split test", dir);
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["exact_match"] == 1.0);

  r = run("eval --ckpt " + best + " --data " + data + " --out " + (dir / "eval.json").string() +
              " --records " + (dir / "records.jsonl").string(), dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("EM ") == 0);
  CHECK(count_lines(dir / "records.jsonl") == 4);

  r = run("analyze --ckpt " + best + " --data " + data, dir);
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out).contains("r_pos_neg"));

  r = run("case --ckpt " + best + " --data " + data + " --id test-00001", dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("test-00001") != std::string::npos);
  CHECK(run("case --ckpt " + best + " --data " + data + " --id no-such-id", dir).code == 3);
  CHECK(run("analyze --ckpt " + best + " --data " + data + " --id no-such-id", dir).code == 3);
  CHECK(run("eval --ckpt " + (dir / "missing.ckpt").string() + " --data " + data, dir).code == 3);

  // Corpus built for a smaller K than the checkpoint.
  const auto other = small_data(dir, "other", 1);
  r = run("eval --ckpt " + best + " --data " + other, dir);
  CHECK(r.code == 3);
  CHECK(r.out.find("passages") != std::string::npos);
}

TEST_CASE("resumed training reproduces the log tail") {
  TempDir dir("cli-resume");
  const auto data = small_data(dir, "data");
  const auto full = (dir / "full").string();
  const auto part = (dir / "part").string();
  const std::string common = " --data " + data + " --steps 12 --eval-interval 4" + kTiny;
  REQUIRE(run("train --out " + full + common, dir).code == 0);
  REQUIRE(run("train --out " + part + common + " --stop-after 5", dir).code == 0);
  REQUIRE(run("train --out " + part + common + " --resume", dir).code == 0);
  auto strip = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  CHECK(strip(read_file(dir / "full" / "metrics.csv")) == strip(read_file(dir / "part" / "metrics.csv")));
  CHECK(read_file(dir / "full" / "best.ckpt") == read_file(dir / "part" / "best.ckpt"));
}

TEST_CASE("experiment writes one row per run plus means") {
  TempDir dir("cli-exp");
  const auto data = small_data(dir, "data");
  const auto out = (dir / "exp").string();
  const auto r = run("experiment --data " + data + " --out " + out +
                         " --seeds 0,1 --steps 4 --eval-interval 4 --dev-limit 2" + kModel, dir);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("EM ordering") != std::string::npos);
  std::istringstream csv(read_file(dir / "exp" / "experiment.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "variant,seed,EM,ratn_acc,r_pos_neg");
  int runs = 0, means = 0;
  while (std::getline(csv, line)) {
    const bool mean = line.find(",mean,") != std::string::npos;
    (mean ? means : runs)++;
    if (line.rfind("fid,", 0) == 0) {
      // Empty ratn_acc column for FiD.
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
      REQUIRE(f.size() >= 4);
      CHECK(f[3].empty());
    }
  }
  CHECK(runs == 6);
  CHECK(means == 3);
}
