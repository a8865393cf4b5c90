#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cnnqa/cli.hpp"
#include "cnnqa/trainer.hpp"
#include "support.hpp"

using namespace cnnqa;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const std::string& text, const std::string& prefix = "") {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

std::string desk_config() { return std::string(CNNQA_SOURCE_DIR) + "/configs/desk.json"; }

}  // namespace

TEST_CASE("synth writes its files deterministically") {
  support::TempDir dir("cli_synth");
  const auto a = dir / "a", b = dir / "b";
  const auto r = cli({"synth", "--samples", "1000", "--seed", "7", "--out", a.string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("1000 triplets") != std::string::npos);
  for (const char* f : {"triplets.tsv", "features.tsv", "scenes.json"})
    CHECK(std::filesystem::exists(a / f));
  REQUIRE(cli({"synth", "--samples", "1000", "--seed", "7", "--out", b.string()}).code == 0);
  for (const char* f : {"triplets.tsv", "features.tsv", "scenes.json"})
    CHECK(read_file(a / f) == read_file(b / f));

  CHECK(cli({"synth", "--colors", "1", "--out", (dir / "c").string()}).code == kExitUsage);
  CHECK(cli({"synth", "--noise", "0.5", "--out", (dir / "c").string()}).code == kExitUsage);
  CHECK(cli({"synth"}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("train, eval and predict") {
  support::TempDir dir("cli_train");
  const auto data = dir / "data", run = dir / "run";
  REQUIRE(cli({"synth", "--samples", "50", "--seed", "3", "--out", data.string()}).code == 0);
  const auto triplets = (data / "triplets.tsv").string(), features = (data / "features.tsv").string();

  SUBCASE("checkpoint and one log line per epoch") {
    const auto r = cli({"train", "--train", triplets, "--features", features, "--epochs", "3",
                        "--out", run.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(std::filesystem::exists(run / "checkpoint.bin"));
    CHECK(std::filesystem::exists(run / "run_config.json"));
    CHECK(count_lines(read_file(run / "train_log.jsonl")) == 3);
  }

  SUBCASE("zero learning rate leaves the initialization") {
    REQUIRE(cli({"train", "--train", triplets, "--features", features, "--lr", "0", "--epochs",
                 "1", "--out", run.string()})
                .code == 0);
    const auto ckpt = load_checkpoint(run / "checkpoint.bin");
    CHECK(flatten(ckpt.params) == flatten(init_params(ckpt.config)));
  }

  SUBCASE("language mode needs no features") {
    CHECK(cli({"train", "--train", triplets, "--mode", "language", "--epochs", "1", "--out",
               run.string()})
              .code == kExitOk);
    CHECK(cli({"train", "--train", triplets, "--epochs", "1", "--out", run.string()}).code !=
          kExitOk);
  }

  SUBCASE("config file and flag precedence") {
    const auto cfg = dir / "cfg.json";
    std::ofstream(cfg) << R"({"epochs": 3, "batch_size": 10})";
    REQUIRE(cli({"train", "--train", triplets, "--features", features, "--config", cfg.string(),
                 "--out", run.string()})
                .code == 0);
    CHECK(count_lines(read_file(run / "train_log.jsonl")) == 3);
    REQUIRE(cli({"train", "--train", triplets, "--features", features, "--config", cfg.string(),
                 "--epochs", "2", "--out", run.string()})
                .code == 0);
    CHECK(count_lines(read_file(run / "train_log.jsonl")) == 2);
    const auto resolved = nlohmann::json::parse(read_file(run / "run_config.json"));
    CHECK(resolved.dump().find("\"batch_size\":10") != std::string::npos);

    std::ofstream(cfg) << R"({"epochz": 3})";
    CHECK(cli({"train", "--train", triplets, "--features", features, "--config", cfg.string(),
               "--out", run.string()})
              .code == kExitUsage);
  }

  SUBCASE("memorized training data, shuffling, WUPS fields and predict") {
    REQUIRE(cli({"train", "--train", triplets, "--features", features, "--config", desk_config(),
                 "--epochs", "200", "--out", run.string()})
                .code == 0);
    const auto ckpt = (run / "checkpoint.bin").string();
    const auto plain = cli({"eval", "--checkpoint", ckpt, "--test", triplets, "--features", features});
    REQUIRE(plain.code == kExitOk);
    const auto report = nlohmann::json::parse(plain.out);
    CHECK(report["accuracy"] == 1.0);
    CHECK(report["n"] == 50);
    CHECK_FALSE(report.contains("wups_0.0"));

    const auto shuffled = cli({"eval", "--checkpoint", ckpt, "--test", triplets, "--features",
                               features, "--shuffle-questions", "3"});
    REQUIRE(shuffled.code == kExitOk);
    CHECK(nlohmann::json::parse(shuffled.out)["accuracy"].get<double>() < 1.0);

    const auto taxonomy = std::string(CNNQA_SOURCE_DIR) + "/data/toy_taxonomy.tsv";
    const auto wups = cli({"eval", "--checkpoint", ckpt, "--test", triplets, "--features",
                           features, "--taxonomy", taxonomy, "--strict-wups"});
    REQUIRE(wups.code == kExitOk);
    const auto wreport = nlohmann::json::parse(wups.out);
    CHECK(wreport["wups_0.0"] == 1.0);
    CHECK(wreport["wups_0.9"] == 1.0);

    const auto first = load_triplets(triplets).front();
    std::string question;
    for (const auto& w : first.question) question += (question.empty() ? "" : " ") + w;
    const auto p = cli({"predict", "--checkpoint", ckpt, "--question", question, "--image",
                        first.image_id, "--features", features});
    REQUIRE(p.code == kExitOk);
    CHECK(p.out == first.answer + "\n");

    CHECK(cli({"eval", "--checkpoint", (run / "nope.bin").string(), "--test", triplets,
               "--features", features})
              .code != kExitOk);
  }
}

TEST_CASE("gradcheck") {
  const auto all = cli({"gradcheck"});
  CHECK(all.code == kExitOk);
  CHECK(count_lines(all.out, "PASS ") == 3);
  const auto concat = cli({"gradcheck", "--mode", "concat"});
  CHECK(concat.code == kExitOk);
  CHECK(count_lines(concat.out, "PASS ") == 1);
  CHECK(count_lines(concat.out) == 1);
  const auto corrupt = cli({"gradcheck", "--corrupt-backward"});
  CHECK(corrupt.code != kExitOk);
  CHECK(count_lines(corrupt.out, "FAIL ") == 3);
  CHECK(cli({"gradcheck", "--mode", "both"}).code == kExitUsage);
}
