#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "ovslink/cli.hpp"
#include "ovslink/io.hpp"
#include "temp_dir.hpp"

using namespace ovslink;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST(Cli, SimIsByteIdenticalForOneSeed) {
  TempDir dir;
  const auto a = dir / "a";
  const auto b = dir / "b";
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "7", "--out", a.string(), "--quiet"}).code, 0);
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "7", "--out", b.string(), "--quiet"}).code, 0);
  for (const char* f : {"candidates.jsonl", "gt.jsonl", "first_frame.json", "scene.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  std::size_t flows = 0;
  for (const auto& e : fs::directory_iterator(a / "flow")) {
    EXPECT_EQ(slurp(e.path()), slurp(b / "flow" / e.path().filename()));
    ++flows;
  }
  EXPECT_GT(flows, 0u);
}

TEST(Cli, SimRejectsBadScenes) {
  TempDir dir;
  EXPECT_EQ(invoke({"sim", "spiral", "--out", (dir / "x").string()}).code, 2);
  write(dir / "big.json",
        R"({"width":64,"height":48,"frames":4,"objects":[{"id":1,"shape":"rect","width":80,"height":10,"track":[[0,10,10]]}]})");
  const auto r = invoke({"sim", "--spec", (dir / "big.json").string(), "--out", (dir / "y").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "y" / "candidates.jsonl"));
}

TEST(Cli, RunOnStaticSceneReproducesTruth) {
  TempDir dir;
  const auto seq = dir / "static";
  ASSERT_EQ(invoke({"sim", "static", "--seed", "2", "--out", seq.string(), "--quiet"}).code, 0);
  const auto r = invoke({"run", seq.string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto preds = io::load_mask_frames(seq / "predictions.jsonl");
  const auto truth = io::load_mask_frames(seq / "gt.jsonl");
  ASSERT_EQ(preds.size(), truth.size());
  for (std::size_t k = 0; k < preds.size(); ++k) EXPECT_EQ(preds[k], truth[k]);
  for (const auto& l : lines_of(slurp(seq / "predictions.jsonl"))) {
    for (const auto& [id, p] : io::json::parse(l)["paths"].items()) EXPECT_EQ(p, "IOU");
  }
  const auto summary = io::json::parse(slurp(seq / "predictions.jsonl.summary.json"));
  EXPECT_EQ(summary["frames"], preds.size());

  const auto e = invoke({"eval", (seq / "predictions.jsonl").string(), (seq / "gt.jsonl").string()});
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(e.out, "J=1.000 F=1.000 G=1.000\n");
}

TEST(Cli, RunWithoutFlowWarnsAndUsesIdentity) {
  TempDir dir;
  const auto seq = dir / "s";
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "1", "--out", seq.string(), "--quiet"}).code, 0);
  fs::remove_all(seq / "flow");
  const auto r = invoke({"run", seq.string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_EQ(lines_of(slurp(seq / "predictions.jsonl")).size(), 60u);
}

TEST(Cli, TruncatedInputExitsTwoWithoutOutput) {
  TempDir dir;
  const auto seq = dir / "s";
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "1", "--out", seq.string(), "--quiet"}).code, 0);
  auto lines = lines_of(slurp(seq / "candidates.jsonl"));
  std::string text;
  for (std::size_t k = 0; k < 10; ++k) text += lines[k] + "\n";
  text += lines[10].substr(0, lines[10].size() / 2) + "\n";
  write(seq / "candidates.jsonl", text);
  const auto r = invoke({"run", seq.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 11"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(seq / "predictions.jsonl"));
  for (const auto& e : fs::directory_iterator(seq)) {
    EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos);
  }
}

TEST(Cli, EvalErrors) {
  TempDir dir;
  const auto seq = dir / "s";
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "1", "--frames", "5", "--out", seq.string(),
                 "--quiet"}).code,
            0);
  write(dir / "empty.jsonl", "");
  EXPECT_EQ(invoke({"eval", (dir / "empty.jsonl").string(), (seq / "gt.jsonl").string()}).code, 2);

  auto lines = lines_of(slurp(seq / "gt.jsonl"));
  auto j = io::json::parse(lines[2]);
  j["masks"]["9"] = j["masks"]["1"];
  j["masks"].erase("1");
  lines[2] = j.dump();
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write(dir / "pred.jsonl", text);
  const auto r = invoke({"eval", (dir / "pred.jsonl").string(), (seq / "gt.jsonl").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("frame 2"), std::string::npos) << r.err;
}

TEST(Cli, EvalCsv) {
  TempDir dir;
  const auto seq = dir / "s";
  ASSERT_EQ(invoke({"sim", "static", "--out", seq.string(), "--quiet"}).code, 0);
  const auto csv = dir / "scores.csv";
  ASSERT_EQ(invoke({"eval", (seq / "gt.jsonl").string(), (seq / "gt.jsonl").string(), "--out",
                 csv.string()}).code,
            0);
  const auto rows = lines_of(slurp(csv));
  EXPECT_EQ(rows.front(), "instance,J,F,G");
  EXPECT_EQ(rows.back(), "mean,1.000000,1.000000,1.000000");
}

TEST(Cli, BenchSingleSample) {
  TempDir dir;
  const auto report = dir / "bench.json";
  const auto r = invoke({"bench", "--preset", "crossing", "--frames", "1", "--repetitions", "1",
                      "--out", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = io::json::parse(slurp(report));
  EXPECT_EQ(j["samples"], 1);
  EXPECT_EQ(j["median_us"], j["p95_us"]);
  EXPECT_NEAR(j["fps"].get<double>() * j["mean_us"].get<double>(), 1e6, 1e-3);
}

TEST(Cli, BenchBaselineGate) {
  TempDir dir;
  const auto base = dir / "baseline.json";
  auto r = invoke({"bench", "--preset", "crossing", "--frames", "10", "--repetitions", "1",
                "--baseline", base.string(), "--quiet"});
  ASSERT_EQ(r.code, 0);
  ASSERT_TRUE(fs::exists(base));
  write(base, R"({"median_us": 1e-9})");
  r = invoke({"bench", "--preset", "crossing", "--frames", "10", "--repetitions", "1",
           "--baseline", base.string(), "--quiet"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("regression"), std::string::npos);
}

TEST(Cli, SummarizeLatencies) {
  cli::BenchReport r;
  r.latencies_us = {5, 1, 4, 2, 3};
  cli::summarize_latencies(r);
  EXPECT_EQ(r.median_us, 3);
  EXPECT_EQ(r.p95_us, 5);
  EXPECT_EQ(r.mean_us, 3);
  r.latencies_us = {1, 2, 3, 4};
  cli::summarize_latencies(r);
  EXPECT_EQ(r.median_us, 2.5);
  r.latencies_us.clear();
  EXPECT_THROW(cli::summarize_latencies(r), std::invalid_argument);
}

TEST(Cli, AblateGridShape) {
  TempDir dir;
  const auto suite = dir / "suite";
  ASSERT_EQ(invoke({"sim", "crossing", "--seed", "3", "--frames", "20", "--out",
                 (suite / "a").string(), "--quiet"}).code,
            0);
  auto r = invoke({"ablate", suite.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines_of(r.out).size(), 2u);

  const auto csv = dir / "grid.csv";
  r = invoke({"ablate", suite.string(), "--rho-reid", "1.5,2.0,2.5,3.0,3.5", "--out",
           csv.string(), "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(lines_of(slurp(csv)).size(), 6u);
  EXPECT_EQ(invoke({"ablate", suite.string(), "--rho-iou", "0.3,x"}).code, 2);
  EXPECT_EQ(invoke({"ablate", (dir / "missing").string()}).code, 2);
}

namespace {

void write_samples(const fs::path& p, std::uint64_t seed, int labels) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::ofstream out(p);
  for (int i = 0; i < 80; ++i) {
    const int label = i % labels;
    io::json f = io::json::array();
    for (int k = 0; k < 6; ++k) f.push_back((k == label ? 2.0 : 0.0) + n(g));
    out << io::json{{"label", label}, {"feature", f}}.dump() << '\n';
  }
}

}  // namespace

TEST(Cli, TrainEmbedZeroStepsKeepsInit) {
  TempDir dir;
  write_samples(dir / "s.jsonl", 1, 2);
  const auto out = dir / "p.json";
  ASSERT_EQ(invoke({"train-embed", (dir / "s.jsonl").string(), "--steps", "0", "--out-dim", "3",
                 "--seed", "4", "--out", out.string(), "--quiet"}).code,
            0);
  const auto j = io::json::parse(slurp(out));
  const Eigen::MatrixXd init = init_projection(6, 3, 4);
  ASSERT_EQ(j["rows"], init.rows());
  ASSERT_EQ(j["cols"], init.cols());
  for (Eigen::Index r = 0; r < init.rows(); ++r) {
    for (Eigen::Index c = 0; c < init.cols(); ++c) {
      EXPECT_EQ(j["matrix"][r][c].get<double>(), init(r, c));
    }
  }
  EXPECT_EQ(j["initial_loss"], j["final_loss"]);
}

TEST(Cli, TrainEmbedDecreasesAndIsDeterministic) {
  TempDir dir;
  write_samples(dir / "s.jsonl", 2, 2);
  for (const char* name : {"a.json", "b.json"}) {
    ASSERT_EQ(invoke({"train-embed", (dir / "s.jsonl").string(), "--steps", "200", "--seed", "5",
                   "--out", (dir / name).string(), "--quiet"}).code,
              0);
  }
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.loss.csv"), slurp(dir / "b.loss.csv"));
  const auto j = io::json::parse(slurp(dir / "a.json"));
  EXPECT_LT(j["final_loss"].get<double>(), j["initial_loss"].get<double>());
  EXPECT_EQ(lines_of(slurp(dir / "a.loss.csv")).size(), 201u);
}

TEST(Cli, TrainEmbedNeedsTwoLabels) {
  TempDir dir;
  write_samples(dir / "s.jsonl", 3, 1);
  const auto r = invoke({"train-embed", (dir / "s.jsonl").string(), "--out",
                      (dir / "p.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "p.json"));
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"run"}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}
