#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <map>

#include "safe/cli.hpp"
#include "safe/plot.hpp"
#include "support.hpp"

using namespace safe;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "safe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::size_t line_count(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

std::map<std::string, std::string> summary_means(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    out[line.substr(0, a)] = line.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1);
  }
  return out;
}

}  // namespace

TEST_CASE("generate writes the series and its breakpoints") {
  TempDir dir("gen");
  REQUIRE(run({"generate", "--process", "ts-b", "--seed", "1", "--out", (dir / "a").string()}) == exit_ok);
  CHECK(read_file(dir / "a/breakpoints.txt") == "400,700\n");
  CHECK(line_count(read_file(dir / "a/series.csv")) == 1001);

  REQUIRE(run({"generate", "--process", "linear-1", "--seed", "7", "--out", (dir / "b").string()}) == exit_ok);
  CHECK(read_file(dir / "b/breakpoints.txt") == "3000,6000,9000\n");
  CHECK(line_count(read_file(dir / "b/series.csv")) == 12001);
}

TEST_CASE("generate is byte-identical across runs") {
  TempDir dir("gen2");
  for (const char* sub : {"x", "y"})
    REQUIRE(run({"generate", "--process", "ts-e", "--seed", "3", "--out", (dir / sub).string()}) == exit_ok);
  for (const char* f : {"series.csv", "breakpoints.txt", "spec.txt", "manifest.json", "config.cfg"}) {
    CAPTURE(f);
    CHECK(read_file(dir / "x" / f) == read_file(dir / "y" / f));
  }
}

TEST_CASE("manifest records config, seeds and artifact hashes") {
  TempDir dir("manifest");
  const auto out = dir / "run";
  REQUIRE(run({"detect", "--process", "ts-b", "--trials", "3", "--seed", "10", "--out", out.string()}) == exit_ok);
  const auto m = nlohmann::json::parse(read_file(out / "manifest.json"));
  CHECK(m["schema_version"] == kSchemaVersion);
  CHECK(m["command"] == "detect");
  CHECK(m["seeds"] == nlohmann::json::array({10, 11, 12}));
  CHECK(m["config"]["process"] == "ts-b");
  for (const char* f : {"trace.csv", "scores.csv", "summary.csv", "events.csv", "breakpoints.txt"}) {
    CAPTURE(f);
    REQUIRE(m["artifacts"].contains(f));
    CHECK(m["artifacts"][f] == sha256_file(out / f));
  }
  const auto trace = read_csv_columns(out / "trace.csv");
  CHECK(trace.at("x").size() == 1000);
  CHECK(trace.count("ns") == 1);

  // Re-running from the manifest reproduces every non-timing artifact.
  const auto again = dir / "again";
  REQUIRE(run({"detect", "--config", (out / "manifest.json").string(), "--out", again.string()}) == exit_ok);
  for (const char* f : {"trace.csv", "events.csv", "breakpoints.txt", "config.cfg"}) {
    CAPTURE(f);
    CHECK(read_file(out / f) == read_file(again / f));
  }

  CHECK(run({"report", "--in", out.string()}) == exit_ok);
  write_file(out / "events.csv", "trial,t\n");
  CHECK(run({"report", "--in", out.string()}) == exit_runtime);
}

TEST_CASE("exit codes") {
  TempDir dir("exit");
  CHECK(run({"generate", "--no-such-flag", "1", "--out", (dir / "a").string()}) == exit_config);
  CHECK(run({"detect", "--lambda", "4", "--trigger", "1", "--warning", "2", "--out", (dir / "b").string()}) ==
        exit_config);
  CHECK(run({"generate", "--process", "ts-z", "--out", (dir / "c").string()}) == exit_config);
  CHECK(run({"detect", "--csv", (dir / "missing.csv").string(), "--out", (dir / "d").string()}) != exit_ok);
  CHECK(run({"generate", "--process", "nonlinear-2", "--out", (dir / "e").string()}) == exit_runtime);
  CHECK(run({"detect", "--process", "ts-b", "--trials", "4", "--gate-max-fa", "0", "--out",
             (dir / "f").string()}) == exit_gate);
  CHECK(run({"detect", "--process", "ts-b", "--trials", "4", "--gate-min-hit", "0", "--out",
             (dir / "g").string()}) == exit_ok);
}

TEST_CASE("config validation lists every problem at once") {
  TempDir dir("problems");
  ExperimentConfig c;
  c.lambda = 7;
  c.trials = 0;
  c.beta = -1;
  c.resolve("predict");
  CHECK(c.problems("predict").size() >= 3);
}

TEST_CASE("mismatched schema versions are refused") {
  TempDir dir("schema");
  std::filesystem::create_directories(dir / "old");
  write_file(dir / "old/manifest.json", R"({"schema_version": 999, "command": "generate"})");
  CHECK(run({"generate", "--out", (dir / "old").string()}) == exit_config);
  CHECK(read_file(dir / "old/manifest.json").find("999") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "old/series.csv"));
}

TEST_CASE("config files are overridden by flags") {
  TempDir dir("cfg");
  write_file(dir / "run.cfg", "# detector run\n[input]\nprocess = ts-c\nseed = 4\ntrials = 2\n");
  REQUIRE(run({"generate", "--config", (dir / "run.cfg").string(), "--seed", "9", "--out", (dir / "o").string()}) ==
          exit_ok);
  const auto m = nlohmann::json::parse(read_file(dir / "o/manifest.json"));
  CHECK(m["config"]["process"] == "ts-c");
  CHECK(m["seeds"] == nlohmann::json::array({9, 10}));

  write_file(dir / "bad.cfg", "no_such_key = 1\n");
  CHECK(run({"generate", "--config", (dir / "bad.cfg").string(), "--out", (dir / "p").string()}) == exit_config);
}

TEST_CASE("detect on a CSV column") {
  TempDir dir("csvdetect");
  std::string body = "time,value\n";
  for (int i = 0; i < 600; ++i) body += std::to_string(i) + "," + std::to_string(i < 300 ? 0.01 * (i % 7) : 5.0 * (i % 3)) + "\n";
  write_file(dir / "in.csv", body);
  REQUIRE(run({"detect", "--csv", (dir / "in.csv").string(), "--column", "value", "--out", (dir / "o").string()}) ==
          exit_ok);
  CHECK(read_csv_columns(dir / "o/trace.csv").at("x").size() == 600);
}

TEST_CASE("predict with the frozen baseline never updates") {
  TempDir dir("baseline");
  REQUIRE(run({"predict", "--process", "linear-1", "--predictor", "baseline", "--hidden", "8", "--max-epochs", "5",
               "--out", (dir / "o").string()}) == exit_ok);
  const auto s = summary_means(dir / "o/summary.csv");
  CHECK(std::stod(s.at("percent_update")) == 0.0);
  const auto preds = read_csv_columns(dir / "o/predictions.csv");
  CHECK(preds.at("adapted") == preds.at("baseline"));
}

TEST_CASE("predict writes scores, trajectory and adaptation log") {
  TempDir dir("predict");
  const auto out = dir / "o";
  REQUIRE(run({"predict", "--process", "linear-1", "--predictor", "par", "--trials", "2", "--out", out.string()}) ==
          exit_ok);
  for (const char* f : {"scores.csv", "mse_trajectory.csv", "predictions.csv", "adaptation_log.csv", "summary.csv",
                        "trace.csv", "mse_trajectory.svg", "predictions.svg", "manifest.json"})
    CHECK(std::filesystem::exists(out / f));
  const auto traj = read_csv_columns(out / "mse_trajectory.csv");
  CHECK(traj.at("t").size() == 9000);
  const auto s = summary_means(out / "summary.csv");
  CHECK(std::stod(s.at("percent_update")) > 0.0);
  CHECK(std::stod(s.at("percent_update")) <= 100.0);
}

TEST_CASE("bench report schema") {
  TempDir dir("bench");
  REQUIRE(run({"bench", "--process", "ts-b", "--trials", "1", "--out", (dir / "o").string()}) == exit_ok);
  const auto rows = read_file(dir / "o/bench.csv");
  CHECK(rows.rfind("trial,seed,features,steps,seconds,per_step_us\n", 0) == 0);
  CHECK(line_count(rows) == 3);
  const auto summary = read_file(dir / "o/summary.csv");
  CHECK(summary.rfind("features,mean_per_step_us,std_per_step_us,trials\n", 0) == 0);
  CHECK(summary.find("spectral") != std::string::npos);
  CHECK(summary.find("time_domain/spectral") != std::string::npos);
}

TEST_CASE("plots are well-formed vector graphics") {
  PlotSpec spec;
  spec.title = "a < b & c";
  PlotSeries s;
  s.label = "x";
  for (int i = 0; i < 5000; ++i) {
    s.x.push_back(i);
    s.y.push_back(std::sin(0.01 * i));
  }
  spec.series.push_back(s);
  spec.vertical_markers = {100};
  const auto svg = render_svg(spec);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}
