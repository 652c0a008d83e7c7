#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(TACSYNC_CLI_PATH) + " " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tacsync_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kSmallCalib =
    " --set dataset.n_captures=4 --set calibration.mlp.epochs=2 --set calibration.mlp.hidden=[8,8,8]";

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli("fly-to-moon").code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("simulate-bus --no-such-flag").code, 2);
}

TEST(Cli, HelpExitsCleanly) { EXPECT_EQ(cli("--help").code, 0); }

TEST(Cli, MalformedConfigExitsWithThree) {
  const fs::path dir = scratch("badcfg");
  std::ofstream(dir / "bad.json") << "{\"seed\": 1,";
  EXPECT_EQ(cli("simulate-bus -c " + (dir / "bad.json").string() + " -o " + dir.string()).code, 3);
  EXPECT_EQ(cli("simulate-bus --set bogus=1 -o " + dir.string()).code, 3);
  EXPECT_EQ(cli("simulate-bus --set bus.t_buf_us=-5 -o " + dir.string()).code, 3);
  fs::remove_all(dir);
}

TEST(Cli, MissingInputExitsWithFour) {
  const fs::path dir = scratch("missing");
  EXPECT_EQ(cli("simulate-bus -c /nonexistent/config.json").code, 4);
  EXPECT_EQ(cli("calibrate -i /nonexistent/dataset -o " + dir.string()).code, 4);
  EXPECT_EQ(cli("reconstruct -m /nonexistent/model.tcm -o " + dir.string()).code, 4);
  fs::remove_all(dir);
}

TEST(Cli, SimulateBusReportsTimingAndWritesArtifacts) {
  const fs::path dir = scratch("bus");
  const CliRun r = cli("simulate-bus -o " + dir.string());
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["subcommand"], "simulate-bus");
  EXPECT_EQ(j["simulated"]["sync_error_us"], 180);
  EXPECT_EQ(j["predicted"]["sync_error_us"], 210);
  EXPECT_TRUE(fs::exists(dir / "bus_trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "bus_summary.json"));
  fs::remove_all(dir);
}

TEST(Cli, RepeatedRunsWriteIdenticalBytes) {
  const fs::path a = scratch("rep_a"), b = scratch("rep_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(cli("simulate-bus -o " + d.string()).code, 0);
    ASSERT_EQ(cli("render-dataset --set dataset.n_captures=3 -o " + d.string()).code, 0);
  }
  EXPECT_EQ(slurp(a / "bus_trace.csv"), slurp(b / "bus_trace.csv"));
  EXPECT_EQ(slurp(a / "bus_summary.json"), slurp(b / "bus_summary.json"));
  for (const auto& e : fs::directory_iterator(a / "dataset"))
    EXPECT_EQ(slurp(e.path()), slurp(b / "dataset" / e.path().filename())) << e.path().filename();
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, CalibrationPipeline) {
  const fs::path dir = scratch("pipe");
  const std::string o = " -o " + dir.string();
  ASSERT_EQ(cli("render-dataset" + kSmallCalib + o).code, 0);
  EXPECT_TRUE(fs::exists(dir / "dataset" / "manifest.json"));

  const CliRun cal = cli("calibrate" + kSmallCalib + o);
  ASSERT_EQ(cal.code, 0);
  EXPECT_TRUE(json::parse(cal.out)["train_mae"].contains("gx"));
  EXPECT_TRUE(fs::exists(dir / "model.tcm"));

  const CliRun tr = cli("transfer" + kSmallCalib + o);
  ASSERT_EQ(tr.code, 0);
  EXPECT_EQ(json::parse(tr.out)["target_captures_used"], 1);
  EXPECT_TRUE(fs::exists(dir / "model_transferred.tcm"));

  const CliRun rc = cli("reconstruct -m " + (dir / "model_transferred.tcm").string() + kSmallCalib + o);
  ASSERT_EQ(rc.code, 0);
  EXPECT_TRUE(json::parse(rc.out).contains("depth_rmse_mm"));
  EXPECT_TRUE(fs::exists(dir / "reconstruct_depth.tsr"));

  const CliRun again = cli("reconstruct -i " + (dir / "probe_input.tsr").string() + kSmallCalib + o);
  EXPECT_EQ(again.code, 0);

  // A lookup table has no input offsets to transfer.
  ASSERT_EQ(cli("calibrate --set calibration.model=lut -m " + (dir / "lut.tcm").string() + kSmallCalib + o).code, 0);
  EXPECT_EQ(cli("transfer -m " + (dir / "lut.tcm").string() + kSmallCalib + o).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, GraspDemo) {
  const fs::path dir = scratch("grasp");
  const CliRun r = cli("grasp-demo --set grasp_delays=[1] -o " + dir.string());
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_GE(j["stop_tick"].get<int>(), 0);
  EXPECT_TRUE(j["sweep"]["delayed_always_worse"].get<bool>());
  for (const char* f : {"grasp_trace.csv", "grasp_stages.csv", "grasp_summary.json"}) EXPECT_TRUE(fs::exists(dir / f));
  fs::remove_all(dir);
}

TEST(Cli, ReproduceWritesThreeReports) {
  const fs::path dir = scratch("repro");
  const CliRun r = cli(
      "reproduce-paper --set calibration.train_captures=2 --set calibration.test_captures=1"
      " --set calibration.mlp.epochs=1 --set calibration.mlp.hidden=[8,8,8] --set grasp_delays=[1] -o " +
      dir.string());
  ASSERT_EQ(r.code, 0);
  for (const char* f : {"timing_report.json", "calibration_report.json", "overshoot_report.json"})
    EXPECT_TRUE(fs::exists(dir / "reproduce" / f)) << f;
  const json cal = json::parse(slurp(dir / "reproduce" / "calibration_report.json"));
  EXPECT_TRUE(cal.contains("orderings"));
  EXPECT_TRUE(cal.contains("end_to_end"));
  fs::remove_all(dir);
}

TEST(Cli, WorkerCountDoesNotChangeArtifacts) {
  const fs::path a = scratch("thr_a"), b = scratch("thr_b");
  for (const auto& [d, env] : {std::pair{a, std::string("TACSYNC_THREADS=1")}, std::pair{b, std::string("TACSYNC_THREADS=3")}}) {
    ASSERT_EQ(cli("render-dataset" + kSmallCalib + " -o " + d.string(), env).code, 0);
    ASSERT_EQ(cli("calibrate" + kSmallCalib + " -o " + d.string(), env).code, 0);
  }
  EXPECT_EQ(slurp(a / "model.tcm"), slurp(b / "model.tcm"));
  fs::remove_all(a);
  fs::remove_all(b);
}
