#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>

#include <json.hpp>

#include "picpoint/dataset.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" PICPOINT_CLI "' " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const std::array<const char*, 8> kCommands{"prepare-data", "pretrain", "resume",  "export",
                                           "probe",        "heatmap",  "ablate", "validate-data"};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help output matches the golden files") {
  RunResult top = run_cli("--help");
  CHECK(top.code == 0);
  CHECK(top.output == testutil::slurp(fs::path(PICPOINT_GOLDEN) / "help.txt"));
  for (const char* cmd : kCommands) {
    CAPTURE(cmd);
    RunResult r = run_cli(std::string(cmd) + " --help");
    CHECK(r.code == 0);
    CHECK(r.output == testutil::slurp(fs::path(PICPOINT_GOLDEN) / (std::string(cmd) + ".txt")));
    for (const char* flag : {"--seed", "--config", "--out"}) CHECK(r.output.find(flag) != std::string::npos);
  }
}

TEST_CASE("usage errors exit 1 with usage text") {
  RunResult r = run_cli("probe --bogus");
  CHECK(r.code == 1);
  CHECK(r.output.find("Usage") != std::string::npos);
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("prepare-data --objects notanumber").code == 1);
  CHECK(run_cli("heatmap --checkpoint x.pcta").code == 1);  // --object is required
}

TEST_CASE("runtime errors exit 2 with the path") {
  testutil::TempDir dir("cli_missing");
  const fs::path missing = dir / "nowhere";
  RunResult r = run_cli("pretrain --data '" + missing.string() + "' --out '" + (dir / "run").string() + "'");
  CHECK(r.code == 2);
  CHECK(r.output.find((missing / picpoint::kManifestName).string()) != std::string::npos);
  CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);

  RunResult e = run_cli("export --checkpoint '" + (dir / "none.pcta").string() + "' --out '" + (dir / "b.pcta").string() + "'");
  CHECK(e.code == 2);
}

TEST_CASE("prepare-data builds a small synthetic set and validates it") {
  testutil::TempDir dir("cli_prepare");
  const fs::path data = dir / "data";
  RunResult r = run_cli("prepare-data --source synthetic --objects 10 --views 2 --points 256 --seed 3 --out '" +
                        data.string() + "'");
  CHECK(r.code == 0);
  auto entries = picpoint::read_manifest(data / picpoint::kManifestName);
  CHECK(entries.size() == 10);

  RunResult v = run_cli("validate-data --data '" + data.string() + "' --out '" + (dir / "report.json").string() + "'");
  CHECK(v.code == 0);
  auto report = nlohmann::json::parse(testutil::slurp(dir / "report.json"));
  CHECK(report["objects_checked"] == 10);

  // Re-running with the same seed rewrites identical bytes.
  const std::string manifest = testutil::slurp(data / picpoint::kManifestName);
  const std::string view = testutil::slurp(data / entries[4].views_dir / picpoint::view_file_name(1));
  CHECK(run_cli("prepare-data --source synthetic --objects 10 --views 2 --points 256 --seed 3 --out '" + data.string() + "'")
            .code == 0);
  CHECK(testutil::slurp(data / picpoint::kManifestName) == manifest);
  CHECK(testutil::slurp(data / entries[4].views_dir / picpoint::view_file_name(1)) == view);

  testutil::spit(data / entries[0].cloud, "broken");
  CHECK(run_cli("validate-data --skip-images --data '" + data.string() + "'").code == 2);
}

TEST_CASE("config file values sit between defaults and flags") {
  testutil::TempDir dir("cli_config");
  testutil::spit(dir / "prep.json", R"({"objects": 5, "views": 1, "points": 128, "seed": 4})");
  RunResult r = run_cli("prepare-data --config '" + (dir / "prep.json").string() + "' --objects 6 --out '" +
                        (dir / "data").string() + "'");
  CHECK(r.code == 0);
  auto entries = picpoint::read_manifest(dir / "data" / picpoint::kManifestName);
  REQUIRE(entries.size() == 6);
  CHECK(entries[0].n_points == 128);
}

TEST_CASE("pipeline: pretrain, resume, export, probe, heatmap") {
  testutil::TempDir dir("cli_pipeline");
  const std::string data = (dir / "data").string();
  REQUIRE(run_cli("prepare-data --objects 25 --views 2 --points 256 --seed 1 --out '" + data + "'").code == 0);
  testutil::spit(dir / "train.json", R"({"batch_size": 4, "L": 16, "d": 64, "k": 10, "epochs": 2})");
  const std::string cfg = "--config '" + (dir / "train.json").string() + "'";
  const std::string run = (dir / "run").string();
  RunResult p = run_cli("pretrain " + cfg + " --data '" + data + "' --max-steps 3 --seed 5 --out '" + run + "'",
                        "PICPOINT_DETERMINISTIC=1");
  CHECK(p.code == 0);
  CHECK(fs::exists(fs::path(run) / "checkpoint.pcta"));
  CHECK(fs::exists(fs::path(run) / "metrics.jsonl"));

  RunResult rs = run_cli("resume --checkpoint '" + run + "/checkpoint.pcta' --max-steps 5 --out '" + run + "'",
                         "PICPOINT_DETERMINISTIC=1");
  CHECK(rs.code == 0);
  std::string log = testutil::slurp(fs::path(run) / "metrics.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 5);

  const std::string backbone = (dir / "backbone.pcta").string();
  CHECK(run_cli("export --checkpoint '" + run + "/checkpoint.pcta' --out '" + backbone + "'").code == 0);
  const std::string probe = (dir / "probe").string();
  CHECK(run_cli("probe --backbone '" + backbone + "' --data '" + data + "' --seed 2 --out '" + probe + "'").code == 0);
  auto report = nlohmann::json::parse(testutil::slurp(fs::path(probe) / "probe.json"));
  CHECK(report["seed"] == 2);
  CHECK(fs::exists(fs::path(probe) / "confusion.csv"));
  CHECK(run_cli("probe --random-init --data '" + data + "' --out '" + (dir / "probe0").string() + "'").code == 0);

  auto entries = picpoint::read_manifest(fs::path(data) / picpoint::kManifestName);
  const std::string heat = (dir / "heat").string();
  RunResult h = run_cli("heatmap --checkpoint '" + run + "/checkpoint.pcta' --data '" + data + "' --object " +
                        entries[3].object_id + " --view 1 --point 7 --out '" + heat + "'");
  CHECK(h.code == 0);
  const std::string stem = entries[3].object_id + "_view1_pt7";
  CHECK(fs::exists(fs::path(heat) / (stem + ".png")));
  CHECK(fs::exists(fs::path(heat) / (stem + ".json")));
  CHECK(run_cli("heatmap --checkpoint '" + backbone + "' --data '" + data + "' --object " + entries[3].object_id +
                " --out '" + heat + "'")
            .code == 2);
}

}
