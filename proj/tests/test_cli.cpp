#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Path of the binary under test; empty when the build did not provide it.
std::string cli_path() {
  const char* p = std::getenv("FAECLUST_CLI");
  return p ? p : "";
}

struct CliResult {
  int code = -1;
  std::string out;  // stdout only; stderr goes to a scratch file
};

fs::path scratch_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "faeclust_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CliResult run_cli(const std::string& args) {
  static int call = 0;
  fs::path errfile = scratch_dir() / ("stderr_" + std::to_string(call++) + ".txt");
  std::string cmd = cli_path() + " " + args + " 2>" + errfile.string();
  CliResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe)) res.out.append(buf, got);
  int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string last_stderr() {
  std::string newest, content;
  for (const auto& e : fs::directory_iterator(scratch_dir())) {
    std::string name = e.path().filename().string();
    if (name.rfind("stderr_", 0) == 0 && name > newest) newest = name;
  }
  std::ifstream in(scratch_dir() / newest);
  content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return content;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small dataset plus configs sized so a fit takes a couple of seconds.
fs::path prepare_small_case(const std::string& name) {
  fs::path dir = scratch_dir() / name;
  fs::create_directories(dir);
  CliResult sim = run_cli("simulate --kind hypersphere --n 24 --steps 40 --noise 0.02 --seed 5"
                          " --out " + (dir / "data.csv").string() +
                          " --truth " + (dir / "truth.csv").string());
  REQUIRE(sim.code == 0);
  write_file(dir / "net.json",
             R"({"layer_widths": [8, 6, 4, 6, 8, 8, 16], "latent_dim": 4,)"
             R"( "net_basis_size": 6, "tau": 1.0, "alpha": 0.05, "batch_size": 12, "seed": 3})");
  write_file(dir / "fit.json",
             R"({"pretrain_epochs": 25, "finetune_epochs": 2, "metric": "dtw-fast",)"
             R"( "grid_n": 32, "k_min": 2, "k_max": 5, "seed": 11, "max_loops": 6})");
  return dir;
}

}  // namespace

#define REQUIRE_CLI()                                        \
  if (cli_path().empty()) {                                  \
    MESSAGE("FAECLUST_CLI not set; skipping CLI test case"); \
    return;                                                  \
  }

TEST_CASE("version flag prints the semantic version and build hash") {
  REQUIRE_CLI();
  CliResult res = run_cli("--version");
  CHECK(res.code == 0);
  CHECK(res.out.find("faeclust ") == 0);
  CHECK(res.out.find("(build ") != std::string::npos);
}

TEST_CASE("evaluate on identical files prints unit scores") {
  REQUIRE_CLI();
  fs::path dir = scratch_dir() / "eval";
  fs::create_directories(dir);
  write_file(dir / "labels.csv", "subject_id,label\n0,0\n1,1\n2,0\n3,2\n");
  CliResult res = run_cli("evaluate --pred " + (dir / "labels.csv").string() + " --truth " +
                          (dir / "labels.csv").string());
  CHECK(res.code == 0);
  json j = json::parse(res.out);
  CHECK(j["ami"].get<double>() == 1.0);
  CHECK(j["ari"].get<double>() == 1.0);
}

TEST_CASE("evaluate aligns subjects by id, not row order") {
  REQUIRE_CLI();
  fs::path dir = scratch_dir() / "eval_order";
  fs::create_directories(dir);
  write_file(dir / "pred.csv", "subject_id,label\n0,0\n1,1\n2,0\n");
  write_file(dir / "truth.csv", "subject_id,label\n2,7\n0,7\n1,3\n");
  CliResult res = run_cli("evaluate --pred " + (dir / "pred.csv").string() + " --truth " +
                          (dir / "truth.csv").string());
  CHECK(res.code == 0);
  json j = json::parse(res.out);
  CHECK(j["ami"].get<double>() == 1.0);
  CHECK(j["ari"].get<double>() == 1.0);
}

TEST_CASE("usage errors exit with code 1") {
  REQUIRE_CLI();
  CHECK(run_cli("fit --bogus-flag 1").code == 1);
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  // Unknown keys in a config file are usage-class errors too.
  fs::path dir = scratch_dir() / "badcfg";
  fs::create_directories(dir);
  write_file(dir / "m.json", R"({"lambda_s": 0.1, "oops": true})");
  write_file(dir / "d.csv", "subject_id,dim,t,value\n0,0,0,1\n0,0,0.5,2\n0,0,1,3\n0,0,1.5,4\n");
  CliResult res = run_cli("smooth --data " + (dir / "d.csv").string() + " --manifest " +
                          (dir / "m.json").string() + " --out " + (dir / "c.csv").string());
  CHECK(res.code == 1);
}

TEST_CASE("data errors exit with code 2 and name the subject") {
  REQUIRE_CLI();
  fs::path dir = scratch_dir() / "baddata";
  fs::create_directories(dir);
  write_file(dir / "bad.csv",
             "subject_id,dim,t,value\n7,0,0.5,1.0\n7,0,0.2,2.0\n7,0,0.7,1.5\n7,0,0.9,1.1\n");
  CliResult res = run_cli("fit --data " + (dir / "bad.csv").string() + " --out " +
                          (dir / "out").string());
  CHECK(res.code == 2);
  CHECK(last_stderr().find("subject 7") != std::string::npos);
}

TEST_CASE("simulate, smooth and distances compose through files") {
  REQUIRE_CLI();
  fs::path dir = prepare_small_case("compose");
  CliResult smo = run_cli("smooth --data " + (dir / "data.csv").string() + " --out " +
                          (dir / "coeffs.csv").string() + " --values-out " +
                          (dir / "fitted.csv").string() + " --grid 25");
  CHECK(smo.code == 0);
  CHECK(fs::exists(dir / "coeffs.csv"));
  CHECK(fs::exists(dir / "fitted.csv"));
  CHECK(fs::exists(dir / "coeffs.csv.manifest.json"));

  CliResult dis = run_cli("distances --data " + (dir / "data.csv").string() +
                          " --metric dtw-fast --grid 32 --out " + (dir / "dist.csv").string() +
                          " --similarity " + (dir / "sim.csv").string());
  CHECK(dis.code == 0);
  std::string header = slurp(dir / "dist.csv").substr(0, 6);
  CHECK(header == "i,j,d\n");
  CHECK(slurp(dir / "sim.csv").substr(0, 6) == "i,j,s\n");
}

TEST_CASE("fit writes artifacts and evaluate closes the loop") {
  REQUIRE_CLI();
  fs::path dir = prepare_small_case("roundtrip");
  CliResult fit = run_cli("fit --data " + (dir / "data.csv").string() + " --net " +
                          (dir / "net.json").string() + " --fitcfg " +
                          (dir / "fit.json").string() + " --out " + (dir / "run").string());
  REQUIRE(fit.code == 0);
  for (const char* f : {"labels.csv", "embedding.csv", "report.json", "checkpoint.json",
                        "run_manifest.json"})
    CHECK(fs::exists(dir / "run" / f));

  CliResult eva = run_cli("evaluate --pred " + (dir / "run" / "labels.csv").string() +
                          " --truth " + (dir / "truth.csv").string());
  REQUIRE(eva.code == 0);
  json j = json::parse(eva.out);
  CHECK(j["ami"].get<double>() > 0.5);

  json manifest = json::parse(slurp(dir / "run" / "run_manifest.json"));
  CHECK(manifest["subcommand"] == "fit");
  CHECK(manifest["seed"].get<int>() == 11);
  CHECK(manifest["config"]["fit"]["pretrain_epochs"].get<int>() == 25);
  CHECK(manifest["wall_time_seconds"].get<double>() > 0.0);

  // The report carries no wall times; those live in the manifest.
  CHECK(slurp(dir / "run" / "report.json").find("seconds") == std::string::npos);
}

TEST_CASE("replaying a fit manifest reproduces every artifact byte for byte") {
  REQUIRE_CLI();
  fs::path dir = prepare_small_case("replay");
  CliResult fit = run_cli("fit --data " + (dir / "data.csv").string() + " --net " +
                          (dir / "net.json").string() + " --fitcfg " +
                          (dir / "fit.json").string() + " --out " + (dir / "a").string());
  REQUIRE(fit.code == 0);
  CliResult rep = run_cli("replay --manifest " + (dir / "a" / "run_manifest.json").string() +
                          " --out " + (dir / "b").string());
  REQUIRE(rep.code == 0);
  for (const char* f : {"labels.csv", "embedding.csv", "report.json", "checkpoint.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
}

TEST_CASE("cluster consumes a stored embedding and similarity graph") {
  REQUIRE_CLI();
  fs::path dir = prepare_small_case("cluster");
  REQUIRE(run_cli("fit --data " + (dir / "data.csv").string() + " --net " +
                  (dir / "net.json").string() + " --fitcfg " + (dir / "fit.json").string() +
                  " --out " + (dir / "run").string())
              .code == 0);
  REQUIRE(run_cli("distances --data " + (dir / "data.csv").string() +
                  " --metric dtw-fast --grid 32 --out " + (dir / "dist.csv").string() +
                  " --similarity " + (dir / "sim.csv").string())
              .code == 0);
  CliResult clu = run_cli("cluster --embedding " + (dir / "run" / "embedding.csv").string() +
                          " --graph " + (dir / "sim.csv").string() +
                          " --kmin 2 --kmax 5 --rule persistence --out " +
                          (dir / "clu").string());
  REQUIRE(clu.code == 0);
  for (const char* f : {"labels.csv", "hierarchy.json", "scores.json", "run_manifest.json"})
    CHECK(fs::exists(dir / "clu" / f));

  json scores = json::parse(slurp(dir / "clu" / "scores.json"));
  CHECK(scores["selected_k"].get<int>() >= 2);
  CHECK(scores["selected_k"].get<int>() <= 5);
  json hierarchy = json::parse(slurp(dir / "clu" / "hierarchy.json"));
  CHECK(hierarchy["n"].get<int>() == 24);
  CHECK(hierarchy["merges"].size() <= 23);

  // Persistence recovers the planted two-cluster split on this easy case.
  CliResult eva = run_cli("evaluate --pred " + (dir / "clu" / "labels.csv").string() +
                          " --truth " + (dir / "truth.csv").string());
  REQUIRE(eva.code == 0);
  CHECK(json::parse(eva.out)["ami"].get<double>() == 1.0);
}

TEST_CASE("fixed-seed simulate output is identical across runs") {
  REQUIRE_CLI();
  fs::path dir = scratch_dir() / "simrepro";
  fs::create_directories(dir);
  std::string args = "simulate --kind pendulum --n 12 --steps 30 --noise 0.05 --seed 9 --out ";
  REQUIRE(run_cli(args + (dir / "a.csv").string()).code == 0);
  REQUIRE(run_cli(args + (dir / "b.csv").string()).code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
}
