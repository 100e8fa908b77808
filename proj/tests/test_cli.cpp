#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skelrep/cache.hpp"
#include "skelrep/checkpoint.hpp"
#include "skelrep/ntu.hpp"
#include "skelrep/report.hpp"

// end-to-end tests against the installed binary
namespace fs = std::filesystem;
using namespace skelrep;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "skelrep_cli_out.txt").string();
  const std::string cmd = std::string(SKELREP_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  CmdResult res;
  res.exit_code = WEXITSTATUS(status);
  std::ifstream in(out_file);
  std::ostringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  return res;
}

fs::path fresh_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("help exits 0, bad flags exit nonzero") {
  CHECK(run_cli("--help").exit_code == 0);
  CHECK(run_cli("prepare --help").exit_code == 0);
  CHECK(run_cli("--no-such-flag").exit_code != 0);
  CHECK(run_cli("train").exit_code != 0);  // missing required --cache
}

TEST_CASE("prepare --synthetic: stratified split and deterministic bytes") {
  auto dir = fresh_dir("skelrep_cli_prep");
  const std::string base =
      "prepare --synthetic classes=4 per-class=50 seed=7 m=9 t=32 --out " + dir.string();
  auto res = run_cli(base);
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("\"train_total\": 140") != std::string::npos);
  CHECK(res.output.find("\"test_total\": 60") != std::string::npos);

  auto split = read_cache_file((dir / "dataset.cache").string());
  CHECK(split.train.size() == 140);
  CHECK(split.test.size() == 60);

  // identical rerun produces identical cache bytes
  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string first = read_bytes(dir / "dataset.cache");
  REQUIRE(run_cli(base).exit_code == 0);
  CHECK(read_bytes(dir / "dataset.cache") == first);
}

TEST_CASE("prepare --ntu on the two-frame fixture") {
  auto dir = fresh_dir("skelrep_cli_ntu");
  // hand-written fixture under the NTU naming convention
  SkeletonSequence body = make_sequence(kNtuJoints, 2);
  for (int j = 0; j < kNtuJoints; ++j)
    for (int d = 0; d < 3; ++d)
      for (int f = 0; f < 2; ++f) body.at(d, j, f) = 0.01 * j + 0.5 * d + 0.1 * f + 0.2;
  const fs::path file = dir / "S001C001P001R001A007.skeleton";
  {
    std::ofstream out(file);
    write_ntu_skeleton(out, {body});
  }
  auto res = run_cli("prepare --ntu " + file.string() + " --t-fixed 16 --out " + dir.string() +
                     " --cache " + (dir / "ntu.cache").string());
  REQUIRE(res.exit_code == 0);
  auto split = read_cache_file((dir / "ntu.cache").string());
  CHECK(split.train.size() + split.test.size() == 1);
  const auto& seq = split.train.empty() ? split.test[0] : split.train[0];
  CHECK(seq.joints() == 25);
  CHECK(seq.frames() == 16);
  CHECK(seq.label == std::optional<int>(6));  // A007, zero-based

  // malformed file: nonzero exit with a data error
  const fs::path bad = dir / "broken.skeleton";
  {
    std::ofstream out(bad);
    out << "2\n1\nnot numbers\n";
  }
  auto bad_res = run_cli("prepare --ntu " + bad.string() + " --out " + dir.string());
  CHECK(bad_res.exit_code == 2);
}

TEST_CASE("train + eval round trip with variant flag contracts") {
  auto dir = fresh_dir("skelrep_cli_train");
  REQUIRE(run_cli("prepare --synthetic classes=2 per-class=8 seed=3 m=6 t=16 --out " +
                  dir.string())
              .exit_code == 0);
  const std::string cache = (dir / "dataset.cache").string();

  // ae: log has only mse entries
  auto res = run_cli("train --cache " + cache + " --variant ae --epochs 2 --batch-size 4" +
                     " --latent-dim 16 --seed 5 --out " + dir.string());
  REQUIRE(res.exit_code == 0);
  {
    std::ifstream log(dir / "train_log.csv");
    std::string header, line;
    std::getline(log, header);
    CHECK(header == "step,epoch,mse,r_skel,ssvi,wall_ms");
    REQUIRE(static_cast<bool>(std::getline(log, line)));
    // empty r_skel and ssvi columns
    std::stringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() >= 5);
    CHECK(fields[3].empty());
    CHECK(fields[4].empty());
  }

  // ae-l on a chain graph: r_skel column populated
  auto res2 = run_cli("train --cache " + cache + " --variant ae-l --graph chain6 --epochs 1" +
                      " --batch-size 4 --latent-dim 16 --seed 5 --out " + dir.string());
  REQUIRE(res2.exit_code == 0);
  {
    std::ifstream log(dir / "train_log.csv");
    std::string header, line;
    std::getline(log, header);
    REQUIRE(static_cast<bool>(std::getline(log, line)));
    std::stringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    CHECK_FALSE(fields[3].empty());
    CHECK(fields[4].empty());
  }

  // eval 1nn and lep against the checkpoint
  const std::string ckpt = (dir / "checkpoint.bin").string();
  auto eval_res = run_cli("eval --cache " + cache + " --checkpoint " + ckpt +
                          " --protocol 1nn --latent-dim 16 --out " + dir.string());
  REQUIRE(eval_res.exit_code == 0);
  {
    std::ifstream in(dir / "report-1nn.json");
    std::ostringstream ss;
    ss << in.rdbuf();
    auto report = parse_eval_report(ss.str());
    CHECK(report.protocol == "1nn");
    CHECK(report.accuracy >= 0.0);
    CHECK(report.accuracy <= 1.0);
  }
  CHECK(run_cli("eval --cache " + cache + " --checkpoint " + ckpt +
                " --protocol lep --lep-epochs 20 --latent-dim 16 --out " + dir.string())
            .exit_code == 0);
  CHECK(fs::exists(dir / "report-lep-confusion.txt"));

  // missing checkpoint: data error
  CHECK(run_cli("eval --cache " + cache + " --checkpoint " + (dir / "nope.bin").string() +
                " --protocol 1nn --latent-dim 16 --out " + dir.string())
            .exit_code == 2);
}

TEST_CASE("grae-l training writes all three loss columns") {
  auto dir = fresh_dir("skelrep_cli_grael");
  REQUIRE(run_cli("prepare --synthetic classes=2 per-class=8 seed=4 m=6 t=16 --out " +
                  dir.string())
              .exit_code == 0);
  auto res = run_cli("train --cache " + (dir / "dataset.cache").string() +
                     " --variant grae-l --graph chain6 --epochs 1 --batch-size 4" +
                     " --latent-dim 16 --ssvi-hidden 8 --grl-lambda 0.5 --seed 6 --out " +
                     dir.string());
  REQUIRE(res.exit_code == 0);
  std::ifstream log(dir / "train_log.csv");
  std::string header, line;
  std::getline(log, header);
  REQUIRE(static_cast<bool>(std::getline(log, line)));
  std::stringstream ls(line);
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(ls, field, ',')) fields.push_back(field);
  CHECK_FALSE(fields[3].empty());
  CHECK_FALSE(fields[4].empty());
}

TEST_CASE("inspect --graph prints the laplacian identities") {
  auto res = run_cli("inspect --graph ntu25");
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("trace(L) = 48") != std::string::npos);

  auto res2 = run_cli("inspect --graph chain2");
  REQUIRE(res2.exit_code == 0);
  // L = [[1,-1],[-1,1]]
  CHECK(res2.output.find("L =") != std::string::npos);
  CHECK(res2.output.find("1  -1") != std::string::npos);
  CHECK(res2.output.find("-1   1") != std::string::npos);

  CHECK(run_cli("inspect --graph nosuch").exit_code == 2);
  CHECK(run_cli("inspect").exit_code == 2);
}

TEST_CASE("inspect --checkpoint lists every parameter with its shape") {
  auto dir = fresh_dir("skelrep_cli_insckpt");
  REQUIRE(run_cli("prepare --synthetic classes=2 per-class=6 seed=3 m=6 t=16 --out " +
                  dir.string())
              .exit_code == 0);
  REQUIRE(run_cli("train --cache " + (dir / "dataset.cache").string() +
                  " --variant ae --epochs 1 --batch-size 4 --latent-dim 16 --seed 5 --out " +
                  dir.string())
              .exit_code == 0);
  auto res = run_cli("inspect --checkpoint " + (dir / "checkpoint.bin").string());
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("enc.block1.conv1.weight") != std::string::npos);
  CHECK(res.output.find("dec.fc.bias") != std::string::npos);
  CHECK(res.output.find("total parameters:") != std::string::npos);
}

TEST_CASE("f32 mode trains end to end") {
  auto dir = fresh_dir("skelrep_cli_f32");
  REQUIRE(run_cli("prepare --synthetic classes=2 per-class=6 seed=3 m=6 t=16 --out " +
                  dir.string())
              .exit_code == 0);
  auto res = run_cli("train --cache " + (dir / "dataset.cache").string() +
                     " --variant ae --epochs 1 --batch-size 4 --latent-dim 16 --dtype f32" +
                     " --seed 5 --out " + dir.string());
  CHECK(res.exit_code == 0);
}
