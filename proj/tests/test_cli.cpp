// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sphnet/data.hpp"
#include "sphnet/model.hpp"
#include "sphnet/training.hpp"

namespace fs = std::filesystem;
using namespace sphnet;

namespace {

const std::string kBin = SPHNET_BIN;
const std::string kDir = "/tmp/sphnet_cli";

int run(const std::string& args, std::string* output = nullptr) {
  std::string cmd = kBin + " " + args + " > " + kDir + "/out.txt 2>&1";
  int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(kDir + "/out.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

struct Setup {
  Setup() {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
  }
};
const Setup setup_once;

void write_config(const std::string& path, const std::string& extra) {
  std::ofstream f(path);
  f << "# tiny run\n"
       "feature_dim = 8\n"
       "n_layers = 1\n"
       "l_max = 1\n"
       "r_cut = 2.5\n"
       "n_radial_basis = 4\n"
       "n_heads = 2\n"
       "use_nonlocal = true\n"
       "beta = 1\n"
       "lr = 0.002\n"
       "batch_size = 4\n"
       "seed = 3\n"
       "n_threads = 1\n"
    << extra;
}

}  // namespace

TEST_CASE("gen-data writes seeded, reproducible splits") {
  std::string out;
  int rc = run("gen-data --n-carbons 10 --samples 12 --n-train 8 --n-valid 2 "
               "--seed 3 --out " + kDir + "/data",
               &out);
  CHECK(rc == 0);
  Dataset train = read_extxyz(kDir + "/data/train.xyz");
  Dataset valid = read_extxyz(kDir + "/data/valid.xyz");
  Dataset test = read_extxyz(kDir + "/data/test.xyz");
  CHECK(train.size() == 8);
  CHECK(valid.size() == 2);
  CHECK(test.size() == 2);
  for (const auto& s : train.structures) CHECK(s.n_atoms() == 14);

  // byte-identical rerun
  std::string first = slurp(kDir + "/data/train.xyz");
  rc = run("gen-data --n-carbons 10 --samples 12 --n-train 8 --n-valid 2 "
           "--seed 3 --out " + kDir + "/data2");
  CHECK(rc == 0);
  CHECK(first == slurp(kDir + "/data2/train.xyz"));

  // odd carbon count is a config error
  rc = run("gen-data --n-carbons 7 --samples 4 --n-train 2 --n-valid 1 "
           "--out " + kDir + "/bad",
           &out);
  CHECK(rc == 2);
}

TEST_CASE("train, resume, eval, dump") {
  // small dataset
  REQUIRE(run("gen-data --n-carbons 4 --samples 14 --n-train 10 --n-valid 2 "
              "--seed 5 --out " + kDir + "/d4") == 0);

  write_config(kDir + "/train.cfg",
               "epochs = 2\nvalid_every = 1\n"
               "train_path = " + kDir + "/d4/train.xyz\n"
               "valid_path = " + kDir + "/d4/valid.xyz\n"
               "out_dir = " + kDir + "/run\n");
  std::string out;
  int rc = run("train -c " + kDir + "/train.cfg", &out);
  CHECK(rc == 0);
  CHECK(fs::exists(kDir + "/run/last.manifest"));
  CHECK(fs::exists(kDir + "/run/best.bin"));
  CHECK(fs::exists(kDir + "/run/config.echo"));
  CHECK(fs::exists(kDir + "/run/metrics.csv"));

  // resume continues the counters
  auto [cfg0, params0] = load_checkpoint(kDir + "/run/last");
  OptimizerState st0 = load_optimizer(kDir + "/run/last.optim", params0);
  CHECK(st0.epochs_done == 2);
  int64_t steps_before = st0.step;

  rc = run("train -c " + kDir + "/train.cfg --set epochs=4 --resume", &out);
  CHECK(rc == 0);
  auto [cfg1, params1] = load_checkpoint(kDir + "/run/last");
  OptimizerState st1 = load_optimizer(kDir + "/run/last.optim", params1);
  CHECK(st1.epochs_done == 4);
  CHECK(st1.step > steps_before);

  // eval on the training set
  rc = run("eval --checkpoint " + kDir + "/run/last --data " + kDir +
               "/d4/train.xyz",
           &out);
  CHECK(rc == 0);
  CHECK(out.find("force MAE") != std::string::npos);
  CHECK(out.find("parameters") != std::string::npos);
  CHECK(out.find("config hash") != std::string::npos);

  // energy-only dataset: force MAE omitted
  {
    Dataset d = read_extxyz(kDir + "/d4/valid.xyz");
    for (auto& s : d.structures) s.forces.reset();
    d.has_forces = false;
    write_extxyz(d, kDir + "/d4/energy_only.xyz");
  }
  rc = run("eval --checkpoint " + kDir + "/run/last --data " + kDir +
               "/d4/energy_only.xyz",
           &out);
  CHECK(rc == 0);
  CHECK(out.find("omitted") != std::string::npos);

  // dumps
  rc = run("dump --checkpoint " + kDir + "/run/last --data " + kDir +
               "/d4/valid.xyz --what sphc --out " + kDir + "/dump",
           &out);
  CHECK(rc == 0);
  std::string sphc = slurp(kDir + "/dump/sphc.csv");
  // header + one row per structure per layer per atom (8 atoms, 1 layer)
  CHECK(count_lines(sphc) == 1 + 2 * 1 * 8);

  rc = run("dump --checkpoint " + kDir + "/run/last --data " + kDir +
               "/d4/valid.xyz --what attention --out " + kDir + "/dump",
           &out);
  CHECK(rc == 0);
  std::string attn = slurp(kDir + "/dump/attention.csv");
  CHECK(attn.find("nonlocal") != std::string::npos);

  // deterministic rerun
  rc = run("dump --checkpoint " + kDir + "/run/last --data " + kDir +
               "/d4/valid.xyz --what sphc --out " + kDir + "/dump2",
           &out);
  CHECK(rc == 0);
  CHECK(sphc == slurp(kDir + "/dump2/sphc.csv"));
}

TEST_CASE("config errors exit with code 2 before any compute") {
  write_config(kDir + "/noguard.cfg", "epochs = 1\nout_dir = " + kDir +
                                          "/never\n");  // no train_path
  std::string out;
  CHECK(run("train -c " + kDir + "/noguard.cfg", &out) == 2);
  CHECK_FALSE(fs::exists(kDir + "/never"));

  // unknown key rejected
  {
    std::ofstream f(kDir + "/unknown.cfg");
    f << "no_such_key = 1\n";
  }
  CHECK(run("train -c " + kDir + "/unknown.cfg", &out) == 2);
  CHECK(out.find("unknown key") != std::string::npos);

  // missing data file is a data error (code 3)
  write_config(kDir + "/missing.cfg",
               "epochs = 1\ntrain_path = /nonexistent.xyz\nout_dir = " +
                   kDir + "/never2\n");
  CHECK(run("train -c " + kDir + "/missing.cfg", &out) == 3);
}

TEST_CASE("smoke training halves the loss and is reproducible") {
  REQUIRE(run("gen-data --n-carbons 4 --samples 16 --n-train 16 --n-valid 0 "
              "--seed 9 --out " + kDir + "/smoke") == 0);
  write_config(kDir + "/smoke.cfg",
               "epochs = 8\nvalid_every = 2\n"
               "train_path = " + kDir + "/smoke/train.xyz\n"
               "out_dir = " + kDir + "/smoke_run\n");
  std::string out;
  CHECK(run("train -c " + kDir + "/smoke.cfg", &out) == 0);
  std::string csv1 = slurp(kDir + "/smoke_run/metrics.csv");

  fs::remove_all(kDir + "/smoke_run");
  CHECK(run("train -c " + kDir + "/smoke.cfg", &out) == 0);
  CHECK(csv1 == slurp(kDir + "/smoke_run/metrics.csv"));  // bit-identical
}

TEST_CASE("verify runs the check suite and exits cleanly") {
  std::string out;
  int rc = run("verify --quick --seed 1", &out);
  CHECK(rc == 0);
  CHECK(out.find("all checks passed") != std::string::npos);
  CHECK(out.find("max_err") != std::string::npos);  // per-check error report
}
