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

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "sphnet/data.hpp"
#include "sphnet/errors.hpp"
#include "sphnet/model.hpp"
#include "sphnet/training.hpp"
#include "sphnet/verify.hpp"

namespace fs = std::filesystem;
using namespace sphnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// One flat key=value configuration document; flags override file keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_path, valid_path, test_path, out_dir;

  // fixed key order for the echoed config
  static const std::vector<std::string>& keys();
  std::string get(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
};

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "feature_dim", "n_layers", "l_max", "r_cut", "n_radial_basis",
      "n_heads", "kappa", "p_poly", "use_nonlocal", "use_spherical_filter",
      "max_z", "beta", "lr", "lr_decay_factor", "lr_decay_interval",
      "batch_size", "epochs", "seed", "valid_every", "n_threads",
      "train_path", "valid_path", "test_path", "out_dir"};
  return k;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" +
                    v + "'");
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (key == "feature_dim") model.feature_dim = parse_int(key, v);
  else if (key == "n_layers") model.n_layers = parse_int(key, v);
  else if (key == "l_max") model.l_max = parse_int(key, v);
  else if (key == "r_cut") model.r_cut = parse_double(key, v);
  else if (key == "n_radial_basis") model.n_radial_basis = parse_int(key, v);
  else if (key == "n_heads") model.n_heads = parse_int(key, v);
  else if (key == "kappa") model.kappa = parse_double(key, v);
  else if (key == "p_poly") model.p_poly = parse_int(key, v);
  else if (key == "use_nonlocal") model.use_nonlocal = parse_bool(key, v);
  else if (key == "use_spherical_filter")
    model.use_spherical_filter = parse_bool(key, v);
  else if (key == "max_z") model.max_z = parse_int(key, v);
  else if (key == "beta") train.beta = parse_double(key, v);
  else if (key == "lr") train.lr = parse_double(key, v);
  else if (key == "lr_decay_factor") train.decay_factor = parse_double(key, v);
  else if (key == "lr_decay_interval")
    train.decay_interval = parse_int(key, v);
  else if (key == "batch_size") train.batch_size = parse_int(key, v);
  else if (key == "epochs") train.epochs = parse_int(key, v);
  else if (key == "seed")
    train.seed = static_cast<uint64_t>(std::stoull(v));
  else if (key == "valid_every") train.valid_every = parse_int(key, v);
  else if (key == "n_threads") train.n_threads = parse_int(key, v);
  else if (key == "train_path") train_path = v;
  else if (key == "valid_path") valid_path = v;
  else if (key == "test_path") test_path = v;
  else if (key == "out_dir") out_dir = v;
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  if (key == "feature_dim") return std::to_string(model.feature_dim);
  if (key == "n_layers") return std::to_string(model.n_layers);
  if (key == "l_max") return std::to_string(model.l_max);
  if (key == "r_cut") return num(model.r_cut);
  if (key == "n_radial_basis") return std::to_string(model.n_radial_basis);
  if (key == "n_heads") return std::to_string(model.n_heads);
  if (key == "kappa") return num(model.kappa);
  if (key == "p_poly") return std::to_string(model.p_poly);
  if (key == "use_nonlocal") return model.use_nonlocal ? "true" : "false";
  if (key == "use_spherical_filter")
    return model.use_spherical_filter ? "true" : "false";
  if (key == "max_z") return std::to_string(model.max_z);
  if (key == "beta") return num(train.beta);
  if (key == "lr") return num(train.lr);
  if (key == "lr_decay_factor") return num(train.decay_factor);
  if (key == "lr_decay_interval") return std::to_string(train.decay_interval);
  if (key == "batch_size") return std::to_string(train.batch_size);
  if (key == "epochs") return std::to_string(train.epochs);
  if (key == "seed") return std::to_string(train.seed);
  if (key == "valid_every") return std::to_string(train.valid_every);
  if (key == "n_threads") return std::to_string(train.n_threads);
  if (key == "train_path") return train_path;
  if (key == "valid_path") return valid_path;
  if (key == "test_path") return test_path;
  if (key == "out_dir") return out_dir;
  return "";
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  RunConfig rc;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      size_t eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw ConfigError(path + ":" + std::to_string(lineno) +
                            ": expected 'key = value'");
        continue;
      }
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string()
                                      : s.substr(a, b - a + 1);
      };
      rc.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  for (const std::string& ov : overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + ov + "'");
    rc.set(ov.substr(0, eq), ov.substr(eq + 1));
  }
  return rc;
}

void echo_config(const RunConfig& rc, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir + "/config.echo");
  for (const std::string& key : RunConfig::keys())
    out << key << " = " << rc.get(key) << "\n";
}

uint64_t config_hash(const RunConfig& rc) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const std::string& key : RunConfig::keys())
    for (char c : key + "=" + rc.get(key) + ";") {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
  return h;
}

// --- subcommands ----------------------------------------------------------------

int cmd_gen_data(const RotorChainSpec& spec, int samples, int n_train,
                 int n_valid, const std::string& out) {
  Dataset ds = gen_rotor_dataset(spec, samples);
  auto [train, valid, test] = make_splits(ds, n_train, n_valid, spec.seed);
  fs::create_directories(out);
  write_extxyz(train, out + "/train.xyz");
  write_extxyz(valid, out + "/valid.xyz");
  write_extxyz(test, out + "/test.xyz");
  std::cout << "wrote " << train.size() << " train / " << valid.size()
            << " valid / " << test.size() << " test structures ("
            << ds.structures[0].n_atoms() << " atoms each) to " << out
            << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc, bool resume) {
  if (rc.train_path.empty())
    throw ConfigError("train: config key 'train_path' is required");
  if (rc.out_dir.empty())
    throw ConfigError("train: config key 'out_dir' is required");
  rc.model.validate();
  rc.train.validate();
  Dataset train = read_extxyz(rc.train_path);
  Dataset valid;
  if (!rc.valid_path.empty()) valid = read_extxyz(rc.valid_path);
  echo_config(rc, rc.out_dir);

  ModelParams params;
  OptimizerState st;
  if (resume) {
    auto [cfg_loaded, params_loaded] = load_checkpoint(rc.out_dir + "/last");
    params = std::move(params_loaded);
    st = load_optimizer(rc.out_dir + "/last.optim", params);
    std::cout << "resuming from epoch " << st.epochs_done << " (step "
              << st.step << ")\n";
  } else {
    params = init_params(rc.model, rc.train.seed);
    st = OptimizerState::init(params);
  }
  TrainResult res =
      train_model(train, valid, params, rc.model, rc.train, rc.out_dir, &st);
  std::cout << "trained " << res.epochs_done << " epochs; train loss "
            << res.initial_train_loss << " -> " << res.final_train_loss
            << "; parameters " << params.count() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_path,
             const std::string& shift_path) {
  auto [cfg, params] = load_checkpoint(checkpoint);
  Dataset ds = read_extxyz(data_path);
  EvalOptions opt;
  opt.forces = ds.has_forces;
  std::vector<double> ep, er;
  std::vector<std::vector<Vec3>> fp, fr;
  for (const auto& s : ds.structures) {
    EvalResult r = evaluate(s, params, cfg, opt);
    ep.push_back(r.energy);
    er.push_back(*s.energy);
    if (ds.has_forces) {
      fp.push_back(r.forces);
      fr.push_back(*s.forces);
    }
  }
  double shift = 0;
  if (!shift_path.empty()) {
    Dataset sds = read_extxyz(shift_path);
    std::vector<double> sp, sr;
    EvalOptions eopt;
    eopt.forces = false;
    for (const auto& s : sds.structures) {
      sp.push_back(evaluate(s, params, cfg, eopt).energy);
      sr.push_back(*s.energy);
    }
    shift = fit_energy_shift(sp, sr);
  } else {
    shift = fit_energy_shift(ep, er);
  }
  std::vector<double> ep_shifted = ep;
  for (double& e : ep_shifted) e += shift;
  Metrics met = eval_metrics(ep_shifted, er, fp, fr);

  RunConfig rc;
  rc.model = cfg;
  std::cout << "structures:      " << ds.size() << "\n";
  std::cout << "energy shift c:  " << shift
            << (shift_path.empty() ? "  (fitted on this set)" : "")
            << "\n";
  std::cout << "energy MAE:      " << met.e_mae << " (" << ds.energy_unit
            << ", shifted)\n";
  if (met.f_mae)
    std::cout << "force MAE:       " << *met.f_mae << " (" << ds.energy_unit
              << "/" << ds.length_unit << ")\n";
  else
    std::cout << "force MAE:       omitted (energy-only dataset)\n";
  std::cout << "parameters:      " << params.count() << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(rc)));
  std::cout << "config hash:     " << buf << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& checkpoint, bool quick, uint64_t seed) {
  ModelConfig cfg;
  ModelParams params;
  const ModelParams* p = nullptr;
  if (!checkpoint.empty()) {
    auto [c, pp] = load_checkpoint(checkpoint);
    cfg = c;
    params = std::move(pp);
    p = &params;
  } else {
    // structural checks hold for any parameters; a small fresh model is enough
    cfg.feature_dim = 24;
    cfg.n_layers = 2;
    cfg.l_max = 2;
    cfg.r_cut = 3.0;
    cfg.n_radial_basis = 8;
    cfg.use_nonlocal = true;
  }
  auto checks = verify::run_all(cfg, p, seed, quick);
  bool ok = true;
  for (const auto& c : checks) {
    std::printf("check %-24s max_err=%10.3e  tol=%8.1e  %s\n",
                c.name.c_str(), c.max_err, c.tol,
                c.pass() ? "PASS" : "FAIL");
    ok = ok && c.pass();
  }
  if (!ok) {
    std::cout << "verification FAILED\n";
    return kExitNumeric;
  }
  std::cout << "all checks passed\n";
  return kExitOk;
}

int cmd_dump(const std::string& checkpoint, const std::string& data_path,
             const std::string& what, const std::string& out) {
  auto [cfg, params] = load_checkpoint(checkpoint);
  Dataset ds = read_extxyz(data_path);
  fs::create_directories(out);
  EvalOptions opt;
  opt.forces = false;
  opt.diagnostics = true;
  if (what == "attention") {
    std::ofstream csv(out + "/attention.csv");
    csv << "structure,layer,branch,head,i,j,nonlocal,alpha,cutoff_weight\n";
    char buf[80];
    for (size_t si = 0; si < ds.size(); ++si) {
      EvalResult r = evaluate(ds.structures[si], params, cfg, opt);
      for (const auto& a : r.attention) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", a.alpha,
                      a.cutoff_weight);
        csv << si << "," << a.layer << "," << a.branch << "," << a.head << ","
            << a.i << "," << a.j << "," << (a.nonlocal ? 1 : 0) << buf
            << "\n";
      }
    }
  } else if (what == "sphc") {
    std::ofstream csv(out + "/sphc.csv");
    const int dim = cfg.degrees().dim();
    csv << "structure,layer,atom,pc1,pc2";
    for (int k = 0; k < dim; ++k) csv << ",chi" << k;
    csv << "\n";
    char buf[40];
    for (size_t si = 0; si < ds.size(); ++si) {
      EvalResult r = evaluate(ds.structures[si], params, cfg, opt);
      // one row per atom per layer (layer index 1..n_layers, after update)
      for (size_t layer = 1; layer < r.chi_layers.size(); ++layer) {
        const Tensor& chi = r.chi_layers[layer];
        Pca2 proj = pca2(chi);
        for (int a = 0; a < ds.structures[si].n_atoms(); ++a) {
          csv << si << "," << layer << "," << a;
          std::snprintf(buf, sizeof(buf), ",%.17g",
                        proj.scores.v[static_cast<size_t>(2 * a)]);
          csv << buf;
          std::snprintf(buf, sizeof(buf), ",%.17g",
                        proj.scores.v[static_cast<size_t>(2 * a + 1)]);
          csv << buf;
          for (int k = 0; k < dim; ++k) {
            std::snprintf(buf, sizeof(buf), ",%.17g",
                          chi.v[static_cast<size_t>(a * dim + k)]);
            csv << buf;
          }
          csv << "\n";
        }
      }
    }
  } else {
    throw ConfigError("dump: --what must be 'attention' or 'sphc'");
  }
  std::cout << "wrote " << out << "/" << what << ".csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SO(3)-equivariant attention force field"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate rotor-chain datasets");
  RotorChainSpec spec;
  int samples = 101, n_train = 80, n_valid = 10;
  std::string gen_out;
  gen->add_option("--n-carbons", spec.n_carbons, "even chain length (>= 4)");
  gen->add_option("--samples", samples, "total structures");
  gen->add_option("--n-train", n_train, "training split size");
  gen->add_option("--n-valid", n_valid, "validation split size");
  gen->add_option("--seed", spec.seed, "rng seed");
  gen->add_option("--cc-bond", spec.cc_bond, "C-C bond length (A)");
  gen->add_option("--ch-bond", spec.ch_bond, "C-H bond length (A)");
  gen->add_option("--hch-angle", spec.hch_angle_deg, "H-C-H angle (deg)");
  gen->add_option("--amplitude", spec.amplitude, "energy amplitude");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config file");
  std::string config_path;
  std::vector<std::string> overrides;
  bool resume = false;
  tr->add_option("-c,--config", config_path, "key = value config file");
  tr->add_option("--set", overrides, "override: key=value (repeatable)");
  tr->add_flag("--resume", resume, "continue from out_dir/last checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "report MAEs for a checkpoint");
  std::string ckpt, data_path, shift_path;
  ev->add_option("--checkpoint", ckpt, "checkpoint prefix")->required();
  ev->add_option("--data", data_path, "extended-xyz file")->required();
  ev->add_option("--shift-data", shift_path,
                 "fit the energy shift on this set instead");

  // verify
  auto* vf = app.add_subcommand("verify", "run the numeric check suite");
  std::string vf_ckpt;
  bool quick = false;
  uint64_t vf_seed = 0;
  vf->add_option("--checkpoint", vf_ckpt, "checkpoint prefix (optional)");
  vf->add_flag("--quick", quick, "smaller sample counts");
  vf->add_option("--seed", vf_seed, "rng seed");

  // dump
  auto* dp = app.add_subcommand("dump", "write attention/sphc CSV files");
  std::string dp_ckpt, dp_data, dp_what, dp_out;
  dp->add_option("--checkpoint", dp_ckpt, "checkpoint prefix")->required();
  dp->add_option("--data", dp_data, "extended-xyz file")->required();
  dp->add_option("--what", dp_what, "attention | sphc")->required();
  dp->add_option("--out", dp_out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return cmd_gen_data(spec, samples, n_train, n_valid, gen_out);
    if (tr->parsed())
      return cmd_train(load_run_config(config_path, overrides), resume);
    if (ev->parsed()) return cmd_eval(ckpt, data_path, shift_path);
    if (vf->parsed()) return cmd_verify(vf_ckpt, quick, vf_seed);
    if (dp->parsed()) return cmd_dump(dp_ckpt, dp_data, dp_what, dp_out);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
