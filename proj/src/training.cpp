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

#include "sphnet/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "sphnet/errors.hpp"
#include "sphnet/rng.hpp"

namespace sphnet {

void TrainConfig::validate() const {
  if (beta < 0 || beta > 1) throw ConfigError("train: beta outside [0, 1]");
  if (lr <= 0) throw ConfigError("train: lr <= 0");
  if (decay_factor <= 0 || decay_factor > 1)
    throw ConfigError("train: decay_factor outside (0, 1]");
  if (decay_interval < 1) throw ConfigError("train: decay_interval < 1");
  if (batch_size < 1) throw ConfigError("train: batch_size < 1");
  if (epochs < 0) throw ConfigError("train: epochs < 0");
  if (valid_every < 1) throw ConfigError("train: valid_every < 1");
  if (n_threads < 1) throw ConfigError("train: n_threads < 1");
}

OptimizerState OptimizerState::init(const ModelParams& params) {
  OptimizerState st;
  for (const auto& [name, t] : params.entries) {
    st.m.push_back(Tensor::zeros(t.shape));
    st.v.push_back(Tensor::zeros(t.shape));
  }
  return st;
}

double loss_value(const std::vector<double>& e_pred,
                  const std::vector<double>& e_ref,
                  const std::vector<std::vector<Vec3>>& f_pred,
                  const std::vector<std::vector<Vec3>>& f_ref, double beta) {
  const size_t b = e_pred.size();
  if (b == 0) throw std::invalid_argument("loss: empty batch");
  if (e_ref.size() != b || (beta > 0 && (f_pred.size() != b ||
                                         f_ref.size() != b)))
    throw std::invalid_argument("loss: batch size mismatch");
  double total = 0;
  for (size_t s = 0; s < b; ++s) {
    double l = 0;
    if (beta < 1) {
      double de = e_pred[s] - e_ref[s];
      l += (1.0 - beta) * de * de;
    }
    if (beta > 0) {
      const auto& fp = f_pred[s];
      const auto& fr = f_ref[s];
      if (fp.size() != fr.size())
        throw std::invalid_argument("loss: force shape mismatch");
      double acc = 0;
      for (size_t a = 0; a < fp.size(); ++a) {
        Vec3 d = fp[a] - fr[a];
        acc += d.x * d.x + d.y * d.y + d.z * d.z;
      }
      l += beta / (3.0 * static_cast<double>(fp.size())) * acc;
    }
    total += l;
  }
  return total / static_cast<double>(b);
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double lr, double beta1, double beta2,
               double eps) {
  if (grads.size() != params.entries.size() ||
      state.m.size() != params.entries.size())
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.entries.size(); ++k) {
    Tensor& p = params.entries[k].second;
    const Tensor& g = grads[k];
    if (g.shape != p.shape)
      throw std::invalid_argument("adam: gradient shape mismatch for '" +
                                  params.entries[k].first + "'");
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (size_t i = 0; i < p.v.size(); ++i) {
      m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * g.v[i];
      v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      p.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  int k = epoch / cfg.decay_interval;
  return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(k));
}

double fit_energy_shift(const std::vector<double>& e_pred,
                        const std::vector<double>& e_ref) {
  if (e_pred.empty() || e_pred.size() != e_ref.size())
    throw std::invalid_argument("fit_energy_shift: empty or mismatched lists");
  double c = 0;
  for (size_t i = 0; i < e_pred.size(); ++i) c += e_ref[i] - e_pred[i];
  return c / static_cast<double>(e_pred.size());
}

Metrics eval_metrics(const std::vector<double>& e_pred,
                     const std::vector<double>& e_ref,
                     const std::vector<std::vector<Vec3>>& f_pred,
                     const std::vector<std::vector<Vec3>>& f_ref) {
  const size_t n = e_pred.size();
  if (n == 0 || e_ref.size() != n)
    throw std::invalid_argument("metrics: empty or mismatched lists");
  Metrics out;
  for (size_t s = 0; s < n; ++s)
    out.e_mae += std::fabs(e_pred[s] - e_ref[s]) / static_cast<double>(n);
  if (!f_pred.empty()) {
    if (f_pred.size() != n || f_ref.size() != n)
      throw std::invalid_argument("metrics: force list size mismatch");
    double acc = 0;
    for (size_t s = 0; s < n; ++s) {
      double sm = 0;
      for (size_t a = 0; a < f_pred[s].size(); ++a) {
        Vec3 d = f_pred[s][a] - f_ref[s][a];
        sm += std::fabs(d.x) + std::fabs(d.y) + std::fabs(d.z);
      }
      acc += sm / (3.0 * static_cast<double>(f_pred[s].size()));
    }
    out.f_mae = acc / static_cast<double>(n);
  }
  return out;
}

void save_optimizer(const OptimizerState& st, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  const char magic[16] = "sphnet-optim-1";
  out.write(magic, sizeof(magic));
  out.write(reinterpret_cast<const char*>(&st.step), sizeof(st.step));
  out.write(reinterpret_cast<const char*>(&st.epochs_done),
            sizeof(st.epochs_done));
  for (const auto& list : {&st.m, &st.v})
    for (const Tensor& t : *list)
      out.write(reinterpret_cast<const char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
}

OptimizerState load_optimizer(const std::string& path,
                              const ModelParams& ref) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  char magic[16];
  in.read(magic, sizeof(magic));
  if (std::string(magic) != "sphnet-optim-1")
    throw DataError(path + ": not an optimizer-state file");
  OptimizerState st = OptimizerState::init(ref);
  in.read(reinterpret_cast<char*>(&st.step), sizeof(st.step));
  in.read(reinterpret_cast<char*>(&st.epochs_done), sizeof(st.epochs_done));
  for (auto* list : {&st.m, &st.v})
    for (Tensor& t : *list) {
      in.read(reinterpret_cast<char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(double)));
      if (!in) throw DataError(path + ": truncated optimizer state");
    }
  return st;
}

namespace {

struct MemberResult {
  double loss = 0;
  std::vector<Tensor> grads;
};

MemberResult member_loss_grads(const MolecularStructure& s,
                               const ModelParams& params,
                               const ModelConfig& mcfg, double beta) {
  Tape tape;
  LossGraph lg = build_loss_graph(tape, s, params, mcfg, beta);
  std::vector<Var> gs = grad(lg.loss, lg.param_leaves);
  MemberResult out;
  out.loss = lg.loss.item();
  out.grads.reserve(gs.size());
  for (const Var& g : gs) out.grads.push_back(g.val());
  return out;
}

double validation_loss(const Dataset& valid, const ModelParams& params,
                       const ModelConfig& mcfg, double beta, Metrics* metrics) {
  std::vector<double> ep, er;
  std::vector<std::vector<Vec3>> fp, fr;
  EvalOptions opt;
  opt.forces = beta > 0 || valid.has_forces;
  for (const auto& s : valid.structures) {
    EvalResult res = evaluate(s, params, mcfg, opt);
    ep.push_back(res.energy);
    er.push_back(*s.energy);
    if (opt.forces && s.forces) {
      fp.push_back(res.forces);
      fr.push_back(*s.forces);
    }
  }
  if (metrics) *metrics = eval_metrics(ep, er, fp, fr);
  return loss_value(ep, er, fp, fr, beta);
}

}  // namespace

TrainResult train_model(const Dataset& train, const Dataset& valid,
                        ModelParams& params, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, const std::string& out_dir,
                        OptimizerState* state) {
  mcfg.validate();
  tcfg.validate();
  if (train.size() == 0) throw ConfigError("train: empty training set");
  if (tcfg.beta > 0 && !train.has_forces)
    throw ConfigError("train: beta > 0 but the dataset is energy-only");

  OptimizerState local = OptimizerState::init(params);
  OptimizerState& st = state ? *state : local;
  const int start_epoch = static_cast<int>(st.epochs_done);

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    bool fresh = start_epoch == 0;
    csv.open(out_dir + "/metrics.csv", fresh ? std::ios::out : std::ios::app);
    if (fresh) csv << "epoch,lr,train_loss,val_e_mae,val_f_mae\n";
  }

  const int n_train = static_cast<int>(train.size());
  const int threads =
      std::max(1, std::min<int>(tcfg.n_threads, tcfg.batch_size));

  TrainResult result;
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  std::vector<int> order(static_cast<size_t>(n_train));
  char buf[64];

  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tcfg);
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
    Rng erng(tcfg.seed * 0x9e3779b97f4a7c15ULL + 0xda942042e4dd58b5ULL *
             (static_cast<uint64_t>(epoch) + 1));
    erng.shuffle(order);

    double epoch_loss = 0;
    int n_batches = 0;
    for (int b0 = 0; b0 < n_train; b0 += tcfg.batch_size) {
      const int bsz = std::min(tcfg.batch_size, n_train - b0);
      std::vector<MemberResult> slots(static_cast<size_t>(bsz));
      auto work = [&](int tid) {
        for (int k = tid; k < bsz; k += threads)
          slots[static_cast<size_t>(k)] = member_loss_grads(
              train.structures[static_cast<size_t>(
                  order[static_cast<size_t>(b0 + k)])],
              params, mcfg, tcfg.beta);
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& t : pool) t.join();
      }
      // order-fixed reduction keeps training bit-deterministic
      std::vector<Tensor> gsum;
      double batch_loss = 0;
      for (int k = 0; k < bsz; ++k) {
        batch_loss += slots[static_cast<size_t>(k)].loss;
        if (k == 0) {
          gsum = std::move(slots[0].grads);
        } else {
          for (size_t p = 0; p < gsum.size(); ++p)
            for (size_t i = 0; i < gsum[p].v.size(); ++i)
              gsum[p].v[i] += slots[static_cast<size_t>(k)].grads[p].v[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(bsz);
      for (auto& g : gsum)
        for (double& x : g.v) x *= inv;
      adam_step(params, gsum, st, lr);
      epoch_loss += batch_loss * inv;
      ++n_batches;
    }
    epoch_loss /= static_cast<double>(n_batches);
    if (epoch == start_epoch) result.initial_train_loss = epoch_loss;
    result.final_train_loss = epoch_loss;
    st.epochs_done = epoch + 1;

    const bool last = epoch + 1 == tcfg.epochs;
    if ((epoch + 1) % tcfg.valid_every == 0 || last) {
      Metrics met;
      double vloss = valid.size() > 0
                         ? validation_loss(valid, params, mcfg, tcfg.beta, &met)
                         : epoch_loss;
      if (csv.is_open()) {
        csv << epoch;
        std::snprintf(buf, sizeof(buf), ",%.17g", lr);
        csv << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", epoch_loss);
        csv << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", valid.size() ? met.e_mae
                                                               : 0.0);
        csv << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g",
                      met.f_mae.value_or(0.0));
        csv << buf << "\n";
        csv.flush();
      }
      if (vloss < result.best_valid_loss) {
        result.best_valid_loss = vloss;
        if (!out_dir.empty()) save_checkpoint(mcfg, params, out_dir + "/best");
      }
    }
  }
  result.epochs_done = static_cast<int>(st.epochs_done);
  if (!out_dir.empty()) {
    save_checkpoint(mcfg, params, out_dir + "/last");
    save_optimizer(st, out_dir + "/last.optim");
  }
  return result;
}

}  // namespace sphnet
