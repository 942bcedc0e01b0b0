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

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sphnet/data.hpp"
#include "sphnet/model.hpp"

namespace sphnet {

struct TrainConfig {
  double beta = 0.99;         // energy/force trade-off in [0, 1]
  double lr = 1e-3;
  double decay_factor = 0.5;
  int decay_interval = 1000;  // epochs
  int batch_size = 8;
  int epochs = 1000;
  uint64_t seed = 0;
  int valid_every = 10;
  int n_threads = 2;

  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> m;  // first moments, shapes mirror the parameters
  std::vector<Tensor> v;  // second moments
  int64_t step = 0;
  int64_t epochs_done = 0;

  static OptimizerState init(const ModelParams& params);
};

// (1-beta) (E - E~)^2 + beta/(3n) Σ (F - F~)^2, averaged over the batch
double loss_value(const std::vector<double>& e_pred,
                  const std::vector<double>& e_ref,
                  const std::vector<std::vector<Vec3>>& f_pred,
                  const std::vector<std::vector<Vec3>>& f_ref, double beta);

// standard moments with bias correction; beta1=0.9, beta2=0.999, eps=1e-8
void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               OptimizerState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

double lr_schedule(int epoch, const TrainConfig& cfg);

// least-squares constant shift: c = mean(E_ref - E_pred)
double fit_energy_shift(const std::vector<double>& e_pred,
                        const std::vector<double>& e_ref);

struct Metrics {
  double e_mae = 0;
  std::optional<double> f_mae;  // absent for energy-only datasets
};

// per-structure MAEs averaged over structures (each structure counts once,
// regardless of how many test samples it has)
Metrics eval_metrics(const std::vector<double>& e_pred,
                     const std::vector<double>& e_ref,
                     const std::vector<std::vector<Vec3>>& f_pred,
                     const std::vector<std::vector<Vec3>>& f_ref);

void save_optimizer(const OptimizerState& st, const std::string& path);
OptimizerState load_optimizer(const std::string& path,
                              const ModelParams& ref);

struct TrainResult {
  double initial_train_loss = 0;
  double final_train_loss = 0;
  double best_valid_loss = 0;
  int epochs_done = 0;
};

// Deterministic given cfg.seed. When out_dir is non-empty, writes
// metrics.csv plus best/last checkpoints and the optimizer state there.
// Pass a loaded optimizer state to resume (its epochs_done sets the start).
TrainResult train_model(const Dataset& train, const Dataset& valid,
                        ModelParams& params, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, const std::string& out_dir,
                        OptimizerState* state = nullptr);

}  // namespace sphnet
