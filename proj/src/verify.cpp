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

#include "sphnet/verify.hpp"

#include <cmath>

#include "sphnet/oracles.hpp"

namespace sphnet::verify {

namespace {

Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = v.norm();
    if (n > 1e-6) return v * (1.0 / n);
  }
}

double rel(double a, double b, double floor) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace

MolecularStructure random_structure(Rng& rng, int n_atoms, double box,
                                    double min_dist) {
  MolecularStructure s;
  while (s.n_atoms() < n_atoms) {
    Vec3 cand{rng.uniform(-box, box), rng.uniform(-box, box),
              rng.uniform(-box, box)};
    bool ok = true;
    for (const auto& p : s.positions)
      if ((p - cand).norm() < min_dist) ok = false;
    if (!ok) continue;
    s.positions.push_back(cand);
    const int zs[4] = {1, 6, 7, 8};
    s.atomic_numbers.push_back(zs[rng.index(4)]);
  }
  return s;
}

double sph_norm_error(int samples, uint64_t seed) {
  Rng rng(seed);
  double err = 0;
  for (int l = 0; l <= so3::kMaxDegree; ++l)
    for (int t = 0; t < samples; ++t) {
      auto y = so3::real_sph(l, random_unit(rng));
      double n2 = 0;
      for (double v : y) n2 += v * v;
      err = std::max(err, std::fabs(std::sqrt(n2) - 1.0));
    }
  return err;
}

double sph_equivariance_error(int samples, uint64_t seed) {
  Rng rng(seed);
  so3::DegreeRange L(1, so3::kMaxDegree);
  const int dim = L.dim();
  double err = 0;
  for (int t = 0; t < samples; ++t) {
    Mat3 R = oracles::random_rotation(rng);
    Vec3 n = random_unit(rng);
    so3::IrrepsVector y = so3::sph_all(L, n);
    so3::IrrepsVector yr = so3::sph_all(L, R.apply(n));
    Tensor D = so3::wigner_d_block(L, R);
    for (int i = 0; i < dim; ++i) {
      double s = 0;
      for (int j = 0; j < dim; ++j)
        s += D.v[static_cast<size_t>(i * dim + j)] *
             y.data[static_cast<size_t>(j)];
      err = std::max(err, std::fabs(s - yr.data[static_cast<size_t>(i)]));
    }
  }
  return err;
}

double wigner_homomorphism_error(int trials, uint64_t seed) {
  Rng rng(seed);
  double err = 0;
  for (int l = 1; l <= so3::kMaxDegree; ++l)
    for (int t = 0; t < trials; ++t) {
      Mat3 r1 = oracles::random_rotation(rng);
      Mat3 r2 = oracles::random_rotation(rng);
      Tensor d12 = so3::wigner_d(l, r1 * r2);
      Tensor d1 = so3::wigner_d(l, r1);
      Tensor d2 = so3::wigner_d(l, r2);
      const int d = 2 * l + 1;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double s = 0;
          for (int k = 0; k < d; ++k)
            s += d1.v[static_cast<size_t>(i * d + k)] *
                 d2.v[static_cast<size_t>(k * d + j)];
          err = std::max(err,
                         std::fabs(s - d12.v[static_cast<size_t>(i * d + j)]));
        }
    }
  return err;
}

double wigner_orthogonality_error(int trials, uint64_t seed) {
  Rng rng(seed);
  double err = 0;
  for (int l = 1; l <= so3::kMaxDegree; ++l)
    for (int t = 0; t < trials; ++t) {
      Tensor d = so3::wigner_d(l, oracles::random_rotation(rng));
      const int dd = 2 * l + 1;
      for (int i = 0; i < dd; ++i)
        for (int j = 0; j < dd; ++j) {
          double s = 0;
          for (int k = 0; k < dd; ++k)
            s += d.v[static_cast<size_t>(i * dd + k)] *
                 d.v[static_cast<size_t>(j * dd + k)];
          err = std::max(err, std::fabs(s - (i == j ? 1.0 : 0.0)));
        }
    }
  return err;
}

double wigner_ls_oracle_error(uint64_t seed) {
  Rng rng(seed);
  double err = 0;
  for (int l = 1; l <= so3::kMaxDegree; ++l) {
    Mat3 R = oracles::random_rotation(rng);
    Tensor prod = so3::wigner_d(l, R);
    Tensor ls = oracles::wigner_from_samples(l, R, rng);
    for (size_t k = 0; k < prod.v.size(); ++k)
      err = std::max(err, std::fabs(prod.v[k] - ls.v[k]));
  }
  return err;
}

double cg_equivariance_error(const so3::CGTable& t, uint64_t seed) {
  Rng rng(seed);
  const int d1 = 2 * t.l1 + 1, d2 = 2 * t.l2 + 1, d3 = 2 * t.l3 + 1;
  double err = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Mat3 R = oracles::random_rotation(rng);
    Tensor D1 = so3::wigner_d(t.l1, R);
    Tensor D2 = so3::wigner_d(t.l2, R);
    Tensor D3 = so3::wigner_d(t.l3, R);
    std::vector<double> a(static_cast<size_t>(d1)),
        b(static_cast<size_t>(d2));
    for (double& x : a) x = rng.normal();
    for (double& x : b) x = rng.normal();
    std::vector<double> ra(static_cast<size_t>(d1), 0.0),
        rb(static_cast<size_t>(d2), 0.0);
    for (int i = 0; i < d1; ++i)
      for (int j = 0; j < d1; ++j)
        ra[static_cast<size_t>(i)] +=
            D1.v[static_cast<size_t>(i * d1 + j)] * a[static_cast<size_t>(j)];
    for (int i = 0; i < d2; ++i)
      for (int j = 0; j < d2; ++j)
        rb[static_cast<size_t>(i)] +=
            D2.v[static_cast<size_t>(i * d2 + j)] * b[static_cast<size_t>(j)];
    auto lhs = so3::contract(t, ra, rb);
    auto y = so3::contract(t, a, b);
    for (int i = 0; i < d3; ++i) {
      double s = 0;
      for (int j = 0; j < d3; ++j)
        s += D3.v[static_cast<size_t>(i * d3 + j)] * y[static_cast<size_t>(j)];
      err = std::max(err, std::fabs(s - lhs[static_cast<size_t>(i)]));
    }
  }
  return err;
}

double cg_equivariance_error(uint64_t seed) {
  double err = 0;
  for (int l1 = 0; l1 <= so3::kMaxDegree; ++l1)
    for (int l2 = 0; l2 <= so3::kMaxDegree; ++l2)
      for (int l3 = std::abs(l1 - l2);
           l3 <= std::min(l1 + l2, so3::kMaxDegree); ++l3)
        err = std::max(err, cg_equivariance_error(so3::cg_table(l1, l2, l3),
                                                  seed + l1 * 100 + l2 * 10 +
                                                      l3));
  return err;
}

double cg_ls_oracle_error(uint64_t seed, bool quick) {
  Rng rng(seed);
  double err = 0;
  for (int l1 = 0; l1 <= so3::kMaxDegree; ++l1)
    for (int l2 = 0; l2 <= so3::kMaxDegree; ++l2)
      for (int l3 = std::abs(l1 - l2);
           l3 <= std::min(l1 + l2, so3::kMaxDegree); ++l3) {
        if (quick && (l1 + l2 + l3 > 6)) continue;
        auto oracle = oracles::equivariant_map_from_rotations(l1, l2, l3, rng);
        err = std::max(err, oracles::aligned_max_diff(
                                oracle, so3::cg_table(l1, l2, l3).c));
      }
  return err;
}

EquivStats model_equivariance(const ModelConfig& cfg,
                              const ModelParams& params, int n_structs,
                              int n_motions, uint64_t seed) {
  Rng rng(seed);
  so3::DegreeRange L = cfg.degrees();
  const int dim = L.dim();
  EquivStats st;
  for (int si = 0; si < n_structs; ++si) {
    int n = 3 + static_cast<int>(rng.index(18));
    MolecularStructure s = random_structure(rng, n);
    EvalOptions opt;
    opt.diagnostics = true;
    EvalResult base = evaluate(s, params, cfg, opt);
    for (int mi = 0; mi < n_motions; ++mi) {
      Mat3 R = oracles::random_rotation(rng);
      Vec3 tr{rng.uniform(-8, 8), rng.uniform(-8, 8), rng.uniform(-8, 8)};
      MolecularStructure sr = s;
      for (auto& p : sr.positions) p = R.apply(p) + tr;
      EvalResult rot = evaluate(sr, params, cfg, opt);

      st.e_rel_max = std::max(
          st.e_rel_max, std::fabs(rot.energy - base.energy) /
                            std::max(std::fabs(base.energy), 1e-12));
      for (int a = 0; a < n; ++a) {
        Vec3 rf = R.apply(base.forces[static_cast<size_t>(a)]);
        const Vec3& fr = rot.forces[static_cast<size_t>(a)];
        st.f_abs_max = std::max({st.f_abs_max, std::fabs(rf.x - fr.x),
                                 std::fabs(rf.y - fr.y),
                                 std::fabs(rf.z - fr.z)});
      }
      Tensor D = so3::wigner_d_block(L, R);
      for (size_t layer = 0; layer < base.chi_layers.size(); ++layer) {
        const Tensor& c0 = base.chi_layers[layer];
        const Tensor& c1 = rot.chi_layers[layer];
        for (int a = 0; a < n; ++a)
          for (int i = 0; i < dim; ++i) {
            double expect = 0;
            for (int j = 0; j < dim; ++j)
              expect += D.v[static_cast<size_t>(i * dim + j)] *
                        c0.v[static_cast<size_t>(a * dim + j)];
            st.chi_abs_max = std::max(
                st.chi_abs_max,
                std::fabs(expect - c1.v[static_cast<size_t>(a * dim + i)]));
          }
      }
    }
  }
  return st;
}

double permutation_invariance_error(const ModelConfig& cfg,
                                    const ModelParams& params, int n_structs,
                                    uint64_t seed) {
  Rng rng(seed);
  EvalOptions opt;
  opt.forces = false;
  double err = 0;
  for (int t = 0; t < n_structs; ++t) {
    int n = 3 + static_cast<int>(rng.index(10));
    MolecularStructure s = random_structure(rng, n);
    double e0 = evaluate(s, params, cfg, opt).energy;
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    MolecularStructure sp;
    for (int i = 0; i < n; ++i) {
      sp.atomic_numbers.push_back(
          s.atomic_numbers[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
      sp.positions.push_back(
          s.positions[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    }
    double e1 = evaluate(sp, params, cfg, opt).energy;
    err = std::max(err, rel(e0, e1, 1e-12));
  }
  return err;
}

double force_fd_error(const ModelConfig& cfg, const ModelParams& params,
                      const MolecularStructure& s, double step) {
  EvalResult res = evaluate(s, params, cfg);
  EvalOptions no_f;
  no_f.forces = false;
  double err = 0;
  for (int a = 0; a < s.n_atoms(); ++a)
    for (int c = 0; c < 3; ++c) {
      auto ev = [&](double delta) {
        MolecularStructure sp = s;
        Vec3& p = sp.positions[static_cast<size_t>(a)];
        (c == 0 ? p.x : c == 1 ? p.y : p.z) += delta;
        return evaluate(sp, params, cfg, no_f).energy;
      };
      double fd = -(ev(step) - ev(-step)) / (2 * step);
      const Vec3& fa = res.forces[static_cast<size_t>(a)];
      double an = c == 0 ? fa.x : (c == 1 ? fa.y : fa.z);
      err = std::max(err, rel(an, fd, 1e-2));
    }
  return err;
}

double param_grad_fd_error(const ModelConfig& cfg, const ModelParams& params,
                           const MolecularStructure& s, int n_probes,
                           double step, uint64_t seed) {
  Rng rng(seed);
  Tape tape;
  LossGraph lg = build_loss_graph(tape, s, params, cfg, 1.0);
  std::vector<Var> grads = grad(lg.loss, lg.param_leaves);
  double err = 0;
  for (int probe = 0; probe < n_probes; ++probe) {
    size_t pk = rng.index(params.entries.size());
    if (params.entries[pk].second.numel() == 0) continue;
    size_t pi = rng.index(params.entries[pk].second.v.size());
    auto ev = [&](double delta) {
      ModelParams pp = params;
      pp.entries[pk].second.v[pi] += delta;
      Tape t2;
      return build_loss_graph(t2, s, pp, cfg, 1.0).loss.item();
    };
    double fd = (ev(step) - ev(-step)) / (2 * step);
    double an = grads[pk].val().v[pi];
    err = std::max(err, rel(an, fd, 1e-4));
  }
  return err;
}

std::vector<CheckResult> run_all(const ModelConfig& cfg,
                                 const ModelParams* params, uint64_t seed,
                                 bool quick) {
  std::vector<CheckResult> out;
  const int samples = quick ? 50 : 200;
  out.push_back({"sph-norm", sph_norm_error(samples, seed + 1), 1e-10});
  out.push_back(
      {"sph-equivariance", sph_equivariance_error(samples, seed + 2), 1e-9});
  out.push_back({"wigner-homomorphism",
                 wigner_homomorphism_error(quick ? 2 : 5, seed + 3), 1e-10});
  out.push_back({"wigner-orthogonality",
                 wigner_orthogonality_error(quick ? 2 : 5, seed + 4), 1e-10});
  out.push_back({"wigner-ls-oracle", wigner_ls_oracle_error(seed + 5), 1e-9});
  out.push_back({"cg-equivariance", cg_equivariance_error(seed + 6), 1e-9});
  out.push_back({"cg-ls-oracle", cg_ls_oracle_error(seed + 7, quick), 1e-8});

  ModelParams fresh;
  const ModelParams* p = params;
  if (p == nullptr) {
    fresh = init_params(cfg, seed + 8);
    p = &fresh;
  }
  EquivStats st = model_equivariance(cfg, *p, quick ? 3 : 10, quick ? 2 : 5,
                                     seed + 9);
  out.push_back({"energy-invariance", st.e_rel_max, 1e-6});
  out.push_back({"force-equivariance", st.f_abs_max, 1e-6});
  out.push_back({"chi-equivariance", st.chi_abs_max, 1e-8});
  out.push_back({"permutation-invariance",
                 permutation_invariance_error(cfg, *p, quick ? 3 : 10,
                                              seed + 10),
                 1e-9});

  Rng rng(seed + 11);
  MolecularStructure s = random_structure(rng, 5, 2.0, 0.9);
  out.push_back({"force-gradcheck", force_fd_error(cfg, *p, s, 1e-4), 1e-4});
  s.forces.emplace(static_cast<size_t>(s.n_atoms()), Vec3{0.05, -0.1, 0.2});
  out.push_back({"param-gradcheck",
                 param_grad_fd_error(cfg, *p, s, quick ? 4 : 10, 1e-5,
                                     seed + 12),
                 1e-3});
  return out;
}

}  // namespace sphnet::verify
