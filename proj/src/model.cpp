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

#include "sphnet/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sphnet/errors.hpp"
#include "sphnet/rng.hpp"

namespace sphnet {

void ModelConfig::validate() const {
  so3::DegreeRange L = degrees();
  if (feature_dim < 2) throw ConfigError("model: feature_dim < 2");
  if (n_layers < 1) throw ConfigError("model: n_layers < 1");
  if (r_cut <= 0) throw ConfigError("model: r_cut <= 0");
  if (n_radial_basis < 2) throw ConfigError("model: n_radial_basis < 2");
  if (n_heads < 1 || feature_dim % n_heads != 0)
    throw ConfigError("model: feature_dim must be divisible by n_heads");
  if (feature_dim % L.count() != 0)
    throw ConfigError("model: feature_dim must be divisible by the number "
                      "of degrees");
  if (kappa <= 0) throw ConfigError("model: kappa <= 0");
  if (p_poly < 2) throw ConfigError("model: p_poly < 2");
  if (max_z < 1) throw ConfigError("model: max_z < 1");
  if (use_nonlocal && !use_spherical_filter)
    throw ConfigError("model: the non-local update needs the spherical "
                      "filter (its attention has no radial part)");
}

int64_t ModelParams::count() const {
  int64_t c = 0;
  for (const auto& [name, t] : entries) c += t.numel();
  return c;
}

int ModelParams::index(const std::string& name) const {
  for (size_t k = 0; k < entries.size(); ++k)
    if (entries[k].first == name) return static_cast<int>(k);
  return -1;
}

const Tensor& ModelParams::get(const std::string& name) const {
  int k = index(name);
  if (k < 0) throw std::invalid_argument("no parameter named '" + name + "'");
  return entries[static_cast<size_t>(k)].second;
}

Tensor& ModelParams::get_mut(const std::string& name) {
  int k = index(name);
  if (k < 0) throw std::invalid_argument("no parameter named '" + name + "'");
  return entries[static_cast<size_t>(k)].second;
}

namespace {

// valid cross-degree coupling triples (l1 < l2, both and l in 𝓛)
std::vector<std::array<int, 3>> coupling_triples(const so3::DegreeRange& L) {
  std::vector<std::array<int, 3>> out;
  for (int l = L.l_min; l <= L.l_max; ++l)
    for (int l1 = L.l_min; l1 <= L.l_max; ++l1)
      for (int l2 = l1 + 1; l2 <= L.l_max; ++l2)
        if (so3::cg_triple_valid(l1, l2, l)) out.push_back({l1, l2, l});
  return out;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  double init_std;  // < 0 means zero init
};

std::vector<ParamSpec> param_layout(const ModelConfig& cfg) {
  const int F = cfg.feature_dim;
  const so3::DegreeRange L = cfg.degrees();
  const int nl = L.count();
  const int Fl = F / nl;
  const int K = cfg.n_radial_basis;
  const int T = static_cast<int>(coupling_triples(L).size());
  std::vector<ParamSpec> out;
  auto lin = [&](const std::string& n, int64_t in, int64_t outd, bool bias) {
    out.push_back({n + ".w", {in, outd}, 1.0 / std::sqrt(double(in))});
    if (bias) out.push_back({n + ".b", {outd}, -1.0});
  };
  out.push_back({"embed.table", {cfg.max_z, F}, 1.0 / std::sqrt(double(F))});
  for (int i = 0; i < cfg.n_layers; ++i) {
    std::string p = "layer" + std::to_string(i) + ".";
    lin(p + "radial.1", K, 128, true);
    lin(p + "radial.2", 128, F, true);
    if (cfg.use_spherical_filter) {
      lin(p + "spherical.1", nl, 32, true);
      lin(p + "spherical.2", 32, F, true);
    }
    lin(p + "feat.q", F, F, false);
    lin(p + "feat.k", F, F, false);
    lin(p + "feat.v", F, F, false);
    for (int l = L.l_min; l <= L.l_max; ++l) {
      lin(p + "sphc.q" + std::to_string(l), Fl, Fl, false);
      lin(p + "sphc.k" + std::to_string(l), Fl, Fl, false);
    }
    lin(p + "inter.1", F + 2 * nl, F, true);
    lin(p + "inter.2", F, F + nl, true);
    lin(p + "inter.3", nl, nl, false);
    if (T > 0) out.push_back({p + "inter.cg_mix", {T}, -1.0});
  }
  lin("head.1", F, F / 2, true);
  lin("head.2", F / 2, 1, true);
  return out;
}

constexpr const char* kBlobMagic = "float64-le";

}  // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  for (const ParamSpec& spec : param_layout(cfg)) {
    Tensor t = Tensor::zeros(spec.shape);
    if (spec.init_std > 0)
      for (double& x : t.v) x = rng.normal() * spec.init_std;
    p.entries.emplace_back(spec.name, std::move(t));
  }
  return p;
}

int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  int64_t c = 0;
  for (const ParamSpec& spec : param_layout(cfg)) c += shape_numel(spec.shape);
  return c;
}

// --- checkpoint io -------------------------------------------------------------

void save_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                     const std::string& prefix) {
  std::ofstream man(prefix + ".manifest");
  if (!man) throw DataError("cannot write '" + prefix + ".manifest'");
  man << "format " << kBlobMagic << "\n";
  man << "config feature_dim " << cfg.feature_dim << "\n";
  man << "config n_layers " << cfg.n_layers << "\n";
  man << "config l_max " << cfg.l_max << "\n";
  man << "config r_cut " << cfg.r_cut << "\n";
  man << "config n_radial_basis " << cfg.n_radial_basis << "\n";
  man << "config n_heads " << cfg.n_heads << "\n";
  man << "config kappa " << cfg.kappa << "\n";
  man << "config p_poly " << cfg.p_poly << "\n";
  man << "config use_nonlocal " << (cfg.use_nonlocal ? 1 : 0) << "\n";
  man << "config use_spherical_filter " << (cfg.use_spherical_filter ? 1 : 0)
      << "\n";
  man << "config max_z " << cfg.max_z << "\n";
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw DataError("cannot write '" + prefix + ".bin'");
  int64_t offset = 0;
  for (const auto& [name, t] : params.entries) {
    man << "param " << name;
    for (int64_t d : t.shape) man << " " << d;
    man << " @ " << offset << "\n";
    bin.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    offset += static_cast<int64_t>(t.v.size() * sizeof(double));
  }
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& prefix) {
  std::ifstream man(prefix + ".manifest");
  if (!man) throw DataError("cannot open '" + prefix + ".manifest'");
  ModelConfig cfg;
  struct Entry {
    std::string name;
    Shape shape;
    int64_t offset;
  };
  std::vector<Entry> listed;
  std::string line;
  while (std::getline(man, line)) {
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "format") {
      std::string fmt;
      is >> fmt;
      if (fmt != kBlobMagic)
        throw DataError(prefix + ": unsupported blob format '" + fmt + "'");
    } else if (kind == "config") {
      std::string key;
      is >> key;
      if (key == "feature_dim") is >> cfg.feature_dim;
      else if (key == "n_layers") is >> cfg.n_layers;
      else if (key == "l_max") is >> cfg.l_max;
      else if (key == "r_cut") is >> cfg.r_cut;
      else if (key == "n_radial_basis") is >> cfg.n_radial_basis;
      else if (key == "n_heads") is >> cfg.n_heads;
      else if (key == "kappa") is >> cfg.kappa;
      else if (key == "p_poly") is >> cfg.p_poly;
      else if (key == "use_nonlocal") { int b; is >> b; cfg.use_nonlocal = b; }
      else if (key == "use_spherical_filter") {
        int b; is >> b; cfg.use_spherical_filter = b;
      } else if (key == "max_z") is >> cfg.max_z;
      else throw DataError(prefix + ": unknown config key '" + key + "'");
    } else if (kind == "param") {
      Entry e;
      is >> e.name;
      std::vector<std::string> toks;
      std::string t;
      while (is >> t) toks.push_back(t);
      if (toks.size() < 2 || toks[toks.size() - 2] != "@")
        throw DataError(prefix + ": malformed param line '" + line + "'");
      for (size_t k = 0; k + 2 < toks.size(); ++k)
        e.shape.push_back(std::stoll(toks[k]));
      e.offset = std::stoll(toks.back());
      listed.push_back(std::move(e));
    } else if (!kind.empty()) {
      throw DataError(prefix + ": unknown manifest line '" + line + "'");
    }
  }
  cfg.validate();
  auto layout = param_layout(cfg);
  if (layout.size() != listed.size())
    throw DataError(prefix + ": manifest lists " +
                    std::to_string(listed.size()) + " parameters, config "
                    "implies " + std::to_string(layout.size()));
  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw DataError("cannot open '" + prefix + ".bin'");
  ModelParams params;
  for (size_t k = 0; k < layout.size(); ++k) {
    if (listed[k].name != layout[k].name || listed[k].shape != layout[k].shape)
      throw DataError(prefix + ": parameter '" + listed[k].name +
                      "' does not match the config-derived layout");
    Tensor t = Tensor::zeros(listed[k].shape);
    bin.seekg(listed[k].offset);
    bin.read(reinterpret_cast<char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!bin)
      throw DataError(prefix + ": blob too short for '" + listed[k].name +
                      "'");
    params.entries.emplace_back(listed[k].name, std::move(t));
  }
  return {cfg, params};
}

// --- forward graph --------------------------------------------------------------

namespace {

struct ParamVars {
  const ModelParams* params;
  std::vector<Var> leaves;
  const Var& operator()(const std::string& name) const {
    int k = params->index(name);
    if (k < 0)
      throw std::invalid_argument("no parameter named '" + name + "'");
    return leaves[static_cast<size_t>(k)];
  }
};

Var mlp2(const Var& x, const ParamVars& pv, const std::string& prefix) {
  Var h = silu(linear(x, pv(prefix + ".1.w"), pv(prefix + ".1.b")));
  return linear(h, pv(prefix + ".2.w"), pv(prefix + ".2.b"));
}

Var poly_cutoff_var(const Var& x, int p) {
  double pp = p;
  Var a = mul_scalar(pow_scalar(x, pp), -0.5 * (pp + 1.0) * (pp + 2.0));
  Var b = mul_scalar(pow_scalar(x, pp + 1.0), pp * (pp + 2.0));
  Var c = mul_scalar(pow_scalar(x, pp + 2.0), -0.5 * pp * (pp + 1.0));
  return add_scalar(add(add(a, b), c), 1.0);
}

struct GraphResult {
  Var energy;
  Var atom_energies;
  Var positions;
  std::vector<Var> param_leaves;
  std::vector<Tensor> chi_layers;
  std::vector<AttnRecord> attention;
};

// per-degree norms, concatenated: (n x |L|)
Var degree_norms(const Var& chi, const so3::DegreeRange& L) {
  std::vector<Var> parts;
  for (int l = L.l_min; l <= L.l_max; ++l)
    parts.push_back(
        safe_norm(slice(chi, 1, L.offset(l), 2 * l + 1), 1, true));
  return concat(parts, 1);
}

GraphResult build_energy_graph(Tape& tape, const MolecularStructure& s,
                               const ModelParams& params,
                               const ModelConfig& cfg, bool diagnostics) {
  cfg.validate();
  s.validate();
  const int n = s.n_atoms();
  const so3::DegreeRange L = cfg.degrees();
  const int F = cfg.feature_dim;
  const int nl = L.count();
  const int Fl = F / nl;
  const int h = cfg.n_heads;
  const int Fh = F / h;
  const int dim = L.dim();

  for (int z : s.atomic_numbers)
    if (z > cfg.max_z)
      throw DataError("element z=" + std::to_string(z) +
                      " beyond the embedding table (max_z=" +
                      std::to_string(cfg.max_z) + ")");

  GraphResult g;
  ParamVars pv{&params, {}};
  for (const auto& [name, t] : params.entries)
    g.param_leaves.push_back(tape.leaf(t));
  pv.leaves = g.param_leaves;

  Tensor pos = Tensor::zeros({n, 3});
  for (int a = 0; a < n; ++a) {
    pos.v[static_cast<size_t>(3 * a)] = s.positions[static_cast<size_t>(a)].x;
    pos.v[static_cast<size_t>(3 * a + 1)] =
        s.positions[static_cast<size_t>(a)].y;
    pos.v[static_cast<size_t>(3 * a + 2)] =
        s.positions[static_cast<size_t>(a)].z;
  }
  g.positions = tape.leaf(std::move(pos));

  // pair geometry, shared across layers
  auto pairs = build_neighbors(s, cfg.r_cut);
  const int64_t m = static_cast<int64_t>(pairs.size());
  auto i_idx = std::make_shared<IndexList>();
  auto j_idx = std::make_shared<IndexList>();
  for (const auto& p : pairs) {
    i_idx->push_back(p.i);
    j_idx->push_back(p.j);
  }
  Var pi = gather(g.positions, i_idx);
  Var pj = gather(g.positions, j_idx);
  Var dvec = sub(pj, pi);
  Var r = safe_norm(dvec, 1, true);                       // (m,1)
  Var dirs = div(dvec, r);                                // (m,3)
  Var phicut = cosine_cutoff_var(r, cfg.r_cut);
  Var Y = so3::sph_blocks(dirs, L);                       // (m,dim)
  Var radial = radial_basis_var(r, cfg.r_cut, cfg.n_radial_basis);

  // embedding
  auto z_rows = std::make_shared<IndexList>();
  for (int z : s.atomic_numbers) z_rows->push_back(z - 1);
  Var f = gather(pv("embed.table"), z_rows);              // (n,F)

  // SPHC initialization
  Var C = segment_sum(phicut, i_idx, n);                   // (n,1)
  Var chi = div(segment_sum(mul(Y, phicut), i_idx, n), add_scalar(C, 1e-12));
  if (diagnostics) g.chi_layers.push_back(chi.val());

  // off-diagonal mask for the SPHC distance matrix
  Tensor mask = Tensor::full({n, n}, 1.0);
  for (int a = 0; a < n; ++a) mask.v[static_cast<size_t>(a * n + a)] = 0.0;

  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string lp = "layer" + std::to_string(layer) + ".";

    // per-degree SPHC distances on the Euclidean pairs
    Var chi_i = gather(chi, i_idx);
    Var chi_j = gather(chi, j_idx);
    Var dchi = sub(chi_j, chi_i);
    Var sph_dist = degree_norms(dchi, L);                  // (m,|L|)

    // filter w_ij = radial + (optional) spherical
    Var w = mlp2(radial, pv, lp + "radial");
    if (cfg.use_spherical_filter)
      w = add(w, mlp2(sph_dist, pv, lp + "spherical"));

    // feature-branch multi-head attention
    Var q = matmul(f, pv(lp + "feat.q.w"));
    Var k = matmul(f, pv(lp + "feat.k.w"));
    Var v = matmul(f, pv(lp + "feat.v.w"));
    Var qh = reshape(gather(q, i_idx), {m, h, Fh});
    Var kh = reshape(gather(k, j_idx), {m, h, Fh});
    Var wh = reshape(w, {m, h, Fh});
    Var alpha = mul_scalar(sum_axis(mul(mul(qh, wh), kh), 2, true),
                           1.0 / std::sqrt(double(Fh)));  // (m,h,1)
    Var vh = reshape(gather(v, j_idx), {m, h, Fh});
    Var msg = mul(mul(vh, alpha), reshape(phicut, {m, 1, 1}));
    Var f_new = add(f, segment_sum(reshape(msg, {m, F}), i_idx, n));

    // SPHC branch: one head per degree
    std::vector<Var> q_deg, k_deg;
    for (int l = L.l_min; l <= L.l_max; ++l) {
      int fo = (l - L.l_min) * Fl;
      Var fsl = slice(f, 1, fo, Fl);
      q_deg.push_back(matmul(fsl, pv(lp + "sphc.q" + std::to_string(l) + ".w")));
      k_deg.push_back(matmul(fsl, pv(lp + "sphc.k" + std::to_string(l) + ".w")));
    }
    std::vector<Var> chi_updates;
    std::vector<Var> alpha_deg_local;
    for (int l = L.l_min; l <= L.l_max; ++l) {
      int li = l - L.l_min;
      int fo = li * Fl;
      Var ql = gather(q_deg[static_cast<size_t>(li)], i_idx);
      Var kl = gather(k_deg[static_cast<size_t>(li)], j_idx);
      Var wl = slice(w, 1, fo, Fl);
      Var al = mul_scalar(sum_axis(mul(mul(ql, wl), kl), 1, true),
                          1.0 / std::sqrt(double(Fl)));   // (m,1)
      alpha_deg_local.push_back(al);
      Var yb = slice(Y, 1, L.offset(l), 2 * l + 1);
      chi_updates.push_back(segment_sum(mul(mul(yb, al), phicut), i_idx, n));
    }
    Var chi_new = add(chi, concat(chi_updates, 1));

    // non-local geometric corrections via spherical neighborhoods,
    // recomputed each layer from the current SPHCs
    std::vector<AttnRecord> nl_records;
    if (cfg.use_nonlocal && n >= 2) {
      Var dx = sub(reshape(chi, {n, 1, dim}), reshape(chi, {1, n, dim}));
      Var X = mul(reshape(safe_norm(dx, 2, false), {n, n}),
                  Var::constant(mask));
      Var Xt = softmax(X, 1);
      const Tensor& xt_val = Xt.val();
      const double cut = cfg.kappa / static_cast<double>(n);
      auto si = std::make_shared<IndexList>();
      auto sj = std::make_shared<IndexList>();
      auto flat = std::make_shared<IndexList>();
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          if (a == b) continue;
          if (xt_val.v[static_cast<size_t>(a * n + b)] < cut) {
            si->push_back(a);
            sj->push_back(b);
            flat->push_back(a * static_cast<int64_t>(n) + b);
          }
        }
      const int64_t ms = static_cast<int64_t>(si->size());
      if (ms > 0) {
        Var xt_sel = reshape(gather(reshape(Xt, {int64_t(n) * n}), flat),
                             {ms, 1});
        Var wcut = poly_cutoff_var(mul_scalar(xt_sel, 1.0 / cut), cfg.p_poly);
        Var pi2 = gather(g.positions, si);
        Var pj2 = gather(g.positions, sj);
        Var dvec2 = sub(pj2, pi2);
        Var dirs2 = div(dvec2, safe_norm(dvec2, 1, true));
        Var Y2 = so3::sph_blocks(dirs2, L);
        Var chi_si = gather(chi, si);
        Var chi_sj = gather(chi, sj);
        Var sph_dist2 = degree_norms(sub(chi_sj, chi_si), L);
        // attention from the spherical filter alone: the radial filter is
        // zero beyond r_cut and would annihilate long-range pairs
        Var w2 = mlp2(sph_dist2, pv, lp + "spherical");
        std::vector<Var> nl_updates;
        for (int l = L.l_min; l <= L.l_max; ++l) {
          int li = l - L.l_min;
          int fo = li * Fl;
          Var ql = gather(q_deg[static_cast<size_t>(li)], si);
          Var kl = gather(k_deg[static_cast<size_t>(li)], sj);
          Var wl = slice(w2, 1, fo, Fl);
          Var al = mul_scalar(sum_axis(mul(mul(ql, wl), kl), 1, true),
                              1.0 / std::sqrt(double(Fl)));
          Var yb = slice(Y2, 1, L.offset(l), 2 * l + 1);
          nl_updates.push_back(segment_sum(mul(mul(yb, al), wcut), si, n));
          if (diagnostics) {
            const Tensor& av = al.val();
            const Tensor& wv = wcut.val();
            for (int64_t e = 0; e < ms; ++e)
              nl_records.push_back({layer, 's', li,
                                    static_cast<int>((*si)[size_t(e)]),
                                    static_cast<int>((*sj)[size_t(e)]), true,
                                    av.v[static_cast<size_t>(e)],
                                    wv.v[static_cast<size_t>(e)]});
          }
        }
        chi_new = add(chi_new, concat(nl_updates, 1));
      }
    }

    if (diagnostics) {
      const Tensor& av = alpha.val();    // (m,h,1)
      const Tensor& pc = phicut.val();
      for (int64_t e = 0; e < m; ++e)
        for (int hd = 0; hd < h; ++hd)
          g.attention.push_back({layer, 'f', hd, pairs[size_t(e)].i,
                                 pairs[size_t(e)].j, false,
                                 av.v[static_cast<size_t>(e * h + hd)],
                                 pc.v[static_cast<size_t>(e)]});
      for (int li = 0; li < nl; ++li) {
        const Tensor& av2 = alpha_deg_local[static_cast<size_t>(li)].val();
        for (int64_t e = 0; e < m; ++e)
          g.attention.push_back({layer, 's', li, pairs[size_t(e)].i,
                                 pairs[size_t(e)].j, false,
                                 av2.v[static_cast<size_t>(e)],
                                 pc.v[static_cast<size_t>(e)]});
      }
      for (auto& rec : nl_records) g.attention.push_back(rec);
    }

    f = f_new;
    chi = chi_new;

    // atomwise interaction with cross-degree coupling
    Var snorm = degree_norms(chi, L);                      // (n,|L|)
    auto triples = coupling_triples(L);
    std::vector<Var> chi_cross_deg;
    for (int l = L.l_min; l <= L.l_max; ++l) {
      Var acc = Var::constant(Tensor::zeros({n, 2 * l + 1}));
      for (size_t t = 0; t < triples.size(); ++t) {
        if (triples[t][2] != l) continue;
        Var kmix = slice(pv(lp + "inter.cg_mix"), 0, static_cast<int64_t>(t),
                         1);
        Var c1 = slice(chi, 1, L.offset(triples[t][0]),
                       2 * triples[t][0] + 1);
        Var c2 = slice(chi, 1, L.offset(triples[t][1]),
                       2 * triples[t][1] + 1);
        acc = add(acc, mul(so3::contract_rows(c1, triples[t][0], c2,
                                              triples[t][1], l),
                           kmix));
      }
      chi_cross_deg.push_back(acc);
    }
    Var chi_cross = concat(chi_cross_deg, 1);              // (n,dim)
    Var scross = degree_norms(chi_cross, L);               // (n,|L|)
    Var inp = concat({f, snorm, scross}, 1);
    Var hidden = silu(linear(inp, pv(lp + "inter.1.w"), pv(lp + "inter.1.b")));
    Var out = linear(hidden, pv(lp + "inter.2.w"), pv(lp + "inter.2.b"));
    Var phi1 = slice(out, 1, 0, F);
    Var phi2 = slice(out, 1, F, nl);                        // (n,|L|)
    Var phi3 = matmul(scross, pv(lp + "inter.3.w"));        // (n,|L|)
    f = add(f, phi1);
    std::vector<Var> chi_parts;
    for (int l = L.l_min; l <= L.l_max; ++l) {
      int li = l - L.l_min;
      Var cl = slice(chi, 1, L.offset(l), 2 * l + 1);
      Var p2 = slice(phi2, 1, li, 1);
      Var p3 = slice(phi3, 1, li, 1);
      chi_parts.push_back(add(add(cl, mul(p2, cl)),
                              mul(p3, chi_cross_deg[static_cast<size_t>(li)])));
    }
    chi = concat(chi_parts, 1);
    if (diagnostics) g.chi_layers.push_back(chi.val());
  }

  g.atom_energies =
      linear(silu(linear(f, pv("head.1.w"), pv("head.1.b"))), pv("head.2.w"),
             pv("head.2.b"));                               // (n,1)
  g.energy = sum_all(g.atom_energies);
  return g;
}

}  // namespace

EvalResult evaluate(const MolecularStructure& s, const ModelParams& params,
                    const ModelConfig& cfg, const EvalOptions& opt) {
  Tape tape;
  GraphResult g = build_energy_graph(tape, s, params, cfg, opt.diagnostics);
  EvalResult out;
  out.energy = g.energy.item();
  for (double e : g.atom_energies.val().v) out.atom_energies.push_back(e);
  if (opt.forces) {
    Var dE = grad_one(g.energy, g.positions);
    const Tensor& gv = dE.val();
    for (int a = 0; a < s.n_atoms(); ++a)
      out.forces.push_back({-gv.v[static_cast<size_t>(3 * a)],
                            -gv.v[static_cast<size_t>(3 * a + 1)],
                            -gv.v[static_cast<size_t>(3 * a + 2)]});
  }
  out.chi_layers = std::move(g.chi_layers);
  out.attention = std::move(g.attention);
  return out;
}

LossGraph build_loss_graph(Tape& tape, const MolecularStructure& s,
                           const ModelParams& params, const ModelConfig& cfg,
                           double beta) {
  if (beta < 0 || beta > 1)
    throw ConfigError("loss: beta must lie in [0, 1]");
  if (beta < 1 && !s.energy)
    throw ConfigError("loss: beta < 1 needs a reference energy");
  if (beta > 0 && !s.forces)
    throw ConfigError("loss: beta > 0 needs reference forces");
  GraphResult g = build_energy_graph(tape, s, params, cfg, false);
  const int n = s.n_atoms();
  Var loss = Var::constant(Tensor::scalar(0.0));
  if (beta < 1) {
    Var de = add_scalar(g.energy, -*s.energy);
    loss = add(loss, mul_scalar(mul(de, de), 1.0 - beta));
  }
  if (beta > 0) {
    Var dE = grad_one(g.energy, g.positions);
    Tensor fref = Tensor::zeros({n, 3});
    for (int a = 0; a < n; ++a) {
      fref.v[static_cast<size_t>(3 * a)] = (*s.forces)[size_t(a)].x;
      fref.v[static_cast<size_t>(3 * a + 1)] = (*s.forces)[size_t(a)].y;
      fref.v[static_cast<size_t>(3 * a + 2)] = (*s.forces)[size_t(a)].z;
    }
    // F = -dE/dR, so (F - F~)^2 = (dE/dR + F~)^2
    Var df = add(dE, Var::constant(std::move(fref)));
    loss = add(loss, mul_scalar(sum_all(mul(df, df)), beta / (3.0 * n)));
  }
  return {loss, std::move(g.param_leaves)};
}

Var cosine_cutoff_var(const Var& r, double r_cut) {
  if (r.shape().size() != 2 || r.shape()[1] != 1)
    throw std::invalid_argument("cosine_cutoff_var: (m x 1) column required");
  Var c = mul_scalar(
      add_scalar(cos(mul_scalar(r, std::numbers::pi / r_cut)), 1.0), 0.5);
  Tensor mask = Tensor::zeros(r.shape());
  bool all_inside = true;
  for (size_t k = 0; k < mask.v.size(); ++k) {
    bool inside = r.val().v[k] < r_cut;
    mask.v[k] = inside ? 1.0 : 0.0;
    all_inside = all_inside && inside;
  }
  return all_inside ? c : mul(c, Var::constant(std::move(mask)));
}

Var radial_basis_var(const Var& r, double r_cut, int n_basis) {
  if (n_basis < 2) throw std::invalid_argument("radial_basis: K < 2");
  const double mu_lo = std::exp(-r_cut);
  const double dmu = (1.0 - mu_lo) / (n_basis - 1);
  const double gamma = 1.0 / (2.0 * dmu * dmu);
  Tensor mu = Tensor::zeros({1, n_basis});
  for (int k = 0; k < n_basis; ++k)
    mu.v[static_cast<size_t>(k)] = mu_lo + dmu * k;
  Var t_exp = exp(neg(r));
  Var dmu_t = sub(t_exp, Var::constant(std::move(mu)));
  return mul(exp(mul_scalar(mul(dmu_t, dmu_t), -gamma)),
             cosine_cutoff_var(r, r_cut));
}

Pca2 pca2(const Tensor& points) {
  if (points.rank() != 2 || points.shape[0] < 1)
    throw std::invalid_argument("pca2: (n x d) input required");
  const int64_t n = points.shape[0], d = points.shape[1];
  Pca2 out;
  out.mean.assign(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      out.mean[static_cast<size_t>(j)] +=
          points.v[static_cast<size_t>(i * d + j)] / n;
  Tensor xc = points;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      xc.v[static_cast<size_t>(i * d + j)] -= out.mean[static_cast<size_t>(j)];
  Tensor C = Tensor::zeros({d, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t a = 0; a < d; ++a)
      for (int64_t b = 0; b < d; ++b)
        C.v[static_cast<size_t>(a * d + b)] +=
            xc.v[static_cast<size_t>(i * d + a)] *
            xc.v[static_cast<size_t>(i * d + b)] / n;

  auto power_iter = [&](const Tensor& M) {
    std::vector<double> v(static_cast<size_t>(d));
    for (int64_t j = 0; j < d; ++j)
      v[static_cast<size_t>(j)] = 1.0 + 0.01 * static_cast<double>(j);
    double nv = 0;
    for (double x : v) nv += x * x;
    for (double& x : v) x /= std::sqrt(nv);
    for (int it = 0; it < 200; ++it) {
      std::vector<double> w(static_cast<size_t>(d), 0.0);
      for (int64_t a = 0; a < d; ++a)
        for (int64_t b = 0; b < d; ++b)
          w[static_cast<size_t>(a)] +=
              M.v[static_cast<size_t>(a * d + b)] * v[static_cast<size_t>(b)];
      double nw = 0;
      for (double x : w) nw += x * x;
      nw = std::sqrt(nw);
      if (nw < 1e-14) return std::vector<double>(static_cast<size_t>(d), 0.0);
      double delta = 0;
      for (size_t k2 = 0; k2 < w.size(); ++k2) {
        w[k2] /= nw;
        delta = std::max(delta, std::fabs(std::fabs(w[k2]) -
                                          std::fabs(v[k2])));
      }
      v = w;
      if (delta < 1e-10) break;
    }
    return v;
  };

  std::vector<double> v1 = power_iter(C);
  double lam1 = 0;
  for (int64_t a = 0; a < d; ++a)
    for (int64_t b = 0; b < d; ++b)
      lam1 += v1[static_cast<size_t>(a)] * C.v[static_cast<size_t>(a * d + b)] *
              v1[static_cast<size_t>(b)];
  Tensor C2 = C;
  for (int64_t a = 0; a < d; ++a)
    for (int64_t b = 0; b < d; ++b)
      C2.v[static_cast<size_t>(a * d + b)] -=
          lam1 * v1[static_cast<size_t>(a)] * v1[static_cast<size_t>(b)];
  std::vector<double> v2 = power_iter(C2);

  out.basis = Tensor::zeros({d, 2});
  for (int64_t j = 0; j < d; ++j) {
    out.basis.v[static_cast<size_t>(2 * j)] = v1[static_cast<size_t>(j)];
    out.basis.v[static_cast<size_t>(2 * j + 1)] = v2[static_cast<size_t>(j)];
  }
  out.scores = Tensor::zeros({n, 2});
  for (int64_t i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) {
      double sum = 0;
      for (int64_t j = 0; j < d; ++j)
        sum += xc.v[static_cast<size_t>(i * d + j)] *
               out.basis.v[static_cast<size_t>(2 * j + c)];
      out.scores.v[static_cast<size_t>(i * 2 + c)] = sum;
    }
  return out;
}

}  // namespace sphnet
