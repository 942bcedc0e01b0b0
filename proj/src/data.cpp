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

#include "sphnet/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "sphnet/errors.hpp"
#include "sphnet/oracles.hpp"

namespace sphnet {

namespace {

const std::array<std::string, 104> kSymbols = {
    "X",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na",
    "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",
    "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br",
    "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag",
    "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu",
    "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi",
    "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am",
    "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr"};

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

int element_number(const std::string& symbol) {
  static const auto lookup = [] {
    std::map<std::string, int> m;
    for (size_t z = 1; z < kSymbols.size(); ++z)
      m[kSymbols[z]] = static_cast<int>(z);
    return m;
  }();
  auto it = lookup.find(symbol);
  if (it == lookup.end())
    throw DataError("unknown element symbol '" + symbol + "'");
  return it->second;
}

const std::string& element_symbol(int z) {
  if (z <= 0 || z >= static_cast<int>(kSymbols.size()))
    throw DataError("atomic number " + std::to_string(z) + " out of range");
  return kSymbols[static_cast<size_t>(z)];
}

Dataset read_extxyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  Dataset ds;
  std::string line;
  int lineno = 0;
  bool first_frame = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    int natoms = 0;
    try {
      size_t pos = 0;
      natoms = std::stoi(line, &pos);
      if (line.find_first_not_of(" \t\r", pos) != std::string::npos)
        throw std::invalid_argument("");
    } catch (...) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": malformed atom count '" + line + "'");
    }
    if (natoms <= 0)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": non-positive atom count");
    if (!std::getline(in, line))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": missing comment line");
    ++lineno;
    MolecularStructure s;
    bool have_energy = false;
    for (const std::string& tok : split_ws(line)) {
      size_t eq = tok.find('=');
      if (eq == std::string::npos) continue;
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      if (key == "energy") {
        try {
          s.energy = std::stod(val);
          have_energy = true;
        } catch (...) {
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": malformed energy '" + val + "'");
        }
      } else if (key == "energy_unit") {
        ds.energy_unit = val;
      } else if (key == "length_unit") {
        ds.length_unit = val;
      }
    }
    if (!have_energy)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": missing energy=<float> entry");
    bool frame_has_forces = false;
    for (int a = 0; a < natoms; ++a) {
      if (!std::getline(in, line))
        throw DataError(path + ":" + std::to_string(lineno) + ": declared " +
                        std::to_string(natoms) + " atoms but the file ends " +
                        "after " + std::to_string(a) + " atom lines");
      ++lineno;
      auto cols = split_ws(line);
      if (cols.size() != 4 && cols.size() != 7)
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected 4 or 7 columns, got " +
                        std::to_string(cols.size()));
      int z;
      try {
        z = element_number(cols[0]);
      } catch (const DataError& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
      s.atomic_numbers.push_back(z);
      try {
        s.positions.push_back(
            {std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3])});
        if (cols.size() == 7) {
          if (a == 0) {
            frame_has_forces = true;
            s.forces.emplace();
          }
          if (!frame_has_forces)
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": inconsistent force columns within a frame");
          s.forces->push_back(
              {std::stod(cols[4]), std::stod(cols[5]), std::stod(cols[6])});
        } else if (frame_has_forces) {
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": inconsistent force columns within a frame");
        }
      } catch (const DataError&) {
        throw;
      } catch (...) {
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": malformed float");
      }
    }
    if (first_frame) {
      ds.has_forces = frame_has_forces;
      first_frame = false;
    } else if (ds.has_forces != frame_has_forces) {
      throw DataError(path + ": frames disagree on force columns");
    }
    ds.structures.push_back(std::move(s));
  }
  if (ds.structures.empty()) throw DataError(path + ": no structures");
  return ds;
}

void write_extxyz(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& s : ds.structures) {
    if (!s.energy)
      throw DataError("write_extxyz: structure without energy");
    out << s.n_atoms() << "\n";
    out << "energy=" << fmt_g17(*s.energy) << " energy_unit=" << ds.energy_unit
        << " length_unit=" << ds.length_unit << "\n";
    for (int a = 0; a < s.n_atoms(); ++a) {
      const Vec3& p = s.positions[static_cast<size_t>(a)];
      out << element_symbol(s.atomic_numbers[static_cast<size_t>(a)]) << " "
          << fmt_g17(p.x) << " " << fmt_g17(p.y) << " " << fmt_g17(p.z);
      if (s.forces) {
        const Vec3& f = (*s.forces)[static_cast<size_t>(a)];
        out << " " << fmt_g17(f.x) << " " << fmt_g17(f.y) << " "
            << fmt_g17(f.z);
      }
      out << "\n";
    }
  }
}

// --- rotor chain ----------------------------------------------------------------

namespace {

struct DihedralIdx {
  int a, b, c, d;  // H(cap 1), first C, last C, H(cap 2)
};

DihedralIdx rotor_dihedral_indices(int n_carbons) {
  return {n_carbons, 0, n_carbons - 1, n_carbons + 2};
}

double dihedral(const Vec3& ra, const Vec3& rb, const Vec3& rc, const Vec3& rd,
                std::array<Vec3, 4>* grad) {
  Vec3 b1 = rb - ra, b2 = rc - rb, b3 = rd - rc;
  Vec3 n1 = b1.cross(b2), n2 = b2.cross(b3);
  double b2n = b2.norm();
  double x = n1.dot(n2);
  double y = n1.cross(n2).dot(b2 * (1.0 / b2n));
  double theta = std::atan2(y, x);
  if (grad) {
    double n1sq = n1.dot(n1), n2sq = n2.dot(n2);
    Vec3 A = n1 * (b2n / n1sq);
    Vec3 B = n2 * (b2n / n2sq);
    double p = b1.dot(b2) / (b2n * b2n);
    double q = b3.dot(b2) / (b2n * b2n);
    (*grad)[0] = A * -1.0;
    (*grad)[1] = A * (1.0 + p) + B * q;
    (*grad)[2] = A * -p - B * (1.0 + q);
    (*grad)[3] = B;
  }
  return theta;
}

void validate_spec(const RotorChainSpec& spec) {
  if (spec.n_carbons < 4 || spec.n_carbons % 2 != 0)
    throw ConfigError("rotor chain: n_carbons must be even and >= 4, got " +
                      std::to_string(spec.n_carbons));
  if (spec.cc_bond <= 0 || spec.ch_bond <= 0)
    throw ConfigError("rotor chain: bond lengths must be positive");
}

}  // namespace

void rotor_energy_forces(MolecularStructure& s, const RotorChainSpec& spec) {
  validate_spec(spec);
  // The cap planes define the angle only up to the choice of hydrogen; the
  // four H-pair dihedrals differ by pi, so cos(2 theta) -- and with it the
  // energy -- is the same for every choice. The energy is implemented as the
  // symmetric average over the four representatives, which keeps it (and its
  // gradient) invariant under relabeling the cap hydrogens.
  const int nc = spec.n_carbons;
  DihedralIdx ix = rotor_dihedral_indices(nc);
  const int h1[2] = {nc, nc + 1};
  const int h2[2] = {nc + 2, nc + 3};
  std::vector<Vec3> f(static_cast<size_t>(s.n_atoms()), Vec3{});
  double energy = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      std::array<Vec3, 4> dtheta;
      double theta = dihedral(s.positions[static_cast<size_t>(h1[a])],
                              s.positions[static_cast<size_t>(ix.b)],
                              s.positions[static_cast<size_t>(ix.c)],
                              s.positions[static_cast<size_t>(h2[b])],
                              &dtheta);
      energy += 0.25 * spec.amplitude * std::cos(2.0 * theta);
      // F = -dE/dR = (A/4) 2 sin(2 theta) dtheta/dR per representative
      double c = 0.5 * spec.amplitude * std::sin(2.0 * theta);
      f[static_cast<size_t>(h1[a])] = f[static_cast<size_t>(h1[a])] +
                                      dtheta[0] * c;
      f[static_cast<size_t>(ix.b)] = f[static_cast<size_t>(ix.b)] +
                                     dtheta[1] * c;
      f[static_cast<size_t>(ix.c)] = f[static_cast<size_t>(ix.c)] +
                                     dtheta[2] * c;
      f[static_cast<size_t>(h2[b])] = f[static_cast<size_t>(h2[b])] +
                                      dtheta[3] * c;
    }
  s.energy = energy;
  s.forces = std::move(f);
}

MolecularStructure gen_rotor_chain(const RotorChainSpec& spec, double theta) {
  validate_spec(spec);
  MolecularStructure s;
  const int nc = spec.n_carbons;
  for (int k = 0; k < nc; ++k) {
    s.atomic_numbers.push_back(6);
    s.positions.push_back({0, 0, spec.cc_bond * k});
  }
  const double half = 0.5 * spec.hch_angle_deg * std::numbers::pi / 180.0;
  const double sh = std::sin(half) * spec.ch_bond;
  const double ch = std::cos(half) * spec.ch_bond;
  // first cap in the x-z plane, pointing backward along -z
  s.atomic_numbers.push_back(1);
  s.positions.push_back({sh, 0, -ch});
  s.atomic_numbers.push_back(1);
  s.positions.push_back({-sh, 0, -ch});
  // second cap rotated by theta about the chain axis
  const double zend = spec.cc_bond * (nc - 1);
  const double ux = std::cos(theta), uy = std::sin(theta);
  s.atomic_numbers.push_back(1);
  s.positions.push_back({sh * ux, sh * uy, zend + ch});
  s.atomic_numbers.push_back(1);
  s.positions.push_back({-sh * ux, -sh * uy, zend + ch});
  rotor_energy_forces(s, spec);
  return s;
}

Dataset gen_rotor_dataset(const RotorChainSpec& spec, int n_samples) {
  if (n_samples <= 0) throw ConfigError("rotor dataset: n_samples <= 0");
  Rng rng(spec.seed);
  Dataset ds;
  for (int i = 0; i < n_samples; ++i) {
    double theta = rng.uniform(0.0, std::numbers::pi);
    Mat3 R = oracles::random_rotation(rng);
    MolecularStructure s = gen_rotor_chain(spec, theta);
    for (auto& p : s.positions) p = R.apply(p);
    rotor_energy_forces(s, spec);
    ds.structures.push_back(std::move(s));
  }
  return ds;
}

std::tuple<Dataset, Dataset, Dataset> make_splits(const Dataset& ds,
                                                  int n_train, int n_valid,
                                                  uint64_t seed) {
  const int n = static_cast<int>(ds.size());
  if (n_train < 0 || n_valid < 0 || n_train + n_valid > n)
    throw ConfigError("make_splits: " + std::to_string(n_train) + " + " +
                      std::to_string(n_valid) + " exceeds dataset size " +
                      std::to_string(n));
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  auto take = [&](int lo, int hi) {
    Dataset out;
    out.energy_unit = ds.energy_unit;
    out.length_unit = ds.length_unit;
    out.has_forces = ds.has_forces;
    for (int k = lo; k < hi; ++k)
      out.structures.push_back(
          ds.structures[static_cast<size_t>(idx[static_cast<size_t>(k)])]);
    return out;
  };
  return {take(0, n_train), take(n_train, n_train + n_valid),
          take(n_train + n_valid, n)};
}

}  // namespace sphnet
