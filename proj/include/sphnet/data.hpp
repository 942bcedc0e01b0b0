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

#include <string>
#include <tuple>
#include <vector>

#include "sphnet/geometry.hpp"
#include "sphnet/rng.hpp"

namespace sphnet {

struct Dataset {
  std::vector<MolecularStructure> structures;
  std::string energy_unit = "model-unit";
  std::string length_unit = "angstrom";
  bool has_forces = true;

  size_t size() const { return structures.size(); }
};

// Extended-XYZ, one frame per structure:
//   line 1: atom count
//   line 2: key=value pairs, including energy=<float>
//   then one line per atom: symbol x y z [fx fy fz]
// Values are printed with 17 significant digits, so a round trip is exact.
Dataset read_extxyz(const std::string& path);
void write_extxyz(const Dataset& ds, const std::string& path);

int element_number(const std::string& symbol);      // throws DataError
const std::string& element_symbol(int z);           // throws DataError

// Synthetic long-range task: a linear carbon chain with CH2 caps whose energy
// depends only on the dihedral between the two cap planes,
// E(theta) = amplitude * cos(2 theta), with analytic forces.
struct RotorChainSpec {
  int n_carbons = 10;          // even, >= 4
  double cc_bond = 1.28;       // Å
  double ch_bond = 1.09;       // Å
  double hch_angle_deg = 120.0;
  double amplitude = 0.5;      // energy units
  uint64_t seed = 0;
};

// Canonical frame: chain along z, first cap in the x-z plane, second cap
// rotated by theta about the chain axis. Atom order: carbons, then the four
// cap hydrogens. Energy and forces are filled in.
MolecularStructure gen_rotor_chain(const RotorChainSpec& spec, double theta);

// Recomputes energy and analytic forces from the current positions (used
// after rigid motions; the energy depends only on the cap dihedral).
void rotor_energy_forces(MolecularStructure& s, const RotorChainSpec& spec);

// theta sampled uniformly on [0, pi), each sample under a fresh random
// global rotation
Dataset gen_rotor_dataset(const RotorChainSpec& spec, int n_samples);

// Seeded disjoint index partition (train, valid, test).
std::tuple<Dataset, Dataset, Dataset> make_splits(const Dataset& ds,
                                                  int n_train, int n_valid,
                                                  uint64_t seed);

}  // namespace sphnet
