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

#include "sphnet/so3.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <stdexcept>

namespace sphnet {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

Vec3 Mat3::apply(const Vec3& v) const {
  return {at(0, 0) * v.x + at(0, 1) * v.y + at(0, 2) * v.z,
          at(1, 0) * v.x + at(1, 1) * v.y + at(1, 2) * v.z,
          at(2, 0) * v.x + at(2, 1) * v.y + at(2, 2) * v.z};
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += at(i, k) * o.at(k, j);
      r.at(i, j) = s;
    }
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.at(i, j) = at(j, i);
  return r;
}

namespace so3 {

DegreeRange::DegreeRange(int lmin, int lmax) : l_min(lmin), l_max(lmax) {
  if (lmin < 0 || lmax < lmin || lmax > kMaxDegree)
    throw std::invalid_argument("DegreeRange: bad degrees [" +
                                std::to_string(lmin) + ", " +
                                std::to_string(lmax) + "]");
  if (lmax >= 1 && lmin != 1)
    throw std::invalid_argument(
        "DegreeRange: l_min must be 1 when l_max >= 1 (degree 0 is a "
        "constant)");
  if (lmax == 0 && lmin != 0)
    throw std::invalid_argument("DegreeRange: l_max = 0 requires l_min = 0");
}

DegreeRange DegreeRange::from_lmax(int lmax) {
  return lmax == 0 ? DegreeRange(0, 0) : DegreeRange(1, lmax);
}

int DegreeRange::dim() const {
  int d = 0;
  for (int l = l_min; l <= l_max; ++l) d += 2 * l + 1;
  return d;
}

int DegreeRange::offset(int l) const {
  if (l < l_min || l > l_max)
    throw std::invalid_argument("DegreeRange: degree " + std::to_string(l) +
                                " outside range");
  int off = 0;
  for (int k = l_min; k < l; ++k) off += 2 * k + 1;
  return off;
}

IrrepsVector::IrrepsVector(DegreeRange d, std::vector<double> values)
    : degrees(d), data(std::move(values)) {
  if (static_cast<int>(data.size()) != degrees.dim())
    throw std::invalid_argument("IrrepsVector: got " +
                                std::to_string(data.size()) +
                                " values, expected " +
                                std::to_string(degrees.dim()));
}

std::vector<double> IrrepsVector::block(int l) const {
  int off = degrees.offset(l);
  return std::vector<double>(data.begin() + off,
                             data.begin() + off + 2 * l + 1);
}

namespace {

void require_degree(int l) {
  if (l < 0 || l > kMaxDegree)
    throw std::invalid_argument("degree " + std::to_string(l) +
                                " outside supported range [0, " +
                                std::to_string(kMaxDegree) + "]");
}

// Racah-normalized real spherical harmonics as Cartesian polynomials,
// ordering m = -l..l with the degree-1 block equal to (y, z, x).
void sph_into(int l, double x, double y, double z, double* out) {
  const double s3 = std::sqrt(3.0);
  const double s15 = std::sqrt(15.0);
  const double c3a = std::sqrt(10.0) / 4.0;  // |m| = 3 and yz(3x^2-y^2) family
  const double c3b = std::sqrt(6.0) / 4.0;
  const double c4a = std::sqrt(35.0) / 2.0;
  const double c4b = std::sqrt(35.0 / 2.0) / 2.0;
  const double c4c = std::sqrt(5.0) / 2.0;
  const double c4d = std::sqrt(10.0) / 4.0;
  const double c4e = std::sqrt(5.0) / 4.0;
  const double c4f = std::sqrt(35.0) / 8.0;
  switch (l) {
    case 0:
      out[0] = 1.0;
      return;
    case 1:
      out[0] = y;
      out[1] = z;
      out[2] = x;
      return;
    case 2:
      out[0] = s3 * x * y;
      out[1] = s3 * y * z;
      out[2] = 0.5 * (3.0 * z * z - 1.0);
      out[3] = s3 * x * z;
      out[4] = 0.5 * s3 * (x * x - y * y);
      return;
    case 3:
      out[0] = c3a * y * (3.0 * x * x - y * y);
      out[1] = s15 * x * y * z;
      out[2] = c3b * y * (5.0 * z * z - 1.0);
      out[3] = 0.5 * z * (5.0 * z * z - 3.0);
      out[4] = c3b * x * (5.0 * z * z - 1.0);
      out[5] = 0.5 * s15 * z * (x * x - y * y);
      out[6] = c3a * x * (x * x - 3.0 * y * y);
      return;
    case 4:
      out[0] = c4a * x * y * (x * x - y * y);
      out[1] = c4b * y * z * (3.0 * x * x - y * y);
      out[2] = c4c * x * y * (7.0 * z * z - 1.0);
      out[3] = c4d * y * z * (7.0 * z * z - 3.0);
      out[4] = 0.125 * (35.0 * z * z * z * z - 30.0 * z * z + 3.0);
      out[5] = c4d * x * z * (7.0 * z * z - 3.0);
      out[6] = c4e * (x * x - y * y) * (7.0 * z * z - 1.0);
      out[7] = c4b * x * z * (x * x - 3.0 * y * y);
      out[8] = c4f * (x * x * x * x - 6.0 * x * x * y * y + y * y * y * y);
      return;
    default:
      throw std::invalid_argument("sph: unsupported degree");
  }
}

// --- complex Clebsch-Gordan by the closed-form factorial formula --------------

double fact(int n) {
  static const auto table = [] {
    std::array<double, 40> t{};
    t[0] = 1.0;
    for (size_t i = 1; i < t.size(); ++i)
      t[i] = t[i - 1] * static_cast<double>(i);
    return t;
  }();
  return table[static_cast<size_t>(n)];
}

double complex_cg(int l1, int m1, int l2, int m2, int l3, int m3) {
  if (m3 != m1 + m2) return 0.0;
  if (l3 < std::abs(l1 - l2) || l3 > l1 + l2) return 0.0;
  if (std::abs(m1) > l1 || std::abs(m2) > l2 || std::abs(m3) > l3) return 0.0;
  double pre = (2.0 * l3 + 1.0) * fact(l3 + l1 - l2) * fact(l3 - l1 + l2) *
               fact(l1 + l2 - l3) / fact(l1 + l2 + l3 + 1);
  pre *= fact(l3 + m3) * fact(l3 - m3) * fact(l1 - m1) * fact(l1 + m1) *
         fact(l2 - m2) * fact(l2 + m2);
  pre = std::sqrt(pre);
  int kmin = std::max({0, l2 - l3 - m1, l1 - l3 + m2});
  int kmax = std::min({l1 + l2 - l3, l1 - m1, l2 + m2});
  double sum = 0.0;
  for (int k = kmin; k <= kmax; ++k) {
    double term = fact(k) * fact(l1 + l2 - l3 - k) * fact(l1 - m1 - k) *
                  fact(l2 + m2 - k) * fact(l3 - l2 + m1 + k) *
                  fact(l3 - l1 - m2 + k);
    sum += ((k % 2) ? -1.0 : 1.0) / term;
  }
  return pre * sum;
}

using cplx = std::complex<double>;

// complex-to-real change of basis: rows indexed by real order m,
// columns by complex order mu; at most two nonzero entries per row
struct TransformRow {
  int cols[2];
  cplx coef[2];
  int ncols;
};

std::vector<TransformRow> real_transform(int l) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<TransformRow> rows(static_cast<size_t>(2 * l + 1));
  for (int m = -l; m <= l; ++m) {
    TransformRow& r = rows[static_cast<size_t>(m + l)];
    if (m > 0) {
      double cs = (m % 2) ? -1.0 : 1.0;
      r.ncols = 2;
      r.cols[0] = m;
      r.coef[0] = cplx(cs * inv_sqrt2, 0.0);
      r.cols[1] = -m;
      r.coef[1] = cplx(inv_sqrt2, 0.0);
    } else if (m == 0) {
      r.ncols = 1;
      r.cols[0] = 0;
      r.coef[0] = cplx(1.0, 0.0);
    } else {
      int am = -m;
      double cs = (am % 2) ? -1.0 : 1.0;
      r.ncols = 2;
      r.cols[0] = am;
      r.coef[0] = cplx(0.0, -cs * inv_sqrt2);
      r.cols[1] = -am;
      r.coef[1] = cplx(0.0, inv_sqrt2);
    }
  }
  return rows;
}

CGTable build_real_cg(int l1, int l2, int l3) {
  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
  auto t1 = real_transform(l1);
  auto t2 = real_transform(l2);
  auto t3 = real_transform(l3);
  std::vector<cplx> raw(static_cast<size_t>(d1 * d2 * d3), cplx(0, 0));
  for (int m1 = -l1; m1 <= l1; ++m1)
    for (int m2 = -l2; m2 <= l2; ++m2)
      for (int m3 = -l3; m3 <= l3; ++m3) {
        cplx acc(0, 0);
        const TransformRow& r1 = t1[static_cast<size_t>(m1 + l1)];
        const TransformRow& r2 = t2[static_cast<size_t>(m2 + l2)];
        const TransformRow& r3 = t3[static_cast<size_t>(m3 + l3)];
        for (int a = 0; a < r1.ncols; ++a)
          for (int b = 0; b < r2.ncols; ++b) {
            int mu3 = r1.cols[a] + r2.cols[b];
            if (std::abs(mu3) > l3) continue;
            for (int cidx = 0; cidx < r3.ncols; ++cidx) {
              if (r3.cols[cidx] != mu3) continue;
              double cg = complex_cg(l1, r1.cols[a], l2, r2.cols[b], l3, mu3);
              acc += r1.coef[a] * r2.coef[b] * std::conj(r3.coef[cidx]) * cg;
            }
          }
        raw[static_cast<size_t>(((m1 + l1) * d2 + (m2 + l2)) * d3 +
                                (m3 + l3))] = acc;
      }
  // the coupled subspace is one-dimensional, so the tensor is a real tensor
  // times a global complex phase; rotate that phase away
  cplx peak(0, 0);
  for (const cplx& c : raw)
    if (std::abs(c) > std::abs(peak)) peak = c;
  cplx phase = peak / std::abs(peak);
  CGTable out;
  out.l1 = l1;
  out.l2 = l2;
  out.l3 = l3;
  out.c.resize(raw.size());
  double max_imag = 0.0;
  for (size_t i = 0; i < raw.size(); ++i) {
    cplx val = raw[i] * std::conj(phase);
    max_imag = std::max(max_imag, std::abs(val.imag()));
    out.c[i] = val.real();
  }
  if (max_imag > 1e-10)
    throw std::logic_error("real CG construction left an imaginary residue");
  return out;
}

struct CGStore {
  std::map<std::array<int, 3>, CGTable> tables;
  CGStore() {
    for (int l1 = 0; l1 <= kMaxDegree; ++l1)
      for (int l2 = 0; l2 <= kMaxDegree; ++l2)
        for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, kMaxDegree);
             ++l3)
          tables.emplace(std::array<int, 3>{l1, l2, l3},
                         build_real_cg(l1, l2, l3));
  }
};

const CGStore& cg_store() {
  static const CGStore store;
  return store;
}

void require_rotation(const Mat3& R) {
  Mat3 rtr = R.transposed() * R;
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      err = std::max(err, std::fabs(rtr.at(i, j) - (i == j ? 1.0 : 0.0)));
  double det =
      R.at(0, 0) * (R.at(1, 1) * R.at(2, 2) - R.at(1, 2) * R.at(2, 1)) -
      R.at(0, 1) * (R.at(1, 0) * R.at(2, 2) - R.at(1, 2) * R.at(2, 0)) +
      R.at(0, 2) * (R.at(1, 0) * R.at(2, 1) - R.at(1, 1) * R.at(2, 0));
  if (err > 1e-9 || std::fabs(det - 1.0) > 1e-9)
    throw std::invalid_argument("wigner_d: input is not a rotation matrix");
}

// D^1 is the rotation itself in the (y, z, x) component ordering
Tensor wigner_d1(const Mat3& R) {
  static const int perm[3] = {1, 2, 0};
  Tensor d = Tensor::zeros({3, 3});
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      d.v[static_cast<size_t>(3 * a + b)] = R.at(perm[a], perm[b]);
  return d;
}

// raising map for degree l: rows of the (l-1, 1, l) coupling table,
// orthonormal in the unitary normalization
const Tensor& raising_matrix(int l) {
  static const auto mats = [] {
    std::vector<Tensor> m(kMaxDegree + 1);
    for (int l = 2; l <= kMaxDegree; ++l) {
      const CGTable& cg = cg_store().tables.at({l - 1, 1, l});
      int dprev = 2 * (l - 1) + 1, dl = 2 * l + 1;
      Tensor M = Tensor::zeros({dl, dprev * 3});
      for (int m3 = -l; m3 <= l; ++m3)
        for (int m1 = -(l - 1); m1 <= l - 1; ++m1)
          for (int m2 = -1; m2 <= 1; ++m2)
            M.v[static_cast<size_t>((m3 + l) * dprev * 3 +
                                    (m1 + l - 1) * 3 + (m2 + 1))] =
                cg.at(m1, m2, m3);
      // verify row orthonormality, then normalize exactly
      for (int r = 0; r < dl; ++r) {
        double nrm = 0.0;
        for (int c = 0; c < dprev * 3; ++c) {
          double x = M.v[static_cast<size_t>(r * dprev * 3 + c)];
          nrm += x * x;
        }
        if (std::fabs(nrm - 1.0) > 1e-9)
          throw std::logic_error("raising matrix rows are not orthonormal");
        double s = 1.0 / std::sqrt(nrm);
        for (int c = 0; c < dprev * 3; ++c)
          M.v[static_cast<size_t>(r * dprev * 3 + c)] *= s;
      }
      m[static_cast<size_t>(l)] = std::move(M);
    }
    return m;
  }();
  return mats[static_cast<size_t>(l)];
}

Tensor kron(const Tensor& a, const Tensor& b) {
  int64_t ar = a.shape[0], ac = a.shape[1], br = b.shape[0], bc = b.shape[1];
  Tensor out = Tensor::zeros({ar * br, ac * bc});
  for (int64_t i = 0; i < ar; ++i)
    for (int64_t j = 0; j < ac; ++j) {
      double av = a.v[static_cast<size_t>(i * ac + j)];
      for (int64_t k = 0; k < br; ++k)
        for (int64_t l = 0; l < bc; ++l)
          out.v[static_cast<size_t>((i * br + k) * (ac * bc) + j * bc + l)] =
              av * b.v[static_cast<size_t>(k * bc + l)];
    }
  return out;
}

Tensor mat_mul(const Tensor& a, const Tensor& b) {
  int64_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = a.v[static_cast<size_t>(i * k + kk)];
      for (int64_t j = 0; j < m; ++j)
        out.v[static_cast<size_t>(i * m + j)] +=
            av * b.v[static_cast<size_t>(kk * m + j)];
    }
  return out;
}

Tensor mat_transpose(const Tensor& a) {
  int64_t n = a.shape[0], m = a.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j)
      out.v[static_cast<size_t>(j * n + i)] =
          a.v[static_cast<size_t>(i * m + j)];
  return out;
}

}  // namespace

std::vector<double> real_sph(int l, const Vec3& n) {
  require_degree(l);
  if (std::fabs(n.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("real_sph: direction is not a unit vector");
  std::vector<double> out(static_cast<size_t>(2 * l + 1));
  sph_into(l, n.x, n.y, n.z, out.data());
  return out;
}

IrrepsVector sph_all(DegreeRange L, const Vec3& n) {
  if (std::fabs(n.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("sph_all: direction is not a unit vector");
  std::vector<double> data(static_cast<size_t>(L.dim()));
  for (int l = L.l_min; l <= L.l_max; ++l)
    sph_into(l, n.x, n.y, n.z, data.data() + L.offset(l));
  return IrrepsVector(L, std::move(data));
}

Tensor wigner_d(int l, const Mat3& R) {
  require_degree(l);
  require_rotation(R);
  if (l == 0) return Tensor({1, 1}, {1.0});
  Tensor d = wigner_d1(R);
  for (int deg = 2; deg <= l; ++deg) {
    const Tensor& M = raising_matrix(deg);
    Tensor kr = kron(d, wigner_d1(R));
    d = mat_mul(mat_mul(M, kr), mat_transpose(M));
  }
  return d;
}

Tensor wigner_d_block(DegreeRange L, const Mat3& R) {
  int dim = L.dim();
  Tensor out = Tensor::zeros({dim, dim});
  for (int l = L.l_min; l <= L.l_max; ++l) {
    Tensor dl = wigner_d(l, R);
    int off = L.offset(l), bd = 2 * l + 1;
    for (int i = 0; i < bd; ++i)
      for (int j = 0; j < bd; ++j)
        out.v[static_cast<size_t>((off + i) * dim + off + j)] =
            dl.v[static_cast<size_t>(i * bd + j)];
  }
  return out;
}

bool cg_triple_valid(int l1, int l2, int l3) {
  return l1 >= 0 && l2 >= 0 && l3 >= std::abs(l1 - l2) && l3 <= l1 + l2 &&
         l1 <= kMaxDegree && l2 <= kMaxDegree && l3 <= kMaxDegree;
}

const CGTable& cg_table(int l1, int l2, int l3) {
  require_degree(l1);
  require_degree(l2);
  require_degree(l3);
  if (!cg_triple_valid(l1, l2, l3))
    throw std::invalid_argument(
        "cg_table: (" + std::to_string(l1) + ", " + std::to_string(l2) +
        ", " + std::to_string(l3) + ") violates the triangle inequality");
  return cg_store().tables.at({l1, l2, l3});
}

std::vector<double> contract(const CGTable& t, const std::vector<double>& a,
                             const std::vector<double>& b) {
  const int d1 = 2 * t.l1 + 1, d2 = 2 * t.l2 + 1, d3 = 2 * t.l3 + 1;
  if (static_cast<int>(a.size()) != d1 || static_cast<int>(b.size()) != d2)
    throw std::invalid_argument("contract: block length mismatch");
  std::vector<double> out(static_cast<size_t>(d3), 0.0);
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < d2; ++j) {
      double ab = a[static_cast<size_t>(i)] * b[static_cast<size_t>(j)];
      const double* row = t.c.data() + (i * d2 + j) * d3;
      for (int k = 0; k < d3; ++k) out[static_cast<size_t>(k)] += ab * row[k];
    }
  return out;
}

std::vector<double> contract(const std::vector<double>& a, int l1,
                             const std::vector<double>& b, int l2, int l3) {
  return contract(cg_table(l1, l2, l3), a, b);
}

// --- tape-side ----------------------------------------------------------------

Var sph_blocks(const Var& unit_dirs, DegreeRange L) {
  if (unit_dirs.shape().size() != 2 || unit_dirs.shape()[1] != 3)
    throw std::invalid_argument("sph_blocks: expected (m x 3) directions");
  const int64_t m = unit_dirs.shape()[0];
  Var x = slice(unit_dirs, 1, 0, 1);
  Var y = slice(unit_dirs, 1, 1, 1);
  Var z = slice(unit_dirs, 1, 2, 1);
  const double s3 = std::sqrt(3.0);
  const double s15 = std::sqrt(15.0);
  const double c3a = std::sqrt(10.0) / 4.0;
  const double c3b = std::sqrt(6.0) / 4.0;
  const double c4a = std::sqrt(35.0) / 2.0;
  const double c4b = std::sqrt(35.0 / 2.0) / 2.0;
  const double c4c = std::sqrt(5.0) / 2.0;
  const double c4d = std::sqrt(10.0) / 4.0;
  const double c4e = std::sqrt(5.0) / 4.0;
  const double c4f = std::sqrt(35.0) / 8.0;

  std::vector<Var> cols;
  for (int l = L.l_min; l <= L.l_max; ++l) {
    switch (l) {
      case 0:
        cols.push_back(Var::constant(Tensor::full({m, 1}, 1.0)));
        break;
      case 1:
        cols.push_back(y);
        cols.push_back(z);
        cols.push_back(x);
        break;
      case 2: {
        Var x2 = mul(x, x), y2 = mul(y, y), z2 = mul(z, z);
        cols.push_back(mul_scalar(mul(x, y), s3));
        cols.push_back(mul_scalar(mul(y, z), s3));
        cols.push_back(mul_scalar(add_scalar(mul_scalar(z2, 3.0), -1.0), 0.5));
        cols.push_back(mul_scalar(mul(x, z), s3));
        cols.push_back(mul_scalar(sub(x2, y2), 0.5 * s3));
        break;
      }
      case 3: {
        Var x2 = mul(x, x), y2 = mul(y, y), z2 = mul(z, z);
        Var fz = add_scalar(mul_scalar(z2, 5.0), -1.0);  // 5z^2 - 1
        cols.push_back(mul_scalar(
            mul(y, sub(mul_scalar(x2, 3.0), y2)), c3a));
        cols.push_back(mul_scalar(mul(mul(x, y), z), s15));
        cols.push_back(mul_scalar(mul(y, fz), c3b));
        cols.push_back(mul_scalar(
            mul(z, add_scalar(mul_scalar(z2, 5.0), -3.0)), 0.5));
        cols.push_back(mul_scalar(mul(x, fz), c3b));
        cols.push_back(mul_scalar(mul(z, sub(x2, y2)), 0.5 * s15));
        cols.push_back(mul_scalar(
            mul(x, sub(x2, mul_scalar(y2, 3.0))), c3a));
        break;
      }
      case 4: {
        Var x2 = mul(x, x), y2 = mul(y, y), z2 = mul(z, z);
        Var g1 = add_scalar(mul_scalar(z2, 7.0), -1.0);  // 7z^2 - 1
        Var g3 = add_scalar(mul_scalar(z2, 7.0), -3.0);  // 7z^2 - 3
        cols.push_back(mul_scalar(mul(mul(x, y), sub(x2, y2)), c4a));
        cols.push_back(mul_scalar(
            mul(mul(y, z), sub(mul_scalar(x2, 3.0), y2)), c4b));
        cols.push_back(mul_scalar(mul(mul(x, y), g1), c4c));
        cols.push_back(mul_scalar(mul(mul(y, z), g3), c4d));
        Var z4 = mul(z2, z2);
        cols.push_back(mul_scalar(
            add_scalar(sub(mul_scalar(z4, 35.0), mul_scalar(z2, 30.0)), 3.0),
            0.125));
        cols.push_back(mul_scalar(mul(mul(x, z), g3), c4d));
        cols.push_back(mul_scalar(mul(sub(x2, y2), g1), c4e));
        cols.push_back(mul_scalar(
            mul(mul(x, z), sub(x2, mul_scalar(y2, 3.0))), c4b));
        Var quart = add(sub(mul(x2, x2), mul_scalar(mul(x2, y2), 6.0)),
                        mul(y2, y2));
        cols.push_back(mul_scalar(quart, c4f));
        break;
      }
      default:
        throw std::invalid_argument("sph_blocks: unsupported degree");
    }
  }
  return concat(cols, 1);
}

Tensor contract_matrix(int l1, int l2, int l3) {
  const CGTable& t = cg_table(l1, l2, l3);
  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
  Tensor out = Tensor::zeros({static_cast<int64_t>(d1) * d2, d3});
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < d2; ++j)
      for (int k = 0; k < d3; ++k)
        out.v[static_cast<size_t>((i * d2 + j) * d3 + k)] =
            t.c[static_cast<size_t>((i * d2 + j) * d3 + k)];
  return out;
}

Var contract_rows(const Var& a, int l1, const Var& b, int l2, int l3) {
  const int64_t n = a.shape()[0];
  const int64_t d1 = 2 * l1 + 1, d2 = 2 * l2 + 1;
  if (a.shape()[1] != d1 || b.shape()[1] != d2 || b.shape()[0] != n)
    throw std::invalid_argument("contract_rows: block shape mismatch");
  Var outer = mul(reshape(a, {n, d1, 1}), reshape(b, {n, 1, d2}));
  Var flat = reshape(outer, {n, d1 * d2});
  return matmul(flat, Var::constant(contract_matrix(l1, l2, l3)));
}

}  // namespace so3
}  // namespace sphnet
