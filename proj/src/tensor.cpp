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

#include "sphnet/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <sstream>

namespace sphnet {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> vals)
    : shape(std::move(s)), v(std::move(vals)) {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                " does not match " + std::to_string(v.size()) +
                                " values");
}

Tensor Tensor::zeros(Shape s) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape s, double value) {
  int64_t n = shape_numel(s);
  return Tensor(std::move(s),
                std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item: tensor has " + std::to_string(numel()) +
                                " elements");
  return v[0];
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kAddScalar: return "add_scalar";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kPowScalar: return "pow_scalar";
    case Op::kMatMul: return "matmul";
    case Op::kMatMulNT: return "matmul_nt";
    case Op::kMatMulTN: return "matmul_tn";
    case Op::kTranspose: return "transpose";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kSqrt: return "sqrt";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSilu: return "silu";
    case Op::kSumAxis: return "sum_axis";
    case Op::kSumAll: return "sum_all";
    case Op::kSoftmax: return "softmax";
    case Op::kGather: return "gather";
    case Op::kSegSum: return "segment_sum";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
  }
  return "?";
}

namespace {

constexpr int kMaxRank = 4;

void check_finite(const Tensor& t, Op op) {
  // x * 0.0 is 0 for finite x and NaN for inf/NaN, so the poison survives
  // the (vectorizable) sum
  double acc = 0.0;
  for (double x : t.v) acc += x * 0.0;
  if (acc != 0.0)
    throw NumericError(std::string("non-finite value in output of '") +
                       op_name(op) + "'");
}

Shape broadcast_shape(const Shape& a, const Shape& b, Op op) {
  size_t r = std::max(a.size(), b.size());
  if (r > kMaxRank)
    throw std::invalid_argument(std::string(op_name(op)) +
                                ": rank > 4 unsupported");
  Shape out(r, 1);
  for (size_t k = 0; k < r; ++k) {
    int64_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    int64_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(op_name(op)) +
                                  ": shapes not broadcastable " +
                                  shape_str(a) + " vs " + shape_str(b));
    out[k] = da == db ? da : (da == 1 ? db : da);
  }
  return out;
}

// strides into `s` when iterated with the (padded) shape of `out`;
// 0 where the axis broadcasts
void padded_strides(const Shape& s, const Shape& out, int64_t* st) {
  size_t r = out.size(), rs = s.size();
  int64_t acc = 1;
  std::vector<int64_t> own(rs);
  for (size_t k = rs; k-- > 0;) {
    own[k] = acc;
    acc *= s[k];
  }
  for (size_t k = 0; k < r; ++k) {
    if (k < r - rs) {
      st[k] = 0;
    } else {
      size_t ks = k - (r - rs);
      st[k] = (s[ks] == 1 && out[k] != 1) ? 0 : own[ks];
    }
  }
}

template <typename F>
Tensor ew_binary(const Tensor& a, const Tensor& b, Op op, F f) {
  if (a.shape == b.shape) {
    Tensor out = Tensor::zeros(a.shape);
    for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i], b.v[i]);
    return out;
  }
  if (b.numel() == 1 && b.rank() <= a.rank()) {
    Tensor out = Tensor::zeros(a.shape);
    double bv = b.v[0];
    for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i], bv);
    return out;
  }
  if (a.numel() == 1 && a.rank() <= b.rank()) {
    Tensor out = Tensor::zeros(b.shape);
    double av = a.v[0];
    for (size_t i = 0; i < b.v.size(); ++i) out.v[i] = f(av, b.v[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape, b.shape, op);
  Tensor out = Tensor::zeros(os);
  size_t r = os.size();
  int64_t d[kMaxRank] = {1, 1, 1, 1};
  for (size_t k = 0; k < r; ++k) d[kMaxRank - r + k] = os[k];
  int64_t sa[kMaxRank] = {0, 0, 0, 0}, sb[kMaxRank] = {0, 0, 0, 0};
  padded_strides(a.shape, os, sa + (kMaxRank - r));
  padded_strides(b.shape, os, sb + (kMaxRank - r));
  int64_t o = 0;
  for (int64_t i0 = 0; i0 < d[0]; ++i0)
    for (int64_t i1 = 0; i1 < d[1]; ++i1)
      for (int64_t i2 = 0; i2 < d[2]; ++i2) {
        int64_t oa = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
        int64_t ob = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
        for (int64_t i3 = 0; i3 < d[3]; ++i3)
          out.v[static_cast<size_t>(o++)] =
              f(a.v[static_cast<size_t>(oa + i3 * sa[3])],
                b.v[static_cast<size_t>(ob + i3 * sb[3])]);
      }
  return out;
}

template <typename F>
Tensor ew_unary(const Tensor& a, F f) {
  Tensor out = Tensor::zeros(a.shape);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i]);
  return out;
}

void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& alen,
                int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int k = 0; k < axis; ++k) outer *= s[static_cast<size_t>(k)];
  alen = s[static_cast<size_t>(axis)];
  for (size_t k = static_cast<size_t>(axis) + 1; k < s.size(); ++k)
    inner *= s[k];
}

Tensor eval_matmul(const Tensor& a, const Tensor& b) {
  int64_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int64_t i = 0; i < n; ++i) {
    double* orow = out.v.data() + i * m;
    const double* arow = a.v.data() + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      const double* brow = b.v.data() + kk * m;
      for (int64_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a (n,k) @ b (m,k)^T -> (n,m); contiguous dot products
Tensor eval_matmul_nt(const Tensor& a, const Tensor& b) {
  int64_t n = a.shape[0], k = a.shape[1], m = b.shape[0];
  Tensor out = Tensor::zeros({n, m});
  for (int64_t i = 0; i < n; ++i) {
    const double* arow = a.v.data() + i * k;
    double* orow = out.v.data() + i * m;
    for (int64_t j = 0; j < m; ++j) {
      const double* brow = b.v.data() + j * k;
      double s = 0;
      for (int64_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      orow[j] = s;
    }
  }
  return out;
}

// a (k,n)^T @ b (k,m) -> (n,m); rank-1 accumulation over k
Tensor eval_matmul_tn(const Tensor& a, const Tensor& b) {
  int64_t k = a.shape[0], n = a.shape[1], m = b.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (int64_t kk = 0; kk < k; ++kk) {
    const double* arow = a.v.data() + kk * n;
    const double* brow = b.v.data() + kk * m;
    for (int64_t i = 0; i < n; ++i) {
      double aki = arow[i];
      double* orow = out.v.data() + i * m;
      for (int64_t j = 0; j < m; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

Tensor eval_node(const Node& nd, const std::vector<const Tensor*>& in) {
  switch (nd.op) {
    case Op::kLeaf:
      return nd.val;
    case Op::kAdd:
      return ew_binary(*in[0], *in[1], nd.op,
                       [](double x, double y) { return x + y; });
    case Op::kSub:
      return ew_binary(*in[0], *in[1], nd.op,
                       [](double x, double y) { return x - y; });
    case Op::kMul:
      return ew_binary(*in[0], *in[1], nd.op,
                       [](double x, double y) { return x * y; });
    case Op::kDiv:
      return ew_binary(*in[0], *in[1], nd.op,
                       [](double x, double y) { return x / y; });
    case Op::kNeg:
      return ew_unary(*in[0], [](double x) { return -x; });
    case Op::kAddScalar: {
      double c = nd.scalar;
      return ew_unary(*in[0], [c](double x) { return x + c; });
    }
    case Op::kMulScalar: {
      double c = nd.scalar;
      return ew_unary(*in[0], [c](double x) { return x * c; });
    }
    case Op::kPowScalar: {
      double p = nd.scalar;
      return ew_unary(*in[0], [p](double x) { return std::pow(x, p); });
    }
    case Op::kMatMul:
      return eval_matmul(*in[0], *in[1]);
    case Op::kMatMulNT:
      return eval_matmul_nt(*in[0], *in[1]);
    case Op::kMatMulTN:
      return eval_matmul_tn(*in[0], *in[1]);
    case Op::kTranspose: {
      const Tensor& a = *in[0];
      int64_t n = a.shape[0], m = a.shape[1];
      Tensor out = Tensor::zeros({m, n});
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out.v[j * n + i] = a.v[i * m + j];
      return out;
    }
    case Op::kExp:
      return ew_unary(*in[0], [](double x) { return std::exp(x); });
    case Op::kLog:
      return ew_unary(*in[0], [](double x) { return std::log(x); });
    case Op::kSin:
      return ew_unary(*in[0], [](double x) { return std::sin(x); });
    case Op::kCos:
      return ew_unary(*in[0], [](double x) { return std::cos(x); });
    case Op::kSqrt:
      return ew_unary(*in[0], [](double x) { return std::sqrt(x); });
    case Op::kSigmoid:
      return ew_unary(*in[0],
                      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    case Op::kSilu:
      return ew_unary(*in[0],
                      [](double x) { return x / (1.0 + std::exp(-x)); });
    case Op::kSumAxis: {
      const Tensor& a = *in[0];
      int64_t outer, alen, inner;
      axis_split(a.shape, nd.axis, outer, alen, inner);
      Shape os = a.shape;
      os[static_cast<size_t>(nd.axis)] = 1;
      Tensor out = Tensor::zeros(os);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t x = 0; x < alen; ++x) {
          const double* src = a.v.data() + (o * alen + x) * inner;
          double* dst = out.v.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      return out;
    }
    case Op::kSumAll: {
      double s = 0.0;
      for (double x : in[0]->v) s += x;
      return Tensor::scalar(s);
    }
    case Op::kSoftmax: {
      const Tensor& a = *in[0];
      int64_t outer, alen, inner;
      axis_split(a.shape, nd.axis, outer, alen, inner);
      Tensor out = Tensor::zeros(a.shape);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const double* src = a.v.data() + o * alen * inner + i;
          double* dst = out.v.data() + o * alen * inner + i;
          double mx = src[0];
          for (int64_t x = 1; x < alen; ++x) mx = std::max(mx, src[x * inner]);
          double z = 0.0;
          for (int64_t x = 0; x < alen; ++x) {
            double e = std::exp(src[x * inner] - mx);
            dst[x * inner] = e;
            z += e;
          }
          for (int64_t x = 0; x < alen; ++x) dst[x * inner] /= z;
        }
      return out;
    }
    case Op::kGather: {
      const Tensor& a = *in[0];
      const IndexList& rows = *nd.idx;
      int64_t rs = a.shape[0] > 0 ? a.numel() / a.shape[0] : shape_numel(
          Shape(a.shape.begin() + 1, a.shape.end()));
      Shape os = a.shape;
      os[0] = static_cast<int64_t>(rows.size());
      Tensor out = Tensor::zeros(os);
      for (size_t r = 0; r < rows.size(); ++r)
        std::copy_n(a.v.data() + rows[r] * rs, rs, out.v.data() + r * rs);
      return out;
    }
    case Op::kSegSum: {
      const Tensor& a = *in[0];
      const IndexList& seg = *nd.idx;
      int64_t rs = a.shape[0] > 0 ? a.numel() / a.shape[0] : shape_numel(
          Shape(a.shape.begin() + 1, a.shape.end()));
      Shape os = a.shape;
      os[0] = nd.nseg;
      Tensor out = Tensor::zeros(os);
      for (size_t r = 0; r < seg.size(); ++r) {
        const double* src = a.v.data() + static_cast<int64_t>(r) * rs;
        double* dst = out.v.data() + seg[r] * rs;
        for (int64_t i = 0; i < rs; ++i) dst[i] += src[i];
      }
      return out;
    }
    case Op::kConcat: {
      int axis = nd.axis;
      Shape os = in[0]->shape;
      int64_t total = 0;
      for (const Tensor* t : in) total += t->shape[static_cast<size_t>(axis)];
      os[static_cast<size_t>(axis)] = total;
      int64_t outer, alen, inner;
      axis_split(os, axis, outer, alen, inner);
      (void)alen;
      Tensor out = Tensor::zeros(os);
      int64_t off = 0;
      for (const Tensor* t : in) {
        int64_t tl = t->shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o)
          std::copy_n(t->v.data() + o * tl * inner, tl * inner,
                      out.v.data() + (o * total + off) * inner);
        off += tl;
      }
      return out;
    }
    case Op::kSlice: {
      const Tensor& a = *in[0];
      int64_t outer, alen, inner;
      axis_split(a.shape, nd.axis, outer, alen, inner);
      Shape os = a.shape;
      os[static_cast<size_t>(nd.axis)] = nd.len;
      Tensor out = Tensor::zeros(os);
      for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a.v.data() + (o * alen + nd.start) * inner, nd.len * inner,
                    out.v.data() + o * nd.len * inner);
      return out;
    }
    case Op::kReshape: {
      Tensor out = *in[0];
      out.shape = nd.reshape;
      return out;
    }
  }
  throw std::logic_error("eval_node: bad op");
}

}  // namespace

// --- Var / Tape --------------------------------------------------------------

Var Var::constant(Tensor t) {
  Var v;
  v.cval_ = std::make_shared<const Tensor>(std::move(t));
  return v;
}

const Tensor& Var::val() const {
  if (tape_ != nullptr) return tape_->node(id_).val;
  if (cval_ != nullptr) return *cval_;
  throw std::logic_error("Var: undefined");
}

Var Tape::leaf(Tensor t) {
  check_finite(t, Op::kLeaf);
  Node nd;
  nd.op = Op::kLeaf;
  nd.val = std::move(t);
  return push_node(std::move(nd));
}

Var Tape::var(int32_t id) {
  Var v;
  v.tape_ = this;
  v.id_ = id;
  return v;
}

Var Tape::push_node(Node&& nd) {
  nodes_.push_back(std::move(nd));
  Var v;
  v.tape_ = this;
  v.id_ = static_cast<int32_t>(nodes_.size()) - 1;
  return v;
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> vals;
  vals.reserve(nodes_.size());
  std::vector<const Tensor*> in;
  for (const Node& nd : nodes_) {
    if (nd.op == Op::kLeaf) {
      vals.push_back(nd.val);
      continue;
    }
    in.clear();
    for (int32_t i : nd.in) in.push_back(&vals[static_cast<size_t>(i)]);
    vals.push_back(eval_node(nd, in));
  }
  return vals;
}

namespace {

Var apply(Node&& meta, const std::vector<Var>& ins) {
  Tape* tp = nullptr;
  for (const Var& v : ins) {
    if (!v.defined()) throw std::invalid_argument("op on undefined Var");
    if (v.on_tape()) {
      if (tp != nullptr && tp != v.tape())
        throw std::invalid_argument("operands recorded on different tapes");
      tp = v.tape();
    }
  }
  std::vector<const Tensor*> vals;
  vals.reserve(ins.size());
  for (const Var& v : ins) vals.push_back(&v.val());
  Tensor out = eval_node(meta, vals);
  check_finite(out, meta.op);
  if (tp == nullptr) return Var::constant(std::move(out));
  meta.in.clear();
  for (const Var& v : ins)
    meta.in.push_back(v.on_tape() ? v.id() : tp->leaf(v.val()).id());
  meta.val = std::move(out);
  return tp->push_node(std::move(meta));
}

void require_rank2(const Var& a, const char* what) {
  if (a.shape().size() != 2)
    throw std::invalid_argument(std::string(what) + ": expected rank-2, got " +
                                shape_str(a.shape()));
}

void require_axis(const Var& a, int axis, const char* what) {
  if (axis < 0 || axis >= static_cast<int>(a.shape().size()))
    throw std::invalid_argument(std::string(what) + ": axis " +
                                std::to_string(axis) + " out of range for " +
                                shape_str(a.shape()));
}

}  // namespace

// --- public ops --------------------------------------------------------------

namespace {

Node make(Op op) {
  Node nd;
  nd.op = op;
  return nd;
}

Var binary(Op op, const Var& a, const Var& b) {
  broadcast_shape(a.shape(), b.shape(), op);  // validate early
  return apply(make(op), {a, b});
}

Var unary(Op op, const Var& a) { return apply(make(op), {a}); }

}  // namespace

Var add(const Var& a, const Var& b) { return binary(Op::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Op::kSub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Op::kMul, a, b); }
Var div(const Var& a, const Var& b) { return binary(Op::kDiv, a, b); }
Var neg(const Var& a) { return unary(Op::kNeg, a); }

Var add_scalar(const Var& a, double c) {
  Node nd = make(Op::kAddScalar);
  nd.scalar = c;
  return apply(std::move(nd), {a});
}

Var mul_scalar(const Var& a, double c) {
  Node nd = make(Op::kMulScalar);
  nd.scalar = c;
  return apply(std::move(nd), {a});
}

Var pow_scalar(const Var& a, double p) {
  Node nd = make(Op::kPowScalar);
  nd.scalar = p;
  return apply(std::move(nd), {a});
}

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                shape_str(a.shape()) + " @ " +
                                shape_str(b.shape()));
  return apply(make(Op::kMatMul), {a, b});
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.shape()[1] != b.shape()[1])
    throw std::invalid_argument("matmul_nt: inner dimensions differ, " +
                                shape_str(a.shape()) + " @ " +
                                shape_str(b.shape()) + "^T");
  return apply(make(Op::kMatMulNT), {a, b});
}

Var matmul_tn(const Var& a, const Var& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.shape()[0] != b.shape()[0])
    throw std::invalid_argument("matmul_tn: inner dimensions differ, " +
                                shape_str(a.shape()) + "^T @ " +
                                shape_str(b.shape()));
  return apply(make(Op::kMatMulTN), {a, b});
}

Var transpose(const Var& a) {
  require_rank2(a, "transpose");
  return unary(Op::kTranspose, a);
}

Var exp(const Var& a) { return unary(Op::kExp, a); }
Var log(const Var& a) { return unary(Op::kLog, a); }
Var sin(const Var& a) { return unary(Op::kSin, a); }
Var cos(const Var& a) { return unary(Op::kCos, a); }
Var sqrt(const Var& a) { return unary(Op::kSqrt, a); }
Var sigmoid(const Var& a) { return unary(Op::kSigmoid, a); }
Var silu(const Var& a) { return unary(Op::kSilu, a); }

Var sum_axis(const Var& a, int axis, bool keepdim) {
  require_axis(a, axis, "sum_axis");
  Node nd = make(Op::kSumAxis);
  nd.axis = axis;
  Var kept = apply(std::move(nd), {a});
  if (keepdim) return kept;
  Shape s = kept.shape();
  s.erase(s.begin() + axis);
  return reshape(kept, s);
}

Var sum_all(const Var& a) { return unary(Op::kSumAll, a); }

Var softmax(const Var& a, int axis) {
  require_axis(a, axis, "softmax");
  if (a.shape()[static_cast<size_t>(axis)] == 0)
    throw std::invalid_argument("softmax: empty axis");
  Node nd = make(Op::kSoftmax);
  nd.axis = axis;
  return apply(std::move(nd), {a});
}

Var gather(const Var& a, std::shared_ptr<const IndexList> rows) {
  if (a.shape().empty())
    throw std::invalid_argument("gather: rank-0 input");
  for (int64_t r : *rows)
    if (r < 0 || r >= a.shape()[0])
      throw std::invalid_argument("gather: row index " + std::to_string(r) +
                                  " out of range for " + shape_str(a.shape()));
  Node nd = make(Op::kGather);
  nd.idx = std::move(rows);
  return apply(std::move(nd), {a});
}

Var gather(const Var& a, const IndexList& rows) {
  return gather(a, std::make_shared<const IndexList>(rows));
}

Var segment_sum(const Var& a, std::shared_ptr<const IndexList> segments,
                int64_t n_segments) {
  if (a.shape().empty())
    throw std::invalid_argument("segment_sum: rank-0 input");
  if (static_cast<int64_t>(segments->size()) != a.shape()[0])
    throw std::invalid_argument(
        "segment_sum: got " + std::to_string(segments->size()) +
        " segment ids for " + std::to_string(a.shape()[0]) + " rows");
  for (int64_t s : *segments)
    if (s < 0 || s >= n_segments)
      throw std::invalid_argument("segment_sum: segment id " +
                                  std::to_string(s) + " out of range");
  Node nd = make(Op::kSegSum);
  nd.idx = std::move(segments);
  nd.nseg = n_segments;
  return apply(std::move(nd), {a});
}

Var segment_sum(const Var& a, const IndexList& segments, int64_t n_segments) {
  return segment_sum(a, std::make_shared<const IndexList>(segments),
                     n_segments);
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (parts.size() == 1) return parts[0];
  const Shape& s0 = parts[0].shape();
  require_axis(parts[0], axis, "concat");
  for (const Var& p : parts) {
    if (p.shape().size() != s0.size())
      throw std::invalid_argument("concat: rank mismatch");
    for (size_t k = 0; k < s0.size(); ++k)
      if (static_cast<int>(k) != axis && p.shape()[k] != s0[k])
        throw std::invalid_argument("concat: shape mismatch off axis, " +
                                    shape_str(p.shape()) + " vs " +
                                    shape_str(s0));
  }
  Node nd = make(Op::kConcat);
  nd.axis = axis;
  return apply(std::move(nd), parts);
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  require_axis(a, axis, "slice");
  int64_t alen = a.shape()[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > alen)
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                ", " + std::to_string(start + len) +
                                ") out of bounds for axis of size " +
                                std::to_string(alen));
  Node nd = make(Op::kSlice);
  nd.axis = axis;
  nd.start = start;
  nd.len = len;
  return apply(std::move(nd), {a});
}

Var reshape(const Var& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " +
                                shape_str(s) + " changes element count");
  if (s == a.shape()) return a;
  Node nd = make(Op::kReshape);
  nd.reshape = s;
  return apply(std::move(nd), {a});
}

// --- composites --------------------------------------------------------------

Var safe_norm(const Var& a, int axis, bool keepdim) {
  Var s = sum_axis(mul(a, a), axis, true);
  Var n = sqrt(add_scalar(s, kSafeNormEps));
  if (keepdim) return n;
  Shape sh = n.shape();
  sh.erase(sh.begin() + axis);
  return reshape(n, sh);
}

Var mean_all(const Var& a) {
  int64_t n = a.numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(n));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  return add(matmul(x, w), b);
}

Var linear(const Var& x, const Var& w) { return matmul(x, w); }

// --- reverse-mode differentiation ---------------------------------------------

namespace {

// sums g down to `target` (inverse of broadcasting)
Var reduce_to(const Var& g, const Shape& target) {
  Var r = g;
  int excess = static_cast<int>(r.shape().size()) -
               static_cast<int>(target.size());
  for (int k = 0; k < excess; ++k) {
    r = sum_axis(r, 0, true);
    Shape ns(r.shape().begin() + 1, r.shape().end());
    r = reshape(r, ns);
  }
  for (size_t ax = 0; ax < target.size(); ++ax)
    if (target[ax] == 1 && r.shape()[ax] != 1)
      r = sum_axis(r, static_cast<int>(ax), true);
  assert(r.shape() == target);
  return r;
}

void accumulate(std::vector<Var>& adj, int32_t id, const Var& g) {
  if (id >= static_cast<int32_t>(adj.size())) return;
  adj[static_cast<size_t>(id)] = adj[static_cast<size_t>(id)].defined()
                                     ? add(adj[static_cast<size_t>(id)], g)
                                     : g;
}

void backward_node(Tape& tp, int32_t nid, const Var& g,
                   std::vector<Var>& adj) {
  const Node& nd = tp.node(nid);  // deque: reference stays valid on append
  Var y = tp.var(nid);
  switch (nd.op) {
    case Op::kLeaf:
      return;
    case Op::kAdd: {
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], reduce_to(g, a.shape()));
      accumulate(adj, nd.in[1], reduce_to(g, b.shape()));
      return;
    }
    case Op::kSub: {
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], reduce_to(g, a.shape()));
      accumulate(adj, nd.in[1], reduce_to(neg(g), b.shape()));
      return;
    }
    case Op::kMul: {
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], reduce_to(mul(g, b), a.shape()));
      accumulate(adj, nd.in[1], reduce_to(mul(g, a), b.shape()));
      return;
    }
    case Op::kDiv: {
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], reduce_to(div(g, b), a.shape()));
      accumulate(adj, nd.in[1], reduce_to(neg(div(mul(g, y), b)), b.shape()));
      return;
    }
    case Op::kNeg:
      accumulate(adj, nd.in[0], neg(g));
      return;
    case Op::kAddScalar:
      accumulate(adj, nd.in[0], g);
      return;
    case Op::kMulScalar:
      accumulate(adj, nd.in[0], mul_scalar(g, nd.scalar));
      return;
    case Op::kPowScalar: {
      if (nd.scalar == 0.0) return;
      Var a = tp.var(nd.in[0]);
      Var d = nd.scalar == 1.0
                  ? g
                  : mul(g, mul_scalar(pow_scalar(a, nd.scalar - 1.0),
                                      nd.scalar));
      accumulate(adj, nd.in[0], d);
      return;
    }
    case Op::kMatMul: {
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], matmul_nt(g, b));
      accumulate(adj, nd.in[1], matmul_tn(a, g));
      return;
    }
    case Op::kMatMulNT: {  // c = a b^T
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], matmul(g, b));
      accumulate(adj, nd.in[1], matmul_tn(g, a));
      return;
    }
    case Op::kMatMulTN: {  // c = a^T b
      Var a = tp.var(nd.in[0]), b = tp.var(nd.in[1]);
      accumulate(adj, nd.in[0], matmul_nt(b, g));
      accumulate(adj, nd.in[1], matmul(a, g));
      return;
    }
    case Op::kTranspose:
      accumulate(adj, nd.in[0], transpose(g));
      return;
    case Op::kExp:
      accumulate(adj, nd.in[0], mul(g, y));
      return;
    case Op::kLog:
      accumulate(adj, nd.in[0], div(g, tp.var(nd.in[0])));
      return;
    case Op::kSin:
      accumulate(adj, nd.in[0], mul(g, cos(tp.var(nd.in[0]))));
      return;
    case Op::kCos:
      accumulate(adj, nd.in[0], neg(mul(g, sin(tp.var(nd.in[0])))));
      return;
    case Op::kSqrt:
      accumulate(adj, nd.in[0], mul_scalar(div(g, y), 0.5));
      return;
    case Op::kSigmoid: {
      Var one_minus = add_scalar(neg(y), 1.0);
      accumulate(adj, nd.in[0], mul(mul(g, y), one_minus));
      return;
    }
    case Op::kSilu: {
      Var a = tp.var(nd.in[0]);
      Var s = sigmoid(a);
      Var t = mul(s, add_scalar(neg(s), 1.0));
      accumulate(adj, nd.in[0], mul(g, add(s, mul(a, t))));
      return;
    }
    case Op::kSumAxis: {
      Var a = tp.var(nd.in[0]);
      accumulate(adj, nd.in[0],
                 add(g, Var::constant(Tensor::zeros(a.shape()))));
      return;
    }
    case Op::kSumAll: {
      Var a = tp.var(nd.in[0]);
      accumulate(adj, nd.in[0],
                 add(g, Var::constant(Tensor::zeros(a.shape()))));
      return;
    }
    case Op::kSoftmax: {
      Var t = mul(g, y);
      Var corr = sub(g, sum_axis(t, nd.axis, true));
      accumulate(adj, nd.in[0], mul(y, corr));
      return;
    }
    case Op::kGather: {
      Var a = tp.var(nd.in[0]);
      accumulate(adj, nd.in[0], segment_sum(g, nd.idx, a.shape()[0]));
      return;
    }
    case Op::kSegSum:
      accumulate(adj, nd.in[0], gather(g, nd.idx));
      return;
    case Op::kConcat: {
      int64_t off = 0;
      for (int32_t iid : nd.in) {
        Var p = tp.var(iid);
        int64_t plen = p.shape()[static_cast<size_t>(nd.axis)];
        if (plen > 0) accumulate(adj, iid, slice(g, nd.axis, off, plen));
        off += plen;
      }
      return;
    }
    case Op::kSlice: {
      Var a = tp.var(nd.in[0]);
      int64_t alen = a.shape()[static_cast<size_t>(nd.axis)];
      std::vector<Var> parts;
      if (nd.start > 0) {
        Shape s = a.shape();
        s[static_cast<size_t>(nd.axis)] = nd.start;
        parts.push_back(Var::constant(Tensor::zeros(s)));
      }
      parts.push_back(g);
      if (nd.start + nd.len < alen) {
        Shape s = a.shape();
        s[static_cast<size_t>(nd.axis)] = alen - nd.start - nd.len;
        parts.push_back(Var::constant(Tensor::zeros(s)));
      }
      accumulate(adj, nd.in[0],
                 parts.size() == 1 ? parts[0] : concat(parts, nd.axis));
      return;
    }
    case Op::kReshape: {
      Var a = tp.var(nd.in[0]);
      accumulate(adj, nd.in[0], reshape(g, a.shape()));
      return;
    }
  }
}

}  // namespace

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt) {
  if (!output.on_tape())
    throw std::invalid_argument("grad: output is detached (not on a tape)");
  if (output.numel() != 1)
    throw std::invalid_argument("grad: output must be a scalar, got " +
                                shape_str(output.shape()));
  Tape& tp = *output.tape();
  const int32_t out_id = output.id();
  std::vector<Var> adj(static_cast<size_t>(out_id) + 1);
  adj[static_cast<size_t>(out_id)] =
      Var::constant(Tensor::full(output.shape(), 1.0));
  for (int32_t nid = out_id; nid >= 0; --nid) {
    if (!adj[static_cast<size_t>(nid)].defined()) continue;
    backward_node(tp, nid, adj[static_cast<size_t>(nid)], adj);
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (!w.on_tape() || w.tape() != &tp)
      throw std::invalid_argument("grad: wrt tensor is detached from the "
                                  "output's tape");
    if (w.id() <= out_id && adj[static_cast<size_t>(w.id())].defined())
      out.push_back(adj[static_cast<size_t>(w.id())]);
    else
      out.push_back(Var::constant(Tensor::zeros(w.shape())));
  }
  return out;
}

Var grad_one(const Var& output, const Var& wrt) {
  return grad(output, std::vector<Var>{wrt})[0];
}

}  // namespace sphnet
