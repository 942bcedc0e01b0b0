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

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sphnet/errors.hpp"

namespace sphnet {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense float-64 array, row-major.
struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> vals);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double value);
  static Tensor scalar(double value);  // rank-0

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int axis) const { return shape[static_cast<size_t>(axis)]; }
  double item() const;  // requires numel == 1
};

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kAddScalar,
  kMulScalar,
  kPowScalar,
  kMatMul,
  kMatMulNT,  // a @ b^T
  kMatMulTN,  // a^T @ b
  kTranspose,
  kExp,
  kLog,
  kSin,
  kCos,
  kSqrt,
  kSigmoid,
  kSilu,
  kSumAxis,  // keeps the reduced axis with size 1
  kSumAll,   // rank-0 output
  kSoftmax,
  kGather,   // rows along axis 0
  kSegSum,   // scatter-add rows along axis 0
  kConcat,
  kSlice,
  kReshape,
};

const char* op_name(Op op);

using IndexList = std::vector<int64_t>;

// One recorded primitive application. Saved attributes are whatever the
// forward kernel needs so the tape can be replayed without the Var objects.
struct Node {
  Op op = Op::kLeaf;
  std::vector<int32_t> in;
  Tensor val;
  double scalar = 0.0;
  int axis = 0;
  int64_t start = 0;
  int64_t len = 0;
  int64_t nseg = 0;
  std::shared_ptr<const IndexList> idx;
  Shape reshape;
};

class Tape;

// A tensor value, optionally recorded on a tape. Constants carry only a
// value; they get registered as leaves lazily when an op mixes them with
// tape-recorded inputs.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor t);
  static Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

  const Tensor& val() const;
  const Shape& shape() const { return val().shape; }
  int64_t numel() const { return val().numel(); }
  double item() const { return val().item(); }

  bool defined() const { return tape_ != nullptr || cval_ != nullptr; }
  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int32_t id() const { return id_; }

 private:
  friend class Tape;
  std::shared_ptr<const Tensor> cval_;  // set for constants
  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

// Append-only record of primitive applications. Nodes live in a deque so
// references stay valid while the backward pass appends new nodes.
class Tape {
 public:
  Var leaf(Tensor t);

  int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  Var var(int32_t id);

  // Re-executes every non-leaf node from the stored leaf values and returns
  // the recomputed values, in node order. Bit-identical to the stored values
  // by construction of the (deterministic) kernels.
  std::vector<Tensor> replay() const;

  void clear() { nodes_.clear(); }

  // internal: append a fully evaluated node
  Var push_node(Node&& nd);

 private:
  std::deque<Node> nodes_;
};

// --- primitive operations ---------------------------------------------------
// Binary elementwise ops broadcast numpy-style (right-aligned, size-1 axes
// stretch). Every op checks shapes and rejects non-finite outputs.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var pow_scalar(const Var& a, double p);
Var matmul(const Var& a, const Var& b);     // 2-D only
Var matmul_nt(const Var& a, const Var& b);  // a @ b^T
Var matmul_tn(const Var& a, const Var& b);  // a^T @ b
Var transpose(const Var& a);                // 2-D only
Var exp(const Var& a);
Var log(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var sum_axis(const Var& a, int axis, bool keepdim = false);
Var sum_all(const Var& a);
Var softmax(const Var& a, int axis);
Var gather(const Var& a, std::shared_ptr<const IndexList> rows);
Var gather(const Var& a, const IndexList& rows);
Var segment_sum(const Var& a, std::shared_ptr<const IndexList> segments,
                int64_t n_segments);
Var segment_sum(const Var& a, const IndexList& segments, int64_t n_segments);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);
Var reshape(const Var& a, Shape s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return mul_scalar(a, c); }
inline Var operator*(const Var& a, double c) { return mul_scalar(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }

// --- composites --------------------------------------------------------------

constexpr double kSafeNormEps = 1e-12;

// sqrt(sum(x^2, axis) + eps): finite value and gradient at exactly zero input.
Var safe_norm(const Var& a, int axis, bool keepdim = false);

Var mean_all(const Var& a);
Var linear(const Var& x, const Var& w, const Var& b);  // x @ w + b
Var linear(const Var& x, const Var& w);

// --- differentiation ---------------------------------------------------------

// Reverse-mode gradient of a scalar output. The backward pass is emitted as
// tape nodes built from the primitives above, so results are themselves
// differentiable (apply grad again for second order). wrt entries that are
// not ancestors of the output get a zero-filled gradient.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt);
Var grad_one(const Var& output, const Var& wrt);

}  // namespace sphnet
