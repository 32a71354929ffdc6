#include "tape.hpp"

#include <algorithm>
#include <cmath>

namespace jfbctrl {

const Tensor& Var::value() const { return tape->value(*this); }

const Tensor& VjpResult::grad(Var v) const {
  auto it = leaf_grads.find(v.id);
  if (it == leaf_grads.end()) throw RuntimeError("vjp result: node was not requested as a leaf");
  return it->second;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "multiply";
    case Op::MatMul: return "matmul";
    case Op::Tanh: return "tanh";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Pow: return "power";
    case Op::Sum: return "sum";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Clamp: return "clamp";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_fail(Op op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

bool has_nan(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::isnan(t[i])) return true;
  return false;
}

// Rank-2 view used by matmul: vectors on the left act as rows, on the right as columns.
struct MatView {
  const Tensor* t;
  bool trans;
  bool as_row;
  std::size_t rows() const {
    std::size_t r = t->rank() == 2 ? t->shape()[0] : (as_row ? 1 : t->size());
    std::size_t c = t->rank() == 2 ? t->shape()[1] : (as_row ? t->size() : 1);
    return trans ? c : r;
  }
  std::size_t cols() const {
    std::size_t r = t->rank() == 2 ? t->shape()[0] : (as_row ? 1 : t->size());
    std::size_t c = t->rank() == 2 ? t->shape()[1] : (as_row ? t->size() : 1);
    return trans ? r : c;
  }
  double at(std::size_t i, std::size_t j) const {
    if (trans) std::swap(i, j);
    std::size_t c = t->rank() == 2 ? t->shape()[1] : (as_row ? t->size() : 1);
    return (*t)[i * c + j];
  }
};

Tensor mat_product(const MatView& a, const MatView& b, std::vector<std::size_t> out_shape) {
  Tensor out = Tensor::zeros(std::move(out_shape));
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a.at(i, l);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += av * b.at(l, j);
    }
  return out;
}

}  // namespace

Var Tape::record(Node n) {
  if (!open_) throw RuntimeError("tape: recording on a closed tape");
  n.scope = open_scope_;
  nodes_.push_back(std::move(n));
  ++stats_.node_count;
  stats_.live_node_count = nodes_.size();
  stats_.peak_node_count = std::max(stats_.peak_node_count, stats_.live_node_count);
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = Op::Leaf;
  return record(std::move(n));
}

Var Tape::detach(Var x) {
  if (x.tape != this) throw RuntimeError("detach: node belongs to a different tape");
  return leaf(nodes_[x.id].value);
}

void Tape::rewind(std::size_t mark) {
  if (mark > nodes_.size()) throw RuntimeError("tape: rewind past the end");
  if (open_scope_ >= 0 && scopes_[open_scope_].begin >= mark)
    throw RuntimeError("tape: rewind would drop an open operator scope");
  while (!scopes_.empty() && scopes_.back().begin >= mark) scopes_.pop_back();
  nodes_.resize(mark);
  stats_.live_node_count = nodes_.size();
}

void Tape::begin_operator_scope() {
  if (open_scope_ >= 0) throw RuntimeError("tape: operator scopes do not nest");
  ScopeRec s;
  s.begin = static_cast<std::uint32_t>(nodes_.size());
  scopes_.push_back(s);
  open_scope_ = static_cast<std::int32_t>(scopes_.size() - 1);
}

void Tape::end_operator_scope() {
  if (open_scope_ < 0) throw RuntimeError("tape: no operator scope is open");
  scopes_[open_scope_].end = static_cast<std::uint32_t>(nodes_.size());
  scopes_[open_scope_].closed = true;
  open_scope_ = -1;
}

VjpResult Tape::vjp(Var root, const Tensor& cotangent, std::span<const Var> leaves,
                    std::span<const Var> observed, bool attribute_scopes) {
  if (!open_) throw RuntimeError("vjp: tape is closed");
  if (root.tape != this || root.id >= nodes_.size()) throw RuntimeError("vjp: root is not on this tape");
  if (!cotangent.same_shape(nodes_[root.id].value))
    throw ShapeError("vjp: cotangent shape " + cotangent.shape_str() + " does not match root shape " +
                     nodes_[root.id].value.shape_str());
  if (has_nan(cotangent)) throw NumericError("vjp: NaN encountered in the seed cotangent");

  const std::size_t n = root.id + 1;
  std::vector<Tensor> adj(n);
  std::vector<char> touched(n, 0);
  std::vector<char> is_leaf(n, 0);
  std::vector<char> is_observed(n, 0);
  for (Var v : leaves) {
    if (v.tape != this) throw RuntimeError("vjp: leaf is not on this tape");
    if (v.id < n) is_leaf[v.id] = 1;
  }
  for (Var v : observed) {
    if (v.tape != this) throw RuntimeError("vjp: observed node is not on this tape");
    if (v.id < n) is_observed[v.id] = 1;
  }

  adj[root.id] = cotangent;
  touched[root.id] = 1;

  std::vector<char> scope_hit(scopes_.size(), 0);
  VjpResult res;

  auto deposit = [&](std::uint32_t parent, Tensor contrib, const Node& from) {
    if (has_nan(contrib))
      throw NumericError(std::string("vjp: NaN encountered at primitive '") + op_name(from.op) + "'");
    if (attribute_scopes && from.scope >= 0 && is_leaf[parent]) {
      auto& slot = res.per_scope[from.scope][parent];
      if (slot.size() == 0) slot = contrib;
      else
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += contrib[i];
    }
    if (!touched[parent]) {
      adj[parent] = std::move(contrib);
      touched[parent] = 1;
    } else {
      Tensor& a = adj[parent];
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += contrib[i];
    }
  };

  // Scalar-broadcast aware accumulation for add/sub/mul operands.
  auto deposit_bcast = [&](std::uint32_t parent, const Tensor& contrib, const Node& from) {
    const Tensor& pv = nodes_[parent].value;
    if (pv.same_shape(contrib)) {
      deposit(parent, contrib, from);
    } else if (pv.is_scalar()) {
      double s = 0.0;
      for (std::size_t i = 0; i < contrib.size(); ++i) s += contrib[i];
      deposit(parent, Tensor::scalar(s), from);
    } else {
      shape_fail(from.op, pv, contrib);
    }
  };

  for (std::uint32_t i = root.id + 1; i-- > 0;) {
    if (!touched[i]) continue;
    const Node& nd = nodes_[i];
    if (nd.scope >= 0 && !scope_hit[nd.scope]) {
      scope_hit[nd.scope] = 1;
      ++res.scopes_traversed;
    }
    if (is_observed[i]) res.observed[i] = adj[i];
    if (is_leaf[i] || nd.op == Op::Leaf) continue;

    const Tensor& c = adj[i];
    switch (nd.op) {
      case Op::Leaf:
        break;
      case Op::Affine: {
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= nd.a0;
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Add: {
        deposit_bcast(nd.parents[0], c, nd);
        deposit_bcast(nd.parents[1], c, nd);
        break;
      }
      case Op::Sub: {
        deposit_bcast(nd.parents[0], c, nd);
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = -g[k];
        deposit_bcast(nd.parents[1], g, nd);
        break;
      }
      case Op::Mul: {
        const Tensor& a = nodes_[nd.parents[0]].value;
        const Tensor& b = nodes_[nd.parents[1]].value;
        Tensor ga = c, gb = c;
        if (b.is_scalar() && !a.is_scalar()) {
          for (std::size_t k = 0; k < ga.size(); ++k) ga[k] *= b[0];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] *= a[k];
        } else if (a.is_scalar() && !b.is_scalar()) {
          for (std::size_t k = 0; k < ga.size(); ++k) ga[k] *= b[k];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] *= a[0];
        } else {
          for (std::size_t k = 0; k < ga.size(); ++k) ga[k] *= b[k];
          for (std::size_t k = 0; k < gb.size(); ++k) gb[k] *= a[k];
        }
        deposit_bcast(nd.parents[0], ga, nd);
        deposit_bcast(nd.parents[1], gb, nd);
        break;
      }
      case Op::MatMul: {
        const Tensor& a = nodes_[nd.parents[0]].value;
        const Tensor& b = nodes_[nd.parents[1]].value;
        const bool ta = nd.i0 != 0, tb = nd.i1 != 0;
        MatView av{&a, ta, /*as_row=*/true};
        MatView bv{&b, tb, /*as_row=*/false};
        // Cotangent in the rank-2 view of the product.
        MatView cv{&c, false, /*as_row=*/a.rank() != 2};
        // dA' = C B'^T, dB' = A'^T C; un-transpose into the operand layouts.
        MatView bvt{&b, !tb, false};
        MatView avt{&a, !ta, true};
        Tensor da_p = mat_product(cv, bvt, {cv.rows(), bvt.cols()});
        Tensor db_p = mat_product(avt, cv, {avt.rows(), cv.cols()});
        auto reshape_to = [](Tensor t, const Tensor& like, bool trans) {
          if (!trans) {
            Tensor out = Tensor::zeros(like.shape());
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = t[k];
            return out;
          }
          Tensor out = Tensor::zeros(like.shape());
          const std::size_t r = like.rank() == 2 ? like.shape()[0] : like.size();
          const std::size_t cc = like.rank() == 2 ? like.shape()[1] : 1;
          for (std::size_t x = 0; x < r; ++x)
            for (std::size_t y = 0; y < cc; ++y) out[x * cc + y] = t[y * r + x];
          return out;
        };
        deposit(nd.parents[0], reshape_to(std::move(da_p), a, ta), nd);
        deposit(nd.parents[1], reshape_to(std::move(db_p), b, tb), nd);
        break;
      }
      case Op::Tanh: {
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= 1.0 - nd.value[k] * nd.value[k];
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Sin: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= std::cos(x[k]);
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Cos: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= -std::sin(x[k]);
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Exp: {
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= nd.value[k];
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Log: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] /= x[k];
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Pow: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        const double q = nd.a0;
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] *= q * std::pow(x[k], q - 1.0);
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Sum: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        deposit(nd.parents[0], Tensor::full(x.shape(), c[0]), nd);
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (std::uint32_t p : nd.parents) {
          const Tensor& pv = nodes_[p].value;
          Tensor g = Tensor::zeros(pv.shape());
          for (std::size_t k = 0; k < pv.size(); ++k) g[k] = c[off + k];
          off += pv.size();
          deposit(p, std::move(g), nd);
        }
        break;
      }
      case Op::Slice: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        Tensor g = Tensor::zeros(x.shape());
        for (std::size_t k = 0; k < nd.i1; ++k) g[nd.i0 + k] = c[k];
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
      case Op::Clamp: {
        const Tensor& x = nodes_[nd.parents[0]].value;
        Tensor g = c;
        for (std::size_t k = 0; k < g.size(); ++k) {
          const double lo = nd.lo.is_scalar() ? nd.lo[0] : nd.lo[k];
          const double hi = nd.hi.is_scalar() ? nd.hi[0] : nd.hi[k];
          if (x[k] < lo || x[k] > hi) g[k] = 0.0;
        }
        deposit(nd.parents[0], std::move(g), nd);
        break;
      }
    }
  }

  for (Var v : leaves) {
    if (v.id < n && touched[v.id])
      res.leaf_grads.emplace(v.id, adj[v.id]);
    else
      res.leaf_grads.emplace(v.id, Tensor::zeros(nodes_[v.id].value.shape()));
  }
  for (Var v : observed) {
    if (!res.observed.count(v.id)) res.observed.emplace(v.id, Tensor::zeros(nodes_[v.id].value.shape()));
  }
  stats_.vjp_count += res.scopes_traversed;
  return res;
}

namespace {

Tape* same_tape(Var a, Var b, Op op) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw RuntimeError(std::string(op_name(op)) + ": operands are not on the same tape");
  return a.tape;
}

Node unary(Op op, Var x, Tensor value) {
  Node n;
  n.op = op;
  n.parents = {x.id};
  n.value = std::move(value);
  return n;
}

}  // namespace

Var add(Var a, Var b) {
  Tape* t = same_tape(a, b, Op::Add);
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  Tensor out;
  if (va.same_shape(vb)) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  } else if (vb.is_scalar()) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[0];
  } else if (va.is_scalar()) {
    out = vb;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += va[0];
  } else {
    shape_fail(Op::Add, va, vb);
  }
  Node n;
  n.op = Op::Add;
  n.parents = {a.id, b.id};
  n.value = std::move(out);
  return t->record(std::move(n));
}

Var sub(Var a, Var b) {
  Tape* t = same_tape(a, b, Op::Sub);
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  Tensor out;
  if (va.same_shape(vb)) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  } else if (vb.is_scalar()) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[0];
  } else if (va.is_scalar()) {
    out = Tensor::zeros(vb.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[0] - vb[i];
  } else {
    shape_fail(Op::Sub, va, vb);
  }
  Node n;
  n.op = Op::Sub;
  n.parents = {a.id, b.id};
  n.value = std::move(out);
  return t->record(std::move(n));
}

Var mul(Var a, Var b) {
  Tape* t = same_tape(a, b, Op::Mul);
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  Tensor out;
  if (va.same_shape(vb)) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  } else if (vb.is_scalar()) {
    out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[0];
  } else if (va.is_scalar()) {
    out = vb;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= va[0];
  } else {
    shape_fail(Op::Mul, va, vb);
  }
  Node n;
  n.op = Op::Mul;
  n.parents = {a.id, b.id};
  n.value = std::move(out);
  return t->record(std::move(n));
}

Var affine(Var x, double scale, double shift) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  Node n = unary(Op::Affine, x, std::move(out));
  n.a0 = scale;
  n.a1 = shift;
  return x.tape->record(std::move(n));
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Tape* t = same_tape(a, b, Op::MatMul);
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  if (va.rank() == 0 || vb.rank() == 0) shape_fail(Op::MatMul, va, vb);
  MatView av{&va, trans_a, /*as_row=*/true};
  MatView bv{&vb, trans_b, /*as_row=*/false};
  if (av.cols() != bv.rows()) shape_fail(Op::MatMul, va, vb);
  std::vector<std::size_t> shape;
  if (va.rank() == 2 && vb.rank() == 2) shape = {av.rows(), bv.cols()};
  else if (va.rank() == 2) shape = {av.rows()};
  else shape = {bv.cols()};
  Tensor out = mat_product(av, bv, std::move(shape));
  Node n;
  n.op = Op::MatMul;
  n.parents = {a.id, b.id};
  n.value = std::move(out);
  n.i0 = trans_a ? 1 : 0;
  n.i1 = trans_b ? 1 : 0;
  return t->record(std::move(n));
}

Var tanh(Var x) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return x.tape->record(unary(Op::Tanh, x, std::move(out)));
}

Var sin(Var x) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(out[i]);
  return x.tape->record(unary(Op::Sin, x, std::move(out)));
}

Var cos(Var x) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(out[i]);
  return x.tape->record(unary(Op::Cos, x, std::move(out)));
}

Var exp(Var x) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  return x.tape->record(unary(Op::Exp, x, std::move(out)));
}

Var log(Var x) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  return x.tape->record(unary(Op::Log, x, std::move(out)));
}

Var pow(Var x, double exponent) {
  Tensor out = x.tape->value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(out[i], exponent);
  Node n = unary(Op::Pow, x, std::move(out));
  n.a0 = exponent;
  return x.tape->record(std::move(n));
}

Var sum(Var x) {
  const Tensor& v = x.tape->value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
  return x.tape->record(unary(Op::Sum, x, Tensor::scalar(s)));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape* t = parts[0].tape;
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape != t) throw RuntimeError("concat: operands are not on the same tape");
    const Tensor& v = t->value(p);
    if (v.rank() > 1) throw ShapeError("concat: operand of shape " + v.shape_str() + " is not a vector or scalar");
    total += v.size();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  Node n;
  n.op = Op::Concat;
  for (Var p : parts) {
    const Tensor& v = t->value(p);
    for (std::size_t i = 0; i < v.size(); ++i) out[off + i] = v[i];
    off += v.size();
    n.parents.push_back(p.id);
  }
  n.value = std::move(out);
  return t->record(std::move(n));
}

Var slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& v = x.tape->value(x);
  if (v.rank() != 1 || offset + length > v.size())
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                     ") is invalid for shape " + v.shape_str());
  Tensor out = Tensor::zeros({length});
  for (std::size_t i = 0; i < length; ++i) out[i] = v[offset + i];
  Node n = unary(Op::Slice, x, std::move(out));
  n.i0 = static_cast<std::uint32_t>(offset);
  n.i1 = static_cast<std::uint32_t>(length);
  return x.tape->record(std::move(n));
}

Var clamp(Var x, Tensor lo, Tensor hi) {
  const Tensor& v = x.tape->value(x);
  if (!(lo.is_scalar() || lo.same_shape(v))) shape_fail(Op::Clamp, v, lo);
  if (!(hi.is_scalar() || hi.same_shape(v))) shape_fail(Op::Clamp, v, hi);
  Tensor out = v;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = lo.is_scalar() ? lo[0] : lo[i];
    const double h = hi.is_scalar() ? hi[0] : hi[i];
    out[i] = std::min(std::max(out[i], l), h);
  }
  Node n = unary(Op::Clamp, x, std::move(out));
  n.lo = std::move(lo);
  n.hi = std::move(hi);
  return x.tape->record(std::move(n));
}

Var clamp(Var x, double lo, double hi) { return clamp(x, Tensor::scalar(lo), Tensor::scalar(hi)); }

}  // namespace jfbctrl
