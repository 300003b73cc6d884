#include "abh/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "abh/errors.hpp"

namespace abh::ad {

namespace {

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::constant: return "constant";
    case Op::input: return "input";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::neg: return "neg";
    case Op::recip: return "recip";
    case Op::pow_const: return "pow_const";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::tanh: return "tanh";
    case Op::softplus: return "softplus";
    case Op::max_const: return "max_const";
    case Op::min_const: return "min_const";
  }
  return "unknown";
}

double Var::value() const { return tape_->node(id_).value; }

void Tape::check_owner(Var v) const {
  if (v.tape() != this || v.id() >= nodes_.size()) {
    throw ConfigError("autodiff: operand does not belong to this tape");
  }
}

Var Tape::push(Op op, double value, std::uint8_t arity, std::uint32_t p0, std::uint32_t p1, double aux) {
  DiffNode n;
  n.op = op;
  n.value = value;
  n.arity = arity;
  n.parent[0] = p0;
  n.parent[1] = p1;
  n.aux = aux;
  nodes_.push_back(n);
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  evaluate(id);
  return {this, id};
}

// Recomputes value and numeric local partials of one node from its parents.
void Tape::evaluate(std::uint32_t id) {
  DiffNode& n = nodes_[id];
  const double x = n.arity > 0 ? nodes_[n.parent[0]].value : 0.0;
  const double y = n.arity > 1 ? nodes_[n.parent[1]].value : 0.0;
  switch (n.op) {
    case Op::constant:
    case Op::input:
      break;
    case Op::add:
      n.value = x + y;
      n.partial[0] = 1.0;
      n.partial[1] = 1.0;
      break;
    case Op::mul:
      n.value = x * y;
      n.partial[0] = y;
      n.partial[1] = x;
      break;
    case Op::neg:
      n.value = -x;
      n.partial[0] = -1.0;
      break;
    case Op::recip:
      n.value = 1.0 / x;
      n.partial[0] = -n.value * n.value;
      break;
    case Op::pow_const:
      n.value = std::pow(x, n.aux);
      n.partial[0] = n.aux == 0.0 ? 0.0 : n.aux * std::pow(x, n.aux - 1.0);
      break;
    case Op::exp:
      n.value = std::exp(x);
      n.partial[0] = n.value;
      break;
    case Op::log:
      n.value = x > 0.0 ? std::log(x) : std::nan("");
      n.partial[0] = 1.0 / x;
      break;
    case Op::tanh:
      n.value = std::tanh(x);
      n.partial[0] = 1.0 - n.value * n.value;
      break;
    case Op::softplus:
      n.value = stable_softplus(x);
      n.partial[0] = stable_sigmoid(x);
      break;
    case Op::max_const:
      n.value = x >= n.aux ? x : n.aux;
      n.partial[0] = x >= n.aux ? 1.0 : 0.0;
      break;
    case Op::min_const:
      n.value = x < n.aux ? x : n.aux;
      n.partial[0] = x < n.aux ? 1.0 : 0.0;
      break;
  }
  if (!std::isfinite(n.value) || !std::isfinite(n.partial[0]) || !std::isfinite(n.partial[1])) {
    throw NumericError(std::string("autodiff: non-finite value in ") + op_name(n.op), id);
  }
}

Var Tape::constant(double value) {
  if (!std::isfinite(value)) throw NumericError("autodiff: non-finite constant", nodes_.size());
  return push(Op::constant, value, 0, 0, 0, 0.0);
}

Var Tape::input(std::string id, double value) {
  if (std::find(input_names_.begin(), input_names_.end(), id) != input_names_.end()) {
    throw ConfigError("autodiff: duplicate input id '" + id + "'");
  }
  if (!std::isfinite(value)) throw NumericError("autodiff: non-finite input", nodes_.size());
  Var v = push(Op::input, value, 0, 0, 0, 0.0);
  input_names_.push_back(std::move(id));
  input_nodes_.push_back(v.id());
  return v;
}

Var Tape::input_var(std::string_view id) const {
  for (std::size_t k = 0; k < input_names_.size(); ++k) {
    if (input_names_[k] == id) return {const_cast<Tape*>(this), input_nodes_[k]};
  }
  throw ConfigError("autodiff: unknown input id '" + std::string(id) + "'");
}

Var Tape::add(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  return push(Op::add, 0.0, 2, a.id(), b.id(), 0.0);
}
Var Tape::mul(Var a, Var b) {
  check_owner(a);
  check_owner(b);
  return push(Op::mul, 0.0, 2, a.id(), b.id(), 0.0);
}
Var Tape::neg(Var a) {
  check_owner(a);
  return push(Op::neg, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::recip(Var a) {
  check_owner(a);
  return push(Op::recip, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::pow_const(Var a, double exponent) {
  check_owner(a);
  return push(Op::pow_const, 0.0, 1, a.id(), 0, exponent);
}
Var Tape::exp(Var a) {
  check_owner(a);
  return push(Op::exp, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::log(Var a) {
  check_owner(a);
  return push(Op::log, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::tanh(Var a) {
  check_owner(a);
  return push(Op::tanh, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::softplus(Var a) {
  check_owner(a);
  return push(Op::softplus, 0.0, 1, a.id(), 0, 0.0);
}
Var Tape::max_const(Var a, double bound) {
  check_owner(a);
  return push(Op::max_const, 0.0, 1, a.id(), 0, bound);
}
Var Tape::min_const(Var a, double bound) {
  check_owner(a);
  return push(Op::min_const, 0.0, 1, a.id(), 0, bound);
}

void Tape::set_root(Var root) {
  check_owner(root);
  root_ = root.id();
  has_root_ = true;
}

Var Tape::root() const {
  if (nodes_.empty()) throw ConfigError("autodiff: empty tape has no root");
  const auto id = has_root_ ? root_ : static_cast<std::uint32_t>(nodes_.size() - 1);
  return {const_cast<Tape*>(this), id};
}

double Tape::forward(const Bindings& inputs) {
  if (nodes_.empty()) throw ConfigError("autodiff: forward on an empty tape");
  for (std::size_t k = 0; k < input_names_.size(); ++k) {
    auto it = inputs.find(input_names_[k]);
    if (it == inputs.end()) throw ConfigError("autodiff: input '" + input_names_[k] + "' is unbound");
    if (!std::isfinite(it->second)) throw NumericError("autodiff: non-finite input", input_nodes_[k]);
    nodes_[input_nodes_[k]].value = it->second;
  }
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) evaluate(id);
  return root().value();
}

std::vector<double> Tape::adjoints(Var root) const {
  check_owner(root);
  std::vector<double> adj(root.id() + 1, 0.0);
  adj[root.id()] = 1.0;
  for (std::uint32_t id = root.id() + 1; id-- > 0;) {
    const double a = adj[id];
    if (a == 0.0) continue;
    const DiffNode& n = nodes_[id];
    for (std::uint8_t k = 0; k < n.arity; ++k) adj[n.parent[k]] += a * n.partial[k];
  }
  return adj;
}

std::map<std::string, double, std::less<>> Tape::gradient(const std::set<std::string, std::less<>>& wrt) const {
  const Var r = root();
  const auto adj = adjoints(r);
  std::map<std::string, double, std::less<>> out;
  for (const auto& name : wrt) {
    const Var in = input_var(name);
    const double d = in.id() < adj.size() ? adj[in.id()] : 0.0;
    if (!std::isfinite(d)) throw NumericError("autodiff: non-finite adjoint for input '" + name + "'", in.id());
    out.emplace(name, d);
  }
  return out;
}

std::vector<Var> Tape::grad_vars(Var root, std::span<const Var> wrt) {
  check_owner(root);
  for (const Var& w : wrt) check_owner(w);
  const std::uint32_t top = root.id();
  std::vector<Var> adj(top + 1);
  auto accumulate = [&](std::uint32_t p, Var contribution) {
    adj[p] = adj[p].valid() ? add(adj[p], contribution) : contribution;
  };
  adj[top] = constant(1.0);
  for (std::uint32_t id = top + 1; id-- > 0;) {
    if (!adj[id].valid()) continue;
    const DiffNode n = nodes_[id];  // copy: recording below may reallocate
    const Var g = adj[id];
    const Var self{this, id};
    const Var x{this, n.parent[0]};
    const Var y{this, n.parent[1]};
    switch (n.op) {
      case Op::constant:
      case Op::input:
        break;
      case Op::add:
        accumulate(n.parent[0], g);
        accumulate(n.parent[1], g);
        break;
      case Op::mul:
        accumulate(n.parent[0], mul(g, y));
        accumulate(n.parent[1], mul(g, x));
        break;
      case Op::neg:
        accumulate(n.parent[0], neg(g));
        break;
      case Op::recip:
        accumulate(n.parent[0], neg(mul(g, mul(self, self))));
        break;
      case Op::pow_const:
        if (n.aux == 0.0) break;
        if (n.aux == 1.0) {
          accumulate(n.parent[0], g);
        } else {
          accumulate(n.parent[0], mul(g, mul(constant(n.aux), pow_const(x, n.aux - 1.0))));
        }
        break;
      case Op::exp:
        accumulate(n.parent[0], mul(g, self));
        break;
      case Op::log:
        accumulate(n.parent[0], mul(g, recip(x)));
        break;
      case Op::tanh:
        accumulate(n.parent[0], mul(g, add(constant(1.0), neg(mul(self, self)))));
        break;
      case Op::softplus:
        // sigmoid(x) = exp(x - softplus(x)), bounded for any x
        accumulate(n.parent[0], mul(g, exp(add(x, neg(self)))));
        break;
      case Op::max_const:
        if (x.value() >= n.aux) accumulate(n.parent[0], g);
        break;
      case Op::min_const:
        if (x.value() < n.aux) accumulate(n.parent[0], g);
        break;
    }
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    out.push_back(w.id() <= top && adj[w.id()].valid() ? adj[w.id()] : constant(0.0));
  }
  return out;
}

Tape Tape::clone() const {
  Tape t;
  t.nodes_ = nodes_;
  t.input_names_ = input_names_;
  t.input_nodes_ = input_nodes_;
  t.has_root_ = has_root_;
  t.root_ = root_;
  return t;
}

double Tape::second_partial(std::string_view i, std::string_view j) const {
  // Canonical order so that (i, j) and (j, i) share one code path.
  if (j < i) std::swap(i, j);
  Tape work = clone();
  const Var r = work.root();
  const Var xi = work.input_var(i);
  const Var xj = work.input_var(j);
  const Var di = work.grad_vars(r, std::span<const Var>(&xi, 1)).front();
  const auto adj = work.adjoints(di);
  const double d = xj.id() < adj.size() ? adj[xj.id()] : 0.0;
  if (!std::isfinite(d)) throw NumericError("autodiff: non-finite second derivative", xj.id());
  return d;
}

std::vector<double> Tape::param_gradient(Var root, std::span<const Var> params) const {
  const auto adj = adjoints(root);
  std::vector<double> out(params.size(), 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    check_owner(params[k]);
    const auto id = params[k].id();
    out[k] = id < adj.size() ? adj[id] : 0.0;
    if (!std::isfinite(out[k])) throw NumericError("autodiff: non-finite parameter gradient", k);
  }
  return out;
}

namespace {
Tape& owner(Var a) { return *a.tape(); }
}  // namespace

Var operator+(Var a, Var b) { return owner(a).add(a, b); }
Var operator+(Var a, double b) { return owner(a).add(a, owner(a).constant(b)); }
Var operator+(double a, Var b) { return owner(b).add(owner(b).constant(a), b); }
Var operator-(Var a, Var b) { return owner(a).add(a, owner(a).neg(b)); }
Var operator-(Var a, double b) { return owner(a).add(a, owner(a).constant(-b)); }
Var operator-(double a, Var b) { return owner(b).add(owner(b).constant(a), owner(b).neg(b)); }
Var operator-(Var a) { return owner(a).neg(a); }
Var operator*(Var a, Var b) { return owner(a).mul(a, b); }
Var operator*(Var a, double b) { return owner(a).mul(a, owner(a).constant(b)); }
Var operator*(double a, Var b) { return owner(b).mul(owner(b).constant(a), b); }
Var operator/(Var a, Var b) { return owner(a).mul(a, owner(a).recip(b)); }
Var operator/(Var a, double b) { return owner(a).mul(a, owner(a).constant(1.0 / b)); }
Var operator/(double a, Var b) { return owner(b).mul(owner(b).constant(a), owner(b).recip(b)); }

Var exp(Var a) { return owner(a).exp(a); }
Var log(Var a) { return owner(a).log(a); }
Var tanh(Var a) { return owner(a).tanh(a); }
Var softplus(Var a) { return owner(a).softplus(a); }
Var recip(Var a) { return owner(a).recip(a); }
Var pow(Var a, double exponent) { return owner(a).pow_const(a, exponent); }
Var square(Var a) { return owner(a).mul(a, a); }
Var max(Var a, double bound) { return owner(a).max_const(a, bound); }
Var min(Var a, double bound) { return owner(a).min_const(a, bound); }

}  // namespace abh::ad
