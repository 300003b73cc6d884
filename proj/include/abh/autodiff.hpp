#pragma once

// Scalar reverse-mode automatic differentiation on an append-only tape.
//
// Every primitive records its value and its numeric local partials, so a plain
// reverse sweep gives first derivatives. Higher derivatives are obtained by
// recording the reverse sweep itself onto the same tape (`grad_vars`) and
// differentiating the recorded adjoints again.
//
// Kinks (`max_const`, `min_const`) use the right-hand derivative. Derivative
// graphs recorded through a kink are specialised to the branch taken at
// recording time; tapes are meant to be rebuilt per batch.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace abh::ad {

enum class Op : std::uint8_t {
  constant,
  input,
  add,
  mul,
  neg,
  recip,
  pow_const,
  exp,
  log,
  tanh,
  softplus,
  max_const,
  min_const,
};

const char* op_name(Op op) noexcept;

struct DiffNode {
  double value = 0.0;
  double aux = 0.0;  // exponent for pow_const, bound for max/min_const
  double partial[2] = {0.0, 0.0};
  std::uint32_t parent[2] = {0, 0};
  Op op = Op::constant;
  std::uint8_t arity = 0;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  double value() const;
  std::uint32_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

using Bindings = std::map<std::string, double, std::less<>>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(double value);
  /// Registers a named independent variable. Names must be unique per tape.
  Var input(std::string id, double value);
  Var input_var(std::string_view id) const;
  const std::vector<std::string>& input_ids() const noexcept { return input_names_; }

  // Primitive recording. Operands must belong to this tape.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var a);
  Var recip(Var a);
  Var pow_const(Var a, double exponent);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var max_const(Var a, double bound);
  Var min_const(Var a, double bound);

  std::size_t size() const noexcept { return nodes_.size(); }
  const DiffNode& node(std::uint32_t id) const { return nodes_.at(id); }

  /// Root defaults to the most recently recorded node.
  void set_root(Var root);
  Var root() const;

  /// Re-evaluates every node with new input values and returns the root value.
  /// Throws ConfigError on an unbound input, NumericError (node index) on a
  /// non-finite intermediate.
  double forward(const Bindings& inputs);

  /// Reverse-mode partials of the root with respect to the named inputs.
  std::map<std::string, double, std::less<>> gradient(const std::set<std::string, std::less<>>& wrt) const;

  /// Exact second partial of the root, computed by differentiating a recorded
  /// reverse sweep. The tape itself is left untouched.
  double second_partial(std::string_view i, std::string_view j) const;

  /// Numeric adjoint of every node up to and including `root`.
  std::vector<double> adjoints(Var root) const;

  /// Records the reverse sweep of `root` onto this tape and returns the
  /// derivative of `root` with respect to each of `wrt` as differentiable
  /// nodes. A node that `root` does not depend on yields a zero constant.
  std::vector<Var> grad_vars(Var root, std::span<const Var> wrt);

  /// Derivative of `root` with respect to each leaf in `params`, in the order
  /// given. Throws NumericError carrying the component index on a non-finite entry.
  std::vector<double> param_gradient(Var root, std::span<const Var> params) const;

 private:
  Var push(Op op, double value, std::uint8_t arity, std::uint32_t p0, std::uint32_t p1, double aux);
  void evaluate(std::uint32_t id);
  void check_owner(Var v) const;
  Tape clone() const;

  std::vector<DiffNode> nodes_;
  std::vector<std::string> input_names_;
  std::vector<std::uint32_t> input_nodes_;
  bool has_root_ = false;
  std::uint32_t root_ = 0;
};

// Expression sugar. Mixed Var/double operands record the double as a constant.
Var operator+(Var a, Var b);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator-(Var a);
Var operator*(Var a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var recip(Var a);
Var pow(Var a, double exponent);
Var square(Var a);
Var max(Var a, double bound);
Var min(Var a, double bound);

}  // namespace abh::ad
