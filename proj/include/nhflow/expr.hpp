#pragma once

// Closed-form expression grammar for config documents:
//   expr   := term (('+' | '-') term)*
//   term   := unary (('*' | '/') unary)*
//   unary  := ('+' | '-') unary | power
//   power  := atom ('^' unary)?
//   atom   := number | name | name '(' expr ')' | '(' expr ')'
// Functions: sin cos atan exp ln sqrt abs. Constant: pi.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nhflow/errors.hpp"

namespace nhflow {

class Expression {
 public:
  enum class Op { Num, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Atan, Exp, Ln, Sqrt, Abs };
  struct Node {
    Op op = Op::Num;
    double value = 0.0;
    int var = -1;
    int lhs = -1, rhs = -1;
  };

  Expression() = default;
  // Variables are named by position; unknown names are an InvalidInput.
  static Expression parse(const std::string& text, const std::vector<std::string>& variables);
  static Expression constant(double v);

  const std::string& text() const { return text_; }
  bool depends_on(int var) const;

  template <class T>
  T eval(std::span<const T> vars) const {
    return eval_node<T>(root_, vars);
  }
  double operator()(std::span<const double> vars) const { return eval<double>(vars); }
  double operator()(std::initializer_list<double> vars) const {
    return eval<double>(std::span<const double>(vars.begin(), vars.size()));
  }

 private:
  template <class T>
  T eval_node(int k, std::span<const T> vars) const {
    using std::atan, std::cos, std::exp, std::log, std::sin, std::sqrt, std::abs, std::pow;
    const Node& nd = nodes_[static_cast<std::size_t>(k)];
    switch (nd.op) {
      case Op::Num: return T(nd.value);
      case Op::Var: return vars[static_cast<std::size_t>(nd.var)];
      case Op::Add: return eval_node<T>(nd.lhs, vars) + eval_node<T>(nd.rhs, vars);
      case Op::Sub: return eval_node<T>(nd.lhs, vars) - eval_node<T>(nd.rhs, vars);
      case Op::Mul: return eval_node<T>(nd.lhs, vars) * eval_node<T>(nd.rhs, vars);
      case Op::Div: return eval_node<T>(nd.lhs, vars) / eval_node<T>(nd.rhs, vars);
      case Op::Pow: return pow(eval_node<T>(nd.lhs, vars), eval_node<T>(nd.rhs, vars));
      case Op::Neg: return -eval_node<T>(nd.lhs, vars);
      case Op::Sin: return sin(eval_node<T>(nd.lhs, vars));
      case Op::Cos: return cos(eval_node<T>(nd.lhs, vars));
      case Op::Atan: return atan(eval_node<T>(nd.lhs, vars));
      case Op::Exp: return exp(eval_node<T>(nd.lhs, vars));
      case Op::Ln: return log(eval_node<T>(nd.lhs, vars));
      case Op::Sqrt: return sqrt(eval_node<T>(nd.lhs, vars));
      case Op::Abs: return abs(eval_node<T>(nd.lhs, vars));
    }
    return T(0.0);
  }

  friend class ExpressionParser;
  std::string text_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace nhflow
