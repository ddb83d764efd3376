#include "nhflow/expr.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>

namespace nhflow {

class ExpressionParser {
 public:
  ExpressionParser(const std::string& text, const std::vector<std::string>& vars, Expression& out)
      : s_(text), vars_(vars), out_(out) {}

  void run() {
    out_.root_ = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
  }

 private:
  using Op = Expression::Op;

  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidInput("expression \"" + s_ + "\" at column " + std::to_string(pos_ + 1) + ": " + what);
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char ch) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == ch) {
      ++pos_;
      return true;
    }
    return false;
  }

  int add(Expression::Node nd) {
    out_.nodes_.push_back(nd);
    return static_cast<int>(out_.nodes_.size()) - 1;
  }
  int binary(Op op, int l, int r) { return add({op, 0.0, -1, l, r}); }

  int expr() {
    int l = term();
    for (;;) {
      if (accept('+')) l = binary(Op::Add, l, term());
      else if (accept('-')) l = binary(Op::Sub, l, term());
      else return l;
    }
  }

  int term() {
    int l = unary();
    for (;;) {
      if (accept('*')) l = binary(Op::Mul, l, unary());
      else if (accept('/')) l = binary(Op::Div, l, unary());
      else return l;
    }
  }

  int unary() {
    if (accept('-')) return add({Op::Neg, 0.0, -1, unary(), -1});
    if (accept('+')) return unary();
    return power();
  }

  int power() {
    const int base = atom();
    if (accept('^')) return binary(Op::Pow, base, unary());
    return base;
  }

  int atom() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    const char ch = s_[pos_];
    if (accept('(')) {
      const int e = expr();
      if (!accept(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') {
      const char* begin = s_.c_str() + pos_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) fail("bad number");
      pos_ += static_cast<std::size_t>(end - begin);
      return add({Op::Num, v, -1, -1, -1});
    }
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
      const std::string name = s_.substr(start, pos_ - start);
      static const std::pair<const char*, Op> funcs[] = {{"sin", Op::Sin},   {"cos", Op::Cos},   {"atan", Op::Atan},
                                                         {"exp", Op::Exp},   {"ln", Op::Ln},     {"sqrt", Op::Sqrt},
                                                         {"abs", Op::Abs}};
      for (const auto& [fname, op] : funcs)
        if (name == fname) {
          if (!accept('(')) fail("expected '(' after " + name);
          const int arg = expr();
          if (!accept(')')) fail("expected ')'");
          return add({op, 0.0, -1, arg, -1});
        }
      for (std::size_t k = 0; k < vars_.size(); ++k)
        if (vars_[k] == name) return add({Op::Var, 0.0, static_cast<int>(k), -1, -1});
      if (name == "pi") return add({Op::Num, M_PI, -1, -1, -1});
      pos_ = start;
      fail("unknown name '" + name + "'");
    }
    fail("unexpected '" + std::string(1, ch) + "'");
  }

  const std::string& s_;
  const std::vector<std::string>& vars_;
  Expression& out_;
  std::size_t pos_ = 0;
};

Expression Expression::parse(const std::string& text, const std::vector<std::string>& variables) {
  Expression e;
  e.text_ = text;
  ExpressionParser(e.text_, variables, e).run();
  return e;
}

Expression Expression::constant(double v) {
  Expression e;
  e.text_ = std::to_string(v);
  e.nodes_.push_back({Op::Num, v, -1, -1, -1});
  e.root_ = 0;
  return e;
}

bool Expression::depends_on(int var) const {
  for (const Node& nd : nodes_)
    if (nd.op == Op::Var && nd.var == var) return true;
  return false;
}

}  // namespace nhflow
