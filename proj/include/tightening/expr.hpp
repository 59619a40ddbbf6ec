/*
 Copyright 2026 The tightening Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tightening/errors.hpp"

namespace tightening {

/// Compiled arithmetic expression over named variables.
///
/// Grammar: numbers, variables, + - * / ^, unary minus, parentheses and the
/// functions abs, sqrt, sin, cos, arctan (alias atan), exp, pow(a, b).
class Expression {
 public:
  Expression() = default;

  /// `variables` fixes the order of the values passed to `eval`.
  Expression(std::string source, std::vector<std::string> variables)
      : source_(std::move(source)), variables_(std::move(variables)) {
    Parser p{source_, variables_, 0};
    root_ = p.parse_expr();
    p.skip_ws();
    if (p.pos != source_.size()) p.fail("unexpected trailing input");
  }

  double eval(std::span<const double> vars) const { return eval_node(*root_, vars); }

  const std::string& source() const { return source_; }
  bool valid() const { return root_ != nullptr; }
  /// True when variable `index` occurs in the expression.
  bool uses(std::size_t index) const { return root_ && uses_node(*root_, index); }

 private:
  enum class Op { constant, variable, add, sub, mul, div, pow, neg, abs, sqrt, sin, cos, atan, exp };

  struct Node {
    Op op = Op::constant;
    double value = 0.0;
    std::size_t index = 0;
    std::shared_ptr<const Node> lhs, rhs;
  };
  using NodePtr = std::shared_ptr<const Node>;

  static NodePtr make(Op op, NodePtr a, NodePtr b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
  }

  struct Parser {
    const std::string& s;
    const std::vector<std::string>& vars;
    std::size_t pos;

    [[noreturn]] void fail(const std::string& msg) const {
      throw Error(ErrorKind::parse, msg + " at column " + std::to_string(pos + 1) + " in '" + s + "'");
    }
    void skip_ws() {
      while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    bool accept(char c) {
      skip_ws();
      if (pos < s.size() && s[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    void expect(char c) {
      if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    NodePtr parse_expr() {
      NodePtr lhs = parse_term();
      while (true) {
        if (accept('+')) lhs = make(Op::add, lhs, parse_term());
        else if (accept('-')) lhs = make(Op::sub, lhs, parse_term());
        else return lhs;
      }
    }
    NodePtr parse_term() {
      NodePtr lhs = parse_unary();
      while (true) {
        if (accept('*')) lhs = make(Op::mul, lhs, parse_unary());
        else if (accept('/')) lhs = make(Op::div, lhs, parse_unary());
        else return lhs;
      }
    }
    NodePtr parse_unary() {
      if (accept('-')) return make(Op::neg, parse_unary());
      if (accept('+')) return parse_unary();
      NodePtr base = parse_primary();
      if (accept('^')) return make(Op::pow, base, parse_unary());
      return base;
    }
    NodePtr parse_primary() {
      skip_ws();
      if (pos >= s.size()) fail("unexpected end of expression");
      const char c = s[pos];
      if (c == '(') {
        ++pos;
        NodePtr e = parse_expr();
        expect(')');
        return e;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = s.data() + pos;
        double v = 0.0;
        auto res = std::from_chars(begin, s.data() + s.size(), v);
        if (res.ec != std::errc()) fail("bad number");
        pos += static_cast<std::size_t>(res.ptr - begin);
        auto n = std::make_shared<Node>();
        n->value = v;
        return n;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_')) ++pos;
        const std::string name = s.substr(start, pos - start);
        skip_ws();
        if (pos < s.size() && s[pos] == '(') {
          ++pos;
          NodePtr a = parse_expr();
          if (name == "pow") {
            expect(',');
            NodePtr b = parse_expr();
            expect(')');
            return make(Op::pow, a, b);
          }
          expect(')');
          if (name == "abs") return make(Op::abs, a);
          if (name == "sqrt") return make(Op::sqrt, a);
          if (name == "sin") return make(Op::sin, a);
          if (name == "cos") return make(Op::cos, a);
          if (name == "arctan" || name == "atan") return make(Op::atan, a);
          if (name == "exp") return make(Op::exp, a);
          pos = start;
          fail("unknown function '" + name + "'");
        }
        if (name == "pi") {
          auto n = std::make_shared<Node>();
          n->value = 3.14159265358979323846;
          return n;
        }
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (vars[i] == name) {
            auto n = std::make_shared<Node>();
            n->op = Op::variable;
            n->index = i;
            return n;
          }
        }
        pos = start;
        fail("unknown variable '" + name + "'");
      }
      fail(std::string("unexpected character '") + c + "'");
    }
  };

  static bool uses_node(const Node& n, std::size_t index) {
    if (n.op == Op::variable) return n.index == index;
    return (n.lhs && uses_node(*n.lhs, index)) || (n.rhs && uses_node(*n.rhs, index));
  }

  static double eval_node(const Node& n, std::span<const double> v) {
    switch (n.op) {
      case Op::constant: return n.value;
      case Op::variable: return v[n.index];
      case Op::add: return eval_node(*n.lhs, v) + eval_node(*n.rhs, v);
      case Op::sub: return eval_node(*n.lhs, v) - eval_node(*n.rhs, v);
      case Op::mul: return eval_node(*n.lhs, v) * eval_node(*n.rhs, v);
      case Op::div: return eval_node(*n.lhs, v) / eval_node(*n.rhs, v);
      case Op::pow: return std::pow(eval_node(*n.lhs, v), eval_node(*n.rhs, v));
      case Op::neg: return -eval_node(*n.lhs, v);
      case Op::abs: return std::abs(eval_node(*n.lhs, v));
      case Op::sqrt: return std::sqrt(eval_node(*n.lhs, v));
      case Op::sin: return std::sin(eval_node(*n.lhs, v));
      case Op::cos: return std::cos(eval_node(*n.lhs, v));
      case Op::atan: return std::atan(eval_node(*n.lhs, v));
      case Op::exp: return std::exp(eval_node(*n.lhs, v));
    }
    return 0.0;
  }

  std::string source_;
  std::vector<std::string> variables_;
  NodePtr root_;
};

/// Variable names t, x1..xN, u1..uM in that order.
inline std::vector<std::string> state_control_variables(int n, int m) {
  std::vector<std::string> names{"t"};
  for (int i = 1; i <= n; ++i) names.push_back("x" + std::to_string(i));
  for (int i = 1; i <= m; ++i) names.push_back("u" + std::to_string(i));
  return names;
}

}  // namespace tightening
