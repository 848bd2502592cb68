#pragma once

#include <map>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cbflab {

/// Error raised by parse_expr. Carries the 1-based line/column of the offending token.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line, int column);

    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

/// Error raised while evaluating an expression (unbound variable or domain violation).
class EvalError : public std::runtime_error {
public:
    enum class Kind { Unbound, Domain };

    EvalError(Kind kind, const std::string& what, std::string subexpr);

    Kind kind() const { return kind_; }
    const std::string& subexpression() const { return subexpr_; }

private:
    Kind kind_;
    std::string subexpr_;
};

enum class UnaryOp { Neg, Sin, Cos, Exp, Log, Sqrt, Abs, Sign };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    enum class Kind { Constant, Variable, Unary, Binary };

    Kind kind;
    double value = 0.0;
    std::string name;
    UnaryOp unary = UnaryOp::Neg;
    BinaryOp binary = BinaryOp::Add;
    NodePtr lhs;
    NodePtr rhs;
};

using Binding = std::map<std::string, double, std::less<>>;

/// Immutable scalar expression over named variables.
///
/// Copies share the underlying tree. Evaluation is pure, so one expression may be
/// evaluated from several threads at once.
class Expression {
public:
    Expression();
    explicit Expression(NodePtr root);

    static Expression constant(double v);
    static Expression variable(std::string name);

    const Node& root() const { return *root_; }
    const NodePtr& node() const { return root_; }

    double eval(const Binding& b) const;
    std::set<std::string> free_variables() const;
    bool is_constant() const { return root_->kind == Node::Kind::Constant; }
    bool is_zero() const { return is_constant() && root_->value == 0.0; }
    bool contains(UnaryOp op) const;

    /// Fully parenthesized text that parses back to an expression with bit-identical evaluation.
    std::string to_string() const;

    friend Expression operator+(const Expression& a, const Expression& b);
    friend Expression operator-(const Expression& a, const Expression& b);
    friend Expression operator*(const Expression& a, const Expression& b);
    friend Expression operator/(const Expression& a, const Expression& b);
    friend Expression operator-(const Expression& a);
    friend Expression pow(const Expression& a, const Expression& b);
    friend Expression apply(UnaryOp op, const Expression& a);

private:
    NodePtr root_;
};

Expression parse_expr(std::string_view text);

/// Symbolic partial derivative. abs' is sign(.) with sign(0) = 0.
Expression differentiate(const Expression& e, const std::string& var);

/// Expression lowered to a flat stack program with variables resolved to slots.
///
/// Slot i of the input span holds the value of `variables[i]`. Variables of the
/// expression that are not in `variables` raise EvalError::Unbound at compile time.
class CompiledExpr {
public:
    CompiledExpr() = default;
    CompiledExpr(const Expression& e, const std::vector<std::string>& variables);

    double operator()(std::span<const double> slots) const;

private:
    enum class Op : unsigned char { Const, Var, Neg, Sin, Cos, Exp, Log, Sqrt, Abs, Sign, Add, Sub, Mul, Div, Pow };

    struct Instr {
        Op op;
        int slot;
        double value;
        const Node* node;
    };

    void emit(const NodePtr& n, const std::vector<std::string>& variables);

    std::vector<Instr> code_;
    std::vector<NodePtr> keep_alive_;
    int max_depth_ = 0;
};

/// Variable names x1..xn.
std::vector<std::string> state_names(int n);
/// Variable names u1..um.
std::vector<std::string> input_names(int m);

std::vector<Expression> parse_all(const std::vector<std::string>& texts);

}  // namespace cbflab
