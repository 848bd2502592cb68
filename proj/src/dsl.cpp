#include "cbflab/dsl.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

namespace cbflab {

ParseError::ParseError(const std::string& what, int line, int column)
    : std::runtime_error(what + " at line " + std::to_string(line) + ", column " + std::to_string(column)),
      line_(line),
      column_(column) {}

EvalError::EvalError(Kind kind, const std::string& what, std::string subexpr)
    : std::runtime_error(what + (subexpr.empty() ? std::string() : " in '" + subexpr + "'")),
      kind_(kind),
      subexpr_(std::move(subexpr)) {}

namespace {

NodePtr make_constant(double v) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Constant;
    n->value = v;
    return n;
}

NodePtr make_variable(std::string name) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Variable;
    n->name = std::move(name);
    return n;
}

NodePtr make_unary_raw(UnaryOp op, NodePtr a) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Unary;
    n->unary = op;
    n->lhs = std::move(a);
    return n;
}

NodePtr make_binary_raw(BinaryOp op, NodePtr a, NodePtr b) {
    auto n = std::make_shared<Node>();
    n->kind = Node::Kind::Binary;
    n->binary = op;
    n->lhs = std::move(a);
    n->rhs = std::move(b);
    return n;
}

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Neg: return "-";
        case UnaryOp::Sin: return "sin";
        case UnaryOp::Cos: return "cos";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Log: return "log";
        case UnaryOp::Sqrt: return "sqrt";
        case UnaryOp::Abs: return "abs";
        case UnaryOp::Sign: return "sign";
    }
    return "?";
}

const char* binary_symbol(BinaryOp op) {
    switch (op) {
        case BinaryOp::Add: return " + ";
        case BinaryOp::Sub: return " - ";
        case BinaryOp::Mul: return " * ";
        case BinaryOp::Div: return " / ";
        case BinaryOp::Pow: return " ^ ";
    }
    return "?";
}

void print(const Node& n, std::string& out) {
    switch (n.kind) {
        case Node::Kind::Constant: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", n.value);
            if (n.value < 0 || (n.value == 0.0 && std::signbit(n.value))) {
                out += "(-";
                std::snprintf(buf, sizeof buf, "%.17g", -n.value);
                out += buf;
                out += ")";
            } else {
                out += buf;
            }
            return;
        }
        case Node::Kind::Variable:
            out += n.name;
            return;
        case Node::Kind::Unary:
            if (n.unary == UnaryOp::Neg) {
                out += "(-";
                print(*n.lhs, out);
                out += ")";
            } else {
                out += unary_name(n.unary);
                out += "(";
                print(*n.lhs, out);
                out += ")";
            }
            return;
        case Node::Kind::Binary:
            out += "(";
            print(*n.lhs, out);
            out += binary_symbol(n.binary);
            print(*n.rhs, out);
            out += ")";
            return;
    }
}

std::string node_text(const Node& n) {
    std::string s;
    print(n, s);
    return s;
}

[[noreturn]] void domain_error(const char* what, const Node* n) {
    throw EvalError(EvalError::Kind::Domain, what, n ? node_text(*n) : std::string());
}

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

double apply_unary(UnaryOp op, double x, const Node* n) {
    switch (op) {
        case UnaryOp::Neg: return -x;
        case UnaryOp::Sin: return std::sin(x);
        case UnaryOp::Cos: return std::cos(x);
        case UnaryOp::Exp: return std::exp(x);
        case UnaryOp::Log:
            if (!(x > 0.0) && !std::isnan(x)) domain_error("log of non-positive value", n);
            return std::log(x);
        case UnaryOp::Sqrt:
            if (x < 0.0) domain_error("sqrt of negative value", n);
            return std::sqrt(x);
        case UnaryOp::Abs: return std::fabs(x);
        case UnaryOp::Sign:
            if (std::isnan(x)) return x;
            return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
    return x;
}

double apply_binary(BinaryOp op, double a, double b, const Node* n) {
    switch (op) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
        case BinaryOp::Div:
            if (b == 0.0) domain_error("division by zero", n);
            return a / b;
        case BinaryOp::Pow:
            if (a < 0.0 && !is_integer(b)) domain_error("non-integer power of negative base", n);
            if (a == 0.0 && b < 0.0) domain_error("negative power of zero", n);
            return std::pow(a, b);
    }
    return a;
}

double eval_node(const Node& n, const Binding& b) {
    switch (n.kind) {
        case Node::Kind::Constant: return n.value;
        case Node::Kind::Variable: {
            auto it = b.find(n.name);
            if (it == b.end()) throw EvalError(EvalError::Kind::Unbound, "unbound variable '" + n.name + "'", n.name);
            return it->second;
        }
        case Node::Kind::Unary: return apply_unary(n.unary, eval_node(*n.lhs, b), &n);
        case Node::Kind::Binary: {
            double lhs = eval_node(*n.lhs, b);
            double rhs = eval_node(*n.rhs, b);
            return apply_binary(n.binary, lhs, rhs, &n);
        }
    }
    return 0.0;
}

void collect_vars(const Node& n, std::set<std::string>& out) {
    switch (n.kind) {
        case Node::Kind::Constant: return;
        case Node::Kind::Variable: out.insert(n.name); return;
        case Node::Kind::Unary: collect_vars(*n.lhs, out); return;
        case Node::Kind::Binary:
            collect_vars(*n.lhs, out);
            collect_vars(*n.rhs, out);
            return;
    }
}

bool depends_on(const Node& n, const std::string& var) {
    switch (n.kind) {
        case Node::Kind::Constant: return false;
        case Node::Kind::Variable: return n.name == var;
        case Node::Kind::Unary: return depends_on(*n.lhs, var);
        case Node::Kind::Binary: return depends_on(*n.lhs, var) || depends_on(*n.rhs, var);
    }
    return false;
}

// Folding happens only when every operand is a constant and the result is finite,
// so domain errors and NaN/inf behavior are left for evaluation time.
NodePtr fold_unary(UnaryOp op, NodePtr a) {
    if (a->kind == Node::Kind::Constant) {
        try {
            double v = apply_unary(op, a->value, nullptr);
            if (std::isfinite(v)) return make_constant(v);
        } catch (const EvalError&) {
        }
    }
    if (op == UnaryOp::Neg && a->kind == Node::Kind::Unary && a->unary == UnaryOp::Neg) return a->lhs;
    return make_unary_raw(op, std::move(a));
}

bool is_const(const NodePtr& n, double v) { return n->kind == Node::Kind::Constant && n->value == v; }

NodePtr fold_binary(BinaryOp op, NodePtr a, NodePtr b) {
    if (a->kind == Node::Kind::Constant && b->kind == Node::Kind::Constant) {
        try {
            double v = apply_binary(op, a->value, b->value, nullptr);
            if (std::isfinite(v)) return make_constant(v);
        } catch (const EvalError&) {
        }
    }
    switch (op) {
        case BinaryOp::Add:
            if (is_const(a, 0.0)) return b;
            if (is_const(b, 0.0)) return a;
            break;
        case BinaryOp::Sub:
            if (is_const(b, 0.0)) return a;
            if (is_const(a, 0.0)) return fold_unary(UnaryOp::Neg, std::move(b));
            break;
        case BinaryOp::Mul:
            if (is_const(a, 1.0)) return b;
            if (is_const(b, 1.0)) return a;
            if (is_const(a, -1.0)) return fold_unary(UnaryOp::Neg, std::move(b));
            if (is_const(b, -1.0)) return fold_unary(UnaryOp::Neg, std::move(a));
            break;
        case BinaryOp::Div:
            if (is_const(b, 1.0)) return a;
            break;
        case BinaryOp::Pow:
            if (is_const(b, 1.0)) return a;
            break;
    }
    return make_binary_raw(op, std::move(a), std::move(b));
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    NodePtr parse() {
        skip_ws();
        if (pos_ >= text_.size()) fail("empty expression", pos_);
        NodePtr e = parse_sum();
        skip_ws();
        if (pos_ < text_.size()) fail(std::string("unexpected '") + text_[pos_] + "'", pos_);
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
        int line = 1, col = 1;
        for (std::size_t i = 0; i < at && i < text_.size(); ++i) {
            if (text_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError(msg, line, col);
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr parse_sum() {
        NodePtr lhs = parse_product();
        for (;;) {
            if (accept('+')) {
                lhs = make_binary_raw(BinaryOp::Add, lhs, parse_product());
            } else if (accept('-')) {
                lhs = make_binary_raw(BinaryOp::Sub, lhs, parse_product());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_product() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (accept('*')) {
                lhs = make_binary_raw(BinaryOp::Mul, lhs, parse_unary());
            } else if (accept('/')) {
                lhs = make_binary_raw(BinaryOp::Div, lhs, parse_unary());
            } else {
                return lhs;
            }
        }
    }

    NodePtr parse_unary() {
        if (accept('-')) return make_unary_raw(UnaryOp::Neg, parse_unary());
        if (accept('+')) return parse_unary();
        return parse_power();
    }

    // '^' binds tighter than unary minus on its left and is right-associative.
    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (accept('^')) return make_binary_raw(BinaryOp::Pow, base, parse_unary());
        return base;
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input", pos_);
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_sum();
            if (!accept(')')) fail("expected ')'", pos_);
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
        fail(std::string("unexpected '") + c + "'", pos_);
    }

    NodePtr parse_number() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
            if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
        if (ec != std::errc() || ptr != text_.data() + pos_) fail("malformed number", start);
        return make_constant(v);
    }

    NodePtr parse_identifier() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
        std::string name(text_.substr(start, pos_ - start));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == '(') {
            static const std::map<std::string, UnaryOp, std::less<>> functions = {
                {"sin", UnaryOp::Sin}, {"cos", UnaryOp::Cos},   {"exp", UnaryOp::Exp},  {"log", UnaryOp::Log},
                {"sqrt", UnaryOp::Sqrt}, {"abs", UnaryOp::Abs}, {"sign", UnaryOp::Sign},
            };
            auto it = functions.find(name);
            if (it == functions.end()) fail("unknown function '" + name + "'", start);
            ++pos_;
            NodePtr arg = parse_sum();
            if (!accept(')')) fail("expected ')'", pos_);
            return make_unary_raw(it->second, arg);
        }
        if (name == "pi") return make_constant(std::numbers::pi);
        return make_variable(std::move(name));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------

Expression::Expression() : root_(make_constant(0.0)) {}
Expression::Expression(NodePtr root) : root_(std::move(root)) {}

Expression Expression::constant(double v) { return Expression(make_constant(v)); }
Expression Expression::variable(std::string name) { return Expression(make_variable(std::move(name))); }

double Expression::eval(const Binding& b) const { return eval_node(*root_, b); }

std::set<std::string> Expression::free_variables() const {
    std::set<std::string> out;
    collect_vars(*root_, out);
    return out;
}

bool Expression::contains(UnaryOp op) const {
    std::function<bool(const Node&)> walk = [&](const Node& n) -> bool {
        switch (n.kind) {
            case Node::Kind::Unary: return n.unary == op || walk(*n.lhs);
            case Node::Kind::Binary: return walk(*n.lhs) || walk(*n.rhs);
            default: return false;
        }
    };
    return walk(*root_);
}

std::string Expression::to_string() const { return node_text(*root_); }

Expression operator+(const Expression& a, const Expression& b) { return Expression(fold_binary(BinaryOp::Add, a.root_, b.root_)); }
Expression operator-(const Expression& a, const Expression& b) { return Expression(fold_binary(BinaryOp::Sub, a.root_, b.root_)); }
Expression operator*(const Expression& a, const Expression& b) { return Expression(fold_binary(BinaryOp::Mul, a.root_, b.root_)); }
Expression operator/(const Expression& a, const Expression& b) { return Expression(fold_binary(BinaryOp::Div, a.root_, b.root_)); }
Expression operator-(const Expression& a) { return Expression(fold_unary(UnaryOp::Neg, a.root_)); }
Expression pow(const Expression& a, const Expression& b) { return Expression(fold_binary(BinaryOp::Pow, a.root_, b.root_)); }
Expression apply(UnaryOp op, const Expression& a) { return Expression(fold_unary(op, a.root_)); }

Expression parse_expr(std::string_view text) { return Expression(Parser(text).parse()); }

std::vector<Expression> parse_all(const std::vector<std::string>& texts) {
    std::vector<Expression> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(parse_expr(t));
    return out;
}

// ---------------------------------------------------------------------------
// Differentiation. Terms whose factor does not depend on `var` are dropped
// structurally rather than multiplied by a folded zero.

namespace {

NodePtr diff(const NodePtr& n, const std::string& var);

NodePtr times(NodePtr a, NodePtr b) { return fold_binary(BinaryOp::Mul, std::move(a), std::move(b)); }
NodePtr plus(NodePtr a, NodePtr b) { return fold_binary(BinaryOp::Add, std::move(a), std::move(b)); }
NodePtr minus(NodePtr a, NodePtr b) { return fold_binary(BinaryOp::Sub, std::move(a), std::move(b)); }
NodePtr divide(NodePtr a, NodePtr b) { return fold_binary(BinaryOp::Div, std::move(a), std::move(b)); }

NodePtr diff_unary(const Node& n, const std::string& var) {
    const NodePtr& f = n.lhs;
    NodePtr df = diff(f, var);
    switch (n.unary) {
        case UnaryOp::Neg: return fold_unary(UnaryOp::Neg, df);
        case UnaryOp::Sin: return times(fold_unary(UnaryOp::Cos, f), df);
        case UnaryOp::Cos: return fold_unary(UnaryOp::Neg, times(fold_unary(UnaryOp::Sin, f), df));
        case UnaryOp::Exp: return times(fold_unary(UnaryOp::Exp, f), df);
        case UnaryOp::Log: return divide(df, f);
        case UnaryOp::Sqrt: return divide(df, times(make_constant(2.0), fold_unary(UnaryOp::Sqrt, f)));
        case UnaryOp::Abs: return times(fold_unary(UnaryOp::Sign, f), df);
        case UnaryOp::Sign: return make_constant(0.0);
    }
    return make_constant(0.0);
}

NodePtr diff_binary(const Node& n, const std::string& var) {
    const NodePtr& f = n.lhs;
    const NodePtr& g = n.rhs;
    const bool df_live = depends_on(*f, var);
    const bool dg_live = depends_on(*g, var);
    switch (n.binary) {
        case BinaryOp::Add:
            if (!df_live) return diff(g, var);
            if (!dg_live) return diff(f, var);
            return plus(diff(f, var), diff(g, var));
        case BinaryOp::Sub:
            if (!df_live) return fold_unary(UnaryOp::Neg, diff(g, var));
            if (!dg_live) return diff(f, var);
            return minus(diff(f, var), diff(g, var));
        case BinaryOp::Mul:
            if (!df_live) return times(f, diff(g, var));
            if (!dg_live) return times(diff(f, var), g);
            return plus(times(diff(f, var), g), times(f, diff(g, var)));
        case BinaryOp::Div:
            if (!dg_live) return divide(diff(f, var), g);
            if (!df_live) return fold_unary(UnaryOp::Neg, divide(times(f, diff(g, var)), times(g, g)));
            return minus(divide(diff(f, var), g), divide(times(f, diff(g, var)), times(g, g)));
        case BinaryOp::Pow:
            if (!dg_live) {
                if (g->kind == Node::Kind::Constant) {
                    NodePtr reduced = fold_binary(BinaryOp::Pow, f, make_constant(g->value - 1.0));
                    return times(times(g, reduced), diff(f, var));
                }
                NodePtr reduced = fold_binary(BinaryOp::Pow, f, minus(g, make_constant(1.0)));
                return times(times(g, reduced), diff(f, var));
            }
            if (!df_live) {
                return times(times(make_binary_raw(BinaryOp::Pow, f, g), fold_unary(UnaryOp::Log, f)), diff(g, var));
            }
            return times(make_binary_raw(BinaryOp::Pow, f, g),
                         plus(times(diff(g, var), fold_unary(UnaryOp::Log, f)), divide(times(g, diff(f, var)), f)));
    }
    return make_constant(0.0);
}

NodePtr diff(const NodePtr& n, const std::string& var) {
    if (!depends_on(*n, var)) return make_constant(0.0);
    switch (n->kind) {
        case Node::Kind::Constant: return make_constant(0.0);
        case Node::Kind::Variable: return make_constant(n->name == var ? 1.0 : 0.0);
        case Node::Kind::Unary: return diff_unary(*n, var);
        case Node::Kind::Binary: return diff_binary(*n, var);
    }
    return make_constant(0.0);
}

}  // namespace

Expression differentiate(const Expression& e, const std::string& var) { return Expression(diff(e.node(), var)); }

// ---------------------------------------------------------------------------

CompiledExpr::CompiledExpr(const Expression& e, const std::vector<std::string>& variables) {
    keep_alive_.push_back(e.node());
    emit(e.node(), variables);
    int depth = 0;
    for (const auto& in : code_) {
        switch (in.op) {
            case Op::Const:
            case Op::Var: ++depth; break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Pow: --depth; break;
            default: break;
        }
        max_depth_ = std::max(max_depth_, depth);
    }
}

void CompiledExpr::emit(const NodePtr& n, const std::vector<std::string>& variables) {
    switch (n->kind) {
        case Node::Kind::Constant:
            code_.push_back({Op::Const, -1, n->value, n.get()});
            return;
        case Node::Kind::Variable: {
            for (std::size_t i = 0; i < variables.size(); ++i) {
                if (variables[i] == n->name) {
                    code_.push_back({Op::Var, static_cast<int>(i), 0.0, n.get()});
                    return;
                }
            }
            throw EvalError(EvalError::Kind::Unbound, "unbound variable '" + n->name + "'", n->name);
        }
        case Node::Kind::Unary: {
            emit(n->lhs, variables);
            static constexpr Op table[] = {Op::Neg, Op::Sin, Op::Cos, Op::Exp, Op::Log, Op::Sqrt, Op::Abs, Op::Sign};
            code_.push_back({table[static_cast<int>(n->unary)], -1, 0.0, n.get()});
            return;
        }
        case Node::Kind::Binary: {
            emit(n->lhs, variables);
            emit(n->rhs, variables);
            static constexpr Op table[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow};
            code_.push_back({table[static_cast<int>(n->binary)], -1, 0.0, n.get()});
            return;
        }
    }
}

double CompiledExpr::operator()(std::span<const double> slots) const {
    if (code_.empty()) return 0.0;
    constexpr int kInline = 64;
    double inline_stack[kInline];
    std::vector<double> heap;
    double* stack = inline_stack;
    if (max_depth_ > kInline) {
        heap.resize(static_cast<std::size_t>(max_depth_));
        stack = heap.data();
    }
    int top = -1;
    for (const auto& in : code_) {
        switch (in.op) {
            case Op::Const: stack[++top] = in.value; break;
            case Op::Var: stack[++top] = slots[static_cast<std::size_t>(in.slot)]; break;
            case Op::Neg: stack[top] = -stack[top]; break;
            case Op::Sin: stack[top] = std::sin(stack[top]); break;
            case Op::Cos: stack[top] = std::cos(stack[top]); break;
            case Op::Exp: stack[top] = std::exp(stack[top]); break;
            case Op::Log: stack[top] = apply_unary(UnaryOp::Log, stack[top], in.node); break;
            case Op::Sqrt: stack[top] = apply_unary(UnaryOp::Sqrt, stack[top], in.node); break;
            case Op::Abs: stack[top] = std::fabs(stack[top]); break;
            case Op::Sign: stack[top] = apply_unary(UnaryOp::Sign, stack[top], in.node); break;
            case Op::Add: --top; stack[top] = stack[top] + stack[top + 1]; break;
            case Op::Sub: --top; stack[top] = stack[top] - stack[top + 1]; break;
            case Op::Mul: --top; stack[top] = stack[top] * stack[top + 1]; break;
            case Op::Div: --top; stack[top] = apply_binary(BinaryOp::Div, stack[top], stack[top + 1], in.node); break;
            case Op::Pow: --top; stack[top] = apply_binary(BinaryOp::Pow, stack[top], stack[top + 1], in.node); break;
        }
    }
    return stack[0];
}

std::vector<std::string> state_names(int n) {
    std::vector<std::string> out;
    for (int i = 1; i <= n; ++i) out.push_back("x" + std::to_string(i));
    return out;
}

std::vector<std::string> input_names(int m) {
    std::vector<std::string> out;
    for (int i = 1; i <= m; ++i) out.push_back("u" + std::to_string(i));
    return out;
}

}  // namespace cbflab
