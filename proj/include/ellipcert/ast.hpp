// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ellipcert/error.hpp"

namespace ellipcert {

struct Expr {
    enum class Kind { Number, Var, Neg, Add, Sub, Mul, Div, Call, Compare };

    Kind kind = Kind::Number;
    double value = 0.0;     // Number
    std::string name;       // Var, Call; comparison operator for Compare
    std::vector<Expr> args; // Var: subscripts; Neg: operand; binary: lhs, rhs; Call: argument
    SourceLoc loc;

    static Expr number(double v, SourceLoc loc = {}) {
        Expr e;
        e.kind = Kind::Number;
        e.value = v;
        e.loc = loc;
        return e;
    }
    static Expr var(std::string name, std::vector<Expr> subscripts = {}, SourceLoc loc = {}) {
        Expr e;
        e.kind = Kind::Var;
        e.name = std::move(name);
        e.args = std::move(subscripts);
        e.loc = loc;
        return e;
    }
    static Expr unary(Kind k, Expr a, SourceLoc loc = {}) {
        Expr e;
        e.kind = k;
        e.args.push_back(std::move(a));
        e.loc = loc;
        return e;
    }
    static Expr binary(Kind k, Expr a, Expr b, SourceLoc loc = {}) {
        Expr e;
        e.kind = k;
        e.args.push_back(std::move(a));
        e.args.push_back(std::move(b));
        e.loc = loc;
        return e;
    }
    static Expr call(std::string fn, Expr arg, SourceLoc loc = {}) {
        Expr e;
        e.kind = Kind::Call;
        e.name = std::move(fn);
        e.args.push_back(std::move(arg));
        e.loc = loc;
        return e;
    }
};

// Locations are ignored: two trees are equal when they denote the same syntax.
inline bool same_structure(const Expr& a, const Expr& b) {
    if (a.kind != b.kind || a.name != b.name || a.args.size() != b.args.size()) {
        return false;
    }
    if (a.kind == Expr::Kind::Number && a.value != b.value) {
        return false;
    }
    for (std::size_t i = 0; i < a.args.size(); ++i) {
        if (!same_structure(a.args[i], b.args[i])) {
            return false;
        }
    }
    return true;
}

struct LValue {
    std::string name;
    std::vector<Expr> subscripts;
    SourceLoc loc;
};

enum class AssignOp { Set, Add, Sub };

struct Stmt {
    enum class Kind { Assign, Read, Write, Assume, For, While };

    Kind kind = Kind::Assign;
    LValue target;               // Assign, Read
    AssignOp op = AssignOp::Set; // Assign
    Expr value;                  // Assign rhs, Write argument, Assume condition
    int channel = 0;             // Read
    std::string index;           // For
    long lo = 0;                 // For: index runs over [lo, hi)
    long hi = 0;
    std::vector<Stmt> body; // For, While
    SourceLoc loc;
};

inline bool same_structure(const Stmt& a, const Stmt& b);

inline bool same_structure(const std::vector<Stmt>& a, const std::vector<Stmt>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!same_structure(a[i], b[i])) {
            return false;
        }
    }
    return true;
}

inline bool same_structure(const LValue& a, const LValue& b) {
    if (a.name != b.name || a.subscripts.size() != b.subscripts.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.subscripts.size(); ++i) {
        if (!same_structure(a.subscripts[i], b.subscripts[i])) {
            return false;
        }
    }
    return true;
}

inline bool same_structure(const Stmt& a, const Stmt& b) {
    if (a.kind != b.kind) {
        return false;
    }
    switch (a.kind) {
    case Stmt::Kind::Assign:
        return a.op == b.op && same_structure(a.target, b.target) && same_structure(a.value, b.value);
    case Stmt::Kind::Read: return a.channel == b.channel && same_structure(a.target, b.target);
    case Stmt::Kind::Write:
    case Stmt::Kind::Assume: return same_structure(a.value, b.value);
    case Stmt::Kind::For:
        return a.index == b.index && a.lo == b.lo && a.hi == b.hi && same_structure(a.body, b.body);
    case Stmt::Kind::While: return same_structure(a.body, b.body);
    }
    return false;
}

enum class ScalarType { Double, Int };

struct VarDecl {
    ScalarType type = ScalarType::Double;
    std::string name;
    std::vector<long> dims;    // empty for scalars
    std::vector<double> init;  // flattened row-major, one entry per cell
    SourceLoc loc;

    [[nodiscard]] std::size_t cell_count() const {
        std::size_t n = 1;
        for (long d : dims) {
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
    [[nodiscard]] bool is_array() const { return !dims.empty(); }
};

/// A sector-bounded function `nonlin f;` (optionally `nonlin f = tanh;` to pick
/// the concrete function used by the simulator; identity otherwise).
struct NonlinDecl {
    std::string name;
    std::string binding;
    SourceLoc loc;
};

struct SourceProgram {
    std::vector<VarDecl> decls;
    std::vector<NonlinDecl> nonlins;
    std::vector<Stmt> body;

    [[nodiscard]] const VarDecl* find_decl(const std::string& name) const {
        for (const auto& d : decls) {
            if (d.name == name) {
                return &d;
            }
        }
        return nullptr;
    }
    [[nodiscard]] bool is_sector_function(const std::string& name) const;
};

inline bool is_builtin_sector(const std::string& name) {
    return name == "sin" || name == "tanh" || name == "sat";
}

inline bool SourceProgram::is_sector_function(const std::string& name) const {
    if (is_builtin_sector(name)) {
        return true;
    }
    for (const auto& n : nonlins) {
        if (n.name == name) {
            return true;
        }
    }
    return false;
}

inline bool same_structure(const SourceProgram& a, const SourceProgram& b) {
    if (a.decls.size() != b.decls.size() || a.nonlins.size() != b.nonlins.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.decls.size(); ++i) {
        const auto& x = a.decls[i];
        const auto& y = b.decls[i];
        if (x.type != y.type || x.name != y.name || x.dims != y.dims || x.init != y.init) {
            return false;
        }
    }
    for (std::size_t i = 0; i < a.nonlins.size(); ++i) {
        if (a.nonlins[i].name != b.nonlins[i].name || a.nonlins[i].binding != b.nonlins[i].binding) {
            return false;
        }
    }
    return same_structure(a.body, b.body);
}

// ---------------------------------------------------------------------------
// Pretty printing. Numbers use the shortest round-trip decimal form.

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eEn") == std::string::npos) {
        s += ".0";
    }
    return s;
}

namespace detail {

inline int precedence(Expr::Kind k) {
    switch (k) {
    case Expr::Kind::Compare: return 0;
    case Expr::Kind::Add:
    case Expr::Kind::Sub: return 1;
    case Expr::Kind::Mul:
    case Expr::Kind::Div: return 2;
    case Expr::Kind::Neg: return 3;
    default: return 4;
    }
}

} // namespace detail

inline std::string to_source(const Expr& e);

/// Subscripts print integral literals without a fraction: `x[1]`, not `x[1.0]`.
inline std::string subscript_source(const Expr& e) {
    if (e.kind == Expr::Kind::Number && e.value == std::floor(e.value) && std::abs(e.value) < 1e15) {
        return std::to_string(static_cast<long long>(e.value));
    }
    return to_source(e);
}

inline std::string to_source(const Expr& e) {
    using K = Expr::Kind;
    auto wrap = [](const Expr& child, int min_prec) {
        std::string s = to_source(child);
        // Negative literals get parentheses so `a - -1` does not lex as `a--`.
        bool negative_literal = child.kind == K::Number && (child.value < 0 || std::signbit(child.value));
        if (detail::precedence(child.kind) < min_prec || negative_literal) {
            return "(" + s + ")";
        }
        return s;
    };
    switch (e.kind) {
    case K::Number: return format_number(e.value);
    case K::Var: {
        std::string s = e.name;
        for (const auto& sub : e.args) {
            s += "[" + subscript_source(sub) + "]";
        }
        return s;
    }
    case K::Neg: return "-" + wrap(e.args[0], 4);
    case K::Add: return wrap(e.args[0], 1) + " + " + wrap(e.args[1], 2);
    case K::Sub: return wrap(e.args[0], 1) + " - " + wrap(e.args[1], 2);
    case K::Mul: return wrap(e.args[0], 2) + "*" + wrap(e.args[1], 3);
    case K::Div: return wrap(e.args[0], 2) + "/" + wrap(e.args[1], 3);
    case K::Call: return e.name + "(" + to_source(e.args[0]) + ")";
    case K::Compare: return wrap(e.args[0], 1) + " " + e.name + " " + wrap(e.args[1], 1);
    }
    return {};
}

inline std::string to_source(const LValue& lv) {
    std::string s = lv.name;
    for (const auto& sub : lv.subscripts) {
        s += "[" + subscript_source(sub) + "]";
    }
    return s;
}

inline void print_stmt(const Stmt& s, std::string& out, int depth) {
    std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    switch (s.kind) {
    case Stmt::Kind::Assign: {
        const char* op = s.op == AssignOp::Set ? " = " : s.op == AssignOp::Add ? " += " : " -= ";
        out += pad + to_source(s.target) + op + to_source(s.value) + ";\n";
        break;
    }
    case Stmt::Kind::Read:
        out += pad + to_source(s.target) + " = read(" + std::to_string(s.channel) + ");\n";
        break;
    case Stmt::Kind::Write: out += pad + "write(" + to_source(s.value) + ");\n"; break;
    case Stmt::Kind::Assume: out += pad + "assume(" + to_source(s.value) + ");\n"; break;
    case Stmt::Kind::For:
        out += pad + "for (" + s.index + " = " + std::to_string(s.lo) + "; " + s.index + " < " +
               std::to_string(s.hi) + "; " + s.index + "++) {\n";
        for (const auto& c : s.body) {
            print_stmt(c, out, depth + 1);
        }
        out += pad + "}\n";
        break;
    case Stmt::Kind::While:
        out += pad + "while (1) {\n";
        for (const auto& c : s.body) {
            print_stmt(c, out, depth + 1);
        }
        out += pad + "}\n";
        break;
    }
}

inline std::string to_source(const Stmt& s) {
    std::string out;
    print_stmt(s, out, 0);
    if (!out.empty() && out.back() == '\n') {
        out.pop_back();
    }
    return out;
}

inline std::string to_source(const SourceProgram& p) {
    std::string out;
    for (const auto& n : p.nonlins) {
        out += "nonlin " + n.name + (n.binding.empty() ? "" : " = " + n.binding) + ";\n";
    }
    for (const auto& d : p.decls) {
        out += (d.type == ScalarType::Int ? "int " : "double ") + d.name;
        for (long dim : d.dims) {
            out += "[" + std::to_string(dim) + "]";
        }
        if (d.is_array()) {
            out += " = {";
            for (std::size_t i = 0; i < d.init.size(); ++i) {
                out += (i ? ", " : "") + format_number(d.init[i]);
            }
            out += "};\n";
        } else {
            out += " = " + format_number(d.init.empty() ? 0.0 : d.init[0]) + ";\n";
        }
    }
    for (const auto& s : p.body) {
        print_stmt(s, out, 0);
    }
    return out;
}

} // namespace ellipcert
