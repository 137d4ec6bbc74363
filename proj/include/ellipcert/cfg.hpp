// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ellipcert/ast.hpp"
#include "ellipcert/error.hpp"

namespace ellipcert {

struct CfgNode {
    enum class Kind { Entry, Stmt, Exit };
    Kind kind = Kind::Stmt;
    Stmt stmt; // valid for Kind::Stmt
};

/// Control-flow graph of a controller. Node 0 is the entry node, which defines
/// every declared variable with its initializer. The top-level `while(1)` body
/// is a chain whose last node jumps back to `loop_head`.
struct Cfg {
    std::vector<VarDecl> decls;
    std::vector<NonlinDecl> nonlins;
    std::vector<CfgNode> nodes;
    std::vector<std::vector<std::size_t>> succ;
    std::optional<std::size_t> loop_head;
    std::optional<std::size_t> loop_tail;
    std::size_t entry = 0;
    std::size_t exit = 0;

    [[nodiscard]] std::vector<std::vector<std::size_t>> preds() const {
        std::vector<std::vector<std::size_t>> p(nodes.size());
        for (std::size_t n = 0; n < succ.size(); ++n) {
            for (std::size_t s : succ[n]) {
                p[s].push_back(n);
            }
        }
        return p;
    }

    [[nodiscard]] const VarDecl* find_decl(const std::string& name) const {
        for (const auto& d : decls) {
            if (d.name == name) {
                return &d;
            }
        }
        return nullptr;
    }

    [[nodiscard]] bool in_loop(std::size_t n) const {
        return loop_head && n >= *loop_head && loop_tail && n <= *loop_tail;
    }

    /// Nodes of the loop body in execution order.
    [[nodiscard]] std::vector<std::size_t> body_nodes() const {
        std::vector<std::size_t> out;
        if (loop_head) {
            for (std::size_t n = *loop_head; n <= *loop_tail; ++n) {
                out.push_back(n);
            }
        }
        return out;
    }

    /// Statement nodes executed once before the loop.
    [[nodiscard]] std::vector<std::size_t> prefix_nodes() const {
        std::vector<std::size_t> out;
        std::size_t end = loop_head ? *loop_head : exit;
        for (std::size_t n = entry + 1; n < end; ++n) {
            out.push_back(n);
        }
        return out;
    }
};

inline Cfg build_cfg(const SourceProgram& prog) {
    Cfg cfg;
    cfg.decls = prog.decls;
    cfg.nonlins = prog.nonlins;
    cfg.nodes.push_back({CfgNode::Kind::Entry, {}});
    const Stmt* loop = nullptr;
    for (const auto& s : prog.body) {
        if (s.kind == Stmt::Kind::While) {
            loop = &s;
            break;
        }
        cfg.nodes.push_back({CfgNode::Kind::Stmt, s});
    }
    if (loop != nullptr && !loop->body.empty()) {
        cfg.loop_head = cfg.nodes.size();
        for (const auto& s : loop->body) {
            cfg.nodes.push_back({CfgNode::Kind::Stmt, s});
        }
        cfg.loop_tail = cfg.nodes.size() - 1;
    }
    cfg.exit = cfg.nodes.size();
    cfg.nodes.push_back({CfgNode::Kind::Exit, {}});
    cfg.succ.assign(cfg.nodes.size(), {});
    for (std::size_t n = 0; n + 1 < cfg.nodes.size(); ++n) {
        if (cfg.loop_tail && n == *cfg.loop_tail) {
            cfg.succ[n].push_back(*cfg.loop_head);
        } else {
            cfg.succ[n].push_back(n + 1);
        }
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Cells: scalar storage locations `x` or `A[1][0]`.

inline std::string cell_name(const std::string& base, const std::vector<long>& idx) {
    std::string s = base;
    for (long i : idx) {
        s += "[" + std::to_string(i) + "]";
    }
    return s;
}

inline std::string cell_base(const std::string& cell) { return cell.substr(0, cell.find('[')); }

inline std::vector<std::string> decl_cells(const VarDecl& d) {
    std::vector<std::string> out;
    std::vector<long> idx(d.dims.size(), 0);
    for (std::size_t k = 0; k < d.cell_count(); ++k) {
        out.push_back(cell_name(d.name, idx));
        for (std::size_t j = d.dims.size(); j-- > 0;) {
            if (++idx[j] < d.dims[j]) {
                break;
            }
            idx[j] = 0;
        }
    }
    return out;
}

/// Integer value of a constant subscript, if it is one.
inline std::optional<long> constant_subscript(const Expr& e) {
    using K = Expr::Kind;
    switch (e.kind) {
    case K::Number:
        if (e.value == std::floor(e.value)) {
            return static_cast<long>(e.value);
        }
        return std::nullopt;
    case K::Neg: {
        auto a = constant_subscript(e.args[0]);
        return a ? std::optional<long>(-*a) : std::nullopt;
    }
    case K::Add:
    case K::Sub:
    case K::Mul: {
        auto a = constant_subscript(e.args[0]);
        auto b = constant_subscript(e.args[1]);
        if (!a || !b) {
            return std::nullopt;
        }
        return e.kind == K::Add ? *a + *b : e.kind == K::Sub ? *a - *b : *a * *b;
    }
    default: return std::nullopt;
    }
}

/// Cell named by a variable reference whose subscripts are all constant.
inline std::string cell_of(const std::string& base, const std::vector<Expr>& subs) {
    std::vector<long> idx;
    for (const auto& s : subs) {
        auto v = constant_subscript(s);
        if (!v) {
            throw Error(ErrorKind::Unsupported, "subscript of '" + base + "' is not constant after unrolling", s.loc);
        }
        idx.push_back(*v);
    }
    return cell_name(base, idx);
}

namespace detail {

inline void substitute(Expr& e, const std::string& index, long value, const Cfg& cfg) {
    if (e.kind == Expr::Kind::Var && e.name == index && e.args.empty()) {
        e = Expr::number(static_cast<double>(value), e.loc);
        return;
    }
    for (auto& a : e.args) {
        substitute(a, index, value, cfg);
    }
}

inline void fold_subscripts(std::vector<Expr>& subs, const std::string& base, const Cfg& cfg) {
    const VarDecl* d = cfg.find_decl(base);
    for (std::size_t k = 0; k < subs.size(); ++k) {
        auto v = constant_subscript(subs[k]);
        if (!v) {
            throw Error(ErrorKind::Unsupported, "subscript of '" + base + "' is not constant after unrolling",
                        subs[k].loc);
        }
        if (d != nullptr && (*v < 0 || *v >= d->dims[k])) {
            throw Error(ErrorKind::Unsupported,
                        "subscript " + std::to_string(*v) + " of '" + base + "' is out of range", subs[k].loc);
        }
        subs[k] = Expr::number(static_cast<double>(*v), subs[k].loc);
    }
}

inline void fold_expr(Expr& e, const Cfg& cfg) {
    if (e.kind == Expr::Kind::Var) {
        fold_subscripts(e.args, e.name, cfg);
        return;
    }
    for (auto& a : e.args) {
        fold_expr(a, cfg);
    }
}

inline void substitute_stmt(Stmt& s, const std::string& index, long value, const Cfg& cfg) {
    for (auto& sub : s.target.subscripts) {
        substitute(sub, index, value, cfg);
    }
    substitute(s.value, index, value, cfg);
    for (auto& c : s.body) {
        substitute_stmt(c, index, value, cfg);
    }
}

inline double unroll_factor(const Stmt& s) {
    if (s.kind != Stmt::Kind::For) {
        return 1.0;
    }
    double inner = 0;
    for (const auto& c : s.body) {
        inner += unroll_factor(c);
    }
    return std::max(0.0, static_cast<double>(s.hi - s.lo)) * std::max(inner, 1.0);
}

inline void expand(const Stmt& s, const Cfg& cfg, std::vector<Stmt>& out) {
    if (s.kind == Stmt::Kind::For) {
        for (long v = s.lo; v < s.hi; ++v) {
            for (const auto& c : s.body) {
                Stmt copy = c;
                substitute_stmt(copy, s.index, v, cfg);
                expand(copy, cfg, out);
            }
        }
        return;
    }
    Stmt e = s;
    if (e.kind == Stmt::Kind::Assign || e.kind == Stmt::Kind::Read) {
        fold_subscripts(e.target.subscripts, e.target.name, cfg);
    }
    fold_expr(e.value, cfg);
    out.push_back(std::move(e));
}

} // namespace detail

/// Largest number of statement instances a single loop nest may unroll into.
inline constexpr double kUnrollLimit = 1e6;

/// Replaces every `for` node by its fully unrolled body; all subscripts become
/// integer literals and loop indices disappear.
inline Cfg unroll_loops(const Cfg& cfg, double limit = kUnrollLimit) {
    Cfg out;
    out.decls = cfg.decls;
    out.nonlins = cfg.nonlins;
    std::vector<std::size_t> remap(cfg.nodes.size());
    double total = 0;
    for (std::size_t n = 0; n < cfg.nodes.size(); ++n) {
        const auto& node = cfg.nodes[n];
        remap[n] = out.nodes.size();
        if (node.kind != CfgNode::Kind::Stmt) {
            out.nodes.push_back(node);
            continue;
        }
        double factor = detail::unroll_factor(node.stmt);
        total += factor;
        if (factor > limit || total > limit) {
            throw Error(ErrorKind::UnrollLimit,
                        "unrolling produces " + format_number(std::max(factor, total)) +
                            " statements, above the limit of " + format_number(limit),
                        node.stmt.loc);
        }
        std::vector<Stmt> expanded;
        detail::expand(node.stmt, cfg, expanded);
        for (auto& s : expanded) {
            out.nodes.push_back({CfgNode::Kind::Stmt, std::move(s)});
        }
    }
    out.entry = remap[cfg.entry];
    out.exit = remap[cfg.exit];
    if (cfg.loop_head) {
        std::size_t head = remap[*cfg.loop_head];
        std::size_t tail = remap[*cfg.loop_tail + 1] - 1; // node after the tail is exit
        if (tail >= head) {
            out.loop_head = head;
            out.loop_tail = tail;
        }
    }
    out.succ.assign(out.nodes.size(), {});
    for (std::size_t n = 0; n + 1 < out.nodes.size(); ++n) {
        if (out.loop_tail && n == *out.loop_tail) {
            out.succ[n].push_back(*out.loop_head);
        } else {
            out.succ[n].push_back(n + 1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Concrete execution of an unrolled CFG over a flat slot store.

using SectorFn = double (*)(double);

inline double sector_identity(double x) { return x; }
inline double sector_sin(double x) { return std::sin(x); }
inline double sector_tanh(double x) { return std::tanh(x); }
inline double sector_sat(double x) { return std::clamp(x, -1.0, 1.0); }

inline SectorFn builtin_sector(const std::string& name) {
    if (name == "sin") {
        return sector_sin;
    }
    if (name == "tanh") {
        return sector_tanh;
    }
    if (name == "sat") {
        return sector_sat;
    }
    return sector_identity;
}

inline SectorFn resolve_sector(const std::vector<NonlinDecl>& nonlins, const std::string& name) {
    for (const auto& n : nonlins) {
        if (n.name == name) {
            return n.binding.empty() ? sector_identity : builtin_sector(n.binding);
        }
    }
    return builtin_sector(name);
}

class Machine {
  public:
    using InputFn = std::function<double(int channel, std::size_t node)>;

    /// `cfg` must be unrolled: every subscript is a literal.
    explicit Machine(const Cfg& cfg) : cfg_(&cfg) {
        for (const auto& d : cfg.decls) {
            auto cells = decl_cells(d);
            for (std::size_t k = 0; k < cells.size(); ++k) {
                slots_.emplace(cells[k], init_.size());
                names_.push_back(cells[k]);
                init_.push_back(d.init.empty() ? 0.0 : d.init[k]);
            }
        }
        code_.resize(cfg.nodes.size());
        for (std::size_t n = 0; n < cfg.nodes.size(); ++n) {
            if (cfg.nodes[n].kind == CfgNode::Kind::Stmt) {
                code_[n] = compile(cfg.nodes[n].stmt);
            }
        }
    }

    [[nodiscard]] std::size_t size() const { return init_.size(); }
    [[nodiscard]] const std::vector<double>& initial_store() const { return init_; }
    [[nodiscard]] const std::string& cell(std::size_t slot) const { return names_[slot]; }
    [[nodiscard]] std::optional<std::size_t> slot(const std::string& cell) const {
        auto it = slots_.find(cell);
        if (it == slots_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    void exec(std::size_t node, std::vector<double>& store, const InputFn& input) const {
        const Compiled& c = code_[node];
        switch (c.kind) {
        case Stmt::Kind::Assign: {
            double v = eval(c, c.root, store);
            double& dst = store[c.target];
            dst = c.op == AssignOp::Set ? v : c.op == AssignOp::Add ? dst + v : dst - v;
            break;
        }
        case Stmt::Kind::Read: store[c.target] = input ? input(c.channel, node) : 0.0; break;
        default: break; // write/assume have no effect on the store
        }
    }

    /// Runs the statements before the loop.
    void run_prefix(std::vector<double>& store, const InputFn& input) const {
        for (std::size_t n : cfg_->prefix_nodes()) {
            exec(n, store, input);
        }
    }

    /// Runs one loop iteration starting at `from` (defaults to the loop head).
    void run_iteration(std::vector<double>& store, const InputFn& input,
                       std::optional<std::size_t> from = std::nullopt) const {
        if (!cfg_->loop_head) {
            return;
        }
        for (std::size_t n = from.value_or(*cfg_->loop_head); n <= *cfg_->loop_tail; ++n) {
            exec(n, store, input);
        }
    }

    [[nodiscard]] double eval_write(std::size_t node, const std::vector<double>& store) const {
        const Compiled& c = code_[node];
        return c.kind == Stmt::Kind::Write ? eval(c, c.root, store) : 0.0;
    }

  private:
    struct Op {
        Expr::Kind kind;
        double value = 0;
        std::size_t slot = 0;
        int a = -1;
        int b = -1;
        SectorFn fn = nullptr;
    };
    struct Compiled {
        Stmt::Kind kind = Stmt::Kind::Assume;
        AssignOp op = AssignOp::Set;
        std::size_t target = 0;
        int channel = 0;
        std::vector<Op> ops;
        int root = -1;
    };

    const Cfg* cfg_;
    std::unordered_map<std::string, std::size_t> slots_;
    std::vector<std::string> names_;
    std::vector<double> init_;
    std::vector<Compiled> code_;

    std::size_t require_slot(const std::string& cell, SourceLoc loc) const {
        auto it = slots_.find(cell);
        if (it == slots_.end()) {
            throw Error(ErrorKind::Undeclared, "unknown cell '" + cell + "'", loc);
        }
        return it->second;
    }

    int emit(const Expr& e, Compiled& c) const {
        Op op{e.kind};
        switch (e.kind) {
        case Expr::Kind::Number: op.value = e.value; break;
        case Expr::Kind::Var: op.slot = require_slot(cell_of(e.name, e.args), e.loc); break;
        case Expr::Kind::Call:
            op.fn = resolve_sector(cfg_->nonlins, e.name);
            op.a = emit(e.args[0], c);
            break;
        case Expr::Kind::Neg: op.a = emit(e.args[0], c); break;
        default:
            op.a = emit(e.args[0], c);
            op.b = emit(e.args[1], c);
            break;
        }
        c.ops.push_back(op);
        return static_cast<int>(c.ops.size() - 1);
    }

    Compiled compile(const Stmt& s) const {
        Compiled c;
        c.kind = s.kind;
        c.op = s.op;
        c.channel = s.channel;
        if (s.kind == Stmt::Kind::Assign || s.kind == Stmt::Kind::Read) {
            c.target = require_slot(cell_of(s.target.name, s.target.subscripts), s.loc);
        }
        if (s.kind == Stmt::Kind::Assign || s.kind == Stmt::Kind::Write) {
            c.root = emit(s.value, c);
        }
        return c;
    }

    static double eval(const Compiled& c, int i, const std::vector<double>& store) {
        const Op& op = c.ops[static_cast<std::size_t>(i)];
        switch (op.kind) {
        case Expr::Kind::Number: return op.value;
        case Expr::Kind::Var: return store[op.slot];
        case Expr::Kind::Neg: return -eval(c, op.a, store);
        case Expr::Kind::Add: return eval(c, op.a, store) + eval(c, op.b, store);
        case Expr::Kind::Sub: return eval(c, op.a, store) - eval(c, op.b, store);
        case Expr::Kind::Mul: return eval(c, op.a, store) * eval(c, op.b, store);
        case Expr::Kind::Div: return eval(c, op.a, store) / eval(c, op.b, store);
        case Expr::Kind::Call: return op.fn(eval(c, op.a, store));
        case Expr::Kind::Compare: return 0.0;
        }
        return 0.0;
    }
};

} // namespace ellipcert
