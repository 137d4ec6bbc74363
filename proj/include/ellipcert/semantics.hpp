// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ellipcert/ast.hpp"
#include "ellipcert/cfg.hpp"
#include "ellipcert/ellipsoid.hpp"
#include "ellipcert/error.hpp"
#include "ellipcert/parser.hpp"
#include "ellipcert/roles.hpp"

namespace ellipcert {

enum class RuleKind {
    AffineImage,
    Intro,
    Drop,
    InitZero,
    ConvexCombine,
    Product,
    Project,
    InverseImage,
    CopyDirect,
    CopyReverse,
    SectorDirect,
    SectorReverse,
};

inline constexpr RuleKind kAllRuleKinds[] = {
    RuleKind::AffineImage, RuleKind::Intro,       RuleKind::Drop,         RuleKind::InitZero,
    RuleKind::ConvexCombine, RuleKind::Product,   RuleKind::Project,      RuleKind::InverseImage,
    RuleKind::CopyDirect,  RuleKind::CopyReverse, RuleKind::SectorDirect, RuleKind::SectorReverse,
};

inline const char* to_string(RuleKind k) {
    switch (k) {
    case RuleKind::AffineImage: return "AffineImage";
    case RuleKind::Intro: return "Intro";
    case RuleKind::Drop: return "Drop";
    case RuleKind::InitZero: return "InitZero";
    case RuleKind::ConvexCombine: return "ConvexCombine";
    case RuleKind::Product: return "Product";
    case RuleKind::Project: return "Project";
    case RuleKind::InverseImage: return "InverseImage";
    case RuleKind::CopyDirect: return "CopyDirect";
    case RuleKind::CopyReverse: return "CopyReverse";
    case RuleKind::SectorDirect: return "SectorDirect";
    case RuleKind::SectorReverse: return "SectorReverse";
    }
    return "?";
}

inline std::optional<RuleKind> rule_kind_from_string(std::string_view s) {
    for (RuleKind k : kAllRuleKinds) {
        if (s == to_string(k)) {
            return k;
        }
    }
    return std::nullopt;
}

/// Output form of a rule.
inline Form rule_form(RuleKind k) {
    switch (k) {
    case RuleKind::ConvexCombine:
    case RuleKind::InverseImage:
    case RuleKind::CopyDirect:
    case RuleKind::SectorDirect: return Form::Direct;
    default: return Form::Reverse;
    }
}

/// Rules computed as Q = A P A' in reverse form.
inline bool is_affine_kind(RuleKind k) {
    return k == RuleKind::AffineImage || k == RuleKind::Intro || k == RuleKind::InitZero || k == RuleKind::Drop ||
           k == RuleKind::Project;
}

/// Name of the scalar parameter a rule takes, or nullptr.
inline const char* rule_param_name(RuleKind k) {
    switch (k) {
    case RuleKind::Product:
    case RuleKind::CopyDirect: return "lambda";
    case RuleKind::CopyReverse:
    case RuleKind::SectorReverse: return "epsilon";
    case RuleKind::SectorDirect: return "mu";
    default: return nullptr;
    }
}

enum class ParamKind { Lambda, CopyEps, SectorEps };

inline const char* to_string(ParamKind k) {
    switch (k) {
    case ParamKind::Lambda: return "lambda";
    case ParamKind::CopyEps: return "eps_y";
    case ParamKind::SectorEps: return "eps_u";
    }
    return "?";
}

/// One coordinate of the search vector theta. Coordinates live in [0, 1] and
/// are mapped to the rule's admissible range (see `resolve_param`).
struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::Lambda;
    std::size_t step = 0;
};

/// A compiled rule with its scalar parameter left symbolic.
struct RuleTemplate {
    RuleKind kind = RuleKind::AffineImage;
    std::size_t node = 0;
    SourceLoc loc;
    std::string statement;
    std::vector<std::string> pre;
    std::vector<std::string> post;
    Matrix A; // affine kinds, copy rules and inverse images; empty otherwise
    std::optional<std::size_t> param;
    double input_bound = 0.0; // Product: |u| <= input_bound
    int channel = 0;
};

struct LoopSummary {
    std::vector<std::string> head_layout;
    std::vector<RuleTemplate> rules;
    std::vector<ParamSpec> params;

    [[nodiscard]] std::size_t dim() const { return head_layout.size(); }
    /// Chains without copy or sector rules are affine in P.
    [[nodiscard]] bool linear() const {
        return std::none_of(rules.begin(), rules.end(), [](const RuleTemplate& r) {
            return r.kind == RuleKind::CopyReverse || r.kind == RuleKind::SectorReverse ||
                   r.kind == RuleKind::CopyDirect || r.kind == RuleKind::SectorDirect;
        });
    }
};

// ---------------------------------------------------------------------------
// Parameter ranges.

inline constexpr double kLambdaLo = 1e-6;
inline constexpr double kEpsRelLo = 1e-6;
inline constexpr double kEpsRelHi = 1e3;

inline double log_interp(double lo, double hi, double r) {
    r = std::clamp(r, 0.0, 1.0);
    return std::exp(std::log(lo) + r * (std::log(hi) - std::log(lo)));
}

/// Maps r in [0, 1] to an absolute rule parameter:
///   lambda: 1 - lambda log-spaced in [1e-6, 1 - 1e-6];
///   eps_y:  lambda_max(pre) * s, s log-spaced in [1e-6, 1e3];
///   eps_u:  lambda_max(pre) * (1 + s), same s.
inline double resolve_param(ParamKind kind, double r, const SymMatrix& pre) {
    switch (kind) {
    case ParamKind::Lambda: return 1.0 - log_interp(kLambdaLo, 1.0 - kLambdaLo, r);
    case ParamKind::CopyEps:
    case ParamKind::SectorEps: {
        double top = std::max(max_eigenvalue(pre.mat()), 0.0);
        double scale = top > 0.0 ? top : 1.0;
        double s = log_interp(kEpsRelLo, kEpsRelHi, r);
        return kind == ParamKind::CopyEps ? scale * s : (top > 0.0 ? top * (1.0 + s) : s);
    }
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Rule application: the abstract transfer function of one step.

inline SymMatrix apply_rule(const RuleTemplate& r, const SymMatrix& pre, std::optional<double> param) {
    if (static_cast<Eigen::Index>(r.pre.size()) != pre.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "rule precondition layout does not match matrix", r.loc);
    }
    auto need = [&]() {
        if (!param) {
            throw Error(ErrorKind::InvalidParameter, std::string(to_string(r.kind)) + " needs a parameter", r.loc);
        }
        return *param;
    };
    SymMatrix out;
    switch (r.kind) {
    case RuleKind::AffineImage:
    case RuleKind::Intro:
    case RuleKind::InitZero:
    case RuleKind::Drop:
    case RuleKind::Project: out = affine_image_reverse(pre, r.A); break;
    case RuleKind::Product: {
        double lambda = need();
        if (!(lambda > 0.0 && lambda < 1.0)) {
            throw Error(ErrorKind::InvalidParameter, "product weight must lie in (0, 1)", r.loc);
        }
        SymMatrix u(Matrix::Constant(1, 1, r.input_bound * r.input_bound));
        out = cartesian_product_reverse({pre, u}, {lambda, 1.0 - lambda});
        break;
    }
    case RuleKind::CopyReverse: out = copy_rule_reverse(pre, r.A, need()); break;
    case RuleKind::SectorReverse: out = sector_rule_reverse(pre, need()); break;
    case RuleKind::InverseImage: out = inverse_image_direct(pre, r.A); break;
    case RuleKind::CopyDirect: out = copy_rule_direct(pre, r.A, need()); break;
    case RuleKind::SectorDirect: out = sector_rule_direct(pre, need()); break;
    case RuleKind::ConvexCombine:
        throw Error(ErrorKind::Unsupported, "convex combination takes several preconditions", r.loc);
    }
    if (static_cast<Eigen::Index>(r.post.size()) != out.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "rule output does not match postcondition layout", r.loc);
    }
    return out;
}

struct ChainEval {
    std::vector<SymMatrix> posts;
    std::vector<std::optional<double>> params; // absolute, per step
};

/// Runs the chain from the loop-head matrix `head`; theta holds one [0, 1]
/// coordinate per ParamSpec.
inline ChainEval evaluate_chain(const LoopSummary& s, const SymMatrix& head, const std::vector<double>& theta) {
    if (theta.size() != s.params.size()) {
        throw Error(ErrorKind::InvalidParameter, "theta has the wrong number of coordinates");
    }
    ChainEval ev;
    SymMatrix cur = head;
    for (const auto& r : s.rules) {
        std::optional<double> p;
        if (r.param) {
            const ParamSpec& spec = s.params[*r.param];
            p = resolve_param(spec.kind, theta[*r.param], cur);
        }
        cur = apply_rule(r, cur, p);
        ev.posts.push_back(cur);
        ev.params.push_back(p);
    }
    return ev;
}

/// Same chain with absolute parameters given per step.
inline std::vector<SymMatrix> evaluate_chain_abs(const LoopSummary& s, const SymMatrix& head,
                                                 const std::vector<std::optional<double>>& params) {
    std::vector<SymMatrix> posts;
    SymMatrix cur = head;
    for (std::size_t i = 0; i < s.rules.size(); ++i) {
        cur = apply_rule(s.rules[i], cur, params.at(i));
        posts.push_back(cur);
    }
    return posts;
}

// ---------------------------------------------------------------------------
// Nonlinear expansion: `x = a*x + b*f(c*x)` becomes
//   y$k = c*x;  u$k = f(y$k);  x = a*x + b*u$k;

namespace detail {

inline int count_calls(const Expr& e, bool& nested, int depth = 0) {
    int n = 0;
    if (e.kind == Expr::Kind::Call) {
        if (depth > 0) {
            nested = true;
        }
        n = 1;
        for (const auto& a : e.args) {
            n += count_calls(a, nested, depth + 1);
        }
        return n;
    }
    for (const auto& a : e.args) {
        n += count_calls(a, nested, depth);
    }
    return n;
}

inline Expr replace_call(const Expr& e, const std::string& with, Expr& arg, std::string& fn) {
    if (e.kind == Expr::Kind::Call) {
        arg = e.args[0];
        fn = e.name;
        return Expr::var(with, {}, e.loc);
    }
    Expr out = e;
    for (auto& a : out.args) {
        a = replace_call(a, with, arg, fn);
    }
    return out;
}

inline void expand_body(std::vector<Stmt>& body, int& counter, std::vector<VarDecl>& fresh) {
    std::vector<Stmt> out;
    for (auto& s : body) {
        if (s.kind == Stmt::Kind::For || s.kind == Stmt::Kind::While) {
            expand_body(s.body, counter, fresh);
            out.push_back(std::move(s));
            continue;
        }
        bool nested = false;
        int calls = count_calls(s.value, nested);
        if (calls == 0) {
            out.push_back(std::move(s));
            continue;
        }
        if (s.kind != Stmt::Kind::Assign) {
            throw Error(ErrorKind::UnmatchedStatement, "sector functions may only appear in assignments", s.loc);
        }
        if (nested || calls > 1) {
            throw Error(ErrorKind::UnmatchedStatement, "at most one non-nested sector function call per statement",
                        s.loc);
        }
        std::string y = "y$" + std::to_string(counter);
        std::string u = "u$" + std::to_string(counter);
        ++counter;
        for (const auto& name : {y, u}) {
            VarDecl d;
            d.name = name;
            d.init = {0.0};
            d.loc = s.loc;
            fresh.push_back(std::move(d));
        }
        Expr arg;
        std::string fn;
        Expr rest = replace_call(s.value, u, arg, fn);
        Stmt copy;
        copy.kind = Stmt::Kind::Assign;
        copy.target = {y, {}, s.loc};
        copy.value = std::move(arg);
        copy.loc = s.loc;
        Stmt apply;
        apply.kind = Stmt::Kind::Assign;
        apply.target = {u, {}, s.loc};
        apply.value = Expr::call(fn, Expr::var(y, {}, s.loc), s.loc);
        apply.loc = s.loc;
        s.value = std::move(rest);
        out.push_back(std::move(copy));
        out.push_back(std::move(apply));
        out.push_back(std::move(s));
    }
    body = std::move(out);
}

} // namespace detail

/// Splits every sector-function call inside the loop into the three-statement
/// chain over fresh virtual variables `y$k`, `u$k`. Statements before the loop
/// are left alone: they run concretely.
inline SourceProgram expand_nonlinear(const SourceProgram& prog) {
    SourceProgram out = prog;
    int counter = 0;
    std::vector<VarDecl> fresh;
    for (auto& s : out.body) {
        if (s.kind == Stmt::Kind::While) {
            detail::expand_body(s.body, counter, fresh);
        }
    }
    for (auto& d : fresh) {
        out.decls.push_back(std::move(d));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linearization.

using CellEnv = std::map<std::string, double>;

struct LinearForm {
    std::map<std::string, double> coef; // state cells
    double constant = 0.0;

    [[nodiscard]] bool is_constant() const {
        return std::all_of(coef.begin(), coef.end(), [](const auto& kv) { return kv.second == 0.0; });
    }
    LinearForm& scale(double k) {
        for (auto& [c, v] : coef) {
            v *= k;
        }
        constant *= k;
        return *this;
    }
    LinearForm& add(const LinearForm& o, double k = 1.0) {
        for (const auto& [c, v] : o.coef) {
            coef[c] += k * v;
        }
        constant += k * o.constant;
        return *this;
    }
};

/// Value of an expression over parameter cells only.
inline double eval_constant(const Expr& e, const CellEnv& env, const std::vector<NonlinDecl>& nonlins) {
    switch (e.kind) {
    case Expr::Kind::Number: return e.value;
    case Expr::Kind::Var: {
        std::string cell = cell_of(e.name, e.args);
        auto it = env.find(cell);
        if (it == env.end()) {
            throw Error(ErrorKind::Role, "'" + cell + "' has no constant value here", e.loc);
        }
        return it->second;
    }
    case Expr::Kind::Neg: return -eval_constant(e.args[0], env, nonlins);
    case Expr::Kind::Add: return eval_constant(e.args[0], env, nonlins) + eval_constant(e.args[1], env, nonlins);
    case Expr::Kind::Sub: return eval_constant(e.args[0], env, nonlins) - eval_constant(e.args[1], env, nonlins);
    case Expr::Kind::Mul: return eval_constant(e.args[0], env, nonlins) * eval_constant(e.args[1], env, nonlins);
    case Expr::Kind::Div: return eval_constant(e.args[0], env, nonlins) / eval_constant(e.args[1], env, nonlins);
    case Expr::Kind::Call: return resolve_sector(nonlins, e.name)(eval_constant(e.args[0], env, nonlins));
    case Expr::Kind::Compare: break;
    }
    throw Error(ErrorKind::UnmatchedStatement, "comparison used as a value", e.loc);
}

/// Affine form of `e` in the state cells; parameter cells are read from `env`.
inline LinearForm linearize(const Expr& e, const std::set<std::string>& state, const CellEnv& env,
                            const std::vector<NonlinDecl>& nonlins) {
    LinearForm f;
    switch (e.kind) {
    case Expr::Kind::Number: f.constant = e.value; return f;
    case Expr::Kind::Var: {
        std::string cell = cell_of(e.name, e.args);
        if (state.count(cell)) {
            f.coef[cell] = 1.0;
        } else {
            f.constant = eval_constant(e, env, nonlins);
        }
        return f;
    }
    case Expr::Kind::Neg: return linearize(e.args[0], state, env, nonlins).scale(-1.0);
    case Expr::Kind::Add:
        return linearize(e.args[0], state, env, nonlins).add(linearize(e.args[1], state, env, nonlins));
    case Expr::Kind::Sub:
        return linearize(e.args[0], state, env, nonlins).add(linearize(e.args[1], state, env, nonlins), -1.0);
    case Expr::Kind::Mul: {
        LinearForm a = linearize(e.args[0], state, env, nonlins);
        LinearForm b = linearize(e.args[1], state, env, nonlins);
        if (!a.is_constant() && !b.is_constant()) {
            throw Error(ErrorKind::UnmatchedStatement, "product of two state-dependent terms", e.loc);
        }
        return a.is_constant() ? b.scale(a.constant) : a.scale(b.constant);
    }
    case Expr::Kind::Div: {
        LinearForm b = linearize(e.args[1], state, env, nonlins);
        if (!b.is_constant()) {
            throw Error(ErrorKind::UnmatchedStatement, "division by a state-dependent term", e.loc);
        }
        if (b.constant == 0.0) {
            throw Error(ErrorKind::UnmatchedStatement, "division by zero", e.loc);
        }
        return linearize(e.args[0], state, env, nonlins).scale(1.0 / b.constant);
    }
    case Expr::Kind::Call:
        throw Error(ErrorKind::UnmatchedStatement, "sector function call was not expanded", e.loc);
    case Expr::Kind::Compare: break;
    }
    throw Error(ErrorKind::UnmatchedStatement, "comparison used as a value", e.loc);
}

// ---------------------------------------------------------------------------
// Loop compilation.

struct InputConfig {
    std::map<int, double> bounds; // channel -> |u| <= bound
    double default_bound = 1.0;

    [[nodiscard]] double bound(int channel) const {
        auto it = bounds.find(channel);
        return it == bounds.end() ? default_bound : it->second;
    }
};

/// Everything the analysis derives from a source text.
struct Analysis {
    SourceProgram source;   // as parsed
    SourceProgram expanded; // sector calls split into virtual variables
    Cfg cfg;                // renamed, before unrolling
    RoleMap roles;          // over renamed variables
    Cfg unrolled;
    LivenessInfo cell_live;
    std::vector<CellEnv> param_env; // parameter values before each unrolled node
    LoopSummary summary;
    std::vector<double> init; // head-layout values on loop entry

    [[nodiscard]] Role role_of_cell(const std::string& cell) const {
        auto it = roles.find(cell_base(cell));
        return it == roles.end() ? Role::Parameter : it->second;
    }
};

namespace detail {

inline std::vector<std::string> ordered_state_cells(const Cfg& cfg, const RoleMap& roles, const VarSet& cells) {
    std::vector<std::string> out;
    for (const auto& d : cfg.decls) {
        auto r = roles.find(d.name);
        if (r == roles.end() || r->second != Role::State) {
            continue;
        }
        for (const auto& c : decl_cells(d)) {
            if (cells.count(c)) {
                out.push_back(c);
            }
        }
    }
    return out;
}

inline Eigen::Index index_of(const std::vector<std::string>& layout, const std::string& cell) {
    auto it = std::find(layout.begin(), layout.end(), cell);
    return it == layout.end() ? -1 : static_cast<Eigen::Index>(it - layout.begin());
}

/// Matrix mapping vectors over `from` to vectors over `to` (every cell of
/// `to` must occur in `from`).
inline Matrix reorder_matrix(const std::vector<std::string>& from, const std::vector<std::string>& to) {
    std::vector<Eigen::Index> keep;
    for (const auto& c : to) {
        Eigen::Index i = index_of(from, c);
        if (i < 0) {
            throw Error(ErrorKind::DimensionMismatch, "cell '" + c + "' missing from layout");
        }
        keep.push_back(i);
    }
    return selection_matrix(static_cast<Eigen::Index>(from.size()), keep);
}

inline void collect_used_cells(const Stmt& s, VarSet& out) {
    collect_cells(s.value, out);
    if ((s.kind == Stmt::Kind::Assign && s.op != AssignOp::Set)) {
        out.insert(cell_of(s.target.name, s.target.subscripts));
    }
}

/// Parameter values before each node. The loop body is swept twice; a
/// parameter read in the body must see the same value on both sweeps.
inline std::vector<CellEnv> parameter_environments(const Analysis& a, const CellEnv& entry) {
    const Cfg& g = a.unrolled;
    std::vector<CellEnv> env(g.nodes.size());
    CellEnv cur = entry;
    auto step = [&](std::size_t n) {
        const Stmt& s = g.nodes[n].stmt;
        if (s.kind != Stmt::Kind::Assign) {
            return;
        }
        std::string cell = cell_of(s.target.name, s.target.subscripts);
        if (a.role_of_cell(cell) != Role::Parameter) {
            return;
        }
        double v = eval_constant(s.value, cur, g.nonlins);
        if (s.op == AssignOp::Add) {
            v = cur[cell] + v;
        } else if (s.op == AssignOp::Sub) {
            v = cur[cell] - v;
        }
        cur[cell] = v;
    };
    for (std::size_t n : g.body_nodes()) {
        env[n] = cur;
        step(n);
    }
    for (std::size_t n : g.body_nodes()) {
        VarSet used;
        collect_used_cells(g.nodes[n].stmt, used);
        for (const auto& c : used) {
            if (a.role_of_cell(c) != Role::Parameter) {
                continue;
            }
            auto first = env[n].find(c);
            auto second = cur.find(c);
            if (first != env[n].end() && second != cur.end() && first->second != second->second) {
                throw Error(ErrorKind::Role,
                            "parameter '" + c + "' takes different values in successive loop iterations",
                            g.nodes[n].stmt.loc);
            }
        }
        step(n);
    }
    return env;
}

} // namespace detail

/// Compiles the loop body of `a.unrolled` into the rule chain. The layout
/// before each node is the set of state cells live on entry to it.
inline LoopSummary compile_loop(const Analysis& a, const InputConfig& inputs) {
    const Cfg& g = a.unrolled;
    if (!g.loop_head) {
        throw Error(ErrorKind::Unsupported, "program has no while(1) loop to analyze");
    }
    LoopSummary s;
    auto state_cells = [&](const VarSet& cells) { return detail::ordered_state_cells(g, a.roles, cells); };
    s.head_layout = state_cells(a.cell_live.live_in[*g.loop_head]);
    std::vector<std::string> layout = s.head_layout;
    const std::vector<std::size_t> body = g.body_nodes();

    for (std::size_t n : body) {
        const Stmt& st = g.nodes[n].stmt;
        const std::string text = to_source(st);
        std::set<std::string> in_layout(layout.begin(), layout.end());
        std::optional<RuleTemplate> main;
        std::vector<std::string> after = layout;

        auto make = [&](RuleKind k) {
            RuleTemplate r;
            r.kind = k;
            r.node = n;
            r.loc = st.loc;
            r.statement = text;
            r.pre = layout;
            return r;
        };
        auto add_param = [&](RuleTemplate& r, ParamKind kind) {
            std::size_t idx = s.params.size();
            std::size_t count = 0;
            for (const auto& p : s.params) {
                count += p.kind == kind;
            }
            s.params.push_back({std::string(to_string(kind)) + std::to_string(count), kind, s.rules.size()});
            r.param = idx;
        };

        if (st.kind == Stmt::Kind::Read || st.kind == Stmt::Kind::Assign) {
            const std::string target = cell_of(st.target.name, st.target.subscripts);
            const bool is_state = a.role_of_cell(target) == Role::State;
            if (is_state && st.kind == Stmt::Kind::Read) {
                if (in_layout.count(target)) {
                    throw Error(ErrorKind::UnmatchedStatement, "read into a live state cell", st.loc);
                }
                RuleTemplate r = make(RuleKind::Product);
                r.input_bound = inputs.bound(st.channel);
                r.channel = st.channel;
                if (!(r.input_bound >= 0.0) || !std::isfinite(r.input_bound)) {
                    throw Error(ErrorKind::InvalidParameter, "input bound must be finite and non-negative", st.loc);
                }
                add_param(r, ParamKind::Lambda);
                after.push_back(target);
                main = r;
            } else if (is_state && st.value.kind == Expr::Kind::Call) {
                const Expr& arg = st.value.args[0];
                std::string arg_cell = arg.kind == Expr::Kind::Var ? cell_of(arg.name, arg.args) : "";
                if (!in_layout.count(arg_cell) || in_layout.count(target)) {
                    throw Error(ErrorKind::UnmatchedStatement, "sector application must read a tracked state variable",
                                st.loc);
                }
                RuleTemplate r = make(RuleKind::SectorReverse);
                add_param(r, ParamKind::SectorEps);
                after.push_back(target);
                main = r;
            } else if (is_state) {
                LinearForm f = linearize(st.value, in_layout, a.param_env[n], g.nonlins);
                if (st.op == AssignOp::Sub) {
                    f.scale(-1.0);
                }
                if (st.op != AssignOp::Set) {
                    f.coef[target] += 1.0;
                }
                if (f.constant != 0.0) {
                    throw Error(ErrorKind::UnmatchedStatement,
                                "affine offset " + format_number(f.constant) + " in a state update is not supported",
                                st.loc);
                }
                const auto nl = static_cast<Eigen::Index>(layout.size());
                Vector row = Vector::Zero(nl);
                for (const auto& [cell, v] : f.coef) {
                    Eigen::Index i = detail::index_of(layout, cell);
                    if (i < 0) {
                        throw Error(ErrorKind::UnmatchedStatement, "'" + cell + "' is not tracked here", st.loc);
                    }
                    row(i) += v;
                }
                const bool virtual_copy = st.target.name.rfind("y$", 0) == 0;
                Eigen::Index ti = detail::index_of(layout, target);
                if (ti >= 0) {
                    RuleTemplate r = make(RuleKind::AffineImage);
                    r.A = Matrix::Identity(nl, nl);
                    r.A.row(ti) = row.transpose();
                    main = r;
                } else if (virtual_copy) {
                    RuleTemplate r = make(RuleKind::CopyReverse);
                    r.A = row.transpose();
                    add_param(r, ParamKind::CopyEps);
                    after.push_back(target);
                    main = r;
                } else {
                    RuleTemplate r = make(row.isZero(0.0) ? RuleKind::InitZero : RuleKind::Intro);
                    r.A = Matrix::Zero(nl + 1, nl);
                    r.A.topRows(nl).setIdentity();
                    r.A.row(nl) = row.transpose();
                    after.push_back(target);
                    main = r;
                }
            }
        }

        // Cells still live afterwards, in order; at the loop tail, head order.
        VarSet keep_set;
        for (const auto& c : after) {
            if (a.cell_live.live_out[n].count(c)) {
                keep_set.insert(c);
            }
        }
        std::vector<std::string> kept;
        if (g.loop_tail && n == *g.loop_tail) {
            kept = s.head_layout;
            for (const auto& c : kept) {
                if (!keep_set.count(c)) {
                    throw Error(ErrorKind::DimensionMismatch, "state cell '" + c + "' is not defined around the loop");
                }
            }
        } else {
            for (const auto& c : after) {
                if (keep_set.count(c)) {
                    kept.push_back(c);
                }
            }
        }
        const bool reshaped = kept != after;

        if (main) {
            if (reshaped && is_affine_kind(main->kind)) {
                main->A = detail::reorder_matrix(after, kept) * main->A;
                main->post = kept;
                s.rules.push_back(*main);
                layout = kept;
                continue;
            }
            main->post = after;
            s.rules.push_back(*main);
        }
        layout = after;
        if (reshaped) {
            bool drops = kept.size() < after.size();
            RuleTemplate r = make(drops ? RuleKind::Project : RuleKind::AffineImage);
            r.A = detail::reorder_matrix(after, kept);
            r.post = kept;
            s.rules.push_back(r);
            layout = kept;
        }
    }
    return s;
}

/// Full front half of the pipeline: parse, expand, rename, classify, unroll,
/// run the prefix, and compile the loop.
/// Front half of `prepare`: parse, rename by persistence range, classify.
inline Analysis prepare_roles(std::string_view text) {
    Analysis a;
    a.source = parse(text);
    a.expanded = expand_nonlinear(a.source);
    Cfg base = build_cfg(a.expanded);
    if (!base.loop_head) {
        throw Error(ErrorKind::Unsupported, "program has no while(1) loop to analyze");
    }
    LivenessInfo live = compute_liveness(base);
    a.cfg = rename_by_range(base, persistence_ranges(live, base));
    a.roles = classify(a.cfg);
    check_roles(a.cfg, a.roles);
    return a;
}

/// Roles keyed by source variable. Renamed ranges fold back to their variable,
/// State winning over Parameter over Index; virtual sector variables are omitted.
inline RoleMap source_roles(const Analysis& a) {
    auto rank = [](Role r) { return r == Role::State ? 2 : r == Role::Parameter ? 1 : 0; };
    RoleMap out;
    for (const auto& [name, role] : a.roles) {
        if (name.find('$') != std::string::npos) {
            continue;
        }
        std::string base = original_name(name);
        auto it = out.find(base);
        if (it == out.end() || rank(role) > rank(it->second)) {
            out[base] = role;
        }
    }
    return out;
}

inline Analysis prepare(std::string_view text, const InputConfig& inputs = {}) {
    Analysis a = prepare_roles(text);
    a.unrolled = unroll_loops(a.cfg);
    a.cell_live = compute_cell_liveness(a.unrolled);

    Machine m(a.unrolled);
    for (std::size_t n : a.unrolled.prefix_nodes()) {
        if (a.unrolled.nodes[n].stmt.kind == Stmt::Kind::Read) {
            throw Error(ErrorKind::Unsupported, "inputs may only be read inside the loop",
                        a.unrolled.nodes[n].stmt.loc);
        }
    }
    std::vector<double> store = m.initial_store();
    m.run_prefix(store, nullptr);
    CellEnv entry;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (a.role_of_cell(m.cell(i)) == Role::Parameter) {
            entry[m.cell(i)] = store[i];
        }
    }
    a.param_env = detail::parameter_environments(a, entry);
    a.summary = compile_loop(a, inputs);
    for (const auto& c : a.summary.head_layout) {
        a.init.push_back(store[*m.slot(c)]);
    }
    return a;
}

} // namespace ellipcert
