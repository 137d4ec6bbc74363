// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ellipcert/cfg.hpp"

namespace ellipcert {

using VarSet = std::set<std::string>;

struct LivenessInfo {
    std::vector<VarSet> live_in;
    std::vector<VarSet> live_out;
};

struct UseDef {
    VarSet use;
    VarSet def;
};

namespace detail {

inline void collect_vars(const Expr& e, VarSet& out) {
    if (e.kind == Expr::Kind::Var) {
        out.insert(e.name);
    }
    for (const auto& a : e.args) {
        collect_vars(a, out);
    }
}

inline void collect_cells(const Expr& e, VarSet& out) {
    if (e.kind == Expr::Kind::Var) {
        out.insert(cell_of(e.name, e.args));
        return;
    }
    for (const auto& a : e.args) {
        collect_cells(a, out);
    }
}

inline void stmt_use_def(const Stmt& s, UseDef& ud) {
    switch (s.kind) {
    case Stmt::Kind::Assign:
        collect_vars(s.value, ud.use);
        for (const auto& sub : s.target.subscripts) {
            collect_vars(sub, ud.use);
        }
        if (!s.target.subscripts.empty() || s.op != AssignOp::Set) {
            ud.use.insert(s.target.name);
        }
        ud.def.insert(s.target.name);
        break;
    case Stmt::Kind::Read:
        for (const auto& sub : s.target.subscripts) {
            collect_vars(sub, ud.use);
        }
        if (!s.target.subscripts.empty()) {
            ud.use.insert(s.target.name);
        }
        ud.def.insert(s.target.name);
        break;
    case Stmt::Kind::Write:
    case Stmt::Kind::Assume: collect_vars(s.value, ud.use); break;
    case Stmt::Kind::For:
    case Stmt::Kind::While:
        // Compound node: conservatively uses everything it touches, kills nothing.
        for (const auto& c : s.body) {
            UseDef inner;
            stmt_use_def(c, inner);
            ud.use.insert(inner.use.begin(), inner.use.end());
            ud.use.insert(inner.def.begin(), inner.def.end());
        }
        break;
    }
}

} // namespace detail

/// Base-name use/def of a node: subscripts are stripped and a subscripted
/// write counts as both a use and a def of the array.
inline UseDef base_use_def(const Cfg& cfg, std::size_t n) {
    UseDef ud;
    const CfgNode& node = cfg.nodes[n];
    if (node.kind == CfgNode::Kind::Entry) {
        for (const auto& d : cfg.decls) {
            ud.def.insert(d.name);
        }
    } else if (node.kind == CfgNode::Kind::Stmt) {
        detail::stmt_use_def(node.stmt, ud);
    }
    return ud;
}

/// Cell-level use/def of a node of an unrolled CFG: `x[1] = 0` defines only `x[1]`.
inline UseDef cell_use_def(const Cfg& cfg, std::size_t n) {
    UseDef ud;
    const CfgNode& node = cfg.nodes[n];
    if (node.kind == CfgNode::Kind::Entry) {
        for (const auto& d : cfg.decls) {
            for (auto& c : decl_cells(d)) {
                ud.def.insert(std::move(c));
            }
        }
        return ud;
    }
    if (node.kind != CfgNode::Kind::Stmt) {
        return ud;
    }
    const Stmt& s = node.stmt;
    switch (s.kind) {
    case Stmt::Kind::Assign:
        detail::collect_cells(s.value, ud.use);
        if (s.op != AssignOp::Set) {
            ud.use.insert(cell_of(s.target.name, s.target.subscripts));
        }
        ud.def.insert(cell_of(s.target.name, s.target.subscripts));
        break;
    case Stmt::Kind::Read: ud.def.insert(cell_of(s.target.name, s.target.subscripts)); break;
    case Stmt::Kind::Write:
    case Stmt::Kind::Assume: detail::collect_cells(s.value, ud.use); break;
    default: throw Error(ErrorKind::Unsupported, "cell liveness requires an unrolled CFG", s.loc);
    }
    return ud;
}

/// Least fixpoint of the backward liveness equations for the given use/def.
inline LivenessInfo solve_liveness(const Cfg& cfg, const std::function<UseDef(const Cfg&, std::size_t)>& use_def) {
    const std::size_t n = cfg.nodes.size();
    std::vector<UseDef> ud(n);
    for (std::size_t i = 0; i < n; ++i) {
        ud[i] = use_def(cfg, i);
    }
    LivenessInfo info{std::vector<VarSet>(n), std::vector<VarSet>(n)};
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = n; i-- > 0;) {
            VarSet out;
            for (std::size_t s : cfg.succ[i]) {
                out.insert(info.live_in[s].begin(), info.live_in[s].end());
            }
            VarSet in = ud[i].use;
            for (const auto& v : out) {
                if (!ud[i].def.count(v)) {
                    in.insert(v);
                }
            }
            if (out != info.live_out[i] || in != info.live_in[i]) {
                info.live_out[i] = std::move(out);
                info.live_in[i] = std::move(in);
                changed = true;
            }
        }
    }
    return info;
}

inline LivenessInfo compute_liveness(const Cfg& cfg) { return solve_liveness(cfg, base_use_def); }

inline LivenessInfo compute_cell_liveness(const Cfg& cfg) { return solve_liveness(cfg, cell_use_def); }

// ---------------------------------------------------------------------------
// Persistence ranges.

struct PersistenceRange {
    std::string variable;
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::set<std::size_t> nodes;
};

/// Connected components of the edges on which each variable is live-out at the
/// source and live-in at the target. Returned in variable order, then by first node.
inline std::vector<PersistenceRange> persistence_ranges(const LivenessInfo& live, const Cfg& cfg) {
    VarSet vars;
    for (const auto& s : live.live_in) {
        vars.insert(s.begin(), s.end());
    }
    std::vector<PersistenceRange> out;
    for (const auto& v : vars) {
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (std::size_t a = 0; a < cfg.nodes.size(); ++a) {
            for (std::size_t b : cfg.succ[a]) {
                if (live.live_out[a].count(v) && live.live_in[b].count(v)) {
                    edges.emplace_back(a, b);
                }
            }
        }
        std::vector<std::size_t> parent(cfg.nodes.size());
        std::iota(parent.begin(), parent.end(), 0);
        std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
            while (parent[x] != x) {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            return x;
        };
        for (auto [a, b] : edges) {
            parent[find(a)] = find(b);
        }
        std::map<std::size_t, PersistenceRange> by_root;
        for (auto [a, b] : edges) {
            auto& r = by_root[find(a)];
            r.variable = v;
            r.edges.emplace_back(a, b);
            r.nodes.insert(a);
            r.nodes.insert(b);
        }
        std::vector<PersistenceRange> ranges;
        for (auto& [root, r] : by_root) {
            ranges.push_back(std::move(r));
        }
        std::sort(ranges.begin(), ranges.end(),
                  [](const PersistenceRange& x, const PersistenceRange& y) { return *x.nodes.begin() < *y.nodes.begin(); });
        for (auto& r : ranges) {
            out.push_back(std::move(r));
        }
    }
    return out;
}

namespace detail {

inline void rename_expr(Expr& e, const std::map<std::string, std::string>& names) {
    if (e.kind == Expr::Kind::Var) {
        if (auto it = names.find(e.name); it != names.end()) {
            e.name = it->second;
        }
    }
    for (auto& a : e.args) {
        rename_expr(a, names);
    }
}

inline void rename_stmt(Stmt& s, const std::map<std::string, std::string>& names) {
    if (auto it = names.find(s.target.name); it != names.end()) {
        s.target.name = it->second;
    }
    for (auto& sub : s.target.subscripts) {
        rename_expr(sub, names);
    }
    rename_expr(s.value, names);
    for (auto& c : s.body) {
        rename_stmt(c, names);
    }
}

} // namespace detail

/// Gives every variable with several persistence ranges a distinct name
/// `v#k` per range (dead stores get `v#0`), so each name has one range.
inline Cfg rename_by_range(const Cfg& cfg, const std::vector<PersistenceRange>& ranges) {
    std::map<std::string, std::vector<const PersistenceRange*>> per_var;
    for (const auto& r : ranges) {
        per_var[r.variable].push_back(&r);
    }
    Cfg out = cfg;
    std::vector<std::map<std::string, std::string>> node_names(cfg.nodes.size());
    std::map<std::string, std::vector<std::string>> new_decl_names;
    std::map<std::string, std::string> entry_name;
    for (const auto& [var, rs] : per_var) {
        if (rs.size() < 2) {
            continue;
        }
        std::vector<std::string> names;
        bool dead_defs = false;
        for (std::size_t n = 0; n < cfg.nodes.size(); ++n) {
            UseDef ud = base_use_def(cfg, n);
            if (!ud.use.count(var) && !ud.def.count(var)) {
                continue;
            }
            std::string name = var + "#0";
            for (std::size_t k = 0; k < rs.size(); ++k) {
                if (rs[k]->nodes.count(n)) {
                    name = var + "#" + std::to_string(k + 1);
                    break;
                }
            }
            dead_defs = dead_defs || name == var + "#0";
            node_names[n][var] = name;
            if (n == cfg.entry) {
                entry_name[var] = name;
            }
        }
        if (dead_defs) {
            names.push_back(var + "#0");
        }
        for (std::size_t k = 0; k < rs.size(); ++k) {
            names.push_back(var + "#" + std::to_string(k + 1));
        }
        new_decl_names[var] = std::move(names);
    }
    for (std::size_t n = 0; n < out.nodes.size(); ++n) {
        if (out.nodes[n].kind == CfgNode::Kind::Stmt && !node_names[n].empty()) {
            detail::rename_stmt(out.nodes[n].stmt, node_names[n]);
        }
    }
    std::vector<VarDecl> decls;
    for (const auto& d : cfg.decls) {
        auto it = new_decl_names.find(d.name);
        if (it == new_decl_names.end()) {
            decls.push_back(d);
            continue;
        }
        for (const auto& name : it->second) {
            VarDecl copy = d;
            copy.name = name;
            if (entry_name[d.name] != name) {
                std::fill(copy.init.begin(), copy.init.end(), 0.0);
            }
            decls.push_back(std::move(copy));
        }
    }
    out.decls = std::move(decls);
    return out;
}

/// Base name of a possibly renamed variable.
inline std::string original_name(const std::string& v) { return v.substr(0, v.find('#')); }

// ---------------------------------------------------------------------------
// Role classification.

enum class Role { Index, State, Parameter };

inline const char* to_string(Role r) {
    switch (r) {
    case Role::Index: return "index";
    case Role::State: return "state";
    case Role::Parameter: return "parameter";
    }
    return "?";
}

using RoleMap = std::map<std::string, Role>;

/// Immediate dominator sets of every node (iterative data-flow formulation).
inline std::vector<std::set<std::size_t>> dominators(const Cfg& cfg) {
    const std::size_t n = cfg.nodes.size();
    std::set<std::size_t> all;
    for (std::size_t i = 0; i < n; ++i) {
        all.insert(i);
    }
    std::vector<std::set<std::size_t>> dom(n, all);
    dom[cfg.entry] = {cfg.entry};
    auto preds = cfg.preds();
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == cfg.entry) {
                continue;
            }
            std::set<std::size_t> d;
            bool first = true;
            for (std::size_t p : preds[i]) {
                if (first) {
                    d = dom[p];
                    first = false;
                } else {
                    std::set<std::size_t> tmp;
                    std::set_intersection(d.begin(), d.end(), dom[p].begin(), dom[p].end(),
                                          std::inserter(tmp, tmp.begin()));
                    d = std::move(tmp);
                }
            }
            d.insert(i);
            if (d != dom[i]) {
                dom[i] = std::move(d);
                changed = true;
            }
        }
    }
    return dom;
}

struct Dependencies {
    VarSet index;
    VarSet inputs;
    std::map<std::string, VarSet> depends; // transitive
};

namespace detail {

inline void collect_subscript_vars(const Expr& e, VarSet& out) {
    if (e.kind == Expr::Kind::Var) {
        for (const auto& s : e.args) {
            collect_vars(s, out);
        }
    }
    for (const auto& a : e.args) {
        collect_subscript_vars(a, out);
    }
}

inline void scan_indices(const Stmt& s, VarSet& out) {
    if (s.kind == Stmt::Kind::For) {
        out.insert(s.index);
    }
    for (const auto& sub : s.target.subscripts) {
        collect_vars(sub, out);
    }
    collect_subscript_vars(s.value, out);
    for (const auto& c : s.body) {
        scan_indices(c, out);
    }
}

inline void scan_deps(const Stmt& s, std::vector<VarSet> assumes, const VarSet& index, Dependencies& deps) {
    auto without_index = [&](VarSet vs) {
        for (const auto& i : index) {
            vs.erase(i);
        }
        return vs;
    };
    switch (s.kind) {
    case Stmt::Kind::Assign: {
        if (index.count(s.target.name)) {
            break;
        }
        VarSet rhs;
        collect_vars(s.value, rhs);
        if (s.op != AssignOp::Set) {
            rhs.insert(s.target.name);
        }
        for (const auto& a : assumes) {
            rhs.insert(a.begin(), a.end());
        }
        auto& d = deps.depends[s.target.name];
        for (const auto& v : without_index(rhs)) {
            d.insert(v);
        }
        break;
    }
    case Stmt::Kind::Read: {
        deps.inputs.insert(s.target.name);
        auto& d = deps.depends[s.target.name];
        for (const auto& a : assumes) {
            for (const auto& v : without_index(a)) {
                d.insert(v);
            }
        }
        break;
    }
    case Stmt::Kind::For:
    case Stmt::Kind::While:
        for (const auto& c : s.body) {
            scan_deps(c, assumes, index, deps);
            if (c.kind == Stmt::Kind::Assume) {
                VarSet vs;
                collect_vars(c.value, vs);
                assumes.push_back(std::move(vs));
            }
        }
        break;
    default: break;
    }
}

} // namespace detail

/// Dependency graph over non-index variables: an assigned variable depends on
/// its right-hand side and on the variables of every dominating `assume`.
inline Dependencies dependencies(const Cfg& cfg) {
    Dependencies deps;
    for (const auto& node : cfg.nodes) {
        if (node.kind == CfgNode::Kind::Stmt) {
            detail::scan_indices(node.stmt, deps.index);
        }
    }
    auto dom = dominators(cfg);
    for (std::size_t n = 0; n < cfg.nodes.size(); ++n) {
        if (cfg.nodes[n].kind != CfgNode::Kind::Stmt) {
            continue;
        }
        std::vector<VarSet> assumes;
        for (std::size_t a : dom[n]) {
            if (a != n && cfg.nodes[a].kind == CfgNode::Kind::Stmt && cfg.nodes[a].stmt.kind == Stmt::Kind::Assume) {
                VarSet vs;
                detail::collect_vars(cfg.nodes[a].stmt.value, vs);
                assumes.push_back(std::move(vs));
            }
        }
        detail::scan_deps(cfg.nodes[n].stmt, assumes, deps.index, deps);
    }
    // Transitive closure.
    bool changed = true;
    while (changed) {
        changed = false;
        for (auto& [v, ds] : deps.depends) {
            VarSet add;
            for (const auto& w : ds) {
                if (auto it = deps.depends.find(w); it != deps.depends.end()) {
                    for (const auto& x : it->second) {
                        if (!ds.count(x)) {
                            add.insert(x);
                        }
                    }
                }
            }
            if (!add.empty()) {
                ds.insert(add.begin(), add.end());
                changed = true;
            }
        }
    }
    return deps;
}

/// Classifies every declared variable as Index, State or Parameter:
/// subscript and loop-index variables are Index; inputs and self-dependent
/// variables are State, as is anything computed from a State variable; the
/// rest are Parameters.
inline RoleMap classify(const Cfg& cfg) {
    Dependencies deps = dependencies(cfg);
    RoleMap roles;
    for (const auto& d : cfg.decls) {
        roles[d.name] = Role::Parameter;
    }
    for (const auto& v : deps.index) {
        roles[v] = Role::Index;
    }
    auto is_index = [&](const std::string& v) { return deps.index.count(v) > 0; };
    for (const auto& v : deps.inputs) {
        if (!is_index(v)) {
            roles[v] = Role::State;
        }
    }
    for (const auto& [v, ds] : deps.depends) {
        if (!is_index(v) && ds.count(v)) {
            roles[v] = Role::State;
        }
    }
    for (const auto& [v, ds] : deps.depends) {
        if (is_index(v)) {
            continue;
        }
        for (const auto& w : ds) {
            if (auto it = roles.find(w); it != roles.end() && it->second == Role::State) {
                roles[v] = Role::State;
                break;
            }
        }
    }
    return roles;
}

/// Rejects programs outside the analyzable class: a Parameter computed from a
/// State variable, or an Index variable assigned as data.
inline void check_roles(const Cfg& cfg, const RoleMap& roles) {
    Dependencies deps = dependencies(cfg);
    for (const auto& [v, ds] : deps.depends) {
        auto r = roles.find(v);
        if (r == roles.end() || r->second != Role::Parameter) {
            continue;
        }
        for (const auto& w : ds) {
            auto rw = roles.find(w);
            if (rw != roles.end() && rw->second == Role::State) {
                throw Error(ErrorKind::Role, "parameter '" + v + "' depends on state variable '" + w + "'");
            }
        }
    }
    for (const auto& node : cfg.nodes) {
        if (node.kind != CfgNode::Kind::Stmt) {
            continue;
        }
        std::function<void(const Stmt&)> visit = [&](const Stmt& s) {
            if ((s.kind == Stmt::Kind::Assign || s.kind == Stmt::Kind::Read)) {
                auto r = roles.find(s.target.name);
                if (r != roles.end() && r->second == Role::Index) {
                    throw Error(ErrorKind::Role, "index variable '" + s.target.name + "' is assigned outside a loop header",
                                s.loc);
                }
            }
            for (const auto& c : s.body) {
                visit(c);
            }
        };
        visit(node.stmt);
    }
}

} // namespace ellipcert
