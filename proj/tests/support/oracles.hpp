// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
//
// Test-side oracles. Nothing here calls the library routine it is used to check:
// membership is decided from an eigendecomposition, points are sampled from an
// explicit square root, and programs run on a tree-walking interpreter.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ellipcert/ast.hpp"

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline std::string fixture(const std::string& name) {
    std::ifstream f(std::string(ELLIPCERT_DATA) + "/" + name);
    if (!f) {
        throw std::runtime_error("missing fixture " + name);
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }

    Matrix matrix(Eigen::Index r, Eigen::Index c) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            for (Eigen::Index j = 0; j < c; ++j) {
                m(i, j) = normal();
            }
        }
        return m;
    }

    /// Symmetric positive definite with eigenvalues in roughly [0.1, 10].
    Matrix spd(Eigen::Index n) {
        Eigen::HouseholderQR<Matrix> qr(matrix(n, n));
        Matrix q = qr.householderQ();
        Vector d(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            d(i) = std::exp(uniform(std::log(0.1), std::log(10.0)));
        }
        Matrix p = q * d.asDiagonal() * q.transpose();
        return (p + p.transpose()) / 2;
    }

    /// Uniform direction scaled to radius r^(1/n) of the unit ball; `boundary`
    /// pins it to the sphere.
    Vector ball(Eigen::Index n, bool boundary) {
        Vector z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            z(i) = normal();
        }
        double norm = z.norm();
        if (norm == 0.0) {
            z.setZero();
            z(0) = 1.0;
            norm = 1.0;
        }
        z /= norm;
        if (!boundary) {
            z *= std::pow(uniform(), 1.0 / static_cast<double>(n));
        }
        return z;
    }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
};

/// Symmetric square root of a PSD matrix through its eigendecomposition.
inline Matrix psd_sqrt(const Matrix& p) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(p);
    Vector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

/// Point of {P^(1/2) z : |z| <= 1}, the reverse-form ellipsoid.
inline Vector sample_reverse(Rng& rng, const Matrix& p, bool boundary) {
    return psd_sqrt(p) * rng.ball(p.rows(), boundary);
}

/// Point of {x : x'Mx <= 1} for positive definite M.
inline Vector sample_direct(Rng& rng, const Matrix& m, bool boundary) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    Vector d = es.eigenvalues().cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose() * rng.ball(m.rows(), boundary);
}

/// x'Mx compared against 1 with relative slack.
inline bool in_direct(const Vector& x, const Matrix& m, double tol) { return x.dot(m * x) <= 1.0 + tol; }

/// x in {P^(1/2) z : |z| <= 1}: x must lie in range(P) and x'P^+x <= 1.
/// Eigenvalues below 1e-12 of the largest count as kernel directions.
inline bool in_reverse(const Vector& x, const Matrix& p, double tol) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(p);
    const Vector& lam = es.eigenvalues();
    double top = lam.size() ? std::max(lam.maxCoeff(), 0.0) : 0.0;
    double level = 0.0;
    double off = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        double c = es.eigenvectors().col(i).dot(x);
        if (lam(i) > 1e-12 * top) {
            level += c * c / lam(i);
        } else {
            off += c * c;
        }
    }
    double scale = std::max(1.0, top);
    return level <= 1.0 + tol && off <= tol * tol * scale;
}

// ---------------------------------------------------------------------------
// Reference interpreter: walks the source tree directly, evaluating `for`
// loops with real index variables and subscripts at run time.

class Interpreter {
  public:
    using Inputs = std::function<double(int channel)>;

    explicit Interpreter(const ellipcert::SourceProgram& p) : prog_(&p) {
        for (const auto& d : p.decls) {
            std::size_t n = d.cell_count();
            auto& cells = store_[d.name];
            cells.assign(n, 0.0);
            for (std::size_t k = 0; k < n && k < d.init.size(); ++k) {
                cells[k] = d.init[k];
            }
        }
        for (const auto& s : p.body) {
            if (s.kind == ellipcert::Stmt::Kind::While) {
                loop_ = &s;
            }
        }
    }

    /// Runs the statements before the loop.
    void prefix(const Inputs& in) {
        for (const auto& s : prog_->body) {
            if (s.kind == ellipcert::Stmt::Kind::While) {
                break;
            }
            exec(s, in);
        }
    }

    void iteration(const Inputs& in) {
        for (const auto& s : loop_->body) {
            exec(s, in);
        }
    }

    [[nodiscard]] double get(const std::string& name, std::size_t flat = 0) const { return store_.at(name).at(flat); }
    void set(const std::string& name, std::size_t flat, double v) { store_.at(name).at(flat) = v; }

    /// "x[1][0]" -> ("x", row-major offset).
    [[nodiscard]] std::pair<std::string, std::size_t> locate(const std::string& cell) const {
        auto open = cell.find('[');
        std::string base = cell.substr(0, open);
        const ellipcert::VarDecl* d = prog_->find_decl(base);
        std::size_t flat = 0;
        std::size_t k = 0;
        while (open != std::string::npos) {
            auto close = cell.find(']', open);
            flat = flat * static_cast<std::size_t>(d->dims.at(k++)) +
                   static_cast<std::size_t>(std::stol(cell.substr(open + 1, close - open - 1)));
            open = cell.find('[', close);
        }
        return {base, flat};
    }
    [[nodiscard]] const std::map<std::string, std::vector<double>>& store() const { return store_; }
    [[nodiscard]] const std::vector<double>& writes() const { return writes_; }

  private:
    std::size_t flat_index(const std::string& name, const std::vector<ellipcert::Expr>& subs) {
        const ellipcert::VarDecl* d = prog_->find_decl(name);
        std::size_t flat = 0;
        for (std::size_t k = 0; k < subs.size(); ++k) {
            auto i = static_cast<long>(std::llround(eval(subs[k])));
            if (i < 0 || i >= d->dims.at(k)) {
                throw std::out_of_range("subscript out of range for " + name);
            }
            flat = flat * static_cast<std::size_t>(d->dims[k]) + static_cast<std::size_t>(i);
        }
        return flat;
    }

    double& lvalue(const ellipcert::LValue& lv) { return store_.at(lv.name).at(flat_index(lv.name, lv.subscripts)); }

    double call(const std::string& fn, double x) const {
        std::string impl = fn;
        for (const auto& n : prog_->nonlins) {
            if (n.name == fn) {
                impl = n.binding;
            }
        }
        if (impl == "sin") {
            return std::sin(x);
        }
        if (impl == "tanh") {
            return std::tanh(x);
        }
        if (impl == "sat") {
            return std::min(1.0, std::max(-1.0, x));
        }
        return x;
    }

    double eval(const ellipcert::Expr& e) {
        using K = ellipcert::Expr::Kind;
        switch (e.kind) {
        case K::Number: return e.value;
        case K::Var: return store_.at(e.name).at(flat_index(e.name, e.args));
        case K::Neg: return -eval(e.args[0]);
        case K::Add: return eval(e.args[0]) + eval(e.args[1]);
        case K::Sub: return eval(e.args[0]) - eval(e.args[1]);
        case K::Mul: return eval(e.args[0]) * eval(e.args[1]);
        case K::Div: return eval(e.args[0]) / eval(e.args[1]);
        case K::Call: return call(e.name, eval(e.args[0]));
        case K::Compare: {
            double a = eval(e.args[0]);
            double b = eval(e.args[1]);
            const std::string& op = e.name;
            bool r = op == "<" ? a < b : op == "<=" ? a <= b : op == ">" ? a > b : op == ">=" ? a >= b
                   : op == "==" ? a == b : a != b;
            return r ? 1.0 : 0.0;
        }
        }
        return 0.0;
    }

    void exec(const ellipcert::Stmt& s, const Inputs& in) {
        using K = ellipcert::Stmt::Kind;
        switch (s.kind) {
        case K::Assign: {
            double v = eval(s.value);
            double& dst = lvalue(s.target);
            dst = s.op == ellipcert::AssignOp::Set ? v : s.op == ellipcert::AssignOp::Add ? dst + v : dst - v;
            break;
        }
        case K::Read: lvalue(s.target) = in(s.channel); break;
        case K::Write: writes_.push_back(eval(s.value)); break;
        case K::Assume: break;
        case K::For: {
            auto& idx = store_.at(s.index).at(0);
            for (idx = static_cast<double>(s.lo); idx < static_cast<double>(s.hi); idx += 1.0) {
                for (const auto& c : s.body) {
                    exec(c, in);
                }
            }
            break;
        }
        case K::While: break;
        }
    }

    const ellipcert::SourceProgram* prog_;
    const ellipcert::Stmt* loop_ = nullptr;
    std::map<std::string, std::vector<double>> store_;
    std::vector<double> writes_;
};

} // namespace oracle
