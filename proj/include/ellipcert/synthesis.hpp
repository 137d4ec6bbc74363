// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ellipcert/ellipsoid.hpp"
#include "ellipcert/error.hpp"
#include "ellipcert/semantics.hpp"

namespace ellipcert {

/// Largest eigenvalue modulus.
inline double spectral_radius(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw Error(ErrorKind::DimensionMismatch, "spectral radius of a non-square matrix");
    }
    require_finite(a, "matrix");
    if (a.rows() == 0) {
        return 0.0;
    }
    Eigen::EigenSolver<Matrix> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double kStabilityGap = 1e-9;
inline constexpr std::ptrdiff_t kKroneckerMaxDim = 30;

/// Solves P = A P A' + Q. Small systems use the vectorized form
/// (I - A (x) A) vec(P) = vec(Q) with one refinement step; larger ones the
/// doubling iteration over sum_k A^k Q A'^k.
inline SymMatrix solve_discrete_lyapunov(const Matrix& a, const SymMatrix& q) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || q.dim() != n) {
        throw Error(ErrorKind::DimensionMismatch, "Lyapunov equation dimensions disagree");
    }
    double rho = spectral_radius(a);
    if (!(rho < 1.0 - kStabilityGap)) {
        throw Error(ErrorKind::SpectralRadiusTooLarge,
                    "spectral radius " + format_number(rho) + " leaves no stable solution");
    }
    if (n == 0) {
        return q;
    }
    if (n <= kKroneckerMaxDim) {
        const Eigen::Index nn = n * n;
        Matrix k(nn, nn);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                k.block(i * n, j * n, n, n) = -a(i, j) * a;
            }
        }
        k.diagonal().array() += 1.0;
        Eigen::PartialPivLU<Matrix> lu(k);
        Eigen::Map<const Vector> qv(q.mat().data(), nn);
        Vector pv = lu.solve(qv);
        Vector r = qv - k * pv;
        pv += lu.solve(r);
        Matrix p = Eigen::Map<Matrix>(pv.data(), n, n);
        return SymMatrix(p);
    }
    Matrix p = q.mat();
    Matrix ak = a;
    for (int it = 0; it < 100; ++it) {
        Matrix next = p + ak * p * ak.transpose();
        ak = ak * ak;
        bool done = (next - p).norm() <= 1e-17 * next.norm() || maxabs(ak) == 0.0;
        p = next;
        if (done) {
            break;
        }
    }
    return SymMatrix(p);
}

inline double lyapunov_residual(const Matrix& a, const SymMatrix& p, const SymMatrix& q) {
    return (p.mat() - a * p.mat() * a.transpose() - q.mat()).norm();
}

// ---------------------------------------------------------------------------
// Configuration.

struct SynthesisConfig {
    InputConfig inputs;
    int grid = 32;
    int refine = 2;
    std::optional<double> margin; // nullopt: 1e-6 * trace(P) / n
};

inline constexpr double kAutoMargin = 1e-6;

inline SynthesisConfig synthesis_config_from_json(const nlohmann::json& j) {
    SynthesisConfig c;
    if (!j.is_object()) {
        throw Error(ErrorKind::Format, "configuration must be a JSON object");
    }
    try {
        if (j.contains("inputs")) {
            for (const auto& [key, spec] : j.at("inputs").items()) {
                int channel = std::stoi(key);
                std::string type = spec.value("type", "rect");
                if (type != "rect") {
                    throw Error(ErrorKind::Format, "input channel " + key + ": unsupported bound type '" + type + "'");
                }
                double bound = spec.at("bound").get<double>();
                if (!(bound >= 0.0) || !std::isfinite(bound)) {
                    throw Error(ErrorKind::Format, "input channel " + key + ": bound must be finite and >= 0");
                }
                c.inputs.bounds[channel] = bound;
            }
        }
        c.grid = j.value("grid", c.grid);
        c.refine = j.value("refine", c.refine);
        if (j.contains("margin")) {
            const auto& m = j.at("margin");
            if (m.is_string()) {
                if (m.get<std::string>() != "auto") {
                    throw Error(ErrorKind::Format, "margin must be \"auto\" or a number");
                }
            } else {
                double v = m.get<double>();
                if (!(v >= 0.0) || !std::isfinite(v)) {
                    throw Error(ErrorKind::Format, "margin must be finite and >= 0");
                }
                c.margin = v;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("configuration: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw Error(ErrorKind::Format, "configuration: input channels must be integers");
    }
    if (c.grid < 2 || c.refine < 0) {
        throw Error(ErrorKind::Format, "configuration: grid must be >= 2 and refine >= 0");
    }
    return c;
}

inline nlohmann::json to_json(const SynthesisConfig& c) {
    nlohmann::json j;
    j["inputs"] = nlohmann::json::object();
    for (const auto& [ch, b] : c.inputs.bounds) {
        j["inputs"][std::to_string(ch)] = {{"type", "rect"}, {"bound", b}};
    }
    j["grid"] = c.grid;
    j["refine"] = c.refine;
    if (c.margin) {
        j["margin"] = *c.margin;
    } else {
        j["margin"] = "auto";
    }
    return j;
}

// ---------------------------------------------------------------------------
// Search.

enum class Status { Proved, Failed };

struct SynthesisResult {
    Status status = Status::Failed;
    std::string reason;
    SymMatrix P;                 // reverse form, loop head
    std::vector<double> theta;   // search coordinates in [0, 1]
    ChainEval chain;             // posts and absolute parameters at P
    double margin = 0.0;         // G(P) <= P - margin I
    double violation = 0.0;      // min eigenvalue of P - G(P) - margin I at the best point
    std::size_t evaluations = 0;

    [[nodiscard]] bool proved() const { return status == Status::Proved; }
};

/// Membership of the initializer in the reverse-form loop-head ellipsoid.
inline bool check_initial(const std::vector<double>& init, const SymMatrix& p) {
    if (static_cast<Eigen::Index>(init.size()) != p.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "initial state does not match the invariant dimension");
    }
    Vector x = Eigen::Map<const Vector>(init.data(), static_cast<Eigen::Index>(init.size()));
    std::vector<std::string> layout(init.size());
    return membership(x, Ellipsoid(Form::Reverse, p, layout));
}

namespace detail {

struct Candidate {
    bool feasible = false;
    double score = 0.0;     // trace(P) when feasible
    double violation = -1e300;
    SymMatrix P;
    ChainEval chain;
    double margin = 0.0;
};

inline bool better(const Candidate& a, const Candidate& b) {
    if (a.feasible != b.feasible) {
        return a.feasible;
    }
    return a.feasible ? a.score < b.score : a.violation > b.violation;
}

/// Smallest t >= 1 with init in E'(tP), plus a relative cushion.
inline double init_scale(const std::vector<double>& init, const SymMatrix& p) {
    if (init.empty()) {
        return 1.0;
    }
    Vector x = Eigen::Map<const Vector>(init.data(), static_cast<Eigen::Index>(init.size()));
    if (x.isZero(0.0)) {
        return 1.0;
    }
    Eigen::LDLT<Matrix> ldlt(p.mat());
    double v = x.dot(ldlt.solve(x));
    if (!std::isfinite(v) || v < 0.0) {
        return 1.0;
    }
    return std::max(1.0, v * (1.0 + 1e-9));
}

class Search {
  public:
    Search(const LoopSummary& s, const std::vector<double>& init, const SynthesisConfig& cfg)
        : s_(s), init_(init), cfg_(cfg), n_(static_cast<Eigen::Index>(s.dim())) {}

    /// Verifies a candidate loop-head matrix at theta and fills a Candidate.
    Candidate verify(const SymMatrix& p0, const std::vector<double>& theta) const {
        Candidate c;
        try {
            double t = init_scale(init_, p0);
            SymMatrix p(p0.mat() * t);
            c.chain = evaluate_chain(s_, p, theta);
            const SymMatrix& last = c.chain.posts.empty() ? p : c.chain.posts.back();
            c.margin = margin_for(p);
            Matrix slack = p.mat() - last.mat() - c.margin * Matrix::Identity(n_, n_);
            c.violation = n_ == 0 ? 0.0 : min_eigenvalue(slack) / std::max(p.maxabs(), 1e-300);
            c.feasible = loewner_leq(last, p, c.margin) && check_initial(init_, p);
            c.score = p.trace();
            c.P = p;
        } catch (const Error&) {
            c.feasible = false;
        }
        return c;
    }

    [[nodiscard]] double margin_for(const SymMatrix& p) const {
        if (cfg_.margin) {
            return *cfg_.margin;
        }
        return n_ == 0 ? 0.0 : kAutoMargin * p.trace() / static_cast<double>(n_);
    }

    /// Linear chain: P_end = L P L' + C, built with every lambda = 1 except
    /// for the input blocks, so L0 is the bare state map.
    struct Affine {
        Matrix L;
        Matrix C;
    };

    Affine compose(const std::vector<double>& lambdas) const {
        Affine f{Matrix::Identity(n_, n_), Matrix::Zero(n_, n_)};
        std::size_t li = 0;
        for (const auto& r : s_.rules) {
            if (r.kind == RuleKind::Product) {
                double lambda = lambdas.empty() ? 1.0 : lambdas[li];
                ++li;
                const Eigen::Index k = f.L.rows();
                Matrix L = Matrix::Zero(k + 1, n_);
                L.topRows(k) = f.L / std::sqrt(lambda);
                Matrix C = Matrix::Zero(k + 1, k + 1);
                C.topLeftCorner(k, k) = f.C / lambda;
                C(k, k) = lambdas.empty() ? 0.0 : r.input_bound * r.input_bound / (1.0 - lambda);
                f = {L, C};
            } else {
                f.L = r.A * f.L;
                f.C = r.A * f.C * r.A.transpose();
            }
        }
        return f;
    }

    Candidate linear_point(const std::vector<double>& theta) const {
        std::vector<double> lambdas;
        for (const auto& r : s_.rules) {
            if (r.kind == RuleKind::Product) {
                lambdas.push_back(resolve_param(ParamKind::Lambda, theta[*r.param], SymMatrix()));
            }
        }
        Candidate bad;
        try {
            Affine f = compose(lambdas);
            if (spectral_radius(f.L) >= 1.0 - kStabilityGap) {
                return bad;
            }
            SymMatrix p0 = solve_discrete_lyapunov(f.L, SymMatrix(f.C));
            SymMatrix x = solve_discrete_lyapunov(f.L, SymMatrix::identity(n_));
            const double nd = static_cast<double>(n_);
            const double m = cfg_.margin ? 0.0 : kAutoMargin;
            double denom = 1.0 - 2.0 * m * x.trace() / nd;
            if (denom < 0.5) {
                return bad;
            }
            double kappa = 2.0 * m * p0.trace() / nd / denom;
            if (cfg_.margin) {
                kappa = std::max(kappa, 2.0 * *cfg_.margin);
            }
            if (!(kappa > 0.0)) {
                kappa = 1e-12 * std::max(1.0, p0.maxabs());
            }
            return verify(SymMatrix(p0.mat() + kappa * x.mat()), theta);
        } catch (const Error&) {
            return bad;
        }
    }

    Candidate general_point(const std::vector<double>& theta) const {
        const bool homogeneous = std::none_of(s_.rules.begin(), s_.rules.end(),
                                              [](const RuleTemplate& r) { return r.kind == RuleKind::Product; });
        const double nd = static_cast<double>(n_);
        Candidate bad;
        try {
            Matrix p = Matrix::Identity(n_, n_);
            const double start = p.trace();
            for (int it = 0; it < kMaxIterations; ++it) {
                ChainEval ev = evaluate_chain(s_, SymMatrix(p), theta);
                Matrix next = ev.posts.back().mat() + kRegularization * p.trace() / nd * Matrix::Identity(n_, n_);
                if (homogeneous) {
                    next *= nd / next.trace();
                } else if (!(next.trace() < 1e12 * start) || !next.allFinite()) {
                    return bad;
                }
                double change = (next - p).norm();
                p = next;
                if (change <= 1e-12 * p.norm()) {
                    break;
                }
            }
            return verify(SymMatrix(p), theta);
        } catch (const Error&) {
            return bad;
        }
    }

    Candidate point(const std::vector<double>& theta) {
        ++evaluations;
        return s_.linear() ? linear_point(theta) : general_point(theta);
    }

    /// Grid over [lo_i, hi_i]; tensor when small enough, else coordinate sweeps
    /// from the current best.
    void grid(std::vector<double> lo, std::vector<double> hi, Candidate& best, std::vector<double>& best_theta) {
        const std::size_t k = lo.size();
        const int g = cfg_.grid;
        auto value = [&](std::size_t i, int step) { return lo[i] + (hi[i] - lo[i]) * step / (g - 1); };
        double cells = std::pow(static_cast<double>(g), static_cast<double>(k));
        if (cells <= kTensorLimit) {
            std::vector<int> idx(k, 0);
            for (;;) {
                std::vector<double> theta(k);
                for (std::size_t i = 0; i < k; ++i) {
                    theta[i] = value(i, idx[i]);
                }
                consider(theta, best, best_theta);
                std::size_t d = 0;
                while (d < k && ++idx[d] == g) {
                    idx[d] = 0;
                    ++d;
                }
                if (d == k) {
                    break;
                }
            }
            return;
        }
        std::vector<double> cur = best_theta;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < k; ++i) {
                for (int step = 0; step < g; ++step) {
                    std::vector<double> theta = cur;
                    theta[i] = value(i, step);
                    consider(theta, best, best_theta);
                }
                cur = best_theta;
            }
        }
    }

    void consider(const std::vector<double>& theta, Candidate& best, std::vector<double>& best_theta) {
        Candidate c = point(theta);
        if (best_theta.empty() || better(c, best)) {
            best = std::move(c);
            best_theta = theta;
        }
    }

    std::size_t evaluations = 0;

  private:
    static constexpr int kMaxIterations = 500;
    static constexpr double kRegularization = 1e-3;
    static constexpr double kTensorLimit = 4096;

    const LoopSummary& s_;
    const std::vector<double>& init_;
    const SynthesisConfig& cfg_;
    Eigen::Index n_;
};

inline std::string round_for_message(double v) { return format_number(std::round(v * 1e6) / 1e6); }

} // namespace detail

/// Searches the parameter vector for a loop-head invariant P with
/// G(P) <= P - margin I and the initializer inside E'(P). Linear chains solve
/// a Lyapunov equation per grid point; chains with sector rules iterate P.
inline SynthesisResult synthesize(const LoopSummary& s, const std::vector<double>& init,
                                  const SynthesisConfig& cfg = {}) {
    SynthesisResult res;
    if (init.size() != s.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "initial state does not match the loop-head layout");
    }
    detail::Search search(s, init, cfg);
    if (s.linear() && s.dim() > 0) {
        auto f = search.compose({});
        double rho = spectral_radius(f.L);
        if (rho >= 1.0 - kStabilityGap) {
            res.reason = rho <= 1.0 + kStabilityGap ? "marginal spectral radius " + detail::round_for_message(rho)
                                                    : "unstable: spectral radius " + detail::round_for_message(rho);
            res.violation = 1.0 - rho;
            return res;
        }
    }
    const std::size_t k = s.params.size();
    detail::Candidate best;
    std::vector<double> best_theta;
    if (k == 0) {
        search.consider({}, best, best_theta);
    } else {
        best_theta.assign(k, 0.5);
        best = search.point(best_theta);
        search.grid(std::vector<double>(k, 0.0), std::vector<double>(k, 1.0), best, best_theta);
        double h = 1.0 / (cfg.grid - 1);
        for (int level = 0; level < cfg.refine; ++level) {
            std::vector<double> lo(k), hi(k);
            for (std::size_t i = 0; i < k; ++i) {
                lo[i] = std::max(0.0, best_theta[i] - h);
                hi[i] = std::min(1.0, best_theta[i] + h);
            }
            search.grid(lo, hi, best, best_theta);
            h = 2.0 * h / (cfg.grid - 1);
        }
    }
    res.evaluations = search.evaluations;
    res.theta = best_theta;
    res.violation = best.violation;
    if (best.feasible) {
        res.status = Status::Proved;
        res.P = best.P;
        res.chain = best.chain;
        res.margin = best.margin;
    } else {
        res.reason = "no invariant found on the parameter grid (best violation " +
                     format_number(best.violation) + ")";
    }
    return res;
}

} // namespace ellipcert
