// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
//
// Randomized soundness checks for the ellipsoid rules: sample a point of the
// precondition, run the concrete operation, and ask the eigen-based oracle
// whether the result lies in the library's postcondition.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ellipcert/ellipsoid.hpp"
#include "support/oracles.hpp"

namespace oracle {

struct RuleCheck {
    std::string name;
    std::function<bool(Rng&, double tol)> instance; // true when the instance is sound
};

inline std::vector<double> dirichlet(Rng& rng, int k) {
    std::vector<double> w(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& x : w) {
        x = -std::log(1.0 - rng.uniform());
        sum += x;
    }
    for (auto& x : w) {
        x /= sum;
    }
    // Renormalize the last weight so the sum is 1 to the last bit.
    double head = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        head += w[i];
    }
    w.back() = 1.0 - head;
    return w;
}

inline Matrix well_conditioned(Rng& rng, Eigen::Index n) {
    return rng.matrix(n, n) + 3.0 * Matrix::Identity(n, n);
}

inline std::vector<RuleCheck> rule_checks() {
    using ellipcert::SymMatrix;
    std::vector<RuleCheck> out;

    out.push_back({"affine_image_reverse", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 4);
                       auto m = rng.integer(1, 4);
                       Matrix p = rng.spd(n);
                       Matrix a = rng.matrix(m, n);
                       Vector x = sample_reverse(rng, p, rng.integer(0, 1) == 1);
                       SymMatrix post = ellipcert::affine_image_reverse(SymMatrix(p), a);
                       return in_reverse(a * x, post.mat(), tol);
                   }});

    out.push_back({"convex_combination", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 4);
                       int k = rng.integer(2, 3);
                       std::vector<SymMatrix> ps;
                       for (int i = 0; i < k; ++i) {
                           ps.emplace_back(rng.spd(n));
                       }
                       // Pull a sample of the first ellipsoid into the intersection.
                       Vector x = sample_direct(rng, ps[0].mat(), false);
                       double worst = 0.0;
                       for (const auto& p : ps) {
                           worst = std::max(worst, x.dot(p.mat() * x));
                       }
                       if (rng.integer(0, 1) == 1 || worst > 1.0) {
                           x /= std::sqrt(worst);
                       }
                       auto w = dirichlet(rng, k);
                       SymMatrix post = ellipcert::convex_combination(ps, ellipcert::ConvexCombinator(w));
                       return in_direct(x, post.mat(), tol);
                   }});

    out.push_back({"cartesian_product", [](Rng& rng, double tol) {
                       int k = rng.integer(2, 3);
                       std::vector<SymMatrix> ps;
                       std::vector<Vector> xs;
                       Eigen::Index total = 0;
                       for (int i = 0; i < k; ++i) {
                           auto n = rng.integer(1, 2);
                           ps.emplace_back(rng.spd(n));
                           xs.push_back(sample_direct(rng, ps.back().mat(), rng.integer(0, 1) == 1));
                           total += n;
                       }
                       Vector x(total);
                       Eigen::Index at = 0;
                       for (const auto& v : xs) {
                           x.segment(at, v.size()) = v;
                           at += v.size();
                       }
                       auto w = dirichlet(rng, k);
                       SymMatrix post = ellipcert::cartesian_product(ps, ellipcert::ConvexCombinator(w));
                       return in_direct(x, post.mat(), tol);
                   }});

    out.push_back({"project_direct", [](Rng& rng, double tol) {
                       auto n = rng.integer(2, 4);
                       auto keep = rng.integer(1, n - 1);
                       Matrix m = rng.spd(n);
                       Vector x = sample_direct(rng, m, rng.integer(0, 1) == 1);
                       SymMatrix post = ellipcert::project_direct(SymMatrix(m), keep);
                       return in_direct(x.head(keep), post.mat(), tol);
                   }});

    out.push_back({"inverse_image_direct", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 4);
                       Matrix p = rng.spd(n);
                       Matrix a = well_conditioned(rng, n);
                       Vector x = sample_direct(rng, p, rng.integer(0, 1) == 1);
                       SymMatrix post = ellipcert::inverse_image_direct(SymMatrix(p), a);
                       return in_direct(a * x, post.mat(), tol);
                   }});

    out.push_back({"copy_rule_direct", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 3);
                       auto m = rng.integer(1, 4 - n);
                       Matrix p = rng.spd(n);
                       Matrix a = rng.matrix(m, n);
                       double lambda = rng.uniform(0.0, 10.0);
                       Vector x = sample_direct(rng, p, rng.integer(0, 1) == 1);
                       Vector xy(n + m);
                       xy << x, a * x;
                       SymMatrix post = ellipcert::copy_rule_direct(SymMatrix(p), a, lambda);
                       return in_direct(xy, post.mat(), tol);
                   }});

    out.push_back({"copy_rule_reverse", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 3);
                       auto m = rng.integer(1, 4 - n);
                       Matrix p = rng.spd(n);
                       Matrix a = rng.matrix(m, n);
                       double eps = std::exp(rng.uniform(std::log(1e-6), std::log(1e3)));
                       Vector x = sample_reverse(rng, p, rng.integer(0, 1) == 1);
                       Vector xy(n + m);
                       xy << x, a * x;
                       SymMatrix post = ellipcert::copy_rule_reverse(SymMatrix(p), a, eps);
                       return in_reverse(xy, post.mat(), tol);
                   }});

    out.push_back({"sector_rule_direct", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 3);
                       Matrix p = rng.spd(n);
                       double mu = rng.uniform() * Eigen::SelfAdjointEigenSolver<Matrix>(p).eigenvalues()(0);
                       Vector x = sample_direct(rng, p, rng.integer(0, 1) == 1);
                       double s = rng.integer(0, 2) == 0 ? (rng.integer(0, 1) ? 1.0 : -1.0) : rng.uniform(-1.0, 1.0);
                       Vector xu(n + 1);
                       xu << x, s * x.norm();
                       SymMatrix post = ellipcert::sector_rule_direct(SymMatrix(p), mu);
                       return in_direct(xu, post.mat(), tol);
                   }});

    out.push_back({"sector_rule_reverse", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 3);
                       Matrix p = rng.spd(n);
                       double top = Eigen::SelfAdjointEigenSolver<Matrix>(p).eigenvalues()(n - 1);
                       double eps = top * (1.0 + std::exp(rng.uniform(std::log(1e-6), std::log(1e3))));
                       Vector x = sample_reverse(rng, p, rng.integer(0, 1) == 1);
                       double s = rng.integer(0, 2) == 0 ? (rng.integer(0, 1) ? 1.0 : -1.0) : rng.uniform(-1.0, 1.0);
                       Vector xu(n + 1);
                       xu << x, s * x.norm();
                       SymMatrix post = ellipcert::sector_rule_reverse(SymMatrix(p), eps);
                       return in_reverse(xu, post.mat(), tol);
                   }});

    out.push_back({"cartesian_product_reverse", [](Rng& rng, double tol) {
                       auto n = rng.integer(1, 3);
                       Matrix p = rng.spd(n);
                       double bound = rng.uniform(0.1, 10.0);
                       double lambda = rng.uniform(1e-3, 1.0 - 1e-3);
                       Vector x = sample_reverse(rng, p, rng.integer(0, 1) == 1);
                       double u = rng.integer(0, 1) ? (rng.integer(0, 1) ? bound : -bound) : rng.uniform(-bound, bound);
                       Vector xu(n + 1);
                       xu << x, u;
                       SymMatrix post = ellipcert::cartesian_product_reverse(
                           {SymMatrix(p), SymMatrix(Matrix::Constant(1, 1, bound * bound))}, {lambda, 1.0 - lambda});
                       return in_reverse(xu, post.mat(), tol);
                   }});

    return out;
}

/// Direct and reverse membership for the same ellipsoid; points are kept at
/// least 1e-6 away from the boundary so both tests see a strict answer.
inline bool form_equivalence_instance(Rng& rng) {
    auto n = rng.integer(1, 4);
    Matrix m = rng.spd(n);
    double r = rng.uniform(0.0, 2.0);
    if (std::abs(r - 1.0) < 1e-6) {
        r = 0.5;
    }
    Vector x = sample_direct(rng, m, true) * r;
    ellipcert::Ellipsoid direct(ellipcert::Form::Direct, ellipcert::SymMatrix(m), std::vector<std::string>(n, ""));
    ellipcert::Ellipsoid reverse = ellipcert::direct_to_reverse(direct);
    ellipcert::Ellipsoid back = ellipcert::reverse_to_direct(reverse);
    bool a = ellipcert::membership(x, direct);
    bool b = ellipcert::membership(x, reverse);
    bool c = ellipcert::membership(x, back);
    return a == b && b == c && a == (r < 1.0);
}

} // namespace oracle
