// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria, so ctest fails if any line says FAIL.
#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "ellipcert/certificate.hpp"
#include "ellipcert/simulate.hpp"
#include "support/oracles.hpp"
#include "support/rule_checks.hpp"

using namespace ellipcert;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
    if (!ok) {
        ++failures;
    }
}

Certificate certify(const std::string& source) {
    Analysis a = prepare(source);
    SynthesisResult r = synthesize(a.summary, a.init);
    return emit(r, a, source, {});
}

// Each criterion runs inside its own guard so an exception is a FAIL line, not an abort.
template <typename F>
void criterion(int id, F&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

void rule_soundness() {
    auto t0 = Clock::now();
    oracle::Rng rng(1);
    std::ostringstream bad;
    std::size_t total = 0;
    auto checks = oracle::rule_checks();
    for (const auto& check : checks) {
        int violations = 0;
        for (int k = 0; k < 10000; ++k) {
            violations += check.instance(rng, 1e-9) ? 0 : 1;
        }
        total += static_cast<std::size_t>(violations);
        if (violations) {
            bad << " " << check.name << "=" << violations;
        }
    }
    double dt = seconds_since(t0);
    std::ostringstream d;
    d << checks.size() << " rules x 10000 instances, " << total << " violations" << bad.str() << ", " << dt << " s";
    report(1, checks.size() == 10 && total == 0 && dt < 60.0, d.str());
}

void form_equivalence() {
    oracle::Rng rng(2);
    int disagreements = 0;
    for (int k = 0; k < 10000; ++k) {
        disagreements += oracle::form_equivalence_instance(rng) ? 0 : 1;
    }
    report(2, disagreements == 0, "10000 instances, " + std::to_string(disagreements) + " disagreements");
}

void lyapunov() {
    SymMatrix p = solve_discrete_lyapunov(Matrix::Constant(1, 1, 0.5), SymMatrix::identity(1));
    double scalar_err = std::abs(p(0, 0) - 4.0 / 3.0);
    oracle::Rng rng(3);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        auto n = rng.integer(1, 10);
        Matrix a = rng.matrix(n, n);
        a *= rng.uniform(0.0, 0.99) / spectral_radius(a);
        SymMatrix q(rng.spd(n));
        SymMatrix x = solve_discrete_lyapunov(a, q);
        Matrix r = x.mat() - a * x.mat() * a.transpose() - q.mat();
        worst = std::max(worst, r.norm() / x.mat().norm());
    }
    std::ostringstream d;
    d << "|P - 4/3| = " << scalar_err << ", worst relative residual " << worst << " over 100 systems";
    report(3, scalar_err <= 1e-10 && worst <= 1e-8, d.str());
}

void two_state() {
    auto t0 = Clock::now();
    Analysis roles = prepare_roles(oracle::fixture("twostate.ctl"));
    RoleMap got = source_roles(roles);
    RoleMap want = {{"i", Role::Index},     {"j", Role::Index}, {"u", Role::State},
                    {"x", Role::State},     {"x_new", Role::State}, {"y", Role::State},
                    {"A", Role::Parameter}, {"b", Role::Parameter}, {"c", Role::Parameter}};
    bool roles_ok = got == want;

    Analysis full = prepare(oracle::fixture("twostate.ctl"));
    SynthesisResult rf = synthesize(full.summary, full.init);
    bool marginal = !rf.proved() && rf.reason.find("marginal spectral radius 1.0") != std::string::npos;

    Analysis sub = prepare(oracle::fixture("twostate_x1.ctl"));
    SynthesisResult rs = synthesize(sub.summary, sub.init);
    double radius = rs.proved() ? std::sqrt(rs.P(0, 0)) : 0.0;
    double dt = seconds_since(t0);
    std::ostringstream d;
    d << "roles " << (roles_ok ? "exact" : "differ") << ", full state: " << (rf.proved() ? "proved" : rf.reason)
      << ", x1 radius " << radius << ", " << dt << " s";
    report(4, roles_ok && marginal && radius >= 2000.0 && radius <= 2100.0 && dt < 5.0, d.str());
}

void nonlinear() {
    auto t0 = Clock::now();
    std::ostringstream d;
    bool ok = true;
    for (const char* f : {"sector.ctl", "sector_input.ctl"}) {
        std::string src = oracle::fixture(f);
        Certificate c = certify(src);
        for (Policy p : {Policy::Uniform, Policy::Extremal, Policy::Adversarial}) {
            SimReport r = simulate_certificate(c, src, SimConfig{1000000, 1, p, 5});
            ok = ok && r.ok();
            d << f << "/" << to_string(p) << " max level " << r.max_level << "; ";
        }
    }
    Analysis un = prepare(oracle::fixture("sector_unstable.ctl"));
    bool unstable_rejected = !synthesize(un.summary, un.init).proved();
    double dt = seconds_since(t0);
    d << "unstable variant " << (unstable_rejected ? "not proved" : "PROVED") << ", " << dt << " s";
    report(5, ok && unstable_rejected && dt < 30.0, d.str());
}

void integrity() {
    using nlohmann::json;
    const std::vector<std::string> files = {"scalar.ctl", "rotation.ctl", "sector.ctl", "sector_input.ctl"};
    std::vector<json> valid;
    std::vector<std::string> sources;
    bool unperturbed_ok = true;
    for (const auto& f : files) {
        sources.push_back(oracle::fixture(f));
        valid.push_back(to_json(certify(sources.back())));
        unperturbed_ok = unperturbed_ok && replay(certificate_from_json(valid.back()), sources.back()).accepted;
    }
    oracle::Rng rng(6);
    int accepted = 0;
    int nondeterministic = 0;
    int tried = 0;
    while (tried < 100) {
        auto k = static_cast<std::size_t>(rng.integer(0, static_cast<int>(valid.size()) - 1));
        json j = valid[k];
        std::vector<json::json_pointer> leaves;
        auto add = [&](const json::json_pointer& base) {
            const json& m = j[base];
            for (std::size_t r = 0; r < m.size(); ++r) {
                for (std::size_t c = 0; c < m[r].size(); ++c) {
                    leaves.push_back(base / r / c);
                }
            }
        };
        add(json::json_pointer("/loop_head/matrix"));
        for (std::size_t i = 0; i < j["steps"].size(); ++i) {
            add(json::json_pointer("/steps") / i / "matrix");
        }
        const auto& ptr = leaves[static_cast<std::size_t>(rng.integer(0, static_cast<int>(leaves.size()) - 1))];
        double v = j[ptr].get<double>();
        if (v == 0.0) {
            continue;
        }
        j[ptr] = v * 1.01;
        ++tried;
        Certificate c = certificate_from_json(j);
        Verdict a = replay(c, sources[k]);
        Verdict b = replay(c, sources[k]);
        accepted += a.accepted ? 1 : 0;
        nondeterministic += (a.report() != b.report()) ? 1 : 0;
    }
    std::ostringstream d;
    d << "unperturbed " << (unperturbed_ok ? "accepted" : "REJECTED") << ", " << accepted
      << "/100 perturbations accepted, " << nondeterministic << " nondeterministic verdicts";
    report(6, unperturbed_ok && accepted == 0 && nondeterministic == 0, d.str());
}

void end_to_end() {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(ELLIPCERT_DATA)) {
        if (e.path().extension() == ".ctl") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    int certified = 0;
    std::ostringstream bad;
    for (const auto& path : files) {
        std::string src = read_file(path.string());
        Analysis a = prepare(src);
        SynthesisResult r = synthesize(a.summary, a.init);
        if (!r.proved()) {
            continue;
        }
        ++certified;
        Certificate c = certificate_from_json(nlohmann::json::parse(to_json(emit(r, a, src, {})).dump()));
        Verdict v = replay(c, src);
        if (!v.accepted) {
            bad << " " << path.filename().string() << ": " << v.report();
            continue;
        }
        SimReport s = simulate_certificate(c, src, SimConfig{100000, 1, Policy::Adversarial, 7});
        if (!s.ok()) {
            bad << " " << path.filename().string() << ": level " << s.max_level;
        }
    }
    std::string problems = bad.str();
    report(7, certified > 0 && problems.empty(),
           std::to_string(certified) + " corpus certificates replayed and simulated" + problems);
}

} // namespace

int main() {
    std::cout.precision(6);
    criterion(1, rule_soundness);
    criterion(2, form_equivalence);
    criterion(3, lyapunov);
    criterion(4, two_state);
    criterion(5, nonlinear);
    criterion(6, integrity);
    criterion(7, end_to_end);
    return failures;
}
