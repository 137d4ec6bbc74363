// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ellipcert/certificate.hpp"
#include "ellipcert/semantics.hpp"

namespace ellipcert {

enum class Policy { Uniform, Extremal, Adversarial, Zero };

inline const char* to_string(Policy p) {
    switch (p) {
    case Policy::Uniform: return "uniform";
    case Policy::Extremal: return "extremal";
    case Policy::Adversarial: return "adversarial-sign";
    case Policy::Zero: return "zero";
    }
    return "?";
}

inline std::optional<Policy> policy_from_string(std::string_view s) {
    for (Policy p : {Policy::Uniform, Policy::Extremal, Policy::Adversarial, Policy::Zero}) {
        if (s == to_string(p)) {
            return p;
        }
    }
    return std::nullopt;
}

inline constexpr double kLevelTolerance = 1e-6;
inline constexpr double kMaxSimulatedSteps = 1e9;

struct SimConfig {
    std::size_t steps = 1000;
    std::size_t trials = 1;
    Policy policy = Policy::Uniform;
    std::uint64_t seed = 0;
};

struct SimReport {
    double max_level = 0.0;
    std::size_t worst_trial = 0;
    std::size_t worst_step = 0;
    std::size_t violations = 0;
    bool monotone = true; // level never increased between consecutive loop heads
    double final_level = 0.0;

    [[nodiscard]] bool ok() const { return violations == 0; }
};

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

class Simulator {
  public:
    Simulator(const Analysis& a, const Matrix& head, const InputConfig& inputs)
        : m_(a.unrolled), inputs_(inputs), ldlt_(head) {
        for (const auto& cell : a.summary.head_layout) {
            head_slots_.push_back(*m_.slot(cell));
        }
        for (std::size_t n = *a.unrolled.loop_head; n <= *a.unrolled.loop_tail; ++n) {
            const auto& node = a.unrolled.nodes[n];
            if (node.kind == CfgNode::Kind::Stmt && node.stmt.kind == Stmt::Kind::Read) {
                reads_.push_back(node.stmt.channel);
            }
        }
    }

    [[nodiscard]] double level(const std::vector<double>& store) const {
        if (head_slots_.empty()) {
            return 0.0;
        }
        Vector x(static_cast<Eigen::Index>(head_slots_.size()));
        for (std::size_t i = 0; i < head_slots_.size(); ++i) {
            x(static_cast<Eigen::Index>(i)) = store[head_slots_[i]];
        }
        return x.dot(ldlt_.solve(x));
    }

    [[nodiscard]] SimReport run(const SimConfig& cfg) const {
        if (static_cast<double>(cfg.steps) * static_cast<double>(cfg.trials) > kMaxSimulatedSteps) {
            throw Error(ErrorKind::InvalidParameter, "steps * trials exceeds 1e9");
        }
        std::vector<SimReport> per(cfg.trials);
        std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(cfg.trials, std::thread::hardware_concurrency()));
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t t = next++; t < cfg.trials; t = next++) {
                per[t] = run_trial(cfg, t);
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < workers; ++w) {
            pool.emplace_back(work);
        }
        work();
        for (auto& th : pool) {
            th.join();
        }
        // Merge in trial order so the report does not depend on scheduling.
        SimReport rep;
        for (std::size_t t = 0; t < per.size(); ++t) {
            const SimReport& r = per[t];
            if (t == 0 || r.max_level > rep.max_level) {
                rep.max_level = r.max_level;
                rep.worst_trial = t;
                rep.worst_step = r.worst_step;
            }
            rep.violations += r.violations;
            rep.monotone = rep.monotone && r.monotone;
            rep.final_level = std::max(rep.final_level, r.final_level);
        }
        return rep;
    }

  private:
    [[nodiscard]] SimReport run_trial(const SimConfig& cfg, std::size_t trial) const {
        // Each trial owns its stream: seeded from (seed, trial) only.
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
        std::mt19937_64 rng(seq);
        SimReport rep;
        std::vector<double> store = m_.initial_store();
        m_.run_prefix(store, nullptr);
        double prev = level(store);
        note(rep, prev, trial, 0);
        std::vector<double> chosen(reads_.size());
        for (std::size_t k = 1; k <= cfg.steps; ++k) {
            choose(cfg.policy, store, rng, chosen);
            std::size_t r = 0;
            m_.run_iteration(store, [&](int, std::size_t) { return chosen[r++]; });
            double lv = level(store);
            if (lv > prev * (1.0 + 1e-12)) {
                rep.monotone = false;
            }
            prev = lv;
            note(rep, lv, trial, k);
        }
        rep.final_level = prev;
        return rep;
    }

    void note(SimReport& rep, double lv, std::size_t trial, std::size_t step) const {
        if (lv > rep.max_level) {
            rep.max_level = lv;
            rep.worst_trial = trial;
            rep.worst_step = step;
        }
        if (!(lv <= 1.0 + kLevelTolerance)) {
            ++rep.violations;
        }
    }

    void choose(Policy p, const std::vector<double>& store, std::mt19937_64& rng, std::vector<double>& chosen) const {
        for (std::size_t r = 0; r < reads_.size(); ++r) {
            double b = inputs_.bound(reads_[r]);
            switch (p) {
            case Policy::Uniform: chosen[r] = b * (2.0 * unit_double(rng) - 1.0); break;
            case Policy::Extremal: chosen[r] = b; break;
            case Policy::Zero: chosen[r] = 0.0; break;
            case Policy::Adversarial: chosen[r] = 0.0; break;
            }
        }
        if (p != Policy::Adversarial) {
            return;
        }
        // Greedy: fix signs read by read, later reads held at zero.
        for (std::size_t r = 0; r < reads_.size(); ++r) {
            double b = inputs_.bound(reads_[r]);
            double best = -1.0;
            double pick = b;
            for (double cand : {b, -b}) {
                chosen[r] = cand;
                std::vector<double> trial = store;
                std::size_t i = 0;
                m_.run_iteration(trial, [&](int, std::size_t) { return chosen[i++]; });
                double lv = level(trial);
                if (lv > best) {
                    best = lv;
                    pick = cand;
                }
            }
            chosen[r] = pick;
        }
    }

    Machine m_;
    InputConfig inputs_;
    Eigen::LDLT<Matrix> ldlt_;
    std::vector<std::size_t> head_slots_;
    std::vector<int> reads_;
};

/// Replays the certificate first; simulating an unchecked ellipsoid proves nothing.
inline SimReport simulate_certificate(const Certificate& c, std::string_view source, const SimConfig& cfg) {
    Verdict v = replay(c, source);
    if (!v.accepted) {
        throw Error(ErrorKind::InvalidParameter, "refusing to simulate: " + v.report());
    }
    InputConfig inputs;
    inputs.bounds = c.inputs;
    Analysis a = prepare(source, inputs);
    Simulator sim(a, c.head, inputs);
    return sim.run(cfg);
}

} // namespace ellipcert
