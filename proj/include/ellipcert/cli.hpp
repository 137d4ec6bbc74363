// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ellipcert/certificate.hpp"
#include "ellipcert/semantics.hpp"
#include "ellipcert/simulate.hpp"
#include "ellipcert/synthesis.hpp"

namespace ellipcert::cli {

enum Exit : int { kOk = 0, kNo = 1, kError = 2 };

struct RunConfig {
    std::string command;
    std::string source;
    std::string certificate;
    std::string config_path;
    std::string output;
    std::optional<int> grid;
    std::optional<double> margin;
    bool json = false;
    bool dump_roles = false;
    bool dump_rules = false;
    std::size_t steps = 1000;
    std::size_t trials = 1;
    std::string policy = "uniform";
    std::uint64_t seed = 0;
};

inline nlohmann::json roles_json(const Analysis& a) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, role] : source_roles(a)) {
        j[name] = to_string(role);
    }
    return j;
}

inline nlohmann::json rules_json(const LoopSummary& s) {
    nlohmann::json rules = nlohmann::json::array();
    for (std::size_t i = 0; i < s.rules.size(); ++i) {
        const RuleTemplate& r = s.rules[i];
        nlohmann::json j;
        j["index"] = i;
        j["rule"] = to_string(r.kind);
        j["location"] = r.loc.str();
        j["statement"] = r.statement;
        j["param"] = r.param ? nlohmann::json(s.params[*r.param].name) : nlohmann::json(nullptr);
        j["pre"] = r.pre;
        j["post"] = r.post;
        rules.push_back(std::move(j));
    }
    return {{"loop_head", s.head_layout}, {"rules", rules}};
}

inline void diagnose(std::ostream& err, const std::string& file, const Error& e) {
    if (e.has_loc()) {
        err << file << ":" << e.loc().str() << ": ";
    } else {
        err << "error: ";
    }
    err << to_string(e.kind()) << ": " << e.what() << "\n";
}

inline SynthesisConfig load_config(const RunConfig& rc) {
    SynthesisConfig cfg;
    if (!rc.config_path.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(rc.config_path));
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::Format, rc.config_path + ": malformed JSON: " + e.what());
        }
        cfg = synthesis_config_from_json(j);
    }
    if (rc.grid) {
        if (*rc.grid < 2) {
            throw Error(ErrorKind::InvalidParameter, "--grid must be at least 2");
        }
        cfg.grid = *rc.grid;
    }
    if (rc.margin) {
        if (!(*rc.margin >= 0.0)) {
            throw Error(ErrorKind::InvalidParameter, "--margin must be non-negative");
        }
        cfg.margin = *rc.margin;
    }
    return cfg;
}

inline int cmd_analyze(const RunConfig& rc, std::ostream& out) {
    std::string text = read_file(rc.source);
    SynthesisConfig cfg = load_config(rc);
    if (rc.dump_roles) {
        out << roles_json(prepare_roles(text)).dump(2) << "\n";
    }
    Analysis a = prepare(text, cfg.inputs);
    if (rc.dump_rules) {
        out << rules_json(a.summary).dump(2) << "\n";
    }
    SynthesisResult r = synthesize(a.summary, a.init, cfg);
    nlohmann::json report;
    report["status"] = r.proved() ? "proved" : "failed";
    if (!r.proved()) {
        report["reason"] = r.reason;
        if (rc.json) {
            out << report.dump(2) << "\n";
        } else {
            out << "not proved: " << r.reason << "\n";
        }
        return kNo;
    }
    std::string path = rc.output.empty() ? rc.source + ".cert.json" : rc.output;
    Certificate c = emit(r, a, text, cfg.inputs);
    {
        std::ofstream f(path);
        if (!f) {
            throw Error(ErrorKind::Format, "cannot write '" + path + "'");
        }
        f << to_json(c).dump(1) << "\n";
    }
    report["certificate"] = path;
    report["margin"] = r.margin;
    report["radius"] = nlohmann::json::object();
    for (std::size_t i = 0; i < a.summary.head_layout.size(); ++i) {
        report["radius"][a.summary.head_layout[i]] = std::sqrt(r.P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)));
    }
    if (rc.json) {
        out << report.dump(2) << "\n";
        return kOk;
    }
    out << "proved: loop invariant over " << a.summary.dim() << " state cell(s), certificate written to " << path
        << "\n";
    for (std::size_t i = 0; i < a.summary.head_layout.size(); ++i) {
        out << "  |" << a.summary.head_layout[i]
            << "| <= " << format_number(report["radius"][a.summary.head_layout[i]].get<double>()) << "\n";
    }
    return kOk;
}

inline int cmd_check(const RunConfig& rc, std::ostream& out) {
    Certificate c = load_certificate(rc.certificate);
    Verdict v = replay(c, read_file(rc.source));
    if (rc.json) {
        nlohmann::json j{{"accepted", v.accepted}};
        if (!v.accepted) {
            j["step"] = v.step;
            j["reason"] = v.reason;
            j["witness"] = v.witness ? nlohmann::json(*v.witness) : nlohmann::json(nullptr);
        }
        out << j.dump(2) << "\n";
    } else {
        out << v.report() << "\n";
    }
    return v.accepted ? kOk : kNo;
}

inline int cmd_simulate(const RunConfig& rc, std::ostream& out) {
    auto policy = policy_from_string(rc.policy);
    if (!policy) {
        throw Error(ErrorKind::InvalidParameter, "unknown policy '" + rc.policy + "'");
    }
    Certificate c = load_certificate(rc.certificate);
    std::string text = read_file(rc.source);
    Verdict v = replay(c, text);
    if (!v.accepted) {
        out << "refusing to simulate: " << v.report() << "\n";
        return kNo;
    }
    SimConfig sc{rc.steps, rc.trials, *policy, rc.seed};
    InputConfig inputs;
    inputs.bounds = c.inputs;
    Analysis a = prepare(text, inputs);
    SimReport rep = Simulator(a, c.head, inputs).run(sc);
    if (rc.json) {
        out << nlohmann::json{{"policy", to_string(*policy)},
                              {"steps", rc.steps},
                              {"trials", rc.trials},
                              {"seed", rc.seed},
                              {"max_level", rep.max_level},
                              {"worst_trial", rep.worst_trial},
                              {"worst_step", rep.worst_step},
                              {"violations", rep.violations},
                              {"monotone", rep.monotone},
                              {"ok", rep.ok()}}
                   .dump(2)
            << "\n";
    } else {
        out << to_string(*policy) << ": " << rc.trials << " trial(s) x " << rc.steps
            << " step(s), max level " << format_number(rep.max_level) << " (trial " << rep.worst_trial << ", step "
            << rep.worst_step << "), " << (rep.ok() ? "inside invariant" : "INVARIANT VIOLATED") << "\n";
    }
    return rep.ok() ? kOk : kNo;
}

inline int cmd_roles(const RunConfig& rc, std::ostream& out) {
    Analysis a = prepare_roles(read_file(rc.source));
    nlohmann::json j = roles_json(a);
    if (rc.json) {
        out << j.dump(2) << "\n";
        return kOk;
    }
    for (const auto& [name, role] : j.items()) {
        out << name << ": " << role.get<std::string>() << "\n";
    }
    return kOk;
}

inline int cmd_rules(const RunConfig& rc, std::ostream& out) {
    SynthesisConfig cfg = load_config(rc);
    Analysis a = prepare(read_file(rc.source), cfg.inputs);
    if (rc.json) {
        out << rules_json(a.summary).dump(2) << "\n";
        return kOk;
    }
    out << "loop head:";
    for (const auto& c : a.summary.head_layout) {
        out << " " << c;
    }
    out << "\n";
    for (std::size_t i = 0; i < a.summary.rules.size(); ++i) {
        const RuleTemplate& r = a.summary.rules[i];
        out << i << "  " << r.loc.str() << "  " << to_string(r.kind);
        if (r.param) {
            out << "(" << a.summary.params[*r.param].name << ")";
        }
        out << "  " << r.statement << "\n";
    }
    return kOk;
}

/// Entry point shared by the binary and the tests. Returns 0, 1 or 2.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"ellipcert: ellipsoidal stability certificates for controller loops"};
    app.require_subcommand(1);
    RunConfig rc;

    auto add_common = [&](CLI::App* sub) {
        sub->add_flag("--json", rc.json, "Machine-readable report");
    };
    auto add_synthesis = [&](CLI::App* sub) {
        sub->add_option("--config", rc.config_path, "SynthesisConfig JSON file")->check(CLI::ExistingFile);
        sub->add_option("--grid", rc.grid, "Grid points per parameter");
        sub->add_option("--margin", rc.margin, "Strictness margin at the loop head");
    };

    auto* analyze = app.add_subcommand("analyze", "Synthesize an invariant and write a certificate");
    analyze->add_option("src", rc.source, "Source file")->required();
    analyze->add_option("-o,--output", rc.output, "Certificate path (default <src>.cert.json)");
    analyze->add_flag("--dump-roles", rc.dump_roles, "Print the role map as JSON");
    analyze->add_flag("--dump-rules", rc.dump_rules, "Print the rule chain as JSON");
    add_synthesis(analyze);
    add_common(analyze);

    auto* check = app.add_subcommand("check", "Replay a certificate against its source");
    check->add_option("cert", rc.certificate, "Certificate file")->required();
    check->add_option("src", rc.source, "Source file")->required();
    add_common(check);

    auto* simulate = app.add_subcommand("simulate", "Run the program and track the Lyapunov level");
    simulate->add_option("cert", rc.certificate, "Certificate file")->required();
    simulate->add_option("src", rc.source, "Source file")->required();
    simulate->add_option("--steps", rc.steps, "Loop iterations per trial");
    simulate->add_option("--trials", rc.trials, "Independent trials");
    simulate->add_option("--policy", rc.policy, "uniform, extremal, adversarial-sign or zero");
    simulate->add_option("--seed", rc.seed, "64-bit seed");
    add_common(simulate);

    auto* roles = app.add_subcommand("roles", "Print variable roles");
    roles->add_option("src", rc.source, "Source file")->required();
    add_common(roles);

    auto* rules = app.add_subcommand("rules", "Print the compiled rule chain");
    rules->add_option("src", rc.source, "Source file")->required();
    add_synthesis(rules);
    add_common(rules);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kError;
    }

    const std::string& file = rc.source.empty() ? rc.certificate : rc.source;
    try {
        if (analyze->parsed()) {
            return cmd_analyze(rc, out);
        }
        if (check->parsed()) {
            return cmd_check(rc, out);
        }
        if (simulate->parsed()) {
            return cmd_simulate(rc, out);
        }
        if (roles->parsed()) {
            return cmd_roles(rc, out);
        }
        return cmd_rules(rc, out);
    } catch (const Error& e) {
        diagnose(err, file, e);
        return kError;
    } catch (const std::exception& e) {
        err << file << ": internal error: " << e.what() << "\n";
        return kError;
    }
}

} // namespace ellipcert::cli
