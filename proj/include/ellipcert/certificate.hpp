// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <openssl/evp.h>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ellipcert/ellipsoid.hpp"
#include "ellipcert/error.hpp"
#include "ellipcert/parser.hpp"
#include "ellipcert/semantics.hpp"
#include "ellipcert/synthesis.hpp"

namespace ellipcert {

inline constexpr const char* kSchema = "ellipcert-v1";
inline constexpr const char* kToolVersion = "0.1.0";
/// Agreement tolerance for recomputed matrices; certificates may not ask for more.
inline constexpr double kReplayTolerance = 1e-9;

/// Hex SHA-256 of the token stream, so whitespace and comments do not matter.
inline std::string program_hash(std::string_view source) {
    std::string stream;
    for (const auto& t : tokenize(source)) {
        if (t.kind == Token::Kind::End) {
            break;
        }
        stream += t.text;
        stream += '\n';
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), stream.data(), stream.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw Error(ErrorKind::Format, "SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

struct CertStep {
    std::size_t node = 0;
    SourceLoc loc;
    std::string statement;
    RuleKind kind = RuleKind::AffineImage;
    std::optional<double> param;
    int channel = 0;
    Matrix A;
    std::vector<std::string> pre;
    std::vector<std::string> post;
    Form form = Form::Reverse;
    Matrix matrix; // claimed postcondition; kept raw so asymmetry is visible to replay
};

struct Certificate {
    std::string schema = kSchema;
    std::string tool_version = kToolVersion;
    std::string program_hash;
    double tolerance = kReplayTolerance;
    double margin = 0.0;
    std::map<int, double> inputs;
    std::map<std::string, double> theta;
    std::vector<std::string> head_layout;
    Matrix head;
    std::vector<double> init;
    std::vector<CertStep> steps;
};

/// Packs a proved result into a certificate.
inline Certificate emit(const SynthesisResult& result, const Analysis& a, std::string_view source,
                        const InputConfig& inputs) {
    if (!result.proved()) {
        throw Error(ErrorKind::InvalidParameter, "only proved results can be certified");
    }
    Certificate c;
    c.program_hash = program_hash(source);
    c.margin = result.margin;
    c.head_layout = a.summary.head_layout;
    c.head = result.P.mat();
    c.init = a.init;
    for (std::size_t i = 0; i < a.summary.rules.size(); ++i) {
        const RuleTemplate& r = a.summary.rules[i];
        CertStep s;
        s.node = r.node;
        s.loc = r.loc;
        s.statement = r.statement;
        s.kind = r.kind;
        s.param = result.chain.params.at(i);
        s.channel = r.channel;
        s.A = r.A;
        s.pre = r.pre;
        s.post = r.post;
        s.form = rule_form(r.kind);
        s.matrix = result.chain.posts.at(i).mat();
        if (r.kind == RuleKind::Product) {
            c.inputs[r.channel] = inputs.bound(r.channel);
        }
        if (r.param) {
            c.theta[a.summary.params[*r.param].name] = *s.param;
        }
        c.steps.push_back(std::move(s));
    }
    return c;
}

// ---------------------------------------------------------------------------
// JSON.

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0) {
    if (!j.is_array()) {
        throw Error(ErrorKind::Format, "matrix must be an array of rows");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = rows == 0 ? cols_if_empty : static_cast<Eigen::Index>(j[0].size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw Error(ErrorKind::Format, "matrix rows must have equal length");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            const auto& v = row[static_cast<std::size_t>(k)];
            if (!v.is_number()) {
                throw Error(ErrorKind::Format, "matrix entries must be numbers");
            }
            m(i, k) = v.get<double>();
        }
    }
    return m;
}

inline SourceLoc parse_loc(const std::string& s) {
    SourceLoc loc;
    auto colon = s.find(':');
    if (colon == std::string::npos) {
        throw Error(ErrorKind::Format, "location must look like line:col");
    }
    try {
        loc.line = std::stoi(s.substr(0, colon));
        loc.col = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
        throw Error(ErrorKind::Format, "location must look like line:col");
    }
    return loc;
}

} // namespace detail

inline nlohmann::json to_json(const Certificate& c) {
    nlohmann::json j;
    j["schema"] = c.schema;
    j["tool_version"] = c.tool_version;
    j["program_hash"] = c.program_hash;
    j["tolerance"] = c.tolerance;
    j["margin"] = c.margin;
    j["inputs"] = nlohmann::json::object();
    for (const auto& [ch, b] : c.inputs) {
        j["inputs"][std::to_string(ch)] = {{"type", "rect"}, {"bound", b}};
    }
    j["theta"] = nlohmann::json::object();
    for (const auto& [name, v] : c.theta) {
        j["theta"][name] = v;
    }
    j["loop_head"] = {{"form", to_string(Form::Reverse)}, {"layout", c.head_layout}, {"matrix", detail::matrix_json(c.head)}};
    j["init"] = c.init;
    j["steps"] = nlohmann::json::array();
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
        const CertStep& s = c.steps[i];
        nlohmann::json js;
        js["index"] = i;
        js["node"] = s.node;
        js["location"] = s.loc.str();
        js["statement"] = s.statement;
        js["rule"] = to_string(s.kind);
        js["params"] = nlohmann::json::object();
        if (s.param) {
            const char* name = rule_param_name(s.kind);
            js["params"][name ? name : "value"] = *s.param;
        }
        if (s.kind == RuleKind::Product) {
            js["channel"] = s.channel;
        }
        if (s.A.rows() > 0 || s.A.cols() > 0) {
            js["A"] = detail::matrix_json(s.A);
        }
        js["pre"] = s.pre;
        js["post"] = s.post;
        js["form"] = to_string(s.form);
        js["matrix"] = detail::matrix_json(s.matrix);
        j["steps"].push_back(std::move(js));
    }
    return j;
}

inline Certificate certificate_from_json(const nlohmann::json& j) {
    Certificate c;
    try {
        if (!j.is_object()) {
            throw Error(ErrorKind::Format, "certificate must be a JSON object");
        }
        c.schema = j.at("schema").get<std::string>();
        if (c.schema != kSchema) {
            throw Error(ErrorKind::Format, "unsupported certificate schema '" + c.schema + "'");
        }
        c.tool_version = j.at("tool_version").get<std::string>();
        c.program_hash = j.at("program_hash").get<std::string>();
        c.tolerance = j.at("tolerance").get<double>();
        c.margin = j.at("margin").get<double>();
        for (const auto& [key, spec] : j.at("inputs").items()) {
            c.inputs[std::stoi(key)] = spec.at("bound").get<double>();
        }
        for (const auto& [key, v] : j.at("theta").items()) {
            c.theta[key] = v.get<double>();
        }
        const auto& head = j.at("loop_head");
        if (head.at("form").get<std::string>() != to_string(Form::Reverse)) {
            throw Error(ErrorKind::Format, "loop head must be in reverse form");
        }
        c.head_layout = head.at("layout").get<std::vector<std::string>>();
        c.head = detail::matrix_from_json(head.at("matrix"));
        c.init = j.at("init").get<std::vector<double>>();
        for (const auto& js : j.at("steps")) {
            CertStep s;
            s.node = js.at("node").get<std::size_t>();
            s.loc = detail::parse_loc(js.at("location").get<std::string>());
            s.statement = js.at("statement").get<std::string>();
            auto kind = rule_kind_from_string(js.at("rule").get<std::string>());
            if (!kind) {
                throw Error(ErrorKind::Format, "unknown rule '" + js.at("rule").get<std::string>() + "'");
            }
            s.kind = *kind;
            const auto& params = js.at("params");
            if (!params.empty()) {
                s.param = params.begin().value().get<double>();
            }
            s.channel = js.value("channel", 0);
            s.pre = js.at("pre").get<std::vector<std::string>>();
            s.post = js.at("post").get<std::vector<std::string>>();
            if (js.contains("A")) {
                s.A = detail::matrix_from_json(js.at("A"), static_cast<Eigen::Index>(s.pre.size()));
            }
            std::string form = js.at("form").get<std::string>();
            if (form != "direct" && form != "reverse") {
                throw Error(ErrorKind::Format, "form must be direct or reverse");
            }
            s.form = form == "direct" ? Form::Direct : Form::Reverse;
            s.matrix = detail::matrix_from_json(js.at("matrix"));
            c.steps.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Format, std::string("certificate: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw Error(ErrorKind::Format, "certificate: input channels must be integers");
    } catch (const std::out_of_range&) {
        throw Error(ErrorKind::Format, "certificate: number out of range");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Replay.

struct Verdict {
    bool accepted = false;
    int step = -1; // failing step, -1 for whole-certificate checks
    std::string reason;
    std::optional<double> witness; // min eigenvalue of the violated PSD condition

    [[nodiscard]] std::string report() const {
        if (accepted) {
            return "certificate accepted";
        }
        std::string s = "certificate rejected";
        if (step >= 0) {
            s += " at step " + std::to_string(step);
        }
        s += ": " + reason;
        if (witness) {
            s += " (min eigenvalue " + format_number(*witness) + ")";
        }
        return s;
    }
};

namespace detail {

inline Verdict reject(int step, std::string reason, std::optional<double> witness = std::nullopt) {
    return Verdict{false, step, std::move(reason), witness};
}

inline bool near(const Matrix& a, const Matrix& b, double tol) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    if (a.size() == 0) {
        return true;
    }
    double scale = std::max(maxabs(a), maxabs(b));
    return (a - b).cwiseAbs().maxCoeff() <= tol * scale;
}

inline bool symmetric(const Matrix& m) {
    if (m.rows() != m.cols()) {
        return false;
    }
    return m.size() == 0 || (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * maxabs(m);
}

} // namespace detail

/// Re-checks a certificate against the source text without any search:
/// recompiles the rule chain, recomputes every step from its claimed
/// precondition, then checks containment at the loop head and the initializer.
inline Verdict replay(const Certificate& c, std::string_view source) {
    using detail::reject;
    if (c.schema != kSchema) {
        throw Error(ErrorKind::Format, "unsupported certificate schema '" + c.schema + "'");
    }
    if (program_hash(source) != c.program_hash) {
        return reject(-1, "program hash mismatch: certificate belongs to a different source");
    }
    if (!(c.tolerance >= 0.0 && c.tolerance <= kReplayTolerance)) {
        return reject(-1, "tolerance " + format_number(c.tolerance) + " is looser than " +
                              format_number(kReplayTolerance));
    }
    if (!(c.margin >= 0.0) || !std::isfinite(c.margin)) {
        return reject(-1, "margin must be finite and non-negative");
    }
    InputConfig inputs;
    for (const auto& [ch, b] : c.inputs) {
        if (!(b >= 0.0) || !std::isfinite(b)) {
            return reject(-1, "input bound for channel " + std::to_string(ch) + " is invalid");
        }
        inputs.bounds[ch] = b;
    }
    Analysis a;
    try {
        a = prepare(source, inputs);
    } catch (const Error& e) {
        return reject(-1, std::string("source does not compile: ") + e.what());
    }
    const LoopSummary& s = a.summary;

    if (c.head_layout != s.head_layout) {
        return reject(-1, "loop-head layout differs from the program");
    }
    if (c.init.size() != a.init.size()) {
        return reject(-1, "initializer has the wrong dimension");
    }
    for (std::size_t i = 0; i < a.init.size(); ++i) {
        if (c.init[i] != a.init[i]) {
            return reject(-1, "initializer differs from the program");
        }
    }
    const auto n = static_cast<Eigen::Index>(s.dim());
    if (c.head.rows() != n || c.head.cols() != n) {
        return reject(-1, "loop-head matrix has the wrong dimension");
    }
    if (!c.head.allFinite() || !detail::symmetric(c.head)) {
        return reject(-1, "loop-head matrix is not a finite symmetric matrix");
    }
    if (!is_psd(c.head)) {
        return reject(-1, "loop-head matrix is not positive semi-definite", min_eigenvalue(c.head));
    }
    if (c.steps.size() != s.rules.size()) {
        return reject(-1, "certificate has " + std::to_string(c.steps.size()) + " steps, program needs " +
                              std::to_string(s.rules.size()));
    }

    SymMatrix pre(c.head);
    for (std::size_t i = 0; i < s.rules.size(); ++i) {
        const RuleTemplate& r = s.rules[i];
        const CertStep& st = c.steps[i];
        const int k = static_cast<int>(i);
        if (st.kind != r.kind || st.node != r.node || !(st.loc == r.loc) || st.pre != r.pre || st.post != r.post ||
            st.form != rule_form(r.kind)) {
            return reject(k, "step does not match the statement at " + r.loc.str() + " (" + to_string(r.kind) + ")");
        }
        if (r.kind == RuleKind::Product && st.channel != r.channel) {
            return reject(k, "input channel differs from the program");
        }
        if (st.A.rows() != r.A.rows() || st.A.cols() != r.A.cols() || !detail::near(st.A, r.A, 1e-15)) {
            return reject(k, "affine map differs from the statement");
        }
        if (r.param.has_value() != st.param.has_value()) {
            return reject(k, "parameter presence differs from the rule");
        }
        if (r.param) {
            auto it = c.theta.find(s.params[*r.param].name);
            if (it == c.theta.end() || it->second != *st.param) {
                return reject(k, "step parameter disagrees with theta");
            }
        }
        const auto np = static_cast<Eigen::Index>(r.post.size());
        if (st.matrix.rows() != np || st.matrix.cols() != np || !st.matrix.allFinite()) {
            return reject(k, "claimed matrix has the wrong shape or non-finite entries");
        }
        if (!detail::symmetric(st.matrix)) {
            return reject(k, "claimed matrix is not symmetric");
        }
        SymMatrix recomputed;
        try {
            recomputed = apply_rule(r, pre, st.param);
        } catch (const Error& e) {
            return reject(k, std::string("rule does not apply: ") + e.what());
        }
        // Slack is only granted inside the tolerance band: a claim that is
        // looser than the rule by more than that is still a forgery.
        SymMatrix claimed(st.matrix);
        if (!detail::near(claimed.mat(), recomputed.mat(), c.tolerance)) {
            const double w = min_eigenvalue(claimed.mat() - recomputed.mat());
            return reject(k, w < 0.0 ? "claimed postcondition is tighter than the rule allows"
                                     : "claimed postcondition differs from the rule",
                          w);
        }
        pre = claimed;
    }
    const SymMatrix head(c.head);
    if (!loewner_leq(pre, head, c.margin)) {
        return reject(static_cast<int>(s.rules.size()) - 1, "loop-end ellipsoid is not inside the loop head",
                      min_eigenvalue(head.mat() - pre.mat() - c.margin * Matrix::Identity(n, n)));
    }
    if (!check_initial(c.init, head)) {
        return reject(-1, "initial state lies outside the loop-head ellipsoid");
    }
    return Verdict{true, -1, {}, std::nullopt};
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw Error(ErrorKind::Format, "cannot read '" + path + "'");
    }
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline Certificate load_certificate(const std::string& path) {
    std::string text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::Format, path + ": malformed JSON: " + e.what());
    }
    return certificate_from_json(j);
}

/// Exit status 0 accepted, 1 rejected, 2 unreadable or malformed input.
inline int verify_file(const std::string& cert_path, const std::string& src_path, std::ostream& out) {
    try {
        Certificate c = load_certificate(cert_path);
        std::string src = read_file(src_path);
        Verdict v = replay(c, src);
        out << v.report() << "\n";
        return v.accepted ? 0 : 1;
    } catch (const Error& e) {
        out << "error: " << e.what() << "\n";
        return 2;
    }
}

} // namespace ellipcert
