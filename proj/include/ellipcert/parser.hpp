// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ellipcert/ast.hpp"
#include "ellipcert/error.hpp"

/*
 * Recursive-descent parser for the controller language, a strict C subset:
 *
 *   program    ::= { item }
 *   item       ::= decl | nonlin | main | stmt
 *   decl       ::= ("double" | "float" | "int") declarator { "," declarator } ";"
 *   declarator ::= IDENT { "[" INT "]" } [ "=" init ]
 *   init       ::= const | "{" init { "," init } "}"
 *   nonlin     ::= "nonlin" IDENT [ "=" IDENT ] ";"
 *   main       ::= ("void" | "int") "main" "(" [ "void" ] ")" "{" { decl | stmt } "}"
 *   stmt       ::= lvalue ("=" | "+=" | "-=") expr ";"
 *                | lvalue "=" "read" "(" INT ")" ";"
 *                | "write" "(" expr ")" ";"
 *                | "assume" "(" expr CMP expr ")" ";"
 *                | "for" "(" IDENT "=" INT ";" IDENT ("<" | "<=") INT ";" step ")" stmt
 *                | "while" "(" "1" ")" stmt
 *                | "{" { stmt } "}" | ";"
 *   expr       ::= term { ("+" | "-") term }
 *   term       ::= unary { ("*" | "/") unary }
 *   unary      ::= "-" unary | "+" unary | primary
 *   primary    ::= NUMBER | lvalue | IDENT "(" expr ")" | "(" expr ")"
 *
 * Lines starting with '#' are skipped.
 */

namespace ellipcert {

struct Token {
    enum class Kind { Ident, Number, Punct, End };
    Kind kind = Kind::End;
    std::string text;
    SourceLoc loc;
};

inline std::vector<Token> tokenize(std::string_view src) {
    std::vector<Token> out;
    int line = 1;
    int col = 1;
    std::size_t i = 0;
    bool at_line_start = true;
    auto advance = [&](std::size_t n) {
        for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
                at_line_start = true;
            } else {
                ++col;
            }
        }
    };
    while (i < src.size()) {
        char c = src[i];
        if (c == '\n' || c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
            advance(1);
            continue;
        }
        if (c == '#' && at_line_start) {
            while (i < src.size() && src[i] != '\n') {
                advance(1);
            }
            continue;
        }
        at_line_start = false;
        if (c == '/' && i + 1 < src.size() && src[i + 1] == '/') {
            while (i < src.size() && src[i] != '\n') {
                advance(1);
            }
            continue;
        }
        if (c == '/' && i + 1 < src.size() && src[i + 1] == '*') {
            SourceLoc start{line, col};
            advance(2);
            while (i + 1 < src.size() && !(src[i] == '*' && src[i + 1] == '/')) {
                advance(1);
            }
            if (i + 1 >= src.size()) {
                throw Error(ErrorKind::Syntax, "unterminated comment", start);
            }
            advance(2);
            continue;
        }
        Token tok;
        tok.loc = {line, col};
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
                ++j;
            }
            tok.kind = Token::Kind::Ident;
            tok.text = std::string(src.substr(i, j - i));
            advance(j - i);
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            std::size_t j = i;
            while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) {
                ++j;
            }
            if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < src.size() && (src[k] == '+' || src[k] == '-')) {
                    ++k;
                }
                if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
                    while (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
                        ++k;
                    }
                    j = k;
                }
            }
            tok.kind = Token::Kind::Number;
            tok.text = std::string(src.substr(i, j - i));
            advance(j - i);
        } else {
            static const char* const two_char[] = {"+=", "-=", "++", "--", "<=", ">=", "==", "!=", "&&", "||", "->"};
            tok.kind = Token::Kind::Punct;
            tok.text = std::string(1, c);
            for (const char* op : two_char) {
                if (i + 1 < src.size() && src[i] == op[0] && src[i + 1] == op[1]) {
                    tok.text = op;
                    break;
                }
            }
            if (std::string_view("()[]{};,=+-*/<>&!|.%?:\"'").find(c) == std::string_view::npos) {
                throw Error(ErrorKind::Syntax, std::string("unexpected character '") + c + "'", tok.loc);
            }
            advance(tok.text.size());
        }
        out.push_back(std::move(tok));
    }
    Token end;
    end.kind = Token::Kind::End;
    end.loc = {line, col};
    out.push_back(end);
    return out;
}

class Parser {
  public:
    explicit Parser(std::string_view src) : toks_(tokenize(src)) {}

    SourceProgram parse_program() {
        while (!at_end()) {
            parse_item();
        }
        return std::move(prog_);
    }

  private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    SourceProgram prog_;
    std::set<std::string> declared_;
    int loop_depth_ = 0; // enclosing for/while loops
    bool seen_while_ = false;

    [[nodiscard]] const Token& peek(std::size_t ahead = 0) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    [[nodiscard]] bool at_end() const { return peek().kind == Token::Kind::End; }
    [[nodiscard]] bool is(std::string_view text, std::size_t ahead = 0) const {
        const Token& t = peek(ahead);
        return t.kind != Token::Kind::End && t.text == text && t.kind != Token::Kind::Number;
    }
    const Token& next() {
        const Token& t = toks_[pos_];
        if (pos_ + 1 < toks_.size()) {
            ++pos_;
        }
        return t;
    }
    [[noreturn]] void fail(const std::string& msg, SourceLoc loc) const { throw Error(ErrorKind::Syntax, msg, loc); }
    [[noreturn]] void fail_here(const std::string& msg) const {
        const Token& t = peek();
        std::string found = t.kind == Token::Kind::End ? "end of input" : "'" + t.text + "'";
        fail(msg + ", found " + found, t.loc);
    }
    const Token& expect(std::string_view text) {
        if (!is(text)) {
            fail_here("expected '" + std::string(text) + "'");
        }
        return next();
    }
    const Token& expect_ident() {
        if (peek().kind != Token::Kind::Ident) {
            fail_here("expected identifier");
        }
        return next();
    }

    static bool is_type_keyword(const std::string& s) { return s == "double" || s == "float" || s == "int"; }
    static bool is_reserved(const std::string& s) {
        static const std::set<std::string> words = {"double", "float", "int",   "void",  "nonlin", "while",
                                                    "for",    "read",  "write", "assume", "return", "if",
                                                    "else",   "main"};
        return words.count(s) > 0;
    }

    void parse_item() {
        const Token& t = peek();
        if (t.kind == Token::Kind::Ident && is_type_keyword(t.text) && is("main", 1)) {
            parse_main();
        } else if (t.kind == Token::Kind::Ident && t.text == "void") {
            parse_main();
        } else if (t.kind == Token::Kind::Ident && is_type_keyword(t.text)) {
            parse_decl();
        } else if (is("nonlin")) {
            parse_nonlin();
        } else {
            parse_stmt_into(prog_.body);
        }
    }

    void parse_main() {
        next(); // void / int
        if (!is("main")) {
            throw Error(ErrorKind::Unsupported, "function definitions other than main are not supported", peek().loc);
        }
        next();
        expect("(");
        if (is("void")) {
            next();
        }
        expect(")");
        expect("{");
        while (!is("}")) {
            if (at_end()) {
                fail_here("expected '}'");
            }
            if (peek().kind == Token::Kind::Ident && is_type_keyword(peek().text)) {
                parse_decl();
            } else {
                parse_stmt_into(prog_.body);
            }
        }
        expect("}");
    }

    void parse_nonlin() {
        SourceLoc loc = next().loc;
        const Token& name = expect_ident();
        NonlinDecl d{name.text, {}, loc};
        if (declared_.count(d.name) || is_builtin_sector(d.name)) {
            fail("redeclaration of '" + d.name + "'", name.loc);
        }
        if (is("=")) {
            next();
            const Token& b = expect_ident();
            if (!is_builtin_sector(b.text)) {
                throw Error(ErrorKind::Unsupported, "unknown sector function '" + b.text + "'", b.loc);
            }
            d.binding = b.text;
        }
        expect(";");
        declared_.insert(d.name);
        prog_.nonlins.push_back(std::move(d));
    }

    long parse_int_literal(ErrorKind on_ident, const std::string& what) {
        bool negative = false;
        if (is("-")) {
            next();
            negative = true;
        }
        const Token& t = peek();
        if (t.kind == Token::Kind::Ident) {
            throw Error(on_ident, what + " must be an integer constant, found '" + t.text + "'", t.loc);
        }
        if (t.kind != Token::Kind::Number || t.text.find_first_of(".eE") != std::string::npos) {
            fail_here(what + " must be an integer constant");
        }
        next();
        long v = std::strtol(t.text.c_str(), nullptr, 10);
        return negative ? -v : v;
    }

    double parse_const() {
        // Constant initializer: a numeric expression without identifiers.
        SourceLoc loc = peek().loc;
        Expr e = parse_expr();
        double v = 0;
        if (!fold(e, v)) {
            throw Error(ErrorKind::Unsupported, "initializer must be a numeric constant", loc);
        }
        return v;
    }

    static bool fold(const Expr& e, double& out) {
        using K = Expr::Kind;
        double a = 0;
        double b = 0;
        switch (e.kind) {
        case K::Number: out = e.value; return true;
        case K::Neg:
            if (!fold(e.args[0], a)) {
                return false;
            }
            out = -a;
            return true;
        case K::Add:
        case K::Sub:
        case K::Mul:
        case K::Div:
            if (!fold(e.args[0], a) || !fold(e.args[1], b)) {
                return false;
            }
            out = e.kind == K::Add ? a + b : e.kind == K::Sub ? a - b : e.kind == K::Mul ? a * b : a / b;
            return true;
        default: return false;
        }
    }

    void parse_init_list(std::vector<double>& out) {
        if (is("{")) {
            next();
            if (!is("}")) {
                parse_init_list(out);
                while (is(",")) {
                    next();
                    if (is("}")) {
                        break;
                    }
                    parse_init_list(out);
                }
            }
            expect("}");
        } else {
            out.push_back(parse_const());
        }
    }

    void parse_decl() {
        if (loop_depth_ > 0) {
            throw Error(ErrorKind::Unsupported, "declarations inside loops are not supported", peek().loc);
        }
        const Token& type_tok = next();
        ScalarType type = type_tok.text == "int" ? ScalarType::Int : ScalarType::Double;
        for (;;) {
            if (is("*")) {
                throw Error(ErrorKind::Unsupported, "pointers are not supported", peek().loc);
            }
            const Token& name = expect_ident();
            if (is_reserved(name.text)) {
                fail("'" + name.text + "' is a reserved word", name.loc);
            }
            if (declared_.count(name.text)) {
                fail("redeclaration of '" + name.text + "'", name.loc);
            }
            VarDecl d;
            d.type = type;
            d.name = name.text;
            d.loc = name.loc;
            while (is("[")) {
                next();
                long dim = parse_int_literal(ErrorKind::NonConstantBound, "array dimension");
                if (dim <= 0) {
                    fail("array dimension must be positive", name.loc);
                }
                d.dims.push_back(dim);
                expect("]");
            }
            std::vector<double> init;
            if (is("=")) {
                next();
                if (d.is_array() && !is("{")) {
                    fail_here("array initializer must be a brace list");
                }
                if (!d.is_array() && is("{")) {
                    fail_here("scalar initializer must be a constant");
                }
                parse_init_list(init);
            }
            if (init.size() > d.cell_count()) {
                fail("too many initializers for '" + d.name + "'", name.loc);
            }
            init.resize(d.cell_count(), 0.0);
            d.init = std::move(init);
            declared_.insert(d.name);
            prog_.decls.push_back(std::move(d));
            if (is(",")) {
                next();
                continue;
            }
            break;
        }
        expect(";");
    }

    const VarDecl& require_var(const Token& t) {
        const VarDecl* d = prog_.find_decl(t.text);
        if (d == nullptr) {
            if (declared_.count(t.text)) {
                fail("'" + t.text + "' is a function, not a variable", t.loc);
            }
            throw Error(ErrorKind::Undeclared, "use of undeclared identifier '" + t.text + "'", t.loc);
        }
        return *d;
    }

    LValue parse_lvalue() {
        const Token& name = expect_ident();
        const VarDecl& d = require_var(name);
        LValue lv{name.text, {}, name.loc};
        while (is("[")) {
            next();
            lv.subscripts.push_back(parse_expr());
            expect("]");
        }
        if (lv.subscripts.size() != d.dims.size()) {
            fail("'" + d.name + "' expects " + std::to_string(d.dims.size()) + " subscript(s), got " +
                     std::to_string(lv.subscripts.size()),
                 name.loc);
        }
        return lv;
    }

    void parse_stmt_into(std::vector<Stmt>& out) {
        const Token& t = peek();
        if (is(";")) {
            next();
            return;
        }
        if (is("{")) {
            next();
            while (!is("}")) {
                if (at_end()) {
                    fail_here("expected '}'");
                }
                if (peek().kind == Token::Kind::Ident && is_type_keyword(peek().text)) {
                    parse_decl();
                } else {
                    parse_stmt_into(out);
                }
            }
            next();
            return;
        }
        if (seen_while_ && loop_depth_ == 0) {
            throw Error(ErrorKind::Unsupported, "statements after the main while(1) loop are unreachable", t.loc);
        }
        if (t.kind != Token::Kind::Ident) {
            fail_here("expected statement");
        }
        if (t.text == "while") {
            out.push_back(parse_while());
        } else if (t.text == "for") {
            out.push_back(parse_for());
        } else if (t.text == "write") {
            Stmt s;
            s.kind = Stmt::Kind::Write;
            s.loc = next().loc;
            expect("(");
            s.value = parse_expr();
            expect(")");
            expect(";");
            out.push_back(std::move(s));
        } else if (t.text == "assume") {
            Stmt s;
            s.kind = Stmt::Kind::Assume;
            s.loc = next().loc;
            expect("(");
            Expr lhs = parse_expr();
            static const char* const cmps[] = {"<=", ">=", "<", ">", "=="};
            std::string op;
            for (const char* c : cmps) {
                if (is(c)) {
                    op = c;
                    break;
                }
            }
            if (op.empty()) {
                fail_here("expected comparison in assume");
            }
            SourceLoc oploc = next().loc;
            Expr rhs = parse_expr();
            s.value = Expr::binary(Expr::Kind::Compare, std::move(lhs), std::move(rhs), oploc);
            s.value.name = op;
            expect(")");
            expect(";");
            out.push_back(std::move(s));
        } else if (t.text == "if" || t.text == "return" || t.text == "else") {
            throw Error(ErrorKind::Unsupported, "'" + t.text + "' statements are not supported", t.loc);
        } else {
            out.push_back(parse_assignment());
        }
    }

    Stmt parse_assignment() {
        Stmt s;
        s.loc = peek().loc;
        if (peek(1).kind == Token::Kind::Punct && peek(1).text == "(") {
            throw Error(ErrorKind::Unsupported, "call to '" + peek().text + "' is not supported as a statement",
                        peek().loc);
        }
        s.target = parse_lvalue();
        if (is("=")) {
            next();
            if (is("read") && is("(", 1)) {
                next();
                next();
                s.kind = Stmt::Kind::Read;
                long ch = parse_int_literal(ErrorKind::Unsupported, "input channel");
                if (ch < 0) {
                    fail("input channel must be non-negative", s.loc);
                }
                s.channel = static_cast<int>(ch);
                expect(")");
                expect(";");
                return s;
            }
            s.op = AssignOp::Set;
        } else if (is("+=")) {
            next();
            s.op = AssignOp::Add;
        } else if (is("-=")) {
            next();
            s.op = AssignOp::Sub;
        } else if (is("++") || is("--")) {
            throw Error(ErrorKind::Unsupported, "increment outside a for header is not supported", peek().loc);
        } else {
            fail_here("expected assignment operator");
        }
        s.kind = Stmt::Kind::Assign;
        s.value = parse_expr();
        expect(";");
        return s;
    }

    Stmt parse_while() {
        Stmt s;
        s.kind = Stmt::Kind::While;
        s.loc = next().loc;
        if (loop_depth_ > 0) {
            throw Error(ErrorKind::Unsupported, "nested while loops are not supported", s.loc);
        }
        if (seen_while_) {
            throw Error(ErrorKind::Unsupported, "only one top-level while(1) loop is supported", s.loc);
        }
        expect("(");
        const Token& c = peek();
        if (c.kind != Token::Kind::Number || std::strtod(c.text.c_str(), nullptr) == 0.0) {
            throw Error(ErrorKind::Unsupported, "only while(1) loops are supported", c.loc);
        }
        next();
        expect(")");
        ++loop_depth_;
        parse_stmt_into(s.body);
        --loop_depth_;
        seen_while_ = true;
        return s;
    }

    Stmt parse_for() {
        Stmt s;
        s.kind = Stmt::Kind::For;
        s.loc = next().loc;
        expect("(");
        const Token& idx = expect_ident();
        require_var(idx);
        s.index = idx.text;
        const VarDecl* d = prog_.find_decl(idx.text);
        if (d->is_array()) {
            fail("loop index must be a scalar", idx.loc);
        }
        expect("=");
        s.lo = parse_int_literal(ErrorKind::NonConstantBound, "loop bound");
        expect(";");
        const Token& idx2 = expect_ident();
        if (idx2.text != s.index) {
            throw Error(ErrorKind::Unsupported, "loop condition must test the loop index", idx2.loc);
        }
        bool inclusive = false;
        if (is("<=")) {
            inclusive = true;
        } else if (!is("<")) {
            throw Error(ErrorKind::Unsupported, "loop condition must be '<' or '<='", peek().loc);
        }
        next();
        s.hi = parse_int_literal(ErrorKind::NonConstantBound, "loop bound") + (inclusive ? 1 : 0);
        expect(";");
        // step: i++ | ++i | i += 1
        if (is("++")) {
            next();
            if (expect_ident().text != s.index) {
                throw Error(ErrorKind::Unsupported, "loop step must increment the loop index", s.loc);
            }
        } else {
            if (expect_ident().text != s.index) {
                throw Error(ErrorKind::Unsupported, "loop step must increment the loop index", s.loc);
            }
            if (is("++")) {
                next();
            } else if (is("+=")) {
                next();
                if (parse_int_literal(ErrorKind::NonConstantBound, "loop step") != 1) {
                    throw Error(ErrorKind::Unsupported, "loop step must be 1", s.loc);
                }
            } else {
                throw Error(ErrorKind::Unsupported, "loop step must be i++", peek().loc);
            }
        }
        expect(")");
        ++loop_depth_;
        parse_stmt_into(s.body);
        --loop_depth_;
        return s;
    }

    Expr parse_expr() {
        Expr lhs = parse_term();
        while (is("+") || is("-")) {
            const Token& op = next();
            Expr rhs = parse_term();
            lhs = Expr::binary(op.text == "+" ? Expr::Kind::Add : Expr::Kind::Sub, std::move(lhs), std::move(rhs),
                               op.loc);
        }
        return lhs;
    }

    Expr parse_term() {
        Expr lhs = parse_unary();
        while (is("*") || is("/")) {
            const Token& op = next();
            Expr rhs = parse_unary();
            lhs = Expr::binary(op.text == "*" ? Expr::Kind::Mul : Expr::Kind::Div, std::move(lhs), std::move(rhs),
                               op.loc);
        }
        return lhs;
    }

    Expr parse_unary() {
        if (is("-")) {
            SourceLoc loc = next().loc;
            return Expr::unary(Expr::Kind::Neg, parse_unary(), loc);
        }
        if (is("+")) {
            next();
            return parse_unary();
        }
        if (is("&")) {
            throw Error(ErrorKind::Unsupported, "address-of is not supported", peek().loc);
        }
        return parse_primary();
    }

    Expr parse_primary() {
        const Token& t = peek();
        if (t.kind == Token::Kind::Number) {
            next();
            double v = 0;
            auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
            if (res.ec != std::errc() || res.ptr != t.text.data() + t.text.size()) {
                fail("malformed number '" + t.text + "'", t.loc);
            }
            return Expr::number(v, t.loc);
        }
        if (is("(")) {
            next();
            Expr e = parse_expr();
            expect(")");
            return e;
        }
        if (t.kind == Token::Kind::Ident) {
            if (is("(", 1)) {
                next();
                next();
                if (!prog_.is_sector_function(t.text)) {
                    throw Error(ErrorKind::Unsupported,
                                "call to '" + t.text + "' is not supported (only declared sector functions)", t.loc);
                }
                Expr arg = parse_expr();
                expect(")");
                return Expr::call(t.text, std::move(arg), t.loc);
            }
            if (t.text == "read") {
                throw Error(ErrorKind::Unsupported, "read() may only appear as `v = read(k);`", t.loc);
            }
            LValue lv = parse_lvalue();
            return Expr::var(std::move(lv.name), std::move(lv.subscripts), lv.loc);
        }
        fail_here("expected expression");
    }
};

/// Parses controller source. Throws Error with a location on failure.
inline SourceProgram parse(std::string_view text) { return Parser(text).parse_program(); }

} // namespace ellipcert
