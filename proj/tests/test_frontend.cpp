// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "ellipcert/cfg.hpp"
#include "ellipcert/parser.hpp"
#include "ellipcert/semantics.hpp"
#include "support/oracles.hpp"

using namespace ellipcert;

namespace {

const char* kFixtures[] = {"twostate.ctl",    "twostate_x1.ctl",     "scalar.ctl",     "halving.ctl",
                           "sector.ctl",  "sector_input.ctl", "sector_unstable.ctl", "roles_param.ctl",
                           "rotation.ctl"};

Error parse_error(const std::string& text) {
    try {
        parse(text);
    } catch (const Error& e) {
        return e;
    }
    ADD_FAILURE() << "expected a parse error for:\n" << text;
    return Error(ErrorKind::Format, "none");
}

std::string wrap_loop(const std::string& decls, const std::string& body) {
    return decls + "\nvoid main(void) {\n  while (1) {\n" + body + "\n  }\n}\n";
}

} // namespace

TEST(Parser, TwoStateDeclarations) {
    SourceProgram p = parse(oracle::fixture("twostate.ctl"));
    const VarDecl* a = p.find_decl("A");
    ASSERT_NE(a, nullptr);
    EXPECT_EQ(a->dims, (std::vector<long>{2, 2}));
    EXPECT_EQ(a->init, (std::vector<double>{0.999, 0, 0, 1}));
    const VarDecl* x = p.find_decl("x");
    ASSERT_NE(x, nullptr);
    EXPECT_EQ(x->init, (std::vector<double>{1000, 0}));
    for (const char* name : {"b", "c", "u", "y", "i", "j", "x_new"}) {
        EXPECT_NE(p.find_decl(name), nullptr) << name;
    }
    EXPECT_EQ(p.find_decl("i")->type, ScalarType::Int);
    int arrays = 0;
    int scalars = 0;
    for (const auto& d : p.decls) {
        (d.dims.empty() ? scalars : arrays) += 1;
    }
    EXPECT_EQ(arrays, 5);
    EXPECT_EQ(scalars, 4);
    int loops = 0;
    for (const auto& s : p.body) {
        loops += s.kind == Stmt::Kind::While ? 1 : 0;
    }
    EXPECT_EQ(loops, 1);
}

TEST(Parser, FixturesRoundTripThroughPrinter) {
    for (const char* f : kFixtures) {
        SourceProgram p = parse(oracle::fixture(f));
        std::string printed = to_source(p);
        SourceProgram q = parse(printed);
        EXPECT_TRUE(same_structure(p, q)) << f << "\n" << printed;
        EXPECT_EQ(printed, to_source(q)) << f;
    }
}

namespace {

Expr random_expr(oracle::Rng& rng, int depth) {
    int pick = depth <= 0 ? rng.integer(0, 1) : rng.integer(0, 6);
    switch (pick) {
    case 0: {
        // Printed as the shortest round-trip decimal, so any double survives.
        double v = rng.uniform(0.0, 100.0);
        if (rng.integer(0, 3) == 0) {
            v = std::floor(v);
        }
        return Expr::number(v);
    }
    case 1: {
        const char* names[] = {"x", "y", "z"};
        return Expr::var(names[rng.integer(0, 2)]);
    }
    case 2: return Expr::unary(Expr::Kind::Neg, random_expr(rng, depth - 1));
    case 3: return Expr::binary(Expr::Kind::Add, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    case 4: return Expr::binary(Expr::Kind::Sub, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    case 5: return Expr::binary(Expr::Kind::Mul, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    default: return Expr::binary(Expr::Kind::Div, random_expr(rng, depth - 1), random_expr(rng, depth - 1));
    }
}

} // namespace

TEST(Parser, RandomExpressionsRoundTrip) {
    oracle::Rng rng(11);
    for (int k = 0; k < 500; ++k) {
        Expr e = random_expr(rng, 4);
        std::string text = wrap_loop("double x, y, z;", "x = " + to_source(e) + ";");
        SourceProgram p = parse(text);
        const Stmt& assign = p.body.at(0).body.at(0);
        ASSERT_EQ(assign.kind, Stmt::Kind::Assign);
        EXPECT_TRUE(same_structure(assign.value, e)) << to_source(e) << " reparsed as " << to_source(assign.value);
    }
}

TEST(Parser, WhitespaceAndCommentsDoNotChangeTheTree) {
    std::string a = wrap_loop("double x = 1;", "x = 0.5*x;");
    std::string b = "// header\ndouble   x=1 ;\nvoid main ( void ) {while(1){ /* c */ x=0.5 * x;}}";
    EXPECT_TRUE(same_structure(parse(a), parse(b)));
}

TEST(Parser, SyntaxErrorCarriesLocation) {
    Error e = parse_error("double x;\nvoid main(void) { while (1) { x = ; } }\n");
    EXPECT_EQ(e.kind(), ErrorKind::Syntax);
    EXPECT_EQ(e.loc().line, 2);
    EXPECT_GT(e.loc().col, 0);
}

TEST(Parser, LoopBoundsMustBeConstant) {
    Error e = parse_error(wrap_loop("double x[2]; int i; int n;", "for (i = 0; i < n; i++) x[i] = 0;"));
    EXPECT_EQ(e.kind(), ErrorKind::NonConstantBound);
}

TEST(Parser, UndeclaredIdentifierIsReported) {
    Error e = parse_error(wrap_loop("double x;", "x = w;"));
    EXPECT_EQ(e.kind(), ErrorKind::Undeclared);
    EXPECT_EQ(e.loc().line, 4);
}

TEST(Cfg, LoopHeadAndPrefix) {
    Cfg c = build_cfg(parse(wrap_loop("double x = 1; double k;", "x = k*x;")));
    ASSERT_TRUE(c.loop_head.has_value());
    EXPECT_TRUE(c.prefix_nodes().empty());
    EXPECT_EQ(c.body_nodes().size(), 1u);
    // The tail jumps back to the head.
    const auto& succ = c.succ[*c.loop_tail];
    EXPECT_NE(std::find(succ.begin(), succ.end(), *c.loop_head), succ.end());
}

TEST(Cfg, UnrollLimitIsEnforced) {
    std::string text = wrap_loop("double x[2000]; int i; int j;",
                                 "for (i = 0; i < 2000; i++) for (j = 0; j < 2000; j++) x[i] += x[j];");
    Cfg c = build_cfg(parse(text));
    try {
        unroll_loops(c);
        FAIL() << "expected the unroll limit to trigger";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnrollLimit);
    }
}

// Unrolled code on the compiled machine against the tree-walking interpreter.
TEST(Cfg, UnrolledProgramMatchesReferenceInterpreter) {
    for (const char* f : {"twostate.ctl", "rotation.ctl", "sector_input.ctl", "scalar.ctl"}) {
        SourceProgram p = parse(oracle::fixture(f));
        Cfg unrolled = unroll_loops(build_cfg(p));
        Machine m(unrolled);
        oracle::Interpreter ref(p);

        oracle::Rng rng(5);
        std::vector<double> inputs;
        for (int k = 0; k < 400; ++k) {
            inputs.push_back(rng.uniform(-1.0, 1.0));
        }
        std::size_t a = 0;
        std::size_t b = 0;
        auto machine_in = [&](int, std::size_t) { return inputs.at(a++ % inputs.size()); };
        auto ref_in = [&](int) { return inputs.at(b++ % inputs.size()); };

        std::vector<double> store = m.initial_store();
        m.run_prefix(store, machine_in);
        ref.prefix(ref_in);
        for (int it = 0; it < 50; ++it) {
            m.run_iteration(store, machine_in);
            ref.iteration(ref_in);
        }
        for (const auto& d : p.decls) {
            if (d.type == ScalarType::Int) {
                continue; // loop indices are compiled away
            }
            auto cells = decl_cells(d);
            for (std::size_t k = 0; k < cells.size(); ++k) {
                EXPECT_DOUBLE_EQ(store[*m.slot(cells[k])], ref.get(d.name, k)) << f << " " << cells[k];
            }
        }
    }
}

TEST(Cfg, UnrollingRemovesEveryLoopButTheMainOne) {
    Cfg u = unroll_loops(build_cfg(parse(oracle::fixture("twostate.ctl"))));
    for (std::size_t n = 0; n < u.nodes.size(); ++n) {
        if (u.nodes[n].kind == CfgNode::Kind::Stmt) {
            EXPECT_NE(u.nodes[n].stmt.kind, Stmt::Kind::For);
        }
    }
    // Two-state body: read, 2 x (init + 2 accumulations + input), 2 copies, y init, 2 accumulations, write.
    EXPECT_EQ(u.body_nodes().size(), 1u + 2 * 4 + 2 + 1 + 2 + 1);
}

TEST(Sector, BuiltinsStayInsideTheUnitSector) {
    oracle::Rng rng(3);
    for (SectorFn f : {sector_sin, sector_tanh, sector_sat, sector_identity}) {
        for (int k = 0; k < 1000; ++k) {
            double x = rng.uniform(-50.0, 50.0);
            EXPECT_LE(std::abs(f(x)), std::abs(x) + 1e-15);
        }
    }
}
