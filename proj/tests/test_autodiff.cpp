#include <cmath>

#include "doctest.h"
#include "prodssm/autodiff.hpp"

using prodssm::ad::Tape;
using prodssm::ad::TapeScope;
using prodssm::ad::Var;

TEST_CASE("product rule through exp") {
    Tape tape;
    TapeScope scope(tape);
    const Var x = Var::independent(2.0);
    const Var y = x * exp(x);
    const auto g = tape.adjoints(y);
    CHECK(y.value() == doctest::Approx(2.0 * std::exp(2.0)));
    CHECK(g[x.index()] == doctest::Approx(3.0 * std::exp(2.0)));
}

TEST_CASE("constants fold off the tape") {
    Tape tape;
    TapeScope scope(tape);
    const Var a(3.0), b(4.0);
    const Var c = sqrt(a * a + b * b);
    CHECK(c.is_constant());
    CHECK(c.value() == 5.0);
    CHECK(tape.size() == 0);
}

TEST_CASE("two-input partials") {
    Tape tape;
    TapeScope scope(tape);
    const Var x = Var::independent(0.3);
    const Var y = Var::independent(-1.2);
    const Var f = log(x * x + 1.0) / y + erf(x * y);
    const auto g = tape.adjoints(f);
    const double xv = 0.3, yv = -1.2;
    const double dfx = 2 * xv / (xv * xv + 1) / yv + 2 / std::sqrt(M_PI) * std::exp(-xv * xv * yv * yv) * yv;
    const double dfy = -std::log(xv * xv + 1) / (yv * yv) +
                       2 / std::sqrt(M_PI) * std::exp(-xv * xv * yv * yv) * xv;
    CHECK(g[x.index()] == doctest::Approx(dfx).epsilon(1e-12));
    CHECK(g[y.index()] == doctest::Approx(dfy).epsilon(1e-12));
}

TEST_CASE("reused node accumulates adjoints") {
    Tape tape;
    TapeScope scope(tape);
    const Var x = Var::independent(1.5);
    Var acc = 0.0;
    for (int i = 0; i < 4; ++i) acc += x * x;
    const auto g = tape.adjoints(acc);
    CHECK(g[x.index()] == doctest::Approx(8.0 * 1.5));
}
