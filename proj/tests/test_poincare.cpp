#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "lab/poincare.hpp"

using namespace lab;

static Vec v3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

static Vec attractor_point(const FlowSystem& sys, double warmup = 20.0) {
    return flow(sys, v3(1.0, 1.0, 20.0), warmup, {.tol = 1e-10});
}

TEST_CASE("normal frame is orthonormal and orthogonal to flow direction") {
    FlowSystem sys = make_lorenz();
    NormalFrame nf = make_normal_frame(sys, v3(1, 1, 1));
    CHECK((nf.basis.transpose() * nf.basis - Mat::Identity(2, 2)).norm() < 1e-12);
    CHECK((nf.basis.transpose() * nf.flow_dir).norm() < 1e-12);
}

TEST_CASE("normal_project basics") {
    FlowSystem sys = make_lorenz();
    Vec x = v3(1, 1, 1);
    Vec X = sys.eval(x);
    CHECK(normal_project(sys, x, X).norm() < 1e-12);

    // (1,0,0) is already orthogonal to X(1,1,1) = (0, 26, -5/3)
    Vec v = v3(1, 0, 0);
    CHECK((normal_project(sys, x, v) - v).norm() < 1e-14);

    // idempotence
    Vec w = v3(0.3, -1.2, 2.0);
    Vec p = normal_project(sys, x, w);
    CHECK((normal_project(sys, x, p) - p).norm() < 1e-12);

    // near singularity rejected
    CHECK_THROWS_AS(normal_project(sys, v3(1e-8, 1e-8, 1e-8), w), NearSingularityError);
}

TEST_CASE("linear poincare: identity at t=0 and saddle closed form") {
    Mat A(2, 2);
    A << -2, 0, 0, 1;
    FlowSystem lin = make_linear(A);
    Vec x(2), v(2);
    x << 0, 1;  // on the expanding axis, X(x) = (0,1)
    v << 1, 0;
    CHECK((linear_poincare(lin, x, v, 0.0) - v).norm() < 1e-14);
    for (double t : {0.5, 1.0, 2.0}) {
        Vec out = linear_poincare(lin, x, v, t, {.tol = 1e-12});
        CHECK(out[0] == doctest::Approx(std::exp(-2 * t)).epsilon(1e-8));
        CHECK(std::abs(out[1]) < 1e-10);
    }
}

TEST_CASE("poincare output is orthogonal to endpoint flow direction, and linear") {
    FlowSystem sys = make_lorenz();
    Vec x = attractor_point(sys);
    std::mt19937_64 gen(5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 10; ++trial) {
        Vec u = v3(nd(gen), nd(gen), nd(gen));
        Vec v = v3(nd(gen), nd(gen), nd(gen));
        double t = 0.3 + 0.1 * trial;
        Vec pu = linear_poincare(sys, x, u, t, {.tol = 1e-12});
        Vec Xe = sys.eval(flow(sys, x, t, {.tol = 1e-12}));
        if (pu.norm() > 0)
            CHECK(std::abs(pu.dot(Xe)) / (pu.norm() * Xe.norm()) < 1e-9);
        Vec pv = linear_poincare(sys, x, v, t, {.tol = 1e-12});
        Vec mix = linear_poincare(sys, x, 0.7 * u - 1.3 * v, t, {.tol = 1e-12});
        CHECK((mix - (0.7 * pu - 1.3 * pv)).norm() < 1e-9 * (1.0 + pu.norm() + pv.norm() + mix.norm()));
    }
}

TEST_CASE("cocycle law for psi and psi*") {
    FlowSystem sys = make_lorenz();
    Vec x = attractor_point(sys, 17.0);
    std::mt19937_64 gen(9);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
        Vec v = normal_project(sys, x, v3(nd(gen), nd(gen), nd(gen)));
        double s = 0.4 + 0.2 * trial, t = 0.9 - 0.1 * trial;
        Vec xs = flow(sys, x, s, {.tol = 1e-10});
        Vec two = linear_poincare(sys, xs, linear_poincare(sys, x, v, s), t);
        Vec one = linear_poincare(sys, x, v, s + t);
        CHECK((two - one).norm() < 1e-6 * (1.0 + one.norm()));
        Vec two_star = scaled_poincare(sys, xs, scaled_poincare(sys, x, v, s), t);
        Vec one_star = scaled_poincare(sys, x, v, s + t);
        CHECK((two_star - one_star).norm() < 1e-6 * (1.0 + one_star.norm()));
    }
}

TEST_CASE("scaled poincare: definition and second form agree") {
    FlowSystem sys = make_lorenz();
    Vec x = attractor_point(sys, 23.0);
    Vec v = normal_project(sys, x, v3(0.3, -0.5, 0.8));
    CHECK((scaled_poincare(sys, x, v, 0.0) - v).norm() < 1e-14);
    for (double t : {0.5, 1.5}) {
        Vec a = scaled_poincare(sys, x, v, t, {.tol = 1e-11});
        // second form: psi_t(v) / |Phi_t restricted to the flow line|
        Vec psi = linear_poincare(sys, x, v, t, {.tol = 1e-11});
        Vec X0 = sys.eval(x);
        auto [y, FX] = tangent_flow(sys, x, X0 / X0.norm(), t, {.tol = 1e-11});
        Vec b = psi / FX.col(0).norm();
        CHECK((a - b).norm() < 1e-8 * (1.0 + a.norm()));
    }
}

TEST_CASE("cocycle sample: psi* = speed_ratio * psi entrywise") {
    FlowSystem sys = make_lorenz();
    Vec x = attractor_point(sys, 31.0);
    CocycleSample cs = cocycle_sample(sys, x, 0.8);
    CHECK((cs.matrix_psi_star - cs.speed_ratio * cs.matrix_psi).norm() == 0.0);
    CHECK((cs.frame_end.basis.transpose() * cs.frame_end.basis - Mat::Identity(2, 2)).norm() <
          1e-12);
}

TEST_CASE("cocycle bound probe") {
    // tau = 0 gives exactly 1
    FlowSystem sys = make_lorenz();
    Vec x0 = attractor_point(sys);
    OrbitSegment orbit = sample_orbit(sys, x0, 0.0, 5.0, 0.5, {.tol = 1e-10});
    CocycleBoundEstimate e0 = cocycle_bound_probe(sys, orbit, 0.0);
    CHECK(e0.c_tau == 1.0);

    // linear saddle: closed-form projected cocycle norm on the expanding axis.
    // At x=(0,1), N_x = span(e1), psi*_t(e1) = e^{(-2-1)t} e1 backward dominates.
    Mat A(2, 2);
    A << -2, 0, 0, 1;
    FlowSystem lin = make_linear(A);
    Vec xs(2);
    xs << 0, 1;
    OrbitSegment one;
    one.system = &lin;
    one.h_out = 1;
    one.times = {0.0};
    one.samples = {xs};
    one.tolerances = IntegratorOptions{.tol = 1e-12};
    CocycleBoundEstimate e1 = cocycle_bound_probe(lin, one, 1.0, 4);
    // psi*_t(e1) = e^{-2t} e1 / e^{t}; max over t in [-1,1] is at t=-1: e^{3}
    CHECK(e1.c_tau == doctest::Approx(std::exp(3.0)).epsilon(1e-6));

    // monotone nondecreasing in tau
    CocycleBoundEstimate e_half = cocycle_bound_probe(lin, one, 0.5, 4);
    CHECK(e_half.c_tau <= e1.c_tau);
}

TEST_CASE("lorenz C_1 is finite and stable under sample doubling") {
    FlowSystem sys = make_lorenz();
    Vec x0 = attractor_point(sys);
    IntegratorOptions opt{.tol = 1e-9};
    OrbitSegment coarse = sample_orbit(sys, x0, 0.0, 40.0, 2.0, opt);
    OrbitSegment fine = sample_orbit(sys, x0, 0.0, 40.0, 1.0, opt);
    // clip to |X| >= 1
    auto clip = [&](OrbitSegment& s) {
        std::vector<Vec> keep;
        std::vector<double> kt;
        for (int i = 0; i < s.size(); ++i)
            if (sys.eval(s.samples[i]).norm() >= 1.0) {
                keep.push_back(s.samples[i]);
                kt.push_back(s.times[i]);
            }
        s.samples = keep;
        s.times = kt;
    };
    clip(coarse);
    clip(fine);
    CocycleBoundEstimate a = cocycle_bound_probe(sys, coarse, 1.0, 4);
    CocycleBoundEstimate b = cocycle_bound_probe(sys, fine, 1.0, 4);
    CHECK(std::isfinite(a.c_tau));
    CHECK(std::abs(a.c_tau - b.c_tau) / b.c_tau < 0.05);
}
