#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Integration left the configured guard ball; carries the last time that was
// still valid.
struct DivergenceError : std::runtime_error {
    double last_valid_time;
    explicit DivergenceError(double t)
        : std::runtime_error("orbit diverged at t=" + std::to_string(t)),
          last_valid_time(t) {}
};

/// A smooth vector field with analytic Jacobian. Generates the flow phi_t,
/// the tangent flow Phi_t and the time-one map f.
struct FlowSystem {
    int dim = 0;
    std::string name;
    std::function<void(const Vec&, Vec&)> field;     // X(x)
    std::function<void(const Vec&, Mat&)> jacobian;  // DX(x)
    std::vector<std::pair<std::string, double>> params;

    Vec eval(const Vec& x) const {
        if (x.size() != dim) throw InputError("evaluate: dimension mismatch");
        Vec out(dim);
        field(x, out);
        return out;
    }
    Mat jac(const Vec& x) const {
        if (x.size() != dim) throw InputError("jacobian: dimension mismatch");
        Mat out(dim, dim);
        jacobian(x, out);
        return out;
    }
};

// Built-in systems. The linear and rotation systems exist as analytic oracles.
FlowSystem make_lorenz(double sigma = 10.0, double r = 28.0, double b = 8.0 / 3.0);
FlowSystem make_linear(const Mat& A);        // X(x) = A x
FlowSystem make_rotation(double omega = 1.0);  // 2D rigid rotation

struct IntegratorOptions {
    double tol = 1e-10;       // local error control (abs and rel)
    double guard = 1e4;       // |x| above this aborts with DivergenceError
    double h_init = 1e-3;
    double h_max = 0.5;
};

/// phi_t(x) by adaptive embedded RK (Dormand-Prince 5(4)).
Vec flow(const FlowSystem& sys, const Vec& x, double t, const IntegratorOptions& opt = {});

/// Joint base + variational integration: returns (phi_t(x), Phi_t(x) * frame).
std::pair<Vec, Mat> tangent_flow(const FlowSystem& sys, const Vec& x, const Mat& frame,
                                 double t, const IntegratorOptions& opt = {});

inline Vec time_one_map(const FlowSystem& sys, const Vec& x, const IntegratorOptions& opt = {}) {
    return flow(sys, x, 1.0, opt);
}

/// Discretization of phi_t(x): samples at a uniform output step h_out
/// (last interval may be short).
struct OrbitSegment {
    const FlowSystem* system = nullptr;
    double t0 = 0.0;
    double h_out = 0.0;
    std::vector<double> times;
    std::vector<Vec> samples;
    IntegratorOptions tolerances;

    int size() const { return static_cast<int>(samples.size()); }
    // index of the sample nearest to time t (t relative to t0)
    int index_at(double t) const;
};

OrbitSegment sample_orbit(const FlowSystem& sys, const Vec& x0, double t0, double T,
                          double h_out, const IntegratorOptions& opt = {});

/// Transported tangent frame with accumulated log growth from periodic
/// QR re-orthonormalization.
struct TangentCocycleState {
    Vec point;
    Mat frame;       // columns: transported tangent vectors
    Vec log_r;       // accumulated log |diag R| per column
    double time = 0.0;
};

TangentCocycleState make_cocycle_state(const FlowSystem& sys, const Vec& x, int n_cols);

/// Advance the state by dt, then re-orthonormalize the frame (QR) and
/// accumulate log-diagonal records.
void cocycle_step(const FlowSystem& sys, TangentCocycleState& st, double dt,
                  const IntegratorOptions& opt = {});

}  // namespace lab
