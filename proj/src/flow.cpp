#include "lab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lab {

FlowSystem make_lorenz(double sigma, double r, double b) {
    FlowSystem sys;
    sys.dim = 3;
    sys.name = "lorenz";
    sys.params = {{"sigma", sigma}, {"r", r}, {"b", b}};
    sys.field = [sigma, r, b](const Vec& x, Vec& out) {
        out[0] = sigma * (x[1] - x[0]);
        out[1] = r * x[0] - x[1] - x[0] * x[2];
        out[2] = -b * x[2] + x[0] * x[1];
    };
    sys.jacobian = [sigma, r, b](const Vec& x, Mat& J) {
        J(0, 0) = -sigma; J(0, 1) = sigma;  J(0, 2) = 0.0;
        J(1, 0) = r - x[2]; J(1, 1) = -1.0; J(1, 2) = -x[0];
        J(2, 0) = x[1];   J(2, 1) = x[0];  J(2, 2) = -b;
    };
    return sys;
}

FlowSystem make_linear(const Mat& A) {
    if (A.rows() != A.cols() || A.rows() < 2) throw InputError("linear system: A must be square, dim >= 2");
    FlowSystem sys;
    sys.dim = static_cast<int>(A.rows());
    sys.name = "linear";
    sys.field = [A](const Vec& x, Vec& out) { out.noalias() = A * x; };
    sys.jacobian = [A](const Vec&, Mat& J) { J = A; };
    return sys;
}

FlowSystem make_rotation(double omega) {
    Mat A(2, 2);
    A << 0.0, -omega, omega, 0.0;
    FlowSystem sys = make_linear(A);
    sys.name = "rotation";
    sys.params = {{"omega", omega}};
    return sys;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

struct Dopri5 {
    std::function<void(const Vec&, Vec&)> rhs;
    int n;
    Vec k1, k2, k3, k4, k5, k6, k7, ytmp, yerr, ynew;

    explicit Dopri5(std::function<void(const Vec&, Vec&)> f, int dim)
        : rhs(std::move(f)), n(dim), k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim),
          ytmp(dim), yerr(dim), ynew(dim) {}

    // One trial step of size h from y; returns scaled error norm. k1 must be valid (FSAL).
    double step(const Vec& y, double h, double tol) {
        ytmp = y + h * a21 * k1;
        rhs(ytmp, k2);
        ytmp = y + h * (a31 * k1 + a32 * k2);
        rhs(ytmp, k3);
        ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(ytmp, k4);
        ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(ytmp, k5);
        ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(ytmp, k6);
        ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        rhs(ynew, k7);
        yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double err2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double sc = tol + tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            double q = yerr[i] / sc;
            err2 += q * q;
        }
        return std::sqrt(err2 / n);
    }
};

}  // namespace

// Integrate rhs from t=0 to t=T (T may be negative). Grid output is handled by
// the callers via stop times. guard_norm extracts the norm the divergence
// guard applies to (the base point for augmented systems).
static void integrate_to(Dopri5& stepper, Vec& y, double T, const IntegratorOptions& opt,
                         const std::function<double(const Vec&)>& guard_norm, double t_offset) {
    if (T == 0.0) return;
    const double dir = T > 0 ? 1.0 : -1.0;
    double t = 0.0;
    double h = dir * std::min(opt.h_init, std::abs(T));
    stepper.rhs(y, stepper.k1);
    int rejected_in_row = 0;
    while (dir * (T - t) > 1e-14 * std::max(1.0, std::abs(T))) {
        if (dir * (t + h) > dir * T) h = T - t;
        double err = stepper.step(y, h, opt.tol);
        if (err <= 1.0) {
            t += h;
            y = stepper.ynew;
            stepper.k1 = stepper.k7;  // FSAL
            if (guard_norm(y) > opt.guard) throw DivergenceError(t_offset + t);
            rejected_in_row = 0;
            double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
            h *= std::clamp(fac, 0.2, 5.0);
            if (std::abs(h) > opt.h_max) h = dir * opt.h_max;
        } else {
            double fac = 0.9 * std::pow(err, -0.2);
            h *= std::clamp(fac, 0.1, 0.9);
            if (++rejected_in_row > 60) throw DivergenceError(t_offset + t);
        }
    }
}

Vec flow(const FlowSystem& sys, const Vec& x, double t, const IntegratorOptions& opt) {
    if (x.size() != sys.dim) throw InputError("flow: dimension mismatch");
    if (!std::isfinite(t)) throw InputError("flow: non-finite time");
    if (opt.tol <= 0) throw InputError("flow: tol must be positive");
    Vec y = x;
    Dopri5 stepper(sys.field, sys.dim);
    integrate_to(stepper, y, t, opt, [](const Vec& z) { return z.norm(); }, 0.0);
    return y;
}

std::pair<Vec, Mat> tangent_flow(const FlowSystem& sys, const Vec& x, const Mat& frame,
                                 double t, const IntegratorOptions& opt) {
    if (x.size() != sys.dim) throw InputError("tangent_flow: dimension mismatch");
    if (frame.rows() != sys.dim) throw InputError("tangent_flow: frame row mismatch");
    const int d = sys.dim;
    const int k = static_cast<int>(frame.cols());
    // Augmented state: base point followed by the frame columns.
    Vec y(d + d * k);
    y.head(d) = x;
    for (int j = 0; j < k; ++j) y.segment(d + j * d, d) = frame.col(j);

    Mat J(d, d);
    Vec xb(d), xd(d);
    auto rhs = [&sys, d, k, &J, &xb, &xd](const Vec& z, Vec& out) {
        xb = z.head(d);
        sys.field(xb, xd);
        out.head(d) = xd;
        sys.jacobian(xb, J);
        for (int j = 0; j < k; ++j)
            out.segment(d + j * d, d).noalias() = J * z.segment(d + j * d, d);
    };
    Dopri5 stepper(rhs, d + d * k);
    // Guard applies to the base point; the tangent part is allowed to grow.
    integrate_to(stepper, y, t, opt, [d](const Vec& z) { return z.head(d).norm(); }, 0.0);
    Mat out(d, k);
    for (int j = 0; j < k; ++j) out.col(j) = y.segment(d + j * d, d);
    return {y.head(d), out};
}

int OrbitSegment::index_at(double t) const {
    if (times.empty()) return -1;
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end()) return static_cast<int>(times.size()) - 1;
    int i = static_cast<int>(it - times.begin());
    if (i > 0 && std::abs(times[i - 1] - t) < std::abs(times[i] - t)) --i;
    return i;
}

OrbitSegment sample_orbit(const FlowSystem& sys, const Vec& x0, double t0, double T,
                          double h_out, const IntegratorOptions& opt) {
    if (h_out <= 0 || T < 0) throw InputError("sample_orbit: bad grid");
    OrbitSegment seg;
    seg.system = &sys;
    seg.t0 = t0;
    seg.h_out = h_out;
    seg.tolerances = opt;
    Vec y = x0;
    Dopri5 stepper(sys.field, sys.dim);
    double t = 0.0;
    seg.times.push_back(t0);
    seg.samples.push_back(y);
    while (t < T - 1e-12 * std::max(1.0, T)) {
        double step = std::min(h_out, T - t);
        integrate_to(stepper, y, step, opt, [](const Vec& z) { return z.norm(); }, t0 + t);
        t += step;
        seg.times.push_back(t0 + t);
        seg.samples.push_back(y);
    }
    return seg;
}

TangentCocycleState make_cocycle_state(const FlowSystem& sys, const Vec& x, int n_cols) {
    TangentCocycleState st;
    st.point = x;
    // identity columns: deterministic, and exact for diagonal constant cocycles
    st.frame = Mat::Identity(sys.dim, n_cols);
    st.log_r = Vec::Zero(n_cols);
    return st;
}

void cocycle_step(const FlowSystem& sys, TangentCocycleState& st, double dt,
                  const IntegratorOptions& opt) {
    auto [p, f] = tangent_flow(sys, st.point, st.frame, dt, opt);
    st.point = p;
    st.time += dt;
    Eigen::HouseholderQR<Mat> qr(f);
    const int k = static_cast<int>(st.frame.cols());
    Mat Q = qr.householderQ() * Mat::Identity(sys.dim, k);
    Mat R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    // Fix signs so the diagonal of R is positive.
    for (int j = 0; j < k; ++j) {
        if (R(j, j) < 0) {
            Q.col(j) = -Q.col(j);
            R.row(j) = -R.row(j);
        }
        st.log_r[j] += std::log(std::abs(R(j, j)));
    }
    st.frame = Q;
}

}  // namespace lab
