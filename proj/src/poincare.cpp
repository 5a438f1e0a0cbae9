#include "lab/poincare.hpp"

#include <cmath>

namespace lab {

NormalFrame make_normal_frame(const FlowSystem& sys, const Vec& x,
                              const SingularityThreshold& thr) {
    Vec X = sys.eval(x);
    double speed = X.norm();
    if (speed < thr.value()) throw NearSingularityError(0.0);
    NormalFrame nf;
    nf.base = x;
    nf.flow_dir = X / speed;
    // Complete the flow direction to an orthonormal basis; drop the first
    // column of the full Householder Q which equals +-flow_dir.
    Eigen::HouseholderQR<Mat> qr(nf.flow_dir);
    Mat Q = qr.householderQ();
    nf.basis = Q.rightCols(sys.dim - 1);
    return nf;
}

NormalFrame reseed_normal_frame(const FlowSystem& sys, const Vec& y, const Mat& seed,
                                const SingularityThreshold& thr) {
    Vec X = sys.eval(y);
    double speed = X.norm();
    if (speed < thr.value()) throw NearSingularityError(0.0);
    NormalFrame nf;
    nf.base = y;
    nf.flow_dir = X / speed;
    nf.basis.resize(sys.dim, sys.dim - 1);
    int filled = 0;
    for (int j = 0; j < seed.cols() && filled < sys.dim - 1; ++j) {
        Vec v = seed.col(j);
        for (int pass = 0; pass < 2; ++pass) {  // twice-is-enough Gram-Schmidt
            v -= nf.flow_dir.dot(v) * nf.flow_dir;
            for (int i = 0; i < filled; ++i) v -= nf.basis.col(i).dot(v) * nf.basis.col(i);
        }
        double nrm = v.norm();
        if (nrm < 1e-10) continue;
        nf.basis.col(filled++) = v / nrm;
    }
    if (filled != sys.dim - 1) return make_normal_frame(sys, y, thr);
    return nf;
}

Vec normal_project(const FlowSystem& sys, const Vec& x, const Vec& v,
                   const SingularityThreshold& thr) {
    Vec X = sys.eval(x);
    double n2 = X.squaredNorm();
    if (std::sqrt(n2) < thr.value()) throw NearSingularityError(0.0);
    return v - (v.dot(X) / n2) * X;
}

Vec linear_poincare(const FlowSystem& sys, const Vec& x, const Vec& v, double t,
                    const IntegratorOptions& opt, const SingularityThreshold& thr) {
    if (sys.eval(x).norm() < thr.value()) throw NearSingularityError(0.0);
    auto [y, w] = tangent_flow(sys, x, v, t, opt);
    Vec X = sys.eval(y);
    if (X.norm() < thr.value()) throw NearSingularityError(t);
    return w.col(0) - (w.col(0).dot(X) / X.squaredNorm()) * X;
}

Vec scaled_poincare(const FlowSystem& sys, const Vec& x, const Vec& v, double t,
                    const IntegratorOptions& opt, const SingularityThreshold& thr) {
    double s0 = sys.eval(x).norm();
    if (s0 < thr.value()) throw NearSingularityError(0.0);
    auto [y, w] = tangent_flow(sys, x, v, t, opt);
    Vec X = sys.eval(y);
    double s1 = X.norm();
    if (s1 < thr.value()) throw NearSingularityError(t);
    Vec psi = w.col(0) - (w.col(0).dot(X) / X.squaredNorm()) * X;
    return (s0 / s1) * psi;
}

CocycleSample cocycle_sample(const FlowSystem& sys, const Vec& x, double t,
                             const IntegratorOptions& opt, const SingularityThreshold& thr) {
    CocycleSample cs;
    cs.x = x;
    cs.t = t;
    cs.frame_start = make_normal_frame(sys, x, thr);
    auto [y, w] = tangent_flow(sys, x, cs.frame_start.basis, t, opt);
    Vec Xe = sys.eval(y);
    double s1 = Xe.norm();
    if (s1 < thr.value()) throw NearSingularityError(t);
    double s0 = sys.eval(x).norm();
    cs.speed_ratio = s0 / s1;
    cs.frame_end = reseed_normal_frame(sys, y, w, thr);
    const int m = sys.dim - 1;
    cs.matrix_psi.resize(m, m);
    for (int j = 0; j < m; ++j) {
        Vec pj = w.col(j) - (w.col(j).dot(Xe) / Xe.squaredNorm()) * Xe;
        cs.matrix_psi.col(j) = cs.frame_end.basis.transpose() * pj;
    }
    cs.matrix_psi_star = cs.speed_ratio * cs.matrix_psi;
    return cs;
}

CocycleBoundEstimate cocycle_bound_probe(const FlowSystem& sys, const OrbitSegment& orbit,
                                         double tau, int time_subdiv,
                                         const SingularityThreshold& thr) {
    CocycleBoundEstimate est;
    est.tau = tau;
    est.c_tau = 1.0;  // t=0 gives the identity
    if (tau < 0) throw InputError("cocycle_bound_probe: tau must be >= 0");
    for (const Vec& x : orbit.samples) {
        for (int i = -time_subdiv; i <= time_subdiv; ++i) {
            double t = tau * i / time_subdiv;
            if (t == 0.0) continue;
            CocycleSample cs = cocycle_sample(sys, x, t, orbit.tolerances, thr);
            Eigen::JacobiSVD<Mat> svd(cs.matrix_psi_star);
            est.c_tau = std::max(est.c_tau, svd.singularValues()(0));
        }
        ++est.samples;
    }
    return est;
}

}  // namespace lab
