#include "lab/splitting.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lab {

namespace {

// QR with positive diagonal; returns Q, writes log|diag R| into logs.
Mat positive_qr(const Mat& m, Vec* logs = nullptr) {
    const int k = static_cast<int>(m.cols());
    Eigen::HouseholderQR<Mat> qr(m);
    Mat Q = qr.householderQ() * Mat::Identity(m.rows(), k);
    Mat R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    for (int j = 0; j < k; ++j) {
        if (R(j, j) < 0) Q.col(j) = -Q.col(j);
        if (logs) (*logs)[j] = std::log(std::abs(R(j, j)));
    }
    return Q;
}

std::pair<double, double> line_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const int n = static_cast<int>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    double slope = (n * sxy - sx * sy) / denom;
    double intercept = (sy - slope * sx) / n;
    return {slope, intercept};
}

}  // namespace

LyapunovReport lyapunov_spectrum(const FlowSystem& sys, const Vec& x0, double T,
                                 double renorm_step, const IntegratorOptions& opt,
                                 unsigned seed) {
    if (T < 100 * renorm_step) throw InputError("lyapunov_spectrum: T must be >= 100*renorm_step");
    const int d = sys.dim;
    LyapunovReport rep;
    rep.window = T;
    rep.renorm_step = renorm_step;

    TangentCocycleState st = make_cocycle_state(sys, x0, d);
    (void)seed;
    const int n_steps = static_cast<int>(std::ceil(T / renorm_step));
    Vec log_half = Vec::Zero(d);
    double t_half = 0.0;
    for (int i = 0; i < n_steps; ++i) {
        double dt = std::min(renorm_step, T - i * renorm_step);
        cocycle_step(sys, st, dt, opt);
        if (sys.eval(st.point).norm() < 1e-8) rep.singularity_flag = true;
        if (st.time <= T / 2) {
            log_half = st.log_r;
            t_half = st.time;
        }
    }
    rep.exponents.resize(d);
    rep.convergence.resize(d);
    for (int j = 0; j < d; ++j) {
        rep.exponents[j] = st.log_r[j] / st.time;
        double first_half = log_half[j] / t_half;
        double second_half = (st.log_r[j] - log_half[j]) / (st.time - t_half);
        rep.convergence[j] = std::abs(second_half - first_half);
    }
    std::sort(rep.exponents.begin(), rep.exponents.end(), std::greater<double>());
    return rep;
}

LyapunovReport scaled_poincare_spectrum(const FlowSystem& sys, const Vec& x0, double T,
                                        double renorm_step, const IntegratorOptions& opt,
                                        const SingularityThreshold& thr) {
    const int d = sys.dim;
    const int m = d - 1;
    LyapunovReport rep;
    rep.window = T;
    rep.renorm_step = renorm_step;

    Vec x = x0;
    NormalFrame nf = make_normal_frame(sys, x, thr);
    Mat B = nf.basis;  // orthonormal basis of N_x
    Vec log_r = Vec::Zero(m), log_half = Vec::Zero(m), step_logs(m);
    double t = 0.0, t_half = 0.0;
    const int n_steps = static_cast<int>(std::ceil(T / renorm_step));
    for (int i = 0; i < n_steps; ++i) {
        double dt = std::min(renorm_step, T - i * renorm_step);
        double s0 = sys.eval(x).norm();
        auto [y, w] = tangent_flow(sys, x, B, dt, opt);
        Vec Xe = sys.eval(y);
        double s1 = Xe.norm();
        if (s1 < thr.value()) throw NearSingularityError(t + dt);
        for (int j = 0; j < m; ++j)
            w.col(j) -= (w.col(j).dot(Xe) / Xe.squaredNorm()) * Xe;
        w *= s0 / s1;  // scaled flow
        B = positive_qr(w, &step_logs);
        log_r += step_logs;
        x = y;
        t += dt;
        if (t <= T / 2) {
            log_half = log_r;
            t_half = t;
        }
    }
    rep.exponents.resize(m);
    rep.convergence.resize(m);
    for (int j = 0; j < m; ++j) {
        rep.exponents[j] = log_r[j] / t;
        rep.convergence[j] = std::abs((log_r[j] - log_half[j]) / (t - t_half) - log_half[j] / t_half);
    }
    std::sort(rep.exponents.begin(), rep.exponents.end(), std::greater<double>());
    return rep;
}

double principal_angle(const Mat& A, const Mat& B) {
    Eigen::JacobiSVD<Mat> svd(A.transpose() * B);
    double c = svd.singularValues().minCoeff();
    return std::acos(std::clamp(c, -1.0, 1.0));
}

SplittingField oseledets_directions(const FlowSystem& sys, const OrbitSegment& orbit,
                                    double lookback, int dim_E, int dim_F, unsigned seed) {
    if (lookback < 20.0) throw InputError("oseledets_directions: lookback must be >= 20");
    if (dim_E + dim_F != sys.dim) throw InputError("oseledets_directions: dim_E+dim_F != dim");
    const int n = orbit.size();
    const int d = sys.dim;
    SplittingField field;
    field.orbit = &orbit;
    field.dim_E = dim_E;
    field.dim_F = dim_F;
    field.lookback = lookback;

    // One-step tangent transitions along the orbit.
    field.step.resize(n - 1);
    for (int i = 0; i + 1 < n; ++i) {
        double dt = orbit.times[i + 1] - orbit.times[i];
        auto [y, A] = tangent_flow(sys, orbit.samples[i], Mat::Identity(d, d), dt,
                                   orbit.tolerances);
        field.step[i] = A;
    }

    const int warm = static_cast<int>(std::ceil(lookback / orbit.h_out));
    if (n <= 2 * warm + 1) throw InputError("oseledets_directions: orbit shorter than 2*lookback");
    field.first = warm;
    field.last = n - 1 - warm;
    field.E.resize(n);
    field.F.resize(n);

    // Forward QR sweep: leading dim_F columns converge (push-forward power
    // iteration) to the most-expanded subspace from lookback in the past.
    std::mt19937_64 gen(seed + 777);
    std::normal_distribution<double> nd;
    Mat Q(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) Q(i, j) = nd(gen);
    Q = positive_qr(Q);
    for (int i = 0; i + 1 < n; ++i) {
        Q = positive_qr(field.step[i] * Q);
        if (i + 1 >= field.first) field.F[i + 1] = Q.leftCols(dim_F);
    }
    // Backward sweep with the inverse steps: leading dim_E columns converge to
    // the strongest forward-contracting subspace (time-reversal symmetric).
    Mat Qb(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) Qb(i, j) = nd(gen);
    Qb = positive_qr(Qb);
    for (int i = n - 2; i >= 0; --i) {
        Qb = positive_qr(field.step[i].partialPivLu().solve(Qb));
        if (i <= field.last) field.E[i] = Qb.leftCols(dim_E);
    }

    // Convergence gate: compare against sweeps warm-started only `lookback`
    // before a few probe indices; doubling the lookback must not move the
    // subspaces by more than 0.01 rad.
    double worst = 0.0;
    std::vector<int> probes;
    for (int k = 1; k <= 4; ++k)
        probes.push_back(field.first + k * (field.last - field.first) / 5);
    for (int p : probes) {
        if (p - warm < 0 || p + warm >= n) continue;
        Mat Qs(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) Qs(i, j) = nd(gen);
        Qs = positive_qr(Qs);
        for (int i = p - warm; i < p; ++i) Qs = positive_qr(field.step[i] * Qs);
        worst = std::max(worst, principal_angle(Qs.leftCols(dim_F), field.F[p]));
        Mat Qbs(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) Qbs(i, j) = nd(gen);
        Qbs = positive_qr(Qbs);
        for (int i = p + warm - 1; i >= p; --i)
            Qbs = positive_qr(field.step[i].partialPivLu().solve(Qbs));
        worst = std::max(worst, principal_angle(Qbs.leftCols(dim_E), field.E[p]));
    }
    field.convergence_angle = worst;
    field.converged = worst < 0.01;
    return field;
}

namespace {

// Product of per-step transitions from index i over `steps` orbit intervals.
Mat compose_steps(const SplittingField& field, int i, int steps) {
    Mat D = field.step[i];
    for (int k = 1; k < steps; ++k) D = field.step[i + k] * D;
    return D;
}

// Deterministic unit-vector grid in the column span of B (k columns).
std::vector<Vec> span_grid(const Mat& B, int count) {
    const int k = static_cast<int>(B.cols());
    std::vector<Vec> out;
    if (k == 1) {
        out.push_back(B.col(0));
        return out;
    }
    if (k == 2) {
        for (int i = 0; i < count; ++i) {
            double th = M_PI * i / count;
            out.push_back(std::cos(th) * B.col(0) + std::sin(th) * B.col(1));
        }
        return out;
    }
    std::mt19937_64 gen(42);
    std::normal_distribution<double> nd;
    for (int i = 0; i < count; ++i) {
        Vec c(k);
        for (int j = 0; j < k; ++j) c[j] = nd(gen);
        c.normalize();
        out.push_back(B * c);
    }
    return out;
}

struct ConeCheck {
    bool ok = true;
    double worst_factor = 0.0;  // aperture ratio after the step, relative to a
};

// Checks that D maps the aperture-a cone around primary (vs secondary) into
// the cone around primary_img with aperture < a, on a boundary grid.
ConeCheck cone_invariance(const Mat& D, const Mat& primary, const Mat& secondary,
                          const Mat& primary_img, const Mat& secondary_img, double a) {
    ConeCheck res;
    const int d = static_cast<int>(D.rows());
    Mat basis_img(d, d);
    basis_img << primary_img, secondary_img;
    Eigen::PartialPivLU<Mat> lu(basis_img);
    const int kp = static_cast<int>(primary.cols());
    for (const Vec& p : span_grid(primary, 8)) {
        for (const Vec& s : span_grid(secondary, 8)) {
            Vec v = p + 0.999 * a * s;  // just inside the cone boundary
            Vec w = D * v;
            Vec coef = lu.solve(w);
            double np = (primary_img * coef.head(kp)).norm();
            double ns = (secondary_img * coef.tail(d - kp)).norm();
            double ratio = ns / np;  // aperture of the image
            res.worst_factor = std::max(res.worst_factor, ratio / a);
            if (ratio >= a) res.ok = false;
        }
    }
    return res;
}

}  // namespace

DominationCertificate check_dominated_splitting(const FlowSystem& sys, const SplittingField& field,
                                                const std::vector<int>& sample_indices, int L,
                                                double aperture) {
    (void)sys;
    DominationCertificate cert;
    cert.L = L;
    cert.aperture = aperture;
    const int steps = static_cast<int>(std::lround(L / field.orbit->h_out));
    if (steps < 1 || std::abs(steps * field.orbit->h_out - L) > 1e-9)
        throw InputError("check_dominated_splitting: L must be a multiple of h_out");

    for (int i : sample_indices) {
        int j = i + steps;
        if (!field.defined_at(i) || !field.defined_at(j))
            throw InputError("check_dominated_splitting: splitting missing at index " +
                             std::to_string(i));
        Mat D = compose_steps(field, i, steps);
        bool violated = false;
        // (i) ratio inequality with the standard domination factor 1/2
        for (const Vec& u : span_grid(field.E[i], 8)) {
            for (const Vec& v : span_grid(field.F[i], 16)) {
                double ratio = (D * u).norm() / (D * v).norm();
                if (ratio > cert.worst_ratio) {
                    cert.worst_ratio = ratio;
                    cert.worst_index = i;
                    cert.worst_u = u;
                    cert.worst_v = v;
                }
                if (ratio > 0.5) violated = true;
            }
        }
        // (ii) F-cone forward invariance, E-cone backward invariance
        ConeCheck fc = cone_invariance(D, field.F[i], field.E[i], field.F[j], field.E[j], aperture);
        Mat Dinv = D.partialPivLu().solve(Mat::Identity(D.rows(), D.cols()));
        ConeCheck ec =
            cone_invariance(Dinv, field.E[j], field.F[j], field.E[i], field.F[i], aperture);
        cert.contraction_factor = std::max({cert.contraction_factor, fc.worst_factor,
                                            ec.worst_factor});
        if (!fc.ok || !ec.ok) violated = true;
        if (violated) ++cert.violation_count;
        ++cert.sample_count;
    }
    cert.passed = cert.violation_count == 0 && cert.worst_ratio <= 0.5;
    return cert;
}

DominationCertificate check_dominated_splitting_normal(const FlowSystem& sys,
                                                       const SplittingField& field,
                                                       const std::vector<int>& sample_indices,
                                                       int L, double aperture,
                                                       const SingularityThreshold& thr) {
    DominationCertificate cert;
    cert.L = L;
    cert.aperture = aperture;
    const OrbitSegment& orbit = *field.orbit;
    const int steps = static_cast<int>(std::lround(L / orbit.h_out));
    const int d = sys.dim;

    for (int i : sample_indices) {
        int j = i + steps;
        if (!field.defined_at(i) || !field.defined_at(j))
            throw InputError("check_dominated_splitting_normal: splitting missing");
        const Vec& x = orbit.samples[i];
        // psi*_L as a matrix between normal-frame coordinates.
        CocycleSample cs = cocycle_sample(sys, x, static_cast<double>(L), orbit.tolerances, thr);
        // Projected subspaces in start/end frame coordinates.
        auto project_into = [&](const NormalFrame& nf, const Mat& sub) {
            Mat P = nf.basis.transpose() * sub;  // coordinates of pi(sub)
            // orthonormalize columns, dropping near-zero ones (flow direction)
            Mat out(P.rows(), P.cols());
            int filled = 0;
            for (int c = 0; c < P.cols(); ++c) {
                Vec v = P.col(c);
                for (int kk = 0; kk < filled; ++kk) v -= out.col(kk).dot(v) * out.col(kk);
                if (v.norm() > 1e-6) out.col(filled++) = v / v.norm();
            }
            return Mat(out.leftCols(filled));
        };
        Mat piE0 = project_into(cs.frame_start, field.E[i]);
        Mat piF0 = project_into(cs.frame_start, field.F[i]);
        Mat piE1 = project_into(cs.frame_end, field.E[j]);
        Mat piF1 = project_into(cs.frame_end, field.F[j]);
        if (piE0.cols() + piF0.cols() != d - 1 || piE1.cols() + piF1.cols() != d - 1)
            throw InputError("check_dominated_splitting_normal: projected splitting degenerate");
        const Mat& D = cs.matrix_psi_star;
        bool violated = false;
        for (const Vec& u : span_grid(piE0, 8)) {
            for (const Vec& v : span_grid(piF0, 16)) {
                double ratio = (D * u).norm() / (D * v).norm();
                cert.worst_ratio = std::max(cert.worst_ratio, ratio);
                if (ratio > 0.5) violated = true;
            }
        }
        ConeCheck fc = cone_invariance(D, piF0, piE0, piF1, piE1, aperture);
        Mat Dinv = D.partialPivLu().solve(Mat::Identity(d - 1, d - 1));
        ConeCheck ec = cone_invariance(Dinv, piE1, piF1, piE0, piF0, aperture);
        cert.contraction_factor =
            std::max({cert.contraction_factor, fc.worst_factor, ec.worst_factor});
        if (!fc.ok || !ec.ok) violated = true;
        if (violated) ++cert.violation_count;
        ++cert.sample_count;
    }
    cert.passed = cert.violation_count == 0 && cert.worst_ratio <= 0.5;
    return cert;
}

SectionalExpansionCertificate check_sectional_expansion(const FlowSystem& sys,
                                                        const SplittingField& field,
                                                        const std::vector<int>& sample_indices,
                                                        const std::vector<double>& T_grid,
                                                        double lambda_min,
                                                        const IntegratorOptions& opt) {
    if (field.dim_F < 2) throw InputError("check_sectional_expansion: dim_F must be >= 2");
    if (T_grid.size() < 2) throw InputError("check_sectional_expansion: need >= 2 grid times");
    SectionalExpansionCertificate cert;
    cert.lambda_min_config = lambda_min;
    cert.worst_plane_rate = std::numeric_limits<double>::infinity();

    double sum_rate = 0.0, sum_logK = 0.0;
    int n_fits = 0;
    for (int i : sample_indices) {
        if (!field.defined_at(i)) throw InputError("check_sectional_expansion: field missing");
        const Vec& x = field.orbit->samples[i];
        std::vector<Mat> planes;  // dim x 2 orthonormal spanning pairs
        if (field.dim_F == 2) {
            planes.push_back(field.F[i]);
        } else {
            // Fibonacci-style deterministic grid of 64 planes inside F.
            const int kf = field.dim_F;
            const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
            for (int p = 0; p < 64; ++p) {
                Vec c1(kf), c2(kf);
                for (int q = 0; q < kf; ++q) {
                    c1[q] = std::cos(2 * M_PI * std::fmod(p * golden * (q + 1), 1.0));
                    c2[q] = std::sin(2 * M_PI * std::fmod((p + 0.5) * golden * (q + 1), 1.0));
                }
                Vec v1 = field.F[i] * c1;
                v1.normalize();
                Vec v2 = field.F[i] * c2;
                v2 -= v1.dot(v2) * v1;
                v2.normalize();
                Mat P(x.size(), 2);
                P << v1, v2;
                planes.push_back(P);
            }
        }
        for (const Mat& P : planes) {
            std::vector<double> ts, logdets;
            Vec p = x;
            Mat W = P;
            double t_prev = 0.0;
            double log_renorm = 0.0;
            for (double t : T_grid) {
                auto [y, Wt] = tangent_flow(sys, p, W, t - t_prev, opt);
                Mat G = Wt.transpose() * Wt;  // 2x2 Gram of the transported pair
                logdets.push_back(0.5 * std::log(G.determinant()) + log_renorm);
                ts.push_back(t);
                // renormalize the spanning pair between grid times
                Vec logs(2);
                Mat Q = positive_qr(Wt, &logs);
                log_renorm += logs.sum();
                W = Q;
                p = y;
                t_prev = t;
            }
            auto [slope, intercept] = line_fit(ts, logdets);
            cert.worst_plane_rate = std::min(cert.worst_plane_rate, slope);
            sum_rate += slope;
            sum_logK += intercept;
            ++n_fits;
        }
        ++cert.sample_count;
    }
    cert.lambda_est = sum_rate / n_fits;
    cert.K_est = std::exp(sum_logK / n_fits);
    cert.passed = cert.worst_plane_rate >= lambda_min;
    return cert;
}

SingularitySpectrum singularity_analysis(const FlowSystem& sys, const Vec& sigma) {
    if (sys.eval(sigma).norm() >= 1e-8)
        throw InputError("singularity_analysis: point is not an equilibrium");
    SingularitySpectrum out;
    out.point = sigma;
    Mat J = sys.jac(sigma);
    Eigen::EigenSolver<Mat> es(J);
    const int d = sys.dim;
    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    auto ev = es.eigenvalues();
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (ev[a].real() != ev[b].real()) return ev[a].real() < ev[b].real();
        return std::abs(ev[a].imag()) < std::abs(ev[b].imag());
    });
    out.eigenvalues.resize(d);
    out.directions.resize(d, d);
    for (int i = 0; i < d; ++i) {
        out.eigenvalues[i] = ev[order[i]];
        Vec dir = es.eigenvectors().col(order[i]).real();
        if (dir.norm() > 0) dir.normalize();
        out.directions.col(i) = dir;
    }
    for (int i = 0; i + 1 < d; ++i)
        if (std::abs(out.eigenvalues[i] - out.eigenvalues[i + 1]) < 1e-8) out.degenerate = true;

    // Classification for the time-one map: contracting eigenvalues are stable,
    // the weakest-contracting one is the center slot, positive ones unstable.
    int n_neg = 0, n_pos = 0;
    for (int i = 0; i < d; ++i) {
        if (out.eigenvalues[i].real() < 0) ++n_neg;
        else ++n_pos;
    }
    out.n_unstable = n_pos;
    out.n_center = n_neg > 0 ? 1 : 0;
    out.n_stable = n_neg - out.n_center;

    // Sectional rates over the F_cu = center + unstable candidate.
    const int cu = out.n_center + out.n_unstable;
    if (cu < 2 || d < 3) {
        out.sectional_applicable = false;
        out.sectional_rate_cu = 0.0;
    } else {
        double min_pair = std::numeric_limits<double>::infinity();
        for (int a = d - cu; a < d; ++a)
            for (int b = a + 1; b < d; ++b)
                min_pair = std::min(min_pair,
                                    out.eigenvalues[a].real() + out.eigenvalues[b].real());
        out.sectional_rate_cu = min_pair;
    }
    return out;
}

}  // namespace lab
