#include "lab/shadowing.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lab {

namespace {

// Orthonormalized coordinates of pi(sub) in a normal frame, dropping columns
// that project to (near) zero (the flow direction).
Mat project_subspace(const NormalFrame& nf, const Mat& sub) {
    Mat P = nf.basis.transpose() * sub;
    Mat out(P.rows(), P.cols());
    int filled = 0;
    for (int c = 0; c < P.cols(); ++c) {
        Vec v = P.col(c);
        for (int k = 0; k < filled; ++k) v -= out.col(k).dot(v) * out.col(k);
        if (v.norm() > 1e-6) out.col(filled++) = v / v.norm();
    }
    return Mat(out.leftCols(filled));
}

double op_norm(const Mat& M) {
    return Eigen::JacobiSVD<Mat>(M).singularValues().maxCoeff();
}

double co_norm(const Mat& M) {
    return Eigen::JacobiSVD<Mat>(M).singularValues().minCoeff();
}

// log ||psi*|E|| over a window, as the product of per-step restrictions onto
// the E field at each sample. A raw matrix product cannot represent the
// strongly contracted direction next to the expanding one in double precision
// (the restriction underflows into amplified rounding noise after a few time
// units); re-projecting on the invariant field at every step is exact for
// one-dimensional fibers and numerically stable.
double window_log_e_norm(const ScaledCocycleTrack& track, int start, int steps) {
    double acc = 0.0;
    for (int k = 0; k < steps; ++k)
        acc += std::log(op_norm(track.A[start + k] * track.En[start + k]));
    return acc;
}

double window_log_f_conorm(const ScaledCocycleTrack& track, int start, int steps) {
    double acc = 0.0;
    for (int k = 0; k < steps; ++k)
        acc += std::log(co_norm(track.A[start + k] * track.Fn[start + k]));
    return acc;
}

double slope_of(const std::vector<double>& xs, const std::vector<double>& ys) {
    int n = static_cast<int>(xs.size());
    if (n < 2) return 0.0;
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return den > 0 ? num / den : 0.0;
}

std::string canonical_rotation(const std::string& w) {
    if (w.empty()) return w;
    std::string best = w;
    std::string doubled = w + w;
    for (size_t i = 1; i < w.size(); ++i) best = std::min(best, doubled.substr(i, w.size()));
    return best;
}

std::string primitive_word(const std::string& w) {
    for (size_t k = 1; k <= w.size() / 2; ++k) {
        if (w.size() % k != 0) continue;
        bool rep = true;
        for (size_t i = k; i < w.size() && rep; ++i)
            if (w[i] != w[i % k]) rep = false;
        if (rep) return w.substr(0, k);
    }
    return w;
}

}  // namespace

ScaledCocycleTrack build_scaled_track(const FlowSystem& sys, const SplittingField& field,
                                      const IntegratorOptions& opt,
                                      const SingularityThreshold& thr) {
    const OrbitSegment& orbit = *field.orbit;
    const int n = orbit.size();
    ScaledCocycleTrack track;
    track.orbit = &orbit;
    track.field = &field;
    track.first = field.first;
    track.last = field.last;
    track.A.resize(n - 1);
    track.En.resize(n);
    track.Fn.resize(n);
    track.speed.resize(n);

    std::vector<NormalFrame> frames(n);
    for (int i = 0; i < n; ++i) {
        frames[i] = make_normal_frame(sys, orbit.samples[i], thr);
        track.speed[i] = sys.eval(orbit.samples[i]).norm();
        if (field.defined_at(i)) {
            track.En[i] = project_subspace(frames[i], field.E[i]);
            track.Fn[i] = project_subspace(frames[i], field.F[i]);
        }
    }
    for (int i = 0; i + 1 < n; ++i) {
        double dt = orbit.times[i + 1] - orbit.times[i];
        CocycleSample cs = cocycle_sample(sys, orbit.samples[i], dt, opt, thr);
        // rebase the end frame onto the independently built frame at i+1
        Mat G = frames[i + 1].basis.transpose() * cs.frame_end.basis;
        track.A[i] = G * cs.matrix_psi_star;
    }
    return track;
}

PesinBlock pesin_block(const ScaledCocycleTrack& track, double N0, double threshold_a) {
    if (N0 <= 0) throw InputError("pesin_block: N0 must be positive");
    const OrbitSegment& orbit = *track.orbit;
    const double h = orbit.h_out;
    const int w = static_cast<int>(std::lround(N0 / h));
    if (w < 1 || std::abs(w * h - N0) > 1e-9)
        throw InputError("pesin_block: N0 must be a multiple of the orbit output step");

    PesinBlock block;
    block.track = &track;
    block.N0 = N0;
    block.threshold_a = threshold_a;
    int eligible = 0;
    for (int i = track.first + w; i + w <= track.last; ++i) {
        if (track.En[i].cols() == 0 || track.Fn[i - w].cols() == 0)
            throw InputError("pesin_block: projected splitting missing in range");
        ++eligible;
        double avg_E = window_log_e_norm(track, i, w) / N0;
        // psi*_{-N0}|F at x_i is the inverse of the forward window ending at i
        double avg_F = -window_log_f_conorm(track, i - w, w) / N0;
        if (avg_E < threshold_a && avg_F < threshold_a) {
            block.block_indices.push_back(i);
            block.block_times.push_back(orbit.times[i]);
        }
    }
    block.block_measure =
        eligible > 0 ? static_cast<double>(block.block_indices.size()) / eligible : 0.0;
    return block;
}

QuasiHyperbolicCertificate certify_quasi_hyperbolic(const ScaledCocycleTrack& track,
                                                    int arc_first, int arc_last, double T0,
                                                    double lambda) {
    if (lambda <= 0.0 || lambda >= 1.0)
        throw InputError("certify_quasi_hyperbolic: lambda must lie in (0,1)");
    const OrbitSegment& orbit = *track.orbit;
    const double h = orbit.h_out;
    const int w0 = static_cast<int>(std::lround(T0 / h));
    if (w0 < 1 || std::abs(w0 * h - T0) > 1e-9)
        throw InputError("certify_quasi_hyperbolic: T0 must be a multiple of the output step");
    int total = arc_last - arc_first;
    if (total < w0 || arc_first < track.first || arc_last > track.last)
        throw InputError("certify_quasi_hyperbolic: arc not coverable by [T0,2T0] steps");

    QuasiHyperbolicCertificate cert;
    cert.arc_first = arc_first;
    cert.arc_last = arc_last;
    cert.T0 = T0;
    cert.lambda = lambda;

    // greedy partition: steps of T0 with the remainder absorbed by the tail
    std::vector<int> cut{arc_first};
    int remaining = total;
    while (remaining > 2 * w0) {
        cut.push_back(cut.back() + w0);
        remaining -= w0;
    }
    cut.push_back(arc_last);
    for (int i : cut) cert.partition.push_back(orbit.times[i]);

    const int l = static_cast<int>(cut.size()) - 1;
    for (int k = 0; k < l; ++k) {
        QuasiHyperbolicStep st;
        st.t_start = orbit.times[cut[k]];
        st.t_end = orbit.times[cut[k + 1]];
        st.e_norm = std::exp(window_log_e_norm(track, cut[k], cut[k + 1] - cut[k]));
        st.f_conorm = std::exp(window_log_f_conorm(track, cut[k], cut[k + 1] - cut[k]));
        st.ratio = st.e_norm / st.f_conorm;
        cert.per_step.push_back(st);
    }

    const double log_l = std::log(lambda);
    double e_running = 0.0;
    cert.passed = true;
    for (int k = 0; k < l && cert.passed; ++k) {
        if (std::log(cert.per_step[k].ratio) > 2.0 * log_l + 1e-12) {
            cert.passed = false;
            cert.fail_k = k;
            cert.fail_condition = "step-ratio";
            break;
        }
        e_running += std::log(cert.per_step[k].e_norm);
        if (e_running > (k + 1) * log_l + 1e-12) {
            cert.passed = false;
            cert.fail_k = k;
            cert.fail_condition = "E-product";
            break;
        }
    }
    if (cert.passed) {
        double f_suffix = 0.0;
        for (int k = l - 1; k >= 0; --k) {
            f_suffix += std::log(cert.per_step[k].f_conorm);
            if (f_suffix < (k - l) * log_l - 1e-12) {
                cert.passed = false;
                cert.fail_k = k;
                cert.fail_condition = "F-coproduct";
                break;
            }
        }
    }
    return cert;
}

std::vector<RecurrenceSeed> find_recurrences(const PesinBlock& block, double delta,
                                             double min_T) {
    std::vector<RecurrenceSeed> out;
    if (delta <= 0.0) return out;
    const OrbitSegment& orbit = *block.track->orbit;
    std::vector<RecurrenceSeed> candidates;
    const auto& idx = block.block_indices;
    for (size_t a = 0; a < idx.size(); ++a) {
        for (size_t b = a + 1; b < idx.size(); ++b) {
            double T = orbit.times[idx[b]] - orbit.times[idx[a]];
            if (T < min_T) continue;
            double gap = (orbit.samples[idx[a]] - orbit.samples[idx[b]]).norm();
            if (gap >= delta) continue;
            candidates.push_back({idx[a], idx[b], orbit.times[idx[a]], T, gap});
        }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const RecurrenceSeed& p, const RecurrenceSeed& q) { return p.gap < q.gap; });
    for (const RecurrenceSeed& c : candidates) {
        bool dup = false;
        for (const RecurrenceSeed& s : out)
            if (std::abs(c.t_start - s.t_start) < min_T / 2 && std::abs(c.T - s.T) < min_T / 2) {
                dup = true;
                break;
            }
        if (!dup) out.push_back(c);
    }
    std::sort(out.begin(), out.end(),
              [](const RecurrenceSeed& p, const RecurrenceSeed& q) { return p.t_start < q.t_start; });
    return out;
}

std::string lorenz_itinerary(const FlowSystem& sys, const Vec& p, double period,
                             const IntegratorOptions& opt) {
    if (sys.dim != 3) return "";
    const double dt = 0.01;
    int n = std::max(4, static_cast<int>(std::ceil(period / dt)));
    std::vector<double> zs(n), xs(n);
    Vec y = p;
    for (int i = 0; i < n; ++i) {
        zs[i] = y[2];
        xs[i] = y[0];
        y = flow(sys, y, period / n, opt);
    }
    std::string word;
    for (int i = 0; i < n; ++i) {
        int prev = (i + n - 1) % n, next = (i + 1) % n;
        if (zs[i] > zs[prev] && zs[i] >= zs[next]) word += xs[i] < 0 ? 'L' : 'R';
    }
    return canonical_rotation(word);
}

namespace {

struct ShootingState {
    std::vector<Vec> q;        // reference section points
    std::vector<Vec> nvec;     // unit flow directions at q
    std::vector<Mat> B;        // section bases, d x (d-1)
    std::vector<double> dt0;   // nominal flight times
};

// Flow from p until it crosses the section (q_t, n_t); returns the crossing
// point and the flight time.
std::pair<Vec, double> cross_section(const FlowSystem& sys, const Vec& p, double dt_nominal,
                                     const Vec& q_t, const Vec& n_t,
                                     const IntegratorOptions& opt) {
    Vec y = flow(sys, p, dt_nominal, opt);
    double tau = dt_nominal;
    for (int it = 0; it < 12; ++it) {
        double g = n_t.dot(y - q_t);
        if (std::abs(g) < 1e-12) break;
        double gd = n_t.dot(sys.eval(y));
        double dt = -g / gd;
        dt = std::clamp(dt, -0.25 * dt_nominal, 0.25 * dt_nominal);
        y = flow(sys, y, dt, opt);
        tau += dt;
    }
    return {y, tau};
}

}  // namespace

PeriodicOrbitRecord shadow_periodic(const FlowSystem& sys, const Vec& x, double T,
                                    const ShootingOptions& opt) {
    if (T <= 0.0) throw InputError("shadow_periodic: period guess must be positive");
    const int d = sys.dim;
    const int nd = d - 1;
    const int m = std::max(2, static_cast<int>(std::lround(T / opt.section_dt)));
    const double dt = T / m;

    PeriodicOrbitRecord rec;
    rec.seed_x = x;
    rec.seed_T = T;

    ShootingState ss;
    ss.q.resize(m);
    ss.nvec.resize(m);
    ss.B.resize(m);
    ss.dt0.assign(m, dt);
    Vec y = x;
    for (int k = 0; k < m; ++k) {
        ss.q[k] = y;
        NormalFrame nf = make_normal_frame(sys, y);
        ss.nvec[k] = nf.flow_dir;
        ss.B[k] = nf.basis;
        y = flow(sys, y, dt, opt.integ);
    }
    rec.seed_gap = (x - y).norm();

    auto unpack = [&](const Vec& u, int k) { return Vec(ss.q[k] + ss.B[k] * u.segment(k * nd, nd)); };
    auto residuals = [&](const Vec& u, std::vector<double>* taus,
                         std::vector<Vec>* crossings) -> Vec {
        Vec r(m * nd);
        for (int k = 0; k < m; ++k) {
            int k1 = (k + 1) % m;
            auto [yk, tau] = cross_section(sys, unpack(u, k), ss.dt0[k], ss.q[k1], ss.nvec[k1],
                                           opt.integ);
            r.segment(k * nd, nd) = ss.B[k1].transpose() * (yk - unpack(u, k1));
            if (taus) (*taus)[k] = tau;
            if (crossings) (*crossings)[k] = yk;
        }
        return r;
    };
    auto in_tube = [&](const Vec& u) {
        for (int k = 0; k < m; ++k) {
            double speed = sys.eval(ss.q[k]).norm();
            if (u.segment(k * nd, nd).norm() > opt.beta * std::max(speed, 1.0)) return false;
        }
        return true;
    };

    Vec u = Vec::Zero(m * nd);
    std::vector<double> taus(m);
    Vec r;
    try {
        r = residuals(u, &taus, nullptr);
    } catch (const DivergenceError&) {
        rec.residual_history.push_back(std::numeric_limits<double>::infinity());
        return rec;
    }
    rec.residual_history.push_back(r.norm());

    for (int iter = 0; iter < opt.max_iterations && r.norm() > opt.tol; ++iter) {
        Mat J = Mat::Zero(m * nd, m * nd);
        for (int k = 0; k < m; ++k) {
            int k1 = (k + 1) % m;
            auto [yk, Phi] = tangent_flow(sys, unpack(u, k), ss.B[k], taus[k], opt.integ);
            Vec Xy = sys.eval(yk);
            Mat proj = Mat::Identity(d, d) - Xy * ss.nvec[k1].transpose() / ss.nvec[k1].dot(Xy);
            J.block(k * nd, k * nd, nd, nd) = ss.B[k1].transpose() * proj * Phi;
            J.block(k * nd, k1 * nd, nd, nd) -= Mat::Identity(nd, nd);
        }
        Vec du = J.partialPivLu().solve(-r);
        double alpha = 1.0;
        bool accepted = false;
        for (int half = 0; half <= 8; ++half) {
            Vec u_try = u + alpha * du;
            if (in_tube(u_try)) {
                try {
                    std::vector<double> taus_try(m);
                    Vec r_try = residuals(u_try, &taus_try, nullptr);
                    if (r_try.norm() < r.norm()) {
                        u = u_try;
                        r = r_try;
                        taus = taus_try;
                        accepted = true;
                        break;
                    }
                } catch (const DivergenceError&) {
                }
            }
            alpha *= 0.5;
        }
        rec.residual_history.push_back(r.norm());
        if (!accepted) break;
    }
    if (r.norm() > opt.tol) return rec;  // converged stays false, history reported

    rec.converged = true;
    rec.point = unpack(u, 0);
    rec.period = std::accumulate(taus.begin(), taus.end(), 0.0);
    rec.theta_t.resize(m + 1);
    rec.theta_val.resize(m + 1);
    double acc = 0.0;
    for (int k = 0; k <= m; ++k) {
        rec.theta_t[k] = k * dt;
        rec.theta_val[k] = acc;
        if (k < m) acc += taus[k];
    }
    rec.residual = (rec.point - flow(sys, rec.point, rec.period, opt.integ)).norm();

    // (c) and (d) bounds on a fine grid along the seed window
    const int g = 24 * m;
    double c_bound = 0.0, d_bound = 0.0;
    Vec xs = x, pr = rec.point, pt = rec.point;
    double th_prev = 0.0, t_prev = 0.0;
    for (int i = 0; i <= g; ++i) {
        double t = T * i / g;
        // piecewise-linear theta(t)
        int k = std::min(m - 1, static_cast<int>(t / dt));
        double th = rec.theta_val[k] + (t - rec.theta_t[k]) * taus[k] / dt;
        if (i > 0) {
            xs = flow(sys, xs, t - t_prev, opt.integ);
            pr = flow(sys, pr, th - th_prev, opt.integ);
            pt = flow(sys, pt, t - t_prev, opt.integ);
        }
        double speed = sys.eval(xs).norm();
        c_bound = std::max(c_bound, (xs - pr).norm() / std::max(speed, 1e-12));
        d_bound = std::max(d_bound, (xs - pt).norm());
        t_prev = t;
        th_prev = th;
    }
    rec.c_bound = c_bound;
    rec.d_bound = rec.seed_gap > 1e-12 ? d_bound / rec.seed_gap : 0.0;

    if (sys.name.rfind("lorenz", 0) == 0) {
        rec.itinerary = lorenz_itinerary(sys, rec.point, rec.period, opt.integ);
        std::string seed_word = lorenz_itinerary(sys, x, T, opt.integ);
        rec.itinerary_mismatch = !seed_word.empty() && seed_word != rec.itinerary;
    }
    return rec;
}

ShadowingReport verify_shadowing(const FlowSystem& sys, const PeriodicOrbitRecord& record,
                                 double epsilon, const IntegratorOptions& opt) {
    if (!record.converged) throw InputError("verify_shadowing: record not converged");
    ShadowingReport rep;
    rep.theta_ok = true;
    for (size_t k = 0; k + 1 < record.theta_t.size(); ++k) {
        double num = record.theta_val[k + 1] - record.theta_val[k];
        double den = record.theta_t[k + 1] - record.theta_t[k];
        double slope = num / den;
        if (num <= 0 || slope <= 1.0 - epsilon || slope >= 1.0 + epsilon) rep.theta_ok = false;
    }
    rep.periodic_ok = record.residual < 1e-9;
    rep.c_bound_ok = record.c_bound <= epsilon;
    rep.d_bound_ok = std::isfinite(record.d_bound);

    auto [y, M] = tangent_flow(sys, record.point, Mat::Identity(sys.dim, sys.dim), record.period,
                               opt);
    (void)y;
    Eigen::EigenSolver<Mat> es(M);
    rep.floquet = es.eigenvalues();
    int trivial = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < rep.floquet.size(); ++i) {
        double err = std::abs(rep.floquet[i] - std::complex<double>(1.0, 0.0));
        if (err < best) {
            best = err;
            trivial = i;
        }
    }
    rep.unit_eigen_error = best;
    rep.hyperbolic_ok = true;
    for (int i = 0; i < rep.floquet.size(); ++i) {
        if (i == trivial) continue;
        if (std::abs(std::log(std::abs(rep.floquet[i]))) < 0.05) rep.hyperbolic_ok = false;
    }
    rep.passed = rep.theta_ok && rep.periodic_ok && rep.c_bound_ok && rep.d_bound_ok &&
                 rep.hyperbolic_ok;
    return rep;
}

CensusResult horseshoe_census(const std::vector<PeriodicOrbitRecord>& records, double T_max,
                              int grid_points) {
    CensusResult out;
    // reduce repeated traversals to primitive orbits, then deduplicate
    struct Orbit {
        std::string word;
        double period;
    };
    std::vector<Orbit> distinct;
    for (const auto& r : records) {
        if (!r.converged) continue;
        Orbit o{primitive_word(r.itinerary), r.period};
        if (!r.itinerary.empty() && o.word.size() < r.itinerary.size())
            o.period *= static_cast<double>(o.word.size()) / r.itinerary.size();
        o.word = canonical_rotation(o.word);
        bool dup = false;
        for (const Orbit& e : distinct) {
            if (!o.word.empty() && e.word == o.word) dup = true;
            if (o.word.empty() && e.word.empty() && std::abs(e.period - o.period) <= 1e-6)
                dup = true;
        }
        if (!dup && o.period <= T_max + 1e-9) distinct.push_back(o);
    }
    double t_min = T_max;
    for (const Orbit& o : distinct) t_min = std::min(t_min, o.period);
    for (int i = 0; i < grid_points; ++i) {
        double T = t_min + (T_max - t_min) * i / std::max(1, grid_points - 1);
        int n = 0;
        for (const Orbit& o : distinct)
            if (o.period <= T + 1e-9) ++n;
        out.T_grid.push_back(T);
        out.N.push_back(n);
    }
    std::vector<double> xs, ys;
    for (size_t i = 0; i < out.T_grid.size(); ++i)
        if (out.N[i] > 0) {
            xs.push_back(out.T_grid[i]);
            ys.push_back(std::log(static_cast<double>(out.N[i])));
        }
    out.insufficient = xs.size() < 3;
    out.rate = slope_of(xs, ys);
    return out;
}

std::string census_csv(const CensusResult& census) {
    std::ostringstream outs;
    outs << "T,N,rate\n";
    for (size_t i = 0; i < census.T_grid.size(); ++i)
        outs << census.T_grid[i] << "," << census.N[i] << "," << census.rate << "\n";
    return outs.str();
}

std::string record_to_json(const PeriodicOrbitRecord& record) {
    nlohmann::json j;
    j["point"] = std::vector<double>(record.point.data(), record.point.data() + record.point.size());
    j["seed_x"] = std::vector<double>(record.seed_x.data(), record.seed_x.data() + record.seed_x.size());
    j["seed_T"] = record.seed_T;
    j["seed_gap"] = record.seed_gap;
    j["period"] = record.period;
    j["theta_t"] = record.theta_t;
    j["theta_val"] = record.theta_val;
    j["c_bound"] = record.c_bound;
    j["d_bound"] = record.d_bound;
    j["residual"] = record.residual;
    j["itinerary"] = record.itinerary;
    j["converged"] = record.converged;
    j["itinerary_mismatch"] = record.itinerary_mismatch;
    j["residual_history"] = record.residual_history;
    return j.dump(2);
}

PeriodicOrbitRecord record_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    PeriodicOrbitRecord rec;
    auto to_vec = [](const nlohmann::json& a) {
        Vec v(a.size());
        for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
        return v;
    };
    rec.point = to_vec(j.at("point"));
    rec.seed_x = to_vec(j.at("seed_x"));
    rec.seed_T = j.at("seed_T").get<double>();
    rec.seed_gap = j.at("seed_gap").get<double>();
    rec.period = j.at("period").get<double>();
    rec.theta_t = j.at("theta_t").get<std::vector<double>>();
    rec.theta_val = j.at("theta_val").get<std::vector<double>>();
    rec.c_bound = j.at("c_bound").get<double>();
    rec.d_bound = j.at("d_bound").get<double>();
    rec.residual = j.at("residual").get<double>();
    rec.itinerary = j.at("itinerary").get<std::string>();
    rec.converged = j.at("converged").get<bool>();
    rec.itinerary_mismatch = j.at("itinerary_mismatch").get<bool>();
    rec.residual_history = j.at("residual_history").get<std::vector<double>>();
    return rec;
}

}  // namespace lab
