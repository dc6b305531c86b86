#include "hypersolve/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hypersolve {
namespace {

void check_step_output(const Vec& v, double t) {
    if (!all_finite(v)) throw NumericalBlowup("non-finite vector field output", t);
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5.0, c3 = 3.0 / 10.0, c4 = 4.0 / 5.0, c5 = 8.0 / 9.0;
constexpr double a21 = 1.0 / 5.0;
constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                 a54 = -212.0 / 729.0;
constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                 a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                 b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
// 5th-minus-4th order error weights.
constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                 e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// Dense-output weights for the quartic continuous extension.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

struct DenseSegment {
    double t0, h;
    Vec r1, r2, r3, r4, r5;

    Vec eval(double t) const {
        const double s = (t - t0) / h;
        const double s1 = 1.0 - s;
        return r1 + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5)));
    }
};

double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double atol, double rtol) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sk = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        const double q = err[i] / sk;
        acc += q * q;
    }
    return std::sqrt(acc / static_cast<double>(err.size()));
}

double initial_step(const FieldFn& f, double t0, const Vec& y0, const Vec& f0, double t_end,
                    double atol, double rtol, long& nfe) {
    const double dir = t_end >= t0 ? 1.0 : -1.0;
    auto scaled_norm = [&](const Vec& v, const Vec& ref) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double sk = atol + rtol * std::abs(ref[i]);
            const double q = v[i] / sk;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(v.size()));
    };
    const double d0 = scaled_norm(y0, y0);
    const double d1n = scaled_norm(f0, y0);
    double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    h0 = std::min(h0, std::abs(t_end - t0));
    Vec y1 = y0 + dir * h0 * f0;
    Vec f1 = f(t0 + dir * h0, y1);
    ++nfe;
    const double d2 = scaled_norm(Vec(f1 - f0), y0) / h0;
    double h1;
    if (std::max(d1n, d2) <= 1e-15)
        h1 = std::max(1e-6, h0 * 1e-3);
    else
        h1 = std::pow(0.01 / std::max(d1n, d2), 0.2);
    return dir * std::min({100.0 * h0, h1, std::abs(t_end - t0)});
}

}  // namespace

std::string to_string(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::euler: return "euler";
        case SchemeKind::midpoint: return "midpoint";
        case SchemeKind::rk4: return "rk4";
    }
    throw InvalidInput("unknown scheme");
}

SchemeKind scheme_from_string(const std::string& s) {
    if (s == "euler") return SchemeKind::euler;
    if (s == "midpoint") return SchemeKind::midpoint;
    if (s == "rk4") return SchemeKind::rk4;
    throw InvalidInput("unknown solver scheme: " + s);
}

TimeGrid TimeGrid::from_span(double t0, double t_end, double eps) {
    require(eps > 0.0, "TimeGrid: eps must be positive");
    require(t_end > t0, "TimeGrid: t_end must exceed t0");
    TimeGrid g;
    g.t0 = t0;
    g.t_end = t_end;
    g.eps = eps;
    g.steps = std::max<long>(1, std::lround((t_end - t0) / eps));
    return g;
}

Vec fixed_step(SolverScheme scheme, const FieldFn& f, double t, const Vec& x, double eps) {
    require(eps > 0.0, "fixed_step: eps must be positive");
    switch (scheme.kind) {
        case SchemeKind::euler: {
            Vec k1 = f(t, x);
            check_step_output(k1, t);
            return x + eps * k1;
        }
        case SchemeKind::midpoint: {
            Vec k1 = f(t, x);
            check_step_output(k1, t);
            Vec k2 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k1));
            check_step_output(k2, t);
            return x + eps * k2;
        }
        case SchemeKind::rk4: {
            Vec k1 = f(t, x);
            check_step_output(k1, t);
            Vec k2 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k1));
            check_step_output(k2, t);
            Vec k3 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k2));
            check_step_output(k3, t);
            Vec k4 = f(t + eps, Vec(x + eps * k3));
            check_step_output(k4, t);
            return x + (eps / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    throw InvalidInput("unknown scheme");
}

Vec fixed_step(SolverScheme scheme, const DynamicsSpec& f, double t, const Vec& x, const Vec& u,
               double eps) {
    return fixed_step(
        scheme, [&](double, const Vec& xx) { return f.eval(xx, u); }, t, x, eps);
}

ReferenceSolution dopri5_solve(const FieldFn& f, const Vec& x0, double t0, double t_end,
                               const Dopri5Options& opts, std::span<const double> eval_times) {
    require(opts.rtol > 0.0 && opts.atol > 0.0, "dopri5: tolerances must be positive");
    require(t_end > t0, "dopri5: t_end must exceed t0");
    for (size_t i = 0; i < eval_times.size(); ++i) {
        require(eval_times[i] >= t0 - 1e-12 && eval_times[i] <= t_end + 1e-12,
                "dopri5: eval time outside span");
        if (i > 0) require(eval_times[i] >= eval_times[i - 1], "dopri5: eval times must be sorted");
    }

    ReferenceSolution out;
    out.times.assign(eval_times.begin(), eval_times.end());
    out.states.reserve(eval_times.size());

    double t = t0;
    Vec y = x0;
    Vec k1 = f(t, y);
    out.nfe = 1;
    check_step_output(k1, t);

    double h = opts.first_step > 0.0 ? opts.first_step
                                     : initial_step(f, t0, y, k1, t_end, opts.atol, opts.rtol, out.nfe);

    size_t next_eval = 0;
    auto emit_at_state = [&](double tt, const Vec& yy) {
        while (next_eval < eval_times.size() && std::abs(eval_times[next_eval] - tt) <= 1e-12) {
            out.states.push_back(yy);
            ++next_eval;
        }
    };
    emit_at_state(t, y);

    constexpr double safe = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
    const double expo1 = 0.2 - beta * 0.75;
    double facold = 1e-4;
    const double h_min = 1e-14 * std::max(1.0, std::abs(t_end - t0));

    long steps = 0;
    while (t < t_end - 1e-14 * std::max(1.0, std::abs(t_end))) {
        if (++steps > opts.max_steps)
            throw StiffnessError("dopri5: exceeded max step count", t);
        if (h < h_min) throw StiffnessError("dopri5: step size underflow", t);
        bool last = false;
        if (t + h >= t_end) {
            h = t_end - t;
            last = true;
        }

        Vec k2 = f(t + c2 * h, Vec(y + h * (a21 * k1)));
        Vec k3 = f(t + c3 * h, Vec(y + h * (a31 * k1 + a32 * k2)));
        Vec k4 = f(t + c4 * h, Vec(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
        Vec k5 = f(t + c5 * h, Vec(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
        Vec k6 = f(t + h, Vec(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
        Vec y1 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        Vec k7 = f(t + h, y1);
        out.nfe += 6;
        check_step_output(k7, t);
        if (!all_finite(y1)) throw NumericalBlowup("dopri5: non-finite state", t);

        Vec err_vec = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        const double err = error_norm(err_vec, y, y1, opts.atol, opts.rtol);

        if (err <= 1.0) {
            // accept
            ++out.accepted;
            DenseSegment seg;
            bool need_dense = next_eval < eval_times.size() &&
                              eval_times[next_eval] < t + h - 1e-12;
            if (need_dense) {
                seg.t0 = t;
                seg.h = h;
                seg.r1 = y;
                Vec ydiff = y1 - y;
                seg.r2 = ydiff;
                Vec bspl = h * k1 - ydiff;
                seg.r3 = bspl;
                seg.r4 = ydiff - h * k7 - bspl;
                seg.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            }
            while (next_eval < eval_times.size() && eval_times[next_eval] < t + h - 1e-12) {
                if (eval_times[next_eval] <= t + 1e-12)
                    out.states.push_back(y);
                else
                    out.states.push_back(seg.eval(eval_times[next_eval]));
                ++next_eval;
            }
            t += h;
            y = std::move(y1);
            k1 = std::move(k7);  // FSAL
            emit_at_state(t, y);
            if (last && t >= t_end - 1e-14) break;

            const double fac11 = std::pow(std::max(err, 1e-16), expo1);
            double fac = fac11 / std::pow(facold, beta);
            fac = std::max(1.0 / fac_max, std::min(1.0 / fac_min, fac / safe));
            h = h / fac;
            facold = std::max(err, 1e-4);
        } else {
            ++out.rejected;
            const double fac11 = std::pow(err, expo1);
            h = h / std::min(1.0 / fac_min, fac11 / safe);
        }
    }

    // Trailing eval times that equal t_end within tolerance.
    while (next_eval < eval_times.size() && eval_times[next_eval] >= t_end - 1e-12) {
        out.states.push_back(y);
        ++next_eval;
    }
    if (out.states.size() != out.times.size())
        throw InvalidInput("dopri5: internal dense-output bookkeeping mismatch");
    return out;
}

Vec dopri5_step_to(const FieldFn& f, const Vec& x, double t0, double t1, const Dopri5Options& opts,
                   long* nfe) {
    const double end[1] = {t1};
    ReferenceSolution sol = dopri5_solve(f, x, t0, t1, opts, std::span<const double>(end, 1));
    if (nfe) *nfe += sol.nfe;
    return sol.states.back();
}

Vec oracle_step(const OracleSpec& oracle, const DynamicsSpec& f, double t, const Vec& x,
                const Vec& u, double eps, long* nfe) {
    require(eps > 0.0, "oracle_step: eps must be positive");
    FieldFn field = [&](double, const Vec& xx) { return f.eval(xx, u); };
    switch (oracle.kind) {
        case OracleSpec::Kind::dopri5: {
            Dopri5Options opts;
            opts.rtol = oracle.rtol;
            opts.atol = oracle.atol;
            return dopri5_step_to(field, x, t, t + eps, opts, nfe);
        }
        case OracleSpec::Kind::rk4_substeps: {
            require(oracle.substeps >= 1, "oracle_step: substeps must be >= 1");
            const double h = eps / oracle.substeps;
            Vec y = x;
            for (int i = 0; i < oracle.substeps; ++i)
                y = fixed_step(SolverScheme::rk4(), field, t + i * h, y, h);
            if (nfe) *nfe += 4L * oracle.substeps;
            return y;
        }
    }
    throw InvalidInput("unknown oracle kind");
}

ResidualSample compute_residual(const DynamicsSpec& f, SolverScheme scheme, const Vec& phi_next,
                                double t, const Vec& x, const Vec& u, double eps) {
    require(eps > 0.0, "compute_residual: eps must be positive and nonzero");
    const int p = scheme.order();
    const Vec x_step = fixed_step(scheme, f, t, x, u, eps);
    const double scale = std::pow(eps, p + 1);
    ResidualSample s;
    s.t = t;
    s.x = x;
    s.u = u;
    s.residual = (phi_next - x_step) / scale;
    s.local_err = (phi_next - x_step).norm();
    return s;
}

Trajectory rollout(const DynamicsSpec& f, SolverScheme scheme, const Vec& x0,
                   const ControlSignal& controller, const TimeGrid& grid, ControlTiming timing) {
    Trajectory traj;
    traj.times.reserve(grid.steps + 1);
    traj.states.reserve(grid.steps + 1);
    traj.controls.reserve(grid.steps);
    traj.times.push_back(grid.t0);
    traj.states.push_back(x0);

    Vec x = x0;
    for (long k = 0; k < grid.steps; ++k) {
        const double t = grid.time_at(k);
        const Vec u_k = controller(t, x);
        FieldFn field;
        if (timing == ControlTiming::piecewise_constant) {
            field = [&](double, const Vec& xx) {
                ++traj.nfe_field;
                return f.eval(xx, u_k);
            };
        } else {
            field = [&](double tt, const Vec& xx) {
                ++traj.nfe_field;
                return f.eval(xx, controller(tt, xx));
            };
        }
        try {
            x = fixed_step(scheme, field, t, x, grid.eps);
        } catch (NumericalBlowup& e) {
            throw NumericalBlowup(e.what(), e.t, k);
        }
        traj.controls.push_back(u_k);
        traj.times.push_back(grid.time_at(k + 1));
        traj.states.push_back(x);
    }
    return traj;
}

double mae_of(std::span<const Vec> a, std::span<const Vec> b) {
    require(a.size() == b.size() && !a.empty(), "mae_of: size mismatch");
    double acc = 0.0;
    long n = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        acc += (a[i] - b[i]).cwiseAbs().sum();
        n += a[i].size();
    }
    return acc / static_cast<double>(n);
}

double smape_of(std::span<const Vec> a, std::span<const Vec> b) {
    require(a.size() == b.size() && !a.empty(), "smape_of: size mismatch");
    double acc = 0.0;
    long n = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        for (Eigen::Index j = 0; j < a[i].size(); ++j) {
            const double den = std::abs(a[i][j]) + std::abs(b[i][j]);
            if (den > 0.0) acc += 200.0 * std::abs(a[i][j] - b[i][j]) / den;
            ++n;
        }
    }
    return acc / static_cast<double>(n);
}

ErrorSummary global_error(const Trajectory& traj, const ReferenceSolution& ref) {
    require(traj.times.size() == ref.times.size(), "global_error: grid size mismatch");
    for (size_t i = 0; i < traj.times.size(); ++i)
        require(std::abs(traj.times[i] - ref.times[i]) <= 1e-9, "global_error: grid time mismatch");
    ErrorSummary summary;
    summary.global_errors.reserve(traj.times.size());
    for (size_t i = 0; i < traj.times.size(); ++i)
        summary.global_errors.push_back((ref.states[i] - traj.states[i]).norm());
    summary.mae = mae_of(ref.states, traj.states);
    summary.smape = smape_of(ref.states, traj.states);
    return summary;
}

}  // namespace hypersolve
