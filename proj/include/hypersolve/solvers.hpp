#pragma once

#include "hypersolve/common.hpp"
#include "hypersolve/dynamics.hpp"

#include <functional>

namespace hypersolve {

enum class SchemeKind { euler, midpoint, rk4 };

struct SolverScheme {
    SchemeKind kind = SchemeKind::euler;

    int order() const {
        switch (kind) {
            case SchemeKind::euler: return 1;
            case SchemeKind::midpoint: return 2;
            case SchemeKind::rk4: return 4;
        }
        throw InvalidInput("unknown scheme");
    }
    int nfe_per_step() const {
        switch (kind) {
            case SchemeKind::euler: return 1;
            case SchemeKind::midpoint: return 2;
            case SchemeKind::rk4: return 4;
        }
        throw InvalidInput("unknown scheme");
    }

    static SolverScheme euler() { return {SchemeKind::euler}; }
    static SolverScheme midpoint() { return {SchemeKind::midpoint}; }
    static SolverScheme rk4() { return {SchemeKind::rk4}; }
};

std::string to_string(SchemeKind kind);
SchemeKind scheme_from_string(const std::string& s);

struct TimeGrid {
    double t0 = 0.0;
    double t_end = 1.0;
    double eps = 0.1;  // step size
    long steps = 10;   // K

    static TimeGrid from_span(double t0, double t_end, double eps);
    double time_at(long k) const { return t0 + static_cast<double>(k) * eps; }
};

// A vector field with the control already bound: t, x -> dx/dt.
using FieldFn = std::function<Vec(double, const Vec&)>;

// One explicit fixed step of the scheme. The field is evaluated at internal
// stages as the tableau requires; blowups are reported with the step's start
// time.
Vec fixed_step(SolverScheme scheme, const FieldFn& f, double t, const Vec& x, double eps);

// Convenience overload with a constant control held across internal stages.
Vec fixed_step(SolverScheme scheme, const DynamicsSpec& f, double t, const Vec& x, const Vec& u,
               double eps);

struct Dopri5Options {
    double rtol = 1e-7;
    double atol = 1e-7;
    double first_step = 0.0;  // 0 = automatic
    long max_steps = 1000000;
};

struct ReferenceSolution {
    std::vector<double> times;  // requested evaluation times
    std::vector<Vec> states;    // dense-output states at those times
    long nfe = 0;
    long accepted = 0;
    long rejected = 0;
};

// Adaptive Dormand-Prince 5(4) with PI step-size control and the classic
// quartic dense output. States at `eval_times` (must be nondecreasing and
// inside [t0, t_end]) are interpolated from accepted steps.
ReferenceSolution dopri5_solve(const FieldFn& f, const Vec& x0, double t0, double t_end,
                               const Dopri5Options& opts, std::span<const double> eval_times);

// Endpoint-only helper.
Vec dopri5_step_to(const FieldFn& f, const Vec& x, double t0, double t1, const Dopri5Options& opts,
                   long* nfe = nullptr);

struct ResidualSample {
    double t = 0.0;
    Vec x;         // state the step started from
    Vec u;         // control held over the step
    Vec residual;  // normalized one-step defect R
    double local_err = 0.0;   // ||eps^{p+1} R||_2
    double global_err = 0.0;  // filled by trajectory-level diagnostics
};

// Which reference propagator generates ground-truth one-step solutions.
struct OracleSpec {
    enum class Kind { dopri5, rk4_substeps };
    Kind kind = Kind::dopri5;
    double rtol = 1e-7;
    double atol = 1e-7;
    int substeps = 100;  // for rk4_substeps

    static OracleSpec dopri(double rtol = 1e-7, double atol = 1e-7) {
        return {Kind::dopri5, rtol, atol, 0};
    }
    static OracleSpec rk4_substeps_oracle(int substeps) {
        return {Kind::rk4_substeps, 0.0, 0.0, substeps};
    }
};

// Ground-truth state at t + eps starting from x with constant control u.
Vec oracle_step(const OracleSpec& oracle, const DynamicsSpec& f, double t, const Vec& x,
                const Vec& u, double eps, long* nfe = nullptr);

// Normalized one-step defect of the base scheme against a reference endpoint
// phi_next (the exact solution at t + eps started from x).
ResidualSample compute_residual(const DynamicsSpec& f, SolverScheme scheme, const Vec& phi_next,
                                double t, const Vec& x, const Vec& u, double eps);

struct Trajectory {
    std::vector<double> times;   // K+1 entries
    std::vector<Vec> states;     // K+1 entries
    std::vector<Vec> controls;   // K entries (as applied at step starts)
    long nfe_field = 0;          // base vector-field evaluations
    long nfe_net = 0;            // correction-network evaluations
};

// How the control signal enters a rollout: held constant over each step, or
// re-evaluated at every internal solver stage.
enum class ControlTiming { piecewise_constant, continuous };

using ControlSignal = std::function<Vec(double, const Vec&)>;

Trajectory rollout(const DynamicsSpec& f, SolverScheme scheme, const Vec& x0,
                   const ControlSignal& controller, const TimeGrid& grid,
                   ControlTiming timing = ControlTiming::piecewise_constant);

struct ErrorSummary {
    std::vector<double> global_errors;  // ||x(t_k) - x_k||_2 per grid point
    double mae = 0.0;                   // mean absolute componentwise error
    double smape = 0.0;                 // symmetric mean absolute percentage error, in [0, 200]
};

// Per-step global truncation errors of a trajectory against a reference
// solution sampled on the same grid.
ErrorSummary global_error(const Trajectory& traj, const ReferenceSolution& ref);

double mae_of(std::span<const Vec> a, std::span<const Vec> b);
double smape_of(std::span<const Vec> a, std::span<const Vec> b);

}  // namespace hypersolve
