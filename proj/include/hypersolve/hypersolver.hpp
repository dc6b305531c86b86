#pragma once

#include "hypersolve/neural.hpp"
#include "hypersolve/solvers.hpp"

#include <variant>

namespace hypersolve {

// Correction networks see (x, u, f) in that order; the pre-evaluated vector
// field is reused as an input, costing no extra field evaluation. A time
// column can be appended for systems that need it (none of the built-in
// benchmarks do).
struct InputLayout {
    bool include_time = false;

    int expected_dim(int n_x, int n_u) const { return 2 * n_x + n_u + (include_time ? 1 : 0); }
};

Vec correction_input(const InputLayout& layout, double t, const Vec& x, const Vec& u,
                     const Vec& f_val);

// Base scheme plus an outer-stage network approximating the normalized
// one-step defect; the correction enters scaled by eps^{p+1}.
struct HypersolverSpec {
    SolverScheme base;
    MlpNet g_net;
    InputLayout layout{};
};

// Two-stage variant for partially-known dynamics: the inner stage corrects
// the vector field itself at every solver stage, the outer stage corrects the
// remaining one-step defect.
struct MultiStageSpec {
    SolverScheme base;
    MlpNet h_net;
    MlpNet g_net;
    InputLayout layout{};
};

// Any stepping rule usable in rollouts and controller optimization.
using Stepper = std::variant<SolverScheme, HypersolverSpec, MultiStageSpec>;

SolverScheme stepper_base(const Stepper& s);
std::string stepper_name(const Stepper& s);
// Correction-network evaluations per step (0 / 1 / base_nfe + 1).
long stepper_net_evals_per_step(const Stepper& s);
long stepper_net_flops_per_step(const Stepper& s);

struct StepCounters {
    long nfe_field = 0;
    long nfe_net = 0;
};

// One corrected step with u held constant: x + eps psi(t, x, u) +
// eps^{p+1} g(x, u, f).
Vec hyper_step(const HypersolverSpec& spec, const DynamicsSpec& f, double t, const Vec& x,
               const Vec& u, double eps, StepCounters* counters = nullptr);

// One two-stage step on partial dynamics: the base tableau iterates on
// f*(x, u) = f(x, u) + h(x, u, f), then the outer correction is added.
Vec multistage_step(const MultiStageSpec& spec, const DynamicsSpec& f_partial, double t,
                    const Vec& x, const Vec& u, double eps, StepCounters* counters = nullptr);

// Dispatch over the three stepper kinds.
Vec stepper_step(const Stepper& s, const DynamicsSpec& f, double t, const Vec& x, const Vec& u,
                 double eps, StepCounters* counters = nullptr);

// Rollout with any stepper; identical contract to solvers::rollout.
Trajectory rollout_stepper(const Stepper& s, const DynamicsSpec& f, const Vec& x0,
                           const ControlSignal& controller, const TimeGrid& grid,
                           ControlTiming timing = ControlTiming::piecewise_constant);

// Mean L2 distance between network output and frozen defect targets.
double residual_fitting_loss(const MlpNet& g_net, const InputLayout& layout, const DynamicsSpec& f,
                             std::span<const ResidualSample> samples);

// Mean L2 one-step trajectory mismatch; each prediction restarts from the
// exact reference state.
double trajectory_fitting_loss(const Stepper& stepper, const DynamicsSpec& f,
                               const ReferenceSolution& ref, const TimeGrid& grid,
                               std::span<const Vec> controls);

// Frozen one-step training sample: reference endpoint x_next for the step
// starting at (t, x) with constant control u.
struct OneStepSample {
    double t = 0.0;
    Vec x, u, x_next;
};

// --- tape builders used by pre-training and gradient checks ---

// Field on tape: (t, x) -> f-var.
using TapeField = std::function<Var(double, Var)>;

// Base increment psi such that x_next = x + eps * psi; optionally exposes the
// first-stage field evaluation for reuse as network input.
Var base_increment_tape(Tape& tape, SolverScheme scheme, const TapeField& field, double t, Var x,
                        double eps, Var* stage1_out = nullptr);

Var correction_input_tape(Tape& tape, const InputLayout& layout, double t, Var x, Var u, Var f_val);

Var residual_loss_tape(Tape& tape, const MlpNet& g_net, const MlpVars& g_vars,
                       const InputLayout& layout, const DynamicsSpec& f,
                       std::span<const ResidualSample> samples);

Var trajectory_loss_tape(Tape& tape, const HypersolverSpec& spec, const MlpVars& g_vars,
                         const DynamicsSpec& f, double eps, std::span<const OneStepSample> samples);

Var trajectory_loss_tape(Tape& tape, const MultiStageSpec& spec, const MlpVars& h_vars,
                         const MlpVars& g_vars, const DynamicsSpec& f_partial, double eps,
                         std::span<const OneStepSample> samples);

// One multistage step on tape (shared by the loss above and controller
// optimization; pass null var sets to freeze a stage).
Var multistage_step_tape(Tape& tape, const MultiStageSpec& spec, const MlpVars* h_vars,
                         const MlpVars* g_vars, const DynamicsSpec& f_partial, double t, Var x,
                         Var u, double eps);

}  // namespace hypersolve
