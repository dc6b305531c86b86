#include "hypersolve/hypersolver.hpp"

#include <cmath>

namespace hypersolve {
namespace {

// psi such that x_next = x + eps * psi; f1_out receives the first-stage field
// value.
Vec base_increment(SolverScheme scheme, const FieldFn& f, double t, const Vec& x, double eps,
                   Vec& f1_out, long& nfe) {
    Vec k1 = f(t, x);
    ++nfe;
    if (!all_finite(k1)) throw NumericalBlowup("non-finite vector field output", t);
    f1_out = k1;
    switch (scheme.kind) {
        case SchemeKind::euler: return k1;
        case SchemeKind::midpoint: {
            Vec k2 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k1));
            ++nfe;
            if (!all_finite(k2)) throw NumericalBlowup("non-finite vector field output", t);
            return k2;
        }
        case SchemeKind::rk4: {
            Vec k2 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k1));
            Vec k3 = f(t + 0.5 * eps, Vec(x + 0.5 * eps * k2));
            Vec k4 = f(t + eps, Vec(x + eps * k3));
            nfe += 3;
            Vec psi = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            if (!all_finite(psi)) throw NumericalBlowup("non-finite vector field output", t);
            return psi;
        }
    }
    throw InvalidInput("unknown scheme");
}

}  // namespace

Vec correction_input(const InputLayout& layout, double t, const Vec& x, const Vec& u,
                     const Vec& f_val) {
    Vec in(layout.expected_dim(static_cast<int>(x.size()), static_cast<int>(u.size())));
    in.head(x.size()) = x;
    in.segment(x.size(), u.size()) = u;
    in.segment(x.size() + u.size(), f_val.size()) = f_val;
    if (layout.include_time) in[in.size() - 1] = t;
    return in;
}

SolverScheme stepper_base(const Stepper& s) {
    if (const auto* fixed = std::get_if<SolverScheme>(&s)) return *fixed;
    if (const auto* hyper = std::get_if<HypersolverSpec>(&s)) return hyper->base;
    return std::get<MultiStageSpec>(s).base;
}

std::string stepper_name(const Stepper& s) {
    if (const auto* fixed = std::get_if<SolverScheme>(&s)) return to_string(fixed->kind);
    if (const auto* hyper = std::get_if<HypersolverSpec>(&s))
        return "hyper_" + to_string(hyper->base.kind);
    return "multistage_" + to_string(std::get<MultiStageSpec>(s).base.kind);
}

long stepper_net_evals_per_step(const Stepper& s) {
    if (std::holds_alternative<SolverScheme>(s)) return 0;
    if (std::holds_alternative<HypersolverSpec>(s)) return 1;
    return std::get<MultiStageSpec>(s).base.nfe_per_step() + 1;
}

long stepper_net_flops_per_step(const Stepper& s) {
    if (std::holds_alternative<SolverScheme>(s)) return 0;
    if (const auto* hyper = std::get_if<HypersolverSpec>(&s)) return hyper->g_net.flops_per_forward();
    const auto& ms = std::get<MultiStageSpec>(s);
    return ms.base.nfe_per_step() * ms.h_net.flops_per_forward() + ms.g_net.flops_per_forward();
}

Vec hyper_step(const HypersolverSpec& spec, const DynamicsSpec& f, double t, const Vec& x,
               const Vec& u, double eps, StepCounters* counters) {
    require(eps > 0.0, "hyper_step: eps must be positive");
    long nfe = 0;
    Vec f1;
    FieldFn field = [&](double, const Vec& xx) { return f.eval(xx, u); };
    const Vec psi = base_increment(spec.base, field, t, x, eps, f1, nfe);
    const Vec g = spec.g_net.forward(correction_input(spec.layout, t, x, u, f1));
    if (counters) {
        counters->nfe_field += nfe;
        counters->nfe_net += 1;
    }
    const double scale = std::pow(eps, spec.base.order() + 1);
    Vec out = x + eps * psi + scale * g;
    if (!all_finite(out)) throw NumericalBlowup("hyper_step: non-finite state", t);
    return out;
}

Vec multistage_step(const MultiStageSpec& spec, const DynamicsSpec& f_partial, double t,
                    const Vec& x, const Vec& u, double eps, StepCounters* counters) {
    require(eps > 0.0, "multistage_step: eps must be positive");
    long nfe = 0;
    long net_evals = 0;
    Vec f1;  // first-stage partial field, reused as outer-stage input
    bool first_stage = true;
    FieldFn corrected = [&](double tt, const Vec& xx) {
        Vec fv = f_partial.eval(xx, u);
        Vec h = spec.h_net.forward(correction_input(spec.layout, tt, xx, u, fv));
        ++net_evals;
        if (first_stage) {
            f1 = fv;
            first_stage = false;
        }
        return Vec(fv + h);
    };
    Vec corrected_stage1;
    const Vec psi = base_increment(spec.base, corrected, t, x, eps, corrected_stage1, nfe);
    const Vec g = spec.g_net.forward(correction_input(spec.layout, t, x, u, f1));
    ++net_evals;
    if (counters) {
        counters->nfe_field += nfe;
        counters->nfe_net += net_evals;
    }
    const double scale = std::pow(eps, spec.base.order() + 1);
    Vec out = x + eps * psi + scale * g;
    if (!all_finite(out)) throw NumericalBlowup("multistage_step: non-finite state", t);
    return out;
}

Vec stepper_step(const Stepper& s, const DynamicsSpec& f, double t, const Vec& x, const Vec& u,
                 double eps, StepCounters* counters) {
    if (const auto* fixed = std::get_if<SolverScheme>(&s)) {
        long nfe = 0;
        Vec f1;
        FieldFn field = [&](double, const Vec& xx) { return f.eval(xx, u); };
        const Vec psi = base_increment(*fixed, field, t, x, eps, f1, nfe);
        if (counters) counters->nfe_field += nfe;
        return x + eps * psi;
    }
    if (const auto* hyper = std::get_if<HypersolverSpec>(&s))
        return hyper_step(*hyper, f, t, x, u, eps, counters);
    return multistage_step(std::get<MultiStageSpec>(s), f, t, x, u, eps, counters);
}

Trajectory rollout_stepper(const Stepper& s, const DynamicsSpec& f, const Vec& x0,
                           const ControlSignal& controller, const TimeGrid& grid,
                           ControlTiming timing) {
    if (std::holds_alternative<SolverScheme>(s) && timing == ControlTiming::continuous)
        return rollout(f, std::get<SolverScheme>(s), x0, controller, grid, timing);

    Trajectory traj;
    traj.times.push_back(grid.t0);
    traj.states.push_back(x0);
    Vec x = x0;
    StepCounters counters;
    for (long k = 0; k < grid.steps; ++k) {
        const double t = grid.time_at(k);
        const Vec u_k = controller(t, x);
        try {
            if (timing == ControlTiming::continuous) {
                // Corrected steppers with stage-continuous control: rebind u
                // at every stage through a wrapped field, keeping the
                // correction input at the step-start control.
                if (const auto* hyper = std::get_if<HypersolverSpec>(&s)) {
                    long nfe = 0;
                    Vec f1;
                    FieldFn field = [&](double tt, const Vec& xx) {
                        return f.eval(xx, controller(tt, xx));
                    };
                    const Vec psi = base_increment(hyper->base, field, t, x, grid.eps, f1, nfe);
                    const Vec g = hyper->g_net.forward(correction_input(hyper->layout, t, x, u_k, f1));
                    counters.nfe_field += nfe;
                    counters.nfe_net += 1;
                    x = x + grid.eps * psi + std::pow(grid.eps, hyper->base.order() + 1) * g;
                    if (!all_finite(x)) throw NumericalBlowup("rollout: non-finite state", t, k);
                } else {
                    x = stepper_step(s, f, t, x, u_k, grid.eps, &counters);
                }
            } else {
                x = stepper_step(s, f, t, x, u_k, grid.eps, &counters);
            }
        } catch (NumericalBlowup& e) {
            throw NumericalBlowup(e.what(), e.t, k);
        }
        traj.controls.push_back(u_k);
        traj.times.push_back(grid.time_at(k + 1));
        traj.states.push_back(x);
    }
    traj.nfe_field = counters.nfe_field;
    traj.nfe_net = counters.nfe_net;
    return traj;
}

double residual_fitting_loss(const MlpNet& g_net, const InputLayout& layout, const DynamicsSpec& f,
                             std::span<const ResidualSample> samples) {
    require(!samples.empty(), "residual_fitting_loss: empty batch");
    double acc = 0.0;
    for (const auto& s : samples) {
        const Vec f_val = f.eval(s.x, s.u);
        const Vec g = g_net.forward(correction_input(layout, s.t, s.x, s.u, f_val));
        acc += (s.residual - g).norm();
    }
    return acc / static_cast<double>(samples.size());
}

double trajectory_fitting_loss(const Stepper& stepper, const DynamicsSpec& f,
                               const ReferenceSolution& ref, const TimeGrid& grid,
                               std::span<const Vec> controls) {
    require(ref.states.size() == static_cast<size_t>(grid.steps) + 1,
            "trajectory_fitting_loss: reference/grid mismatch");
    require(controls.size() == static_cast<size_t>(grid.steps),
            "trajectory_fitting_loss: controls/grid mismatch");
    double acc = 0.0;
    for (long k = 0; k < grid.steps; ++k) {
        const Vec pred =
            stepper_step(stepper, f, grid.time_at(k), ref.states[k], controls[k], grid.eps);
        acc += (ref.states[k + 1] - pred).norm();
    }
    return acc / static_cast<double>(grid.steps);
}

// --- tape builders ---

Var base_increment_tape(Tape& tape, SolverScheme scheme, const TapeField& field, double t, Var x,
                        double eps, Var* stage1_out) {
    Var k1 = field(t, x);
    if (stage1_out) *stage1_out = k1;
    switch (scheme.kind) {
        case SchemeKind::euler: return k1;
        case SchemeKind::midpoint: {
            Var mid = tape.add_scaled(x, 0.5 * eps, k1);
            return field(t + 0.5 * eps, mid);
        }
        case SchemeKind::rk4: {
            Var k2 = field(t + 0.5 * eps, tape.add_scaled(x, 0.5 * eps, k1));
            Var k3 = field(t + 0.5 * eps, tape.add_scaled(x, 0.5 * eps, k2));
            Var k4 = field(t + eps, tape.add_scaled(x, eps, k3));
            Var acc = tape.add_scaled(k1, 2.0, k2);
            acc = tape.add_scaled(acc, 2.0, k3);
            acc = tape.add(acc, k4);
            return tape.scale(acc, 1.0 / 6.0);
        }
    }
    throw InvalidInput("unknown scheme");
}

Var correction_input_tape(Tape& tape, const InputLayout& layout, double t, Var x, Var u,
                          Var f_val) {
    if (layout.include_time)
        return tape.concat({x, u, f_val, tape.constant_scalar(t)});
    return tape.concat({x, u, f_val});
}

Var residual_loss_tape(Tape& tape, const MlpNet& g_net, const MlpVars& g_vars,
                       const InputLayout& layout, const DynamicsSpec& f,
                       std::span<const ResidualSample> samples) {
    require(!samples.empty(), "residual_loss_tape: empty batch");
    std::vector<Var> terms;
    terms.reserve(samples.size());
    for (const auto& s : samples) {
        const Vec f_val = f.eval(s.x, s.u);
        Var in = tape.constant(correction_input(layout, s.t, s.x, s.u, f_val));
        Var g = apply_net(tape, g_net, g_vars, in);
        Var diff = tape.sub(tape.constant(s.residual), g);
        terms.push_back(tape.norm2(diff));
    }
    return tape.mean(terms);
}

Var trajectory_loss_tape(Tape& tape, const HypersolverSpec& spec, const MlpVars& g_vars,
                         const DynamicsSpec& f, double eps, std::span<const OneStepSample> samples) {
    require(!samples.empty(), "trajectory_loss_tape: empty batch");
    const double scale = std::pow(eps, spec.base.order() + 1);
    std::vector<Var> terms;
    terms.reserve(samples.size());
    for (const auto& s : samples) {
        // The base increment does not depend on the trainable correction, so
        // it enters as a frozen constant.
        long nfe = 0;
        Vec f1;
        FieldFn field = [&](double, const Vec& xx) { return f.eval(xx, s.u); };
        const Vec psi = base_increment(spec.base, field, s.t, s.x, eps, f1, nfe);
        Var in = tape.constant(correction_input(spec.layout, s.t, s.x, s.u, f1));
        Var g = apply_net(tape, spec.g_net, g_vars, in);
        Var pred = tape.add_scaled(tape.constant(s.x + eps * psi), scale, g);
        Var diff = tape.sub(tape.constant(s.x_next), pred);
        terms.push_back(tape.norm2(diff));
    }
    return tape.mean(terms);
}

Var multistage_step_tape(Tape& tape, const MultiStageSpec& spec, const MlpVars* h_vars,
                         const MlpVars* g_vars, const DynamicsSpec& f_partial, double t, Var x,
                         Var u, double eps) {
    Var f1{};
    TapeField corrected = [&](double tt, Var xx) {
        Var fv = tape.dynamics_eval(&f_partial, xx, u);
        Var in = correction_input_tape(tape, spec.layout, tt, xx, u, fv);
        Var h = h_vars ? apply_net(tape, spec.h_net, *h_vars, in)
                       : apply_net_const(tape, spec.h_net, in);
        if (!f1.valid()) f1 = fv;
        return tape.add(fv, h);
    };
    Var psi = base_increment_tape(tape, spec.base, corrected, t, x, eps, nullptr);
    Var g_in = correction_input_tape(tape, spec.layout, t, x, u, f1);
    Var g = g_vars ? apply_net(tape, spec.g_net, *g_vars, g_in)
                   : apply_net_const(tape, spec.g_net, g_in);
    Var step = tape.add_scaled(x, eps, psi);
    return tape.add_scaled(step, std::pow(eps, spec.base.order() + 1), g);
}

Var trajectory_loss_tape(Tape& tape, const MultiStageSpec& spec, const MlpVars& h_vars,
                         const MlpVars& g_vars, const DynamicsSpec& f_partial, double eps,
                         std::span<const OneStepSample> samples) {
    require(!samples.empty(), "trajectory_loss_tape: empty batch");
    std::vector<Var> terms;
    terms.reserve(samples.size());
    for (const auto& s : samples) {
        Var x = tape.constant(s.x);
        Var u = tape.constant(s.u);
        Var pred = multistage_step_tape(tape, spec, &h_vars, &g_vars, f_partial, s.t, x, u, eps);
        Var diff = tape.sub(tape.constant(s.x_next), pred);
        terms.push_back(tape.norm2(diff));
    }
    return tape.mean(terms);
}

}  // namespace hypersolve
