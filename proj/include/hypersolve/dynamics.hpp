#pragma once

#include "hypersolve/common.hpp"

#include <Eigen/Geometry>

#include <optional>
#include <string>

namespace hypersolve {

// Controlled vector fields x' = f(x, u) for the benchmark systems. All fields
// are time-invariant; t never enters the evaluation.

struct SpringMassParams {
    double m = 1.0;  // mass [kg]
    double k = 0.5;  // stiffness [N/m]
};

struct PendulumParams {
    double m = 1.0;     // mass [kg]
    double k = 0.5;     // torsional stiffness [N/rad]
    double l = 1.0;     // length [m]
    double beta = 0.01; // damping [N s/rad]
    double g = 9.81;    // gravity [m/s^2]
};

struct CartPoleParams {
    double m_c = 1.0;   // cart mass [kg]
    double m_p = 0.1;   // pole mass [kg]
    double l = 0.5;     // half pole length [m]
    double g = 9.81;    // gravity [m/s^2]
    double mu_c = 0.0;  // cart-track friction coefficient
    double mu_p = 0.0;  // pole-pivot friction coefficient
};

// Crazyflie-class defaults; the rotation convention is Z-Y-X intrinsic Euler
// angles and the motors sit in an X configuration (see README).
struct QuadcopterParams {
    double m = 0.027;      // mass [kg]
    double l = 0.0397;     // arm length [m]
    double g = 9.81;       // gravity [m/s^2]
    double k_F = 3.16e-10; // thrust coefficient [N/rpm^2]
    double k_T = 7.94e-12; // torque coefficient [N m/rpm^2]
    Eigen::Matrix3d J = (Eigen::Vector3d(1.4e-5, 1.4e-5, 2.17e-5)).asDiagonal();

    double hover_speed() const;  // motor speed with thrust = weight [rpm]
};

struct LinearSystem {
    Mat A;  // n_x x n_x
    Mat B;  // n_x x n_u
};

enum class DynamicsKind {
    spring_mass,
    pendulum,
    cartpole_full,
    cartpole_partial,
    quadcopter,
    linear,
};

std::string to_string(DynamicsKind kind);
DynamicsKind dynamics_kind_from_string(const std::string& s);

struct DynamicsSpec {
    DynamicsKind kind = DynamicsKind::spring_mass;
    SpringMassParams spring_mass{};
    PendulumParams pendulum{};
    CartPoleParams cartpole{};
    QuadcopterParams quadcopter{};
    LinearSystem linear{};
    // Optional per-entry closed control intervals, rows of (lo, hi).
    std::optional<Mat> control_bounds;

    int state_dim() const;
    int control_dim() const;

    // f(x, u); throws InvalidInput on dimension mismatch.
    Vec eval(const Vec& x, const Vec& u) const;

    // Exact Jacobians df/dx (n_x x n_x) and df/du (n_x x n_u).
    void eval_jacobians(const Vec& x, const Vec& u, Mat& jx, Mat& ju) const;

    // Element-wise batched evaluation; bitwise identical to a scalar loop.
    std::vector<Vec> eval_batched(std::span<const Vec> states, std::span<const Vec> controls) const;

    static DynamicsSpec spring(SpringMassParams p = {});
    static DynamicsSpec pend(PendulumParams p = {});
    static DynamicsSpec cartpole_with_friction(CartPoleParams p);
    static DynamicsSpec cartpole_frictionless(CartPoleParams p = {});
    static DynamicsSpec quad(QuadcopterParams p = {});
    static DynamicsSpec linear_system(LinearSystem sys);
};

// Standalone evaluators (the spec-level operations; DynamicsSpec::eval routes
// through these).
Vec eval_spring_mass(const Vec& x, const Vec& u, const SpringMassParams& p);
Vec eval_pendulum(const Vec& x, const Vec& u, const PendulumParams& p);
Vec eval_cartpole(const Vec& x, const Vec& u, const CartPoleParams& p);
Vec eval_quadcopter(const Vec& x, const Vec& u, const QuadcopterParams& p);
Vec eval_linear(const Vec& x, const Vec& u, const LinearSystem& sys);

// Plain-text matrix file: header "n_x n_u", then n_x rows of A and n_x rows
// of B, whitespace-separated decimals.
LinearSystem load_linear_system(const std::string& path);
void save_linear_system(const LinearSystem& sys, const std::string& path);

// Structured stand-in for the clamped-beam boundary-control experiment: a
// skew-adjoint first-order finite-difference discretization with two boundary
// inputs (force and torque at the free end). State layout is
// [v_t, v_r, sigma_t, sigma_r], each block `elements` wide.
LinearSystem make_beam_standin(int elements);

}  // namespace hypersolve
