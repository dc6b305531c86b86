#include "hypersolve/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace hypersolve {
namespace {

// Minimal forward-mode dual scalar: value plus one directional derivative.
// Used to extract machine-exact Jacobians of the nonlinear fields, one input
// direction per pass.
struct Dual {
    double v = 0.0;
    double d = 0.0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
    const double inv = 1.0 / b.v;
    return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}
inline Dual operator+(double a, Dual b) { return {a + b.v, b.d}; }
inline Dual operator+(Dual a, double b) { return {a.v + b, a.d}; }
inline Dual operator-(double a, Dual b) { return {a - b.v, -b.d}; }
inline Dual operator-(Dual a, double b) { return {a.v - b, a.d}; }
inline Dual operator*(double a, Dual b) { return {a * b.v, a * b.d}; }
inline Dual operator*(Dual a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator/(Dual a, double b) { return {a.v / b, a.d / b}; }
inline Dual operator/(double a, Dual b) {
    const double inv = 1.0 / b.v;
    return {a * inv, -a * b.d * inv * inv};
}
inline Dual sin(Dual a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(Dual a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }

// sgn with sgn(0) := 0; derivative treated as 0 everywhere.
inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
inline Dual sgn(Dual x) { return {sgn(x.v), 0.0}; }

inline double value_of(double x) { return x; }
inline double value_of(Dual x) { return x.v; }

template <class S>
void spring_mass_f(const S* x, const S* u, const SpringMassParams& p, S* out) {
    out[0] = x[1] / p.m;
    out[1] = -p.k * x[0] + u[0];
}

template <class S>
void pendulum_f(const S* x, const S* u, const PendulumParams& p, S* out) {
    out[0] = x[1] / p.m;
    out[1] = -p.k * x[0] - (p.beta / p.m) * x[1] - p.m * p.g * p.l * sin(x[0]) + u[0];
}

// Full cart-pole model with track and pivot friction. The normal force is
// taken positive, so sgn(N_c xdot) reduces to sgn(xdot); the angular
// acceleration is then independent of N_c and is computed first.
template <class S>
void cartpole_f(const S* x, const S* u, const CartPoleParams& p, S* out) {
    const double mtot = p.m_c + p.m_p;
    const S xdot = x[1];
    const S th = x[2];
    const S thdot = x[3];
    const S sth = sin(th);
    const S cth = cos(th);
    const S sg = sgn(xdot);

    const S inner =
        (-u[0] - p.m_p * p.l * thdot * thdot * (sth + p.mu_c * sg * cth)) / mtot + p.mu_c * p.g * sg;
    const S num = p.g * sth + cth * inner - (p.mu_p / (p.m_p * p.l)) * thdot;
    const S den = p.l * (4.0 / 3.0 - (p.m_p / mtot) * cth * (cth - p.mu_c * sg));
    const S thacc = num / den;

    const S n_c = mtot * p.g - p.m_p * p.l * (thacc * sth + thdot * thdot * cth);
    const S xacc = (u[0] + p.m_p * p.l * (thdot * thdot * sth - thacc * cth) - p.mu_c * n_c * sg) / mtot;

    out[0] = xdot;
    out[1] = xacc;
    out[2] = thdot;
    out[3] = thacc;
}

// Rigid-body quadcopter. State: positions (3), linear velocities (3), Euler
// angles phi/theta/psi (3), angular rates (3). Controls: motor speeds [rpm].
// X configuration: thrusts F_i = k_F w_i^2, arms at 45 degrees from the body
// axes, rotor spin pattern (-,+,-,+):
//   tau_x = (l/sqrt2) (F0 + F1 - F2 - F3)
//   tau_y = (l/sqrt2) (-F0 + F1 + F2 - F3)
//   tau_z = k_T (-w0^2 + w1^2 - w2^2 + w3^2)
template <class S>
void quadcopter_f(const S* x, const S* u, const QuadcopterParams& p, S* out) {
    const S phi = x[6], theta = x[7], psi = x[8];
    const S cphi = cos(phi), sphi = sin(phi);
    const S cth = cos(theta), sth = sin(theta);
    const S cpsi = cos(psi), spsi = sin(psi);

    S w2[4];
    for (int i = 0; i < 4; ++i) w2[i] = u[i] * u[i];
    const S thrust = p.k_F * (w2[0] + w2[1] + w2[2] + w2[3]);

    // Third column of R = Rz(psi) Ry(theta) Rx(phi); thrust acts along body z.
    const S r02 = cpsi * sth * cphi + spsi * sphi;
    const S r12 = spsi * sth * cphi - cpsi * sphi;
    const S r22 = cth * cphi;

    out[0] = x[3];
    out[1] = x[4];
    out[2] = x[5];
    out[3] = r02 * thrust / p.m;
    out[4] = r12 * thrust / p.m;
    out[5] = r22 * thrust / p.m - p.g;

    const double arm = p.l / std::sqrt(2.0);
    S tau[3];
    tau[0] = arm * p.k_F * (w2[0] + w2[1] - w2[2] - w2[3]);
    tau[1] = arm * p.k_F * (-w2[0] + w2[1] + w2[2] - w2[3]);
    tau[2] = p.k_T * (-w2[0] + w2[1] - w2[2] + w2[3]);

    const S wx = x[9], wy = x[10], wz = x[11];
    out[6] = wx;
    out[7] = wy;
    out[8] = wz;

    // J w and w x (J w)
    S jw[3];
    for (int r = 0; r < 3; ++r)
        jw[r] = p.J(r, 0) * wx + p.J(r, 1) * wy + p.J(r, 2) * wz;
    S gyro[3];
    gyro[0] = wy * jw[2] - wz * jw[1];
    gyro[1] = wz * jw[0] - wx * jw[2];
    gyro[2] = wx * jw[1] - wy * jw[0];

    const Eigen::Matrix3d jinv = p.J.inverse();
    for (int r = 0; r < 3; ++r)
        out[9 + r] = jinv(r, 0) * (tau[0] - gyro[0]) + jinv(r, 1) * (tau[1] - gyro[1]) +
                     jinv(r, 2) * (tau[2] - gyro[2]);
}

// Generic dual-pass Jacobian for the templated fields.
template <class Params, template <class> class Field>
void jacobians_by_duals(const Vec& x, const Vec& u, const Params& p, int n_x, int n_u, Mat& jx,
                        Mat& ju) {
    std::vector<Dual> xs(n_x), us(n_u), out(n_x);
    for (int i = 0; i < n_x; ++i) xs[i] = {x[i], 0.0};
    for (int i = 0; i < n_u; ++i) us[i] = {u[i], 0.0};
    jx.resize(n_x, n_x);
    ju.resize(n_x, n_u);
    for (int j = 0; j < n_x + n_u; ++j) {
        if (j < n_x)
            xs[j].d = 1.0;
        else
            us[j - n_x].d = 1.0;
        Field<Dual>::eval(xs.data(), us.data(), p, out.data());
        for (int i = 0; i < n_x; ++i) {
            if (j < n_x)
                jx(i, j) = out[i].d;
            else
                ju(i, j - n_x) = out[i].d;
        }
        if (j < n_x)
            xs[j].d = 0.0;
        else
            us[j - n_x].d = 0.0;
    }
}

template <class S>
struct SpringField {
    static void eval(const S* x, const S* u, const SpringMassParams& p, S* o) {
        spring_mass_f(x, u, p, o);
    }
};
template <class S>
struct PendulumField {
    static void eval(const S* x, const S* u, const PendulumParams& p, S* o) { pendulum_f(x, u, p, o); }
};
template <class S>
struct CartPoleField {
    static void eval(const S* x, const S* u, const CartPoleParams& p, S* o) { cartpole_f(x, u, p, o); }
};
template <class S>
struct QuadField {
    static void eval(const S* x, const S* u, const QuadcopterParams& p, S* o) {
        quadcopter_f(x, u, p, o);
    }
};

void check_dims(const Vec& x, const Vec& u, int n_x, int n_u, const char* name) {
    if (x.size() != n_x || u.size() != n_u) {
        std::ostringstream oss;
        oss << name << ": expected state/control dims (" << n_x << ", " << n_u << "), got ("
            << x.size() << ", " << u.size() << ")";
        throw InvalidInput(oss.str());
    }
}

}  // namespace

double QuadcopterParams::hover_speed() const { return std::sqrt(m * g / (4.0 * k_F)); }

std::string to_string(DynamicsKind kind) {
    switch (kind) {
        case DynamicsKind::spring_mass: return "spring_mass";
        case DynamicsKind::pendulum: return "pendulum";
        case DynamicsKind::cartpole_full: return "cartpole_full";
        case DynamicsKind::cartpole_partial: return "cartpole_partial";
        case DynamicsKind::quadcopter: return "quadcopter";
        case DynamicsKind::linear: return "linear";
    }
    throw InvalidInput("unknown dynamics kind");
}

DynamicsKind dynamics_kind_from_string(const std::string& s) {
    if (s == "spring_mass") return DynamicsKind::spring_mass;
    if (s == "pendulum") return DynamicsKind::pendulum;
    if (s == "cartpole_full") return DynamicsKind::cartpole_full;
    if (s == "cartpole_partial") return DynamicsKind::cartpole_partial;
    if (s == "quadcopter") return DynamicsKind::quadcopter;
    if (s == "linear") return DynamicsKind::linear;
    throw InvalidInput("unknown dynamics kind: " + s);
}

Vec eval_spring_mass(const Vec& x, const Vec& u, const SpringMassParams& p) {
    check_dims(x, u, 2, 1, "eval_spring_mass");
    Vec out(2);
    spring_mass_f(x.data(), u.data(), p, out.data());
    return out;
}

Vec eval_pendulum(const Vec& x, const Vec& u, const PendulumParams& p) {
    check_dims(x, u, 2, 1, "eval_pendulum");
    Vec out(2);
    pendulum_f(x.data(), u.data(), p, out.data());
    return out;
}

Vec eval_cartpole(const Vec& x, const Vec& u, const CartPoleParams& p) {
    check_dims(x, u, 4, 1, "eval_cartpole");
    Vec out(4);
    cartpole_f(x.data(), u.data(), p, out.data());
    return out;
}

Vec eval_quadcopter(const Vec& x, const Vec& u, const QuadcopterParams& p) {
    check_dims(x, u, 12, 4, "eval_quadcopter");
    for (int i = 0; i < 4; ++i)
        if (u[i] < 0.0) throw InvalidInput("eval_quadcopter: negative motor speed");
    Vec out(12);
    quadcopter_f(x.data(), u.data(), p, out.data());
    return out;
}

Vec eval_linear(const Vec& x, const Vec& u, const LinearSystem& sys) {
    if (x.size() != sys.A.cols() || u.size() != sys.B.cols() || sys.A.rows() != sys.B.rows())
        throw InvalidInput("eval_linear: inconsistent dimensions");
    return sys.A * x + sys.B * u;
}

int DynamicsSpec::state_dim() const {
    switch (kind) {
        case DynamicsKind::spring_mass:
        case DynamicsKind::pendulum: return 2;
        case DynamicsKind::cartpole_full:
        case DynamicsKind::cartpole_partial: return 4;
        case DynamicsKind::quadcopter: return 12;
        case DynamicsKind::linear: return static_cast<int>(linear.A.rows());
    }
    throw InvalidInput("unknown dynamics kind");
}

int DynamicsSpec::control_dim() const {
    switch (kind) {
        case DynamicsKind::spring_mass:
        case DynamicsKind::pendulum: return 1;
        case DynamicsKind::cartpole_full:
        case DynamicsKind::cartpole_partial: return 1;
        case DynamicsKind::quadcopter: return 4;
        case DynamicsKind::linear: return static_cast<int>(linear.B.cols());
    }
    throw InvalidInput("unknown dynamics kind");
}

Vec DynamicsSpec::eval(const Vec& x, const Vec& u) const {
    switch (kind) {
        case DynamicsKind::spring_mass: return eval_spring_mass(x, u, spring_mass);
        case DynamicsKind::pendulum: return eval_pendulum(x, u, pendulum);
        case DynamicsKind::cartpole_full:
        case DynamicsKind::cartpole_partial: return eval_cartpole(x, u, cartpole);
        case DynamicsKind::quadcopter: return eval_quadcopter(x, u, quadcopter);
        case DynamicsKind::linear: return eval_linear(x, u, linear);
    }
    throw InvalidInput("unknown dynamics kind");
}

void DynamicsSpec::eval_jacobians(const Vec& x, const Vec& u, Mat& jx, Mat& ju) const {
    check_dims(x, u, state_dim(), control_dim(), "eval_jacobians");
    switch (kind) {
        case DynamicsKind::spring_mass:
            jacobians_by_duals<SpringMassParams, SpringField>(x, u, spring_mass, 2, 1, jx, ju);
            return;
        case DynamicsKind::pendulum:
            jacobians_by_duals<PendulumParams, PendulumField>(x, u, pendulum, 2, 1, jx, ju);
            return;
        case DynamicsKind::cartpole_full:
        case DynamicsKind::cartpole_partial:
            jacobians_by_duals<CartPoleParams, CartPoleField>(x, u, cartpole, 4, 1, jx, ju);
            return;
        case DynamicsKind::quadcopter:
            jacobians_by_duals<QuadcopterParams, QuadField>(x, u, quadcopter, 12, 4, jx, ju);
            return;
        case DynamicsKind::linear:
            jx = linear.A;
            ju = linear.B;
            return;
    }
    throw InvalidInput("unknown dynamics kind");
}

std::vector<Vec> DynamicsSpec::eval_batched(std::span<const Vec> states,
                                            std::span<const Vec> controls) const {
    if (states.size() != controls.size())
        throw InvalidInput("eval_batched: batch length mismatch");
    std::vector<Vec> out;
    out.reserve(states.size());
    for (size_t i = 0; i < states.size(); ++i) out.push_back(eval(states[i], controls[i]));
    return out;
}

DynamicsSpec DynamicsSpec::spring(SpringMassParams p) {
    DynamicsSpec s;
    s.kind = DynamicsKind::spring_mass;
    s.spring_mass = p;
    return s;
}

DynamicsSpec DynamicsSpec::pend(PendulumParams p) {
    DynamicsSpec s;
    s.kind = DynamicsKind::pendulum;
    s.pendulum = p;
    return s;
}

DynamicsSpec DynamicsSpec::cartpole_with_friction(CartPoleParams p) {
    DynamicsSpec s;
    s.kind = DynamicsKind::cartpole_full;
    s.cartpole = p;
    return s;
}

DynamicsSpec DynamicsSpec::cartpole_frictionless(CartPoleParams p) {
    DynamicsSpec s;
    s.kind = DynamicsKind::cartpole_partial;
    p.mu_c = 0.0;
    p.mu_p = 0.0;
    s.cartpole = p;
    return s;
}

DynamicsSpec DynamicsSpec::quad(QuadcopterParams p) {
    DynamicsSpec s;
    s.kind = DynamicsKind::quadcopter;
    s.quadcopter = p;
    return s;
}

DynamicsSpec DynamicsSpec::linear_system(LinearSystem sys) {
    if (sys.A.rows() != sys.A.cols() || sys.A.rows() != sys.B.rows())
        throw InvalidInput("linear_system: inconsistent A/B dimensions");
    if (!all_finite(sys.A) || !all_finite(sys.B))
        throw InvalidInput("linear_system: non-finite entries");
    DynamicsSpec s;
    s.kind = DynamicsKind::linear;
    s.linear = std::move(sys);
    return s;
}

LinearSystem load_linear_system(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open matrix file: " + path);
    int n_x = 0, n_u = 0;
    if (!(in >> n_x >> n_u) || n_x <= 0 || n_u <= 0)
        throw InvalidInput("matrix file: bad header (want 'n_x n_u'): " + path);
    LinearSystem sys;
    sys.A.resize(n_x, n_x);
    sys.B.resize(n_x, n_u);
    for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_x; ++j)
            if (!(in >> sys.A(i, j))) throw InvalidInput("matrix file: truncated A: " + path);
    for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_u; ++j)
            if (!(in >> sys.B(i, j))) throw InvalidInput("matrix file: truncated B: " + path);
    if (!all_finite(sys.A) || !all_finite(sys.B))
        throw InvalidInput("matrix file: non-finite entries: " + path);
    return sys;
}

void save_linear_system(const LinearSystem& sys, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write matrix file: " + path);
    out.precision(17);
    out << sys.A.rows() << " " << sys.B.cols() << "\n";
    for (Eigen::Index i = 0; i < sys.A.rows(); ++i) {
        for (Eigen::Index j = 0; j < sys.A.cols(); ++j) out << (j ? " " : "") << sys.A(i, j);
        out << "\n";
    }
    for (Eigen::Index i = 0; i < sys.B.rows(); ++i) {
        for (Eigen::Index j = 0; j < sys.B.cols(); ++j) out << (j ? " " : "") << sys.B(i, j);
        out << "\n";
    }
}

LinearSystem make_beam_standin(int elements) {
    require(elements >= 2, "make_beam_standin: need at least 2 elements");
    const int n = elements;
    const double h = 1.0 / n;

    // Forward first-difference with a one-sided closure at the free end.
    Mat d1 = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        d1(i, i) = -1.0 / h;
        if (i + 1 < n) d1(i, i + 1) = 1.0 / h;
    }
    Mat d0 = Mat::Identity(n, n);

    // Blocks ordered (v_t, v_r, sigma_t, sigma_r). With unit mass matrices
    // the composite generator is exactly skew-symmetric, so the free system
    // conserves energy and stays bounded.
    const int nx = 4 * n;
    Mat a = Mat::Zero(nx, nx);
    auto blk = [&](int r, int c) { return a.block(r * n, c * n, n, n); };
    blk(0, 3) = -d1.transpose();
    blk(1, 2) = -d1.transpose();
    blk(1, 3) = -d0.transpose();
    blk(2, 1) = d1;
    blk(3, 0) = d1;
    blk(3, 1) = d0;

    // Boundary torque (input 0, rotational velocity block) and boundary force
    // (input 1, translational velocity block) at the free end.
    Mat b = Mat::Zero(nx, 2);
    b(2 * n - 1, 0) = 1.0;
    b(n - 1, 1) = 1.0;

    return {std::move(a), std::move(b)};
}

}  // namespace hypersolve
