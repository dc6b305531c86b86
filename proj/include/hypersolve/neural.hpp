#pragma once

#include "hypersolve/common.hpp"
#include "hypersolve/dynamics.hpp"

#include <initializer_list>
#include <vector>

namespace hypersolve {

enum class ActKind { tanh, relu, softplus, sine, snake };

std::string to_string(ActKind kind);
ActKind act_kind_from_string(const std::string& s);

// snake(x) = x + sin^2(a x) / a; sine(x) = sin(a x). `a` is ignored by the
// other kinds.
struct ActivationSpec {
    ActKind kind = ActKind::tanh;
    double a = 1.0;
};

Vec apply_activation(const ActivationSpec& act, const Vec& x);
Vec activation_derivative(const ActivationSpec& act, const Vec& x);

// Plain feed-forward network: dims = [in, hidden..., out], one activation per
// hidden layer, affine output.
struct MlpNet {
    std::vector<int> dims;
    std::vector<ActivationSpec> acts;
    std::vector<Mat> weights;  // weights[l] is dims[l+1] x dims[l]
    std::vector<Vec> biases;

    int input_dim() const { return dims.front(); }
    int output_dim() const { return dims.back(); }
    int layer_count() const { return static_cast<int>(dims.size()) - 1; }
    long param_count() const;
    long flops_per_forward() const;  // 2 * sum(in*out) over affine layers

    Vec forward(const Vec& input) const;
    Mat forward_batch(const Mat& inputs) const;  // columns are samples

    Vec params_flat() const;
    void set_params_flat(const Vec& flat);
    void zero_params();
};

enum class InitScheme { uniform_kaiming, siren_uniform };

InitScheme init_scheme_from_string(const std::string& s);
std::string to_string(InitScheme s);

// Deterministic initialization. uniform_kaiming draws weights from
// U(-sqrt(6/fan_in), sqrt(6/fan_in)); siren_uniform uses U(-1/fan_in,
// 1/fan_in) for the first layer and U(-sqrt(6/fan_in)/a, sqrt(6/fan_in)/a)
// afterwards. Biases are U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in both schemes.
MlpNet make_mlp(std::vector<int> dims, std::vector<ActivationSpec> acts, InitScheme scheme,
                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Reverse-mode tape over vector primitives. Values are flat vectors (scalars
// are length-1); parameters may be matrices. The tape is a single-threaded
// unit of work, rebuilt per optimizer step.

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
  public:
    Var constant(Vec v);
    Var constant_scalar(double s);
    Var param(const Mat& w);      // matrix parameter (value copied)
    Var param_vec(const Vec& b);  // vector parameter (value copied)

    Var affine(Var w, Var b, Var x);  // W x + b with trainable W, b
    // W x + b with frozen coefficients; the pointed-to storage must outlive
    // the tape.
    Var affine_const(const Mat* w, const Vec* b, Var x);
    Var activation(Var x, ActivationSpec act);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scaled(Var a, double s, Var b);  // a + s * b
    Var add_const(Var a, Vec c);
    Var concat(std::span<const Var> parts);
    Var concat(std::initializer_list<Var> parts);
    Var norm2(Var a);                       // scalar ||a||_2 (grad 0 at a = 0)
    Var quad_form(Var x, const Mat* q);     // scalar x^T Q x; Q must outlive the tape
    Var mean(std::span<const Var> scalars); // scalar mean
    Var sum(std::span<const Var> scalars);

    // f(x, u) with exact Jacobian backward; the spec must outlive the tape.
    Var dynamics_eval(const DynamicsSpec* f, Var x, Var u);

    // Smooth box saturation: mid + halfwidth * tanh(y), entrywise.
    Var saturate_tanh(Var y, Vec lo, Vec hi);
    // Hard clip (derivative is the inside-the-box indicator).
    Var clamp_hard(Var y, Vec lo, Vec hi);

    const Vec& value(Var v) const;
    double value_scalar(Var v) const;

    // Reverse pass from a scalar loss. Gradients of every node (parameters
    // and inputs alike) are available afterwards. Throws PoisonedGradient if
    // the loss value is non-finite.
    void backward(Var loss);

    const Vec& grad(Var v) const;
    const Mat& grad_mat(Var v) const;

    size_t size() const { return nodes_.size(); }
    void clear();

  private:
    enum class Op {
        constant,
        param_mat,
        param_vec,
        affine,
        affine_const,
        act,
        add,
        sub,
        scale,
        add_scaled,
        add_const,
        concat,
        norm2,
        quad_form,
        mean,
        dynamics,
        saturate,
        clamp,
    };

    struct Node {
        Op op;
        Vec val;
        Mat mval;  // param_mat only
        int a = -1, b = -1, c = -1;
        double s = 0.0;
        Vec aux0, aux1;
        Mat jx, ju;  // dynamics only (nonlinear kinds)
        const Mat* wp = nullptr;
        const Vec* bp = nullptr;
        const DynamicsSpec* dyn = nullptr;
        ActivationSpec actspec{};
        std::vector<int> kids;
    };

    Var push(Node n);
    const Node& at(Var v) const;

    std::vector<Node> nodes_;
    mutable std::vector<Vec> gvec_;
    mutable std::vector<Mat> gmat_;
};

// Handles to a network's parameters registered on a tape.
struct MlpVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

MlpVars register_net(Tape& tape, const MlpNet& net);
Var apply_net(Tape& tape, const MlpNet& net, const MlpVars& vars, Var input);
// Forward with frozen parameters (no parameter gradients, net must outlive
// the tape).
Var apply_net_const(Tape& tape, const MlpNet& net, Var input);
// Gradients in params_flat() order.
Vec collect_grads_flat(const Tape& tape, const MlpNet& net, const MlpVars& vars);

// ---------------------------------------------------------------------------
// Adam on a flat parameter vector.

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    Vec m, v;
    long step_count = 0;

    void reset(Eigen::Index n);
};

// In-place update; throws InvalidInput on non-finite gradients (the update is
// rejected, parameters and moments untouched).
void adam_step(AdamState& state, Vec& params, const Vec& grads);

}  // namespace hypersolve
