#include "hypersolve/neural.hpp"

#include <cmath>

namespace hypersolve {
namespace {

double act_scalar(const ActivationSpec& a, double x) {
    switch (a.kind) {
        case ActKind::tanh: return std::tanh(x);
        case ActKind::relu: return x > 0.0 ? x : 0.0;
        case ActKind::softplus: return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        case ActKind::sine: return std::sin(a.a * x);
        case ActKind::snake: {
            const double s = std::sin(a.a * x);
            return x + s * s / a.a;
        }
    }
    throw InvalidInput("unknown activation");
}

// Conventions: relu'(0) := 0; snake'(x) = 1 + sin(2 a x).
double act_deriv_scalar(const ActivationSpec& a, double x) {
    switch (a.kind) {
        case ActKind::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case ActKind::relu: return x > 0.0 ? 1.0 : 0.0;
        case ActKind::softplus: return 1.0 / (1.0 + std::exp(-x));
        case ActKind::sine: return a.a * std::cos(a.a * x);
        case ActKind::snake: return 1.0 + std::sin(2.0 * a.a * x);
    }
    throw InvalidInput("unknown activation");
}

}  // namespace

std::string to_string(ActKind kind) {
    switch (kind) {
        case ActKind::tanh: return "tanh";
        case ActKind::relu: return "relu";
        case ActKind::softplus: return "softplus";
        case ActKind::sine: return "sine";
        case ActKind::snake: return "snake";
    }
    throw InvalidInput("unknown activation");
}

ActKind act_kind_from_string(const std::string& s) {
    if (s == "tanh") return ActKind::tanh;
    if (s == "relu") return ActKind::relu;
    if (s == "softplus") return ActKind::softplus;
    if (s == "sine" || s == "siren") return ActKind::sine;
    if (s == "snake") return ActKind::snake;
    throw InvalidInput("unknown activation: " + s);
}

Vec apply_activation(const ActivationSpec& act, const Vec& x) {
    require(act.a > 0.0, "activation: frequency parameter must be positive");
    Vec out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = act_scalar(act, x[i]);
    return out;
}

Vec activation_derivative(const ActivationSpec& act, const Vec& x) {
    Vec out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = act_deriv_scalar(act, x[i]);
    return out;
}

long MlpNet::param_count() const {
    long n = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l)
        n += static_cast<long>(dims[l]) * dims[l + 1] + dims[l + 1];
    return n;
}

long MlpNet::flops_per_forward() const {
    long n = 0;
    for (size_t l = 0; l + 1 < dims.size(); ++l) n += 2L * dims[l] * dims[l + 1];
    return n;
}

Vec MlpNet::forward(const Vec& input) const {
    if (input.size() != input_dim())
        throw InvalidInput("MlpNet::forward: input dim mismatch");
    Vec h = input;
    for (int l = 0; l < layer_count(); ++l) {
        h = weights[l] * h + biases[l];
        if (l + 1 < layer_count()) h = apply_activation(acts[l], h);
    }
    return h;
}

Mat MlpNet::forward_batch(const Mat& inputs) const {
    if (inputs.rows() != input_dim())
        throw InvalidInput("MlpNet::forward_batch: input dim mismatch");
    Mat h = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        h = (weights[l] * h).colwise() + biases[l];
        if (l + 1 < layer_count())
            for (Eigen::Index c = 0; c < h.cols(); ++c)
                h.col(c) = apply_activation(acts[l], h.col(c));
    }
    return h;
}

Vec MlpNet::params_flat() const {
    Vec flat(param_count());
    Eigen::Index at = 0;
    for (int l = 0; l < layer_count(); ++l) {
        for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat[at++] = weights[l](r, c);
        for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[at++] = biases[l][r];
    }
    return flat;
}

void MlpNet::set_params_flat(const Vec& flat) {
    require(flat.size() == param_count(), "set_params_flat: length mismatch");
    Eigen::Index at = 0;
    for (int l = 0; l < layer_count(); ++l) {
        for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
            for (Eigen::Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = flat[at++];
        for (Eigen::Index r = 0; r < biases[l].size(); ++r) biases[l][r] = flat[at++];
    }
}

void MlpNet::zero_params() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "uniform_kaiming") return InitScheme::uniform_kaiming;
    if (s == "siren_uniform") return InitScheme::siren_uniform;
    throw InvalidInput("unknown init scheme: " + s);
}

std::string to_string(InitScheme s) {
    return s == InitScheme::uniform_kaiming ? "uniform_kaiming" : "siren_uniform";
}

MlpNet make_mlp(std::vector<int> dims, std::vector<ActivationSpec> acts, InitScheme scheme,
                std::uint64_t seed) {
    require(dims.size() >= 2, "make_mlp: need at least input and output dims");
    for (int d : dims) require(d > 0, "make_mlp: zero-width layer");
    require(acts.size() == dims.size() - 2, "make_mlp: one activation per hidden layer");
    for (const auto& a : acts) require(a.a > 0.0, "make_mlp: activation frequency must be positive");

    MlpNet net;
    net.dims = std::move(dims);
    net.acts = std::move(acts);
    Rng rng(seed);
    for (size_t l = 0; l + 1 < net.dims.size(); ++l) {
        const int fan_in = net.dims[l];
        const int fan_out = net.dims[l + 1];
        double bound;
        if (scheme == InitScheme::uniform_kaiming) {
            bound = std::sqrt(6.0 / fan_in);
        } else if (l == 0) {
            bound = 1.0 / fan_in;
        } else {
            const double a = l - 1 < net.acts.size() ? net.acts[l - 1].a : 1.0;
            bound = std::sqrt(6.0 / fan_in) / a;
        }
        Mat w(fan_out, fan_in);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
        const double bbound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Vec b(fan_out);
        for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = rng.uniform(-bbound, bbound);
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    return net;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::at(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
        throw InvalidInput("Tape: invalid var handle");
    return nodes_[v.idx];
}

Var Tape::constant(Vec v) {
    Node n;
    n.op = Op::constant;
    n.val = std::move(v);
    return push(std::move(n));
}

Var Tape::constant_scalar(double s) { return constant(Vec::Constant(1, s)); }

Var Tape::param(const Mat& w) {
    Node n;
    n.op = Op::param_mat;
    n.mval = w;
    return push(std::move(n));
}

Var Tape::param_vec(const Vec& b) {
    Node n;
    n.op = Op::param_vec;
    n.val = b;
    return push(std::move(n));
}

Var Tape::affine(Var w, Var b, Var x) {
    const Mat& wm = at(w).mval;
    Node n;
    n.op = Op::affine;
    n.a = w.idx;
    n.b = b.idx;
    n.c = x.idx;
    n.val = wm * at(x).val + at(b).val;
    return push(std::move(n));
}

Var Tape::affine_const(const Mat* w, const Vec* b, Var x) {
    Node n;
    n.op = Op::affine_const;
    n.wp = w;
    n.bp = b;
    n.a = x.idx;
    n.val = (*w) * at(x).val + (*b);
    return push(std::move(n));
}

Var Tape::activation(Var x, ActivationSpec act) {
    Node n;
    n.op = Op::act;
    n.a = x.idx;
    n.actspec = act;
    n.val = apply_activation(act, at(x).val);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::add;
    n.a = a.idx;
    n.b = b.idx;
    n.val = at(a).val + at(b).val;
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.op = Op::sub;
    n.a = a.idx;
    n.b = b.idx;
    n.val = at(a).val - at(b).val;
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::scale;
    n.a = a.idx;
    n.s = s;
    n.val = s * at(a).val;
    return push(std::move(n));
}

Var Tape::add_scaled(Var a, double s, Var b) {
    Node n;
    n.op = Op::add_scaled;
    n.a = a.idx;
    n.b = b.idx;
    n.s = s;
    n.val = at(a).val + s * at(b).val;
    return push(std::move(n));
}

Var Tape::add_const(Var a, Vec c) {
    Node n;
    n.op = Op::add_const;
    n.a = a.idx;
    n.val = at(a).val + c;
    return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
    require(!parts.empty(), "Tape::concat: empty list");
    Node n;
    n.op = Op::concat;
    Eigen::Index total = 0;
    for (Var p : parts) total += at(p).val.size();
    n.val.resize(total);
    Eigen::Index ofs = 0;
    for (Var p : parts) {
        n.val.segment(ofs, at(p).val.size()) = at(p).val;
        ofs += at(p).val.size();
        n.kids.push_back(p.idx);
    }
    return push(std::move(n));
}

Var Tape::concat(std::initializer_list<Var> parts) {
    std::vector<Var> v(parts);
    return concat(std::span<const Var>(v));
}

Var Tape::norm2(Var a) {
    Node n;
    n.op = Op::norm2;
    n.a = a.idx;
    n.val = Vec::Constant(1, at(a).val.norm());
    return push(std::move(n));
}

Var Tape::quad_form(Var x, const Mat* q) {
    const Vec& xv = at(x).val;
    require(q->rows() == xv.size() && q->cols() == xv.size(), "quad_form: dimension mismatch");
    Node n;
    n.op = Op::quad_form;
    n.a = x.idx;
    n.wp = q;
    n.val = Vec::Constant(1, xv.dot((*q) * xv));
    return push(std::move(n));
}

Var Tape::mean(std::span<const Var> scalars) {
    require(!scalars.empty(), "Tape::mean: empty list");
    Node n;
    n.op = Op::mean;
    double acc = 0.0;
    for (Var p : scalars) {
        acc += value_scalar(p);
        n.kids.push_back(p.idx);
    }
    n.s = 1.0 / static_cast<double>(scalars.size());
    n.val = Vec::Constant(1, acc * n.s);
    return push(std::move(n));
}

Var Tape::sum(std::span<const Var> scalars) {
    require(!scalars.empty(), "Tape::sum: empty list");
    Node n;
    n.op = Op::mean;
    double acc = 0.0;
    for (Var p : scalars) {
        acc += value_scalar(p);
        n.kids.push_back(p.idx);
    }
    n.s = 1.0;
    n.val = Vec::Constant(1, acc);
    return push(std::move(n));
}

Var Tape::dynamics_eval(const DynamicsSpec* f, Var x, Var u) {
    Node n;
    n.op = Op::dynamics;
    n.dyn = f;
    n.a = x.idx;
    n.b = u.idx;
    n.val = f->eval(at(x).val, at(u).val);
    // The linear kind backpropagates through A and B directly; nonlinear
    // kinds cache their Jacobians at the recorded point.
    if (f->kind != DynamicsKind::linear) f->eval_jacobians(at(x).val, at(u).val, n.jx, n.ju);
    return push(std::move(n));
}

Var Tape::saturate_tanh(Var y, Vec lo, Vec hi) {
    const Vec& yv = at(y).val;
    require(lo.size() == yv.size() && hi.size() == yv.size(), "saturate: bounds dim mismatch");
    Node n;
    n.op = Op::saturate;
    n.a = y.idx;
    n.aux0 = 0.5 * (lo + hi);  // mid
    n.aux1 = 0.5 * (hi - lo);  // halfwidth
    n.val = n.aux0 + n.aux1.cwiseProduct(yv.array().tanh().matrix());
    return push(std::move(n));
}

Var Tape::clamp_hard(Var y, Vec lo, Vec hi) {
    const Vec& yv = at(y).val;
    require(lo.size() == yv.size() && hi.size() == yv.size(), "clamp: bounds dim mismatch");
    Node n;
    n.op = Op::clamp;
    n.a = y.idx;
    n.aux0 = lo;
    n.aux1 = hi;
    n.val = yv.cwiseMax(lo).cwiseMin(hi);
    return push(std::move(n));
}

const Vec& Tape::value(Var v) const { return at(v).val; }

double Tape::value_scalar(Var v) const {
    const Vec& val = at(v).val;
    require(val.size() == 1, "value_scalar: node is not scalar");
    return val[0];
}

void Tape::backward(Var loss) {
    const Node& ln = at(loss);
    require(ln.val.size() == 1, "backward: loss must be scalar");
    if (!std::isfinite(ln.val[0]))
        throw PoisonedGradient("backward: non-finite loss value");

    gvec_.assign(nodes_.size(), Vec());
    gmat_.assign(nodes_.size(), Mat());
    auto gv = [&](int i) -> Vec& {
        if (gvec_[i].size() == 0) gvec_[i] = Vec::Zero(nodes_[i].val.size());
        return gvec_[i];
    };
    auto gm = [&](int i) -> Mat& {
        if (gmat_[i].size() == 0) gmat_[i] = Mat::Zero(nodes_[i].mval.rows(), nodes_[i].mval.cols());
        return gmat_[i];
    };

    gv(loss.idx) = Vec::Constant(1, 1.0);

    for (int i = loss.idx; i >= 0; --i) {
        if (gvec_[i].size() == 0) continue;  // not on a path to the loss
        const Node& n = nodes_[i];
        const Vec& g = gvec_[i];
        switch (n.op) {
            case Op::constant:
            case Op::param_mat:
            case Op::param_vec: break;
            case Op::affine: {
                const Mat& w = nodes_[n.a].mval;
                const Vec& x = nodes_[n.c].val;
                gm(n.a) += g * x.transpose();
                gv(n.b) += g;
                gv(n.c) += w.transpose() * g;
                break;
            }
            case Op::affine_const: {
                gv(n.a) += n.wp->transpose() * g;
                break;
            }
            case Op::act: {
                const Vec d = activation_derivative(n.actspec, nodes_[n.a].val);
                gv(n.a) += d.cwiseProduct(g);
                break;
            }
            case Op::add: {
                gv(n.a) += g;
                gv(n.b) += g;
                break;
            }
            case Op::sub: {
                gv(n.a) += g;
                gv(n.b) -= g;
                break;
            }
            case Op::scale: {
                gv(n.a) += n.s * g;
                break;
            }
            case Op::add_scaled: {
                gv(n.a) += g;
                gv(n.b) += n.s * g;
                break;
            }
            case Op::add_const: {
                gv(n.a) += g;
                break;
            }
            case Op::concat: {
                Eigen::Index ofs = 0;
                for (int kid : n.kids) {
                    const Eigen::Index len = nodes_[kid].val.size();
                    gv(kid) += g.segment(ofs, len);
                    ofs += len;
                }
                break;
            }
            case Op::norm2: {
                const double norm = n.val[0];
                if (norm > 0.0) gv(n.a) += (g[0] / norm) * nodes_[n.a].val;
                break;
            }
            case Op::quad_form: {
                const Vec& x = nodes_[n.a].val;
                gv(n.a) += g[0] * ((*n.wp) * x + n.wp->transpose() * x);
                break;
            }
            case Op::mean: {
                for (int kid : n.kids) gv(kid) += Vec::Constant(1, n.s * g[0]);
                break;
            }
            case Op::dynamics: {
                if (n.dyn->kind == DynamicsKind::linear) {
                    gv(n.a) += n.dyn->linear.A.transpose() * g;
                    gv(n.b) += n.dyn->linear.B.transpose() * g;
                } else {
                    gv(n.a) += n.jx.transpose() * g;
                    gv(n.b) += n.ju.transpose() * g;
                }
                break;
            }
            case Op::saturate: {
                const Vec t = nodes_[n.a].val.array().tanh().matrix();
                gv(n.a) += n.aux1.cwiseProduct((1.0 - t.array().square()).matrix()).cwiseProduct(g);
                break;
            }
            case Op::clamp: {
                const Vec& y = nodes_[n.a].val;
                Vec mask(y.size());
                for (Eigen::Index j = 0; j < y.size(); ++j)
                    mask[j] = (y[j] >= n.aux0[j] && y[j] <= n.aux1[j]) ? 1.0 : 0.0;
                gv(n.a) += mask.cwiseProduct(g);
                break;
            }
        }
    }
}

const Vec& Tape::grad(Var v) const {
    require(v.valid() && static_cast<size_t>(v.idx) < gvec_.size(), "grad: run backward first");
    // Nodes not connected to the loss have zero gradient by convention.
    if (gvec_[v.idx].size() == 0) gvec_[v.idx] = Vec::Zero(nodes_[v.idx].val.size());
    return gvec_[v.idx];
}

const Mat& Tape::grad_mat(Var v) const {
    require(v.valid() && static_cast<size_t>(v.idx) < gmat_.size(), "grad_mat: run backward first");
    if (gmat_[v.idx].size() == 0)
        gmat_[v.idx] = Mat::Zero(nodes_[v.idx].mval.rows(), nodes_[v.idx].mval.cols());
    return gmat_[v.idx];
}

void Tape::clear() {
    nodes_.clear();
    gvec_.clear();
    gmat_.clear();
}

MlpVars register_net(Tape& tape, const MlpNet& net) {
    MlpVars vars;
    for (int l = 0; l < net.layer_count(); ++l) {
        vars.weights.push_back(tape.param(net.weights[l]));
        vars.biases.push_back(tape.param_vec(net.biases[l]));
    }
    return vars;
}

Var apply_net(Tape& tape, const MlpNet& net, const MlpVars& vars, Var input) {
    Var h = input;
    for (int l = 0; l < net.layer_count(); ++l) {
        h = tape.affine(vars.weights[l], vars.biases[l], h);
        if (l + 1 < net.layer_count()) h = tape.activation(h, net.acts[l]);
    }
    return h;
}

Var apply_net_const(Tape& tape, const MlpNet& net, Var input) {
    Var h = input;
    for (int l = 0; l < net.layer_count(); ++l) {
        h = tape.affine_const(&net.weights[l], &net.biases[l], h);
        if (l + 1 < net.layer_count()) h = tape.activation(h, net.acts[l]);
    }
    return h;
}

Vec collect_grads_flat(const Tape& tape, const MlpNet& net, const MlpVars& vars) {
    Vec flat(net.param_count());
    Eigen::Index at = 0;
    for (int l = 0; l < net.layer_count(); ++l) {
        const Mat& gw = tape.grad_mat(vars.weights[l]);
        for (Eigen::Index r = 0; r < gw.rows(); ++r)
            for (Eigen::Index c = 0; c < gw.cols(); ++c) flat[at++] = gw(r, c);
        const Vec& gb = tape.grad(vars.biases[l]);
        for (Eigen::Index r = 0; r < gb.size(); ++r) flat[at++] = gb[r];
    }
    return flat;
}

void AdamState::reset(Eigen::Index n) {
    m = Vec::Zero(n);
    v = Vec::Zero(n);
    step_count = 0;
}

void adam_step(AdamState& state, Vec& params, const Vec& grads) {
    require(params.size() == grads.size(), "adam_step: shape mismatch");
    if (state.m.size() != params.size()) state.reset(params.size());
    if (!all_finite(grads)) throw InvalidInput("adam_step: non-finite gradient, update rejected");

    ++state.step_count;
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
    const Vec m_hat = state.m / bc1;
    const Vec v_hat = state.v / bc2;
    params -= state.lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt() + Vec::Constant(params.size(), state.eps_adam));
}

}  // namespace hypersolve
