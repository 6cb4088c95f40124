#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qpde/common.hpp"
#include "qpde/rng.hpp"

namespace qpde::autodiff {

enum class Activation { identity, relu, sigmoid, tanh };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    throw InvalidArgument("unknown activation: " + s);
}

inline double act_eval(Activation a, double z) {
    switch (a) {
        case Activation::identity: return z;
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::tanh: return std::tanh(z);
    }
    return z;
}

// relu derivative at exactly 0 is the subgradient 0.
inline double act_deriv(Activation a, double z) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: {
            double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 - s);
        }
        case Activation::tanh: {
            double t = std::tanh(z);
            return 1.0 - t * t;
        }
    }
    return 1.0;
}

inline double act_lipschitz(Activation a) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::relu: return 1.0;
        case Activation::sigmoid: return 0.25;
        case Activation::tanh: return 1.0;
    }
    return 1.0;
}

// Number of trainable parameters as written in the source formula,
// sum_{l=1}^{L-1} n_l (n_{l+1} + 1). Note this attaches one bias per
// source-layer neuron; the conventional storage count is stored_param_count.
inline std::size_t param_count(const std::vector<std::size_t>& layer_sizes) {
    require(layer_sizes.size() >= 2, "param_count: need at least 2 layers");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += layer_sizes[l] * (layer_sizes[l + 1] + 1);
    return n;
}

// Scalars actually stored: per layer, an n_{l+1} x n_l weight matrix plus an
// n_{l+1} bias vector. This is the flat ParamVector length.
inline std::size_t stored_param_count(const std::vector<std::size_t>& layer_sizes) {
    require(layer_sizes.size() >= 2, "stored_param_count: need at least 2 layers");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
        n += layer_sizes[l + 1] * (layer_sizes[l] + 1);
    return n;
}

// Fully connected feedforward network with per-layer activations. Immutable
// value semantics: training produces updated copies.
struct FeedForwardNet {
    std::vector<std::size_t> layer_sizes;    // n_1 .. n_L
    std::vector<Mat> weights;                // weights[l]: n_{l+1} x n_l
    std::vector<Vec> biases;                 // biases[l]: n_{l+1}
    std::vector<Activation> activations;     // one per weight layer

    std::size_t depth() const { return weights.size(); }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t param_size() const { return stored_param_count(layer_sizes); }

    static FeedForwardNet zeros(std::vector<std::size_t> sizes, std::vector<Activation> acts) {
        require(sizes.size() >= 2, "FeedForwardNet: need at least 2 layers");
        require(acts.size() == sizes.size() - 1, "FeedForwardNet: one activation per weight layer");
        FeedForwardNet net;
        net.layer_sizes = std::move(sizes);
        net.activations = std::move(acts);
        for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
            net.weights.emplace_back(net.layer_sizes[l + 1], net.layer_sizes[l]);
            net.biases.emplace_back(net.layer_sizes[l + 1], 0.0);
        }
        return net;
    }

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    static FeedForwardNet random(std::vector<std::size_t> sizes, std::vector<Activation> acts,
                                 const RngStream& stream) {
        FeedForwardNet net = zeros(std::move(sizes), std::move(acts));
        std::uint64_t c = 0;
        for (std::size_t l = 0; l < net.depth(); ++l) {
            double bound = 1.0 / std::sqrt(double(net.layer_sizes[l]));
            for (double& w : net.weights[l].data)
                w = bound * (2.0 * stream.uniform(c++) - 1.0);
        }
        return net;
    }
};

// ----- flat parameter vector (layer-major, weights before biases) -----

inline Vec flatten(const FeedForwardNet& net) {
    Vec theta;
    theta.reserve(net.param_size());
    for (std::size_t l = 0; l < net.depth(); ++l) {
        theta.insert(theta.end(), net.weights[l].data.begin(), net.weights[l].data.end());
        theta.insert(theta.end(), net.biases[l].begin(), net.biases[l].end());
    }
    return theta;
}

inline void unflatten(FeedForwardNet& net, std::span<const double> theta) {
    require(theta.size() == net.param_size(), "unflatten: parameter vector length mismatch");
    std::size_t p = 0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        for (double& w : net.weights[l].data) w = theta[p++];
        for (double& b : net.biases[l]) b = theta[p++];
    }
}

// ----- forward evaluation -----

inline Vec forward_eval(const FeedForwardNet& net, const Vec& x) {
    require(x.size() == net.input_dim(), "forward_eval: input dimension mismatch");
    Vec a = x;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        Vec z = net.weights[l].apply(a);
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += net.biases[l][j];
        for (double& v : z) v = act_eval(net.activations[l], v);
        a = std::move(z);
    }
    return a;
}

// ----- reverse mode (tape) -----

// One recorded operation of the forward pass. `values` holds the primal data
// the reverse sweep needs (inputs for affine nodes, pre-activations for
// activation nodes).
struct TapeNode {
    enum class Kind { input, affine, activation } kind;
    int input_node;    // index into Tape::nodes
    int layer;         // which weight layer produced this node (-1 for input)
    Vec values;
};

struct Tape {
    std::vector<TapeNode> nodes;
    int output_node = -1;

    const Vec& output() const { return nodes[std::size_t(output_node)].values; }
};

inline Tape record_forward(const FeedForwardNet& net, const Vec& x) {
    require(x.size() == net.input_dim(), "record_forward: input dimension mismatch");
    Tape tape;
    tape.nodes.push_back({TapeNode::Kind::input, -1, -1, x});
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const Vec& a = tape.nodes.back().values;
        Vec z = net.weights[l].apply(a);
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += net.biases[l][j];
        tape.nodes.push_back({TapeNode::Kind::affine, int(tape.nodes.size()) - 1, int(l), z});
        Vec act(z.size());
        for (std::size_t j = 0; j < z.size(); ++j) act[j] = act_eval(net.activations[l], z[j]);
        tape.nodes.push_back({TapeNode::Kind::activation, int(tape.nodes.size()) - 1, int(l), std::move(act)});
    }
    tape.output_node = int(tape.nodes.size()) - 1;
    return tape;
}

// Reverse sweep with an arbitrary output cotangent. Appends parameter
// gradients (same flat layout as flatten()) into `param_grad` and returns the
// input cotangent.
inline Vec tape_vjp(const FeedForwardNet& net, const Tape& tape, const Vec& out_cotangent,
                    Vec& param_grad) {
    require(out_cotangent.size() == net.output_dim(), "tape_vjp: cotangent dimension mismatch");
    param_grad.assign(net.param_size(), 0.0);

    // Offsets of each layer's weight block in the flat layout.
    std::vector<std::size_t> offsets(net.depth());
    std::size_t off = 0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        offsets[l] = off;
        off += net.weights[l].rows * net.weights[l].cols + net.biases[l].size();
    }

    Vec cot = out_cotangent;
    for (int i = tape.output_node; i > 0; --i) {
        const TapeNode& node = tape.nodes[std::size_t(i)];
        if (node.kind == TapeNode::Kind::activation) {
            const Vec& z = tape.nodes[std::size_t(node.input_node)].values;
            for (std::size_t j = 0; j < cot.size(); ++j)
                cot[j] *= act_deriv(net.activations[std::size_t(node.layer)], z[j]);
        } else if (node.kind == TapeNode::Kind::affine) {
            std::size_t l = std::size_t(node.layer);
            const Vec& a = tape.nodes[std::size_t(node.input_node)].values;
            const Mat& W = net.weights[l];
            std::size_t base = offsets[l];
            for (std::size_t r = 0; r < W.rows; ++r)
                for (std::size_t c = 0; c < W.cols; ++c)
                    param_grad[base + r * W.cols + c] += cot[r] * a[c];
            std::size_t bbase = base + W.rows * W.cols;
            for (std::size_t r = 0; r < W.rows; ++r) param_grad[bbase + r] += cot[r];
            cot = W.apply_transposed(cot);
        }
    }
    return cot;
}

// Loss functions are passed as a value/gradient pair evaluated at the network
// output.
struct ScalarLoss {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> grad;

    static ScalarLoss identity_sum() {
        return {[](const Vec& y) { double s = 0; for (double v : y) s += v; return s; },
                [](const Vec& y) { return Vec(y.size(), 1.0); }};
    }
    static ScalarLoss quadratic(Vec target) {
        return {[target](const Vec& y) {
                    double s = 0;
                    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target[i]) * (y[i] - target[i]);
                    return s;
                },
                [target](const Vec& y) {
                    Vec g(y.size());
                    for (std::size_t i = 0; i < y.size(); ++i) g[i] = 2.0 * (y[i] - target[i]);
                    return g;
                }};
    }
};

// Gradient of loss(net(x)) with respect to all parameters.
inline Vec reverse_gradient(const FeedForwardNet& net, const Vec& x, const ScalarLoss& loss) {
    Tape tape = record_forward(net, x);
    Vec cot = loss.grad(tape.output());
    Vec grad;
    tape_vjp(net, tape, cot, grad);
    return grad;
}

// ----- forward mode (duals) -----

// Primal/tangent pair; the unit of forward-mode propagation.
struct DualVector {
    Vec primal;
    Vec tangent;
};

// Output tangent of net(x) along a flat parameter tangent v and an input
// tangent (jvp). Single pass, keeps only the running dual pair.
inline DualVector net_jvp(const FeedForwardNet& net, const Vec& x, const Vec& x_tangent,
                          std::span<const double> v) {
    require(v.size() == net.param_size(), "net_jvp: tangent length mismatch");
    require(x_tangent.size() == x.size(), "net_jvp: input tangent length mismatch");
    DualVector d{x, x_tangent};
    std::size_t p = 0;
    for (std::size_t l = 0; l < net.depth(); ++l) {
        const Mat& W = net.weights[l];
        Vec z = W.apply(d.primal);
        Vec zt = W.apply(d.tangent);
        for (std::size_t r = 0; r < W.rows; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < W.cols; ++c) acc += v[p + r * W.cols + c] * d.primal[c];
            zt[r] += acc;
        }
        p += W.rows * W.cols;
        for (std::size_t r = 0; r < W.rows; ++r) {
            z[r] += net.biases[l][r];
            zt[r] += v[p + r];
        }
        p += net.biases[l].size();
        for (std::size_t r = 0; r < z.size(); ++r) {
            zt[r] *= act_deriv(net.activations[l], z[r]);
            z[r] = act_eval(net.activations[l], z[r]);
        }
        d.primal = std::move(z);
        d.tangent = std::move(zt);
    }
    return d;
}

inline DualVector net_jvp(const FeedForwardNet& net, const Vec& x, std::span<const double> v) {
    return net_jvp(net, x, Vec(x.size(), 0.0), v);
}

// Returns (C, grad_theta C . v) for C = loss(net(x)) in one forward pass.
inline std::pair<double, double> forward_directional(const FeedForwardNet& net, const Vec& x,
                                                     std::span<const double> v, const ScalarLoss& loss) {
    DualVector d = net_jvp(net, x, v);
    double c = loss.value(d.primal);
    Vec g = loss.grad(d.primal);
    return {c, dot(g, d.tangent)};
}

// ----- Lipschitz bound -----

// Largest singular value by power iteration on W^T W, relative tolerance
// 1e-8, at most 1e4 iterations.
inline double spectral_norm(const Mat& W, double tol = 1e-8, int max_iter = 10000) {
    if (W.rows == 0 || W.cols == 0) return 0.0;
    Vec v(W.cols, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.001 * double(i % 7);
    double nv = norm2(v);
    for (double& x : v) x /= nv;
    double prev = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vec w = W.apply(v);
        Vec u = W.apply_transposed(w);
        double nu = norm2(u);
        if (nu == 0.0) return 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) u[i] /= nu;
        double sigma = std::sqrt(nu);
        if (it > 0 && std::abs(sigma - prev) <= tol * std::max(1.0, sigma)) return sigma;
        prev = sigma;
        v = std::move(u);
    }
    throw NumericError("spectral_norm: power iteration did not converge");
}

// Standard (unsquared) Lipschitz constant, prod_l sigma_max(W_l) L_{act,l}.
// The source convention measures distances in the squared l2 norm; under that
// convention the constant is the square of this value.
inline double lipschitz_bound(const FeedForwardNet& net) {
    double L = 1.0;
    for (std::size_t l = 0; l < net.depth(); ++l)
        L *= spectral_norm(net.weights[l]) * act_lipschitz(net.activations[l]);
    return L;
}

// ----- gradient descent step -----

inline FeedForwardNet apply_sgd(const FeedForwardNet& net, std::span<const double> grad, double eta) {
    require(eta > 0.0, "apply_sgd: learning rate must be positive");
    require(grad.size() == net.param_size(), "apply_sgd: gradient length mismatch");
    FeedForwardNet out = net;
    std::size_t p = 0;
    for (std::size_t l = 0; l < out.depth(); ++l) {
        for (double& w : out.weights[l].data) w -= eta * grad[p++];
        for (double& b : out.biases[l]) b -= eta * grad[p++];
    }
    return out;
}

// ----- checkpoint format -----
//
// Versioned text format, byte-stable across runs: doubles are written as C99
// hex floats so the round trip is exact.
//
//   qpde-net v1
//   layers <n_1> ... <n_L>
//   acts <a_1> ... <a_{L-1}>
//   params <count>
//   <hexfloat per line>

inline void save_checkpoint(const FeedForwardNet& net, std::ostream& os) {
    os << "qpde-net v1\n";
    os << "layers";
    for (std::size_t n : net.layer_sizes) os << ' ' << n;
    os << "\nacts";
    for (Activation a : net.activations) os << ' ' << to_string(a);
    Vec theta = flatten(net);
    os << "\nparams " << theta.size() << '\n';
    char buf[64];
    for (double v : theta) {
        std::snprintf(buf, sizeof buf, "%a", v);
        os << buf << '\n';
    }
}

inline void save_checkpoint(const FeedForwardNet& net, const std::string& path) {
    std::ofstream os(path);
    require(bool(os), "save_checkpoint: cannot open " + path);
    save_checkpoint(net, os);
}

inline FeedForwardNet load_checkpoint(std::istream& is) {
    std::string tag, ver;
    is >> tag >> ver;
    require(tag == "qpde-net" && ver == "v1", "load_checkpoint: bad header");
    std::string key;
    is >> key;
    require(key == "layers", "load_checkpoint: expected layers");
    std::vector<std::size_t> sizes;
    while (is >> key) {
        if (key == "acts") break;
        sizes.push_back(std::size_t(std::stoul(key)));
    }
    std::vector<Activation> acts;
    while (is >> key) {
        if (key == "params") break;
        acts.push_back(activation_from_string(key));
    }
    std::size_t count = 0;
    is >> count;
    FeedForwardNet net = FeedForwardNet::zeros(sizes, acts);
    require(count == net.param_size(), "load_checkpoint: parameter count mismatch");
    Vec theta(count);
    for (double& v : theta) {
        std::string tok;
        is >> tok;
        v = std::strtod(tok.c_str(), nullptr);
    }
    unflatten(net, theta);
    return net;
}

inline FeedForwardNet load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    require(bool(is), "load_checkpoint: cannot open " + path);
    return load_checkpoint(is);
}

// ----- step-network customization points (found by ADL from the trainer) -----

inline Vec step_net_forward(const FeedForwardNet& net, const Vec& x) {
    return forward_eval(net, x);
}
inline std::size_t step_net_param_size(const FeedForwardNet& net) { return net.param_size(); }
inline Vec step_net_get_params(const FeedForwardNet& net) { return flatten(net); }
inline void step_net_set_params(FeedForwardNet& net, std::span<const double> theta) {
    unflatten(net, theta);
}
inline Vec step_net_vjp(const FeedForwardNet& net, const Vec& x, const Vec& cotangent) {
    Tape tape = record_forward(net, x);
    Vec grad;
    tape_vjp(net, tape, cotangent, grad);
    return grad;
}
inline Vec step_net_jvp(const FeedForwardNet& net, const Vec& x, std::span<const double> v) {
    return net_jvp(net, x, v).tangent;
}

} // namespace qpde::autodiff
