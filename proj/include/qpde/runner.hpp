#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "qpde/bsde.hpp"
#include "qpde/common.hpp"
#include "qpde/config.hpp"
#include "qpde/hybrid.hpp"
#include "qpde/ledger.hpp"
#include "qpde/mc.hpp"
#include "qpde/qamc_pipeline.hpp"
#include "qpde/qsim.hpp"

namespace qpde::runner {

using config::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

namespace detail {

inline std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
    namespace fs = std::filesystem;
    fs::path dir = cfg.get_string("run", "out");
    fs::create_directories(dir);
    std::ofstream os(dir / name);
    require(bool(os), "cannot open output file " + (dir / name).string());
    return os;
}

inline bsde::PdeProblem make_problem(const RunConfig& cfg) {
    std::string kind = cfg.get_string("problem", "kind");
    std::size_t d = cfg.get_u64("problem", "d");
    double T = cfg.get_f64("problem", "T");
    if (kind == "hjb") return bsde::make_hjb(d, T);
    if (kind == "allen-cahn") return bsde::make_allen_cahn(d, T);
    if (kind == "black-scholes") return bsde::make_nonlinear_black_scholes(d, T);
    throw config::ConfigError("unknown problem kind: " + kind);
}

inline bsde::TrainConfig make_train_config(const RunConfig& cfg, bsde::GradientEstimator est) {
    bsde::TrainConfig tc;
    tc.eta = cfg.get_f64("train", "eta");
    tc.batch = cfg.get_u64("train", "batch");
    tc.iterations = cfg.get_u64("train", "iterations");
    tc.estimator = est;
    tc.h = cfg.get_f64("train", "h");
    tc.v_samples = cfg.get_u64("train", "v_samples");
    tc.truncate_v = cfg.get_bool("train", "truncate_v");
    tc.clip = cfg.get_f64("train", "clip");
    tc.seed = cfg.get_u64("run", "seed");
    tc.threads = unsigned(cfg.get_u64("run", "threads"));
    return tc;
}

inline void write_history(std::ostream& os, const bsde::LossHistory& history) {
    os << "iteration,loss,u0,wall_ms\n";
    for (const auto& e : history.entries)
        os << e.iteration << ',' << fmt(e.loss) << ',' << fmt(e.u0) << ','
           << std::uint64_t(e.wall_ms) << '\n';
}

} // namespace detail

// ----- bsde-train / bsde-eval -----

inline int cmd_bsde_train(const RunConfig& cfg, std::ostream& log) {
    bsde::PdeProblem problem = detail::make_problem(cfg);
    std::string which = cfg.get_string("train", "estimator");
    std::vector<bsde::GradientEstimator> estimators;
    if (which == "all")
        estimators = {bsde::GradientEstimator::backprop, bsde::GradientEstimator::forward_gradient,
                      bsde::GradientEstimator::numerical};
    else
        estimators = {bsde::estimator_from_string(which)};
    std::size_t steps = cfg.get_u64("problem", "steps");
    std::size_t width = cfg.get_u64("problem", "hidden_width");
    for (bsde::GradientEstimator est : estimators) {
        auto model = bsde::make_model(problem, steps, cfg.get_u64("run", "seed"), width);
        bsde::TrainConfig tc = detail::make_train_config(cfg, est);
        bsde::LossHistory history = bsde::train(model, problem, tc);
        std::string name = bsde::to_string(est);
        auto os = detail::open_out(cfg, std::string("train_") + name + ".csv");
        detail::write_history(os, history);
        bsde::save_model(model, (std::filesystem::path(cfg.get_string("run", "out")) /
                                 (std::string("model_") + name + ".ckpt")).string());
        log << "bsde-train " << name << ": loss " << fmt(history.entries.front().loss) << " -> "
            << fmt(history.entries.back().loss) << ", u0 " << fmt(model.u0) << '\n';
    }
    return kExitOk;
}

inline int cmd_bsde_eval(const RunConfig& cfg, std::ostream& log) {
    bsde::PdeProblem problem = detail::make_problem(cfg);
    auto model = bsde::load_model(cfg.get_string("eval", "checkpoint"));
    std::size_t batch = cfg.get_u64("eval", "batch");
    // reserved stream well past any training-iteration id
    auto inc = sde::sample_increments(model.grid, model.d, batch, cfg.get_u64("run", "seed"),
                                      std::uint64_t(1) << 40);
    sde::PathBatch paths = sde::euler_maruyama(problem.to_sde(), model.grid, std::move(inc),
                                               unsigned(cfg.get_u64("run", "threads")));
    double loss = bsde::loss_batch(model, problem, paths);
    auto os = detail::open_out(cfg, "eval.csv");
    os << "batch,loss,u0\n" << batch << ',' << fmt(loss) << ',' << fmt(model.u0) << '\n';
    log << "bsde-eval: loss " << fmt(loss) << ", u0 " << fmt(model.u0) << '\n';
    return kExitOk;
}

// ----- grad-bench -----

inline int cmd_grad_bench(const RunConfig& cfg, std::ostream& log) {
    bsde::PdeProblem problem = detail::make_problem(cfg);
    std::size_t steps = cfg.get_u64("problem", "steps");
    auto model = bsde::make_model(problem, steps, cfg.get_u64("run", "seed"),
                                  cfg.get_u64("problem", "hidden_width"));
    bsde::TrainConfig tc = detail::make_train_config(cfg, bsde::GradientEstimator::backprop);
    auto inc = sde::sample_increments(model.grid, model.d, tc.batch, tc.seed, 0);
    sde::PathBatch paths = sde::euler_maruyama(problem.to_sde(), model.grid, std::move(inc));
    Vec reference = bsde::gradient_backprop(model, problem, paths);

    auto os = detail::open_out(cfg, "grad_bench.csv");
    os << "estimator,samples,max_abs_diff,rms_diff\n";
    for (bsde::GradientEstimator est :
         {bsde::GradientEstimator::forward_gradient, bsde::GradientEstimator::numerical}) {
        tc.estimator = est;
        Vec grad = bsde::estimate_gradient(model, problem, paths, tc, 0);
        double mx = 0, rms = 0;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double dv = grad[i] - reference[i];
            mx = std::max(mx, std::abs(dv));
            rms += dv * dv;
        }
        rms = std::sqrt(rms / double(grad.size()));
        std::uint64_t samples = est == bsde::GradientEstimator::forward_gradient
                                    ? tc.v_samples
                                    : 2 * model.param_size();
        os << bsde::to_string(est) << ',' << samples << ',' << fmt(mx) << ',' << fmt(rms) << '\n';
        log << "grad-bench " << bsde::to_string(est) << ": max|diff| " << fmt(mx) << '\n';
    }
    return kExitOk;
}

// ----- qamc / ae-bench -----

inline int cmd_qamc(const RunConfig& cfg, std::ostream& log) {
    int qubits = int(cfg.get_u64("quantum", "qubits"));
    sde::DiscretizedDistribution dist = sde::discretize_gaussian(qubits, 1.0);
    double hi = 0.0;
    for (double p : dist.points) hi = std::max(hi, p * p);
    auto value = [&](std::uint64_t x) { return dist.points[x] * dist.points[x]; };
    double exact = 0.0;
    for (std::size_t i = 0; i < dist.points.size(); ++i) exact += dist.probs[i] * value(i);

    std::uint64_t seed = cfg.get_u64("run", "seed");
    std::uint64_t reps = cfg.get_u64("bench", "reps");
    int ancilla = qubits;
    auto prep = [&]() {
        qsim::StateVector chi(qubits + 1);
        qsim::load_distribution(chi, dist, 0, qubits);
        return chi;
    };
    auto scaled = [&](std::uint64_t x) { return value(x) / hi; };

    auto os = detail::open_out(cfg, "qamc.csv");
    os << "k,estimate,true_value,abs_error,queries\n";
    for (std::uint64_t m = cfg.get_u64("bench", "k_min_bits"); m <= cfg.get_u64("bench", "k_max_bits");
         ++m) {
        for (std::uint64_t rep = 0; rep < reps; ++rep) {
            SequentialRng rng(seed, StreamPurpose::measurement, m, rep);
            qsim::AeQueryCount count;
            qsim::StateVector chi = prep();
            qsim::oracle_rotation(chi, scaled, 0, qubits, ancilla);
            double a = qsim::amplitude_estimate(chi, ancilla, int(m), rng, &count);
            double est = a * hi;
            os << (1u << m) << ',' << fmt(est) << ',' << fmt(exact) << ','
               << fmt(std::abs(est - exact)) << ',' << count.prep_applications << '\n';
        }
    }

    auto mc_os = detail::open_out(cfg, "mc.csv");
    mc_os << "k,estimate,true_value,abs_error,queries\n";
    for (std::uint64_t m = cfg.get_u64("bench", "k_min_bits"); m <= cfg.get_u64("bench", "k_max_bits");
         ++m) {
        std::uint64_t k = 1u << m;
        for (std::uint64_t rep = 0; rep < reps; ++rep) {
            SequentialRng rng(seed, StreamPurpose::generic, m, rep);
            auto sampler = [&](std::size_t) {
                double u = rng.uniform(), acc = 0;
                std::size_t idx = dist.probs.size() - 1;
                for (std::size_t i = 0; i < dist.probs.size(); ++i) {
                    acc += dist.probs[i];
                    if (u <= acc) { idx = i; break; }
                }
                return value(idx);
            };
            mc::EstimatorResult r = mc::mc_mean(sampler, k);
            mc_os << k << ',' << fmt(r.value) << ',' << fmt(exact) << ','
                  << fmt(std::abs(r.value - exact)) << ',' << k << '\n';
        }
    }
    log << "qamc: wrote qamc.csv and mc.csv (exact mean " << fmt(exact) << ")\n";
    return kExitOk;
}

inline int cmd_ae_bench(const RunConfig& cfg, std::ostream& log) {
    std::uint64_t seed = cfg.get_u64("run", "seed");
    std::uint64_t targets = cfg.get_u64("bench", "targets");
    auto os = detail::open_out(cfg, "ae_bench.csv");
    os << "k,estimate,true_value,abs_error,queries\n";
    for (std::uint64_t i = 0; i < targets; ++i) {
        RngStream ts(seed, StreamPurpose::generic, 77, i);
        double a = ts.uniform(0);
        qsim::StateVector chi(1);
        chi.amps()[0] = std::sqrt(1.0 - a);
        chi.amps()[1] = std::sqrt(a);
        for (std::uint64_t m = cfg.get_u64("bench", "k_min_bits");
             m <= cfg.get_u64("bench", "k_max_bits"); m += 2) {
            SequentialRng rng(seed, StreamPurpose::measurement, i, m);
            qsim::AeQueryCount count;
            double est = qsim::amplitude_estimate(chi, 0, int(m), rng, &count);
            os << (1u << m) << ',' << fmt(est) << ',' << fmt(a) << ','
               << fmt(std::abs(est - a)) << ',' << count.prep_applications << '\n';
        }
    }
    log << "ae-bench: wrote ae_bench.csv\n";
    return kExitOk;
}

// ----- mlmc -----

inline int cmd_mlmc(const RunConfig& cfg, std::ostream& log) {
    double a = cfg.get_f64("mlmc", "drift"), b = cfg.get_f64("mlmc", "vol");
    double x0 = cfg.get_f64("mlmc", "x0"), T = cfg.get_f64("mlmc", "T");
    sde::SdeSpec gbm;
    gbm.d = 1;
    gbm.x0 = {x0};
    gbm.T = T;
    gbm.mu = [a](double, const Vec& x) { return Vec{a * x[0]}; };
    gbm.sigma = [b](double, const Vec& x) {
        Mat s(1, 1);
        s(0, 0) = b * x[0];
        return s;
    };
    auto payoff = [](const Vec& x) { return x[0]; };
    mc::MlmcResult res = mc::mlmc_estimate(gbm, payoff, cfg.get_f64("mlmc", "eps"),
                                           cfg.get_f64("mlmc", "r"), cfg.get_u64("run", "seed"));
    auto os = detail::open_out(cfg, "mlmc.csv");
    os << "level,samples,mean_correction,variance,cost\n";
    for (const auto& lvl : res.levels)
        os << lvl.level << ',' << lvl.samples << ',' << fmt(lvl.mean_correction) << ','
           << fmt(lvl.variance) << ',' << fmt(lvl.cost) << '\n';
    log << "mlmc: estimate " << fmt(res.total.value) << " +- " << fmt(res.total.half_width)
        << " (analytic " << fmt(x0 * std::exp(a * T)) << ")\n";
    return kExitOk;
}

// ----- hybrid-train -----

inline int cmd_hybrid_train(const RunConfig& cfg, std::ostream& log) {
    std::size_t d = cfg.get_u64("hybrid", "d");
    std::size_t steps = cfg.get_u64("hybrid", "steps");
    double T = cfg.get_f64("hybrid", "T");
    int qubits = int(cfg.get_u64("hybrid", "qubits"));
    int reps = int(cfg.get_u64("hybrid", "reps"));
    double t_ent = cfg.get_f64("quantum", "t");
    std::uint64_t seed = cfg.get_u64("run", "seed");

    bsde::PdeProblem problem = bsde::make_hjb(d, T);
    bsde::TrainConfig tc;
    tc.eta = hybrid::experiment_configs().learning_rate;
    tc.batch = hybrid::experiment_configs().samples_per_iteration;
    tc.iterations = cfg.get_u64("hybrid", "iterations");
    tc.seed = seed;
    tc.threads = unsigned(cfg.get_u64("run", "threads"));

    struct Row {
        std::string name;
        std::size_t params;
        double first_loss, final_loss;
    };
    std::vector<Row> rows;

    auto run_model = [&](const std::string& name, auto& model) {
        bsde::LossHistory history = bsde::train(model, problem, tc);
        auto os = detail::open_out(cfg, name + ".csv");
        os << "iteration,loss\n";
        for (const auto& e : history.entries) os << e.iteration << ',' << fmt(e.loss) << '\n';
        rows.push_back({name, model.param_size(), history.entries.front().loss,
                        history.entries.back().loss});
    };

    // classical baseline
    {
        auto model = bsde::make_model(problem, steps, seed, std::max<std::size_t>(2, d + 2));
        run_model("hybrid_classical", model);
    }
    // hybrid: classical embedding into the PQC, classical readout
    {
        bsde::BsdeModel<hybrid::HybridNet> model;
        model.d = d;
        model.grid = sde::TimeGrid::uniform(problem.t0, problem.T, steps);
        RngStream init(seed, StreamPurpose::init, 0, 0);
        model.u0 = 0.5 * (2.0 * init.uniform(0) - 1.0);
        model.z0.resize(d);
        for (std::size_t i = 0; i < d; ++i) model.z0[i] = 0.1 * (2.0 * init.uniform(i + 1) - 1.0);
        for (std::size_t n = 1; n < steps; ++n)
            model.nets.push_back(hybrid::make_hybrid_net(
                {d, std::size_t(qubits)}, {std::size_t(qubits), d}, qubits, reps, t_ent,
                RngStream(seed, StreamPurpose::init, 1, n)));
        run_model("hybrid_quantum", model);
    }
    // pqc only (needs d-qubit embedding)
    if (d <= 6) {
        bsde::BsdeModel<hybrid::HybridNet> model;
        model.d = d;
        model.grid = sde::TimeGrid::uniform(problem.t0, problem.T, steps);
        RngStream init(seed, StreamPurpose::init, 0, 0);
        model.u0 = 0.5 * (2.0 * init.uniform(0) - 1.0);
        model.z0.resize(d);
        for (std::size_t i = 0; i < d; ++i) model.z0[i] = 0.1 * (2.0 * init.uniform(i + 1) - 1.0);
        for (std::size_t n = 1; n < steps; ++n) model.nets.push_back(hybrid::pqc_only_model(d, t_ent));
        run_model("hybrid_pqc_only", model);
    }

    auto report = detail::open_out(cfg, "report.txt");
    report << "hybrid training comparison (HJB d=" << d << ", N=" << steps << ", T=" << fmt(T)
           << ", lr=" << fmt(tc.eta) << ", batch=" << tc.batch << ")\n\n";
    report << "parameter-parity fixtures (per step network):\n";
    for (const auto& c : hybrid::experiment_configs().hybrid_cases)
        report << "  hybrid case d=" << c.d << ": total " << c.total_params
               << " (16 variational), classical twin matches exactly\n";
    for (const auto& c : hybrid::experiment_configs().pqc_cases)
        report << "  pqc case d=" << c.d << ": total " << c.total_params << " = " << c.qubits
               << " qubits x " << c.reps << " repetitions\n";
    report << "\ntraining outcome (qualitative, stochastic):\n";
    for (const Row& r : rows)
        report << "  " << r.name << ": params/net " << r.params << ", loss "
               << fmt(r.first_loss) << " -> " << fmt(r.final_loss) << '\n';
    for (const Row& r : rows)
        log << "hybrid-train " << r.name << ": " << fmt(r.first_loss) << " -> "
            << fmt(r.final_loss) << '\n';
    return kExitOk;
}

// ----- cost-model -----

inline int cmd_cost_model(const RunConfig& cfg, std::ostream& log) {
    double d = cfg.get_f64("cost", "d"), g = cfg.get_f64("cost", "g_max");
    double eps = cfg.get_f64("cost", "eps"), lambda = cfg.get_f64("cost", "lambda");
    double N = cfg.get_f64("cost", "N");
    auto os = detail::open_out(cfg, "cost_model.csv");
    os << "formula,inputs,value\n";
    using ledger::ComplexityQuery;
    using ledger::GradientMethod;
    using ledger::SamplingMode;
    struct RowSpec {
        const char* name;
        ComplexityQuery q;
    };
    std::vector<RowSpec> table = {
        {"backprop[X=C]", {GradientMethod::backprop, SamplingMode::classical, SamplingMode::classical, d, g, eps}},
        {"forward_gradient[X=C v=C]", {GradientMethod::forward_gradient, SamplingMode::classical, SamplingMode::classical, d, g, eps}},
        {"numerical[X=C]", {GradientMethod::numerical, SamplingMode::classical, SamplingMode::classical, d, g, eps}},
        {"backprop[X=Q]", {GradientMethod::backprop, SamplingMode::quantum, SamplingMode::classical, d, g, eps}},
        {"forward_gradient[X=Q v=C]", {GradientMethod::forward_gradient, SamplingMode::quantum, SamplingMode::classical, d, g, eps}},
        {"forward_gradient[X=Q v=Q]", {GradientMethod::forward_gradient, SamplingMode::quantum, SamplingMode::quantum, d, g, eps}},
        {"numerical[X=Q]", {GradientMethod::numerical, SamplingMode::quantum, SamplingMode::classical, d, g, eps}},
    };
    for (const auto& row : table)
        os << row.name << ",\"d=" << fmt(d) << " g=" << fmt(g) << " eps=" << fmt(eps) << "\","
           << fmt(ledger::gradient_method_complexity(row.q)) << '\n';
    for (auto mode : {SamplingMode::classical, SamplingMode::quantum}) {
        ledger::UnitaryBudget b = ledger::theoretical_budget(mode, N, d, eps, lambda);
        const char* mname = mode == SamplingMode::quantum ? "quantum" : "classical";
        std::string inputs = std::string("\"N=") + fmt(N) + " d=" + fmt(d) + " eps=" + fmt(eps) +
                             " lambda=" + fmt(lambda) + "\"";
        os << "budget_init[" << mname << "]," << inputs << ',' << fmt(b.init) << '\n';
        os << "budget_step[" << mname << "]," << inputs << ',' << fmt(b.step) << '\n';
        os << "budget_gauss[" << mname << "]," << inputs << ',' << fmt(b.gauss) << '\n';
        os << "budget_arith[" << mname << "]," << inputs << ',' << fmt(b.arith) << '\n';
    }
    mc::ErrorBudget eb = mc::error_budget(eps, 0.5, d, 1.0, 0.1, lambda);
    os << "error_budget_N,\"eps=" << fmt(eps) << " r=0.5\"," << eb.N << '\n';
    os << "error_budget_n_gauss,\"eps=" << fmt(eps) << " r=0.5\"," << eb.n_gauss << '\n';
    os << "error_budget_samples_classical,\"eps=" << fmt(eps) << "\"," << fmt(eb.samples_classical) << '\n';
    os << "error_budget_queries_quantum,\"eps=" << fmt(eps) << "\"," << fmt(eb.queries_quantum) << '\n';
    log << "cost-model: wrote cost_model.csv\n";

    // micro-scale pipeline demo with ledger shapes
    ledger::QueryLedger queries;
    pipeline::MicroPipelineConfig mp;
    mp.seed = cfg.get_u64("run", "seed");
    pipeline::MicroPipelineResult res = pipeline::run_micro_pipeline(mp, queries);
    auto os2 = detail::open_out(cfg, "pipeline_ledger.csv");
    os2 << "unitary,count\n";
    for (const auto& [name, c] : res.queries) os2 << name << ',' << c << '\n';
    log << "pipeline: estimate " << fmt(res.estimate) << " vs exact " << fmt(res.exact)
        << " (U_Gauss/prep = " << res.queries.at("U_Gauss") / res.prep_applications << ")\n";
    return kExitOk;
}

// ----- plot-data -----

inline int cmd_plot_data(const RunConfig& cfg, std::ostream& log) {
    std::string inputs = cfg.get_string("plot", "inputs");
    std::vector<std::string> files;
    std::stringstream ss(inputs);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) files.push_back(item);
    auto os = detail::open_out(cfg, "plot_data.csv");
    os << "series,iteration,loss\n";
    for (const std::string& file : files) {
        std::ifstream is(file);
        if (!is) throw config::ConfigError("plot-data: cannot open " + file);
        std::string header;
        std::getline(is, header);
        if (header.rfind("iteration,loss", 0) != 0)
            throw config::ConfigError("plot-data: schema mismatch in " + file +
                                      " (expected iteration,loss...)");
        std::string series = std::filesystem::path(file).stem().string();
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            auto c1 = line.find(',');
            auto c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos)
                throw config::ConfigError("plot-data: malformed row in " + file);
            std::string iter = line.substr(0, c1);
            std::string loss = c2 == std::string::npos ? line.substr(c1 + 1)
                                                       : line.substr(c1 + 1, c2 - c1 - 1);
            os << series << ',' << iter << ',' << loss << '\n';
        }
    }
    log << "plot-data: merged " << files.size() << " files\n";
    return kExitOk;
}

// ----- dispatch -----

inline int run(const RunConfig& cfg, std::ostream& log = std::cout) {
    try {
        const std::string& sub = cfg.subcommand;
        if (sub == "bsde-train") return cmd_bsde_train(cfg, log);
        if (sub == "bsde-eval") return cmd_bsde_eval(cfg, log);
        if (sub == "grad-bench") return cmd_grad_bench(cfg, log);
        if (sub == "qamc") return cmd_qamc(cfg, log);
        if (sub == "ae-bench") return cmd_ae_bench(cfg, log);
        if (sub == "mlmc") return cmd_mlmc(cfg, log);
        if (sub == "hybrid-train") return cmd_hybrid_train(cfg, log);
        if (sub == "cost-model") return cmd_cost_model(cfg, log);
        if (sub == "plot-data") return cmd_plot_data(cfg, log);
        log << "unknown subcommand: " << sub << '\n';
        return kExitConfig;
    } catch (const config::ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InvalidArgument& e) {
        log << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        log << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    }
}

} // namespace qpde::runner
