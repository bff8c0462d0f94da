#pragma once

// QPF objective f(theta, alpha) = sum_s (alpha F_s(theta) - b_s)^2, its
// gradients, projected gradient descent for one instance, and mini-batch
// training of the data-embedded model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qpf/errors.hpp"
#include "qpf/grid_model.hpp"
#include "qpf/qsim.hpp"
#include "qpf/vqc.hpp"
#include "qpf/xbm.hpp"

namespace qpf {

/// Nonzero entries of every H_s, for the fast simulation path.
struct SparseSpecs {
    struct Entry {
        std::uint32_t spec;
        std::uint32_t row;
        std::uint32_t col;
        cplx value;
    };
    std::vector<Entry> entries;
    std::size_t s_count = 0;
    std::size_t dim = 0;
};

inline SparseSpecs make_sparse(std::span<const ComplexMatrix> hs) {
    SparseSpecs out;
    out.s_count = hs.size();
    out.dim = hs.empty() ? 0 : static_cast<std::size_t>(hs.front().rows());
    for (std::size_t s = 0; s < hs.size(); ++s) {
        for (Eigen::Index r = 0; r < hs[s].rows(); ++r) {
            for (Eigen::Index c = 0; c < hs[s].cols(); ++c) {
                if (hs[s](r, c) != cplx{}) {
                    out.entries.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r),
                                           static_cast<std::uint32_t>(c), hs[s](r, c)});
                }
            }
        }
    }
    return out;
}

/// <psi|H_s|psi> for every s.
inline std::vector<double> spec_values(const SparseSpecs &sp, std::span<const cplx> psi) {
    std::vector<double> f(sp.s_count, 0.0);
    for (const auto &e : sp.entries) {
        f[e.spec] += (std::conj(psi[e.row]) * e.value * psi[e.col]).real();
    }
    return f;
}

/// (sum_s w_s H_s) psi.
inline std::vector<cplx> apply_weighted(const SparseSpecs &sp, std::span<const double> w, std::span<const cplx> psi) {
    std::vector<cplx> out(psi.size());
    for (const auto &e : sp.entries) {
        out[e.row] += w[e.spec] * e.value * psi[e.col];
    }
    return out;
}

struct QpfProblem {
    SpecSet specs;
    XbmDecomposition decomp;
    CircuitSpec ansatz;
    std::optional<CircuitSpec> embedding;
    CircuitSpec circuit; ///< embedding (if any) followed by the ansatz
    SparseSpecs sparse;

    [[nodiscard]] std::size_t weight_count() const { return ansatz.weight_count(); }
    [[nodiscard]] std::size_t data_count() const { return embedding ? embedding->data_count() : 0; }
};

inline QpfProblem make_problem(SpecSet specs, const AnsatzConfig &ansatz,
                               const std::optional<EmbeddingConfig> &embedding = std::nullopt) {
    if (ansatz.n_qubits != specs.n_qubits) {
        throw ShapeError("ansatz has " + std::to_string(ansatz.n_qubits) + " qubits, the case needs " +
                         std::to_string(specs.n_qubits));
    }
    QpfProblem p;
    p.decomp = decompose(specs);
    p.sparse = make_sparse(specs.h);
    p.ansatz = build_ansatz(ansatz);
    p.circuit = CircuitSpec{specs.n_qubits, {}};
    if (embedding) {
        if (embedding->n_qubits != specs.n_qubits || embedding->s_len != specs.size()) {
            throw ShapeError("embedding does not match the case");
        }
        p.embedding = build_embedding(*embedding);
        p.circuit.gates = p.embedding->gates;
    }
    p.circuit.gates.insert(p.circuit.gates.end(), p.ansatz.gates.begin(), p.ansatz.gates.end());
    validate(p.circuit);
    p.specs = std::move(specs);
    return p;
}

inline StateVector prepare(const QpfProblem &p, std::span<const double> theta, std::span<const double> data = {}) {
    return run_circuit(p.circuit, theta, data);
}

namespace detail {
inline void check_b(const QpfProblem &p, std::span<const double> b) {
    if (b.size() != p.specs.size()) {
        throw ShapeError("b has length " + std::to_string(b.size()) + ", expected " + std::to_string(p.specs.size()));
    }
}

inline double sum_sq(std::span<const double> b) {
    double s = 0.0;
    for (double x : b) {
        s += x * x;
    }
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}
} // namespace detail

/// How G and G~ are obtained from a state.
enum class Evaluation {
    factored, ///< per-spec F_s from the XBM rotations, then G = b.F and G~ = F.F
    replica,  ///< G via measure_G, G~ via the two-replica pair loop
};

/// G(theta; b) and G~(theta).
inline std::pair<double, double> g_terms(const QpfProblem &p, const StateVector &psi, std::span<const double> b,
                                         Evaluation ev = Evaluation::factored) {
    if (ev == Evaluation::replica) {
        return {measure_G(psi, p.decomp, b), measure_G_tilde(psi, p.decomp)};
    }
    const auto f = measure_F_s(psi, p.decomp);
    return {detail::dot(b, f), detail::sum_sq(f)};
}

/// alpha^2 G~ - 2 alpha G + sum_s b_s^2.
inline double objective(const QpfProblem &p, std::span<const double> theta, double alpha, std::span<const double> b,
                        std::span<const double> data = {}, Evaluation ev = Evaluation::factored) {
    detail::check_b(p, b);
    const auto [g, gt] = g_terms(p, prepare(p, theta, data), b, ev);
    return alpha * alpha * gt - 2.0 * alpha * g + detail::sum_sq(b);
}

/// 2 alpha G~ - 2 G.
inline double grad_alpha(const QpfProblem &p, std::span<const double> theta, double alpha, std::span<const double> b,
                         std::span<const double> data = {}, Evaluation ev = Evaluation::factored) {
    detail::check_b(p, b);
    const auto [g, gt] = g_terms(p, prepare(p, theta, data), b, ev);
    return 2.0 * alpha * gt - 2.0 * g;
}

enum class QuarticGradient {
    shifted_replica, ///< shift one replica, hold the other at theta, double
    chain_rule,      ///< sum_s 2 F_s dF_s
};

/// Parameter-shift gradient of f with respect to the ansatz weights:
/// 2P circuit evaluations at theta +- pi/2 e_p.
inline std::vector<double> psr_grad_theta(const QpfProblem &p, std::span<const double> theta, double alpha,
                                          std::span<const double> b, std::span<const double> data = {},
                                          QuarticGradient quartic = QuarticGradient::shifted_replica,
                                          Evaluation ev = Evaluation::factored) {
    detail::check_b(p, b);
    const double shift = std::numbers::pi / 2.0;
    const StateVector psi = prepare(p, theta, data);
    const auto f0 = measure_F_s(psi, p.decomp);
    std::vector<double> grad(theta.size());
    std::vector<double> t(theta.begin(), theta.end());
    for (std::size_t k = 0; k < theta.size(); ++k) {
        t[k] = theta[k] + shift;
        const StateVector plus = prepare(p, t, data);
        t[k] = theta[k] - shift;
        const StateVector minus = prepare(p, t, data);
        t[k] = theta[k];

        double dg = 0.0;
        double dgt = 0.0;
        if (ev == Evaluation::replica) {
            dg = 0.5 * (measure_G(plus, p.decomp, b) - measure_G(minus, p.decomp, b));
            if (quartic == QuarticGradient::shifted_replica) {
                dgt = measure_G_tilde_mixed(plus, psi, p.decomp) - measure_G_tilde_mixed(minus, psi, p.decomp);
            } else {
                const auto fp = measure_F_s(plus, p.decomp);
                const auto fm = measure_F_s(minus, p.decomp);
                for (std::size_t s = 0; s < f0.size(); ++s) {
                    dgt += f0[s] * (fp[s] - fm[s]);
                }
            }
        } else {
            const auto fp = measure_F_s(plus, p.decomp);
            const auto fm = measure_F_s(minus, p.decomp);
            dg = 0.5 * (detail::dot(b, fp) - detail::dot(b, fm));
            if (quartic == QuarticGradient::shifted_replica) {
                dgt = detail::dot(fp, f0) - detail::dot(fm, f0);
            } else {
                for (std::size_t s = 0; s < f0.size(); ++s) {
                    dgt += f0[s] * (fp[s] - fm[s]);
                }
            }
        }
        grad[k] = alpha * alpha * dgt - 2.0 * alpha * dg;
    }
    return grad;
}

/// Objective, spec expectations and full gradient at one point.
struct Evaluated {
    double objective = 0.0;
    std::vector<double> f;
    std::vector<double> grad_theta;
    double grad_alpha = 0.0;
};

namespace detail {
inline void apply_generator(std::span<cplx> amps, std::size_t n, GateKind kind, std::size_t target) {
    const std::size_t mask = std::size_t{1} << (n - 1 - target);
    for (std::size_t i = 0; i < amps.size(); ++i) {
        if (i & mask) {
            continue;
        }
        const cplx a0 = amps[i];
        const cplx a1 = amps[i | mask];
        switch (kind) {
        case GateKind::RX: amps[i] = a1; amps[i | mask] = a0; break;
        case GateKind::RY: amps[i] = cplx(0, -1) * a1; amps[i | mask] = cplx(0, 1) * a0; break;
        case GateKind::RZ: amps[i | mask] = -a1; break;
        default: throw ShapeError("not a rotation");
        }
    }
}

inline void apply_inverse(std::span<cplx> amps, std::size_t n, const Gate &g, double theta) {
    if (is_rotation(g.kind)) {
        apply_kernel(amps, n, g, -theta);
    } else if (g.kind == GateKind::SDG) {
        for (int k = 0; k < 3; ++k) {
            apply_kernel(amps, n, g, 0.0);
        }
    } else {
        apply_kernel(amps, n, g, 0.0);
    }
}
} // namespace detail

/// Reverse-mode (adjoint) gradient on the simulator: one forward pass and
/// one backward pass. Equal to the parameter-shift result for Pauli
/// rotations; used when many iterations are needed.
inline Evaluated adjoint_evaluate(const QpfProblem &p, std::span<const double> theta, double alpha,
                                  std::span<const double> b, std::span<const double> data = {}) {
    detail::check_b(p, b);
    const std::size_t n = p.circuit.n_qubits;
    std::vector<double> angle(p.circuit.gates.size(), 0.0);
    std::vector<cplx> psi(std::size_t{1} << n);
    psi[0] = 1.0;
    for (std::size_t k = 0; k < p.circuit.gates.size(); ++k) {
        const auto &g = p.circuit.gates[k];
        angle[k] = g.param ? resolve(*g.param, theta, data) : 0.0;
        apply_kernel(psi, n, g, angle[k]);
    }
    Evaluated out;
    out.f = spec_values(p.sparse, psi);
    std::vector<double> w(b.size());
    for (std::size_t s = 0; s < b.size(); ++s) {
        const double r = alpha * out.f[s] - b[s];
        out.objective += r * r;
        out.grad_alpha += 2.0 * r * out.f[s];
        w[s] = 2.0 * alpha * r;
    }
    out.grad_theta.assign(theta.size(), 0.0);
    std::vector<cplx> lam = apply_weighted(p.sparse, w, psi);
    std::vector<cplx> tmp(psi.size());
    for (std::size_t k = p.circuit.gates.size(); k-- > 0;) {
        const auto &g = p.circuit.gates[k];
        if (g.param && g.param->source == ParamSource::weight) {
            tmp = psi;
            detail::apply_generator(tmp, n, g.kind, g.target);
            cplx inner{};
            for (std::size_t i = 0; i < psi.size(); ++i) {
                inner += std::conj(lam[i]) * tmp[i];
            }
            out.grad_theta[g.param->index] = inner.imag();
        }
        detail::apply_inverse(psi, n, g, angle[k]);
        detail::apply_inverse(lam, n, g, angle[k]);
    }
    return out;
}

enum class GradientMethod { parameter_shift, adjoint };

/// Starting value of alpha (alpha multiplies F_s, so it is a squared norm).
enum class AlphaInit {
    flat_profile, ///< N: the squared norm of the flat 1 pu profile
    sqrt_n,       ///< sqrt(N)
};

struct TrainConfig {
    double mu_theta = 5e-5;
    double mu_alpha = 5e-5;
    double decay = 1.0;
    std::size_t max_iters = 3'000'000;
    double grad_tol = 0.01;
    std::optional<double> alpha_cap; ///< default 1.1^2 N
    std::size_t batch_size = 0;      ///< 0 or >= T: full batch
    std::uint64_t seed = 0;
    std::size_t trace_every = 1;
    GradientMethod gradient = GradientMethod::parameter_shift;
    AlphaInit alpha_init = AlphaInit::flat_profile;
    FlatInitOptions flat_init{};
};

inline void validate(const TrainConfig &c) {
    if (!(c.mu_theta > 0.0) || !(c.mu_alpha > 0.0)) {
        throw ShapeError("step sizes must be positive");
    }
    if (!(c.decay > 0.0 && c.decay <= 1.0)) {
        throw ShapeError("decay must lie in (0, 1]");
    }
    if (!(c.grad_tol > 0.0)) {
        throw ShapeError("grad_tol must be positive");
    }
    if (c.alpha_cap && !(*c.alpha_cap > 0.0)) {
        throw ShapeError("alpha_cap must be positive");
    }
    if (c.trace_every < 1) {
        throw ShapeError("trace_every must be at least 1");
    }
}

inline double alpha_cap_for(const TrainConfig &c, std::size_t n_buses) {
    return c.alpha_cap.value_or(1.21 * static_cast<double>(n_buses));
}

inline double initial_alpha(const TrainConfig &c, std::size_t n_buses) {
    const auto n = static_cast<double>(n_buses);
    return c.alpha_init == AlphaInit::flat_profile ? n : std::sqrt(n);
}

struct TraceRecord {
    std::size_t iter = 0;
    double objective = 0.0;
    double nmae = 0.0;
    double grad_norm = 0.0;
    double alpha = 0.0;
};

struct TrainTrace {
    std::vector<TraceRecord> records;
    bool converged = false;
    std::string stop_reason;
};

inline void write_trace_csv(std::ostream &os, const TrainTrace &t) {
    os << "iter,objective,nmae,grad_norm,alpha\n";
    os << std::setprecision(17);
    for (const auto &r : t.records) {
        os << r.iter << ',' << r.objective << ',' << r.nmae << ',' << r.grad_norm << ',' << r.alpha << '\n';
    }
}

struct SolveResult {
    std::vector<double> theta;
    double alpha = 0.0;
    TrainTrace trace;
    std::size_t iterations = 0;
    double final_nmae = 0.0;
    double final_objective = 0.0;
};

namespace detail {
inline Evaluated evaluate_point(const QpfProblem &p, std::span<const double> theta, double alpha,
                                std::span<const double> b, std::span<const double> data, GradientMethod m) {
    if (m == GradientMethod::adjoint) {
        return adjoint_evaluate(p, theta, alpha, b, data);
    }
    Evaluated e;
    e.f = measure_F_s(prepare(p, theta, data), p.decomp);
    for (std::size_t s = 0; s < b.size(); ++s) {
        const double r = alpha * e.f[s] - b[s];
        e.objective += r * r;
        e.grad_alpha += 2.0 * r * e.f[s];
    }
    e.grad_theta = psr_grad_theta(p, theta, alpha, b, data);
    return e;
}

inline double scaled_nmae(std::span<const double> f, double alpha, std::span<const double> b) {
    std::vector<double> bh(f.size());
    for (std::size_t s = 0; s < f.size(); ++s) {
        bh[s] = alpha * f[s];
    }
    return nmae(bh, b);
}

inline double norm2(std::span<const double> g, double extra) {
    return std::sqrt(sum_sq(g) + extra * extra);
}
} // namespace detail

/// Projected gradient descent on one instance. Without a starting point,
/// theta comes from the flat-profile fit and alpha from cfg.alpha_init.
/// Stops when ||grad f|| < grad_tol; otherwise returns the lowest-objective
/// iterate with trace.converged = false.
inline SolveResult solve_single(const QpfProblem &p, std::span<const double> b, const TrainConfig &cfg,
                                std::optional<std::vector<double>> theta0 = std::nullopt,
                                std::optional<double> alpha0 = std::nullopt, std::span<const double> data = {}) {
    validate(cfg);
    detail::check_b(p, b);
    const double cap = alpha_cap_for(cfg, p.specs.n_buses);
    std::vector<double> theta;
    if (theta0) {
        theta = *theta0;
    } else {
        FlatInitOptions fo = cfg.flat_init;
        fo.seed = cfg.seed;
        theta = fit_flat_init(p.ansatz, p.specs.n_buses, fo).theta;
    }
    if (theta.size() != p.weight_count()) {
        throw ShapeError("theta has the wrong length");
    }
    double alpha = std::clamp(alpha0.value_or(initial_alpha(cfg, p.specs.n_buses)), 0.0, cap);

    SolveResult res;
    double best_obj = std::numeric_limits<double>::infinity();
    std::vector<double> best_theta = theta;
    double best_alpha = alpha;
    double step = 1.0;
    for (std::size_t k = 0;; ++k) {
        const auto e = detail::evaluate_point(p, theta, alpha, b, data, cfg.gradient);
        const double gn = detail::norm2(e.grad_theta, e.grad_alpha);
        if (e.objective < best_obj) {
            best_obj = e.objective;
            best_theta = theta;
            best_alpha = alpha;
        }
        const bool done = gn < cfg.grad_tol || k == cfg.max_iters;
        if (k % cfg.trace_every == 0 || done) {
            res.trace.records.push_back({k, e.objective, detail::scaled_nmae(e.f, alpha, b), gn, alpha});
        }
        if (gn < cfg.grad_tol) {
            res.trace.converged = true;
            res.trace.stop_reason = "grad_tol";
            res.theta = theta;
            res.alpha = alpha;
            res.iterations = k;
            res.final_objective = e.objective;
            res.final_nmae = res.trace.records.back().nmae;
            return res;
        }
        if (k == cfg.max_iters) {
            break;
        }
        for (std::size_t j = 0; j < theta.size(); ++j) {
            theta[j] -= cfg.mu_theta * step * e.grad_theta[j];
        }
        alpha = std::clamp(alpha - cfg.mu_alpha * step * e.grad_alpha, 0.0, cap);
        step *= cfg.decay;
    }
    res.trace.stop_reason = "max_iters";
    res.theta = best_theta;
    res.alpha = best_alpha;
    res.iterations = cfg.max_iters;
    const auto f = measure_F_s(prepare(p, res.theta, data), p.decomp);
    res.final_nmae = detail::scaled_nmae(f, res.alpha, b);
    res.final_objective = best_obj;
    return res;
}

// ---------------------------------------------------------------------------
// Data-embedded model

struct TrainResult {
    ModelArtifact artifact;
    TrainTrace trace;
};

/// Mean objective, mean NMAE and averaged gradient over the listed instances.
struct BatchEvaluation {
    double objective = 0.0;
    double nmae = 0.0;
    std::vector<double> grad_theta;
    double grad_alpha = 0.0;
};

inline BatchEvaluation evaluate_batch(const QpfProblem &p, std::span<const double> theta, double alpha,
                                      const InstanceBatch &raw, const NormalizedBatch &data,
                                      std::span<const std::size_t> picks, GradientMethod m) {
    BatchEvaluation out;
    out.grad_theta.assign(theta.size(), 0.0);
    for (const std::size_t t : picks) {
        const auto e = detail::evaluate_point(p, theta, alpha, raw.instances[t], data.instances[t], m);
        out.objective += e.objective;
        out.nmae += detail::scaled_nmae(e.f, alpha, raw.instances[t]);
        out.grad_alpha += e.grad_alpha;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            out.grad_theta[j] += e.grad_theta[j];
        }
    }
    const auto inv = 1.0 / static_cast<double>(picks.size());
    out.objective *= inv;
    out.nmae *= inv;
    out.grad_alpha *= inv;
    for (auto &g : out.grad_theta) {
        g *= inv;
    }
    return out;
}

/// Decayed gradient descent on the mean loss over the batch. Each
/// iteration uses every instance when batch_size is 0 or >= T, otherwise
/// batch_size instances drawn with replacement.
inline TrainResult train_qml(const QpfProblem &p, const InstanceBatch &raw, const NormalizedBatch &data,
                             const TrainConfig &cfg, const AnsatzConfig &ansatz_cfg, const EmbeddingConfig &embed_cfg,
                             std::optional<std::vector<double>> theta0 = std::nullopt) {
    validate(cfg);
    if (!p.embedding) {
        throw ShapeError("train_qml needs an embedding circuit");
    }
    if (raw.size() == 0 || raw.size() != data.instances.size()) {
        throw ShapeError("raw and normalized batches differ in size");
    }
    for (const auto &b : raw.instances) {
        detail::check_b(p, b);
    }
    const std::size_t t_count = raw.size();
    const double cap = alpha_cap_for(cfg, p.specs.n_buses);
    std::vector<double> theta;
    if (theta0) {
        theta = *theta0;
    } else {
        FlatInitOptions fo = cfg.flat_init;
        fo.seed = cfg.seed;
        theta = fit_flat_init(p.ansatz, p.specs.n_buses, fo).theta;
    }
    double alpha = std::clamp(initial_alpha(cfg, p.specs.n_buses), 0.0, cap);

    const bool full = cfg.batch_size == 0 || cfg.batch_size >= t_count;
    std::vector<std::size_t> picks(full ? t_count : cfg.batch_size);
    std::vector<std::size_t> all(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
        all[t] = t;
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, t_count - 1);

    TrainResult res;
    double step = 1.0;
    for (std::size_t k = 0;; ++k) {
        if (full) {
            picks = all;
        } else {
            for (auto &x : picks) {
                x = pick(rng);
            }
        }
        const auto e = evaluate_batch(p, theta, alpha, raw, data, picks, cfg.gradient);
        const double gn = detail::norm2(e.grad_theta, e.grad_alpha);
        const bool done = gn < cfg.grad_tol || k == cfg.max_iters;
        if (k % cfg.trace_every == 0 || done) {
            res.trace.records.push_back({k, e.objective, e.nmae, gn, alpha});
        }
        if (gn < cfg.grad_tol) {
            res.trace.converged = true;
            res.trace.stop_reason = "grad_tol";
            break;
        }
        if (k == cfg.max_iters) {
            res.trace.stop_reason = "max_iters";
            break;
        }
        for (std::size_t j = 0; j < theta.size(); ++j) {
            theta[j] -= cfg.mu_theta * step * e.grad_theta[j];
        }
        alpha = std::clamp(alpha - cfg.mu_alpha * step * e.grad_alpha, 0.0, cap);
        step *= cfg.decay;
    }
    res.artifact = ModelArtifact{ansatz_cfg, embed_cfg, data.normalizer, theta, alpha, p.specs.n_buses,
                                 p.specs.size()};
    return res;
}

/// Problem matching a stored artifact.
inline QpfProblem problem_for(const ModelArtifact &m, const SpecSet &specs) {
    if (m.s_len != specs.size() || m.n_buses != specs.n_buses) {
        throw ShapeError("model was trained for S=" + std::to_string(m.s_len) + ", case has S=" +
                         std::to_string(specs.size()));
    }
    return make_problem(specs, m.ansatz, m.embedding);
}

/// Per-instance NMAE of b_hat = alpha F_s(theta, normalized b_t).
inline std::vector<double> evaluate(const ModelArtifact &m, const QpfProblem &p, const InstanceBatch &instances) {
    std::vector<double> out;
    out.reserve(instances.size());
    for (const auto &b : instances.instances) {
        detail::check_b(p, b);
        std::vector<double> data;
        if (p.embedding) {
            data = m.normalizer.apply(b);
        }
        const auto f = spec_values(p.sparse, prepare(p, m.theta, data).amplitudes());
        out.push_back(detail::scaled_nmae(f, m.alpha, b));
    }
    return out;
}

} // namespace qpf
