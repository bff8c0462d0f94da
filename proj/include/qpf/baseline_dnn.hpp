#pragma once

// Classical baseline: a ReLU multilayer perceptron mapping specifications to
// a padded complex voltage vector, trained on the same physics residual
// sum_s (v^H H_s v - b_s)^2 as the quantum model.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qpf/errors.hpp"
#include "qpf/grid_model.hpp"
#include "qpf/solver.hpp"
#include "qpf/vqc.hpp"

namespace qpf {

struct MlpConfig {
    std::size_t input_dim = 27;
    std::vector<std::size_t> hidden{10, 10};
    std::size_t output_dim = 32; ///< real parts, then imaginary parts

    [[nodiscard]] std::vector<std::size_t> widths() const {
        std::vector<std::size_t> w{input_dim};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(output_dim);
        return w;
    }
    /// Weights plus biases over all layers.
    [[nodiscard]] std::size_t weight_count() const {
        const auto w = widths();
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) {
            n += w[l] * w[l + 1] + w[l + 1];
        }
        return n;
    }
    bool operator==(const MlpConfig &) const = default;
};

inline void validate(const MlpConfig &c) {
    for (auto w : c.widths()) {
        if (w < 1) {
            throw ShapeError("layer widths must be at least 1");
        }
    }
    if (c.output_dim % 2 != 0) {
        throw ShapeError("output_dim must be even (real and imaginary halves)");
    }
}

struct MlpWeights {
    std::vector<Eigen::MatrixXd> w; ///< w[l] is out x in
    std::vector<Eigen::VectorXd> b;
};

inline void check_shapes(const MlpConfig &c, const MlpWeights &m) {
    const auto w = c.widths();
    if (m.w.size() != w.size() - 1 || m.b.size() != w.size() - 1) {
        throw ShapeError("weights have the wrong layer count");
    }
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        if (static_cast<std::size_t>(m.w[l].rows()) != w[l + 1] || static_cast<std::size_t>(m.w[l].cols()) != w[l] ||
            static_cast<std::size_t>(m.b[l].size()) != w[l + 1]) {
            throw ShapeError("layer " + std::to_string(l) + " has the wrong shape");
        }
    }
}

inline MlpWeights zero_weights(const MlpConfig &c) {
    validate(c);
    const auto w = c.widths();
    MlpWeights m;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        m.w.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(w[l + 1]), static_cast<Eigen::Index>(w[l])));
        m.b.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(w[l + 1])));
    }
    return m;
}

/// Weights and biases uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline MlpWeights init_weights(const MlpConfig &c, std::uint64_t seed) {
    MlpWeights m = zero_weights(c);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < m.w.size(); ++l) {
        const double r = 1.0 / std::sqrt(static_cast<double>(m.w[l].cols()));
        std::uniform_real_distribution<double> u(-r, r);
        for (Eigen::Index i = 0; i < m.w[l].rows(); ++i) {
            for (Eigen::Index j = 0; j < m.w[l].cols(); ++j) {
                m.w[l](i, j) = u(rng);
            }
        }
        for (Eigen::Index i = 0; i < m.b[l].size(); ++i) {
            m.b[l](i) = u(rng);
        }
    }
    return m;
}

namespace detail {
struct ForwardCache {
    std::vector<Eigen::VectorXd> act; ///< act[0] = input, act[l+1] = output of layer l
};

inline ForwardCache forward_cache(const MlpWeights &m, const Eigen::VectorXd &x) {
    ForwardCache c;
    c.act.push_back(x);
    for (std::size_t l = 0; l < m.w.size(); ++l) {
        Eigen::VectorXd z = m.w[l] * c.act.back() + m.b[l];
        if (l + 1 < m.w.size()) {
            z = z.cwiseMax(0.0);
        }
        c.act.push_back(std::move(z));
    }
    return c;
}

inline ComplexVector to_complex(const Eigen::VectorXd &out) {
    const Eigen::Index half = out.size() / 2;
    ComplexVector v(half);
    for (Eigen::Index k = 0; k < half; ++k) {
        v(k) = cplx(out(k), out(k + half));
    }
    return v;
}
} // namespace detail

/// Padded complex voltage estimate for input x.
inline ComplexVector forward(const MlpConfig &c, const MlpWeights &m, std::span<const double> x) {
    check_shapes(c, m);
    if (x.size() != c.input_dim) {
        throw ShapeError("input has length " + std::to_string(x.size()) + ", expected " + std::to_string(c.input_dim));
    }
    const Eigen::VectorXd xin = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return detail::to_complex(detail::forward_cache(m, xin).act.back());
}

/// v^H H_s v for every s.
inline std::vector<double> predicted_specs(const SparseSpecs &sp, const ComplexVector &v) {
    if (static_cast<std::size_t>(v.size()) != sp.dim) {
        throw ShapeError("voltage vector does not match the padded dimension");
    }
    return spec_values(sp, std::span<const cplx>(v.data(), static_cast<std::size_t>(v.size())));
}

struct DnnLoss {
    double loss = 0.0;
    std::vector<double> b_hat;
    MlpWeights grad; ///< same shapes as the weights
};

/// Loss sum_s (v^H H_s v - b_s)^2 for one instance and its gradient by backpropagation.
inline DnnLoss loss_and_grad(const MlpConfig &c, const MlpWeights &m, const SparseSpecs &sp, std::span<const double> x,
                             std::span<const double> b) {
    check_shapes(c, m);
    if (x.size() != c.input_dim || b.size() != sp.s_count) {
        throw ShapeError("instance length mismatch");
    }
    const Eigen::VectorXd xin = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const auto cache = detail::forward_cache(m, xin);
    const ComplexVector v = detail::to_complex(cache.act.back());
    const std::span<const cplx> vs(v.data(), static_cast<std::size_t>(v.size()));

    DnnLoss out;
    out.b_hat = spec_values(sp, vs);
    std::vector<double> w(b.size());
    for (std::size_t s = 0; s < b.size(); ++s) {
        const double r = out.b_hat[s] - b[s];
        out.loss += r * r;
        w[s] = 2.0 * r;
    }
    // d(v^H H v)/d Re v = 2 Re(H v), d/d Im v = 2 Im(H v)
    const auto hv = apply_weighted(sp, w, vs);
    const Eigen::Index half = v.size();
    Eigen::VectorXd delta(2 * half);
    for (Eigen::Index k = 0; k < half; ++k) {
        delta(k) = 2.0 * hv[static_cast<std::size_t>(k)].real();
        delta(k + half) = 2.0 * hv[static_cast<std::size_t>(k)].imag();
    }
    out.grad = zero_weights(c);
    for (std::size_t l = m.w.size(); l-- > 0;) {
        out.grad.w[l] = delta * cache.act[l].transpose();
        out.grad.b[l] = delta;
        if (l > 0) {
            Eigen::VectorXd back = m.w[l].transpose() * delta;
            for (Eigen::Index i = 0; i < back.size(); ++i) {
                if (cache.act[l](i) <= 0.0) {
                    back(i) = 0.0;
                }
            }
            delta = std::move(back);
        }
    }
    return out;
}

struct DnnModel {
    MlpConfig config;
    MlpWeights weights;
    Normalizer normalizer;
};

struct DnnTrainResult {
    DnnModel model;
    TrainTrace trace;
};

/// Decayed gradient descent on the mean physics loss. Uses cfg.mu_theta as
/// the step size; the alpha column of the trace is 0. Throws NumericalError
/// when the objective exceeds 1e3 times its initial value.
inline DnnTrainResult train_dnn(const MlpConfig &mc, const SpecSet &specs, const InstanceBatch &raw,
                                const NormalizedBatch &data, const TrainConfig &cfg) {
    validate(cfg);
    validate(mc);
    if (mc.input_dim != specs.size() || mc.output_dim != 2 * specs.dim()) {
        throw ShapeError("network shape does not match the case");
    }
    if (raw.size() == 0 || raw.size() != data.instances.size()) {
        throw ShapeError("raw and normalized batches differ in size");
    }
    const SparseSpecs sp = make_sparse(specs.h);
    MlpWeights m = init_weights(mc, cfg.seed);
    const std::size_t t_count = raw.size();
    const bool full = cfg.batch_size == 0 || cfg.batch_size >= t_count;
    std::vector<std::size_t> picks(full ? t_count : cfg.batch_size);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, t_count - 1);

    DnnTrainResult res;
    double step = 1.0;
    double initial = -1.0;
    for (std::size_t k = 0;; ++k) {
        for (std::size_t i = 0; i < picks.size(); ++i) {
            picks[i] = full ? i : pick(rng);
        }
        MlpWeights g = zero_weights(mc);
        double obj = 0.0;
        double err = 0.0;
        for (const auto t : picks) {
            const auto e = loss_and_grad(mc, m, sp, data.instances[t], raw.instances[t]);
            obj += e.loss;
            err += nmae(e.b_hat, raw.instances[t]);
            for (std::size_t l = 0; l < g.w.size(); ++l) {
                g.w[l] += e.grad.w[l];
                g.b[l] += e.grad.b[l];
            }
        }
        const double inv = 1.0 / static_cast<double>(picks.size());
        obj *= inv;
        err *= inv;
        double gn2 = 0.0;
        for (std::size_t l = 0; l < g.w.size(); ++l) {
            g.w[l] *= inv;
            g.b[l] *= inv;
            gn2 += g.w[l].squaredNorm() + g.b[l].squaredNorm();
        }
        const double gn = std::sqrt(gn2);
        if (initial < 0.0) {
            initial = obj;
        }
        if (!std::isfinite(obj) || obj > 1e3 * initial) {
            throw NumericalError("DNN training diverged at iteration " + std::to_string(k) + ": objective " +
                                 std::to_string(obj) + " vs initial " + std::to_string(initial) +
                                 "; reduce the step size");
        }
        const bool done = gn < cfg.grad_tol || k == cfg.max_iters;
        if (k % cfg.trace_every == 0 || done) {
            res.trace.records.push_back({k, obj, err, gn, 0.0});
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
        for (std::size_t l = 0; l < g.w.size(); ++l) {
            m.w[l] -= cfg.mu_theta * step * g.w[l];
            m.b[l] -= cfg.mu_theta * step * g.b[l];
        }
        step *= cfg.decay;
    }
    res.model = DnnModel{mc, std::move(m), data.normalizer};
    return res;
}

/// Per-instance NMAE of b_hat_s = v^H H_s v.
inline std::vector<double> evaluate_dnn(const DnnModel &model, const SpecSet &specs, const InstanceBatch &instances) {
    if (model.config.input_dim != specs.size() || model.config.output_dim != 2 * specs.dim()) {
        throw ShapeError("network shape does not match the case");
    }
    const SparseSpecs sp = make_sparse(specs.h);
    std::vector<double> out;
    out.reserve(instances.size());
    for (const auto &b : instances.instances) {
        const auto x = model.normalizer.apply(b);
        out.push_back(nmae(predicted_specs(sp, forward(model.config, model.weights, x)), b));
    }
    return out;
}

inline nlohmann::json dnn_to_json(const DnnModel &m) {
    using nlohmann::json;
    json j;
    j["model"] = "dnn";
    j["config"] = {{"input_dim", m.config.input_dim},
                   {"hidden", m.config.hidden},
                   {"output_dim", m.config.output_dim},
                   {"activation", "relu"}};
    j["weight_count"] = m.config.weight_count();
    j["normalizer"] = {{"offset", m.normalizer.offset}, {"scale", m.normalizer.scale}};
    j["layers"] = json::array();
    for (std::size_t l = 0; l < m.weights.w.size(); ++l) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.weights.w[l].rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(m.weights.w[l].cols()));
            for (Eigen::Index k = 0; k < m.weights.w[l].cols(); ++k) {
                row[static_cast<std::size_t>(k)] = m.weights.w[l](i, k);
            }
            rows.push_back(row);
        }
        std::vector<double> bias(m.weights.b[l].data(), m.weights.b[l].data() + m.weights.b[l].size());
        j["layers"].push_back({{"weights", rows}, {"bias", bias}});
    }
    return j;
}

inline DnnModel dnn_from_json(const nlohmann::json &j) {
    DnnModel m;
    try {
        if (j.at("model").get<std::string>() != "dnn") {
            throw ValidationError(ValidationCode::malformed_document, "not a dnn artifact");
        }
        const auto &c = j.at("config");
        m.config.input_dim = c.at("input_dim").get<std::size_t>();
        m.config.hidden = c.at("hidden").get<std::vector<std::size_t>>();
        m.config.output_dim = c.at("output_dim").get<std::size_t>();
        m.normalizer.offset = j.at("normalizer").at("offset").get<std::vector<double>>();
        m.normalizer.scale = j.at("normalizer").at("scale").get<std::vector<double>>();
        for (const auto &layer : j.at("layers")) {
            const auto rows = layer.at("weights").get<std::vector<std::vector<double>>>();
            const auto bias = layer.at("bias").get<std::vector<double>>();
            const auto cols = rows.empty() ? 0 : rows.front().size();
            Eigen::MatrixXd w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != cols) {
                    throw ValidationError(ValidationCode::malformed_document, "ragged weight matrix");
                }
                for (std::size_t k = 0; k < cols; ++k) {
                    w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
                }
            }
            m.weights.w.push_back(std::move(w));
            m.weights.b.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size())));
        }
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(ValidationCode::malformed_document, e.what());
    }
    try {
        validate(m.config);
        check_shapes(m.config, m.weights);
    } catch (const ShapeError &e) {
        throw ValidationError(ValidationCode::malformed_document, e.what());
    }
    return m;
}

} // namespace qpf
