#pragma once

// Circuit builders: the layered hardware-efficient ansatz, the data-embedding
// block, input normalization, flat-profile initialization, and the model
// artifact shared by training and evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qpf/errors.hpp"
#include "qpf/grid_model.hpp"
#include "qpf/qsim.hpp"

namespace qpf {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// L blocks of [rotation layers..., cyclic CNOT ring] after one initial
/// rotation layer. The default RY + RZ pattern gives P = n + 2nL weights.
struct AnsatzConfig {
    std::size_t n_qubits = 4;
    std::size_t layers = 3;
    GateKind initial_rotation = GateKind::RY;
    std::vector<GateKind> layer_rotations{GateKind::RY, GateKind::RZ};

    [[nodiscard]] std::size_t parameter_count() const {
        return n_qubits + n_qubits * layer_rotations.size() * layers;
    }
    bool operator==(const AnsatzConfig &) const = default;
};

/// Weight slots are numbered in application order.
inline CircuitSpec build_ansatz(const AnsatzConfig &cfg) {
    if (cfg.n_qubits < 1 || cfg.n_qubits > max_qubits) {
        throw ShapeError("ansatz width must be in [1, 12]");
    }
    if (!is_rotation(cfg.initial_rotation) ||
        !std::all_of(cfg.layer_rotations.begin(), cfg.layer_rotations.end(), is_rotation)) {
        throw ShapeError("ansatz rotation pattern must use RX, RY or RZ");
    }
    CircuitSpec c{cfg.n_qubits, {}};
    std::size_t slot = 0;
    for (std::size_t q = 0; q < cfg.n_qubits; ++q) {
        c.gates.push_back(Gate::rotation(cfg.initial_rotation, q, ParamRef::weight(slot++)));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (const auto kind : cfg.layer_rotations) {
            for (std::size_t q = 0; q < cfg.n_qubits; ++q) {
                c.gates.push_back(Gate::rotation(kind, q, ParamRef::weight(slot++)));
            }
        }
        if (cfg.n_qubits > 1) {
            for (std::size_t q = 0; q < cfg.n_qubits; ++q) {
                c.gates.push_back(Gate::cnot(q, (q + 1) % cfg.n_qubits));
            }
        }
    }
    return c;
}

struct EmbeddingConfig {
    std::size_t s_len = 0;
    std::size_t n_qubits = 4;
    std::size_t repetitions = 1;
    GateKind rotation = GateKind::RY;

    /// Gates per qubit per repetition: ceil(S / n).
    [[nodiscard]] std::size_t depth() const { return (s_len + n_qubits - 1) / n_qubits; }
    bool operator==(const EmbeddingConfig &) const = default;
};

/// Qubit q carries entries [q d, (q+1) d) of the (zero-padded) data vector.
/// Padded positions are RY(0) gates with a fixed angle.
inline CircuitSpec build_embedding(const EmbeddingConfig &cfg) {
    if (cfg.n_qubits < 1 || cfg.n_qubits > max_qubits || cfg.repetitions < 1) {
        throw ShapeError("invalid embedding configuration");
    }
    if (!is_rotation(cfg.rotation)) {
        throw ShapeError("embedding gates must be rotations");
    }
    CircuitSpec c{cfg.n_qubits, {}};
    const std::size_t d = cfg.depth();
    for (std::size_t r = 0; r < cfg.repetitions; ++r) {
        for (std::size_t q = 0; q < cfg.n_qubits; ++q) {
            for (std::size_t j = 0; j < d; ++j) {
                const std::size_t slot = q * d + j;
                c.gates.push_back(Gate::rotation(
                    cfg.rotation, q, slot < cfg.s_len ? ParamRef::data(slot) : ParamRef::constant(0.0)));
            }
        }
    }
    return c;
}

/// Per-entry affine map b -> clamp(scale (b - offset), 0, 2 pi).
struct Normalizer {
    std::vector<double> offset;
    std::vector<double> scale;

    [[nodiscard]] std::vector<double> apply(std::span<const double> b) const {
        if (b.size() != offset.size()) {
            throw ShapeError("normalizer: length mismatch");
        }
        std::vector<double> out(b.size());
        for (std::size_t k = 0; k < b.size(); ++k) {
            out[k] = std::clamp(scale[k] * (b[k] - offset[k]), 0.0, two_pi);
        }
        return out;
    }

    /// Inverse on [0, 2 pi]; constant entries map back to their single value.
    [[nodiscard]] std::vector<double> invert(std::span<const double> x) const {
        std::vector<double> out(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) {
            out[k] = scale[k] == 0.0 ? offset[k] : offset[k] + x[k] / scale[k];
        }
        return out;
    }
    bool operator==(const Normalizer &) const = default;
};

/// Min-max scaling of each entry over the batch onto [0, 2 pi].
inline Normalizer fit_normalizer(const InstanceBatch &batch) {
    if (batch.instances.empty()) {
        throw ShapeError("cannot normalize an empty batch");
    }
    const std::size_t s = batch.instances.front().size();
    Normalizer n{std::vector<double>(s), std::vector<double>(s)};
    for (std::size_t k = 0; k < s; ++k) {
        double lo = batch.instances.front()[k];
        double hi = lo;
        for (const auto &b : batch.instances) {
            lo = std::min(lo, b[k]);
            hi = std::max(hi, b[k]);
        }
        n.offset[k] = lo;
        n.scale[k] = hi > lo ? two_pi / (hi - lo) : 0.0;
    }
    return n;
}

struct NormalizedBatch {
    std::vector<std::vector<double>> instances;
    Normalizer normalizer;
};

inline NormalizedBatch normalize_data(const InstanceBatch &batch) {
    NormalizedBatch out{{}, fit_normalizer(batch)};
    out.instances.reserve(batch.size());
    for (const auto &b : batch.instances) {
        out.instances.push_back(out.normalizer.apply(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Flat-profile initialization

struct FlatInitOptions {
    std::uint64_t seed = 0;
    double step = 1.0;
    std::size_t max_iterations = 5000; ///< per start
    std::size_t max_starts = 20;
    double target = 0.99;
};

struct FlatInitResult {
    std::vector<double> theta;
    double fidelity = 0.0;
    std::size_t iterations = 0; ///< summed over all starts
    std::size_t starts = 0;
};

/// The normalized flat voltage profile: 1/sqrt(N) on the first N entries.
inline std::vector<cplx> flat_state_amplitudes(std::size_t n_buses, std::size_t n_qubits) {
    std::vector<cplx> phi(std::size_t{1} << n_qubits);
    for (std::size_t k = 0; k < n_buses; ++k) {
        phi[k] = 1.0 / std::sqrt(static_cast<double>(n_buses));
    }
    return phi;
}

inline double fidelity(const StateVector &psi, std::span<const cplx> phi) {
    cplx overlap{};
    for (std::size_t k = 0; k < phi.size(); ++k) {
        overlap += std::conj(phi[k]) * psi[k];
    }
    return std::norm(overlap);
}

/// Gradient ascent on |<psi(theta)|phi_flat>|^2 with parameter-shift
/// gradients. A start that stalls below `target` after `max_iterations` is
/// abandoned for a fresh uniform draw; the best point seen is returned.
inline FlatInitResult fit_flat_init(const CircuitSpec &ansatz, std::size_t n_buses, const FlatInitOptions &opt = {}) {
    if (n_buses < 1 || qubits_for(n_buses) != ansatz.n_qubits) {
        throw ShapeError("ansatz width does not match the bus count");
    }
    const auto phi = flat_state_amplitudes(n_buses, ansatz.n_qubits);
    const std::size_t p = ansatz.weight_count();
    auto objective = [&](const StateVector &s) { return fidelity(s, phi); };

    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> angle(0.0, two_pi);
    FlatInitResult best;
    for (std::size_t start = 0; start < opt.max_starts; ++start) {
        std::vector<double> theta(p);
        for (auto &t : theta) {
            t = angle(rng);
        }
        double fid = objective(run_circuit(ansatz, theta));
        std::size_t it = 0;
        for (; it < opt.max_iterations && fid < opt.target; ++it) {
            const auto g = parameter_shift_gradient(ansatz, theta, {}, objective);
            for (std::size_t k = 0; k < p; ++k) {
                theta[k] += opt.step * g[k];
            }
            fid = objective(run_circuit(ansatz, theta));
        }
        best.iterations += it;
        best.starts = start + 1;
        if (fid > best.fidelity || best.theta.empty()) {
            best.fidelity = fid;
            best.theta = theta;
        }
        if (best.fidelity >= opt.target) {
            break;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Model artifact

struct ModelArtifact {
    AnsatzConfig ansatz;
    std::optional<EmbeddingConfig> embedding;
    Normalizer normalizer;
    std::vector<double> theta;
    double alpha = 0.0;
    std::size_t n_buses = 0;
    std::size_t s_len = 0;
    bool operator==(const ModelArtifact &) const = default;
};

namespace detail {
inline GateKind gate_from_string(const std::string &s) {
    for (auto k : {GateKind::RX, GateKind::RY, GateKind::RZ}) {
        if (s == to_string(k)) {
            return k;
        }
    }
    throw ValidationError(ValidationCode::malformed_document, "unknown rotation '" + s + "'");
}
} // namespace detail

inline nlohmann::json artifact_to_json(const ModelArtifact &m) {
    using nlohmann::json;
    json j;
    j["model"] = "qml";
    j["n_buses"] = m.n_buses;
    j["s_len"] = m.s_len;
    json rot = json::array();
    for (auto k : m.ansatz.layer_rotations) {
        rot.push_back(to_string(k));
    }
    j["ansatz"] = {{"n_qubits", m.ansatz.n_qubits},
                   {"layers", m.ansatz.layers},
                   {"initial_rotation", to_string(m.ansatz.initial_rotation)},
                   {"layer_rotations", rot},
                   {"entanglement", "cyclic_cnot"}};
    if (m.embedding) {
        j["embedding"] = {{"s_len", m.embedding->s_len},
                          {"n_qubits", m.embedding->n_qubits},
                          {"repetitions", m.embedding->repetitions},
                          {"rotation", to_string(m.embedding->rotation)}};
    } else {
        j["embedding"] = nullptr;
    }
    j["normalizer"] = {{"offset", m.normalizer.offset}, {"scale", m.normalizer.scale}};
    j["theta"] = m.theta;
    j["alpha"] = m.alpha;
    return j;
}

inline ModelArtifact artifact_from_json(const nlohmann::json &j) {
    ModelArtifact m;
    try {
        m.n_buses = j.at("n_buses").get<std::size_t>();
        m.s_len = j.at("s_len").get<std::size_t>();
        const auto &a = j.at("ansatz");
        m.ansatz.n_qubits = a.at("n_qubits").get<std::size_t>();
        m.ansatz.layers = a.at("layers").get<std::size_t>();
        m.ansatz.initial_rotation = detail::gate_from_string(a.at("initial_rotation").get<std::string>());
        m.ansatz.layer_rotations.clear();
        for (const auto &r : a.at("layer_rotations")) {
            m.ansatz.layer_rotations.push_back(detail::gate_from_string(r.get<std::string>()));
        }
        if (!j.at("embedding").is_null()) {
            const auto &e = j.at("embedding");
            m.embedding = EmbeddingConfig{e.at("s_len").get<std::size_t>(), e.at("n_qubits").get<std::size_t>(),
                                          e.at("repetitions").get<std::size_t>(),
                                          detail::gate_from_string(e.at("rotation").get<std::string>())};
        }
        m.normalizer.offset = j.at("normalizer").at("offset").get<std::vector<double>>();
        m.normalizer.scale = j.at("normalizer").at("scale").get<std::vector<double>>();
        m.theta = j.at("theta").get<std::vector<double>>();
        m.alpha = j.at("alpha").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(ValidationCode::malformed_document, e.what());
    }
    if (m.theta.size() != m.ansatz.parameter_count()) {
        throw ValidationError(ValidationCode::malformed_document, "theta length does not match the ansatz");
    }
    return m;
}

} // namespace qpf
