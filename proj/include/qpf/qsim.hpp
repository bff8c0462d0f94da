#pragma once

// Exact statevector simulation over at most 12 qubits.
//
// Conventions:
//  * qubit 0 is the most significant bit of the basis index, i.e. qubit q
//    acts on bit (n - 1 - q);
//  * rotations are half-angle, R_sigma(t) = exp(-i t sigma / 2), so the
//    +-pi/2 parameter-shift rule is exact for every rotation gate.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qpf/errors.hpp"

namespace qpf {

using cplx = std::complex<double>;

inline constexpr std::size_t max_qubits = 12;

enum class GateKind { RX, RY, RZ, X, H, SDG, CNOT };

inline constexpr bool is_rotation(GateKind k) {
    return k == GateKind::RX || k == GateKind::RY || k == GateKind::RZ;
}

inline const char *to_string(GateKind k) {
    switch (k) {
    case GateKind::RX: return "RX";
    case GateKind::RY: return "RY";
    case GateKind::RZ: return "RZ";
    case GateKind::X: return "X";
    case GateKind::H: return "H";
    case GateKind::SDG: return "SDG";
    case GateKind::CNOT: return "CNOT";
    }
    return "?";
}

enum class ParamSource { fixed, weight, data };

/// Where a rotation angle comes from: a constant, or slot `index` of the
/// weight or data vector handed to run_circuit.
struct ParamRef {
    ParamSource source = ParamSource::fixed;
    std::size_t index = 0;
    double value = 0.0;

    static ParamRef weight(std::size_t k) { return {ParamSource::weight, k, 0.0}; }
    static ParamRef data(std::size_t k) { return {ParamSource::data, k, 0.0}; }
    static ParamRef constant(double v) { return {ParamSource::fixed, 0, v}; }
};

struct Gate {
    GateKind kind = GateKind::X;
    std::size_t target = 0;
    std::optional<std::size_t> control; ///< CNOT only
    std::optional<ParamRef> param;      ///< rotations only

    static Gate rotation(GateKind k, std::size_t q, ParamRef p) { return Gate{k, q, std::nullopt, p}; }
    static Gate fixed(GateKind k, std::size_t q) { return Gate{k, q, std::nullopt, std::nullopt}; }
    static Gate cnot(std::size_t c, std::size_t t) { return Gate{GateKind::CNOT, t, c, std::nullopt}; }
};

struct CircuitSpec {
    std::size_t n_qubits = 1;
    std::vector<Gate> gates;

    [[nodiscard]] std::size_t slot_count(ParamSource src) const {
        std::size_t n = 0;
        for (const auto &g : gates) {
            if (g.param && g.param->source == src) {
                n = std::max(n, g.param->index + 1);
            }
        }
        return n;
    }
    [[nodiscard]] std::size_t weight_count() const { return slot_count(ParamSource::weight); }
    [[nodiscard]] std::size_t data_count() const { return slot_count(ParamSource::data); }

    /// Appends `other` (same width); slot indices keep their own namespaces.
    CircuitSpec &append(const CircuitSpec &other) {
        if (other.n_qubits != n_qubits) {
            throw ShapeError("cannot append circuits of different width");
        }
        gates.insert(gates.end(), other.gates.begin(), other.gates.end());
        return *this;
    }
};

inline void validate_gate(const Gate &g, std::size_t n_qubits) {
    if (g.target >= n_qubits) {
        throw ShapeError(std::string(to_string(g.kind)) + " target " + std::to_string(g.target) + " out of range");
    }
    if (g.kind == GateKind::CNOT) {
        if (!g.control || *g.control >= n_qubits) {
            throw ShapeError("CNOT control missing or out of range");
        }
        if (*g.control == g.target) {
            throw ShapeError("CNOT control equals target");
        }
    } else if (g.control) {
        throw ShapeError(std::string(to_string(g.kind)) + " takes no control qubit");
    }
}

/// Checks qubit indices and the one-gate-per-weight-slot rule that the
/// parameter-shift gradient relies on.
inline void validate(const CircuitSpec &c) {
    if (c.n_qubits < 1 || c.n_qubits > max_qubits) {
        throw ShapeError("circuit width must be in [1, 12]");
    }
    std::vector<int> seen(c.weight_count(), 0);
    for (const auto &g : c.gates) {
        validate_gate(g, c.n_qubits);
        if (g.param.has_value() != is_rotation(g.kind)) {
            throw ShapeError(std::string(to_string(g.kind)) + " parameter binding mismatch");
        }
        if (g.param && g.param->source == ParamSource::weight && seen[g.param->index]++) {
            throw ShapeError("weight slot " + std::to_string(g.param->index) + " bound to more than one gate");
        }
    }
}

/// Gate kernel on raw amplitudes (need not be normalized); no bounds checks.
inline void apply_kernel(std::span<cplx> amps, std::size_t n, const Gate &g, double theta) {
    const std::size_t mask = std::size_t{1} << (n - 1 - g.target);
    const std::size_t dim = amps.size();
    switch (g.kind) {
    case GateKind::CNOT: {
        const std::size_t cmask = std::size_t{1} << (n - 1 - *g.control);
        for (std::size_t i = 0; i < dim; ++i) {
            if ((i & mask) == 0 && (i & cmask) != 0) {
                std::swap(amps[i], amps[i | mask]);
            }
        }
        return;
    }
    case GateKind::X:
        for (std::size_t i = 0; i < dim; ++i) {
            if ((i & mask) == 0) {
                std::swap(amps[i], amps[i | mask]);
            }
        }
        return;
    case GateKind::SDG:
        for (std::size_t i = 0; i < dim; ++i) {
            if (i & mask) {
                amps[i] = cplx(amps[i].imag(), -amps[i].real()); // * -i
            }
        }
        return;
    default: break;
    }
    cplx m00, m01, m10, m11;
    const double c = std::cos(theta / 2.0);
    const double s = std::sin(theta / 2.0);
    switch (g.kind) {
    case GateKind::RX: m00 = c; m01 = cplx(0, -s); m10 = cplx(0, -s); m11 = c; break;
    case GateKind::RY: m00 = c; m01 = -s; m10 = s; m11 = c; break;
    case GateKind::RZ: m00 = cplx(c, -s); m01 = 0; m10 = 0; m11 = cplx(c, s); break;
    case GateKind::H: {
        const double r = 1.0 / std::numbers::sqrt2;
        m00 = r; m01 = r; m10 = r; m11 = -r;
        break;
    }
    default: return;
    }
    for (std::size_t i = 0; i < dim; ++i) {
        if ((i & mask) == 0) {
            const cplx a0 = amps[i];
            const cplx a1 = amps[i | mask];
            amps[i] = m00 * a0 + m01 * a1;
            amps[i | mask] = m10 * a0 + m11 * a1;
        }
    }
}

class StateVector {
  public:
    /// |0...0> on `n` qubits.
    explicit StateVector(std::size_t n) : n_(n) {
        if (n < 1 || n > max_qubits) {
            throw ShapeError("qubit count must be in [1, 12], got " + std::to_string(n));
        }
        amps_.assign(std::size_t{1} << n, cplx{});
        amps_[0] = 1.0;
    }

    /// Wraps explicit amplitudes; they must have length 2^n and unit norm (1e-10).
    StateVector(std::size_t n, std::vector<cplx> amps) : n_(n), amps_(std::move(amps)) {
        if (n < 1 || n > max_qubits || amps_.size() != (std::size_t{1} << n)) {
            throw ShapeError("amplitude vector length must be 2^n");
        }
        if (std::abs(norm() - 1.0) > 1e-10) {
            throw ShapeError("state is not normalized");
        }
    }

    [[nodiscard]] std::size_t n_qubits() const noexcept { return n_; }
    [[nodiscard]] std::size_t dim() const noexcept { return amps_.size(); }
    [[nodiscard]] std::span<const cplx> amplitudes() const noexcept { return amps_; }
    [[nodiscard]] const cplx &operator[](std::size_t k) const { return amps_[k]; }

    [[nodiscard]] double norm() const {
        double s = 0.0;
        for (const auto &a : amps_) {
            s += std::norm(a);
        }
        return std::sqrt(s);
    }

    [[nodiscard]] std::vector<double> probabilities() const {
        std::vector<double> p(amps_.size());
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] = std::norm(amps_[k]);
        }
        return p;
    }

    /// In-place gate application on amplitude pairs; no 2^n x 2^n matrix is formed.
    void apply(const Gate &g, std::optional<double> value = std::nullopt) {
        validate_gate(g, n_);
        if (is_rotation(g.kind) != value.has_value()) {
            throw ShapeError(std::string(to_string(g.kind)) + (value ? " takes no parameter" : " needs a parameter"));
        }
        apply_unchecked(g, value.value_or(0.0));
    }

    void apply_unchecked(const Gate &g, double theta) { apply_kernel(amps_, n_, g, theta); }

  private:
    std::size_t n_;
    std::vector<cplx> amps_;
};

inline StateVector zero_state(std::size_t n) { return StateVector(n); }

inline StateVector apply_gate(StateVector state, const Gate &g, std::optional<double> value = std::nullopt) {
    state.apply(g, value);
    return state;
}

inline double resolve(const ParamRef &p, std::span<const double> weights, std::span<const double> data) {
    switch (p.source) {
    case ParamSource::fixed: return p.value;
    case ParamSource::weight: return weights[p.index];
    case ParamSource::data: return data[p.index];
    }
    return 0.0;
}

/// Applies every gate of `circ` to `state` in order.
inline void apply_circuit(StateVector &state, const CircuitSpec &circ, std::span<const double> weights,
                          std::span<const double> data) {
    if (circ.n_qubits != state.n_qubits()) {
        throw ShapeError("circuit width differs from state width");
    }
    for (const auto &g : circ.gates) {
        state.apply_unchecked(g, g.param ? resolve(*g.param, weights, data) : 0.0);
    }
}

/// V(weights) W(data) |0>: sequential application over the zero state.
inline StateVector run_circuit(const CircuitSpec &circ, std::span<const double> weights,
                               std::span<const double> data = {}) {
    validate(circ);
    if (weights.size() != circ.weight_count()) {
        throw ShapeError("expected " + std::to_string(circ.weight_count()) + " weights, got " +
                         std::to_string(weights.size()));
    }
    if (data.size() != circ.data_count()) {
        throw ShapeError("expected " + std::to_string(circ.data_count()) + " data values, got " +
                         std::to_string(data.size()));
    }
    StateVector s(circ.n_qubits);
    apply_circuit(s, circ, weights, data);
    return s;
}

/// |a> (x) |b>; `a` occupies the leading (most significant) qubits.
inline StateVector kron_state(const StateVector &a, const StateVector &b) {
    const std::size_t n = a.n_qubits() + b.n_qubits();
    if (n > max_qubits) {
        throw ShapeError("joint state would exceed 12 qubits");
    }
    std::vector<cplx> out(a.dim() * b.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) {
        for (std::size_t j = 0; j < b.dim(); ++j) {
            out[i * b.dim() + j] = a[i] * b[j];
        }
    }
    double nrm = 0.0;
    for (const auto &x : out) {
        nrm += std::norm(x);
    }
    nrm = std::sqrt(nrm);
    for (auto &x : out) {
        x /= nrm; // strip accumulated rounding so the invariant check holds
    }
    return StateVector(n, std::move(out));
}

/// sum_k |psi_k|^2 diag_k: the expectation of a diagonal observable.
inline double exact_expectation(const StateVector &state, std::span<const double> diag) {
    if (diag.size() != state.dim()) {
        throw ShapeError("diagonal length " + std::to_string(diag.size()) + " differs from state dimension " +
                         std::to_string(state.dim()));
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < diag.size(); ++k) {
        acc += std::norm(state[k]) * diag[k];
    }
    return acc;
}

/// Monte-Carlo estimate from `shots` computational-basis samples.
inline double sampled_expectation(const StateVector &state, std::span<const double> diag, std::size_t shots,
                                  std::uint64_t seed) {
    if (diag.size() != state.dim()) {
        throw ShapeError("diagonal length differs from state dimension");
    }
    if (shots < 1) {
        throw ShapeError("shots must be at least 1");
    }
    const auto p = state.probabilities();
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    std::mt19937_64 rng(seed);
    double acc = 0.0;
    for (std::size_t k = 0; k < shots; ++k) {
        acc += diag[pick(rng)];
    }
    return acc / static_cast<double>(shots);
}

/// Exact gradient of `objective(run_circuit(circ, w, data))` with respect to
/// each weight via the two-term shift rule at +-pi/2.
inline std::vector<double> parameter_shift_gradient(const CircuitSpec &circ, std::span<const double> weights,
                                                    std::span<const double> data,
                                                    const std::function<double(const StateVector &)> &objective) {
    std::vector<double> w(weights.begin(), weights.end());
    std::vector<double> grad(w.size());
    const double shift = std::numbers::pi / 2.0;
    for (std::size_t p = 0; p < w.size(); ++p) {
        const double keep = w[p];
        w[p] = keep + shift;
        const double plus = objective(run_circuit(circ, w, data));
        w[p] = keep - shift;
        const double minus = objective(run_circuit(circ, w, data));
        w[p] = keep;
        grad[p] = 0.5 * (plus - minus);
    }
    return grad;
}

/// index,re,im rows, for test fixtures.
inline void write_amplitudes_csv(std::ostream &os, const StateVector &s) {
    os << "index,re,im\n" << std::setprecision(17);
    for (std::size_t k = 0; k < s.dim(); ++k) {
        os << k << ',' << s[k].real() << ',' << s[k].imag() << '\n';
    }
}

} // namespace qpf
