#pragma once

// Extended Bell measurement (XBM) grouping of the specification matrices.
//
// Every H_s splits by index offset d = row XOR col. The offset-d part of
// any Hermitian matrix is diagonalized by one short circuit: a CNOT fan-out
// from the lowest set bit of d onto the other set bits, then H (real part)
// or SDG, H (imaginary part) on that bit. So all S matrices share the same
// C rotations V_i and
//
//     H_s = sum_i V_i^H diag(Lambda_i^s) V_i ,
//
// i.e. V_i plays the role of U_i^H. Expectations are measured by applying
// V_i to a copy of the state and reading a diagonal observable.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qpf/errors.hpp"
#include "qpf/grid_model.hpp"
#include "qpf/qsim.hpp"

namespace qpf {

enum class XbmPart { diagonal, real, imag };

inline const char *to_string(XbmPart p) {
    switch (p) {
    case XbmPart::diagonal: return "diagonal";
    case XbmPart::real: return "real";
    case XbmPart::imag: return "imag";
    }
    return "?";
}

struct XbmGroup {
    std::size_t offset = 0;
    XbmPart part = XbmPart::diagonal;
    CircuitSpec rotation; ///< V_i = U_i^H, applied to the state before measuring
    /// lambdas[s][k]: diagonal of spec s in the rotated basis (dense storage).
    std::vector<std::vector<double>> lambdas;

    struct Entry {
        std::uint32_t spec;
        std::uint32_t index;
        double value;
    };
    std::vector<Entry> nonzeros; ///< sparse view of `lambdas`

    [[nodiscard]] std::size_t nnz(std::size_t s) const {
        return static_cast<std::size_t>(
            std::count_if(lambdas[s].begin(), lambdas[s].end(), [](double v) { return v != 0.0; }));
    }
};

struct XbmDecomposition {
    std::vector<XbmGroup> groups;
    std::size_t n_qubits = 0;
    std::size_t s_count = 0;

    [[nodiscard]] std::size_t size() const { return groups.size(); }
    [[nodiscard]] std::size_t dim() const { return std::size_t{1} << n_qubits; }
};

/// Measurement circuit for one (offset, part) group.
inline CircuitSpec xbm_rotation(std::size_t offset, XbmPart part, std::size_t n_qubits) {
    CircuitSpec c{n_qubits, {}};
    if (part == XbmPart::diagonal) {
        return c;
    }
    auto qubit_of_bit = [n_qubits](std::size_t bit) { return n_qubits - 1 - bit; };
    std::size_t low = 0;
    while (((offset >> low) & 1U) == 0) {
        ++low;
    }
    for (std::size_t bit = low + 1; bit < n_qubits; ++bit) {
        if ((offset >> bit) & 1U) {
            c.gates.push_back(Gate::cnot(qubit_of_bit(low), qubit_of_bit(bit)));
        }
    }
    if (part == XbmPart::imag) {
        c.gates.push_back(Gate::fixed(GateKind::SDG, qubit_of_bit(low)));
    }
    c.gates.push_back(Gate::fixed(GateKind::H, qubit_of_bit(low)));
    return c;
}

/// Dense 2^n x 2^n matrix of a parameter-free circuit, built column by column.
inline ComplexMatrix circuit_matrix(const CircuitSpec &c) {
    const std::size_t dim = std::size_t{1} << c.n_qubits;
    ComplexMatrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < dim; ++k) {
        std::vector<cplx> e(dim);
        e[k] = 1.0;
        StateVector s(c.n_qubits, std::move(e));
        apply_circuit(s, c, {}, {});
        for (std::size_t r = 0; r < dim; ++r) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = s[r];
        }
    }
    return m;
}

/// Offset-d entries of `h`, keeping only the real or the imaginary part.
inline ComplexMatrix offset_component(const ComplexMatrix &h, std::size_t offset, XbmPart part) {
    ComplexMatrix out = ComplexMatrix::Zero(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        const auto c = static_cast<Eigen::Index>(static_cast<std::size_t>(r) ^ offset);
        const cplx v = h(r, c);
        switch (part) {
        case XbmPart::diagonal: out(r, c) = v.real(); break;
        case XbmPart::real: out(r, c) = v.real(); break;
        case XbmPart::imag: out(r, c) = cplx(0.0, v.imag()); break;
        }
    }
    return out;
}

/// Decomposes Hermitian matrices of dimension 2^n_qubits. Throws
/// NumericalError if a rotated component is not diagonal.
inline XbmDecomposition decompose(std::span<const ComplexMatrix> hs, std::size_t n_qubits) {
    const std::size_t dim = std::size_t{1} << n_qubits;
    XbmDecomposition out;
    out.n_qubits = n_qubits;
    out.s_count = hs.size();

    // offset -> whether a real / imaginary part is present in some H_s
    std::map<std::size_t, std::pair<bool, bool>> offsets;
    for (const auto &h : hs) {
        if (static_cast<std::size_t>(h.rows()) != dim || static_cast<std::size_t>(h.cols()) != dim) {
            throw ShapeError("specification matrix is not 2^n x 2^n");
        }
        for (std::size_t r = 0; r < dim; ++r) {
            for (std::size_t c = 0; c < dim; ++c) {
                const cplx v = h(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                auto &flags = offsets[r ^ c];
                if (r == c) {
                    flags.first = flags.first || v.real() != 0.0;
                } else {
                    flags.first = flags.first || v.real() != 0.0;
                    flags.second = flags.second || v.imag() != 0.0;
                }
            }
        }
    }

    auto add_group = [&](std::size_t d, XbmPart part) {
        XbmGroup g;
        g.offset = d;
        g.part = part;
        g.rotation = xbm_rotation(d, part, n_qubits);
        const ComplexMatrix v = circuit_matrix(g.rotation);
        g.lambdas.assign(hs.size(), std::vector<double>(dim, 0.0));
        for (std::size_t s = 0; s < hs.size(); ++s) {
            const ComplexMatrix comp = offset_component(hs[s], d, part);
            const double scale = std::max(1.0, comp.cwiseAbs().maxCoeff());
            const ComplexMatrix rotated = v * comp * v.adjoint();
            for (std::size_t r = 0; r < dim; ++r) {
                for (std::size_t c = 0; c < dim; ++c) {
                    const cplx x = rotated(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
                    if (r != c && std::abs(x) > 1e-12 * scale) {
                        throw NumericalError("XBM rotation for offset " + std::to_string(d) + " (" + to_string(part) +
                                             ") left an off-diagonal entry");
                    }
                    if (r == c && std::abs(x.imag()) > 1e-12 * scale) {
                        throw NumericalError("XBM diagonal is not real");
                    }
                }
                double lam = rotated(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)).real();
                if (std::abs(lam) <= 1e-14 * scale) {
                    lam = 0.0; // rounding residue from cancelling +-x/sqrt2 terms
                }
                g.lambdas[s][r] = lam;
                if (lam != 0.0) {
                    g.nonzeros.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r), lam});
                }
            }
        }
        if (!g.nonzeros.empty()) {
            out.groups.push_back(std::move(g));
        }
    };

    for (const auto &[d, flags] : offsets) {
        if (d == 0) {
            if (flags.first) {
                add_group(0, XbmPart::diagonal);
            }
            continue;
        }
        if (flags.first) {
            add_group(d, XbmPart::real);
        }
        if (flags.second) {
            add_group(d, XbmPart::imag);
        }
    }
    if (out.groups.empty()) {
        // all-zero input still needs one (trivial) group
        XbmGroup g;
        g.rotation = CircuitSpec{n_qubits, {}};
        g.lambdas.assign(hs.size(), std::vector<double>(dim, 0.0));
        out.groups.push_back(std::move(g));
    }
    return out;
}

inline XbmDecomposition decompose(const SpecSet &specs) { return decompose(specs.h, specs.n_qubits); }

/// sum_i V_i^H diag(Lambda_i^s) V_i, for checking the decomposition.
inline ComplexMatrix reconstruct(const XbmDecomposition &d, std::size_t s) {
    const auto dim = static_cast<Eigen::Index>(d.dim());
    ComplexMatrix out = ComplexMatrix::Zero(dim, dim);
    for (const auto &g : d.groups) {
        const ComplexMatrix v = circuit_matrix(g.rotation);
        Eigen::VectorXd lam = Eigen::Map<const Eigen::VectorXd>(g.lambdas[s].data(), dim);
        out += v.adjoint() * lam.cast<cplx>().asDiagonal() * v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Measurement

/// Shot budget; 0 means exact expectations.
struct ShotOptions {
    std::size_t shots = 0;
    std::uint64_t seed = 0;
};

inline StateVector rotate(const StateVector &state, const XbmGroup &g) {
    StateVector out = state;
    apply_circuit(out, g.rotation, {}, {});
    return out;
}

namespace detail {
inline void check_width(const StateVector &state, const XbmDecomposition &d) {
    if (state.n_qubits() != d.n_qubits) {
        throw ShapeError("state width differs from the decomposition");
    }
}

inline double measure_diag(const StateVector &s, std::span<const double> diag, const ShotOptions &shots,
                           std::uint64_t stream) {
    if (shots.shots == 0) {
        return exact_expectation(s, diag);
    }
    // one independent stream per measured circuit
    return sampled_expectation(s, diag, shots.shots, shots.seed * 0x9E3779B97F4A7C15ULL + stream);
}
} // namespace detail

/// Lambda_i(b) = sum_s b_s Lambda_i^s.
inline std::vector<double> combined_lambda(const XbmGroup &g, std::span<const double> b, std::size_t dim) {
    std::vector<double> out(dim, 0.0);
    for (const auto &e : g.nonzeros) {
        out[e.index] += b[e.spec] * e.value;
    }
    return out;
}

/// G = <psi| sum_s b_s H_s |psi>, one rotated copy of the state per group (serial protocol).
inline double measure_G(const StateVector &state, const XbmDecomposition &d, std::span<const double> b,
                        const ShotOptions &shots = {}) {
    detail::check_width(state, d);
    if (b.size() != d.s_count) {
        throw ShapeError("measure_G: b has length " + std::to_string(b.size()) + ", expected " +
                         std::to_string(d.s_count));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto &g = d.groups[i];
        acc += detail::measure_diag(rotate(state, g), combined_lambda(g, b, d.dim()), shots, i);
    }
    return acc;
}

/// F_s = <psi|H_s|psi> for every s, reusing the C rotated states.
inline std::vector<double> measure_F_s(const StateVector &state, const XbmDecomposition &d,
                                       const ShotOptions &shots = {}) {
    detail::check_width(state, d);
    std::vector<double> f(d.s_count, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto &g = d.groups[i];
        const StateVector r = rotate(state, g);
        if (shots.shots == 0) {
            for (const auto &e : g.nonzeros) {
                f[e.spec] += std::norm(r[e.index]) * e.value;
            }
        } else {
            for (std::size_t s = 0; s < d.s_count; ++s) {
                if (g.nnz(s)) {
                    f[s] += detail::measure_diag(r, g.lambdas[s], shots, i * d.s_count + s);
                }
            }
        }
    }
    return f;
}

/// Lambda_ij = sum_s Lambda_i^s (x) Lambda_j^s, the diagonal measured on the joint replica state.
inline std::vector<double> pair_lambda(const XbmGroup &gi, const XbmGroup &gj, std::size_t s_count, std::size_t dim) {
    std::vector<double> out(dim * dim, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        const auto &li = gi.lambdas[s];
        const auto &lj = gj.lambdas[s];
        for (std::size_t a = 0; a < dim; ++a) {
            if (li[a] == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < dim; ++c) {
                out[a * dim + c] += li[a] * lj[c];
            }
        }
    }
    return out;
}

enum class PairLoop {
    symmetric, ///< i <= j only, off-diagonal pairs doubled: C(C+1)/2 joint measurements
    full,      ///< every ordered pair: C^2 joint measurements
};

/// G~ = sum_s F_s^2 measured on two replicas |psi> (x) |psi>: for each pair
/// (i, j) rotate replica one by V_i and replica two by V_j, then measure the
/// joint state against Lambda_ij.
inline double measure_G_tilde(const StateVector &state, const XbmDecomposition &d, PairLoop loop = PairLoop::symmetric,
                              const ShotOptions &shots = {}) {
    detail::check_width(state, d);
    const std::size_t c = d.size();
    std::vector<StateVector> rotated;
    rotated.reserve(c);
    for (const auto &g : d.groups) {
        rotated.push_back(rotate(state, g));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = (loop == PairLoop::symmetric ? i : 0); j < c; ++j) {
            const double weight = (loop == PairLoop::symmetric && j != i) ? 2.0 : 1.0;
            const StateVector joint = kron_state(rotated[i], rotated[j]);
            const auto lam = pair_lambda(d.groups[i], d.groups[j], d.s_count, d.dim());
            acc += weight * detail::measure_diag(joint, lam, shots, (i * c + j) + 0x5bd1e995ULL);
        }
    }
    return acc;
}

/// sum_s F_s(psi_a) F_s(psi_b): two replicas prepared with different
/// parameters (as in a shifted-replica gradient). Exact, full C^2 pair loop.
inline double measure_G_tilde_mixed(const StateVector &a, const StateVector &b, const XbmDecomposition &d) {
    detail::check_width(a, d);
    detail::check_width(b, d);
    double acc = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const StateVector ra = rotate(a, d.groups[i]);
        for (std::size_t j = 0; j < d.size(); ++j) {
            const StateVector rb = rotate(b, d.groups[j]);
            acc += exact_expectation(kron_state(ra, rb), pair_lambda(d.groups[i], d.groups[j], d.s_count, d.dim()));
        }
    }
    return acc;
}

inline nlohmann::json decomposition_summary(const XbmDecomposition &d) {
    using nlohmann::json;
    json j;
    j["n_qubits"] = d.n_qubits;
    j["s_count"] = d.s_count;
    j["C"] = d.size();
    j["unique_pairs"] = d.size() * (d.size() + 1) / 2;
    j["groups"] = json::array();
    for (const auto &g : d.groups) {
        json gates = json::array();
        for (const auto &gate : g.rotation.gates) {
            json jg = {{"kind", to_string(gate.kind)}, {"target", gate.target}};
            if (gate.control) {
                jg["control"] = *gate.control;
            }
            gates.push_back(std::move(jg));
        }
        std::vector<std::size_t> nnz;
        for (std::size_t s = 0; s < d.s_count; ++s) {
            nnz.push_back(g.nnz(s));
        }
        j["groups"].push_back({{"offset", g.offset}, {"part", to_string(g.part)}, {"gates", gates}, {"nnz", nnz}});
    }
    return j;
}

} // namespace qpf
