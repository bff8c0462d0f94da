#pragma once

// Bus admittance matrix, quadratic power-flow specifications
// v^H H_s v = b_s, perturbed instance generation, a polar Newton-Raphson
// reference solver and the NMAE metric.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qpf/case_ingest.hpp"
#include "qpf/errors.hpp"

namespace qpf {

using cplx = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

struct AdmittanceMatrix {
    ComplexMatrix y;
    /// Non-fatal findings, e.g. isolated buses with an all-zero row.
    std::vector<std::string> diagnostics;
};

/// Pi-model assembly: series admittance, half charging per end, off-nominal
/// tap and phase shift on the from side, bus shunts on the diagonal.
inline AdmittanceMatrix build_ybus(const CaseData &c) {
    const auto n = static_cast<Eigen::Index>(c.n_buses());
    AdmittanceMatrix out;
    out.y = ComplexMatrix::Zero(n, n);
    auto &y = out.y;
    for (const auto &br : c.branches) {
        if (br.status == BranchStatus::off) {
            continue;
        }
        const auto f = static_cast<Eigen::Index>(c.index_of(br.from_bus));
        const auto t = static_cast<Eigen::Index>(c.index_of(br.to_bus));
        const cplx ys = 1.0 / cplx(br.r, br.x);
        const cplx charge(0.0, br.b_charge / 2.0);
        const cplx ratio = std::polar(br.tap, br.shift);
        y(f, f) += (ys + charge) / (br.tap * br.tap);
        y(t, t) += ys + charge;
        y(f, t) += -ys / std::conj(ratio);
        y(t, f) += -ys / ratio;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &bus = c.buses[static_cast<std::size_t>(i)];
        y(i, i) += cplx(bus.shunt_gs, bus.shunt_bs);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (n > 1 && y.row(i).cwiseAbs().maxCoeff() == 0.0) {
            out.diagnostics.push_back("bus " + std::to_string(c.buses[static_cast<std::size_t>(i)].id) +
                                      " is isolated (zero admittance row)");
        }
    }
    return out;
}

enum class SpecKind { p_inj, q_inj, vmag_sq };

inline const char *to_string(SpecKind k) {
    switch (k) {
    case SpecKind::p_inj: return "p_inj";
    case SpecKind::q_inj: return "q_inj";
    case SpecKind::vmag_sq: return "vmag_sq";
    }
    return "?";
}

struct SpecEntry {
    SpecKind kind = SpecKind::p_inj;
    int bus_id = 0;
    std::size_t bus_index = 0;
};

/// Number of qubits holding an N-bus voltage vector (at least one).
inline std::size_t qubits_for(std::size_t n_buses) {
    std::size_t q = 0;
    while ((std::size_t{1} << q) < n_buses) {
        ++q;
    }
    return std::max<std::size_t>(q, 1);
}

struct SpecSet {
    std::vector<ComplexMatrix> h; ///< S Hermitian matrices, zero-padded to dim()
    std::vector<double> b;        ///< nominal specification values (pu)
    std::vector<SpecEntry> kinds;
    std::size_t n_buses = 0;
    std::size_t n_qubits = 0;
    ComplexMatrix ybus;                ///< unpadded N x N
    std::vector<BusType> bus_types;    ///< by bus index
    std::size_t slack_index = 0;

    [[nodiscard]] std::size_t size() const { return h.size(); }
    [[nodiscard]] std::size_t dim() const { return std::size_t{1} << n_qubits; }
};

/// Injection and magnitude matrices per bus, ordered by bus then
/// slack:{vmag_sq}, pv:{p_inj, vmag_sq}, pq:{p_inj, q_inj}.
inline SpecSet build_specs(const CaseData &c, const AdmittanceMatrix &y) {
    SpecSet s;
    s.n_buses = c.n_buses();
    s.n_qubits = qubits_for(s.n_buses);
    s.ybus = y.y;
    const auto n = static_cast<Eigen::Index>(s.n_buses);
    const auto dim = static_cast<Eigen::Index>(s.dim());
    if (y.y.rows() != n || y.y.cols() != n) {
        throw ShapeError("admittance matrix does not match the case");
    }
    ComplexMatrix yp = ComplexMatrix::Zero(dim, dim);
    yp.topLeftCorner(n, n) = y.y;
    const ComplexMatrix yh = yp.adjoint();

    std::vector<double> p_net(s.n_buses), q_net(s.n_buses);
    for (std::size_t i = 0; i < s.n_buses; ++i) {
        p_net[i] = -c.buses[i].p_demand;
        q_net[i] = -c.buses[i].q_demand;
    }
    for (const auto &g : c.gens) {
        const auto i = c.index_of(g.bus);
        p_net[i] += g.p_gen;
        q_net[i] += g.q_gen;
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        const auto &bus = c.buses[static_cast<std::size_t>(i)];
        const auto idx = static_cast<std::size_t>(i);
        s.bus_types.push_back(bus.bus_type);
        if (bus.bus_type == BusType::slack) {
            s.slack_index = idx;
        }
        // e_n e_n^T Y keeps row n of Y; Y^H e_n e_n^T keeps column n of Y^H.
        ComplexMatrix row_part = ComplexMatrix::Zero(dim, dim);
        row_part.row(i) = yp.row(i);
        ComplexMatrix col_part = ComplexMatrix::Zero(dim, dim);
        col_part.col(i) = yh.col(i);
        ComplexMatrix mag = ComplexMatrix::Zero(dim, dim);
        mag(i, i) = 1.0;

        auto add = [&](SpecKind kind, ComplexMatrix m, double value) {
            s.h.push_back(std::move(m));
            s.b.push_back(value);
            s.kinds.push_back(SpecEntry{kind, bus.id, idx});
        };
        const ComplexMatrix p_mat = (col_part + row_part) / 2.0;
        const ComplexMatrix q_mat = (col_part - row_part) / cplx(0.0, 2.0);
        switch (bus.bus_type) {
        case BusType::slack:
            add(SpecKind::vmag_sq, mag, bus.v_set * bus.v_set);
            break;
        case BusType::pv:
            add(SpecKind::p_inj, p_mat, p_net[idx]);
            add(SpecKind::vmag_sq, mag, bus.v_set * bus.v_set);
            break;
        case BusType::pq:
            add(SpecKind::p_inj, p_mat, p_net[idx]);
            add(SpecKind::q_inj, q_mat, q_net[idx]);
            break;
        }
    }
    return s;
}

/// b_hat_s = v^H H_s v. `v` may be of length N or the padded dimension.
inline std::vector<double> evaluate_specs(const SpecSet &s, const ComplexVector &v) {
    ComplexVector vp = ComplexVector::Zero(static_cast<Eigen::Index>(s.dim()));
    if (v.size() == static_cast<Eigen::Index>(s.n_buses)) {
        vp.head(v.size()) = v;
    } else if (v.size() == vp.size()) {
        vp = v;
    } else {
        throw ShapeError("voltage vector length " + std::to_string(v.size()) + " does not fit the specification set");
    }
    std::vector<double> out(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) {
        out[k] = vp.dot(s.h[k] * vp).real(); // Eigen's dot conjugates the left operand
    }
    return out;
}

/// Normalized mean absolute error ||b_hat - b||_1 / ||b||_1.
inline double nmae(std::span<const double> b_hat, std::span<const double> b) {
    if (b_hat.size() != b.size()) {
        throw ShapeError("nmae: length mismatch");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        num += std::abs(b_hat[i] - b[i]);
        den += std::abs(b[i]);
    }
    if (den == 0.0) {
        throw NumericalError("nmae: reference vector has zero norm");
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// Instances

struct NoiseModel {
    double sigma_v = 0.05;      ///< pu, added to |v| before squaring
    double sigma_p_frac = 0.20; ///< fraction of |nominal| for injections
};

struct InstanceBatch {
    std::vector<std::vector<double>> instances;
    std::uint64_t seed = 0;
    double sigma_v = 0.0;
    double sigma_p_frac = 0.0;

    [[nodiscard]] std::size_t size() const { return instances.size(); }
};

namespace detail {
inline std::vector<double> perturb(const SpecSet &s, std::span<const double> base, const NoiseModel &noise,
                                   std::mt19937_64 &rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> out(base.begin(), base.end());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double z = unit(rng);
        if (s.kinds[k].kind == SpecKind::vmag_sq) {
            const double mag = std::sqrt(base[k]) + noise.sigma_v * z;
            out[k] = mag * mag;
        } else {
            out[k] = base[k] + noise.sigma_p_frac * std::abs(base[k]) * z;
        }
    }
    return out;
}
} // namespace detail

/// Draws `t_count` perturbed copies of the nominal vector. Deterministic in `seed`.
inline InstanceBatch sample_instances(const SpecSet &s, std::size_t t_count, std::uint64_t seed,
                                      const NoiseModel &noise = {}) {
    if (t_count < 1) {
        throw ShapeError("sample_instances: t_count must be at least 1");
    }
    InstanceBatch batch{{}, seed, noise.sigma_v, noise.sigma_p_frac};
    std::mt19937_64 rng(seed);
    batch.instances.reserve(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
        batch.instances.push_back(detail::perturb(s, s.b, noise, rng));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Newton-Raphson reference solver

struct VoltageSolution {
    ComplexVector v; ///< length N
    bool converged = false;
    int iterations = 0;
    double max_mismatch = std::numeric_limits<double>::infinity();
};

struct NewtonOptions {
    double tol = 1e-8;
    int max_iterations = 50;
};

/// Polar Newton-Raphson on the P/Q mismatch equations. Slack angle is pinned
/// to zero, slack and pv magnitudes are taken from the vmag_sq entries of `b`.
/// Never throws on divergence; reports converged = false instead.
inline VoltageSolution solve_newton_raphson(const SpecSet &s, std::span<const double> b, const ComplexVector &v0,
                                            const NewtonOptions &opt = {}) {
    const auto n = static_cast<Eigen::Index>(s.n_buses);
    if (b.size() != s.size()) {
        throw ShapeError("solve_newton_raphson: b has wrong length");
    }
    if (v0.size() != n) {
        throw ShapeError("solve_newton_raphson: v0 must have one entry per bus");
    }
    if (v0.cwiseAbs().maxCoeff() == 0.0) {
        throw ShapeError("solve_newton_raphson: v0 must be nonzero");
    }

    Eigen::VectorXd vm = v0.cwiseAbs();
    Eigen::VectorXd va(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        va(i) = std::arg(v0(i));
    }
    va.array() -= va(static_cast<Eigen::Index>(s.slack_index));

    Eigen::VectorXd p_spec = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd q_spec = Eigen::VectorXd::Zero(n);
    VoltageSolution out;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(s.kinds[k].bus_index);
        switch (s.kinds[k].kind) {
        case SpecKind::p_inj: p_spec(i) = b[k]; break;
        case SpecKind::q_inj: q_spec(i) = b[k]; break;
        case SpecKind::vmag_sq:
            if (!(b[k] > 0.0)) {
                out.v = v0;
                return out;
            }
            vm(i) = std::sqrt(b[k]);
            break;
        }
    }

    std::vector<Eigen::Index> ang_idx; // pv + pq
    std::vector<Eigen::Index> mag_idx; // pq
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto t = s.bus_types[static_cast<std::size_t>(i)];
        if (t != BusType::slack) {
            ang_idx.push_back(i);
        }
        if (t == BusType::pq) {
            mag_idx.push_back(i);
        }
    }
    const auto na = static_cast<Eigen::Index>(ang_idx.size());
    const auto nm = static_cast<Eigen::Index>(mag_idx.size());
    const ComplexMatrix &y = s.ybus;

    auto voltage = [&] {
        ComplexVector v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v(i) = std::polar(vm(i), va(i));
        }
        return v;
    };
    auto mismatch = [&](const ComplexVector &v) {
        const ComplexVector ibus = y * v;
        Eigen::VectorXd f(na + nm);
        for (Eigen::Index k = 0; k < na; ++k) {
            const auto i = ang_idx[static_cast<std::size_t>(k)];
            f(k) = (v(i) * std::conj(ibus(i))).real() - p_spec(i);
        }
        for (Eigen::Index k = 0; k < nm; ++k) {
            const auto i = mag_idx[static_cast<std::size_t>(k)];
            f(na + k) = (v(i) * std::conj(ibus(i))).imag() - q_spec(i);
        }
        return f;
    };

    ComplexVector v = voltage();
    Eigen::VectorXd f = mismatch(v);
    out.max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    int it = 0;
    while (out.max_mismatch >= opt.tol && it < opt.max_iterations) {
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V));  dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        const ComplexVector ibus = y * v;
        ComplexMatrix ds_dva(n, n);
        ComplexMatrix ds_dvm(n, n);
        for (Eigen::Index r = 0; r < n; ++r) {
            for (Eigen::Index c = 0; c < n; ++c) {
                const cplx unit_c = v(c) / std::abs(v(c));
                ds_dva(r, c) = cplx(0.0, 1.0) * v(r) * std::conj((r == c ? ibus(r) : cplx{}) - y(r, c) * v(c));
                ds_dvm(r, c) = v(r) * std::conj(y(r, c) * unit_c) + (r == c ? std::conj(ibus(r)) * unit_c : cplx{});
            }
        }
        Eigen::MatrixXd jac(na + nm, na + nm);
        for (Eigen::Index a = 0; a < na; ++a) {
            const auto r = ang_idx[static_cast<std::size_t>(a)];
            for (Eigen::Index k = 0; k < na; ++k) {
                jac(a, k) = ds_dva(r, ang_idx[static_cast<std::size_t>(k)]).real();
            }
            for (Eigen::Index k = 0; k < nm; ++k) {
                jac(a, na + k) = ds_dvm(r, mag_idx[static_cast<std::size_t>(k)]).real();
            }
        }
        for (Eigen::Index a = 0; a < nm; ++a) {
            const auto r = mag_idx[static_cast<std::size_t>(a)];
            for (Eigen::Index k = 0; k < na; ++k) {
                jac(na + a, k) = ds_dva(r, ang_idx[static_cast<std::size_t>(k)]).imag();
            }
            for (Eigen::Index k = 0; k < nm; ++k) {
                jac(na + a, na + k) = ds_dvm(r, mag_idx[static_cast<std::size_t>(k)]).imag();
            }
        }
        const Eigen::VectorXd dx = jac.fullPivLu().solve(-f);
        if (!dx.allFinite()) {
            break;
        }
        for (Eigen::Index k = 0; k < na; ++k) {
            va(ang_idx[static_cast<std::size_t>(k)]) += dx(k);
        }
        for (Eigen::Index k = 0; k < nm; ++k) {
            vm(mag_idx[static_cast<std::size_t>(k)]) += dx(na + k);
        }
        ++it;
        v = voltage();
        f = mismatch(v);
        out.max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        if (!std::isfinite(out.max_mismatch)) {
            break;
        }
    }
    out.v = v;
    out.iterations = it;
    out.converged = std::isfinite(out.max_mismatch) && out.max_mismatch < opt.tol && (vm.array() > 0.0).all();
    return out;
}

inline ComplexVector flat_profile(const SpecSet &s) {
    return ComplexVector::Ones(static_cast<Eigen::Index>(s.n_buses));
}

/// Rotates `v` by a global phase so the slack bus angle is zero.
inline ComplexVector align_to_slack(const SpecSet &s, const ComplexVector &v) {
    const cplx ref = v(static_cast<Eigen::Index>(s.slack_index));
    if (std::abs(ref) == 0.0) {
        return v;
    }
    return v * (std::abs(ref) / ref);
}

/// Like sample_instances, but keeps only draws for which the Newton-Raphson
/// oracle converges from a flat start; rejected draws are replaced.
inline InstanceBatch sample_feasible_instances(const SpecSet &s, std::size_t t_count, std::uint64_t seed,
                                               const NoiseModel &noise = {}, std::size_t *rejected = nullptr,
                                               std::size_t max_attempts_per_instance = 1000) {
    if (t_count < 1) {
        throw ShapeError("sample_feasible_instances: t_count must be at least 1");
    }
    InstanceBatch batch{{}, seed, noise.sigma_v, noise.sigma_p_frac};
    std::mt19937_64 rng(seed);
    std::size_t dropped = 0;
    const ComplexVector v0 = flat_profile(s);
    while (batch.instances.size() < t_count) {
        auto b = detail::perturb(s, s.b, noise, rng);
        if (solve_newton_raphson(s, b, v0).converged) {
            batch.instances.push_back(std::move(b));
        } else if (++dropped > max_attempts_per_instance * t_count) {
            throw NumericalError("sample_feasible_instances: too many infeasible draws");
        }
    }
    if (rejected) {
        *rejected = dropped;
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Export

inline std::string spec_label(const SpecEntry &e) {
    return std::string(to_string(e.kind)) + "_" + std::to_string(e.bus_id);
}

/// One header row of spec labels, then one row per instance.
inline void write_instances_csv(std::ostream &os, const SpecSet &s, const InstanceBatch &batch) {
    for (std::size_t k = 0; k < s.size(); ++k) {
        os << (k ? "," : "") << spec_label(s.kinds[k]);
    }
    os << '\n' << std::setprecision(17);
    for (const auto &row : batch.instances) {
        if (row.size() != s.size()) {
            throw ShapeError("instance length differs from the specification count");
        }
        for (std::size_t k = 0; k < row.size(); ++k) {
            os << (k ? "," : "") << row[k];
        }
        os << '\n';
    }
}

inline std::vector<std::vector<double>> read_csv_rows(std::istream &is, std::size_t expected_columns) {
    std::string line;
    std::getline(is, line); // header
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception &) {
                throw ParseError(line_no, "non-numeric CSV cell '" + cell + "'");
            }
        }
        if (row.size() != expected_columns) {
            throw ParseError(line_no, "expected " + std::to_string(expected_columns) + " columns");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json spec_set_to_json(const SpecSet &s) {
    using nlohmann::json;
    json j;
    j["n_buses"] = s.n_buses;
    j["n_qubits"] = s.n_qubits;
    j["b"] = s.b;
    j["kinds"] = json::array();
    j["h"] = json::array();
    for (std::size_t k = 0; k < s.size(); ++k) {
        j["kinds"].push_back({{"kind", to_string(s.kinds[k].kind)}, {"bus", s.kinds[k].bus_id}});
        json m = json::array();
        for (Eigen::Index r = 0; r < s.h[k].rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < s.h[k].cols(); ++c) {
                row.push_back({s.h[k](r, c).real(), s.h[k](r, c).imag()});
            }
            m.push_back(std::move(row));
        }
        j["h"].push_back(std::move(m));
    }
    return j;
}

} // namespace qpf
