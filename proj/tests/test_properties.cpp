#include <catch_amalgamated.hpp>

#include <numbers>
#include <set>

#include "qpf/baseline_dnn.hpp"
#include "qpf/solver.hpp"
#include "test_support.hpp"

using namespace qpf;
using qpf_test::Mat;

namespace {

Gate random_gate(std::size_t n, std::mt19937_64 &rng, std::size_t &slot) {
    static const GateKind kinds[] = {GateKind::RX, GateKind::RY, GateKind::RZ, GateKind::X,
                                     GateKind::H,  GateKind::SDG, GateKind::CNOT};
    std::uniform_int_distribution<std::size_t> pick_kind(0, n > 1 ? 6 : 5);
    std::uniform_int_distribution<std::size_t> pick_q(0, n - 1);
    const auto k = kinds[pick_kind(rng)];
    const auto q = pick_q(rng);
    if (k == GateKind::CNOT) {
        auto t = pick_q(rng);
        while (t == q) {
            t = pick_q(rng);
        }
        return Gate::cnot(q, t);
    }
    if (is_rotation(k)) {
        return Gate::rotation(k, q, ParamRef::weight(slot++));
    }
    return Gate::fixed(k, q);
}

double sq_norm(const StateVector &s) {
    double n = 0.0;
    for (const auto &a : s.amplitudes()) {
        n += std::norm(a);
    }
    return n;
}

const QpfProblem &problem14() {
    static const QpfProblem p = make_problem(qpf_test::specs14(), AnsatzConfig{4, 3});
    return p;
}

} // namespace

// ---------------------------------------------------------------------------
// state vector

TEST_CASE("every gate preserves the state norm") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> angle(-10.0, 10.0);
    for (std::size_t n = 1; n <= 5; ++n) {
        auto s = qpf_test::random_state(n, rng);
        std::size_t slot = 0;
        for (int k = 0; k < 200; ++k) {
            const auto g = random_gate(n, rng, slot);
            s.apply(g, is_rotation(g.kind) ? std::optional<double>(angle(rng)) : std::nullopt);
            REQUIRE(std::abs(sq_norm(s) - 1.0) < 1e-10);
        }
    }
}

TEST_CASE("dense gate matrices are unitary") {
    for (auto k : {GateKind::RX, GateKind::RY, GateKind::RZ, GateKind::X, GateKind::H, GateKind::SDG}) {
        for (double t : {0.0, 0.7, -2.3, 5.0}) {
            const Mat u = qpf_test::dense_gate(Gate::rotation(k, 1, ParamRef::constant(0.0)), 3, t);
            CHECK((u.adjoint() * u - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    const Mat c = qpf_test::dense_gate(Gate::cnot(2, 0), 3);
    CHECK((c.adjoint() * c - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("run_circuit equals the dense product on 100 random circuits") {
    std::mt19937_64 rng(22);
    std::uniform_int_distribution<std::size_t> width(1, 4);
    std::uniform_int_distribution<std::size_t> depth(1, 40);
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = width(rng);
        CircuitSpec c{n, {}};
        std::size_t slot = 0;
        const auto d = depth(rng);
        for (std::size_t k = 0; k < d; ++k) {
            c.gates.push_back(random_gate(n, rng, slot));
        }
        const auto w = qpf_test::random_angles(slot, rng);
        const Eigen::VectorXcd expect = qpf_test::dense_circuit(c, w).col(0);
        REQUIRE((qpf_test::as_vector(run_circuit(c, w)) - expect).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("kron_state distribution is the product of the marginals") {
    std::mt19937_64 rng(23);
    const auto a = qpf_test::random_state(2, rng);
    const auto b = qpf_test::random_state(2, rng);
    const auto pa = a.probabilities();
    const auto pb = b.probabilities();
    const auto pab = kron_state(a, b).probabilities();
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(std::abs(pab[i * 4 + j] - pa[i] * pb[j]) < 1e-15);
        }
    }
}

TEST_CASE("sampled expectations approach the exact value as shots grow") {
    std::mt19937_64 rng(24);
    const auto s = qpf_test::random_state(3, rng);
    const std::vector<double> diag{2, -1, 0.5, 3, -2, 1, 0, -0.5};
    const double exact = exact_expectation(s, diag);
    double var = 0.0;
    const auto p = s.probabilities();
    for (std::size_t k = 0; k < 8; ++k) {
        var += p[k] * (diag[k] - exact) * (diag[k] - exact);
    }
    for (std::size_t shots : {100u, 10000u, 1000000u}) {
        const double err = std::abs(sampled_expectation(s, diag, shots, shots) - exact);
        CHECK(err < 5.0 * std::sqrt(var / static_cast<double>(shots)));
    }
}

// ---------------------------------------------------------------------------
// case data and grid model

TEST_CASE("per-unit conversion scales every power column by base_mva") {
    std::mt19937_64 rng(25);
    std::uniform_real_distribution<double> u(-300.0, 300.0);
    std::uniform_real_distribution<double> base(1.0, 1000.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double mva = base(rng);
        double raw[8];
        for (auto &r : raw) {
            r = u(rng);
        }
        std::ostringstream t;
        t.precision(17);
        t << "mpc.baseMVA = " << mva << ";\nmpc.bus = [\n"
          << "1 3 " << raw[0] << ' ' << raw[1] << ' ' << raw[2] << ' ' << raw[3] << " 1 1 0;\n"
          << "2 1 " << raw[4] << ' ' << raw[5] << " 0 0 1 1 0;\n];\n"
          << "mpc.gen = [\n1 " << raw[6] << ' ' << raw[7] << " 0 0 1 100 1;\n];\n"
          << "mpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1;\n];\n";
        const auto c = parse_case(t.str());
        const double parsed[8] = {c.buses[0].p_demand, c.buses[0].q_demand, c.buses[0].shunt_gs,
                                  c.buses[0].shunt_bs, c.buses[1].p_demand, c.buses[1].q_demand,
                                  c.gens[0].p_gen,     c.gens[0].q_gen};
        for (int k = 0; k < 8; ++k) {
            CHECK(std::abs(parsed[k] * c.base_mva - raw[k]) < 1e-12 * std::max(1.0, std::abs(raw[k])));
        }
    }
}

TEST_CASE("admittance matrix is symmetric without phase shifters and follows the incidence pattern") {
    auto c = qpf_test::case14();
    for (auto &br : c.branches) {
        br.tap = 1.0;
    }
    const auto y = build_ybus(c).y;
    CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (const auto &br : c.branches) {
        const auto f = c.index_of(br.from_bus), t = c.index_of(br.to_bus);
        edges.insert({f, t});
        edges.insert({t, f});
    }
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            if (i != j) {
                const bool linked = edges.count({static_cast<std::size_t>(i), static_cast<std::size_t>(j)}) > 0;
                CHECK((y(i, j) != cplx{}) == linked);
            }
        }
    }
}

TEST_CASE("magnitude specs select a single diagonal entry") {
    const auto s = qpf_test::specs14();
    CHECK(s.size() == 2 * s.n_buses - 1);
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s.kinds[k].kind != SpecKind::vmag_sq) {
            continue;
        }
        const auto n = static_cast<Eigen::Index>(s.kinds[k].bus_index);
        CHECK(s.h[k](n, n) == cplx(1.0));
        CHECK(s.h[k].cwiseAbs().sum() == 1.0);
    }
}

TEST_CASE("converged Newton-Raphson voltages reproduce their instance") {
    const auto s = qpf_test::specs14();
    const auto batch = sample_feasible_instances(s, 10, 26);
    for (const auto &b : batch.instances) {
        const auto sol = solve_newton_raphson(s, b, flat_profile(s));
        REQUIRE(sol.converged);
        CHECK(sol.max_mismatch < 1e-8);
        CHECK(nmae(evaluate_specs(s, sol.v), b) < 1e-8);
    }
}

// ---------------------------------------------------------------------------
// model and decomposition

TEST_CASE("zero data through the embedding leaves the ansatz state unchanged") {
    const auto specs = qpf_test::specs14();
    const auto with = make_problem(specs, AnsatzConfig{4, 3}, EmbeddingConfig{27, 4, 2});
    const auto &without = problem14();
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 5; ++trial) {
        const auto theta = qpf_test::random_angles(28, rng);
        const auto a = prepare(with, theta, std::vector<double>(27, 0.0));
        const auto b = prepare(without, theta);
        CHECK((qpf_test::as_vector(a) - qpf_test::as_vector(b)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("parameter count formula for several widths and depths") {
    for (std::size_t n = 1; n <= 6; ++n) {
        for (std::size_t l = 0; l <= 7; ++l) {
            const AnsatzConfig c{n, l};
            CHECK(c.parameter_count() == n + 2 * n * l);
            CHECK(build_ansatz(c).weight_count() == n + 2 * n * l);
        }
    }
}

TEST_CASE("normalized training data lies in [0, 2 pi]") {
    const auto raw = sample_instances(qpf_test::specs14(), 50, 28);
    const auto n = normalize_data(raw);
    for (std::size_t t = 0; t < raw.size(); ++t) {
        const auto back = n.normalizer.invert(n.instances[t]);
        for (std::size_t k = 0; k < 27; ++k) {
            CHECK(n.instances[t][k] >= 0.0);
            CHECK(n.instances[t][k] <= two_pi);
            CHECK(std::abs(back[k] - raw.instances[t][k]) < 1e-12 * std::max(1.0, std::abs(raw.instances[t][k])));
        }
    }
}

TEST_CASE("each group rotation diagonalizes its offset component") {
    const auto specs = qpf_test::specs14();
    const auto d = decompose(specs);
    for (const auto &g : d.groups) {
        CHECK(g.rotation.gates.size() <= specs.n_qubits + 1);
        const Mat v = circuit_matrix(g.rotation);
        for (std::size_t s = 0; s < specs.size(); ++s) {
            const Mat r = v * offset_component(specs.h[s], g.offset, g.part) * v.adjoint();
            for (Eigen::Index i = 0; i < r.rows(); ++i) {
                for (Eigen::Index j = 0; j < r.cols(); ++j) {
                    const cplx expect = i == j ? cplx(g.lambdas[s][static_cast<std::size_t>(i)]) : cplx{};
                    REQUIRE(std::abs(r(i, j) - expect) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("rotated diagonals are sparse in the bus degree") {
    const auto c = qpf_test::case14();
    std::vector<std::set<int>> nb(c.n_buses());
    for (const auto &br : c.branches) {
        nb[c.index_of(br.from_bus)].insert(br.to_bus);
        nb[c.index_of(br.to_bus)].insert(br.from_bus);
    }
    std::size_t max_deg = 0;
    for (const auto &s : nb) {
        max_deg = std::max(max_deg, s.size());
    }
    const auto d = decompose(qpf_test::specs14());
    for (const auto &g : d.groups) {
        for (std::size_t s = 0; s < d.s_count; ++s) {
            CHECK(g.nnz(s) <= 2 * max_deg + 2);
        }
    }
}

TEST_CASE("measurements match dense evaluation on 50 random states") {
    const auto specs = qpf_test::specs14();
    const auto d = decompose(specs);
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        const auto psi = qpf_test::random_state(4, rng);
        const auto v = qpf_test::as_vector(psi);
        const auto f = measure_F_s(psi, d);
        double g = 0.0, gt = 0.0;
        for (std::size_t s = 0; s < specs.size(); ++s) {
            const double e = (v.adjoint() * specs.h[s] * v)(0, 0).real();
            REQUIRE(std::abs(f[s] - e) < 1e-10);
            g += specs.b[s] * e;
            gt += e * e;
        }
        REQUIRE(std::abs(measure_G(psi, d, specs.b) - g) < 1e-10);
        const double sym = measure_G_tilde(psi, d, PairLoop::symmetric);
        const double full = measure_G_tilde(psi, d, PairLoop::full);
        REQUIRE(std::abs(sym - gt) < 1e-10);
        REQUIRE(std::abs(sym - full) < 1e-10);
    }
}

// ---------------------------------------------------------------------------
// objective and optimizer

TEST_CASE("objective identity holds at random points") {
    const auto &p = problem14();
    std::mt19937_64 rng(30);
    std::uniform_real_distribution<double> a(0.0, 17.0);
    for (int trial = 0; trial < 20; ++trial) {
        const auto theta = qpf_test::random_angles(28, rng);
        const double alpha = a(rng);
        const auto psi = prepare(p, theta);
        const auto [g, gt] = g_terms(p, psi, p.specs.b, Evaluation::replica);
        const auto f = measure_F_s(psi, p.decomp);
        double direct = 0.0, bb = 0.0;
        for (std::size_t s = 0; s < 27; ++s) {
            direct += (alpha * f[s] - p.specs.b[s]) * (alpha * f[s] - p.specs.b[s]);
            bb += p.specs.b[s] * p.specs.b[s];
        }
        CHECK(std::abs(alpha * alpha * gt - 2 * alpha * g + bb - direct) < 1e-10 * std::max(1.0, direct));
    }
}

TEST_CASE("global phase changes no expectation") {
    const auto &p = problem14();
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const auto psi = qpf_test::random_state(4, rng);
        std::vector<cplx> amps(psi.amplitudes().begin(), psi.amplitudes().end());
        const cplx phase = std::polar(1.0, 0.37 * (trial + 1));
        for (auto &x : amps) {
            x *= phase;
        }
        const StateVector rotated(4, amps);
        const auto f0 = measure_F_s(psi, p.decomp);
        const auto f1 = measure_F_s(rotated, p.decomp);
        for (std::size_t s = 0; s < 27; ++s) {
            CHECK(std::abs(f0[s] - f1[s]) < 1e-12);
        }
        CHECK(std::abs(measure_G_tilde(psi, p.decomp) - measure_G_tilde(rotated, p.decomp)) < 1e-10);
    }
}

TEST_CASE("alpha stays in [0, 1.21 N] along trajectories") {
    const auto &p = problem14();
    const auto batch = sample_instances(p.specs, 3, 32);
    for (const auto &b : batch.instances) {
        TrainConfig c;
        c.max_iters = 400;
        c.mu_alpha = 0.05;
        c.mu_theta = 5e-4;
        c.gradient = GradientMethod::adjoint;
        c.flat_init.max_starts = 1;
        for (double a0 : {-5.0, 3.0, 40.0}) {
            const auto r = solve_single(p, b, c, std::nullopt, a0);
            for (const auto &rec : r.trace.records) {
                REQUIRE(rec.alpha >= 0.0);
                REQUIRE(rec.alpha <= 1.21 * 14);
            }
        }
    }
}

TEST_CASE("objective is non-increasing over 100-iteration windows on the nominal instance") {
    const auto &p = problem14();
    TrainConfig c;
    c.max_iters = 3000;
    c.grad_tol = 1e-12;
    c.gradient = GradientMethod::adjoint;
    const auto r = solve_single(p, p.specs.b, c);
    const auto &rec = r.trace.records;
    REQUIRE(rec.size() == 3001);
    for (std::size_t k = 0; k + 100 < rec.size(); ++k) {
        REQUIRE(rec[k + 100].objective <= rec[k].objective);
    }
}

TEST_CASE("fixed seeds give identical results") {
    const auto s = qpf_test::specs14();
    CHECK(sample_feasible_instances(s, 5, 33).instances == sample_feasible_instances(s, 5, 33).instances);
    const auto &p = problem14();
    TrainConfig c;
    c.max_iters = 100;
    c.seed = 33;
    c.gradient = GradientMethod::adjoint;
    const auto a = solve_single(p, p.specs.b, c);
    const auto b = solve_single(p, p.specs.b, c);
    CHECK(a.theta == b.theta);
    CHECK(a.alpha == b.alpha);

    const auto raw = sample_instances(s, 8, 33);
    const auto data = normalize_data(raw);
    TrainConfig d;
    d.mu_theta = 1e-4;
    d.max_iters = 50;
    d.batch_size = 3;
    d.seed = 33;
    const auto n1 = train_dnn(MlpConfig{}, s, raw, data, d);
    const auto n2 = train_dnn(MlpConfig{}, s, raw, data, d);
    for (std::size_t l = 0; l < 3; ++l) {
        CHECK(n1.model.weights.w[l] == n2.model.weights.w[l]);
        CHECK(n1.model.weights.b[l] == n2.model.weights.b[l]);
    }
}
