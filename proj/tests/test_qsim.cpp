#include <catch_amalgamated.hpp>

#include <numbers>
#include <sstream>

#include "qpf/qsim.hpp"
#include "test_support.hpp"

using namespace qpf;
using qpf_test::Mat;

TEST_CASE("single RX on |0> gives <Z> = cos theta") {
    CircuitSpec c{1, {Gate::rotation(GateKind::RX, 0, ParamRef::weight(0))}};
    const std::vector<double> z{1.0, -1.0};
    for (double t : {0.0, 0.3, 1.2, std::numbers::pi / 2, 2.9}) {
        const std::vector<double> w{t};
        CHECK(exact_expectation(run_circuit(c, w), z) == Catch::Approx(std::cos(t)).margin(1e-14));
    }
    const std::vector<double> w{std::numbers::pi / 2};
    auto obs = [&z](const StateVector &s) { return exact_expectation(s, z); };
    CHECK(parameter_shift_gradient(c, w, {}, obs)[0] == Catch::Approx(-1.0).margin(1e-14));
}

TEST_CASE("every gate kind matches its Kronecker-lifted matrix") {
    std::mt19937_64 rng(7);
    for (std::size_t n : {1u, 2u, 3u, 4u}) {
        std::vector<Gate> gates;
        for (std::size_t q = 0; q < n; ++q) {
            for (auto k : {GateKind::RX, GateKind::RY, GateKind::RZ}) {
                gates.push_back(Gate::rotation(k, q, ParamRef::constant(0.0)));
            }
            for (auto k : {GateKind::X, GateKind::H, GateKind::SDG}) {
                gates.push_back(Gate::fixed(k, q));
            }
            for (std::size_t t = 0; t < n; ++t) {
                if (t != q) {
                    gates.push_back(Gate::cnot(q, t));
                }
            }
        }
        for (const auto &g : gates) {
            const double theta = 1.234;
            const auto psi = qpf_test::random_state(n, rng);
            StateVector out = psi;
            out.apply(g, is_rotation(g.kind) ? std::optional<double>(theta) : std::nullopt);
            const Mat u = qpf_test::dense_gate(g, n, theta);
            const Eigen::VectorXcd expect = u * qpf_test::as_vector(psi);
            CHECK((qpf_test::as_vector(out) - expect).cwiseAbs().maxCoeff() < 1e-13);
            CHECK((u.adjoint() * u - Mat::Identity(u.rows(), u.cols())).cwiseAbs().maxCoeff() < 1e-13);
        }
    }
}

TEST_CASE("qubit 0 is the most significant bit") {
    StateVector s(3);
    s.apply(Gate::fixed(GateKind::X, 0));
    CHECK(std::abs(s[4] - cplx(1.0)) < 1e-15);
}

TEST_CASE("state constructor and gate validation") {
    CHECK_THROWS_AS(StateVector(0), ShapeError);
    CHECK_THROWS_AS(StateVector(13), ShapeError);
    CHECK_THROWS_AS(StateVector(1, {cplx(1.0), cplx(1.0)}), ShapeError);
    CHECK_THROWS_AS(StateVector(2, {cplx(1.0), cplx(0.0)}), ShapeError);
    StateVector s(2);
    CHECK_THROWS_AS(s.apply(Gate::fixed(GateKind::X, 2)), ShapeError);
    CHECK_THROWS_AS(s.apply(Gate::cnot(1, 1)), ShapeError);
    CHECK_THROWS_AS(s.apply(Gate::rotation(GateKind::RY, 0, ParamRef::weight(0))), ShapeError);
    CHECK_THROWS_AS(s.apply(Gate::fixed(GateKind::H, 0), 0.5), ShapeError);
}

TEST_CASE("run_circuit checks slot counts") {
    CircuitSpec c{2, {}};
    c.gates.push_back(Gate::rotation(GateKind::RY, 0, ParamRef::weight(0)));
    c.gates.push_back(Gate::rotation(GateKind::RY, 1, ParamRef::data(0)));
    const std::vector<double> w{0.1};
    const std::vector<double> x{0.2};
    CHECK_NOTHROW(run_circuit(c, w, x));
    CHECK_THROWS_AS(run_circuit(c, {}, x), ShapeError);
    CHECK_THROWS_AS(run_circuit(c, w, {}), ShapeError);
    CircuitSpec dup{1, {Gate::rotation(GateKind::RY, 0, ParamRef::weight(0)),
                        Gate::rotation(GateKind::RZ, 0, ParamRef::weight(0))}};
    CHECK_THROWS_AS(validate(dup), ShapeError);
}

TEST_CASE("kron_state places the first factor on the leading qubits") {
    std::mt19937_64 rng(3);
    const auto a = qpf_test::random_state(2, rng);
    const auto b = qpf_test::random_state(3, rng);
    const auto ab = kron_state(a, b);
    const Eigen::VectorXcd expect = qpf_test::kron(qpf_test::as_vector(a), qpf_test::as_vector(b));
    CHECK((qpf_test::as_vector(ab) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("parameter shift equals central differences on a random circuit") {
    std::mt19937_64 rng(11);
    CircuitSpec c{3, {}};
    std::size_t slot = 0;
    for (int layer = 0; layer < 3; ++layer) {
        for (std::size_t q = 0; q < 3; ++q) {
            c.gates.push_back(Gate::rotation(layer % 2 ? GateKind::RX : GateKind::RY, q, ParamRef::weight(slot++)));
            c.gates.push_back(Gate::rotation(GateKind::RZ, q, ParamRef::weight(slot++)));
        }
        c.gates.push_back(Gate::cnot(0, 1));
        c.gates.push_back(Gate::cnot(1, 2));
    }
    const auto diag = qpf_test::random_angles(8, rng);
    auto obs = [&diag](const StateVector &s) { return exact_expectation(s, diag); };
    auto w = qpf_test::random_angles(slot, rng);
    const auto g = parameter_shift_gradient(c, w, {}, obs);
    const double h = 1e-5;
    for (std::size_t k = 0; k < slot; ++k) {
        auto wp = w;
        auto wm = w;
        wp[k] += h;
        wm[k] -= h;
        const double fd = (obs(run_circuit(c, wp)) - obs(run_circuit(c, wm))) / (2 * h);
        CHECK(std::abs(fd - g[k]) < 1e-8);
    }
}

TEST_CASE("sampled expectation is seeded and unbiased within five standard errors") {
    std::mt19937_64 rng(5);
    const auto s = qpf_test::random_state(3, rng);
    const std::vector<double> diag{1, -2, 3, 0.5, -1, 2, 0, 4};
    const double exact = exact_expectation(s, diag);
    double var = 0.0;
    const auto p = s.probabilities();
    for (std::size_t k = 0; k < p.size(); ++k) {
        var += p[k] * (diag[k] - exact) * (diag[k] - exact);
    }
    const std::size_t shots = 100000;
    const double a = sampled_expectation(s, diag, shots, 42);
    CHECK(a == sampled_expectation(s, diag, shots, 42));
    CHECK(std::abs(a - exact) < 5.0 * std::sqrt(var / shots));
}

TEST_CASE("amplitude CSV has one row per basis state") {
    std::ostringstream os;
    write_amplitudes_csv(os, StateVector(2));
    std::istringstream is(os.str());
    std::string line;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
    }
    CHECK(rows == 5);
}
