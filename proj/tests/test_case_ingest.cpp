#include <catch_amalgamated.hpp>

#include <numbers>
#include <string>

#include "qpf/case_ingest.hpp"
#include "test_support.hpp"

using namespace qpf;

namespace {

const char *two_bus = R"(function mpc = two
mpc.version = '2';
mpc.baseMVA = 100;
%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
mpc.bus = [
  1 3 0  0  0 0 1 1.02 0 135 1 1.1 0.9;
  2 1 50 20 0 5 1 1.0  0 135 1 1.1 0.9;
];
mpc.gen = [
  1 55 10 100 -100 1.02 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.01 40 0;
];
)";

std::string with_bus_rows(const std::string &rows) {
    return "mpc.baseMVA = 100;\nmpc.bus = [\n" + rows + "];\nmpc.branch = [\n1 2 0.01 0.1 0 0 0 0 0 0 1;\n];\n";
}

ValidationCode code_of(const std::string &text) {
    try {
        parse_case(text);
    } catch (const ValidationError &e) {
        return e.code();
    }
    FAIL("expected a ValidationError");
    return ValidationCode::malformed_document;
}

} // namespace

TEST_CASE("two-bus fixture parses into per-unit records") {
    const auto c = parse_case(two_bus);
    REQUIRE(c.n_buses() == 2);
    CHECK(c.base_mva == 100.0);
    CHECK(c.buses[0].bus_type == BusType::slack);
    CHECK(c.buses[0].v_set == 1.02);
    CHECK(c.buses[1].p_demand == Catch::Approx(0.5));
    CHECK(c.buses[1].q_demand == Catch::Approx(0.2));
    CHECK(c.buses[1].shunt_bs == Catch::Approx(0.05));
    REQUIRE(c.gens.size() == 1);
    CHECK(c.gens[0].p_gen == Catch::Approx(0.55));
    REQUIRE(c.branches.size() == 1);
    CHECK(c.branches[0].tap == 1.0);
    CHECK(c.branches[0].b_charge == 0.02);
}

TEST_CASE("IEEE 14-bus case: counts and transformer taps") {
    const auto c = qpf_test::case14();
    CHECK(c.n_buses() == 14);
    CHECK(c.branches.size() == 20);
    CHECK(c.gens.size() == 5);
    int slack = 0, pv = 0, pq = 0;
    for (const auto &b : c.buses) {
        slack += b.bus_type == BusType::slack;
        pv += b.bus_type == BusType::pv;
        pq += b.bus_type == BusType::pq;
    }
    CHECK(slack == 1);
    CHECK(pv == 4);
    CHECK(pq == 9);
    int taps = 0;
    for (const auto &br : c.branches) {
        taps += br.tap != 1.0;
    }
    CHECK(taps == 3);
    CHECK(c.buses[c.index_of(9)].shunt_bs == Catch::Approx(0.19));
}

TEST_CASE("out-of-service elements are dropped, units on one bus merged") {
    std::string text = two_bus;
    text.replace(text.find("1 2 0.01 0.1 0.02 0 0 0 0 0 1"), 29, "1 2 0.01 0.1 0.02 0 0 0 0 0 1;\n  1 2 0.3 0.3 0 0 0 0 0 0 0");
    text.replace(text.find("1 55 10 100 -100 1.02 100 1 200 0;"), 34,
                 "1 55 10 100 -100 1.02 100 1 200 0;\n  1 5 1 100 -100 1.02 100 1 200 0;\n  1 7 7 100 -100 1.02 100 0 200 0;");
    const auto c = parse_case(text);
    CHECK(c.branches.size() == 1);
    REQUIRE(c.gens.size() == 1);
    CHECK(c.gens[0].p_gen == Catch::Approx(0.60));
    CHECK(c.gens[0].q_gen == Catch::Approx(0.11));
}

TEST_CASE("phase shift is converted to radians") {
    std::string text = two_bus;
    text.replace(text.find("1 2 0.01 0.1 0.02 0 0 0 0 0 1"), 29, "1 2 0.01 0.1 0.02 0 0 0 0.95 30 1");
    const auto c = parse_case(text);
    CHECK(c.branches[0].tap == 0.95);
    CHECK(c.branches[0].shift == Catch::Approx(std::numbers::pi / 6));
}

TEST_CASE("each validation failure has its own code") {
    CHECK(code_of(with_bus_rows("1 3 0 0 0 0 1 1 0;\n1 1 0 0 0 0 1 1 0;\n")) == ValidationCode::duplicate_bus);
    CHECK(code_of(with_bus_rows("1 1 0 0 0 0 1 1 0;\n2 1 0 0 0 0 1 1 0;\n")) == ValidationCode::missing_slack);
    CHECK(code_of(with_bus_rows("1 3 0 0 0 0 1 1 0;\n2 3 0 0 0 0 1 1 0;\n")) == ValidationCode::multiple_slack);
    CHECK(code_of("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0;\n];\nmpc.branch = [\n1 5 0.1 0.1 0 0 0 0 0 0 1;\n];\n") ==
          ValidationCode::unknown_bus);
    CHECK(code_of("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0;\n2 1 0 0 0 0 1 1 0;\n];\nmpc.branch = [\n1 2 0 0 0 0 0 0 0 0 1;\n];\n") ==
          ValidationCode::zero_impedance);
    CHECK(code_of("mpc.baseMVA = 0;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0;\n];\n") == ValidationCode::non_positive_base);

    CaseData c = parse_case(two_bus);
    c.branches[0].tap = -1.0;
    try {
        validate(c);
        FAIL("negative tap accepted");
    } catch (const ValidationError &e) {
        CHECK(e.code() == ValidationCode::non_positive_tap);
    }
    c = parse_case(two_bus);
    c.buses.clear();
    try {
        validate(c);
        FAIL("empty case accepted");
    } catch (const ValidationError &e) {
        CHECK(e.code() == ValidationCode::empty_buses);
    }
    c = parse_case(two_bus);
    c.buses[0].v_set = 0.0;
    try {
        validate(c);
        FAIL("zero setpoint accepted");
    } catch (const ValidationError &e) {
        CHECK(e.code() == ValidationCode::non_positive_vset);
    }
}

TEST_CASE("malformed text raises ParseError with a line number") {
    CHECK_THROWS_AS(parse_case("mpc.bus = [\n1 3 0 0 0 0 1 1 0;\n];\n"), ParseError);
    CHECK_THROWS_AS(parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0;\n"), ParseError);
    try {
        parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 x 0;\n];\n");
        FAIL("bad number accepted");
    } catch (const ParseError &e) {
        CHECK(e.line() == 3);
    }
    try {
        parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0;\n];\n");
        FAIL("short row accepted");
    } catch (const ParseError &e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_case("mpc.baseMVA = 100;\nmpc.bus = [\n1 4 0 0 0 0 1 1 0;\n];\n"), ParseError);
}

TEST_CASE("JSON round trip preserves every field") {
    const auto c = qpf_test::case14();
    const auto back = json_to_case(case_to_json(c));
    CHECK(back == c);
    CHECK_THROWS_AS(json_to_case("{not json"), ValidationError);
    CHECK_THROWS_AS(json_to_case(R"({"base_mva": 100})"), ValidationError);
}

TEST_CASE("missing case file raises IoError") {
    CHECK_THROWS_AS(load_case_file("/nonexistent/case.m"), IoError);
}
