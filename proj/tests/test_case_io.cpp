#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.h"
#include "linse/case.h"

using namespace linse;

namespace {

constexpr char kSmall[] = R"(function mpc = small
% two buses, one line
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1.02	0	135	1	1.1	0.9;
	2	1	50	10	5	-10	1	0.98	-4.5	135	1	1.1	0.9;  % load bus
	7	4	0	0	0	0	1	1	0	135	1	1.1	0.9;
];
mpc.gen = [
	1	50	10	Inf	-Inf	1.02	100	1	Inf	0;
];
mpc.branch = [
	1	2	0.01	0.1	0.02	0	0	0	0	0	1	-360	360;
	1	2	0.02	0.2	0	0	0	0	0.95	2	1	-360	360;
	2	1	0.03	0.3	0	0	0	0	0	0	0	-360	360;
];
mpc.bus_name = { 'a'; 'b'; 'c' };
)";

}  // namespace

TEST_CASE("matpower subset parses into per-unit radians") {
    NetworkCase c = parse_case(kSmall);
    CHECK(c.base_mva == 100.0);
    CHECK(c.reference_bus == 1);
    REQUIRE(c.bus_count() == 2);  // isolated type-4 bus dropped
    CHECK(c.buses[1].shunt_g == doctest::Approx(0.05));
    CHECK(c.buses[1].shunt_b == doctest::Approx(-0.10));
    CHECK(c.buses[1].v_true_ang == doctest::Approx(-4.5 * std::numbers::pi / 180.0));
    REQUIRE(c.branches.size() == 2);  // out-of-service branch dropped
    CHECK(c.branches[0].tap == 1.0);  // ratio 0 means nominal
    CHECK(c.branches[1].tap == doctest::Approx(0.95));
    CHECK(c.branches[1].shift == doctest::Approx(2.0 * std::numbers::pi / 180.0));
    CHECK(c.generator_buses == std::vector<int>{1});
}

TEST_CASE("line continuation and trailing comments") {
    std::string text = R"(mpc.baseMVA = ...
  100;
mpc.bus = [ 1 3 0 0 0 0 1 1 0 1 1 1 1; % ref
            2 1 0 0 0 0 1 1 ...
              -1 1 1 1 1 ];
mpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1 0 0 ];
)";
    NetworkCase c = parse_case(text);
    CHECK(c.bus_count() == 2);
    CHECK(c.buses[1].v_true_ang == doctest::Approx(-std::numbers::pi / 180.0));
}

TEST_CASE("syntax errors carry line and column") {
    std::string text = "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 1 1 1 1;\n 2 1 0 0 0 0 1 1 x 1 1 1 1;\n];\n";
    try {
        parse_case(text);
        FAIL("expected CaseError");
    } catch (CaseError const& e) {
        CHECK(e.line() == 4);
        CHECK(e.column() > 1);
    }
}

TEST_CASE("structural errors") {
    std::string header = "mpc.baseMVA = 100;\nmpc.bus = [ 1 3 0 0 0 0 1 1 0 1 1 1 1; 2 1 0 0 0 0 1 1 0 1 1 1 1 ];\n";
    SUBCASE("dangling branch endpoint") {
        CHECK_THROWS_AS(parse_case(header + "mpc.branch = [ 1 9 0 0.1 0 0 0 0 0 0 1 0 0 ];\n"), CaseError);
    }
    SUBCASE("negative tap") {
        CHECK_THROWS_AS(parse_case(header + "mpc.branch = [ 1 2 0 0.1 0 0 0 0 -1 0 1 0 0 ];\n"), CaseError);
    }
    SUBCASE("no reference bus") {
        std::string text = "mpc.baseMVA = 100;\nmpc.bus = [ 1 1 0 0 0 0 1 1 0 1 1 1 1 ];\n";
        CHECK_THROWS_AS(parse_case(text), CaseError);
    }
    SUBCASE("missing bus table") { CHECK_THROWS_AS(parse_case("mpc.baseMVA = 100;\n"), CaseError); }
}

TEST_CASE("json round trip") {
    NetworkCase a = fixtures::triangle();
    NetworkCase b = parse_case(case_to_json(a));
    REQUIRE(b.bus_count() == a.bus_count());
    REQUIRE(b.branches.size() == a.branches.size());
    CHECK(b.reference_bus == a.reference_bus);
    for (std::size_t i = 0; i < a.bus_count(); ++i) {
        CHECK(b.buses[i].id == a.buses[i].id);
        CHECK(b.buses[i].v_true_mag == doctest::Approx(a.buses[i].v_true_mag).epsilon(1e-14));
        CHECK(b.buses[i].v_true_ang == doctest::Approx(a.buses[i].v_true_ang).epsilon(1e-14));
        CHECK(b.buses[i].shunt_b == doctest::Approx(a.buses[i].shunt_b));
    }
    for (std::size_t k = 0; k < a.branches.size(); ++k) {
        CHECK(b.branches[k].tap == doctest::Approx(a.branches[k].tap));
        CHECK(b.branches[k].shift == doctest::Approx(a.branches[k].shift));
        CHECK(b.branches[k].b_charging == doctest::Approx(a.branches[k].b_charging));
    }
}

TEST_CASE("json errors") {
    SUBCASE("syntax error position") {
        try {
            parse_case("{\n \"base_mva\": 100,\n \"buses\": [,]\n}");
            FAIL("expected CaseError");
        } catch (CaseError const& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("missing voltage profile") {
        CHECK_THROWS_AS(parse_case(R"({"base_mva":100,"reference_bus":1,"buses":[{"id":1}],"branches":[]})"),
                        CaseError);
    }
    SUBCASE("unknown reference") {
        CHECK_THROWS_AS(
            parse_case(R"({"base_mva":100,"reference_bus":5,"buses":[{"id":1,"vm":1,"va_deg":0}],"branches":[]})"),
            CaseError);
    }
}

TEST_CASE("rotation zeroes the reference angle and keeps differences") {
    NetworkCase c = load_case(fixtures::data("case118.m"));
    NetworkCase r = rotate_to_reference(c);
    CHECK(r.buses[r.reference_index()].v_true_ang == 0.0);
    for (std::size_t i = 0; i < c.bus_count(); ++i) {
        CHECK(r.buses[i].v_true_mag == c.buses[i].v_true_mag);
        for (std::size_t j : {std::size_t{0}, c.bus_count() - 1}) {
            double before = c.buses[i].v_true_ang - c.buses[j].v_true_ang;
            double after = r.buses[i].v_true_ang - r.buses[j].v_true_ang;
            CHECK(std::abs(before - after) <= 1e-15);
        }
    }
}

TEST_CASE("bundled cases load") {
    NetworkCase c14 = load_case(fixtures::data("case14.m"));
    CHECK(c14.bus_count() == 14);
    CHECK(c14.branches.size() == 20);
    CHECK(c14.reference_bus == 1);
    NetworkCase c57 = load_case(fixtures::data("case57.m"));
    CHECK(c57.bus_count() == 57);
    NetworkCase c118 = load_case(fixtures::data("case118.m"));
    CHECK(c118.bus_count() == 118);
    CHECK(c118.reference_bus == 69);
    NetworkCase c2869 = load_case(fixtures::data("case2869pegase.m"));
    CHECK(c2869.bus_count() == 2869);
    CHECK(c2869.reference_bus == 4231);
    CHECK(c2869.buses.front().id == 3);
    CHECK_THROWS_AS(c2869.bus_index(1), CaseError);
}

TEST_CASE("missing file") { CHECK_THROWS_AS(load_case("/nonexistent/case.m"), CaseError); }
