#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "linse/case.h"

namespace fixtures {

inline std::filesystem::path data(std::string const& name) { return std::filesystem::path(LINSE_DATA_DIR) / name; }
inline std::filesystem::path config(std::string const& name) {
    return std::filesystem::path(LINSE_CONFIG_DIR) / name;
}

inline linse::NetworkCase make_case(std::vector<linse::Bus> buses, std::vector<linse::Branch> branches,
                                    int reference) {
    linse::NetworkCase c;
    c.reference_bus = reference;
    c.buses = std::move(buses);
    c.branches = std::move(branches);
    linse::validate(c);
    return c;
}

inline linse::Bus bus(int id, double vm = 1.0, double va = 0.0, double gs = 0.0, double bs = 0.0) {
    linse::Bus b;
    b.id = id;
    b.v_true_mag = vm;
    b.v_true_ang = va;
    b.shunt_g = gs;
    b.shunt_b = bs;
    return b;
}

inline linse::Branch line(int from, int to, double r, double x, double b = 0.0, double tap = 1.0, double shift = 0.0) {
    linse::Branch br;
    br.from_bus = from;
    br.to_bus = to;
    br.r = r;
    br.x = x;
    br.b_charging = b;
    br.tap = tap;
    br.shift = shift;
    return br;
}

// Three buses in a triangle with a transformer, a phase shifter and shunts.
inline linse::NetworkCase triangle() {
    return make_case({bus(1, 1.02, 0.0), bus(2, 0.98, -0.05, 0.01, 0.02), bus(3, 1.01, 0.03, 0.0, -0.05)},
                     {line(1, 2, 0.01, 0.1, 0.04), line(2, 3, 0.02, 0.15, 0.0, 0.97),
                      line(1, 3, 0.0, 0.2, 0.02, 1.02, 0.05)},
                     1);
}

}  // namespace fixtures
