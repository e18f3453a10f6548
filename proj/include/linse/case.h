#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace linse {

using Complex = std::complex<double>;

/// Raised for malformed or inconsistent case input. Line/column are 1-based
/// and zero when the error is not tied to a text position.
class CaseError : public std::runtime_error {
  public:
    CaseError(std::string const& what, std::size_t line = 0, std::size_t column = 0);

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

  private:
    std::size_t line_;
    std::size_t column_;
};

struct Bus {
    int id = 0;
    double v_true_mag = 1.0;  // pu
    double v_true_ang = 0.0;  // rad
    double shunt_g = 0.0;     // pu on system base
    double shunt_b = 0.0;     // pu on system base

    Complex true_voltage() const { return std::polar(v_true_mag, v_true_ang); }
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;  // total line charging
    double tap = 1.0;         // off-nominal ratio at the from side
    double shift = 0.0;       // rad
    bool in_service = true;
};

/// Physical grid in per-unit with its solved voltage profile as truth.
///
/// Buses keep file order; `bus_index` maps an external id to that position.
/// Only in-service branches are kept after loading.
struct NetworkCase {
    double base_mva = 100.0;
    int reference_bus = 0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<int> generator_buses;
    // Rebuilt by validate(); lookups fall back to a scan when stale.
    std::unordered_map<int, std::size_t> id_to_index;

    std::size_t bus_count() const { return buses.size(); }
    /// Position of bus `id` in `buses`; throws CaseError for unknown ids.
    std::size_t bus_index(int id) const;
    bool has_bus(int id) const;
    std::size_t reference_index() const { return bus_index(reference_bus); }
};

/// Parses MATPOWER `.m` subset or the JSON case schema (detected from the
/// first non-blank character) and validates the result.
NetworkCase parse_case(std::string_view text);
NetworkCase parse_matpower(std::string_view text);
NetworkCase parse_case_json(std::string_view text);
NetworkCase load_case(std::filesystem::path const& path);

/// JSON schema serialization; angles written in degrees.
std::string case_to_json(NetworkCase const& network);

/// Shifts every true angle by a common constant so the reference angle is 0.
NetworkCase rotate_to_reference(NetworkCase network);

/// Checks the structural invariants; throws CaseError.
void validate(NetworkCase const& network);

}  // namespace linse
