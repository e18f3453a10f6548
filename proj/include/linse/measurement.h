#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "linse/case.h"
#include "linse/network.h"

namespace linse {

class MeasurementError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class Device { pmu, rtu };

enum class ReadingKind {
    v_real,
    v_imag,
    i_real_inj,
    i_imag_inj,
    i_real_flow,
    i_imag_flow,
    v_mag,
    p_inj,
    q_inj,
    p_flow,
    q_flow,
};

std::string_view to_string(Device device);
std::string_view to_string(ReadingKind kind);
Device parse_device(std::string_view text);
ReadingKind parse_reading_kind(std::string_view text);
bool is_flow(ReadingKind kind);
/// PMU kinds are rectangular phasor components; RTU kinds are |V|, P, Q.
Device device_of(ReadingKind kind);

/// One original device value.
///
/// Sign conventions: PMU currents are oriented out of the bus into the
/// network (an injection current therefore reads positive when a source
/// feeds the bus). RTU `p_inj`/`q_inj` are the net power delivered into the
/// network at the bus (generation positive, load negative). RTU `p_flow`/
/// `q_flow` are the power leaving the metered bus into the branch, measured
/// at that terminal. Flow readings locate the branch by its position in the
/// case's in-service branch list.
struct RawReading {
    int id = 0;
    Device device = Device::pmu;
    ReadingKind kind = ReadingKind::v_real;
    int bus = 0;
    std::optional<std::size_t> branch;
    double value = 0.0;
    double sigma = 0.0;
};

enum class RowKind {
    pmu_v_real,
    pmu_v_imag,
    pmu_i_real_inj,
    pmu_i_imag_inj,
    pmu_i_real_flow,
    pmu_i_imag_flow,
    rtu_pseudo_real_inj,
    rtu_pseudo_imag_inj,
    rtu_pseudo_real_flow,
    rtu_pseudo_imag_flow,
};

std::string_view to_string(RowKind kind);
bool is_rtu_pseudo(RowKind kind);

struct MeasurementRow {
    std::size_t id = 0;
    RowKind kind = RowKind::pmu_v_real;
    double z = 0.0;
    double variance = 0.0;
    LinearForm coeffs;
    std::vector<int> sources;  // RawReading ids
};

/// Linear model z = H x + e with diagonal covariance.
///
/// `reference_readings` holds PMU V_I readings at the reference bus; they
/// are consumed by fixing the reference angle and produce no row.
/// `unused_readings` holds RTU |V| readings without any P/Q partner.
struct MeasurementModel {
    std::vector<MeasurementRow> rows;
    StateLayout layout;
    int reference_bus = 0;
    std::vector<int> reference_readings;
    std::vector<int> unused_readings;

    std::size_t state_dim() const { return layout.dimension(); }
};

/// Variance of W / V^2 from first-order propagation applied twice (V*V, then
/// the quotient). Floors at sigma_W^2 when |W| is below 1e-6 pu.
double pseudo_variance(double v, double sigma_v, double w, double sigma_w);

/// Measured voltage magnitude with active and reactive power of one RTU group.
struct RtuTriple {
    double v = 1.0;
    double sigma_v = 0.0;
    double p = 0.0;
    double sigma_p = 0.0;
    double q = 0.0;
    double sigma_q = 0.0;
};

struct RowVariances {
    double real = 0.0;
    double imag = 0.0;
};

/// Real pseudo row gets the variance of P/V^2, imaginary row that of Q/V^2.
RowVariances assign_rtu_row_variances(RtuTriple const& triple);

/// Finds the branch position between `bus` and `other_bus`. With parallel
/// circuits `branch_hint` must pick one of them.
std::size_t resolve_branch(NetworkCase const& network, int bus, int other_bus,
                           std::optional<std::size_t> branch_hint = std::nullopt);

/// Metering side of a flow reading; throws when `bus` is not a branch end.
BranchSide flow_side(NetworkCase const& network, RawReading const& reading);

MeasurementModel assemble(NetworkCase const& network, NetworkModel const& model,
                          std::span<RawReading const> readings);

/// Measurement-set JSON: array of {id, device, kind, bus, branch_from,
/// branch_to, branch, value, sigma}.
std::vector<RawReading> parse_readings_json(std::string_view text, NetworkCase const& network);
std::vector<RawReading> load_readings(std::string const& path, NetworkCase const& network);
std::string readings_to_json(std::span<RawReading const> readings, NetworkCase const& network);

}  // namespace linse
