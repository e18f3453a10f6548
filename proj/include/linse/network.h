#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "linse/case.h"

namespace linse {

class ModelError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Index map of the rectangular state: V_R for every bus, then V_I for every
/// bus except the reference, whose imaginary voltage is fixed at zero.
class StateLayout {
  public:
    StateLayout() = default;
    StateLayout(std::size_t bus_count, std::size_t reference_index);

    std::size_t bus_count() const { return bus_count_; }
    std::size_t reference_index() const { return reference_; }
    std::size_t dimension() const { return bus_count_ == 0 ? 0 : 2 * bus_count_ - 1; }

    std::size_t real_index(std::size_t bus) const { return bus; }
    std::optional<std::size_t> imag_index(std::size_t bus) const;

    /// Human-readable name of a state entry, e.g. "V_R[bus 4]".
    std::string describe(std::size_t state_index, NetworkCase const& network) const;

  private:
    std::size_t bus_count_ = 0;
    std::size_t reference_ = 0;
};

/// Sparse linear functional over the state vector.
class LinearForm {
  public:
    struct Term {
        std::size_t index;
        double coeff;
    };

    void add(std::size_t index, double coeff);
    void add(LinearForm const& other, double scale = 1.0);
    /// Sorts by index, merges duplicates and drops exact zeros.
    void normalize();

    double evaluate(std::span<double const> x) const;
    std::vector<Term> const& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }

  private:
    std::vector<Term> terms_;
};

/// Real and imaginary parts of one complex current as linear forms.
struct CurrentForm {
    LinearForm real;
    LinearForm imag;

    /// Adds `coeff * V_bus` (complex multiply expanded into real coefficients).
    void add_admittance(Complex coeff, std::size_t bus, StateLayout const& layout);
    void add(CurrentForm const& other);
    void normalize();
    Complex evaluate(std::span<double const> x) const;
};

enum class ComponentKind { branch, bus_shunt };

/// Currents of a component at one of its terminals, oriented out of `bus`.
struct TerminalCurrents {
    std::size_t bus = 0;
    CurrentForm series;
    CurrentForm shunt;

    CurrentForm total() const;
};

struct ComponentCurrentModel {
    ComponentKind kind = ComponentKind::branch;
    std::size_t source = 0;  // branch position or bus position
    std::vector<TerminalCurrents> terminals;  // from/to for branches, one for shunts
};

struct IncidenceEntry {
    std::size_t component = 0;
    std::size_t terminal = 0;
    int sign = 1;  // +1: terminal currents are oriented out of the bus
};

using IncidenceIndex = std::vector<std::vector<IncidenceEntry>>;

enum class BranchSide { from, to };

/// Rectangular current models of every component plus the bus incidence.
/// Immutable after construction.
class NetworkModel {
  public:
    explicit NetworkModel(NetworkCase const& network);

    StateLayout const& layout() const { return layout_; }
    std::vector<ComponentCurrentModel> const& components() const { return components_; }
    IncidenceIndex const& incidence() const { return incidence_; }
    std::size_t bus_count() const { return layout_.bus_count(); }

    /// Sum of all incident terminal currents at bus position `bus`.
    CurrentForm const& injection(std::size_t bus) const;
    /// Series plus shunt current leaving the `side` terminal of branch `branch`.
    CurrentForm flow(std::size_t branch, BranchSide side) const;
    std::size_t branch_bus(std::size_t branch, BranchSide side) const;

    Complex injected_current(std::size_t bus, std::span<double const> x) const;
    Complex flow_current(std::size_t branch, BranchSide side, std::span<double const> x) const;

    std::size_t branch_count() const { return branch_component_.size(); }

  private:
    StateLayout layout_;
    std::vector<ComponentCurrentModel> components_;
    std::vector<std::size_t> branch_component_;
    IncidenceIndex incidence_;
    std::vector<CurrentForm> injections_;
};

/// Builds the component models; throws ModelError on zero-impedance branches.
std::pair<std::vector<ComponentCurrentModel>, IncidenceIndex> build_models(NetworkCase const& network);

/// Stacks complex bus voltages into the state vector. The reference bus
/// imaginary part is dropped.
std::vector<double> state_from_voltages(StateLayout const& layout, std::span<Complex const> voltages);
std::vector<Complex> voltages_from_state(StateLayout const& layout, std::span<double const> x);

/// True measurement values at the case's voltage profile, expressed in the
/// reference frame (reference angle 0). Powers follow S = V * conj(I) with
/// currents oriented out of the bus: injections are net power delivered
/// into the network (generation positive), flows are measured at the
/// metering terminal including that terminal's shunt.
struct TruthTables {
    std::vector<Complex> voltage;
    std::vector<double> state;
    std::vector<Complex> injection_current;
    std::vector<Complex> injection_power;
    std::vector<Complex> flow_current_from;
    std::vector<Complex> flow_current_to;
    std::vector<Complex> flow_power_from;
    std::vector<Complex> flow_power_to;

    Complex flow_current(std::size_t branch, BranchSide side) const {
        return side == BranchSide::from ? flow_current_from[branch] : flow_current_to[branch];
    }
    Complex flow_power(std::size_t branch, BranchSide side) const {
        return side == BranchSide::from ? flow_power_from[branch] : flow_power_to[branch];
    }
};

TruthTables true_measurement_values(NetworkCase const& network, NetworkModel const& model);

}  // namespace linse
