#include "linse/network.h"

#include <algorithm>

namespace linse {

StateLayout::StateLayout(std::size_t bus_count, std::size_t reference_index)
    : bus_count_(bus_count), reference_(reference_index) {
    if (bus_count == 0 || reference_index >= bus_count) {
        throw ModelError("state layout needs a reference bus inside the bus range");
    }
}

std::optional<std::size_t> StateLayout::imag_index(std::size_t bus) const {
    if (bus == reference_) {
        return std::nullopt;
    }
    return bus_count_ + (bus < reference_ ? bus : bus - 1);
}

std::string StateLayout::describe(std::size_t state_index, NetworkCase const& network) const {
    if (state_index < bus_count_) {
        return "V_R[bus " + std::to_string(network.buses[state_index].id) + "]";
    }
    std::size_t k = state_index - bus_count_;
    std::size_t bus = k < reference_ ? k : k + 1;
    return "V_I[bus " + std::to_string(network.buses[bus].id) + "]";
}

void LinearForm::add(std::size_t index, double coeff) { terms_.push_back({index, coeff}); }

void LinearForm::add(LinearForm const& other, double scale) {
    for (Term const& t : other.terms_) {
        terms_.push_back({t.index, t.coeff * scale});
    }
}

void LinearForm::normalize() {
    std::stable_sort(terms_.begin(), terms_.end(),
                     [](Term const& a, Term const& b) { return a.index < b.index; });
    std::vector<Term> merged;
    merged.reserve(terms_.size());
    for (Term const& t : terms_) {
        if (!merged.empty() && merged.back().index == t.index) {
            merged.back().coeff += t.coeff;
        } else {
            merged.push_back(t);
        }
    }
    std::erase_if(merged, [](Term const& t) { return t.coeff == 0.0; });
    terms_ = std::move(merged);
}

double LinearForm::evaluate(std::span<double const> x) const {
    double sum = 0.0;
    for (Term const& t : terms_) {
        sum += t.coeff * x[t.index];
    }
    return sum;
}

void CurrentForm::add_admittance(Complex coeff, std::size_t bus, StateLayout const& layout) {
    // (Y_R + jY_I)(V_R + jV_I) = Y_R V_R - Y_I V_I + j(Y_I V_R + Y_R V_I)
    std::size_t vr = layout.real_index(bus);
    real.add(vr, coeff.real());
    imag.add(vr, coeff.imag());
    if (auto vi = layout.imag_index(bus)) {
        real.add(*vi, -coeff.imag());
        imag.add(*vi, coeff.real());
    }
}

void CurrentForm::add(CurrentForm const& other) {
    real.add(other.real);
    imag.add(other.imag);
}

void CurrentForm::normalize() {
    real.normalize();
    imag.normalize();
}

Complex CurrentForm::evaluate(std::span<double const> x) const {
    return {real.evaluate(x), imag.evaluate(x)};
}

CurrentForm TerminalCurrents::total() const {
    CurrentForm sum = series;
    sum.add(shunt);
    sum.normalize();
    return sum;
}

std::pair<std::vector<ComponentCurrentModel>, IncidenceIndex> build_models(NetworkCase const& network) {
    StateLayout layout(network.bus_count(), network.reference_index());
    std::vector<ComponentCurrentModel> components;
    IncidenceIndex incidence(network.bus_count());

    for (std::size_t k = 0; k < network.branches.size(); ++k) {
        Branch const& br = network.branches[k];
        double z2 = br.r * br.r + br.x * br.x;
        if (!(z2 > 0.0)) {
            throw ModelError("branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) +
                             " has zero series impedance");
        }
        Complex y{br.r / z2, -br.x / z2};
        Complex ratio = std::polar(br.tap, br.shift);
        double tap2 = br.tap * br.tap;
        Complex half_charging{0.0, br.b_charging / 2.0};

        std::size_t f = network.bus_index(br.from_bus);
        std::size_t t = network.bus_index(br.to_bus);

        ComponentCurrentModel model;
        model.kind = ComponentKind::branch;
        model.source = k;
        TerminalCurrents from;
        from.bus = f;
        from.series.add_admittance(y / tap2, f, layout);
        from.series.add_admittance(-y / std::conj(ratio), t, layout);
        from.shunt.add_admittance(half_charging / tap2, f, layout);
        TerminalCurrents to;
        to.bus = t;
        to.series.add_admittance(-y / ratio, f, layout);
        to.series.add_admittance(y, t, layout);
        to.shunt.add_admittance(half_charging, t, layout);
        for (TerminalCurrents* term : {&from, &to}) {
            term->series.normalize();
            term->shunt.normalize();
        }
        model.terminals = {std::move(from), std::move(to)};

        std::size_t id = components.size();
        incidence[f].push_back({id, 0, 1});
        incidence[t].push_back({id, 1, 1});
        components.push_back(std::move(model));
    }

    for (std::size_t b = 0; b < network.bus_count(); ++b) {
        Bus const& bus = network.buses[b];
        if (bus.shunt_g == 0.0 && bus.shunt_b == 0.0) {
            continue;
        }
        ComponentCurrentModel model;
        model.kind = ComponentKind::bus_shunt;
        model.source = b;
        TerminalCurrents term;
        term.bus = b;
        term.shunt.add_admittance({bus.shunt_g, bus.shunt_b}, b, layout);
        term.shunt.normalize();
        model.terminals = {std::move(term)};
        incidence[b].push_back({components.size(), 0, 1});
        components.push_back(std::move(model));
    }
    return {std::move(components), std::move(incidence)};
}

NetworkModel::NetworkModel(NetworkCase const& network)
    : layout_(network.bus_count(), network.reference_index()) {
    auto [components, incidence] = build_models(network);
    components_ = std::move(components);
    incidence_ = std::move(incidence);
    for (std::size_t c = 0; c < components_.size(); ++c) {
        if (components_[c].kind == ComponentKind::branch) {
            branch_component_.push_back(c);
        }
    }
    injections_.resize(bus_count());
    for (std::size_t b = 0; b < bus_count(); ++b) {
        CurrentForm& sum = injections_[b];
        for (IncidenceEntry const& e : incidence_[b]) {
            TerminalCurrents const& term = components_[e.component].terminals[e.terminal];
            sum.real.add(term.series.real, e.sign);
            sum.real.add(term.shunt.real, e.sign);
            sum.imag.add(term.series.imag, e.sign);
            sum.imag.add(term.shunt.imag, e.sign);
        }
        sum.normalize();
    }
}

CurrentForm const& NetworkModel::injection(std::size_t bus) const {
    if (bus >= injections_.size()) {
        throw ModelError("unknown bus position " + std::to_string(bus));
    }
    return injections_[bus];
}

CurrentForm NetworkModel::flow(std::size_t branch, BranchSide side) const {
    if (branch >= branch_component_.size()) {
        throw ModelError("unknown branch position " + std::to_string(branch));
    }
    auto const& model = components_[branch_component_[branch]];
    return model.terminals[side == BranchSide::from ? 0 : 1].total();
}

std::size_t NetworkModel::branch_bus(std::size_t branch, BranchSide side) const {
    if (branch >= branch_component_.size()) {
        throw ModelError("unknown branch position " + std::to_string(branch));
    }
    return components_[branch_component_[branch]].terminals[side == BranchSide::from ? 0 : 1].bus;
}

Complex NetworkModel::injected_current(std::size_t bus, std::span<double const> x) const {
    return injection(bus).evaluate(x);
}

Complex NetworkModel::flow_current(std::size_t branch, BranchSide side, std::span<double const> x) const {
    return flow(branch, side).evaluate(x);
}

std::vector<double> state_from_voltages(StateLayout const& layout, std::span<Complex const> voltages) {
    std::vector<double> x(layout.dimension(), 0.0);
    for (std::size_t b = 0; b < layout.bus_count(); ++b) {
        x[layout.real_index(b)] = voltages[b].real();
        if (auto vi = layout.imag_index(b)) {
            x[*vi] = voltages[b].imag();
        }
    }
    return x;
}

std::vector<Complex> voltages_from_state(StateLayout const& layout, std::span<double const> x) {
    std::vector<Complex> v(layout.bus_count());
    for (std::size_t b = 0; b < layout.bus_count(); ++b) {
        auto vi = layout.imag_index(b);
        v[b] = {x[layout.real_index(b)], vi ? x[*vi] : 0.0};
    }
    return v;
}

TruthTables true_measurement_values(NetworkCase const& network, NetworkModel const& model) {
    NetworkCase rotated = rotate_to_reference(network);
    TruthTables truth;
    truth.voltage.reserve(rotated.bus_count());
    for (Bus const& bus : rotated.buses) {
        truth.voltage.push_back(bus.true_voltage());
    }
    truth.voltage[rotated.reference_index()].imag(0.0);
    truth.state = state_from_voltages(model.layout(), truth.voltage);

    std::span<double const> x = truth.state;
    for (std::size_t b = 0; b < rotated.bus_count(); ++b) {
        Complex current = model.injected_current(b, x);
        truth.injection_current.push_back(current);
        truth.injection_power.push_back(truth.voltage[b] * std::conj(current));
    }
    for (std::size_t k = 0; k < model.branch_count(); ++k) {
        Complex from = model.flow_current(k, BranchSide::from, x);
        Complex to = model.flow_current(k, BranchSide::to, x);
        truth.flow_current_from.push_back(from);
        truth.flow_current_to.push_back(to);
        truth.flow_power_from.push_back(truth.voltage[model.branch_bus(k, BranchSide::from)] * std::conj(from));
        truth.flow_power_to.push_back(truth.voltage[model.branch_bus(k, BranchSide::to)] * std::conj(to));
    }
    return truth;
}

}  // namespace linse
