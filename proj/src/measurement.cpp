#include "linse/measurement.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace linse {

namespace {

constexpr std::array<std::pair<ReadingKind, std::string_view>, 11> kKindNames{{
    {ReadingKind::v_real, "V_R"},
    {ReadingKind::v_imag, "V_I"},
    {ReadingKind::i_real_inj, "I_R_inj"},
    {ReadingKind::i_imag_inj, "I_I_inj"},
    {ReadingKind::i_real_flow, "I_R_flow"},
    {ReadingKind::i_imag_flow, "I_I_flow"},
    {ReadingKind::v_mag, "V_mag"},
    {ReadingKind::p_inj, "P_inj"},
    {ReadingKind::q_inj, "Q_inj"},
    {ReadingKind::p_flow, "P_flow"},
    {ReadingKind::q_flow, "Q_flow"},
}};

constexpr double kZeroPowerGuard = 1e-6;

}  // namespace

std::string_view to_string(Device device) { return device == Device::pmu ? "PMU" : "RTU"; }

std::string_view to_string(ReadingKind kind) {
    for (auto const& [k, name] : kKindNames) {
        if (k == kind) {
            return name;
        }
    }
    return "?";
}

Device parse_device(std::string_view text) {
    if (text == "PMU" || text == "pmu") {
        return Device::pmu;
    }
    if (text == "RTU" || text == "rtu") {
        return Device::rtu;
    }
    throw MeasurementError("unknown device '" + std::string(text) + "'");
}

ReadingKind parse_reading_kind(std::string_view text) {
    for (auto const& [k, name] : kKindNames) {
        if (name == text) {
            return k;
        }
    }
    throw MeasurementError("unknown reading kind '" + std::string(text) + "'");
}

bool is_flow(ReadingKind kind) {
    switch (kind) {
        case ReadingKind::i_real_flow:
        case ReadingKind::i_imag_flow:
        case ReadingKind::p_flow:
        case ReadingKind::q_flow:
            return true;
        default:
            return false;
    }
}

Device device_of(ReadingKind kind) {
    switch (kind) {
        case ReadingKind::v_mag:
        case ReadingKind::p_inj:
        case ReadingKind::q_inj:
        case ReadingKind::p_flow:
        case ReadingKind::q_flow:
            return Device::rtu;
        default:
            return Device::pmu;
    }
}

std::string_view to_string(RowKind kind) {
    switch (kind) {
        case RowKind::pmu_v_real: return "PMU_VR";
        case RowKind::pmu_v_imag: return "PMU_VI";
        case RowKind::pmu_i_real_inj: return "PMU_IR_inj";
        case RowKind::pmu_i_imag_inj: return "PMU_II_inj";
        case RowKind::pmu_i_real_flow: return "PMU_IR_flow";
        case RowKind::pmu_i_imag_flow: return "PMU_II_flow";
        case RowKind::rtu_pseudo_real_inj: return "RTU_PSEUDO_R_inj";
        case RowKind::rtu_pseudo_imag_inj: return "RTU_PSEUDO_I_inj";
        case RowKind::rtu_pseudo_real_flow: return "RTU_PSEUDO_R_flow";
        case RowKind::rtu_pseudo_imag_flow: return "RTU_PSEUDO_I_flow";
    }
    return "?";
}

bool is_rtu_pseudo(RowKind kind) {
    return kind == RowKind::rtu_pseudo_real_inj || kind == RowKind::rtu_pseudo_imag_inj ||
           kind == RowKind::rtu_pseudo_real_flow || kind == RowKind::rtu_pseudo_imag_flow;
}

double pseudo_variance(double v, double sigma_v, double w, double sigma_w) {
    if (std::abs(w) < kZeroPowerGuard) {
        return sigma_w * sigma_w;
    }
    // V^2 = V * V, then f = W / V^2.
    double v2 = v * v;
    double var_v2 = v2 * v2 * (2.0 * (sigma_v / v) * (sigma_v / v));
    double f = w / v2;
    double rel_w = sigma_w / w;
    double rel_v2_sq = var_v2 / (v2 * v2);
    return f * f * (rel_w * rel_w + rel_v2_sq);
}

RowVariances assign_rtu_row_variances(RtuTriple const& triple) {
    return {pseudo_variance(triple.v, triple.sigma_v, triple.p, triple.sigma_p),
            pseudo_variance(triple.v, triple.sigma_v, triple.q, triple.sigma_q)};
}

std::size_t resolve_branch(NetworkCase const& network, int bus, int other_bus,
                           std::optional<std::size_t> branch_hint) {
    auto connects = [&](Branch const& br) {
        return (br.from_bus == bus && br.to_bus == other_bus) || (br.from_bus == other_bus && br.to_bus == bus);
    };
    if (branch_hint) {
        if (*branch_hint >= network.branches.size() || !connects(network.branches[*branch_hint])) {
            throw MeasurementError("branch " + std::to_string(*branch_hint) + " does not connect buses " +
                                   std::to_string(bus) + " and " + std::to_string(other_bus));
        }
        return *branch_hint;
    }
    std::optional<std::size_t> found;
    for (std::size_t k = 0; k < network.branches.size(); ++k) {
        if (connects(network.branches[k])) {
            if (found) {
                throw MeasurementError("parallel branches between buses " + std::to_string(bus) + " and " +
                                       std::to_string(other_bus) + "; give the branch position");
            }
            found = k;
        }
    }
    if (!found) {
        throw MeasurementError("no in-service branch between buses " + std::to_string(bus) + " and " +
                               std::to_string(other_bus));
    }
    return *found;
}

BranchSide flow_side(NetworkCase const& network, RawReading const& reading) {
    if (!reading.branch || *reading.branch >= network.branches.size()) {
        throw MeasurementError("flow reading " + std::to_string(reading.id) + " has no valid branch");
    }
    Branch const& br = network.branches[*reading.branch];
    if (br.from_bus == reading.bus) {
        return BranchSide::from;
    }
    if (br.to_bus == reading.bus) {
        return BranchSide::to;
    }
    throw MeasurementError("flow reading " + std::to_string(reading.id) + " is metered at bus " +
                           std::to_string(reading.bus) + " which is not an end of its branch");
}

namespace {

void check_reading(NetworkCase const& network, RawReading const& r) {
    std::string const tag = "reading " + std::to_string(r.id);
    if (!(r.sigma > 0.0) || !std::isfinite(r.sigma)) {
        throw MeasurementError(tag + " needs a positive finite sigma");
    }
    if (!std::isfinite(r.value)) {
        throw MeasurementError(tag + " has a non-finite value");
    }
    if (device_of(r.kind) != r.device) {
        throw MeasurementError(tag + ": kind " + std::string(to_string(r.kind)) + " is not a " +
                               std::string(to_string(r.device)) + " quantity");
    }
    if (!network.has_bus(r.bus)) {
        throw MeasurementError(tag + " is located at unknown bus " + std::to_string(r.bus));
    }
    if (is_flow(r.kind)) {
        flow_side(network, r);
    }
}

CurrentForm current_form(NetworkCase const& network, NetworkModel const& model, RawReading const& r) {
    if (is_flow(r.kind)) {
        return model.flow(*r.branch, flow_side(network, r));
    }
    return model.injection(network.bus_index(r.bus));
}

struct PowerPair {
    std::size_t first_position = 0;
    std::optional<std::size_t> p;
    std::optional<std::size_t> q;
    bool flow = false;
};

}  // namespace

MeasurementModel assemble(NetworkCase const& network, NetworkModel const& model,
                          std::span<RawReading const> readings) {
    MeasurementModel out;
    out.layout = model.layout();
    out.reference_bus = network.reference_bus;
    StateLayout const& layout = out.layout;

    std::unordered_set<int> ids;
    for (RawReading const& r : readings) {
        if (!ids.insert(r.id).second) {
            throw MeasurementError("duplicate reading id " + std::to_string(r.id));
        }
        check_reading(network, r);
    }

    auto push_row = [&](RowKind kind, double z, double variance, LinearForm coeffs, std::vector<int> sources) {
        coeffs.normalize();
        if (coeffs.empty()) {
            throw MeasurementError("row for reading " + std::to_string(sources.front()) +
                                   " has no state coefficients");
        }
        out.rows.push_back({out.rows.size(), kind, z, variance, std::move(coeffs), std::move(sources)});
    };

    for (RawReading const& r : readings) {
        if (r.device != Device::pmu) {
            continue;
        }
        std::size_t bus = network.bus_index(r.bus);
        double variance = r.sigma * r.sigma;
        LinearForm coeffs;
        switch (r.kind) {
            case ReadingKind::v_real:
                coeffs.add(layout.real_index(bus), 1.0);
                push_row(RowKind::pmu_v_real, r.value, variance, std::move(coeffs), {r.id});
                break;
            case ReadingKind::v_imag:
                if (auto vi = layout.imag_index(bus)) {
                    coeffs.add(*vi, 1.0);
                    push_row(RowKind::pmu_v_imag, r.value, variance, std::move(coeffs), {r.id});
                } else {
                    out.reference_readings.push_back(r.id);
                }
                break;
            case ReadingKind::i_real_inj:
            case ReadingKind::i_real_flow: {
                CurrentForm form = current_form(network, model, r);
                push_row(r.kind == ReadingKind::i_real_inj ? RowKind::pmu_i_real_inj : RowKind::pmu_i_real_flow,
                         r.value, variance, std::move(form.real), {r.id});
                break;
            }
            case ReadingKind::i_imag_inj:
            case ReadingKind::i_imag_flow: {
                CurrentForm form = current_form(network, model, r);
                push_row(r.kind == ReadingKind::i_imag_inj ? RowKind::pmu_i_imag_inj : RowKind::pmu_i_imag_flow,
                         r.value, variance, std::move(form.imag), {r.id});
                break;
            }
            default:
                break;
        }
    }

    // RTU groups: |V| per bus, P/Q pairs per (bus, branch or injection).
    std::unordered_map<int, std::size_t> voltage_at;
    using PairKey = std::tuple<bool, int, std::size_t>;
    std::map<PairKey, PowerPair> pairs;
    for (std::size_t i = 0; i < readings.size(); ++i) {
        RawReading const& r = readings[i];
        if (r.device != Device::rtu) {
            continue;
        }
        if (r.kind == ReadingKind::v_mag) {
            if (!voltage_at.emplace(r.bus, i).second) {
                throw MeasurementError("bus " + std::to_string(r.bus) + " has more than one RTU voltage reading");
            }
            if (!(r.value > 0.0)) {
                throw MeasurementError("reading " + std::to_string(r.id) + ": voltage magnitude must be positive");
            }
            continue;
        }
        bool flow = is_flow(r.kind);
        PairKey key{flow, r.bus, flow ? *r.branch : 0};
        auto [it, inserted] = pairs.try_emplace(key);
        PowerPair& pair = it->second;
        if (inserted) {
            pair.first_position = i;
            pair.flow = flow;
        }
        bool active = r.kind == ReadingKind::p_inj || r.kind == ReadingKind::p_flow;
        std::optional<std::size_t>& slot = active ? pair.p : pair.q;
        if (slot) {
            throw MeasurementError("reading " + std::to_string(r.id) + " duplicates reading " +
                                   std::to_string(readings[*slot].id) + " at the same location");
        }
        slot = i;
    }

    std::vector<PowerPair const*> ordered;
    for (auto const& [key, pair] : pairs) {
        ordered.push_back(&pair);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](PowerPair const* a, PowerPair const* b) { return a->first_position < b->first_position; });

    std::unordered_set<int> used_voltages;
    for (PowerPair const* pair : ordered) {
        RawReading const& first = readings[pair->first_position];
        if (!pair->p || !pair->q) {
            throw MeasurementError("reading " + std::to_string(first.id) +
                                   " needs both active and reactive power at its location");
        }
        auto v_it = voltage_at.find(first.bus);
        if (v_it == voltage_at.end()) {
            throw MeasurementError("RTU power reading " + std::to_string(first.id) + " at bus " +
                                   std::to_string(first.bus) + " has no voltage magnitude reading");
        }
        RawReading const& v = readings[v_it->second];
        RawReading const& p = readings[*pair->p];
        RawReading const& q = readings[*pair->q];
        used_voltages.insert(v.id);

        RowVariances variances = assign_rtu_row_variances({v.value, v.sigma, p.value, p.sigma, q.value, q.sigma});
        // Load reference direction: the device draws -P - jQ from the bus.
        double v2 = v.value * v.value;
        double a = -p.value / v2;
        double c = -q.value / v2;
        std::size_t bus = network.bus_index(first.bus);
        CurrentForm currents = current_form(network, model, p);

        LinearForm real_row = std::move(currents.real);
        real_row.add(layout.real_index(bus), a);
        LinearForm imag_row = std::move(currents.imag);
        imag_row.add(layout.real_index(bus), -c);
        if (auto vi = layout.imag_index(bus)) {
            real_row.add(*vi, c);
            imag_row.add(*vi, a);
        }
        std::vector<int> sources{v.id, p.id, q.id};
        push_row(pair->flow ? RowKind::rtu_pseudo_real_flow : RowKind::rtu_pseudo_real_inj, 0.0, variances.real,
                 std::move(real_row), sources);
        push_row(pair->flow ? RowKind::rtu_pseudo_imag_flow : RowKind::rtu_pseudo_imag_inj, 0.0, variances.imag,
                 std::move(imag_row), sources);
    }

    for (RawReading const& r : readings) {
        if (r.kind == ReadingKind::v_mag && !used_voltages.contains(r.id)) {
            out.unused_readings.push_back(r.id);
        }
    }
    return out;
}

std::vector<RawReading> parse_readings_json(std::string_view text, NetworkCase const& network) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (nlohmann::json::parse_error const& e) {
        throw MeasurementError(std::string("measurement JSON syntax error: ") + e.what());
    }
    nlohmann::json const& list = doc.is_object() ? doc.at("readings") : doc;
    if (!list.is_array()) {
        throw MeasurementError("measurement set must be an array of readings");
    }
    std::vector<RawReading> readings;
    readings.reserve(list.size());
    try {
        for (std::size_t i = 0; i < list.size(); ++i) {
            auto const& j = list[i];
            RawReading r;
            r.id = j.value("id", static_cast<int>(i));
            r.kind = parse_reading_kind(j.at("kind").get<std::string>());
            r.device = j.contains("device") ? parse_device(j.at("device").get<std::string>()) : device_of(r.kind);
            r.bus = j.at("bus").get<int>();
            r.value = j.value("value", 0.0);
            r.sigma = j.value("sigma", 0.0);
            if (is_flow(r.kind)) {
                std::optional<std::size_t> hint;
                if (j.contains("branch") && !j.at("branch").is_null()) {
                    hint = j.at("branch").get<std::size_t>();
                }
                int from = j.value("branch_from", r.bus);
                int to = j.value("branch_to", r.bus);
                if (hint && !j.contains("branch_from")) {
                    r.branch = hint;
                } else {
                    int other = from == r.bus ? to : from;
                    if (from != r.bus && to != r.bus) {
                        throw MeasurementError("flow reading " + std::to_string(r.id) +
                                               " is not metered at an end of branch " + std::to_string(from) +
                                               "-" + std::to_string(to));
                    }
                    r.branch = resolve_branch(network, r.bus, other, hint);
                }
            }
            readings.push_back(r);
        }
    } catch (nlohmann::json::exception const& e) {
        throw MeasurementError(std::string("invalid measurement JSON: ") + e.what());
    }
    return readings;
}

std::vector<RawReading> load_readings(std::string const& path, NetworkCase const& network) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MeasurementError("cannot open measurement file " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_readings_json(buffer.str(), network);
}

std::string readings_to_json(std::span<RawReading const> readings, NetworkCase const& network) {
    nlohmann::json list = nlohmann::json::array();
    for (RawReading const& r : readings) {
        nlohmann::json j{{"id", r.id},
                         {"device", to_string(r.device)},
                         {"kind", to_string(r.kind)},
                         {"bus", r.bus},
                         {"value", r.value},
                         {"sigma", r.sigma}};
        if (r.branch) {
            Branch const& br = network.branches.at(*r.branch);
            j["branch_from"] = br.from_bus;
            j["branch_to"] = br.to_bus;
            j["branch"] = *r.branch;
        }
        list.push_back(std::move(j));
    }
    return list.dump(1);
}

}  // namespace linse
