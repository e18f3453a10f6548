#include "linse/case.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace linse {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string position_suffix(std::size_t line, std::size_t column) {
    if (line == 0) {
        return {};
    }
    return " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")";
}

// Minimal scanner for the MATPOWER case subset: `mpc.<name> = <number>;` and
// `mpc.<name> = [ rows ];`. Comments start with `%`. Other statements are
// skipped up to their terminating `;` (brace/bracket aware).
class MatpowerScanner {
  public:
    explicit MatpowerScanner(std::string_view text) : text_(text) {}

    struct Matrix {
        std::vector<std::vector<double>> rows;
        std::vector<std::size_t> row_lines;
    };

    void run() {
        while (true) {
            skip_space_and_comments();
            if (at_end()) {
                break;
            }
            if (match_word("mpc.")) {
                parse_assignment();
            } else {
                skip_statement();
            }
        }
    }

    std::map<std::string, double> scalars;
    std::map<std::string, Matrix> matrices;

  private:
    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return at_end() ? '\0' : text_[pos_]; }

    void advance() {
        if (text_[pos_] == '\n') {
            ++line_;
            line_start_ = pos_ + 1;
        }
        ++pos_;
    }

    std::size_t column() const { return pos_ - line_start_ + 1; }

    [[noreturn]] void fail(std::string const& message) const {
        throw CaseError("MATPOWER syntax error: " + message, line_, column());
    }

    void skip_comment() {
        while (!at_end() && peek() != '\n') {
            advance();
        }
    }

    void skip_space_and_comments(bool stop_at_newline = false) {
        while (!at_end()) {
            char c = peek();
            if (c == '%') {
                skip_comment();
            } else if (c == '\n' && stop_at_newline) {
                return;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else if (c == '.' && text_.substr(pos_, 3) == "...") {
                // line continuation
                skip_comment();
                if (!at_end()) {
                    advance();
                }
            } else {
                return;
            }
        }
    }

    bool match_word(std::string_view word) {
        if (text_.substr(pos_, word.size()) == word) {
            for (std::size_t i = 0; i < word.size(); ++i) {
                advance();
            }
            return true;
        }
        return false;
    }

    std::string read_identifier() {
        std::string name;
        while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) {
            name.push_back(peek());
            advance();
        }
        if (name.empty()) {
            fail("expected field name after 'mpc.'");
        }
        return name;
    }

    void skip_statement() {
        int depth = 0;
        bool in_string = false;
        while (!at_end()) {
            char c = peek();
            if (in_string) {
                if (c == '\'' || c == '\n') {
                    in_string = false;
                }
            } else if (c == '\'') {
                in_string = true;
            } else if (c == '%') {
                skip_comment();
                continue;
            } else if (c == '[' || c == '{' || c == '(') {
                ++depth;
            } else if (c == ']' || c == '}' || c == ')') {
                --depth;
            } else if ((c == ';' || c == '\n') && depth <= 0) {
                advance();
                return;
            }
            advance();
        }
    }

    double read_number() {
        std::size_t start = pos_;
        while (!at_end()) {
            char c = peek();
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' ||
                c == 'e' || c == 'E') {
                advance();
            } else {
                break;
            }
        }
        std::string token(text_.substr(start, pos_ - start));
        if (token.empty() || token == "-" || token == "+") {
            // Inf/NaN literals show up in a few MATPOWER limit columns.
            double sign = token == "-" ? -1.0 : 1.0;
            std::string word;
            while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) {
                word.push_back(peek());
                advance();
            }
            if (word == "Inf" || word == "inf") {
                return sign * HUGE_VAL;
            }
            if (word == "NaN" || word == "nan") {
                return std::nan("");
            }
            fail("unexpected character '" + std::string(1, peek()) + "'");
        }
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (ec != std::errc{} || ptr != token.data() + token.size()) {
            pos_ = start;
            fail("malformed number '" + token + "'");
        }
        return value;
    }

    void parse_assignment() {
        std::string name = read_identifier();
        skip_space_and_comments();
        if (!match_word("=")) {
            fail("expected '=' after 'mpc." + name + "'");
        }
        skip_space_and_comments();
        char c = peek();
        if (c == '[') {
            advance();
            matrices[name] = parse_matrix();
        } else if (c == '\'' || c == '{') {
            skip_statement();
        } else {
            scalars[name] = read_number();
            skip_space_and_comments(true);
            if (peek() == ';') {
                advance();
            }
        }
    }

    Matrix parse_matrix() {
        Matrix m;
        std::vector<double> row;
        std::size_t row_line = line_;
        auto flush = [&] {
            if (!row.empty()) {
                if (!m.rows.empty() && m.rows.front().size() != row.size()) {
                    fail("row has " + std::to_string(row.size()) + " columns, expected " +
                         std::to_string(m.rows.front().size()));
                }
                m.rows.push_back(std::move(row));
                m.row_lines.push_back(row_line);
                row.clear();
            }
        };
        while (true) {
            skip_space_and_comments(true);
            if (at_end()) {
                fail("unterminated matrix");
            }
            char c = peek();
            if (c == ']') {
                advance();
                flush();
                skip_space_and_comments(true);
                if (peek() == ';') {
                    advance();
                }
                return m;
            }
            if (c == ';' || c == '\n') {
                advance();
                flush();
                continue;
            }
            if (c == ',') {
                advance();
                continue;
            }
            if (row.empty()) {
                row_line = line_;
            }
            row.push_back(read_number());
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t line_start_ = 0;
};

std::pair<std::size_t, std::size_t> line_column_of(std::string_view text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t column = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

}  // namespace

CaseError::CaseError(std::string const& what, std::size_t line, std::size_t column)
    : std::runtime_error(what + position_suffix(line, column)), line_(line), column_(column) {}

std::size_t NetworkCase::bus_index(int id) const {
    if (auto it = id_to_index.find(id);
        it != id_to_index.end() && it->second < buses.size() && buses[it->second].id == id) {
        return it->second;
    }
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == id) {
            return i;
        }
    }
    throw CaseError("unknown bus id " + std::to_string(id));
}

bool NetworkCase::has_bus(int id) const {
    if (auto it = id_to_index.find(id);
        it != id_to_index.end() && it->second < buses.size() && buses[it->second].id == id) {
        return true;
    }
    return std::any_of(buses.begin(), buses.end(), [id](Bus const& b) { return b.id == id; });
}

void validate(NetworkCase const& network) {
    if (network.buses.empty()) {
        throw CaseError("case has no buses");
    }
    if (!(network.base_mva > 0.0)) {
        throw CaseError("base MVA must be positive");
    }
    std::unordered_set<int> ids;
    for (Bus const& bus : network.buses) {
        if (!ids.insert(bus.id).second) {
            throw CaseError("duplicate bus id " + std::to_string(bus.id));
        }
        if (!(bus.v_true_mag > 0.0) || !std::isfinite(bus.v_true_mag) ||
            !std::isfinite(bus.v_true_ang)) {
            throw CaseError("bus " + std::to_string(bus.id) + " has no valid voltage profile");
        }
    }
    if (!ids.contains(network.reference_bus)) {
        throw CaseError("reference bus " + std::to_string(network.reference_bus) + " does not exist");
    }
    for (std::size_t k = 0; k < network.branches.size(); ++k) {
        Branch const& br = network.branches[k];
        for (int end : {br.from_bus, br.to_bus}) {
            if (!ids.contains(end)) {
                throw CaseError("branch " + std::to_string(k) + " references nonexistent bus " +
                                std::to_string(end));
            }
        }
        if (!(br.tap > 0.0)) {
            throw CaseError("branch " + std::to_string(k) + " has nonpositive tap ratio");
        }
    }
}

namespace {

void finalize(NetworkCase& network, std::vector<Branch> all_branches) {
    NetworkCase probe = network;
    probe.branches = all_branches;
    validate(probe);
    network.branches.clear();
    for (Branch const& br : all_branches) {
        if (br.in_service) {
            network.branches.push_back(br);
        }
    }
    network.id_to_index.clear();
    for (std::size_t i = 0; i < network.buses.size(); ++i) {
        network.id_to_index.emplace(network.buses[i].id, i);
    }
}

}  // namespace

NetworkCase parse_matpower(std::string_view text) {
    MatpowerScanner scanner(text);
    scanner.run();

    NetworkCase network;
    if (auto it = scanner.scalars.find("baseMVA"); it != scanner.scalars.end()) {
        network.base_mva = it->second;
    } else {
        throw CaseError("missing mpc.baseMVA");
    }
    auto bus_it = scanner.matrices.find("bus");
    if (bus_it == scanner.matrices.end() || bus_it->second.rows.empty()) {
        throw CaseError("missing mpc.bus table");
    }
    auto const& bus_rows = bus_it->second;
    if (bus_rows.rows.front().size() < 9) {
        throw CaseError("bus table lacks the Vm/Va voltage profile columns", bus_rows.row_lines.front(), 1);
    }
    std::optional<int> reference;
    for (std::size_t r = 0; r < bus_rows.rows.size(); ++r) {
        auto const& row = bus_rows.rows[r];
        Bus bus;
        bus.id = static_cast<int>(row[0]);
        int type = static_cast<int>(row[1]);
        if (type == 4) {
            // isolated buses carry no state
            continue;
        }
        bus.shunt_g = row[4] / network.base_mva;
        bus.shunt_b = row[5] / network.base_mva;
        bus.v_true_mag = row[7];
        bus.v_true_ang = row[8] * kDegToRad;
        if (!(bus.v_true_mag > 0.0)) {
            throw CaseError("bus " + std::to_string(bus.id) + " has nonpositive voltage magnitude",
                            bus_rows.row_lines[r], 1);
        }
        if (type == 3 && !reference) {
            reference = bus.id;
        }
        network.buses.push_back(bus);
    }
    if (!reference) {
        throw CaseError("no reference (type 3) bus in case");
    }
    network.reference_bus = *reference;

    auto br_it = scanner.matrices.find("branch");
    std::vector<Branch> branches;
    if (br_it != scanner.matrices.end()) {
        auto const& rows = br_it->second;
        for (std::size_t r = 0; r < rows.rows.size(); ++r) {
            auto const& row = rows.rows[r];
            if (row.size() < 5) {
                throw CaseError("branch row needs at least 5 columns", rows.row_lines[r], 1);
            }
            Branch br;
            br.from_bus = static_cast<int>(row[0]);
            br.to_bus = static_cast<int>(row[1]);
            br.r = row[2];
            br.x = row[3];
            br.b_charging = row[4];
            double ratio = row.size() > 8 ? row[8] : 0.0;
            if (ratio < 0.0) {
                throw CaseError("nonpositive tap ratio", rows.row_lines[r], 1);
            }
            br.tap = ratio == 0.0 ? 1.0 : ratio;
            br.shift = row.size() > 9 ? row[9] * kDegToRad : 0.0;
            br.in_service = row.size() > 10 ? row[10] != 0.0 : true;
            if (!network.has_bus(br.from_bus) || !network.has_bus(br.to_bus)) {
                int missing = network.has_bus(br.from_bus) ? br.to_bus : br.from_bus;
                throw CaseError("branch references nonexistent bus " + std::to_string(missing),
                                rows.row_lines[r], 1);
            }
            branches.push_back(br);
        }
    }
    if (auto gen_it = scanner.matrices.find("gen"); gen_it != scanner.matrices.end()) {
        for (auto const& row : gen_it->second.rows) {
            if (row.size() > 7 && row[7] <= 0.0) {
                continue;
            }
            network.generator_buses.push_back(static_cast<int>(row[0]));
        }
    }
    finalize(network, std::move(branches));
    return network;
}

NetworkCase parse_case_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text.begin(), text.end());
    } catch (nlohmann::json::parse_error const& e) {
        auto [line, column] = line_column_of(text, e.byte == 0 ? 0 : e.byte - 1);
        throw CaseError(std::string("JSON syntax error: ") + e.what(), line, column);
    }
    NetworkCase network;
    try {
        network.base_mva = doc.value("base_mva", 100.0);
        network.reference_bus = doc.at("reference_bus").get<int>();
        for (auto const& jb : doc.at("buses")) {
            Bus bus;
            bus.id = jb.at("id").get<int>();
            if (!jb.contains("vm") || !jb.contains("va_deg")) {
                throw CaseError("bus " + std::to_string(bus.id) + " is missing its voltage profile (vm, va_deg)");
            }
            bus.v_true_mag = jb.at("vm").get<double>();
            bus.v_true_ang = jb.at("va_deg").get<double>() * kDegToRad;
            bus.shunt_g = jb.value("gs", 0.0);
            bus.shunt_b = jb.value("bs", 0.0);
            network.buses.push_back(bus);
        }
        std::vector<Branch> branches;
        for (auto const& jr : doc.value("branches", nlohmann::json::array())) {
            Branch br;
            br.from_bus = jr.at("from").get<int>();
            br.to_bus = jr.at("to").get<int>();
            br.r = jr.value("r", 0.0);
            br.x = jr.value("x", 0.0);
            br.b_charging = jr.value("b", 0.0);
            br.tap = jr.value("tap", 1.0);
            br.shift = jr.value("shift_deg", 0.0) * kDegToRad;
            br.in_service = jr.value("status", 1) != 0;
            branches.push_back(br);
        }
        network.generator_buses = doc.value("generator_buses", std::vector<int>{});
        finalize(network, std::move(branches));
    } catch (nlohmann::json::exception const& e) {
        throw CaseError(std::string("invalid case JSON: ") + e.what());
    }
    return network;
}

NetworkCase parse_case(std::string_view text) {
    auto first = std::find_if(text.begin(), text.end(),
                              [](char c) { return !std::isspace(static_cast<unsigned char>(c)); });
    if (first != text.end() && *first == '{') {
        return parse_case_json(text);
    }
    return parse_matpower(text);
}

NetworkCase load_case(std::filesystem::path const& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CaseError("cannot open case file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_case(buffer.str());
}

std::string case_to_json(NetworkCase const& network) {
    nlohmann::json doc;
    doc["base_mva"] = network.base_mva;
    doc["reference_bus"] = network.reference_bus;
    auto& buses = doc["buses"] = nlohmann::json::array();
    for (Bus const& bus : network.buses) {
        buses.push_back({{"id", bus.id},
                         {"vm", bus.v_true_mag},
                         {"va_deg", bus.v_true_ang / kDegToRad},
                         {"gs", bus.shunt_g},
                         {"bs", bus.shunt_b}});
    }
    auto& branches = doc["branches"] = nlohmann::json::array();
    for (Branch const& br : network.branches) {
        branches.push_back({{"from", br.from_bus},
                            {"to", br.to_bus},
                            {"r", br.r},
                            {"x", br.x},
                            {"b", br.b_charging},
                            {"tap", br.tap},
                            {"shift_deg", br.shift / kDegToRad},
                            {"status", br.in_service ? 1 : 0}});
    }
    if (!network.generator_buses.empty()) {
        doc["generator_buses"] = network.generator_buses;
    }
    return doc.dump(1, '\t');
}

NetworkCase rotate_to_reference(NetworkCase network) {
    double offset = network.buses[network.reference_index()].v_true_ang;
    for (Bus& bus : network.buses) {
        bus.v_true_ang -= offset;
    }
    return network;
}

}  // namespace linse
