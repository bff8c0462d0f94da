#pragma once

// MATPOWER-subset case parsing and the canonical JSON exchange format.
//
// Only mpc.baseMVA, mpc.bus, mpc.gen and mpc.branch are read. Other
// assignments (version, gencost, bus_name, ...) are skipped. Powers are
// stored in per unit on the system base; angles in radians.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qpf/errors.hpp"

namespace qpf {

enum class BusType { slack, pv, pq };

struct BusRecord {
    int id = 0;
    BusType bus_type = BusType::pq;
    double p_demand = 0.0;
    double q_demand = 0.0;
    double shunt_gs = 0.0;
    double shunt_bs = 0.0;
    double v_set = 1.0;
    bool operator==(const BusRecord &) const = default;
};

/// Net generation at one bus; several in-service units on a bus are merged.
struct GenRecord {
    int bus = 0;
    double p_gen = 0.0;
    double q_gen = 0.0;
    double v_set = 1.0;
    bool operator==(const GenRecord &) const = default;
};

enum class BranchStatus { on, off };

struct BranchRecord {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charge = 0.0;
    double tap = 1.0;
    double shift = 0.0; // radians
    BranchStatus status = BranchStatus::on;
    bool operator==(const BranchRecord &) const = default;
};

struct CaseData {
    double base_mva = 100.0;
    std::vector<BusRecord> buses;
    std::vector<GenRecord> gens;
    std::vector<BranchRecord> branches;
    bool operator==(const CaseData &) const = default;

    [[nodiscard]] std::size_t n_buses() const { return buses.size(); }

    /// Position of bus `id` in `buses`; throws ValidationError if absent.
    [[nodiscard]] std::size_t index_of(int id) const {
        for (std::size_t i = 0; i < buses.size(); ++i) {
            if (buses[i].id == id) {
                return i;
            }
        }
        throw ValidationError(ValidationCode::unknown_bus, "bus " + std::to_string(id) + " does not exist");
    }
};

inline const char *to_string(BusType t) {
    switch (t) {
    case BusType::slack: return "slack";
    case BusType::pv: return "pv";
    case BusType::pq: return "pq";
    }
    return "pq";
}

/// Throws ValidationError (with a distinct code per violation) if `c` breaks an invariant.
inline void validate(const CaseData &c) {
    if (!(c.base_mva > 0.0) || !std::isfinite(c.base_mva)) {
        throw ValidationError(ValidationCode::non_positive_base, "base_mva must be positive");
    }
    if (c.buses.empty()) {
        throw ValidationError(ValidationCode::empty_buses, "case has no buses");
    }
    std::set<int> ids;
    int slack_count = 0;
    for (const auto &b : c.buses) {
        if (!ids.insert(b.id).second) {
            throw ValidationError(ValidationCode::duplicate_bus, "bus id " + std::to_string(b.id) + " repeated");
        }
        if (b.bus_type == BusType::slack) {
            ++slack_count;
        }
        if (b.bus_type != BusType::pq && !(b.v_set > 0.0)) {
            throw ValidationError(ValidationCode::non_positive_vset,
                                  "bus " + std::to_string(b.id) + " needs a positive voltage setpoint");
        }
    }
    if (slack_count == 0) {
        throw ValidationError(ValidationCode::missing_slack, "no slack bus");
    }
    if (slack_count > 1) {
        throw ValidationError(ValidationCode::multiple_slack, "more than one slack bus");
    }
    for (const auto &g : c.gens) {
        if (!ids.contains(g.bus)) {
            throw ValidationError(ValidationCode::unknown_bus, "generator at unknown bus " + std::to_string(g.bus));
        }
        if (!std::isfinite(g.p_gen) || !std::isfinite(g.q_gen)) {
            throw ValidationError(ValidationCode::non_finite_gen, "generator at bus " + std::to_string(g.bus));
        }
    }
    for (const auto &br : c.branches) {
        if (!ids.contains(br.from_bus) || !ids.contains(br.to_bus)) {
            throw ValidationError(ValidationCode::unknown_bus, "branch " + std::to_string(br.from_bus) + "-" +
                                                                   std::to_string(br.to_bus) + " references unknown bus");
        }
        if (br.status == BranchStatus::on && br.r == 0.0 && br.x == 0.0) {
            throw ValidationError(ValidationCode::zero_impedance, "branch " + std::to_string(br.from_bus) + "-" +
                                                                      std::to_string(br.to_bus) + " has zero impedance");
        }
        if (!(br.tap > 0.0)) {
            throw ValidationError(ValidationCode::non_positive_tap, "branch " + std::to_string(br.from_bus) + "-" +
                                                                        std::to_string(br.to_bus) + " tap ratio");
        }
    }
}

namespace detail {

struct MatrixBlock {
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> lines;
    bool present = false;
};

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline double parse_number(std::string_view tok, std::size_t line, std::string_view block) {
    double v = 0.0;
    const char *end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ParseError(line, "invalid number '" + std::string(tok) + "' in mpc." + std::string(block));
    }
    return v;
}

/// Splits `row` on whitespace and commas and appends it to `block` if non-empty.
inline void push_row(MatrixBlock &block, std::string_view row, std::size_t line, std::string_view name) {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos < row.size()) {
        while (pos < row.size() && (row[pos] == ' ' || row[pos] == '\t' || row[pos] == ',' || row[pos] == '\r')) {
            ++pos;
        }
        std::size_t end = pos;
        while (end < row.size() && row[end] != ' ' && row[end] != '\t' && row[end] != ',' && row[end] != '\r') {
            ++end;
        }
        if (end > pos) {
            values.push_back(parse_number(row.substr(pos, end - pos), line, name));
        }
        pos = end;
    }
    if (!values.empty()) {
        block.rows.push_back(std::move(values));
        block.lines.push_back(line);
    }
}

inline void require_columns(const MatrixBlock &b, std::size_t n, std::string_view name) {
    for (std::size_t i = 0; i < b.rows.size(); ++i) {
        if (b.rows[i].size() < n) {
            throw ParseError(b.lines[i], "mpc." + std::string(name) + " row needs at least " + std::to_string(n) +
                                             " columns, found " + std::to_string(b.rows[i].size()));
        }
    }
}

inline int as_id(double v, std::size_t line) {
    if (v != std::floor(v)) {
        throw ParseError(line, "bus id must be an integer");
    }
    return static_cast<int>(v);
}

} // namespace detail

/// Parses a MATPOWER case (subset). Powers are converted to per unit,
/// out-of-service branches dropped, and generators merged per bus.
inline CaseData parse_case(std::string_view text) {
    std::map<std::string, detail::MatrixBlock, std::less<>> blocks;
    std::optional<double> base_mva;

    std::string current;        // name of the open matrix block, empty when outside
    char closer = ']';          // ']' for matrices, '}' for skipped cell arrays
    std::size_t open_line = 0;
    std::size_t line_no = 0;
    std::size_t pos = 0;

    auto consume_block_text = [&](std::string_view s) {
        // Returns after closing the block (if the closer is on this line).
        const auto close = s.find(closer);
        std::string_view body = close == std::string_view::npos ? s : s.substr(0, close);
        if (current != "#skip") {
            auto &blk = blocks[current];
            std::size_t start = 0;
            while (start <= body.size()) {
                const auto semi = body.find(';', start);
                const auto piece = body.substr(start, semi == std::string_view::npos ? body.size() - start : semi - start);
                detail::push_row(blk, piece, line_no, current);
                if (semi == std::string_view::npos) {
                    break;
                }
                start = semi + 1;
            }
        }
        if (close != std::string_view::npos) {
            current.clear();
        }
    };

    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        if (const auto pct = line.find('%'); pct != std::string_view::npos) {
            line = line.substr(0, pct);
        }
        line = detail::trim(line);
        if (!current.empty()) {
            consume_block_text(line);
            continue;
        }
        if (line.empty() || !line.starts_with("mpc.")) {
            continue; // function header, blank lines, stray statements
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(line_no, "expected '=' in assignment");
        }
        const std::string name(detail::trim(line.substr(4, eq - 4)));
        std::string_view rhs = detail::trim(line.substr(eq + 1));
        if (rhs.starts_with('[') || rhs.starts_with('{')) {
            closer = rhs.front() == '[' ? ']' : '}';
            const bool wanted = closer == ']' && (name == "bus" || name == "gen" || name == "branch");
            current = wanted ? name : std::string("#skip");
            open_line = line_no;
            if (wanted) {
                if (blocks[name].present) {
                    throw ParseError(line_no, "mpc." + name + " assigned twice");
                }
                blocks[name].present = true;
            }
            consume_block_text(rhs.substr(1));
            continue;
        }
        if (name == "baseMVA") {
            if (rhs.ends_with(';')) {
                rhs.remove_suffix(1);
            }
            base_mva = detail::parse_number(detail::trim(rhs), line_no, name);
        }
    }
    if (!current.empty()) {
        throw ParseError(open_line, "unterminated block mpc." + current);
    }
    if (!base_mva) {
        throw ParseError(0, "missing mpc.baseMVA");
    }
    if (!blocks["bus"].present) {
        throw ParseError(0, "missing mpc.bus");
    }

    CaseData c;
    c.base_mva = *base_mva;
    if (!(c.base_mva > 0.0)) {
        throw ValidationError(ValidationCode::non_positive_base, "base_mva must be positive");
    }
    const double base = c.base_mva;

    const auto &bus = blocks["bus"];
    detail::require_columns(bus, 8, "bus");
    for (std::size_t i = 0; i < bus.rows.size(); ++i) {
        const auto &r = bus.rows[i];
        BusRecord b;
        b.id = detail::as_id(r[0], bus.lines[i]);
        switch (static_cast<int>(r[1])) {
        case 3: b.bus_type = BusType::slack; break;
        case 2: b.bus_type = BusType::pv; break;
        case 1: b.bus_type = BusType::pq; break;
        default: throw ParseError(bus.lines[i], "unsupported bus type " + std::to_string(r[1]));
        }
        b.p_demand = r[2] / base;
        b.q_demand = r[3] / base;
        b.shunt_gs = r[4] / base;
        b.shunt_bs = r[5] / base;
        b.v_set = r[7];
        c.buses.push_back(b);
    }

    const auto &gen = blocks["gen"];
    detail::require_columns(gen, 6, "gen");
    std::set<int> bus_ids;
    for (const auto &b : c.buses) {
        bus_ids.insert(b.id);
    }
    for (std::size_t i = 0; i < gen.rows.size(); ++i) {
        const auto &r = gen.rows[i];
        if (r.size() >= 8 && r[7] <= 0.0) {
            continue; // out of service
        }
        const int at = detail::as_id(r[0], gen.lines[i]);
        if (!bus_ids.contains(at)) {
            throw ValidationError(ValidationCode::unknown_bus, "generator at unknown bus " + std::to_string(at) +
                                                                   " (line " + std::to_string(gen.lines[i]) + ")");
        }
        auto it = std::find_if(c.gens.begin(), c.gens.end(), [&](const GenRecord &g) { return g.bus == at; });
        if (it == c.gens.end()) {
            c.gens.push_back(GenRecord{at, r[1] / base, r[2] / base, r[5]});
        } else {
            it->p_gen += r[1] / base;
            it->q_gen += r[2] / base;
        }
    }
    // Regulated buses hold the setpoint of their first generator.
    for (const auto &g : c.gens) {
        for (auto &b : c.buses) {
            if (b.id == g.bus && b.bus_type != BusType::pq) {
                b.v_set = g.v_set;
            }
        }
    }

    const auto &branch = blocks["branch"];
    detail::require_columns(branch, 5, "branch");
    for (std::size_t i = 0; i < branch.rows.size(); ++i) {
        const auto &r = branch.rows[i];
        if (r.size() >= 11 && r[10] <= 0.0) {
            continue;
        }
        BranchRecord br;
        br.from_bus = detail::as_id(r[0], branch.lines[i]);
        br.to_bus = detail::as_id(r[1], branch.lines[i]);
        br.r = r[2];
        br.x = r[3];
        br.b_charge = r[4];
        br.tap = (r.size() >= 9 && r[8] != 0.0) ? r[8] : 1.0;
        br.shift = r.size() >= 10 ? r[9] * std::numbers::pi / 180.0 : 0.0;
        c.branches.push_back(br);
    }

    validate(c);
    return c;
}

// ---------------------------------------------------------------------------
// JSON exchange. Field names mirror the structs exactly.

inline nlohmann::json to_json_value(const CaseData &c) {
    using nlohmann::json;
    json j;
    j["base_mva"] = c.base_mva;
    j["buses"] = json::array();
    for (const auto &b : c.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"bus_type", to_string(b.bus_type)},
                              {"p_demand", b.p_demand},
                              {"q_demand", b.q_demand},
                              {"shunt_gs", b.shunt_gs},
                              {"shunt_bs", b.shunt_bs},
                              {"v_set", b.v_set}});
    }
    j["gens"] = json::array();
    for (const auto &g : c.gens) {
        j["gens"].push_back({{"bus", g.bus}, {"p_gen", g.p_gen}, {"q_gen", g.q_gen}, {"v_set", g.v_set}});
    }
    j["branches"] = json::array();
    for (const auto &br : c.branches) {
        j["branches"].push_back({{"from_bus", br.from_bus},
                                 {"to_bus", br.to_bus},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b_charge", br.b_charge},
                                 {"tap", br.tap},
                                 {"shift", br.shift},
                                 {"status", br.status == BranchStatus::on ? "on" : "off"}});
    }
    return j;
}

inline std::string case_to_json(const CaseData &c) { return to_json_value(c).dump(2); }

inline CaseData case_from_json_value(const nlohmann::json &j) {
    CaseData c;
    try {
        c.base_mva = j.at("base_mva").get<double>();
        for (const auto &jb : j.at("buses")) {
            BusRecord b;
            b.id = jb.at("id").get<int>();
            const auto t = jb.at("bus_type").get<std::string>();
            if (t == "slack") {
                b.bus_type = BusType::slack;
            } else if (t == "pv") {
                b.bus_type = BusType::pv;
            } else if (t == "pq") {
                b.bus_type = BusType::pq;
            } else {
                throw ValidationError(ValidationCode::malformed_document, "unknown bus_type '" + t + "'");
            }
            b.p_demand = jb.at("p_demand").get<double>();
            b.q_demand = jb.at("q_demand").get<double>();
            b.shunt_gs = jb.at("shunt_gs").get<double>();
            b.shunt_bs = jb.at("shunt_bs").get<double>();
            b.v_set = jb.at("v_set").get<double>();
            c.buses.push_back(b);
        }
        for (const auto &jg : j.at("gens")) {
            c.gens.push_back(GenRecord{jg.at("bus").get<int>(), jg.at("p_gen").get<double>(),
                                       jg.at("q_gen").get<double>(), jg.at("v_set").get<double>()});
        }
        for (const auto &jr : j.at("branches")) {
            BranchRecord br;
            br.from_bus = jr.at("from_bus").get<int>();
            br.to_bus = jr.at("to_bus").get<int>();
            br.r = jr.at("r").get<double>();
            br.x = jr.at("x").get<double>();
            br.b_charge = jr.at("b_charge").get<double>();
            br.tap = jr.at("tap").get<double>();
            br.shift = jr.at("shift").get<double>();
            const auto s = jr.at("status").get<std::string>();
            if (s != "on" && s != "off") {
                throw ValidationError(ValidationCode::malformed_document, "unknown branch status '" + s + "'");
            }
            br.status = s == "on" ? BranchStatus::on : BranchStatus::off;
            c.branches.push_back(br);
        }
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(ValidationCode::malformed_document, e.what());
    }
    validate(c);
    return c;
}

inline CaseData json_to_case(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception &e) {
        throw ValidationError(ValidationCode::malformed_document, e.what());
    }
    return case_from_json_value(j);
}

/// Reads a case from disk: `.json` files use the JSON format, anything else
/// is parsed as MATPOWER text.
inline CaseData load_case_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open case file '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return path.extension() == ".json" ? json_to_case(ss.str()) : parse_case(ss.str());
}

} // namespace qpf
