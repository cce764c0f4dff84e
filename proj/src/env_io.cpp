#include <charconv>
#include <iomanip>
#include <set>
#include <sstream>

#include "ergwalk/env_core.hpp"
#include "ergwalk/errors.hpp"

namespace ergwalk {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r' && c != ' ') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("csv line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
    }
    return v;
}

long parse_long(const std::string& s, int line_no) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError("csv line " + std::to_string(line_no) + ": bad site index '" + s + "'");
    }
    return v;
}

}  // namespace

std::string environment_to_csv(const Environment& env, long a, long b) {
    if (a > b) throw ConfigError("environment_to_csv: empty window");
    std::ostringstream out;
    out << std::setprecision(17);
    if (env.model() == Model::bdp) {
        out << "site_index";
        for (int l = env.L(); l >= 1; --l) out << ",mu_" << l;
        for (int r = 1; r <= env.R(); ++r) out << ",lambda_" << r;
        out << '\n';
        for (long x = a; x <= b; ++x) {
            out << x;
            for (double v : env.rates(x).to_tuple()) out << ',' << v;
            out << '\n';
        }
        return out.str();
    }
    std::set<int> support;
    for (long x = a; x <= b; ++x) {
        const auto& law = env.law(x);
        support.insert(law.offsets.begin(), law.offsets.end());
    }
    out << "site_index";
    for (int j : support) out << ",p_" << j;
    out << '\n';
    for (long x = a; x <= b; ++x) {
        out << x;
        const auto& law = env.law(x);
        for (int j : support) out << ',' << law.prob(j);
        out << '\n';
    }
    return out.str();
}

Environment environment_from_csv(const std::string& text, Model model, int L, int R) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line != "\r") {
            header = split(line, ',');
            break;
        }
    }
    if (header.empty() || header[0] != "site_index") throw ConfigError("csv: header must start with site_index");

    EnvSpec spec;
    spec.model = model;
    spec.mode = Mode::table;
    spec.L = L;
    spec.R = R;

    std::vector<int> offsets;
    if (model == Model::bdp) {
        if (static_cast<int>(header.size()) != 1 + L + R) {
            throw ConfigError("csv: expected " + std::to_string(L + R) + " rate columns");
        }
    } else {
        for (std::size_t c = 1; c < header.size(); ++c) {
            if (header[c].rfind("p_", 0) != 0) throw ConfigError("csv: rwre columns must be named p_<j>");
            offsets.push_back(static_cast<int>(parse_long(header[c].substr(2), line_no)));
        }
    }

    bool first = true;
    long expected = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = split(line, ',');
        if (cells.size() != header.size()) throw ConfigError("csv line " + std::to_string(line_no) + ": wrong arity");
        const long x = parse_long(cells[0], line_no);
        if (first) {
            spec.table_origin = x;
            expected = x;
            first = false;
        }
        if (x != expected) throw ConfigError("csv: site indices must be consecutive");
        ++expected;
        if (model == Model::bdp) {
            std::vector<double> tuple;
            for (std::size_t c = 1; c < cells.size(); ++c) tuple.push_back(parse_double(cells[c], line_no));
            spec.rate_sites.push_back(SiteRates::from_tuple(tuple, L, R));
        } else {
            std::map<int, double> probs;
            for (std::size_t c = 1; c < cells.size(); ++c) {
                const double p = parse_double(cells[c], line_no);
                if (p != 0.0) probs[offsets[c - 1]] = p;
            }
            spec.law_sites.push_back(RwreSiteLaw::from_map(probs));
        }
    }
    if (first) throw ConfigError("csv: no sites");
    return Environment(spec, 0);
}

}  // namespace ergwalk
