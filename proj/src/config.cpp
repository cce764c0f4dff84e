#include "ergwalk/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ergwalk/errors.hpp"

namespace ergwalk {

namespace {

template <class T>
T get_as(const Json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json probs_to_json(const RwreSiteLaw& law) {
    Json probs = Json::object();
    for (std::size_t k = 0; k < law.offsets.size(); ++k) probs[std::to_string(law.offsets[k])] = law.probs[k];
    return probs;
}

std::map<int, double> probs_from_json(const Json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ".probs must be an object {offset: probability}");
    std::map<int, double> m;
    for (const auto& [k, v] : j.items()) {
        int off = 0;
        try {
            std::size_t used = 0;
            off = std::stoi(k, &used);
            if (used != k.size()) throw std::invalid_argument(k);
        } catch (const std::exception&) {
            throw ConfigError(where + ".probs: offset '" + k + "' is not an integer");
        }
        if (!v.is_number()) throw ConfigError(where + ".probs: value at '" + k + "' is not a number");
        m[off] = v.get<double>();
    }
    return m;
}

// Merges a user block into defaults, rejecting unknown keys.
Json merge_params(const Json& defaults, const Json& user, const std::string& where) {
    Json out = defaults;
    if (user.is_null()) return out;
    if (!user.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : user.items()) {
        if (!defaults.contains(k)) throw ConfigError(where + ": unknown parameter '" + k + "'");
        const Json& d = defaults[k];
        const bool ok = d.is_null() || v.is_null() || (d.is_number() && v.is_number()) ||
                        (d.is_boolean() && v.is_boolean()) || (d.is_string() && v.is_string()) ||
                        (d.is_array() && v.is_array());
        if (!ok) throw ConfigError(where + "." + k + " has the wrong type");
        // Integral defaults stay integral so resolved configs print stably.
        if (d.is_number_integer() && v.is_number_float()) {
            const double x = v.get<double>();
            if (x != static_cast<double>(static_cast<long long>(x))) throw ConfigError(where + "." + k + " must be an integer");
            out[k] = static_cast<long long>(x);
        } else {
            out[k] = v;
        }
    }
    return out;
}

Json velocity_defaults(Model model) {
    return Json{{"method", model == Model::bdp ? "mc-bdp" : "mc-rwre"},
                {"t_max", 1000.0},
                {"n_steps", 100000},
                {"replicas", 100},
                {"annealed", true},
                {"env_samples", 200},
                {"tol", 1e-10},
                {"k_max", 10000},
                {"depth_K", 32},
                {"max_depth", 65536},
                {"per_replica_csv", true}};
}

Json command_defaults(const std::string& command, const EnvSpec& spec) {
    if (command == "velocity") return velocity_defaults(spec.model);
    if (command == "compare") {
        Json d = velocity_defaults(spec.model);
        d.erase("method");
        d["methods"] = spec.model == Model::bdp ? Json::array({"theorem51", "mc-bdp"}) : Json::array({"corollary", "mc-rwre"});
        d["threshold"] = 3.0;
        return d;
    }
    if (command == "classify") {
        return Json{{"n_products", 100000}, {"burn_in", 1000}, {"batches", 50}, {"zero_floor", 1e-9}};
    }
    if (command == "tailcheck") {
        return Json{{"h", 0.1},
                    {"replicas", 100},
                    {"steps", 10000},
                    {"epsilon", spec.bounds ? Json(spec.bounds->epsilon) : Json(nullptr)},
                    {"M", spec.bounds ? Json(spec.bounds->M) : Json(nullptr)},
                    {"lambda_bar", -20.0},
                    {"m_max", 12}};
    }
    if (command == "hconsistency") {
        return Json{{"h", {0.1, 0.05, 0.01}},
                    {"t_max", 1000.0},
                    {"replicas", 100},
                    {"small_h", {0.01, 0.001}},
                    {"small_h_replicas", 200000}};
    }
    if (command == "validate") {
        return Json{{"window", {-1000, 1000}}, {"N", 1000}};
    }
    if (command == "simulate") {
        return Json{{"t_max", 10.0}, {"n_steps", 1000}, {"h", 0.0}};
    }
    throw ConfigError("unknown command '" + command + "'");
}

const std::set<std::string> kCommands{"validate", "classify", "velocity", "compare", "tailcheck", "hconsistency", "simulate"};

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Json normalize_env_json(const Json& in, const std::filesystem::path& base_dir) {
    const std::string W = "environment";
    reject_unknown(in, {"model", "mode", "L", "R", "bounds", "tail", "sites", "weights", "uniform", "transition",
                        "table_origin", "seed", "max_extent", "csv"},
                   W);
    if (!in.contains("model")) throw ConfigError("environment.model is required (bdp or rwre)");
    const Model model = model_from_string(get_as<std::string>(in, "model", W));
    Json out;
    out["model"] = to_string(model);
    out["mode"] = in.contains("mode") ? to_string(mode_from_string(get_as<std::string>(in, "mode", W))) : "homogeneous";
    out["seed"] = in.contains("seed") ? get_as<std::uint64_t>(in, "seed", W) : 0;
    out["max_extent"] = in.contains("max_extent") ? get_as<long>(in, "max_extent", W) : (1L << 24);
    if (in.contains("weights")) out["weights"] = in["weights"];
    if (in.contains("transition")) out["transition"] = in["transition"];
    if (in.contains("uniform")) {
        reject_unknown(in["uniform"], {"low", "high"}, W + ".uniform");
        out["uniform"] = {{"low", get_as<double>(in["uniform"], "low", W + ".uniform")},
                          {"high", get_as<double>(in["uniform"], "high", W + ".uniform")}};
    }

    Json sites = Json::array();
    if (in.contains("csv")) {
        if (in.contains("sites")) throw ConfigError("environment: give either csv or sites, not both");
        if (model == Model::bdp && (!in.contains("L") || !in.contains("R"))) throw ConfigError("csv environments need L and R");
        std::filesystem::path p = get_as<std::string>(in, "csv", W);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        const int L = in.contains("L") ? get_as<int>(in, "L", W) : 1;
        const int R = in.contains("R") ? get_as<int>(in, "R", W) : 1;
        const Environment env = environment_from_csv(read_text(p), model, L, R);
        out["mode"] = "table";
        out["table_origin"] = env.spec().table_origin;
        for (const auto& s : env.spec().rate_sites) sites.push_back({{"rates", s.to_tuple()}});
        for (const auto& s : env.spec().law_sites) sites.push_back({{"probs", probs_to_json(s)}});
    } else if (in.contains("sites")) {
        if (!in["sites"].is_array()) throw ConfigError("environment.sites must be an array");
        for (const auto& s : in["sites"]) {
            if (s.is_array()) {
                sites.push_back({{"rates", s}});
            } else if (s.is_object()) {
                reject_unknown(s, {"rates", "probs", "tail"}, W + ".sites[]");
                sites.push_back(s);
            } else {
                throw ConfigError("environment.sites entries must be arrays or objects");
            }
        }
    }
    if (in.contains("table_origin")) out["table_origin"] = get_as<long>(in, "table_origin", W);
    else if (!out.contains("table_origin")) out["table_origin"] = 0;

    if (model == Model::bdp) {
        if (!in.contains("L") || !in.contains("R")) throw ConfigError("bdp environments need L and R");
        out["L"] = get_as<int>(in, "L", W);
        out["R"] = get_as<int>(in, "R", W);
        if (in.contains("bounds")) {
            reject_unknown(in["bounds"], {"epsilon", "M"}, W + ".bounds");
            out["bounds"] = {{"epsilon", get_as<double>(in["bounds"], "epsilon", W + ".bounds")},
                             {"M", get_as<double>(in["bounds"], "M", W + ".bounds")}};
        }
        for (auto& s : sites) {
            if (!s.contains("rates")) throw ConfigError("bdp sites need \"rates\": [mu^L..mu^1, lambda^1..lambda^R]");
        }
    } else {
        Json tail = {{"epsilon", 0.0}, {"D", 1.0}, {"eps0", 0.1}, {"J", nullptr}};
        if (in.contains("tail")) tail = merge_params(tail, in["tail"], W + ".tail");
        if (tail["J"].is_null()) tail["J"] = default_truncation_radius(tail["D"].get<double>(), tail["eps0"].get<double>());
        out["tail"] = tail;
        int lo = 0, hi = 0;
        for (auto& s : sites) {
            if (!s.contains("probs")) throw ConfigError("rwre sites need \"probs\": {offset: probability}");
            if (s.contains("tail")) {
                Json t = merge_params(Json{{"amplitude", nullptr}, {"exponent", nullptr}, {"from", nullptr}, {"J", tail["J"]}},
                                      s["tail"], W + ".sites[].tail");
                for (const char* k : {"amplitude", "exponent", "from"}) {
                    if (t[k].is_null()) throw ConfigError(std::string("site tail needs ") + k);
                }
                s["tail"] = t;
                const int J = t["J"].get<int>();
                lo = std::min(lo, -J);
                hi = std::max(hi, J);
            }
            for (const auto& [k, v] : probs_from_json(s["probs"], W + ".sites[]")) {
                lo = std::min(lo, k);
                hi = std::max(hi, k);
                (void)v;
            }
        }
        out["L"] = in.contains("L") ? get_as<int>(in, "L", W) : std::max(1, -lo);
        out["R"] = in.contains("R") ? get_as<int>(in, "R", W) : std::max(1, hi);
    }
    if (out["mode"] == "iid" && !out.contains("weights") && !out.contains("uniform") && !sites.empty()) {
        out["weights"] = std::vector<double>(sites.size(), 1.0 / static_cast<double>(sites.size()));
    }
    out["sites"] = sites;
    return out;
}

EnvSpec env_spec_from_json(const Json& raw, const std::filesystem::path& base_dir) {
    const Json j = normalize_env_json(raw, base_dir);
    const std::string W = "environment";
    EnvSpec spec;
    spec.model = model_from_string(j["model"].get<std::string>());
    spec.mode = mode_from_string(j["mode"].get<std::string>());
    spec.L = j["L"].get<int>();
    spec.R = j["R"].get<int>();
    spec.seed = j["seed"].get<std::uint64_t>();
    spec.max_extent = j["max_extent"].get<long>();
    spec.table_origin = j["table_origin"].get<long>();
    if (j.contains("bounds")) spec.bounds = EllipticBounds{j["bounds"]["epsilon"].get<double>(), j["bounds"]["M"].get<double>()};
    if (j.contains("uniform")) spec.uniform = UniformBox{j["uniform"]["low"].get<double>(), j["uniform"]["high"].get<double>()};
    try {
        if (j.contains("weights")) spec.weights = j["weights"].get<std::vector<double>>();
        if (j.contains("transition")) spec.transition = j["transition"].get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("environment weights/transition: ") + e.what());
    }
    if (spec.model == Model::bdp) {
        for (const auto& s : j["sites"]) {
            std::vector<double> tuple;
            try {
                tuple = s["rates"].get<std::vector<double>>();
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("site rates must be an array of numbers");
            }
            spec.rate_sites.push_back(SiteRates::from_tuple(tuple, spec.L, spec.R));
        }
    } else {
        const Json& t = j["tail"];
        spec.tail = TailBounds{t["epsilon"].get<double>(), t["D"].get<double>(), t["eps0"].get<double>(), t["J"].get<int>()};
        for (const auto& s : j["sites"]) {
            const auto core = probs_from_json(s["probs"], W + ".sites[]");
            if (s.contains("tail")) {
                const Json& st = s["tail"];
                spec.law_sites.push_back(RwreSiteLaw::with_power_tail(core, st["amplitude"].get<double>(),
                                                                      st["exponent"].get<double>(), st["from"].get<int>(),
                                                                      st["J"].get<int>(), spec.tail->D, spec.tail->eps0));
            } else {
                spec.law_sites.push_back(RwreSiteLaw::from_map(core, spec.tail->D, spec.tail->eps0));
            }
        }
    }
    if (spec.mode == Mode::iid && spec.weights.empty() && !spec.uniform && spec.atom_count() > 0) {
        spec.weights.assign(spec.atom_count(), 1.0 / static_cast<double>(spec.atom_count()));
    }
    spec.validate();
    return spec;
}

ExperimentConfig load_config(const Json& input, const std::string& command, std::optional<std::uint64_t> seed_override,
                             const std::filesystem::path& base_dir) {
    if (!kCommands.count(command)) throw ConfigError("unknown command '" + command + "'");
    const Json& j = input.contains("config") && input.contains("result") ? input["config"] : input;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::set<std::string> allowed{"seed", "environment", "environment_b", "command"};
    allowed.insert(kCommands.begin(), kCommands.end());
    reject_unknown(j, allowed, "config");
    if (!j.contains("environment")) throw ConfigError("config.environment is required");

    ExperimentConfig cfg;
    cfg.command = command;
    cfg.seed = j.contains("seed") ? get_as<std::uint64_t>(j, "seed", "config") : 1;
    if (seed_override) cfg.seed = *seed_override;
    cfg.environment = normalize_env_json(j["environment"], base_dir);
    cfg.spec = env_spec_from_json(cfg.environment, base_dir);
    if (j.contains("environment_b")) {
        if (command != "compare") throw ConfigError("environment_b is only meaningful for compare");
        cfg.environment_b = normalize_env_json(j["environment_b"], base_dir);
        cfg.spec_b = env_spec_from_json(*cfg.environment_b, base_dir);
    }
    cfg.params = merge_params(command_defaults(command, cfg.spec), j.contains(command) ? j[command] : Json(), command);
    return cfg;
}

Json resolved_json(const ExperimentConfig& cfg) {
    Json j;
    j["command"] = cfg.command;
    j["seed"] = cfg.seed;
    j["environment"] = cfg.environment;
    if (cfg.environment_b) j["environment_b"] = *cfg.environment_b;
    j[cfg.command] = cfg.params;
    return j;
}

}  // namespace ergwalk
