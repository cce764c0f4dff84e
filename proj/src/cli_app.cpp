#include "ergwalk/cli_app.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ergwalk/bdp_engine.hpp"
#include "ergwalk/config.hpp"
#include "ergwalk/errors.hpp"
#include "ergwalk/lyapunov.hpp"
#include "ergwalk/rng.hpp"
#include "ergwalk/rwre_engine.hpp"
#include "ergwalk/stats.hpp"
#include "ergwalk/velocity_exact2.hpp"

namespace ergwalk {

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    std::string out_dir;
    bool strict = false;
};

struct Outcome {
    Json result;
    Json warnings = Json::array();
    int code = exit_code::ok;
    std::map<std::string, std::string> csv;  // file name -> content
};

unsigned resolve_jobs(const Options& o) {
    if (o.jobs) return std::max(1u, *o.jobs);
    if (const char* env = std::getenv("ERGWALK_DEFAULT_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("ERGWALK_DEFAULT_JOBS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

Json velocity_json(const VelocityReport& r) {
    return Json{{"method", r.method},   {"velocity", r.velocity},       {"se", r.se},
                {"replicas", r.replicas}, {"horizon", r.horizon},       {"seed", r.seed},
                {"truncations", r.truncations}, {"verdict", r.verdict}};
}

std::string samples_csv(const std::vector<double>& xs) {
    std::ostringstream out;
    out.precision(17);
    out << "replica,value\n";
    for (std::size_t i = 0; i < xs.size(); ++i) out << i << ',' << xs[i] << '\n';
    return out.str();
}

bool method_fits(const std::string& method, Model model) {
    if (method == "mc-bdp" || method == "theorem51") return model == Model::bdp;
    if (method == "mc-rwre" || method == "corollary") return model == Model::rwre;
    throw ConfigError("unknown velocity method '" + method + "' (mc-bdp, mc-rwre, theorem51, corollary)");
}

struct MethodRun {
    Json report;
    VelocityReport v;
    bool diverged = false;
};

MethodRun run_method(const std::string& method, const EnvSpec& spec, const Json& p, std::uint64_t seed,
                     unsigned jobs) {
    if (!method_fits(method, spec.model)) {
        throw ConfigError("method " + method + " does not apply to a " + to_string(spec.model) + " environment");
    }
    MethodRun run;
    if (method == "mc-bdp") {
        run.v = estimate_velocity_bdp(spec, p["t_max"].get<double>(), p["replicas"].get<int>(), seed, jobs,
                                      p["annealed"].get<bool>());
        run.report = velocity_json(run.v);
    } else if (method == "mc-rwre") {
        run.v = estimate_velocity_rwre(spec, p["n_steps"].get<long>(), p["replicas"].get<int>(), seed, jobs,
                                       p["annealed"].get<bool>());
        run.report = velocity_json(run.v);
    } else if (method == "theorem51") {
        const Theorem51Report t = velocity_theorem51(spec, p["env_samples"].get<int>(), p["tol"].get<double>(),
                                                     p["k_max"].get<long>(), seed, jobs);
        run.v = t.velocity;
        run.diverged = t.diverged;
        run.report = velocity_json(t.velocity);
        run.report["D_mean"] = t.D_mean;
        run.report["pi_mean"] = t.pi_mean;
        run.report["drift_mean"] = t.drift_mean;
        run.report["k_used"] = t.k_used;
        run.report["residuals"] = {{"f_truncation", t.f_residual}, {"last_series_term", t.last_term}};
        run.report["env_samples"] = t.velocity.replicas;
    } else {
        run.v = velocity_corollary(spec, p["env_samples"].get<int>(), p["depth_K"].get<int>(), p["tol"].get<double>(),
                                   seed, jobs, p["max_depth"].get<int>());
        run.diverged = run.v.truncations > 0;
        run.report = velocity_json(run.v);
        run.report["sum_pi"] = run.v.samples;
    }
    if (run.diverged) {
        run.report["diagnostics"] = run.report["verdict"];
        run.report["verdict"] = "zero-or-undefined";
    }
    return run;
}

Outcome cmd_velocity(const ExperimentConfig& cfg, unsigned jobs) {
    Outcome o;
    const MethodRun run = run_method(cfg.params["method"].get<std::string>(), cfg.spec, cfg.params, cfg.seed, jobs);
    o.result = run.report;
    if (cfg.params["per_replica_csv"].get<bool>() && !run.v.samples.empty()) {
        o.csv["velocity_samples.csv"] = samples_csv(run.v.samples);
    }
    return o;
}

Outcome cmd_compare(const ExperimentConfig& cfg, unsigned jobs, bool strict) {
    Outcome o;
    const auto methods = cfg.params["methods"].get<std::vector<std::string>>();
    if (methods.size() != 2) throw ConfigError("compare needs exactly two methods");
    if (cfg.environment_b && *cfg.environment_b != cfg.environment) {
        throw ConfigError("compare: environment_b differs from environment; both methods must see the same spec");
    }
    Json runs = Json::array();
    std::vector<MethodRun> rs;
    for (const auto& m : methods) {
        Json p = cfg.params;
        p["method"] = m;
        rs.push_back(run_method(m, cfg.spec, p, cfg.seed, jobs));
        runs.push_back(rs.back().report);
    }
    o.result["runs"] = runs;
    if (rs[0].diverged || rs[1].diverged) {
        o.result["verdict"] = "divergence";
        o.code = exit_code::divergence;
        return o;
    }
    const double sep = separation_in_se(MeanSe{rs[0].v.velocity, rs[0].v.se, 0}, MeanSe{rs[1].v.velocity, rs[1].v.se, 0});
    const double thr = cfg.params["threshold"].get<double>();
    o.result["separation_se"] = sep;
    o.result["threshold"] = thr;
    o.result["pass"] = sep < thr;
    o.result["verdict"] = sep < thr ? "agree" : "disagree";
    if (strict && !(sep < thr)) o.code = exit_code::indeterminate;
    return o;
}

Outcome cmd_classify(const ExperimentConfig& cfg, bool strict) {
    if (cfg.spec.model != Model::bdp) throw ConfigError("classify needs a bdp environment");
    Outcome o;
    const Json& p = cfg.params;
    const Environment env(cfg.spec, cfg.spec.seed);
    const LyapunovSpectrum sp = lyapunov_spectrum(env, p["n_products"].get<long>(), p["burn_in"].get<long>(), cfg.seed,
                                                  p["batches"].get<int>());
    const Classification c = classify(sp, cfg.spec.R, p["zero_floor"].get<double>());
    o.result = Json{{"gammas", sp.gammas}, {"ses", sp.ses},         {"n", sp.n},
                    {"burn_in", sp.burn_in}, {"batches", sp.batches}, {"gamma_R", c.gamma_R},
                    {"gamma_R_se", c.se},  {"ci99", {c.lo, c.hi}},   {"verdict", c.verdict}};
    if (strict && c.verdict == "boundary-undetermined") o.code = exit_code::indeterminate;
    return o;
}

Json violations_json(const ConditionReport& r) {
    Json v = Json::array();
    for (const auto& x : r.violations) v.push_back({{"site", x.site}, {"rule", x.rule}, {"value", x.value}});
    return Json{{"passed", r.passed()}, {"violations", v}};
}

Outcome cmd_validate(const ExperimentConfig& cfg) {
    Outcome o;
    const auto window = cfg.params["window"].get<std::vector<long>>();
    if (window.size() != 2 || window[0] > window[1]) throw ConfigError("validate.window must be [a, b] with a <= b");
    long a = window[0], b = window[1];
    if (cfg.spec.mode == Mode::table) {
        const long lo = cfg.spec.table_origin;
        const long hi = lo + static_cast<long>(cfg.spec.atom_count()) - 1;
        a = std::max(a, lo);
        b = std::min(b, hi);
    }
    const Environment env(cfg.spec, cfg.spec.seed);
    o.result["window"] = {a, b};
    bool passed = true;
    if (cfg.spec.model == Model::bdp) {
        if (cfg.spec.bounds) {
            const auto& bd = *cfg.spec.bounds;
            const ConditionReport c = validate_condition_C(env, bd.epsilon, bd.M, a, b);
            // Condition C implies C2' with kappa = epsilon and K = (L+R)M.
            const int n = cfg.spec.L + cfg.spec.R;
            const ConditionReport c2 = validate_condition_C2prime(env, bd.epsilon, n * bd.M, a, b);
            o.result["condition_C"] = violations_json(c);
            o.result["condition_C2prime"] = violations_json(c2);
            passed = c.passed() && c2.passed();
        } else {
            o.warnings.push_back("no bounds declared: condition C not checked");
        }
        int N = cfg.params["N"].get<int>();
        if (N < 1) throw ConfigError("validate.N must be >= 1");
        if (cfg.spec.mode == Mode::table) {
            // The right series reads sites up to N*R - 1, the left one down to -N*L.
            const long lo = cfg.spec.table_origin;
            const long hi = lo + static_cast<long>(cfg.spec.atom_count()) - 1;
            const long fit = std::min<long>((hi + 1) / cfg.spec.R, lo <= 0 ? -lo / cfg.spec.L : 0);
            if (fit < N) {
                o.warnings.push_back("table window only supports N = " + std::to_string(std::max(fit, 0L)) +
                                     " for the non-explosion series");
                N = static_cast<int>(std::max(fit, 0L));
            }
        }
        if (N < 4) {
            o.warnings.push_back("non-explosion series not checked (N < 4)");
        } else {
            const DivergenceReport d = check_nonexplosion(env, N);
            o.result["nonexplosion"] = {{"N", N},
                                        {"right_partial_sum", d.right_partial_sums.back()},
                                        {"left_partial_sum", d.left_partial_sums.back()},
                                        {"verdict", d.verdict}};
            if (!d.divergence_consistent) o.warnings.push_back("non-explosion: divergence NOT observed");
        }
    } else {
        const TailBounds t = cfg.spec.tail.value_or(TailBounds{});
        ConditionReport all;
        for (long x = a; x <= b; ++x) {
            for (auto v : validate_condition_B(env.law(x), t.epsilon, t.D, t.eps0).violations) {
                v.rule += " (offset " + std::to_string(v.site) + ")";
                v.site = x;
                all.violations.push_back(v);
            }
        }
        o.result["condition_B"] = violations_json(all);
        passed = all.passed();
    }
    o.result["passed"] = passed;
    o.result["warning"] = !o.warnings.empty();
    return o;
}

Outcome cmd_tailcheck(const ExperimentConfig& cfg, unsigned jobs) {
    if (cfg.spec.model != Model::bdp) throw ConfigError("tailcheck needs a bdp environment");
    const Json& p = cfg.params;
    if (p["epsilon"].is_null() || p["M"].is_null()) {
        throw ConfigError("tailcheck needs epsilon and M (declare environment.bounds or tailcheck.epsilon/M)");
    }
    Outcome o;
    const TailReport r = skeleton_tail_check(cfg.spec, p["h"].get<double>(), p["replicas"].get<int>(),
                                             p["steps"].get<long>(), cfg.seed, p["epsilon"].get<double>(),
                                             p["M"].get<double>(), p["lambda_bar"].get<double>(), p["m_max"].get<int>(),
                                             jobs);
    const auto& c = r.constants;
    o.result["constants"] = {{"epsilon", c.epsilon}, {"M", c.M},   {"kappa", c.kappa}, {"K", c.K},
                             {"lambda_bar", c.lambda_bar}, {"c0", c.c0}, {"c1", c.c1}};
    o.result["samples"] = r.samples;
    Json rows = Json::array();
    std::ostringstream csv;
    csv.precision(17);
    csv << "m,count,freq,se,bound,log_freq,log_bound\n";
    for (std::size_t k = 0; k < r.m.size(); ++k) {
        rows.push_back({{"m", r.m[k]}, {"count", r.counts[k]}, {"freq", r.freq[k]}, {"se", r.se[k]}, {"bound", r.bound[k]}});
        csv << r.m[k] << ',' << r.counts[k] << ',' << r.freq[k] << ',' << r.se[k] << ',' << r.bound[k] << ',';
        if (r.counts[k] > 0) csv << std::log(r.freq[k]);
        csv << ',' << std::log(r.bound[k]) << '\n';
    }
    o.result["tail"] = rows;
    o.result["all_below_bound"] = r.all_below;
    o.result["log_slope"] = r.slope;
    o.result["slope_points"] = r.slope_points;
    o.result["verdict"] = r.all_below ? "below bound" : "bound violated";
    o.csv["tail.csv"] = csv.str();
    return o;
}

Outcome cmd_hconsistency(const ExperimentConfig& cfg, unsigned jobs) {
    if (cfg.spec.model != Model::bdp) throw ConfigError("hconsistency needs a bdp environment");
    const Json& p = cfg.params;
    Outcome o;
    const HConsistency hc = h_consistency(cfg.spec, p["h"].get<std::vector<double>>(), p["t_max"].get<double>(),
                                          p["replicas"].get<int>(), cfg.seed, jobs);
    Json rows = Json::array();
    std::ostringstream csv;
    csv.precision(17);
    csv << "h,v_over_h,se\n";
    for (const auto& r : hc.rows) {
        rows.push_back({{"h", r.h}, {"v_over_h", r.v_over_h.mean}, {"se", r.v_over_h.se}});
        csv << r.h << ',' << r.v_over_h.mean << ',' << r.v_over_h.se << '\n';
    }
    o.result["h_table"] = rows;
    o.result["max_separation_se"] = hc.max_separation;
    o.result["consistent"] = hc.consistent;
    o.csv["hconsistency.csv"] = csv.str();

    const auto small = p["small_h"].get<std::vector<double>>();
    if (!small.empty()) {
        const auto tabs = small_h_rates(cfg.spec, small, p["small_h_replicas"].get<long>(), cfg.seed, jobs);
        Json st = Json::array();
        std::ostringstream s;
        s.precision(17);
        s << "h,j,rate,se,target\n";
        for (const auto& t : tabs) {
            Json rr = Json::array();
            for (const auto& row : t.rows) {
                rr.push_back({{"j", row.j}, {"rate", row.rate}, {"se", row.se}, {"target", row.target}});
                s << t.h << ',' << row.j << ',' << row.rate << ',' << row.se << ',' << row.target << '\n';
            }
            st.push_back({{"h", t.h}, {"samples", t.samples}, {"rates", rr}});
        }
        o.result["small_h_rates"] = st;
        o.csv["small_h_rates.csv"] = s.str();
    }
    return o;
}

Outcome cmd_simulate(const ExperimentConfig& cfg) {
    Outcome o;
    const Json& p = cfg.params;
    const Environment env(cfg.spec, cfg.spec.seed);
    const std::uint64_t walk_seed = derive_seed(cfg.seed, stream::walk, 0);
    if (cfg.spec.model == Model::bdp) {
        const EventPath path = simulate_bdp(env, p["t_max"].get<double>(), walk_seed);
        o.result = {{"events", path.tau.size() - 1}, {"final_state", path.chi.back()}, {"t_max", path.t_max}};
        o.csv["path.csv"] = path_to_csv(path);
        const double h = p["h"].get<double>();
        if (h > 0.0) {
            const SkeletonSeries s = extract_skeleton(path, h);
            std::ostringstream csv;
            csv.precision(17);
            csv << "k,t,X\n";
            for (std::size_t k = 0; k < s.X.size(); ++k) csv << k << ',' << static_cast<double>(k) * h << ',' << s.X[k] << '\n';
            o.csv["skeleton.csv"] = csv.str();
            o.result["skeleton_velocity"] = skeleton_velocity(path, h);
        }
    } else {
        const WalkTrajectory t = run_walk(env, p["n_steps"].get<long>(), walk_seed);
        o.result = {{"steps", t.states.size() - 1}, {"final_state", t.states.back()}};
        o.csv["trajectory.csv"] = trajectory_to_csv(t);
    }
    return o;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + p.string());
    f << content;
}

int execute(const std::string& command, const Options& opt, std::ostream& out, std::ostream& err) {
    const std::filesystem::path cfg_path(opt.config);
    const Json raw = read_json_file(cfg_path);
    const ExperimentConfig cfg = load_config(raw, command, opt.seed, cfg_path.parent_path());
    const unsigned jobs = resolve_jobs(opt);

    Outcome o;
    if (command == "velocity") o = cmd_velocity(cfg, jobs);
    else if (command == "compare") o = cmd_compare(cfg, jobs, opt.strict);
    else if (command == "classify") o = cmd_classify(cfg, opt.strict);
    else if (command == "validate") o = cmd_validate(cfg);
    else if (command == "tailcheck") o = cmd_tailcheck(cfg, jobs);
    else if (command == "hconsistency") o = cmd_hconsistency(cfg, jobs);
    else o = cmd_simulate(cfg);

    Json report;
    report["command"] = command;
    report["config"] = resolved_json(cfg);
    report["seed"] = cfg.seed;
    report["result"] = o.result;
    report["warnings"] = o.warnings;
    report["exit_code"] = o.code;
    const std::string text = report.dump(2) + "\n";
    out << text;
    for (const auto& w : o.warnings) err << "warning: " << w.get<std::string>() << '\n';
    if (!opt.out_dir.empty()) {
        const std::filesystem::path dir(opt.out_dir);
        std::filesystem::create_directories(dir);
        write_file(dir / (command + "_report.json"), text);
        for (const auto& [name, content] : o.csv) write_file(dir / (command + "_" + name), content);
    }
    return o.code;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Random walks and birth-death processes in random environments"};
    app.name("ergwalk");
    app.require_subcommand(1);
    Options opt;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"validate", "check environment conditions and non-explosion"},
        {"classify", "Lyapunov spectrum and recurrence/transience verdict"},
        {"velocity", "velocity by mc-bdp, mc-rwre, theorem51 or corollary"},
        {"compare", "run two velocity methods and report agreement in SE units"},
        {"tailcheck", "skeleton jump tail against the exponential bound"},
        {"hconsistency", "skeleton velocity over several h, small-h jump rates"},
        {"simulate", "dump one path (bdp) or trajectory (rwre) as CSV"}};
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "experiment config or previous report (JSON)")->required();
        sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
        sub->add_option("--jobs", opt.jobs, "worker threads (default: ERGWALK_DEFAULT_JOBS or all cores)");
        sub->add_option("--out", opt.out_dir, "directory for the report and CSV series");
        sub->add_flag("--strict", opt.strict, "exit 3 on undetermined verdicts");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_code::ok : exit_code::config_error;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return execute(command, opt, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const WindowExhaustedError& e) {
        err << "window exhausted: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const SingularNormalizationError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const DegenerateSiteError& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const nlohmann::json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return exit_code::config_error;
    } catch (const DivergenceError& e) {
        err << "divergence: " << e.what() << '\n';
        return exit_code::divergence;
    } catch (const TruncationError& e) {
        err << "divergence: " << e.what() << '\n';
        return exit_code::divergence;
    } catch (const InfeasibleCoefficientError& e) {
        err << "divergence: " << e.what() << '\n';
        return exit_code::divergence;
    } catch (const ExplosionError& e) {
        err << "divergence: " << e.what() << '\n';
        return exit_code::divergence;
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    for (const auto& a : args) argv.push_back(a.c_str());
    argv.push_back(nullptr);
    return run_cli(static_cast<int>(args.size()), argv.data(), out, err);
}

}  // namespace ergwalk
