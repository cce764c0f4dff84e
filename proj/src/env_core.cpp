#include "ergwalk/env_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <mutex>
#include <numeric>
#include <shared_mutex>
#include <sstream>

#include "ergwalk/errors.hpp"
#include "ergwalk/rng.hpp"

namespace ergwalk {

std::string to_string(Model m) { return m == Model::bdp ? "bdp" : "rwre"; }

std::string to_string(Mode m) {
    switch (m) {
        case Mode::homogeneous: return "homogeneous";
        case Mode::periodic: return "periodic";
        case Mode::iid: return "iid";
        case Mode::markov: return "markov";
        case Mode::table: return "table";
    }
    return "?";
}

Model model_from_string(const std::string& s) {
    if (s == "bdp") return Model::bdp;
    if (s == "rwre") return Model::rwre;
    throw ConfigError("unknown model '" + s + "' (expected bdp or rwre)");
}

Mode mode_from_string(const std::string& s) {
    if (s == "homogeneous") return Mode::homogeneous;
    if (s == "periodic") return Mode::periodic;
    if (s == "iid") return Mode::iid;
    if (s == "markov" || s == "markov-modulated") return Mode::markov;
    if (s == "table") return Mode::table;
    throw ConfigError("unknown mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// SiteRates

double SiteRates::total_rate() const {
    return std::accumulate(mu.begin(), mu.end(), 0.0) + std::accumulate(lambda.begin(), lambda.end(), 0.0);
}

double SiteRates::drift() const {
    double d = 0.0;
    for (int r = 1; r <= R(); ++r) d += r * lambda[r - 1];
    for (int l = 1; l <= L(); ++l) d -= l * mu[l - 1];
    return d;
}

SiteRates SiteRates::from_tuple(const std::vector<double>& tuple, int L, int R) {
    if (static_cast<int>(tuple.size()) != L + R) {
        throw ConfigError("site tuple has " + std::to_string(tuple.size()) + " entries, expected L+R=" +
                          std::to_string(L + R));
    }
    SiteRates s;
    s.mu.resize(L);
    s.lambda.resize(R);
    for (int l = 1; l <= L; ++l) s.mu[l - 1] = tuple[L - l];
    for (int r = 1; r <= R; ++r) s.lambda[r - 1] = tuple[L + r - 1];
    return s;
}

std::vector<double> SiteRates::to_tuple() const {
    std::vector<double> t;
    t.reserve(mu.size() + lambda.size());
    for (int l = L(); l >= 1; --l) t.push_back(mu[l - 1]);
    for (int r = 1; r <= R(); ++r) t.push_back(lambda[r - 1]);
    return t;
}

// ---------------------------------------------------------------------------
// RwreSiteLaw

double RwreSiteLaw::prob(int j) const {
    auto it = std::lower_bound(offsets.begin(), offsets.end(), j);
    if (it == offsets.end() || *it != j) return 0.0;
    return probs[static_cast<std::size_t>(it - offsets.begin())];
}

double RwreSiteLaw::unfolded_prob(int j) const {
    double p = prob(j);
    if (J > 0 && j == J) p -= folded_right;
    if (J > 0 && j == -J) p -= folded_left;
    return std::max(p, 0.0);
}

double RwreSiteLaw::drift() const {
    double d = 0.0;
    for (std::size_t i = 0; i < offsets.size(); ++i) d += offsets[i] * probs[i];
    return d;
}

int RwreSiteLaw::sample(double u) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cdf_.begin());
    if (idx >= offsets.size()) idx = offsets.size() - 1;
    // Skip zero-probability entries that share a cdf value.
    while (probs[idx] == 0.0 && idx + 1 < offsets.size()) ++idx;
    return offsets[idx];
}

void RwreSiteLaw::finalize() {
    cdf_.resize(probs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        cdf_[i] = acc;
    }
    cdf_.back() = 1.0;
}

RwreSiteLaw RwreSiteLaw::from_map(const std::map<int, double>& probs, double D, double eps0) {
    if (probs.empty()) throw ConfigError("jump law has empty support");
    RwreSiteLaw law;
    law.D = D;
    law.eps0 = eps0;
    double total = 0.0;
    for (auto [j, p] : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("jump law has a negative or non-finite probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << "jump law sums to " << total << ", expected 1";
        throw ConfigError(msg.str());
    }
    for (auto [j, p] : probs) {
        law.offsets.push_back(j);
        law.probs.push_back(p);
    }
    law.J = std::max(std::abs(law.offsets.front()), std::abs(law.offsets.back()));
    law.finalize();
    return law;
}

RwreSiteLaw RwreSiteLaw::with_power_tail(const std::map<int, double>& core, double amplitude, double exponent,
                                         int tail_from, int J, double D, double eps0) {
    if (exponent <= 1.0) throw ConfigError("power tail exponent must exceed 1");
    if (tail_from < 1 || J < tail_from) throw ConfigError("power tail needs 1 <= tail_from <= J");
    for (auto [j, p] : core) {
        if (std::abs(j) >= tail_from) throw ConfigError("core offsets must satisfy |j| < tail_from");
        (void)p;
    }
    // One-sided tail mass sum_{j >= tail_from} j^-s via the Riemann zeta function.
    double one_side = std::riemann_zeta(exponent);
    for (int j = 1; j < tail_from; ++j) one_side -= std::pow(static_cast<double>(j), -exponent);
    one_side *= amplitude;

    std::map<int, double> full = core;
    double kept = 0.0;
    for (int j = tail_from; j <= J; ++j) {
        const double p = amplitude * std::pow(static_cast<double>(j), -exponent);
        full[j] += p;
        full[-j] += p;
        kept += p;
    }
    const double beyond = std::max(one_side - kept, 0.0);
    full[J] += beyond;
    full[-J] += beyond;
    RwreSiteLaw law = from_map(full, D, eps0);
    law.J = J;
    law.folded_left = beyond;
    law.folded_right = beyond;
    return law;
}

int default_truncation_radius(double D, double eps0, int cap) {
    // 2 D J^-(1+eps0) / (1+eps0) < 1e-9
    const double target = 1e-9 * (1.0 + eps0) / (2.0 * D);
    const double j = std::pow(target, -1.0 / (1.0 + eps0));
    if (!std::isfinite(j) || j > cap) return cap;
    return std::max(1, static_cast<int>(std::ceil(j)));
}

// ---------------------------------------------------------------------------
// EnvSpec

std::size_t EnvSpec::atom_count() const {
    return model == Model::bdp ? rate_sites.size() : law_sites.size();
}

void EnvSpec::validate() const {
    if (L < 1 || R < 1) throw ConfigError("L and R must be positive");
    if (bounds) {
        if (!(bounds->epsilon >= 0.0) || !(bounds->epsilon < bounds->M)) {
            throw ConfigError("bounds need 0 <= epsilon < M");
        }
    }
    if (tail) {
        if (!(tail->D > 0.0) || !(tail->eps0 > 0.0)) throw ConfigError("tail needs D > 0 and eps0 > 0");
    }
    if (max_extent < 1) throw ConfigError("max_extent must be positive");
    const std::size_t atoms = atom_count();
    if (uniform) {
        if (model != Model::bdp || mode != Mode::iid) throw ConfigError("uniform rates need model bdp and mode iid");
        if (!(uniform->low >= 0.0) || !(uniform->low < uniform->high)) {
            throw ConfigError("uniform rates need 0 <= low < high");
        }
        if (uniform->low == 0.0) throw ConfigError("uniform rates need low > 0 (total rate must be positive)");
    } else if (atoms == 0) {
        throw ConfigError("environment has no sites");
    }
    if (model == Model::bdp) {
        for (const auto& s : rate_sites) {
            if (s.L() != L || s.R() != R) throw ConfigError("site rate tuple does not match L, R");
            for (double v : s.to_tuple()) {
                if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("rates must be finite and >= 0");
            }
            if (!(s.total_rate() > 0.0)) throw ConfigError("site with zero total rate");
        }
    }
    switch (mode) {
        case Mode::homogeneous:
            if (atoms != 1) throw ConfigError("homogeneous mode needs exactly one site");
            break;
        case Mode::periodic:
        case Mode::table:
            break;
        case Mode::iid:
            if (!uniform) {
                if (weights.size() != atoms) throw ConfigError("iid mode needs one weight per site");
                double w = 0.0;
                for (double x : weights) {
                    if (!(x >= 0.0)) throw ConfigError("iid weights must be >= 0");
                    w += x;
                }
                if (std::abs(w - 1.0) > 1e-9) throw ConfigError("iid weights must sum to 1");
            }
            break;
        case Mode::markov: {
            if (transition.size() != atoms) throw ConfigError("markov transition must be square over the states");
            for (const auto& row : transition) {
                if (row.size() != atoms) throw ConfigError("markov transition must be square over the states");
                double s = 0.0;
                for (double x : row) {
                    if (!(x >= 0.0)) throw ConfigError("markov transition entries must be >= 0");
                    s += x;
                }
                if (std::abs(s - 1.0) > 1e-9) throw ConfigError("markov transition rows must sum to 1");
            }
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// SiteStore

namespace detail {

class SiteStore {
public:
    SiteStore(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
        spec_.validate();
        if (spec_.mode == Mode::iid && !spec_.uniform) {
            double acc = 0.0;
            for (double w : spec_.weights) {
                acc += w;
                cum_weights_.push_back(acc);
            }
            cum_weights_.back() = 1.0;
        }
        if (spec_.mode == Mode::markov) init_markov();
    }

    const EnvSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    const SiteRates& rates(long x) const {
        if (spec_.model != Model::bdp) throw ConfigError("rates() called on an rwre environment");
        if (spec_.uniform) {
            const std::size_t i = index_of(x);
            std::shared_lock lock(mutex_);
            return uniform_atoms_[i];
        }
        return spec_.rate_sites[index_of(x)];
    }

    const RwreSiteLaw& law(long x) const {
        if (spec_.model != Model::rwre) throw ConfigError("law() called on a bdp environment");
        return spec_.law_sites[index_of(x)];
    }

    void materialize(long a, long b) const {
        if (!stored()) {
            if (spec_.mode == Mode::table) {
                check_table(a);
                check_table(b);
            }
            return;
        }
        check_extent(a);
        check_extent(b);
        std::unique_lock lock(mutex_);
        if (b >= 0) extend_right(b);
        if (a < 0) extend_left(a);
    }

    std::optional<std::pair<long, long>> window() const {
        if (spec_.mode == Mode::table) {
            return std::pair{spec_.table_origin, spec_.table_origin + static_cast<long>(spec_.atom_count()) - 1};
        }
        if (!stored()) return std::nullopt;
        std::shared_lock lock(mutex_);
        if (right_.empty() && left_.empty()) return std::nullopt;
        const long lo = left_.empty() ? 0 : -static_cast<long>(left_.size());
        const long hi = right_.empty() ? -1 : static_cast<long>(right_.size()) - 1;
        return std::pair{lo, hi};
    }

private:
    bool stored() const { return spec_.mode == Mode::iid || spec_.mode == Mode::markov; }

    void check_extent(long x) const {
        if (x > spec_.max_extent || x < -spec_.max_extent) {
            throw WindowExhaustedError("site " + std::to_string(x) + " is beyond the materializable extent " +
                                       std::to_string(spec_.max_extent));
        }
    }

    void check_table(long x) const {
        const long n = static_cast<long>(spec_.atom_count());
        if (x < spec_.table_origin || x >= spec_.table_origin + n) {
            throw WindowExhaustedError("site " + std::to_string(x) + " is outside the tabulated window [" +
                                       std::to_string(spec_.table_origin) + ", " +
                                       std::to_string(spec_.table_origin + n - 1) + "]");
        }
    }

    std::size_t index_of(long x) const {
        switch (spec_.mode) {
            case Mode::homogeneous: return 0;
            case Mode::periodic: {
                const long p = static_cast<long>(spec_.atom_count());
                return static_cast<std::size_t>(((x % p) + p) % p);
            }
            case Mode::table:
                check_table(x);
                return static_cast<std::size_t>(x - spec_.table_origin);
            case Mode::iid:
            case Mode::markov: break;
        }
        {
            std::shared_lock lock(mutex_);
            if (x >= 0 && x < static_cast<long>(right_.size())) return right_[static_cast<std::size_t>(x)];
            if (x < 0 && -x <= static_cast<long>(left_.size())) return left_[static_cast<std::size_t>(-x - 1)];
        }
        check_extent(x);
        std::unique_lock lock(mutex_);
        if (x >= 0) {
            extend_right(x);
            return right_[static_cast<std::size_t>(x)];
        }
        extend_left(x);
        return left_[static_cast<std::size_t>(-x - 1)];
    }

    double site_uniform(long x, std::uint64_t component) const {
        return counter_uniform(derive_seed(seed_, stream::site, component), static_cast<std::uint64_t>(x));
    }

    static std::uint32_t pick(const std::vector<double>& cum, double u) {
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        std::size_t i = static_cast<std::size_t>(it - cum.begin());
        return static_cast<std::uint32_t>(std::min(i, cum.size() - 1));
    }

    std::uint32_t iid_site(long x) const {
        if (!spec_.uniform) return pick(cum_weights_, site_uniform(x, 0));
        std::vector<double> tuple(static_cast<std::size_t>(spec_.L + spec_.R));
        for (std::size_t c = 0; c < tuple.size(); ++c) {
            tuple[c] = spec_.uniform->low + (spec_.uniform->high - spec_.uniform->low) * site_uniform(x, c + 1);
        }
        uniform_atoms_.push_back(SiteRates::from_tuple(tuple, spec_.L, spec_.R));
        return static_cast<std::uint32_t>(uniform_atoms_.size() - 1);
    }

    // Caller holds the unique lock.
    void extend_right(long x) const {
        while (static_cast<long>(right_.size()) <= x) {
            const long site = static_cast<long>(right_.size());
            if (spec_.mode == Mode::iid) {
                right_.push_back(iid_site(site));
            } else if (site == 0) {
                right_.push_back(pick(cum_stationary_, site_uniform(0, 0)));
            } else {
                const std::uint32_t prev = right_.back();
                right_.push_back(pick(cum_forward_[prev], site_uniform(site, 0)));
            }
        }
    }

    void extend_left(long x) const {
        while (-static_cast<long>(left_.size()) > x) {
            const long site = -static_cast<long>(left_.size()) - 1;
            if (spec_.mode == Mode::iid) {
                left_.push_back(iid_site(site));
            } else {
                if (right_.empty()) extend_right(0);
                const std::uint32_t next = left_.empty() ? right_.front() : left_.back();
                left_.push_back(pick(cum_backward_[next], site_uniform(site, 0)));
            }
        }
    }

    // Stationary law and time reversal P^(i,j) = pi_j P(j,i) / pi_i so that the
    // two-sided chain anchored at site 0 is stationary in both directions.
    void init_markov() {
        const std::size_t n = spec_.transition.size();
        Eigen::MatrixXd A(n + 1, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) =
                    (i == j ? 1.0 : 0.0) - spec_.transition[i][j];
            }
        }
        A.row(static_cast<Eigen::Index>(n)).setOnes();
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n + 1));
        rhs(static_cast<Eigen::Index>(n)) = 1.0;
        Eigen::VectorXd pi = A.colPivHouseholderQr().solve(rhs);
        std::vector<double> stat(n);
        for (std::size_t i = 0; i < n; ++i) stat[i] = std::max(pi(static_cast<Eigen::Index>(i)), 0.0);
        const double total = std::accumulate(stat.begin(), stat.end(), 0.0);
        double acc = 0.0;
        for (double s : stat) {
            acc += s / total;
            cum_stationary_.push_back(acc);
        }
        cum_stationary_.back() = 1.0;
        cum_forward_.assign(n, {});
        cum_backward_.assign(n, {});
        for (std::size_t i = 0; i < n; ++i) {
            double f = 0.0, b = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                f += spec_.transition[i][j];
                cum_forward_[i].push_back(f);
                b += stat[i] > 0.0 ? stat[j] * spec_.transition[j][i] / stat[i] : (i == j ? 1.0 : 0.0);
                cum_backward_[i].push_back(b);
            }
            cum_forward_[i].back() = 1.0;
            cum_backward_[i].back() = 1.0;
        }
    }

    EnvSpec spec_;
    std::uint64_t seed_;
    std::vector<double> cum_weights_;
    std::vector<double> cum_stationary_;
    std::vector<std::vector<double>> cum_forward_;
    std::vector<std::vector<double>> cum_backward_;

    mutable std::shared_mutex mutex_;
    mutable std::deque<std::uint32_t> right_;  // sites 0, 1, 2, ...
    mutable std::deque<std::uint32_t> left_;   // sites -1, -2, ...
    mutable std::deque<SiteRates> uniform_atoms_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Environment

Environment::Environment(EnvSpec spec, std::uint64_t seed)
    : store_(std::make_shared<const detail::SiteStore>(std::move(spec), seed)) {}

const EnvSpec& Environment::spec() const { return store_->spec(); }
Model Environment::model() const { return store_->spec().model; }
std::uint64_t Environment::seed() const { return store_->seed(); }

const SiteRates& Environment::rates(long x) const { return store_->rates(x + offset_); }
const RwreSiteLaw& Environment::law(long x) const { return store_->law(x + offset_); }

Environment Environment::shifted(long x) const {
    Environment e = *this;
    e.offset_ += x;
    return e;
}

void Environment::materialize(long a, long b) const {
    if (a > b) throw ConfigError("empty window");
    store_->materialize(a + offset_, b + offset_);
}

std::optional<std::pair<long, long>> Environment::materialized() const {
    auto w = store_->window();
    if (!w) return w;
    return std::pair{w->first - offset_, w->second - offset_};
}

Environment sample_environment(const EnvSpec& spec, std::uint64_t seed, long a, long b) {
    if (a > b) throw ConfigError("sample_environment: empty window");
    Environment env(spec, seed);
    env.materialize(a, b);
    return env;
}

Environment shift(const Environment& env, long x) { return env.shifted(x); }

// ---------------------------------------------------------------------------
// Conditions

ConditionReport validate_condition_C(const Environment& env, double epsilon, double M, long a, long b) {
    if (!(epsilon < M)) throw ConfigError("validate_condition_C needs epsilon < M");
    ConditionReport rep;
    for (long x = a; x <= b; ++x) {
        const SiteRates& s = env.rates(x);
        auto check = [&](double v, const std::string& name) {
            if (!(v > epsilon)) rep.violations.push_back({x, "C2: " + name + " > epsilon", v});
            if (!(v < M)) rep.violations.push_back({x, "C2: " + name + " < M", v});
        };
        for (int l = 1; l <= s.L(); ++l) check(s.mu[l - 1], "mu^" + std::to_string(l));
        for (int r = 1; r <= s.R(); ++r) check(s.lambda[r - 1], "lambda^" + std::to_string(r));
    }
    return rep;
}

ConditionReport validate_condition_C2prime(const Environment& env, double kappa, double K, long a, long b) {
    ConditionReport rep;
    for (long x = a; x <= b; ++x) {
        const SiteRates& s = env.rates(x);
        if (!(s.lambda[0] > kappa)) rep.violations.push_back({x, "C2': lambda^1 > kappa", s.lambda[0]});
        const double q = s.total_rate();
        if (!(q < K)) rep.violations.push_back({x, "C2': total rate < K", q});
    }
    return rep;
}

ConditionReport validate_condition_B(const RwreSiteLaw& law, double epsilon, double D, double eps0) {
    ConditionReport rep;
    const double w01 = law.prob(1);
    if (!(w01 > epsilon)) rep.violations.push_back({0, "B2: omega_01 > epsilon", w01});
    for (int j : law.offsets) {
        if (j == 0) continue;
        const double p = law.unfolded_prob(j);
        const double bound = D * std::pow(std::abs(static_cast<double>(j)), -(3.0 + eps0));
        if (!(p < bound)) rep.violations.push_back({j, "B3: omega_0j < D|j|^-(3+eps0) at j=" + std::to_string(j), p});
    }
    return rep;
}

EmbeddedProbs embedded_jump_probs(const SiteRates& site) {
    const double q = site.total_rate();
    if (!(q > 0.0)) throw DegenerateSiteError("site with zero total rate has no embedded jump law");
    EmbeddedProbs out;
    out.p.reserve(site.lambda.size());
    out.q.reserve(site.mu.size());
    for (double l : site.lambda) out.p.push_back(l / q);
    for (double m : site.mu) out.q.push_back(m / q);
    return out;
}

DivergenceReport check_nonexplosion(const Environment& env, int N) {
    if (N < 1) throw ConfigError("check_nonexplosion needs N >= 1");
    const int L = env.L();
    const int R = env.R();
    DivergenceReport rep;
    double right = 0.0, left = 0.0;
    for (int step = 1; step <= N; ++step) {
        const long n_right = step;
        double qmax = 0.0;
        for (int k = 1; k <= R; ++k) qmax = std::max(qmax, env.rates(n_right * R - k).total_rate());
        right += 1.0 / qmax;
        rep.right_partial_sums.push_back(right);

        const long n_left = 1 - step;  // 0, -1, -2, ...
        qmax = 0.0;
        for (int k = 1; k <= L; ++k) qmax = std::max(qmax, env.rates(n_left * L - k).total_rate());
        left += 1.0 / qmax;
        rep.left_partial_sums.push_back(left);
    }
    // Growth over the last octave, per unit of log n, compared with the
    // average growth per unit of log n before it. Logarithmic or faster
    // growth keeps the ratio near or above 1; convergent series drive it to 0.
    auto octave_ok = [N](const std::vector<double>& s) {
        if (N < 4) return false;
        const int half = N / 2;
        const double fit = (s[N - 1] - s[half - 1]) / std::log(static_cast<double>(N) / half);
        const double ref = s[half - 1] / std::log(static_cast<double>(half));
        return fit >= 0.5 * ref;
    };
    rep.divergence_consistent = octave_ok(rep.right_partial_sums) && octave_ok(rep.left_partial_sums);
    rep.verdict = rep.divergence_consistent ? "divergence consistent" : "divergence NOT observed";
    return rep;
}

}  // namespace ergwalk
