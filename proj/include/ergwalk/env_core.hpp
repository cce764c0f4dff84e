#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ergwalk {

enum class Model { bdp, rwre };

// homogeneous, periodic, iid and markov are the stationary ergodic modes.
// table is an explicit finite window (loaded from CSV or listed in a config);
// sites outside it are not materializable.
enum class Mode { homogeneous, periodic, iid, markov, table };

std::string to_string(Model m);
std::string to_string(Mode m);
Model model_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);

// One BDP site: mu[l-1] is the rate of a jump of -l, lambda[r-1] of +r.
struct SiteRates {
    std::vector<double> mu;
    std::vector<double> lambda;

    int L() const { return static_cast<int>(mu.size()); }
    int R() const { return static_cast<int>(lambda.size()); }
    double total_rate() const;
    // sum_r r*lambda^r - sum_l l*mu^l
    double drift() const;

    // From the ordering (mu^L, ..., mu^1, lambda^1, ..., lambda^R).
    static SiteRates from_tuple(const std::vector<double>& tuple, int L, int R);
    std::vector<double> to_tuple() const;

    bool operator==(const SiteRates&) const = default;
};

// Discrete jump law on a finite support. Mass beyond |j| = J of a declared
// power tail is folded onto -J and +J (each side keeps its own tail mass).
struct RwreSiteLaw {
    std::vector<int> offsets;   // strictly increasing
    std::vector<double> probs;  // same length as offsets
    double D = 1.0;
    double eps0 = 0.1;
    int J = 0;
    double folded_left = 0.0;   // mass added at -J by tail folding
    double folded_right = 0.0;  // mass added at +J by tail folding

    double prob(int j) const;
    double drift() const;
    int min_offset() const { return offsets.front(); }
    int max_offset() const { return offsets.back(); }
    // Probability before folding, used for the polynomial-tail check.
    double unfolded_prob(int j) const;
    // Offset selected by u in [0,1).
    int sample(double u) const;

    // Validates nonnegativity and normalization (within 1e-9). Values are kept
    // as given so CSV round trips are exact. Throws ConfigError.
    static RwreSiteLaw from_map(const std::map<int, double>& probs, double D = 1.0, double eps0 = 0.1);

    // Finite core plus a two-sided power tail amplitude*|j|^-exponent for
    // |j| >= tail_from, truncated at J with the remainder folded onto +-J.
    static RwreSiteLaw with_power_tail(const std::map<int, double>& core, double amplitude, double exponent,
                                       int tail_from, int J, double D, double eps0);

    bool operator==(const RwreSiteLaw& o) const { return offsets == o.offsets && probs == o.probs; }

private:
    std::vector<double> cdf_;
    void finalize();
};

// Smallest J for which the drift error of folding, bounded by
// 2 D J^-(1+eps0)/(1+eps0), is below 1e-9, capped at `cap`.
int default_truncation_radius(double D, double eps0, int cap = 4096);

struct EllipticBounds {
    double epsilon = 0.0;
    double M = 0.0;
};

struct TailBounds {
    double epsilon = 0.0;  // omega_{01} > epsilon
    double D = 1.0;
    double eps0 = 0.1;
    int J = 0;
};

struct UniformBox {
    double low = 0.0;
    double high = 0.0;
};

struct EnvSpec {
    Model model = Model::bdp;
    Mode mode = Mode::homogeneous;
    int L = 1;
    int R = 1;
    std::optional<EllipticBounds> bounds;
    std::optional<TailBounds> tail;
    std::vector<SiteRates> rate_sites;  // bdp: homogeneous (1), period, iid atoms, markov states, table
    std::vector<RwreSiteLaw> law_sites; // rwre: same roles
    std::vector<double> weights;        // iid atom weights
    std::optional<UniformBox> uniform;  // iid bdp with every rate uniform on [low, high]
    std::vector<std::vector<double>> transition;  // markov
    long table_origin = 0;              // table: site index of the first entry
    std::uint64_t seed = 0;
    long max_extent = 1L << 24;         // random modes: |x| beyond this is not materializable

    // Throws ConfigError on any inconsistency.
    void validate() const;
    std::size_t atom_count() const;
    bool is_random() const { return mode == Mode::iid || mode == Mode::markov; }
};

namespace detail {
class SiteStore;
}

// An environment realization. Sites are materialized lazily and memoized;
// copies and shifts share the same store. Safe for concurrent readers.
class Environment {
public:
    Environment(EnvSpec spec, std::uint64_t seed);
    explicit Environment(EnvSpec spec) : Environment(spec, spec.seed) {}

    const EnvSpec& spec() const;
    Model model() const;
    std::uint64_t seed() const;
    int L() const { return spec().L; }
    int R() const { return spec().R; }
    long offset() const { return offset_; }

    const SiteRates& rates(long x) const;
    const RwreSiteLaw& law(long x) const;

    // site(y) of the result is site(y + x) of *this.
    Environment shifted(long x) const;

    // Materializes every site in [a, b] (in this environment's coordinates).
    void materialize(long a, long b) const;
    // Materialized window in this environment's coordinates; empty for
    // homogeneous and periodic modes, which need no storage.
    std::optional<std::pair<long, long>> materialized() const;

private:
    std::shared_ptr<const detail::SiteStore> store_;
    long offset_ = 0;
};

Environment sample_environment(const EnvSpec& spec, std::uint64_t seed, long a, long b);
Environment shift(const Environment& env, long x);

struct Violation {
    long site = 0;
    std::string rule;
    double value = 0.0;
};

struct ConditionReport {
    std::vector<Violation> violations;
    bool passed() const { return violations.empty(); }
};

// Every rate at every site of [a, b] lies strictly inside (epsilon, M).
ConditionReport validate_condition_C(const Environment& env, double epsilon, double M, long a, long b);
// lambda^1 > kappa and total rate < K at every site of [a, b].
ConditionReport validate_condition_C2prime(const Environment& env, double kappa, double K, long a, long b);
// omega_{01} > epsilon and omega_{0j} < D |j|^-(3+eps0) on the (unfolded) support.
ConditionReport validate_condition_B(const RwreSiteLaw& law, double epsilon, double D, double eps0);

struct EmbeddedProbs {
    std::vector<double> p;  // p[r-1] = lambda^r / q
    std::vector<double> q;  // q[l-1] = mu^l / q
};

// Throws DegenerateSiteError on zero total rate.
EmbeddedProbs embedded_jump_probs(const SiteRates& site);

struct DivergenceReport {
    std::vector<double> right_partial_sums;  // depths 1..N
    std::vector<double> left_partial_sums;
    bool divergence_consistent = false;
    std::string verdict;  // "divergence consistent" or "divergence NOT observed"
};

// Partial sums of sum_n (max_{1<=k<=R} q_{nR-k})^-1 for n = 1..N and the
// mirrored left series over n = 0, -1, ..., -(N-1).
DivergenceReport check_nonexplosion(const Environment& env, int N);

// CSV with header site_index,<columns>. bdp columns are mu_L..mu_1,lambda_1..lambda_R;
// rwre columns are p_<j> for every offset in the union of supports.
std::string environment_to_csv(const Environment& env, long a, long b);
// Builds a table-mode environment from CSV text.
Environment environment_from_csv(const std::string& text, Model model, int L, int R);

}  // namespace ergwalk
