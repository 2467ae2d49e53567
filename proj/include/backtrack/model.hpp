#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

enum class VarKind { endogenous, exogenous };

// Mechanism forms. The catalog covers every structural equation used by the
// built-in scenarios and the law-school model; abduction is decidable per
// form (linear additive noise inverts, bernexpit requires a recorded draw).
enum class MechanismForm { linear, bernexpit, boolean_or, threshold, constant };

enum class NoiseKind { normal, bernoulli, point_mass, uniform01 };

// Sum of coef*var terms plus a constant. Means of exogenous noise may
// reference other variables to induce dependence without a causal edge.
struct LinearExpr {
    std::vector<std::string> vars;
    std::vector<double> coefs;
    double constant = 0.0;

    bool empty() const { return vars.empty() && constant == 0.0; }
};

struct Mechanism {
    std::string target;
    MechanismForm form = MechanismForm::linear;
    std::vector<std::string> parents;  // endogenous or exogenous, ordered
    std::vector<double> weights;       // linear / bernexpit index weights
    double intercept = 0.0;            // index constant; threshold cutoff; constant value
    std::string exo;                   // additive noise slot ("" = none)

    bool operator==(const Mechanism& o) const {
        return target == o.target && form == o.form && parents == o.parents &&
               weights == o.weights && intercept == o.intercept && exo == o.exo;
    }
};

struct NoiseSpec {
    std::string variable;
    NoiseKind kind = NoiseKind::normal;
    LinearExpr mean;     // normal mean
    double sd = 1.0;     // normal
    double param = 0.0;  // bernoulli p / point-mass value

    bool operator==(const NoiseSpec& o) const {
        return variable == o.variable && kind == o.kind && mean.vars == o.mean.vars &&
               mean.coefs == o.mean.coefs && mean.constant == o.mean.constant && sd == o.sd &&
               param == o.param;
    }
};

// Thrown when abduction meets a mechanism whose exogenous value cannot be
// inverted from the observation and no recorded draw is available.
struct NonInvertible : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Ordered name -> value map for a subset of variables.
class Assignment {
public:
    Assignment() = default;

    void set(const std::string& name, double value) {
        for (auto& [n, v] : items_) {
            if (n == name) {
                v = value;
                return;
            }
        }
        items_.emplace_back(name, value);
    }

    bool has(const std::string& name) const {
        for (const auto& [n, v] : items_)
            if (n == name) return true;
        return false;
    }

    double at(const std::string& name) const {
        for (const auto& [n, v] : items_)
            if (n == name) return v;
        throw std::out_of_range("assignment has no value for '" + name + "'");
    }

    const std::vector<std::pair<std::string, double>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

private:
    std::vector<std::pair<std::string, double>> items_;
};

// Declarative model description; validated into a CausalModel by build_model.
struct ModelSpec {
    std::vector<NoiseSpec> noises;
    std::vector<Mechanism> mechanisms;

    ModelSpec& exo(NoiseSpec n) {
        noises.push_back(std::move(n));
        return *this;
    }
    ModelSpec& endo(Mechanism m) {
        mechanisms.push_back(std::move(m));
        return *this;
    }

    static NoiseSpec normal(std::string name, double mean, double sd) {
        NoiseSpec n;
        n.variable = std::move(name);
        n.kind = NoiseKind::normal;
        n.mean.constant = mean;
        n.sd = sd;
        return n;
    }
    static NoiseSpec normal_expr(std::string name, LinearExpr mean, double sd) {
        NoiseSpec n;
        n.variable = std::move(name);
        n.kind = NoiseKind::normal;
        n.mean = std::move(mean);
        n.sd = sd;
        return n;
    }
    static NoiseSpec bernoulli(std::string name, double p) {
        NoiseSpec n;
        n.variable = std::move(name);
        n.kind = NoiseKind::bernoulli;
        n.param = p;
        return n;
    }
    static NoiseSpec point(std::string name, double value) {
        NoiseSpec n;
        n.variable = std::move(name);
        n.kind = NoiseKind::point_mass;
        n.param = value;
        return n;
    }
    static NoiseSpec uniform01(std::string name) {
        NoiseSpec n;
        n.variable = std::move(name);
        n.kind = NoiseKind::uniform01;
        return n;
    }

    static Mechanism linear(std::string target, std::vector<std::string> parents,
                            std::vector<double> weights, double intercept, std::string exo) {
        Mechanism m;
        m.target = std::move(target);
        m.form = MechanismForm::linear;
        m.parents = std::move(parents);
        m.weights = std::move(weights);
        m.intercept = intercept;
        m.exo = std::move(exo);
        return m;
    }
    static Mechanism boolean_or(std::string target, std::vector<std::string> parents,
                                std::string exo = "") {
        Mechanism m;
        m.target = std::move(target);
        m.form = MechanismForm::boolean_or;
        m.parents = std::move(parents);
        m.exo = std::move(exo);
        return m;
    }
    static Mechanism threshold(std::string target, std::string parent, double cutoff,
                               std::string exo = "") {
        Mechanism m;
        m.target = std::move(target);
        m.form = MechanismForm::threshold;
        m.parents = {std::move(parent)};
        m.intercept = cutoff;
        m.exo = std::move(exo);
        return m;
    }
    static Mechanism bernexpit(std::string target, std::vector<std::string> parents,
                               std::vector<double> weights, double intercept, std::string exo) {
        Mechanism m;
        m.target = std::move(target);
        m.form = MechanismForm::bernexpit;
        m.parents = std::move(parents);
        m.weights = std::move(weights);
        m.intercept = intercept;
        m.exo = std::move(exo);
        return m;
    }
    static Mechanism constant(std::string target, double value) {
        Mechanism m;
        m.target = std::move(target);
        m.form = MechanismForm::constant;
        m.intercept = value;
        return m;
    }
};

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Validated probabilistic SCM. Immutable after build; safe to share across
// threads. Sampling takes explicit seeds with per-row derived streams.
class CausalModel {
public:
    friend CausalModel build_model(const ModelSpec& spec);

    const std::vector<std::string>& exo_names() const { return exo_names_; }
    const std::vector<std::string>& endo_names() const { return endo_names_; }
    std::size_t n_exo() const { return exo_names_.size(); }
    std::size_t n_endo() const { return endo_names_.size(); }

    bool has_variable(const std::string& name) const {
        return exo_index_.count(name) > 0 || endo_index_.count(name) > 0;
    }
    bool is_exogenous(const std::string& name) const { return exo_index_.count(name) > 0; }
    bool is_endogenous(const std::string& name) const { return endo_index_.count(name) > 0; }

    std::size_t exo_index(const std::string& name) const {
        auto it = exo_index_.find(name);
        if (it == exo_index_.end()) throw std::out_of_range("unknown exogenous variable '" + name + "'");
        return it->second;
    }
    std::size_t endo_index(const std::string& name) const {
        auto it = endo_index_.find(name);
        if (it == endo_index_.end()) throw std::out_of_range("unknown endogenous variable '" + name + "'");
        return it->second;
    }

    const Mechanism& mechanism(const std::string& endo) const {
        return spec_.mechanisms[endo_index(endo)];
    }
    const NoiseSpec& noise(const std::string& exo) const { return spec_.noises[exo_index(exo)]; }
    const ModelSpec& spec() const { return spec_; }

    // True for endogenous variables whose noise mean references other
    // variables (dependence induced without a causal edge); such nodes are
    // not legal intervention targets.
    bool is_dependence_only(const std::string& endo) const {
        const auto& mech = spec_.mechanisms[endo_index(endo)];
        if (mech.exo.empty()) return false;
        return !spec_.noises[exo_index(mech.exo)].mean.vars.empty();
    }

    // Topological order over exogenous and endogenous variables jointly;
    // declaration order breaks ties.
    const std::vector<std::string>& topological_names() const { return topo_names_; }

    // --- forward -----------------------------------------------------------

    // Visits all variables in topological order, drawing each exogenous value
    // through `exo_value(exo_idx, u, v)` and evaluating mechanisms in place.
    template <typename ExoFn>
    void generate(ExoFn&& exo_value, std::vector<double>& u, std::vector<double>& v) const {
        u.assign(n_exo(), std::numeric_limits<double>::quiet_NaN());
        v.assign(n_endo(), std::numeric_limits<double>::quiet_NaN());
        for (const auto& node : topo_) {
            if (node.exo)
                u[node.idx] = exo_value(node.idx, std::span<const double>(u), std::span<const double>(v));
            else
                v[node.idx] = eval_mechanism(node.idx, u, v);
        }
    }

    // Draw one exogenous value from its prior, mean evaluated at the current
    // partial world.
    double draw_noise(std::size_t exo_idx, Rng& rng, std::span<const double> u,
                      std::span<const double> v) const {
        const auto& cn = compiled_noise_[exo_idx];
        switch (cn.kind) {
            case NoiseKind::normal: {
                double mean = cn.mean_const;
                for (std::size_t t = 0; t < cn.mean_refs.size(); ++t)
                    mean += cn.mean_coefs[t] * ref_value(cn.mean_refs[t], u, v);
                return rng.normal(mean, cn.a);
            }
            case NoiseKind::bernoulli:
                return rng.bernoulli(cn.a);
            case NoiseKind::point_mass:
                return cn.a;
            case NoiseKind::uniform01:
                return rng.uniform01();
        }
        return 0.0;
    }

    void sample_world(Rng& rng, std::vector<double>& u, std::vector<double>& v) const {
        generate([&](std::size_t i, std::span<const double> uu, std::span<const double> vv) {
            return draw_noise(i, rng, uu, vv);
        }, u, v);
    }

    // n independent draws from P(U); row r uses the stream derived from
    // (seed, r), so output is identical under any parallel chunking.
    std::vector<Assignment> sample_exogenous(std::size_t n, std::uint64_t seed) const {
        if (n < 1) throw std::invalid_argument("sample_exogenous requires n >= 1");
        std::vector<Assignment> out(n);
        std::vector<double> u, v;
        for (std::size_t r = 0; r < n; ++r) {
            Rng rng(derive_seed(seed, r));
            sample_world(rng, u, v);
            for (std::size_t i = 0; i < n_exo(); ++i) out[r].set(exo_names_[i], u[i]);
        }
        return out;
    }

    // Full factual table with recorded exogenous draws; ids 0..n-1.
    FactualTable generate_table(std::size_t n, std::uint64_t seed) const {
        FactualTable t;
        t.u = ColumnTable(exo_names_);
        t.v = ColumnTable(endo_names_);
        t.ids.reserve(n);
        t.u.reserve_rows(n);
        t.v.reserve_rows(n);
        std::vector<double> u, v;
        for (std::size_t r = 0; r < n; ++r) {
            Rng rng(derive_seed(seed, r));
            sample_world(rng, u, v);
            t.ids.push_back(static_cast<std::int64_t>(r));
            for (std::size_t i = 0; i < n_exo(); ++i) t.u.cols[i].push_back(u[i]);
            for (std::size_t j = 0; j < n_endo(); ++j) t.v.cols[j].push_back(v[j]);
        }
        return t;
    }

    std::vector<double> forward_values(std::span<const double> u) const {
        if (u.size() != n_exo()) throw std::invalid_argument("forward: wrong exogenous vector length");
        std::vector<double> out(n_endo());
        for (const auto& node : topo_)
            if (!node.exo) out[node.idx] = eval_mechanism(node.idx, u, out);
        return out;
    }

    Assignment forward(const Assignment& u) const {
        std::vector<double> ubuf(n_exo());
        for (std::size_t i = 0; i < n_exo(); ++i) {
            if (!u.has(exo_names_[i]))
                throw std::invalid_argument("forward: missing exogenous value for '" + exo_names_[i] + "'");
            ubuf[i] = u.at(exo_names_[i]);
        }
        std::vector<double> v(n_endo());
        for (const auto& node : topo_)
            if (!node.exo) v[node.idx] = eval_mechanism(node.idx, ubuf, v);
        Assignment out;
        for (std::size_t j = 0; j < n_endo(); ++j) out.set(endo_names_[j], v[j]);
        return out;
    }

    double eval_mechanism(std::size_t endo_idx, std::span<const double> u,
                          std::span<const double> v) const {
        const auto& cm = compiled_mech_[endo_idx];
        const double slot = cm.exo_slot >= 0 ? u[static_cast<std::size_t>(cm.exo_slot)] : 0.0;
        switch (cm.form) {
            case MechanismForm::linear: {
                double s = cm.intercept;
                for (std::size_t t = 0; t < cm.parents.size(); ++t)
                    s += cm.weights[t] * ref_value(cm.parents[t], u, v);
                return s + slot;
            }
            case MechanismForm::bernexpit: {
                double s = cm.intercept;
                for (std::size_t t = 0; t < cm.parents.size(); ++t)
                    s += cm.weights[t] * ref_value(cm.parents[t], u, v);
                return slot < expit(s) ? 1.0 : 0.0;
            }
            case MechanismForm::boolean_or: {
                for (const auto& p : cm.parents)
                    if (ref_value(p, u, v) > 0.0) return 1.0 + slot;
                return slot;
            }
            case MechanismForm::threshold:
                return (ref_value(cm.parents[0], u, v) > cm.intercept ? 1.0 : 0.0) + slot;
            case MechanismForm::constant:
                return cm.intercept;
        }
        return 0.0;
    }

    // --- abduction ----------------------------------------------------------

    // Recover the unique U reproducing v. Mechanisms with an additive slot
    // invert arithmetically; bernexpit consults `recorded`; deterministic
    // mechanisms are checked for consistency.
    Assignment abduce(const Assignment& v, const Assignment* recorded = nullptr) const {
        std::vector<double> vbuf(n_endo());
        for (std::size_t j = 0; j < n_endo(); ++j) {
            if (!v.has(endo_names_[j]))
                throw std::invalid_argument("abduce: missing observation for '" + endo_names_[j] + "'");
            vbuf[j] = v.at(endo_names_[j]);
        }
        std::vector<double> ubuf(n_exo(), std::numeric_limits<double>::quiet_NaN());
        std::vector<bool> have(n_exo(), false);
        if (recorded) {
            for (const auto& [name, value] : recorded->items()) {
                auto it = exo_index_.find(name);
                if (it != exo_index_.end()) {
                    ubuf[it->second] = value;
                    have[it->second] = true;
                }
            }
        }
        abduce_into(vbuf, ubuf, have);
        Assignment out;
        for (std::size_t i = 0; i < n_exo(); ++i) out.set(exo_names_[i], ubuf[i]);
        return out;
    }

    // Vector-path abduction; `have` marks recorded entries on input.
    void abduce_into(std::span<const double> v, std::vector<double>& u,
                     std::vector<bool>& have) const {
        std::vector<bool> done(n_endo(), false);
        std::size_t remaining = n_endo();
        bool progress = true;
        while (remaining > 0 && progress) {
            progress = false;
            for (std::size_t j = 0; j < n_endo(); ++j) {
                if (done[j]) continue;
                const auto& cm = compiled_mech_[j];
                bool ready = true;
                for (const auto& p : cm.parents) {
                    if (p.exo && !have[p.idx]) {
                        ready = false;
                        break;
                    }
                }
                if (!ready) continue;
                abduce_one(j, v, u, have);
                done[j] = true;
                --remaining;
                progress = true;
            }
        }
        if (remaining > 0)
            throw NonInvertible("abduce: cyclic exogenous dependence; recorded exogenous values required");
        for (std::size_t i = 0; i < n_exo(); ++i) {
            if (!have[i])
                throw NonInvertible("abduce: exogenous variable '" + exo_names_[i] +
                                    "' is not recoverable; supply a recorded value");
        }
    }

    // --- interventions ------------------------------------------------------

    // Submodel with constant mechanisms for the fixed endogenous variables.
    // Orphaned noise slots of replaced mechanisms are removed.
    CausalModel intervene(const Assignment& fix) const;

    std::uint64_t structural_hash() const { return hash_; }

private:
    struct Ref {
        bool exo = false;
        std::uint32_t idx = 0;
    };
    struct Node {
        bool exo = false;
        std::uint32_t idx = 0;
    };
    struct CompiledMech {
        MechanismForm form;
        std::vector<Ref> parents;
        std::vector<double> weights;
        double intercept;
        std::int32_t exo_slot;
    };
    struct CompiledNoise {
        NoiseKind kind;
        std::vector<Ref> mean_refs;
        std::vector<double> mean_coefs;
        double mean_const;
        double a;  // sd / p / point value
    };

    static double ref_value(const Ref& r, std::span<const double> u, std::span<const double> v) {
        return r.exo ? u[r.idx] : v[r.idx];
    }

    void abduce_one(std::size_t j, std::span<const double> v, std::vector<double>& u,
                    std::vector<bool>& have) const {
        const auto& cm = compiled_mech_[j];
        double det = 0.0;
        switch (cm.form) {
            case MechanismForm::linear: {
                det = cm.intercept;
                for (std::size_t t = 0; t < cm.parents.size(); ++t)
                    det += cm.weights[t] * ref_value(cm.parents[t], u, v);
                break;
            }
            case MechanismForm::boolean_or: {
                det = 0.0;
                for (const auto& p : cm.parents)
                    if (ref_value(p, u, v) > 0.0) {
                        det = 1.0;
                        break;
                    }
                break;
            }
            case MechanismForm::threshold:
                det = ref_value(cm.parents[0], u, v) > cm.intercept ? 1.0 : 0.0;
                break;
            case MechanismForm::constant: {
                if (std::abs(v[j] - cm.intercept) > 1e-9)
                    throw std::invalid_argument("abduce: observation of '" + endo_names_[j] +
                                                "' contradicts its constant mechanism");
                return;
            }
            case MechanismForm::bernexpit: {
                if (cm.exo_slot >= 0 && !have[static_cast<std::size_t>(cm.exo_slot)])
                    throw NonInvertible("abduce: mechanism of '" + endo_names_[j] +
                                        "' (bernexpit) is not invertible; recorded exogenous "
                                        "values are required");
                return;
            }
        }
        if (cm.exo_slot < 0) {
            if (std::abs(v[j] - det) > 1e-9)
                throw std::invalid_argument("abduce: observation of '" + endo_names_[j] +
                                            "' contradicts its deterministic mechanism");
            return;
        }
        const auto slot = static_cast<std::size_t>(cm.exo_slot);
        if (!have[slot]) {
            u[slot] = v[j] - det;
            have[slot] = true;
        }
    }

    ModelSpec spec_;
    std::vector<std::string> exo_names_, endo_names_;
    std::unordered_map<std::string, std::size_t> exo_index_, endo_index_;
    std::vector<CompiledMech> compiled_mech_;
    std::vector<CompiledNoise> compiled_noise_;
    std::vector<Node> topo_;
    std::vector<std::string> topo_names_;
    std::uint64_t hash_ = 0;
};

CausalModel build_model(const ModelSpec& spec);

// Removes a sink endogenous variable (no consumers) along with noise terms
// nothing else references. Used to drop outcome nodes whose exogenous draws
// are unobservable on real data.
inline CausalModel drop_endogenous(const CausalModel& model, const std::string& name);

// Names of endogenous variables whose mechanisms differ between two models.
inline std::vector<std::string> diff_mechanisms(const CausalModel& a, const CausalModel& b) {
    std::vector<std::string> out;
    for (const auto& m : a.spec().mechanisms) {
        if (!b.is_endogenous(m.target)) {
            out.push_back(m.target);
            continue;
        }
        if (!(b.mechanism(m.target) == m)) out.push_back(m.target);
    }
    for (const auto& m : b.spec().mechanisms)
        if (!a.is_endogenous(m.target)) out.push_back(m.target);
    return out;
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

inline CausalModel build_model(const ModelSpec& spec) {
    CausalModel m;
    m.spec_ = spec;

    // Index declarations; reject duplicates.
    for (const auto& n : spec.noises) {
        if (m.exo_index_.count(n.variable) || m.endo_index_.count(n.variable))
            throw std::invalid_argument("duplicate variable '" + n.variable + "'");
        m.exo_index_[n.variable] = m.exo_names_.size();
        m.exo_names_.push_back(n.variable);
    }
    for (const auto& mech : spec.mechanisms) {
        if (m.exo_index_.count(mech.target) || m.endo_index_.count(mech.target))
            throw std::invalid_argument("duplicate mechanism for '" + mech.target + "'");
        m.endo_index_[mech.target] = m.endo_names_.size();
        m.endo_names_.push_back(mech.target);
    }

    const std::size_t nu = m.exo_names_.size();
    const std::size_t nv = m.endo_names_.size();

    auto resolve = [&](const std::string& name, const std::string& where) -> CausalModel::Ref {
        if (auto it = m.exo_index_.find(name); it != m.exo_index_.end())
            return {true, static_cast<std::uint32_t>(it->second)};
        if (auto it = m.endo_index_.find(name); it != m.endo_index_.end())
            return {false, static_cast<std::uint32_t>(it->second)};
        throw std::invalid_argument("dangling reference to '" + name + "' in " + where);
    };

    // Compile mechanisms.
    std::vector<int> slot_owner(nu, -1);
    for (std::size_t j = 0; j < nv; ++j) {
        const auto& mech = spec.mechanisms[j];
        CausalModel::CompiledMech cm;
        cm.form = mech.form;
        cm.intercept = mech.intercept;
        cm.weights = mech.weights;
        cm.exo_slot = -1;
        for (const auto& p : mech.parents) {
            if (p == mech.target)
                throw std::invalid_argument("mechanism of '" + mech.target + "' lists itself as parent");
            cm.parents.push_back(resolve(p, "mechanism of '" + mech.target + "'"));
        }
        switch (mech.form) {
            case MechanismForm::linear:
            case MechanismForm::bernexpit:
                if (mech.weights.size() != mech.parents.size())
                    throw std::invalid_argument("mechanism of '" + mech.target +
                                                "': weights/parents length mismatch");
                if (mech.exo.empty())
                    throw std::invalid_argument("mechanism of '" + mech.target +
                                                "' requires an exogenous term");
                break;
            case MechanismForm::boolean_or:
                if (mech.parents.empty())
                    throw std::invalid_argument("or-mechanism of '" + mech.target + "' has no parents");
                break;
            case MechanismForm::threshold:
                if (mech.parents.size() != 1)
                    throw std::invalid_argument("threshold mechanism of '" + mech.target +
                                                "' requires exactly one parent");
                break;
            case MechanismForm::constant:
                if (!mech.parents.empty() || !mech.exo.empty())
                    throw std::invalid_argument("constant mechanism of '" + mech.target +
                                                "' takes no parents or noise");
                break;
        }
        if (!mech.exo.empty()) {
            auto it = m.exo_index_.find(mech.exo);
            if (it == m.exo_index_.end())
                throw std::invalid_argument("dangling reference to '" + mech.exo +
                                            "' in mechanism of '" + mech.target + "'");
            if (slot_owner[it->second] >= 0)
                throw std::invalid_argument("exogenous variable '" + mech.exo +
                                            "' is the noise term of more than one mechanism");
            slot_owner[it->second] = static_cast<int>(j);
            cm.exo_slot = static_cast<std::int32_t>(it->second);
        }
        m.compiled_mech_.push_back(std::move(cm));
    }

    // Compile noises.
    for (const auto& n : spec.noises) {
        CausalModel::CompiledNoise cn;
        cn.kind = n.kind;
        cn.mean_const = n.mean.constant;
        switch (n.kind) {
            case NoiseKind::normal:
                if (!(n.sd > 0.0))
                    throw std::invalid_argument("noise '" + n.variable + "': stddev must be > 0");
                cn.a = n.sd;
                break;
            case NoiseKind::bernoulli:
                if (n.param < 0.0 || n.param > 1.0)
                    throw std::invalid_argument("noise '" + n.variable + "': p must lie in [0,1]");
                cn.a = n.param;
                break;
            case NoiseKind::point_mass:
                cn.a = n.param;
                break;
            case NoiseKind::uniform01:
                cn.a = 0.0;
                break;
        }
        if (n.mean.vars.size() != n.mean.coefs.size())
            throw std::invalid_argument("noise '" + n.variable + "': malformed mean expression");
        for (const auto& v : n.mean.vars) {
            cn.mean_refs.push_back(resolve(v, "mean of '" + n.variable + "'"));
            }
        cn.mean_coefs = n.mean.coefs;
        m.compiled_noise_.push_back(std::move(cn));
    }

    // Topological order over the joint graph (exo node i, endo node nu + j),
    // Kahn's algorithm with declaration order breaking ties.
    const std::size_t total = nu + nv;
    std::vector<std::vector<std::size_t>> children(total);
    std::vector<std::size_t> indeg(total, 0);
    auto add_edge = [&](std::size_t from, std::size_t to) {
        children[from].push_back(to);
        ++indeg[to];
    };
    for (std::size_t j = 0; j < nv; ++j) {
        const auto& cm = m.compiled_mech_[j];
        for (const auto& p : cm.parents)
            add_edge(p.exo ? p.idx : nu + p.idx, nu + j);
        if (cm.exo_slot >= 0) add_edge(static_cast<std::size_t>(cm.exo_slot), nu + j);
    }
    for (std::size_t i = 0; i < nu; ++i) {
        for (const auto& r : m.compiled_noise_[i].mean_refs)
            add_edge(r.exo ? r.idx : nu + r.idx, i);
    }
    std::vector<bool> emitted(total, false);
    for (std::size_t count = 0; count < total; ++count) {
        std::size_t pick = total;
        for (std::size_t k = 0; k < total; ++k) {
            if (!emitted[k] && indeg[k] == 0) {
                pick = k;
                break;
            }
        }
        if (pick == total) throw std::invalid_argument("cycle detected in model specification");
        emitted[pick] = true;
        for (std::size_t c : children[pick]) --indeg[c];
        CausalModel::Node node;
        node.exo = pick < nu;
        node.idx = static_cast<std::uint32_t>(node.exo ? pick : pick - nu);
        m.topo_.push_back(node);
        m.topo_names_.push_back(node.exo ? m.exo_names_[node.idx] : m.endo_names_[node.idx]);
    }

    // Structural hash over the canonical declaration sequence.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : spec.noises) {
        h = detail::fnv1a(n.variable, h);
        h = detail::fnv1a(std::to_string(static_cast<int>(n.kind)), h);
        h = detail::fnv1a(std::to_string(n.sd) + "/" + std::to_string(n.param) + "/" +
                              std::to_string(n.mean.constant), h);
        for (std::size_t t = 0; t < n.mean.vars.size(); ++t)
            h = detail::fnv1a(n.mean.vars[t] + std::to_string(n.mean.coefs[t]), h);
    }
    for (const auto& mech : spec.mechanisms) {
        h = detail::fnv1a(mech.target, h);
        h = detail::fnv1a(std::to_string(static_cast<int>(mech.form)), h);
        for (const auto& p : mech.parents) h = detail::fnv1a(p, h);
        for (double w : mech.weights) h = detail::fnv1a(std::to_string(w), h);
        h = detail::fnv1a(std::to_string(mech.intercept), h);
        h = detail::fnv1a(mech.exo, h);
    }
    m.hash_ = h;
    return m;
}

inline CausalModel CausalModel::intervene(const Assignment& fix) const {
    ModelSpec next = spec_;
    std::vector<std::string> dropped_slots;
    for (const auto& [name, value] : fix.items()) {
        if (is_exogenous(name))
            throw std::invalid_argument("intervene: '" + name +
                                        "' is exogenous; use a point-mass noise instead");
        if (!is_endogenous(name))
            throw std::invalid_argument("intervene: unknown variable '" + name + "'");
        if (is_dependence_only(name))
            throw std::invalid_argument("intervene: '" + name +
                                        "' carries dependence-only noise and cannot be intervened on");
        auto& mech = next.mechanisms[endo_index(name)];
        if (!mech.exo.empty()) dropped_slots.push_back(mech.exo);
        mech = ModelSpec::constant(name, value);
    }
    // Remove noise specs that no mechanism or mean expression references.
    for (const auto& slot : dropped_slots) {
        bool referenced = false;
        for (const auto& mech : next.mechanisms) {
            if (mech.exo == slot) referenced = true;
            for (const auto& p : mech.parents)
                if (p == slot) referenced = true;
        }
        for (const auto& n : next.noises)
            for (const auto& v : n.mean.vars)
                if (v == slot) referenced = true;
        if (!referenced) {
            std::erase_if(next.noises, [&](const NoiseSpec& n) { return n.variable == slot; });
        }
    }
    return build_model(next);
}

inline CausalModel drop_endogenous(const CausalModel& model, const std::string& name) {
    if (!model.is_endogenous(name))
        throw std::invalid_argument("drop_endogenous: unknown endogenous variable '" + name + "'");
    ModelSpec next = model.spec();
    for (const auto& m : next.mechanisms) {
        if (m.target == name) continue;
        for (const auto& p : m.parents)
            if (p == name)
                throw std::invalid_argument("cannot drop '" + name + "': mechanism of '" +
                                            m.target + "' consumes it");
    }
    for (const auto& n : next.noises)
        for (const auto& v : n.mean.vars)
            if (v == name)
                throw std::invalid_argument("cannot drop '" + name + "': noise mean of '" +
                                            n.variable + "' references it");
    const auto old = model.mechanism(name);
    std::erase_if(next.mechanisms, [&](const Mechanism& m) { return m.target == name; });
    if (!old.exo.empty()) {
        bool referenced = false;
        for (const auto& m : next.mechanisms) {
            if (m.exo == old.exo) referenced = true;
            for (const auto& p : m.parents)
                if (p == old.exo) referenced = true;
        }
        for (const auto& n : next.noises)
            for (const auto& v : n.mean.vars)
                if (v == old.exo) referenced = true;
        if (!referenced)
            std::erase_if(next.noises, [&](const NoiseSpec& n) { return n.variable == old.exo; });
    }
    return build_model(next);
}

}  // namespace backtrack
