#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "backtrack/backtracking.hpp"
#include "backtrack/csv.hpp"
#include "backtrack/divergence.hpp"
#include "backtrack/model.hpp"
#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

// Decision node plus the value an audit targets or conditions on.
struct Outcome {
    std::string variable;
    double value = 1.0;
};

// Covariates whose distribution an audit inspects; members may name
// exogenous or endogenous variables and resolve per world.
struct OpportunitySet {
    std::vector<std::string> members;
};

// Factual selection such as a=0; an empty clause list selects everyone.
struct GroupSpec {
    std::vector<std::pair<std::string, double>> defining;

    std::string label() const {
        if (defining.empty()) return "all";
        std::string out;
        for (std::size_t i = 0; i < defining.size(); ++i) {
            if (i) out += ",";
            out += defining[i].first + "=" + csv::format_double(defining[i].second);
        }
        return out;
    }

    bool operator==(const GroupSpec&) const = default;
};

struct TestOptions {
    double alpha = 0.05;
    std::size_t n_perm = 200;
    std::uint64_t seed = 0;
    std::size_t cap = 2000;  // per-side row cap before distance work
    std::size_t min_rows = 50;
};

struct CriterionResult {
    std::string subject;
    std::string criterion;
    double y = std::numeric_limits<double>::quiet_NaN();
    double y_star = std::numeric_limits<double>::quiet_NaN();
    double statistic = 0.0;
    double threshold = 0.0;
    bool satisfied = false;
    std::size_t accepted_rows = 0;
    std::string note;  // skip/infeasibility annotations, not serialized
};

// Distinguished effort value for targets no accepted row can reach.
inline constexpr double kInfeasible = std::numeric_limits<double>::infinity();

namespace detail {

inline void check_members(const CounterfactualTable& t, const OpportunitySet& S) {
    if (S.members.empty()) throw std::invalid_argument("opportunity set must be nonempty");
    for (const auto& m : S.members) table_column(t, m, World::counterfactual);
}

inline EmpiricalSample project_rows(const CounterfactualTable& t, const OpportunitySet& S, World w,
                                    const std::vector<std::size_t>& rows) {
    EmpiricalSample s;
    s.dim = S.members.size();
    std::vector<const std::vector<double>*> cols;
    for (const auto& m : S.members) cols.push_back(&table_column(t, m, w));
    s.data.reserve(rows.size() * s.dim);
    for (std::size_t r : rows)
        for (const auto* c : cols) s.data.push_back((*c)[r]);
    return s;
}

inline bool group_holds(const CounterfactualTable& t,
                        const std::vector<const std::vector<double>*>& cols, const GroupSpec& g,
                        std::size_t r) {
    for (std::size_t k = 0; k < cols.size(); ++k)
        if ((*cols[k])[r] != g.defining[k].second) return false;
    return true;
}

inline std::vector<const std::vector<double>*> group_columns(const CounterfactualTable& t,
                                                             const GroupSpec& g) {
    std::vector<const std::vector<double>*> cols;
    for (const auto& [var, val] : g.defining) cols.push_back(&table_column(t, var, World::factual));
    return cols;
}

}  // namespace detail

// Counterfactual covariate distribution available to one individual under
// the target outcome: their accepted cross-world draws, projected onto S.
inline EmpiricalSample individual_cf_opportunity(const CounterfactualTable& t, std::int64_t id,
                                                 const Outcome& y_star, const OpportunitySet& S,
                                                 std::size_t min_rows = 50) {
    detail::check_members(t, S);
    const auto& ycol = detail::table_column(t, y_star.variable, World::counterfactual);
    std::vector<std::size_t> rows;
    bool seen = false;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.ids[r] != id) continue;
        seen = true;
        if (ycol[r] == y_star.value) rows.push_back(r);
    }
    if (!seen) throw std::invalid_argument("unknown individual id " + std::to_string(id));
    if (rows.size() < min_rows) throw InsufficientRows(rows.size(), min_rows);
    return detail::project_rows(t, S, World::counterfactual, rows);
}

// The covariate values this individual factually holds.
inline std::vector<double> individual_realized_opportunity(const Assignment& observation,
                                                           const OpportunitySet& S) {
    if (S.members.empty()) throw std::invalid_argument("opportunity set must be nonempty");
    std::vector<double> out;
    out.reserve(S.members.size());
    for (const auto& m : S.members) {
        if (!observation.has(m))
            throw std::invalid_argument("observation is missing member '" + m + "'");
        out.push_back(observation.at(m));
    }
    return out;
}

inline std::vector<double> individual_realized_opportunity(const CounterfactualTable& t,
                                                           std::int64_t id,
                                                           const OpportunitySet& S) {
    detail::check_members(t, S);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (t.ids[r] != id) continue;
        std::vector<double> out;
        out.reserve(S.members.size());
        for (const auto& m : S.members)
            out.push_back(detail::table_column(t, m, World::factual)[r]);
        return out;
    }
    throw std::invalid_argument("unknown individual id " + std::to_string(id));
}

// Pools the accepted draws of every group member.
inline EmpiricalSample group_cf_opportunity(const CounterfactualTable& t, const GroupSpec& g,
                                            const Outcome& y_star, const OpportunitySet& S,
                                            std::size_t min_rows = 50) {
    detail::check_members(t, S);
    const auto gcols = detail::group_columns(t, g);
    const auto& ycol = detail::table_column(t, y_star.variable, World::counterfactual);
    std::vector<std::size_t> rows;
    bool nonempty = false;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (!detail::group_holds(t, gcols, g, r)) continue;
        nonempty = true;
        if (ycol[r] == y_star.value) rows.push_back(r);
    }
    if (!nonempty) throw std::invalid_argument("empty group '" + g.label() + "'");
    if (rows.size() < min_rows) throw InsufficientRows(rows.size(), min_rows);
    return detail::project_rows(t, S, World::counterfactual, rows);
}

// Factual covariate distribution among group members who received decision y.
inline EmpiricalSample group_realized_opportunity(const FactualTable& t, const GroupSpec& g,
                                                  const Outcome& y, const OpportunitySet& S) {
    if (S.members.empty()) throw std::invalid_argument("opportunity set must be nonempty");
    auto column = [&](const std::string& name) -> const std::vector<double>& {
        if (t.u.has(name)) return t.u.col(name);
        if (t.v.has(name)) return t.v.col(name);
        throw std::out_of_range("unknown variable '" + name + "' in factual table");
    };
    std::vector<const std::vector<double>*> gcols, scols;
    for (const auto& [var, val] : g.defining) gcols.push_back(&column(var));
    for (const auto& m : S.members) scols.push_back(&column(m));
    const auto& ycol = column(y.variable);

    EmpiricalSample s;
    s.dim = S.members.size();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        bool ok = ycol[r] == y.value;
        for (std::size_t k = 0; ok && k < gcols.size(); ++k)
            ok = (*gcols[k])[r] == g.defining[k].second;
        if (!ok) continue;
        for (const auto* c : scols) s.data.push_back((*c)[r]);
    }
    if (s.size() == 0)
        throw std::invalid_argument("empty selection: no rows with " + g.label() + " and " +
                                    y.variable + "=" + csv::format_double(y.value));
    return s;
}

// Reference distribution an individual's opportunity is compared against.
struct OpportunityBaseline {
    enum class Kind { population, recourse, same_covariates, other_group } kind = Kind::population;
    GroupSpec group;   // other_group only
    double tol = 0.0;  // same_covariates matching half-width

    static OpportunityBaseline population() { return {Kind::population, {}, 0.0}; }
    static OpportunityBaseline recourse() { return {Kind::recourse, {}, 0.0}; }
    static OpportunityBaseline same_covariates(double tol) {
        return {Kind::same_covariates, {}, tol};
    }
    static OpportunityBaseline other_group(GroupSpec g) {
        return {Kind::other_group, std::move(g), 0.0};
    }
};

// Tests one individual's opportunity against the chosen baseline with a
// permutation-calibrated threshold on the energy distance.
inline CriterionResult individual_equality_cf_opportunity(const CounterfactualTable& t,
                                                          std::int64_t id,
                                                          const OpportunitySet& S,
                                                          const OpportunityBaseline& baseline,
                                                          const Outcome& y_star,
                                                          const TestOptions& opt = {}) {
    auto mine = individual_cf_opportunity(t, id, y_star, S, opt.min_rows);

    const auto& ycol = detail::table_column(t, y_star.variable, World::counterfactual);
    std::vector<std::size_t> rows;
    switch (baseline.kind) {
        case OpportunityBaseline::Kind::population: {
            for (std::size_t r = 0; r < t.rows(); ++r)
                if (ycol[r] == y_star.value) rows.push_back(r);
            break;
        }
        case OpportunityBaseline::Kind::recourse: {
            // Compare against everyone who factually received this
            // individual's decision.
            const auto& fdec = detail::table_column(t, y_star.variable, World::factual);
            double own = 0.0;
            bool seen = false;
            for (std::size_t r = 0; r < t.rows() && !seen; ++r)
                if (t.ids[r] == id) {
                    own = fdec[r];
                    seen = true;
                }
            for (std::size_t r = 0; r < t.rows(); ++r)
                if (fdec[r] == own && ycol[r] == y_star.value) rows.push_back(r);
            break;
        }
        case OpportunityBaseline::Kind::same_covariates: {
            auto s = individual_realized_opportunity(t, id, S);
            std::vector<const std::vector<double>*> cols;
            for (const auto& m : S.members)
                cols.push_back(&detail::table_column(t, m, World::factual));
            for (std::size_t r = 0; r < t.rows(); ++r) {
                if (ycol[r] != y_star.value) continue;
                bool close = true;
                for (std::size_t k = 0; close && k < cols.size(); ++k)
                    close = std::abs((*cols[k])[r] - s[k]) <= baseline.tol;
                if (close) rows.push_back(r);
            }
            break;
        }
        case OpportunityBaseline::Kind::other_group: {
            const auto gcols = detail::group_columns(t, baseline.group);
            bool nonempty = false;
            for (std::size_t r = 0; r < t.rows(); ++r) {
                if (!detail::group_holds(t, gcols, baseline.group, r)) continue;
                nonempty = true;
                if (ycol[r] == y_star.value) rows.push_back(r);
            }
            if (!nonempty)
                throw std::invalid_argument("empty group '" + baseline.group.label() + "'");
            break;
        }
    }
    if (rows.size() < opt.min_rows) throw InsufficientRows(rows.size(), opt.min_rows);
    auto base = detail::project_rows(t, S, World::counterfactual, rows);

    auto a = subsample_rows(mine, opt.cap, derive_seed(opt.seed, 1));
    auto b = subsample_rows(base, opt.cap, derive_seed(opt.seed, 2));
    PooledEnergy pooled(a, b);

    CriterionResult res;
    res.subject = std::to_string(id);
    res.criterion = "individual_equality_cf_opportunity";
    res.y_star = y_star.value;
    res.statistic = pooled.observed();
    res.threshold = pooled.threshold(opt.n_perm, opt.alpha, derive_seed(opt.seed, 3));
    res.satisfied = res.statistic <= res.threshold;
    res.accepted_rows = mine.size();
    return res;
}

// Pairwise opportunity comparison across groups. Extra factual clauses
// narrow every group the same way (e.g., to those who received decision y).
// Groups whose conditionals run dry are skipped with a note rather than
// aborting the whole sweep.
inline std::vector<CriterionResult> group_equality_cf_opportunity(
    const CounterfactualTable& t, const OpportunitySet& S, const std::vector<GroupSpec>& groups,
    const Outcome& y_star, const TestOptions& opt = {}, const std::vector<Clause>& extra = {}) {
    if (groups.size() < 2) throw std::invalid_argument("need at least two groups");
    detail::check_members(t, S);
    const auto& ycol = detail::table_column(t, y_star.variable, World::counterfactual);

    struct Side {
        EmpiricalSample sample;
        std::size_t accepted = 0;
        std::string note;
    };
    std::vector<Side> sides(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto gcols = detail::group_columns(t, groups[gi]);
        std::vector<const std::vector<double>*> xcols;
        for (const auto& c : extra) xcols.push_back(&detail::table_column(t, c.variable, c.world));
        std::vector<std::size_t> rows;
        bool nonempty = false;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            if (!detail::group_holds(t, gcols, groups[gi], r)) continue;
            nonempty = true;
            bool ok = ycol[r] == y_star.value;
            for (std::size_t k = 0; ok && k < extra.size(); ++k)
                ok = detail::clause_holds((*xcols[k])[r], extra[k]);
            if (ok) rows.push_back(r);
        }
        if (!nonempty) throw std::invalid_argument("empty group '" + groups[gi].label() + "'");
        sides[gi].accepted = rows.size();
        if (rows.size() < opt.min_rows)
            sides[gi].note = "skipped '" + groups[gi].label() + "': " +
                             std::to_string(rows.size()) + " accepted rows, need " +
                             std::to_string(opt.min_rows);
        else
            sides[gi].sample = detail::project_rows(t, S, World::counterfactual, rows);
    }

    std::vector<CriterionResult> out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            // Canonical pair order keeps the result independent of the
            // order the caller listed the groups in.
            std::size_t lo = i, hi = j;
            if (groups[hi].label() < groups[lo].label()) std::swap(lo, hi);
            CriterionResult res;
            res.subject = groups[lo].label() + "|" + groups[hi].label();
            res.criterion = "group_equality_cf_opportunity";
            res.y_star = y_star.value;
            res.accepted_rows = std::min(sides[lo].accepted, sides[hi].accepted);
            if (!sides[lo].note.empty() || !sides[hi].note.empty()) {
                res.statistic = std::numeric_limits<double>::quiet_NaN();
                res.threshold = std::numeric_limits<double>::quiet_NaN();
                res.satisfied = false;
                res.note = sides[lo].note.empty() ? sides[hi].note : sides[lo].note;
                out.push_back(std::move(res));
                continue;
            }
            // One shared cap seed per pair keeps a self-comparison exactly
            // zero even when both sides exceed the cap.
            const std::uint64_t pair_seed =
                derive_seed(opt.seed, detail::fnv1a(res.subject));
            auto a = subsample_rows(sides[lo].sample, opt.cap, derive_seed(pair_seed, 1));
            auto b = subsample_rows(sides[hi].sample, opt.cap, derive_seed(pair_seed, 1));
            PooledEnergy pooled(a, b);
            res.statistic = pooled.observed();
            res.threshold = pooled.threshold(opt.n_perm, opt.alpha, derive_seed(pair_seed, 3));
            res.satisfied = res.statistic <= res.threshold;
            out.push_back(std::move(res));
        }
    }
    return out;
}

// Cost for one individual to reach the target outcome: distance from their
// realized covariates to their accepted counterfactual distribution. A
// target no draw reaches is reported as the infeasible value, not an error.
inline double individual_effort(const CounterfactualTable& t, std::int64_t id,
                                const Outcome& y_star, const OpportunitySet& S,
                                std::size_t min_rows = 50) {
    auto s = individual_realized_opportunity(t, id, S);
    try {
        auto opportunity = individual_cf_opportunity(t, id, y_star, S, min_rows);
        return point_cost(s, opportunity);
    } catch (const InsufficientRows& e) {
        if (e.survivors == 0) return kInfeasible;
        throw;
    }
}

namespace detail {

// Per-individual building blocks of a group's effort comparison: one
// realized covariate row per member plus their accepted counterfactual rows.
struct GroupEffortData {
    bool defined = false;
    std::string why;
    std::vector<std::vector<double>> realized;
    std::vector<std::vector<std::size_t>> cf_rows;
    std::size_t cf_total = 0;
};

inline GroupEffortData gather_group_effort(const CounterfactualTable& t, const GroupSpec& g,
                                           const Outcome& y, const Outcome& y_star,
                                           const OpportunitySet& S, std::size_t min_rows) {
    const auto gcols = group_columns(t, g);
    const auto& ycol_f = table_column(t, y.variable, World::factual);
    const auto& ycol_c = table_column(t, y_star.variable, World::counterfactual);
    std::vector<const std::vector<double>*> scols;
    for (const auto& m : S.members) scols.push_back(&table_column(t, m, World::factual));

    GroupEffortData out;
    std::unordered_map<std::int64_t, std::size_t> slot;
    bool group_nonempty = false;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (!group_holds(t, gcols, g, r)) continue;
        group_nonempty = true;
        if (ycol_f[r] != y.value) continue;
        auto [it, fresh] = slot.try_emplace(t.ids[r], out.realized.size());
        if (fresh) {
            std::vector<double> row;
            row.reserve(scols.size());
            for (const auto* c : scols) row.push_back((*c)[r]);
            out.realized.push_back(std::move(row));
            out.cf_rows.emplace_back();
        }
        if (ycol_c[r] == y_star.value) {
            out.cf_rows[it->second].push_back(r);
            ++out.cf_total;
        }
    }
    if (!group_nonempty) throw std::invalid_argument("empty group '" + g.label() + "'");
    if (out.realized.empty()) {
        out.why = "no factual rows with " + y.variable + "=" + csv::format_double(y.value);
        return out;
    }
    if (out.cf_total < min_rows) {
        out.why = std::to_string(out.cf_total) + " accepted rows, need " +
                  std::to_string(min_rows);
        return out;
    }
    out.defined = true;
    return out;
}

// Assembles the two sides for a multiset of member indices (with
// repetition, as the bootstrap resamples members).
inline double group_effort_statistic(const CounterfactualTable& t, const GroupEffortData& data,
                                     const OpportunitySet& S,
                                     const std::vector<std::size_t>& members, std::size_t cap,
                                     std::uint64_t seed) {
    EmpiricalSample realized;
    realized.dim = S.members.size();
    std::vector<std::size_t> rows;
    for (std::size_t m : members) {
        realized.data.insert(realized.data.end(), data.realized[m].begin(),
                             data.realized[m].end());
        rows.insert(rows.end(), data.cf_rows[m].begin(), data.cf_rows[m].end());
    }
    auto cf = project_rows(t, S, World::counterfactual, rows);
    auto a = subsample_rows(realized, cap, derive_seed(seed, 1));
    auto b = subsample_rows(cf, cap, derive_seed(seed, 2));
    return energy_mmd(a, b);
}

}  // namespace detail

// Group-level effort of the y -> y_star flip: distance between the factual
// covariates of members who received y and the accepted counterfactual
// covariates reaching y_star.
inline double group_effort_gce(const CounterfactualTable& t, const GroupSpec& g, const Outcome& y,
                               const Outcome& y_star, const OpportunitySet& S,
                               const TestOptions& opt = {}) {
    detail::check_members(t, S);
    auto data = detail::gather_group_effort(t, g, y, y_star, S, opt.min_rows);
    if (!data.defined) {
        if (data.realized.empty())
            throw std::invalid_argument("empty conditional for '" + g.label() + "': " + data.why);
        throw InsufficientRows(data.cf_total, opt.min_rows);
    }
    std::vector<std::size_t> all(data.realized.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return detail::group_effort_statistic(t, data, S, all, opt.cap, derive_seed(opt.seed, 17));
}

struct EffortBandOptions {
    std::size_t n_boot = 200;  // member-level bootstrap resamples
    double alpha = 0.05;
    std::uint64_t seed = 0;
    std::size_t cap = 1000;
    std::size_t min_rows = 50;
};

// Pairwise |GCE(g) - GCE(g')| with a bootstrap noise band: the pair is
// satisfied when the observed gap is within the resampling spread. A group
// whose flip is infeasible scores the infeasible value against any group
// with a defined effort, which always flags the pair.
inline std::vector<CriterionResult> group_equality_effort(const CounterfactualTable& t,
                                                          const std::vector<GroupSpec>& groups,
                                                          const Outcome& y, const Outcome& y_star,
                                                          const OpportunitySet& S,
                                                          const EffortBandOptions& opt = {}) {
    if (groups.size() < 2) throw std::invalid_argument("need at least two groups");
    detail::check_members(t, S);

    std::vector<detail::GroupEffortData> data;
    data.reserve(groups.size());
    for (const auto& g : groups)
        data.push_back(detail::gather_group_effort(t, g, y, y_star, S, opt.min_rows));

    auto identity = [](std::size_t n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        return idx;
    };

    std::vector<CriterionResult> out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            std::size_t lo = i, hi = j;
            if (groups[hi].label() < groups[lo].label()) std::swap(lo, hi);
            CriterionResult res;
            res.subject = groups[lo].label() + "|" + groups[hi].label();
            res.criterion = "group_equality_effort";
            res.y = y.value;
            res.y_star = y_star.value;
            res.accepted_rows = std::min(data[lo].cf_total, data[hi].cf_total);

            if (!data[lo].defined || !data[hi].defined) {
                const auto& bad = data[lo].defined ? data[hi] : data[lo];
                const auto& badg = data[lo].defined ? groups[hi] : groups[lo];
                if (!data[lo].defined && !data[hi].defined) {
                    res.statistic = std::numeric_limits<double>::quiet_NaN();
                    res.note = "both groups undefined: " + data[lo].why;
                } else {
                    res.statistic = kInfeasible;
                    res.note = "'" + badg.label() + "' undefined: " + bad.why;
                }
                res.threshold = 0.0;
                res.satisfied = false;
                out.push_back(std::move(res));
                continue;
            }

            const std::uint64_t pair_seed = derive_seed(opt.seed, detail::fnv1a(res.subject));
            // Shared cap seeds across the two sides make a self-comparison
            // cancel exactly.
            const double gce_lo = detail::group_effort_statistic(
                t, data[lo], S, identity(data[lo].realized.size()), opt.cap,
                derive_seed(pair_seed, 101));
            const double gce_hi = detail::group_effort_statistic(
                t, data[hi], S, identity(data[hi].realized.size()), opt.cap,
                derive_seed(pair_seed, 101));
            const double observed = gce_lo - gce_hi;
            res.statistic = std::abs(observed);

            std::vector<double> spread;
            spread.reserve(opt.n_boot);
            for (std::size_t b = 0; b < opt.n_boot; ++b) {
                Rng rng(derive_seed(pair_seed, 1000 + b));
                auto resample = [&](std::size_t n) {
                    std::vector<std::size_t> idx(n);
                    for (std::size_t k = 0; k < n; ++k) idx[k] = rng.below(n);
                    return idx;
                };
                auto mem_lo = resample(data[lo].realized.size());
                auto mem_hi = resample(data[hi].realized.size());
                const double d = detail::group_effort_statistic(t, data[lo], S, mem_lo, opt.cap,
                                                                derive_seed(pair_seed, b, 1)) -
                                 detail::group_effort_statistic(t, data[hi], S, mem_hi, opt.cap,
                                                                derive_seed(pair_seed, b, 1));
                spread.push_back(std::abs(d - observed));
            }
            std::sort(spread.begin(), spread.end());
            const std::size_t k = detail::quantile_rank(spread.size(), opt.alpha);
            res.threshold = spread[std::min(k, spread.size()) - 1];
            res.satisfied = res.statistic <= res.threshold;
            out.push_back(std::move(res));
        }
    }
    return out;
}

// Flags members of S that cannot move in the counterfactual world because
// every exogenous variable they depend on is keep-ruled.
inline std::vector<std::string> opportunity_warnings(const CausalModel& model,
                                                     const BacktrackingConditional& cond,
                                                     const OpportunitySet& S) {
    if (S.members.empty()) throw std::invalid_argument("opportunity set must be nonempty");
    std::unordered_map<std::string, bool> memo;
    auto frozen = [&](auto&& self, const std::string& name) -> bool {
        auto it = memo.find(name);
        if (it != memo.end()) return it->second;
        bool f = true;
        if (model.is_exogenous(name)) {
            std::size_t idx = 0;
            for (std::size_t i = 0; i < cond.names().size(); ++i)
                if (cond.names()[i] == name) idx = i;
            f = cond.rule(idx).kind == RuleKind::keep;
        } else {
            const auto& m = model.mechanism(name);
            if (!m.exo.empty()) f = self(self, m.exo);
            for (const auto& p : m.parents)
                if (f) f = self(self, p);
        }
        memo[name] = f;
        return f;
    };
    std::vector<std::string> out;
    for (const auto& m : S.members) {
        if (!model.has_variable(m))
            throw std::invalid_argument("opportunity member '" + m + "' not in model");
        if (frozen(frozen, m))
            out.push_back("member '" + m +
                          "' cannot vary counterfactually: all of its noise is keep-ruled");
    }
    return out;
}

// `subject, criterion, y, y_star, statistic, threshold, satisfied, accepted_rows`
inline void write_criteria_csv(const std::vector<CriterionResult>& results,
                               const std::string& path) {
    csv::Writer w(path);
    w.row({"subject", "criterion", "y", "y_star", "statistic", "threshold", "satisfied",
           "accepted_rows"});
    auto field = [](double v) { return std::isnan(v) ? std::string{} : csv::format_double(v); };
    for (const auto& r : results)
        w.row({r.subject, r.criterion, field(r.y), field(r.y_star), field(r.statistic),
               field(r.threshold), r.satisfied ? "true" : "false",
               std::to_string(r.accepted_rows)});
}

}  // namespace backtrack
