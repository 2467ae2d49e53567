#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "backtrack/backtracking.hpp"
#include "backtrack/criteria.hpp"
#include "backtrack/csv.hpp"
#include "backtrack/divergence.hpp"
#include "backtrack/model.hpp"
#include "backtrack/parallel.hpp"
#include "backtrack/parser.hpp"
#include "backtrack/predictors.hpp"
#include "backtrack/rng.hpp"
#include "backtrack/scenarios.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

// --- configuration -----------------------------------------------------------

// One model under audit: either fitted to the run's dataset or the builtin
// decision node the dataset was generated with.
struct PredictorSpec {
    std::string name;
    std::string kind = "ols";  // ols | logistic | random | constant | icf_fair | builtin
    std::string target = "y";
    std::vector<std::string> covariates;
    double value = 0.0;        // constant kind
    bool has_binarize = true;  // score kinds binarize into the decision
    bool median_cut = true;    // false: fixed cutoff below
    double cutoff = 0.0;
};

struct NamedSet {
    std::string name;
    OpportunitySet set;
};

struct AuditConfig {
    std::vector<std::string> scenarios;  // generated-data route
    std::string data;                    // observed-data route: CSV path
    LawMapping mapping;
    std::size_t sample = 0;  // optional record subsample (observed route)

    std::vector<PredictorSpec> predictors;
    std::string decision = "yhat";
    std::vector<std::string> immutable;           // keep-ruled exogenous variables
    std::vector<std::pair<std::string, BacktrackRule>> rules;  // per-variable overrides
    std::vector<GroupSpec> groups;
    std::vector<NamedSet> opportunity_sets;
    std::vector<std::string> criteria;

    std::size_t n = 500;
    std::size_t n_star = 1000;
    std::size_t repetitions = 1;
    std::uint64_t seed = 0;
    double alpha = 0.05;
    std::size_t mmd_cap = 2000;
    std::size_t min_rows = 50;
    std::size_t n_perm = 200;
    std::size_t n_boot = 200;
    std::string out;
};

inline const std::vector<std::string>& known_criteria() {
    static const std::vector<std::string> names = {
        "individual_opportunity", "group_opportunity", "individual_effort",
        "group_effort",           "effort_comparison",
    };
    return names;
}

namespace detail {

[[noreturn]] inline void config_error(const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
}

inline GroupSpec group_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.empty()) config_error("each group must be a nonempty object");
    GroupSpec g;
    for (const auto& [key, val] : j.items()) {
        if (!val.is_number()) config_error("group value for '" + key + "' must be numeric");
        g.defining.emplace_back(key, val.get<double>());
    }
    return g;
}

inline nlohmann::json group_to_json(const GroupSpec& g) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [var, val] : g.defining) j[var] = val;
    return j;
}

inline BacktrackRule rule_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j == "keep") return BacktrackRule::keep();
        if (j == "resample") return BacktrackRule::resample();
        config_error("unknown rule '" + j.get<std::string>() + "'");
    }
    if (j.is_object() && j.contains("kernel")) return BacktrackRule::kernel(j.at("kernel"));
    if (j.is_object() && j.contains("pin")) return BacktrackRule::pin(j.at("pin"));
    config_error("rules must be \"keep\", \"resample\", {\"kernel\": bw} or {\"pin\": v}");
}

inline nlohmann::json rule_to_json(const BacktrackRule& r) {
    switch (r.kind) {
        case RuleKind::keep: return "keep";
        case RuleKind::resample_prior: return "resample";
        case RuleKind::gaussian_kernel: return {{"kernel", r.param}};
        case RuleKind::pin: return {{"pin", r.param}};
    }
    return "keep";
}

inline nlohmann::json mapping_to_json(const LawMapping& m) {
    return {{"columns",
             {{"race", m.race_col},
              {"sex", m.sex_col},
              {"lsat", m.lsat_col},
              {"ugpa", m.ugpa_col},
              {"outcome", m.outcome_col}}},
            {"majority_race", m.majority_race},
            {"sex_reference", m.sex_reference},
            {"strict", m.strict}};
}

inline PredictorSpec predictor_spec_from_json(const nlohmann::json& j) {
    PredictorSpec p;
    p.name = j.value("name", std::string{});
    p.kind = j.value("kind", std::string("ols"));
    static const std::vector<std::string> kinds = {"ols",      "logistic", "random",
                                                   "constant", "icf_fair", "builtin"};
    if (std::find(kinds.begin(), kinds.end(), p.kind) == kinds.end())
        config_error("unknown predictor kind '" + p.kind + "'");
    p.target = j.value("target", std::string("y"));
    p.covariates = j.value("covariates", std::vector<std::string>{});
    p.value = j.value("value", 0.0);
    if (p.name.empty()) config_error("every predictor needs a name");

    const bool scores = p.kind == "ols" || p.kind == "logistic" || p.kind == "icf_fair";
    if (j.contains("binarize") && !j.at("binarize").is_null()) {
        if (!scores) config_error("predictor '" + p.name + "': binarize applies to score kinds only");
        const auto& b = j.at("binarize");
        if (b.is_string() && b == "median") {
            p.median_cut = true;
        } else if (b.is_number()) {
            p.median_cut = false;
            p.cutoff = b.get<double>();
        } else {
            config_error("predictor '" + p.name + "': binarize must be \"median\" or a number");
        }
    } else if (j.contains("binarize") && !scores) {
        p.has_binarize = false;
    } else {
        p.has_binarize = scores;  // score kinds default to the median cut
    }
    if (scores && !p.has_binarize)
        config_error("predictor '" + p.name + "': score kinds need a binarize rule");
    return p;
}

inline nlohmann::json predictor_spec_to_json(const PredictorSpec& p) {
    nlohmann::json j = {{"name", p.name}, {"kind", p.kind}};
    if (p.kind == "ols" || p.kind == "logistic") {
        j["target"] = p.target;
        j["covariates"] = p.covariates;
    }
    if (p.kind == "constant") j["value"] = p.value;
    if (!p.has_binarize)
        j["binarize"] = nullptr;
    else if (p.median_cut)
        j["binarize"] = "median";
    else
        j["binarize"] = p.cutoff;
    return j;
}

// Route-dependent defaults for fields the config leaves out. Mixed scenario
// kinds have no common variable space, so defaults refuse to guess.
struct RouteDefaults {
    std::vector<PredictorSpec> predictors;
    std::vector<std::string> immutable;
    std::vector<GroupSpec> groups;
    std::vector<NamedSet> sets;
};

inline PredictorSpec ols_spec(std::string name, std::vector<std::string> covs, double cutoff) {
    PredictorSpec p;
    p.name = std::move(name);
    p.covariates = std::move(covs);
    p.median_cut = false;
    p.cutoff = cutoff;
    return p;
}

inline RouteDefaults route_defaults(const AuditConfig& cfg) {
    RouteDefaults d;
    if (!cfg.data.empty()) {
        PredictorSpec rnd;
        rnd.name = "random";
        rnd.kind = "random";
        rnd.has_binarize = false;
        PredictorSpec full;
        full.name = "full";
        full.kind = "logistic";
        full.covariates = {"r", "x", "l", "g"};
        PredictorSpec unaware;
        unaware.name = "unaware";
        unaware.kind = "logistic";
        unaware.covariates = {"l", "g"};
        PredictorSpec icf;
        icf.name = "icf_fair";
        icf.kind = "icf_fair";
        d.predictors = {rnd, full, unaware, icf};
        d.immutable = {"u_r", "u_s"};
        d.groups = {GroupSpec{{{"r", 0.0}}}, GroupSpec{{{"r", 1.0}}}};
        d.sets = {{"latents", OpportunitySet{{"u_l", "u_g"}}},
                  {"score_latents", OpportunitySet{{"l", "u_l", "u_g"}}}};
        return d;
    }
    bool hiring = true, toy = true;
    for (const auto& s : cfg.scenarios) {
        hiring = hiring && (s == "balanced" || s == "unbalanced");
        toy = toy && s == "example1";
    }
    if (hiring) {
        d.predictors = {ols_spec("x1", {"x1"}, 0.0),
                        ols_spec("x2", {"x2"}, 0.0),
                        ols_spec("x1_x2", {"x1", "x2"}, 0.0),
                        ols_spec("x1_x2_zap", {"x1", "x2", "zap"}, 0.0),
                        ols_spec("za", {"za"}, 0.0),
                        ols_spec("full", {"x1", "x2", "za", "zap"}, 0.0)};
        PredictorSpec rnd;
        rnd.name = "random";
        rnd.kind = "random";
        rnd.has_binarize = false;
        d.predictors.push_back(rnd);
        d.immutable = {"u_a", "u_za"};
        d.groups = {GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};
        d.sets = {{"quals", OpportunitySet{{"x1", "x2", "zap"}}}};
        return d;
    }
    if (toy) {
        PredictorSpec own;
        own.name = "model";
        own.kind = "builtin";
        own.has_binarize = false;
        d.predictors = {own};
        d.immutable = {"u_a"};
        d.groups = {GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};
        d.sets = {{"score", OpportunitySet{{"x"}}}};
        return d;
    }
    config_error("no defaults for mixed scenario kinds; set predictors, immutable, groups and "
                 "opportunity_sets explicitly");
}

}  // namespace detail

inline AuditConfig audit_config_from_json(const nlohmann::json& j) {
    AuditConfig cfg;
    if (j.contains("scenarios")) cfg.scenarios = j.at("scenarios").get<std::vector<std::string>>();
    if (j.contains("data")) cfg.data = j.at("data").get<std::string>();
    const bool generated = !cfg.scenarios.empty(), observed = !cfg.data.empty();
    if (generated == observed)
        detail::config_error("exactly one of \"scenarios\" and \"data\" must be set");
    if (observed) {
        if (j.contains("mapping")) cfg.mapping = LawMapping::from_json(j.at("mapping"));
        cfg.sample = j.value("sample", std::size_t(0));
    }
    if (!j.contains("seed")) detail::config_error("seed is required");
    cfg.seed = j.at("seed").get<std::uint64_t>();

    cfg.decision = j.value("decision", std::string("yhat"));
    cfg.n = j.value("n", cfg.n);
    cfg.n_star = j.value("n_star", cfg.n_star);
    cfg.repetitions = j.value("repetitions", cfg.repetitions);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.mmd_cap = j.value("mmd_cap", cfg.mmd_cap);
    cfg.min_rows = j.value("min_rows", cfg.min_rows);
    cfg.n_perm = j.value("n_perm", cfg.n_perm);
    cfg.n_boot = j.value("n_boot", cfg.n_boot);
    cfg.out = j.value("out", std::string{});
    if (cfg.n < 1 || cfg.n_star < 1 || cfg.repetitions < 1)
        detail::config_error("n, n_star and repetitions must be at least 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) detail::config_error("alpha must lie in (0,1)");
    if (cfg.n_perm < 100) detail::config_error("n_perm must be at least 100");
    if (cfg.min_rows < 1) detail::config_error("min_rows must be at least 1");

    const auto defaults = detail::route_defaults(cfg);
    if (j.contains("predictors")) {
        for (const auto& pj : j.at("predictors"))
            cfg.predictors.push_back(detail::predictor_spec_from_json(pj));
    } else {
        cfg.predictors = defaults.predictors;
    }
    if (cfg.predictors.empty()) detail::config_error("predictor list is empty");
    for (std::size_t i = 0; i < cfg.predictors.size(); ++i)
        for (std::size_t k = i + 1; k < cfg.predictors.size(); ++k)
            if (cfg.predictors[i].name == cfg.predictors[k].name)
                detail::config_error("duplicate predictor name '" + cfg.predictors[i].name + "'");

    cfg.immutable = j.contains("immutable") ? j.at("immutable").get<std::vector<std::string>>()
                                            : defaults.immutable;
    if (j.contains("rules"))
        for (const auto& [var, rj] : j.at("rules").items())
            cfg.rules.emplace_back(var, detail::rule_from_json(rj));

    if (j.contains("groups")) {
        for (const auto& gj : j.at("groups")) cfg.groups.push_back(detail::group_from_json(gj));
    } else {
        cfg.groups = defaults.groups;
    }
    if (cfg.groups.size() < 2) detail::config_error("need at least two groups");

    if (j.contains("opportunity_sets")) {
        for (const auto& sj : j.at("opportunity_sets")) {
            NamedSet s;
            s.set.members = sj.at("members").get<std::vector<std::string>>();
            std::string joined;
            for (const auto& m : s.set.members) joined += (joined.empty() ? "" : "+") + m;
            s.name = sj.value("name", joined);
            cfg.opportunity_sets.push_back(std::move(s));
        }
    } else {
        cfg.opportunity_sets = defaults.sets;
    }
    if (cfg.opportunity_sets.empty()) detail::config_error("opportunity set list is empty");
    for (std::size_t i = 0; i < cfg.opportunity_sets.size(); ++i)
        for (std::size_t k = i + 1; k < cfg.opportunity_sets.size(); ++k)
            if (cfg.opportunity_sets[i].name == cfg.opportunity_sets[k].name)
                detail::config_error("duplicate opportunity set name '" +
                                     cfg.opportunity_sets[i].name + "'");

    cfg.criteria = j.contains("criteria") ? j.at("criteria").get<std::vector<std::string>>()
                                          : known_criteria();
    if (cfg.criteria.empty()) detail::config_error("criteria list is empty");
    for (const auto& c : cfg.criteria)
        if (std::find(known_criteria().begin(), known_criteria().end(), c) ==
            known_criteria().end())
            detail::config_error("unknown criterion '" + c + "'");
    return cfg;
}

inline nlohmann::json audit_config_to_json(const AuditConfig& cfg) {
    nlohmann::json j;
    if (!cfg.data.empty()) {
        j["data"] = cfg.data;
        j["mapping"] = detail::mapping_to_json(cfg.mapping);
        if (cfg.sample > 0) j["sample"] = cfg.sample;
    } else {
        j["scenarios"] = cfg.scenarios;
    }
    j["seed"] = cfg.seed;
    j["decision"] = cfg.decision;
    j["n"] = cfg.n;
    j["n_star"] = cfg.n_star;
    j["repetitions"] = cfg.repetitions;
    j["alpha"] = cfg.alpha;
    j["mmd_cap"] = cfg.mmd_cap;
    j["min_rows"] = cfg.min_rows;
    j["n_perm"] = cfg.n_perm;
    j["n_boot"] = cfg.n_boot;
    if (!cfg.out.empty()) j["out"] = cfg.out;

    j["predictors"] = nlohmann::json::array();
    for (const auto& p : cfg.predictors) j["predictors"].push_back(detail::predictor_spec_to_json(p));
    j["immutable"] = cfg.immutable;
    if (!cfg.rules.empty()) {
        nlohmann::json rj = nlohmann::json::object();
        for (const auto& [var, rule] : cfg.rules) rj[var] = detail::rule_to_json(rule);
        j["rules"] = rj;
    }
    j["groups"] = nlohmann::json::array();
    for (const auto& g : cfg.groups) j["groups"].push_back(detail::group_to_json(g));
    j["opportunity_sets"] = nlohmann::json::array();
    for (const auto& s : cfg.opportunity_sets)
        j["opportunity_sets"].push_back({{"name", s.name}, {"members", s.set.members}});
    j["criteria"] = cfg.criteria;
    return j;
}

inline AuditConfig load_audit_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
    return audit_config_from_json(j);
}

// --- factual-table plumbing ---------------------------------------------------

// Extends a factual table to a spliced model: recorded noise is kept, new
// slots draw from their priors on per-individual streams, and endogenous
// values are recomputed through the (unchanged) mechanisms.
inline FactualTable extend_factual(const CausalModel& model, const FactualTable& base,
                                   std::uint64_t seed) {
    const std::size_t nu = model.n_exo();
    std::vector<std::ptrdiff_t> src(nu, -1);
    for (std::size_t i = 0; i < nu; ++i)
        if (base.u.has(model.exo_names()[i]))
            src[i] = static_cast<std::ptrdiff_t>(base.u.index_of(model.exo_names()[i]));

    FactualTable out;
    out.ids = base.ids;
    out.u = ColumnTable(model.exo_names());
    out.v = ColumnTable(model.endo_names());
    out.u.reserve_rows(base.rows());
    out.v.reserve_rows(base.rows());
    std::vector<double> u, v;
    for (std::size_t r = 0; r < base.rows(); ++r) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(base.ids[r])));
        model.generate(
            [&](std::size_t i, std::span<const double> us, std::span<const double> vs) {
                return src[i] >= 0 ? base.u.cols[src[i]][r] : model.draw_noise(i, rng, us, vs);
            },
            u, v);
        for (std::size_t i = 0; i < nu; ++i) out.u.cols[i].push_back(u[i]);
        for (std::size_t k = 0; k < model.n_endo(); ++k) out.v.cols[k].push_back(v[k]);
    }
    return out;
}

// Flat CSV `id, <exogenous...>, <endogenous...>`.
inline void write_factual_csv(const FactualTable& t, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header = {"id"};
    for (const auto& n : t.u.names) header.push_back(n);
    for (const auto& n : t.v.names) header.push_back(n);
    w.row(header);
    std::vector<std::string> fields(header.size());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        std::size_t k = 0;
        fields[k++] = std::to_string(t.ids[r]);
        for (const auto& c : t.u.cols) fields[k++] = csv::format_double(c[r]);
        for (const auto& c : t.v.cols) fields[k++] = csv::format_double(c[r]);
        w.row(fields);
    }
}

// --- batched per-individual evaluation ----------------------------------------

struct BatchTestOptions {
    double alpha = 0.05;
    std::size_t n_perm = 200;
    std::uint64_t seed = 0;
    std::size_t cap = 2000;
    std::size_t min_rows = 50;
    std::size_t threads = 0;  // 0: environment cap
};

namespace detail {

struct IdBlock {
    std::int64_t id = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

// Sampler output keeps each individual's rows contiguous; the evaluators
// rely on that to avoid per-individual scans of the whole table.
inline std::vector<IdBlock> id_blocks(const CounterfactualTable& t) {
    std::vector<IdBlock> out;
    std::unordered_map<std::int64_t, bool> seen;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        if (out.empty() || out.back().id != t.ids[r]) {
            if (auto [it, fresh] = seen.try_emplace(t.ids[r], true); !fresh)
                throw std::invalid_argument("table rows are not grouped by individual");
            out.push_back({t.ids[r], r, r + 1});
        } else {
            ++out.back().end;
        }
    }
    return out;
}

}  // namespace detail

// Tests every individual's counterfactual opportunity against the pooled
// conditional of the opposite group, for both decision values. One capped
// baseline per (group, outcome) is shared across individuals, so each test
// costs one pooled distance table over the individual's rows plus the cap.
inline std::vector<CriterionResult> audit_individual_opportunity(
    const CounterfactualTable& t, const OpportunitySet& S, const std::vector<GroupSpec>& groups,
    const std::string& decision, const BatchTestOptions& opt = {}) {
    if (groups.size() != 2)
        throw std::invalid_argument("individual opportunity audit needs exactly two groups");
    detail::check_members(t, S);
    const auto& dec_star = detail::table_column(t, decision, World::counterfactual);
    const auto& dec_fact = detail::table_column(t, decision, World::factual);
    const auto blocks = detail::id_blocks(t);

    std::array<std::vector<const std::vector<double>*>, 2> gcols = {
        detail::group_columns(t, groups[0]), detail::group_columns(t, groups[1])};

    // Pooled opposite-group baselines, subsampled once per (group, outcome).
    std::array<std::array<EmpiricalSample, 2>, 2> baseline;
    for (std::size_t gi = 0; gi < 2; ++gi) {
        for (int y = 0; y < 2; ++y) {
            std::vector<std::size_t> rows;
            for (std::size_t r = 0; r < t.rows(); ++r)
                if (dec_star[r] == double(y) && detail::group_holds(t, gcols[gi], groups[gi], r))
                    rows.push_back(r);
            if (rows.empty()) continue;
            auto sample = detail::project_rows(t, S, World::counterfactual, rows);
            baseline[gi][y] = subsample_rows(
                sample, opt.cap,
                derive_seed(opt.seed, detail::fnv1a("baseline:" + groups[gi].label()),
                            static_cast<std::uint64_t>(y)));
        }
    }

    std::vector<CriterionResult> out(blocks.size() * 2);
    parallel_for(out.size(), [&](std::size_t slot) {
        const auto& blk = blocks[slot / 2];
        const int y_star = static_cast<int>(slot % 2);
        const std::uint64_t uid = static_cast<std::uint64_t>(blk.id);

        CriterionResult res;
        res.subject = std::to_string(blk.id);
        res.criterion = "individual_opportunity";
        res.y = dec_fact[blk.begin];
        res.y_star = double(y_star);

        const bool in0 = detail::group_holds(t, gcols[0], groups[0], blk.begin);
        const bool in1 = detail::group_holds(t, gcols[1], groups[1], blk.begin);
        std::vector<std::size_t> rows;
        for (std::size_t r = blk.begin; r < blk.end; ++r)
            if (dec_star[r] == double(y_star)) rows.push_back(r);
        res.accepted_rows = rows.size();

        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (in0 == in1) {
            res.statistic = res.threshold = nan;
            res.note = in0 ? "skipped: individual matches both groups"
                           : "skipped: individual matches no group";
        } else if (rows.size() < opt.min_rows) {
            res.statistic = res.threshold = nan;
            res.note = "skipped: " + std::to_string(rows.size()) + " accepted rows, need " +
                       std::to_string(opt.min_rows);
        } else {
            const std::size_t other = in0 ? 1 : 0;
            const auto& base = baseline[other][y_star];
            if (base.size() == 0) {
                res.statistic = res.threshold = nan;
                res.note = "skipped: empty baseline for '" + groups[other].label() + "'";
            } else {
                auto mine = detail::project_rows(t, S, World::counterfactual, rows);
                mine = subsample_rows(mine, opt.cap,
                                      derive_seed(opt.seed, detail::fnv1a("individual-cap"),
                                                  uid * 2 + std::uint64_t(y_star)));
                PooledEnergy pooled(mine, base);
                res.statistic = pooled.observed();
                res.threshold =
                    pooled.threshold(opt.n_perm, opt.alpha,
                                     derive_seed(opt.seed, detail::fnv1a("perm"),
                                                 uid * 2 + std::uint64_t(y_star)));
                res.satisfied = res.statistic <= res.threshold;
            }
        }
        out[slot] = std::move(res);
    }, opt.threads);
    return out;
}

// Per-individual cost of flipping their own decision: distance from the
// realized covariates to the accepted counterfactual conditional. Unreachable
// flips carry the infeasible value; thin conditionals are skipped with a note.
inline std::vector<CriterionResult> audit_individual_effort(const CounterfactualTable& t,
                                                            const OpportunitySet& S,
                                                            const std::string& decision,
                                                            std::size_t min_rows = 50,
                                                            std::size_t threads = 0) {
    detail::check_members(t, S);
    const auto& dec_star = detail::table_column(t, decision, World::counterfactual);
    const auto& dec_fact = detail::table_column(t, decision, World::factual);
    std::vector<const std::vector<double>*> scols;
    for (const auto& m : S.members) scols.push_back(&detail::table_column(t, m, World::factual));
    const auto blocks = detail::id_blocks(t);

    std::vector<CriterionResult> out(blocks.size());
    parallel_for(out.size(), [&](std::size_t b) {
        const auto& blk = blocks[b];
        CriterionResult res;
        res.subject = std::to_string(blk.id);
        res.criterion = "individual_effort";
        res.y = dec_fact[blk.begin];
        res.y_star = 1.0 - res.y;
        res.threshold = std::numeric_limits<double>::quiet_NaN();

        std::vector<std::size_t> rows;
        for (std::size_t r = blk.begin; r < blk.end; ++r)
            if (dec_star[r] == res.y_star) rows.push_back(r);
        res.accepted_rows = rows.size();

        if (rows.empty()) {
            res.statistic = kInfeasible;
            res.note = "infeasible: no accepted rows";
        } else if (rows.size() < min_rows) {
            res.statistic = std::numeric_limits<double>::quiet_NaN();
            res.note = "skipped: " + std::to_string(rows.size()) + " accepted rows, need " +
                       std::to_string(min_rows);
        } else {
            std::vector<double> realized;
            realized.reserve(scols.size());
            for (const auto* c : scols) realized.push_back((*c)[blk.begin]);
            res.statistic = point_cost(realized, detail::project_rows(t, S, World::counterfactual, rows));
            res.satisfied = true;
        }
        out[b] = std::move(res);
    }, threads);
    return out;
}

// --- report ---------------------------------------------------------------------

struct AuditRow {
    std::string scenario;
    std::string predictor;
    std::size_t rep = 0;
    std::string opportunity_set;
    CriterionResult result;
};

struct PassRate {
    std::string scenario, predictor, criterion, opportunity_set;
    std::size_t rows = 0, satisfied = 0, skipped = 0;
};

struct AuditReport {
    nlohmann::json config_echo;
    std::vector<AuditRow> individual_rows;
    std::vector<AuditRow> group_rows;
    std::vector<PassRate> pass_rates;
    std::vector<std::string> warnings;
    nlohmann::json fitted = nlohmann::json::array();
    std::map<std::string, double> runtimes_ms;
};

namespace detail {

inline bool row_skipped(const CriterionResult& r) {
    return std::isnan(r.statistic) && !r.note.empty();
}

inline std::vector<PassRate> tally_pass_rates(const AuditReport& rep) {
    std::map<std::tuple<std::string, std::string, std::string, std::string>, PassRate> acc;
    auto add = [&](const AuditRow& row) {
        auto key = std::make_tuple(row.scenario, row.predictor, row.result.criterion,
                                   row.opportunity_set);
        auto& p = acc[key];
        p.scenario = row.scenario;
        p.predictor = row.predictor;
        p.criterion = row.result.criterion;
        p.opportunity_set = row.opportunity_set;
        ++p.rows;
        if (row_skipped(row.result))
            ++p.skipped;
        else if (row.result.satisfied)
            ++p.satisfied;
    };
    for (const auto& r : rep.individual_rows) add(r);
    for (const auto& r : rep.group_rows) add(r);
    std::vector<PassRate> out;
    out.reserve(acc.size());
    for (auto& [key, p] : acc) out.push_back(std::move(p));
    return out;
}

inline nlohmann::json pass_rates_to_json(const std::vector<PassRate>& rates) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : rates) {
        nlohmann::json j = {{"scenario", p.scenario},
                            {"predictor", p.predictor},
                            {"criterion", p.criterion},
                            {"opportunity_set", p.opportunity_set},
                            {"rows", p.rows},
                            {"satisfied", p.satisfied},
                            {"skipped", p.skipped}};
        const std::size_t tested = p.rows - p.skipped;
        if (tested > 0)
            j["pass_rate"] = double(p.satisfied) / double(tested);
        else
            j["pass_rate"] = nullptr;
        arr.push_back(std::move(j));
    }
    return arr;
}

inline std::string stat_field(double v) {
    if (std::isnan(v)) return {};
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return csv::format_double(v);
}

inline void write_audit_rows(const std::vector<AuditRow>& rows, const std::string& subject_name,
                             const std::string& path) {
    csv::Writer w(path);
    w.row({"scenario", "predictor", "rep", "opportunity_set", subject_name, "criterion", "y",
           "y_star", "statistic", "threshold", "satisfied", "accepted_rows", "note"});
    for (const auto& r : rows)
        w.row({r.scenario, r.predictor, std::to_string(r.rep), r.opportunity_set,
               r.result.subject, r.result.criterion, stat_field(r.result.y),
               stat_field(r.result.y_star), stat_field(r.result.statistic),
               stat_field(r.result.threshold), r.result.satisfied ? "true" : "false",
               std::to_string(r.result.accepted_rows), r.result.note});
}

// min, lower quartile, median, upper quartile, max with linear interpolation.
inline std::array<double, 5> box_quantiles(std::vector<double> vals) {
    std::sort(vals.begin(), vals.end());
    auto q = [&](double p) {
        const double x = p * double(vals.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(x);
        const double frac = x - double(lo);
        return lo + 1 < vals.size() ? vals[lo] * (1.0 - frac) + vals[lo + 1] * frac : vals[lo];
    };
    return {vals.front(), q(0.25), q(0.5), q(0.75), vals.back()};
}

struct BoxAccum {
    std::vector<double> finite;
    std::size_t skipped = 0, infeasible = 0;
};

inline void write_box_csv(const std::map<std::vector<std::string>, BoxAccum>& groups,
                          const std::vector<std::string>& key_names, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> header = key_names;
    for (const char* c : {"count", "skipped", "infeasible", "min", "q1", "median", "q3", "max"})
        header.push_back(c);
    w.row(header);
    for (const auto& [key, acc] : groups) {
        std::vector<std::string> fields = key;
        fields.push_back(std::to_string(acc.finite.size()));
        fields.push_back(std::to_string(acc.skipped));
        fields.push_back(std::to_string(acc.infeasible));
        if (acc.finite.empty()) {
            for (int i = 0; i < 5; ++i) fields.emplace_back();
        } else {
            for (double v : box_quantiles(acc.finite)) fields.push_back(csv::format_double(v));
        }
        w.row(fields);
    }
}

}  // namespace detail

inline void write_audit_outputs(const AuditReport& rep, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "plots");
    detail::write_audit_rows(rep.individual_rows, "id", (fs::path(out_dir) / "individual.csv").string());
    detail::write_audit_rows(rep.group_rows, "subject", (fs::path(out_dir) / "group.csv").string());

    // Plot data is box-plot ready: per-model boxes of the per-individual
    // statistics, and per-group boxes across repetitions.
    std::map<std::vector<std::string>, detail::BoxAccum> opp, eff, gce;
    for (const auto& r : rep.individual_rows) {
        auto* acc = r.result.criterion == "individual_opportunity"
                        ? &opp[{r.scenario, r.predictor, r.opportunity_set,
                                detail::stat_field(r.result.y_star)}]
                    : r.result.criterion == "individual_effort"
                        ? &eff[{r.scenario, r.predictor, r.opportunity_set,
                                detail::stat_field(r.result.y)}]
                        : nullptr;
        if (!acc) continue;
        if (detail::row_skipped(r.result))
            ++acc->skipped;
        else if (std::isinf(r.result.statistic))
            ++acc->infeasible;
        else
            acc->finite.push_back(r.result.statistic);
    }
    for (const auto& r : rep.group_rows) {
        if (r.result.criterion != "group_effort") continue;
        auto& acc = gce[{r.scenario, r.predictor, r.opportunity_set, r.result.subject,
                         detail::stat_field(r.result.y), detail::stat_field(r.result.y_star)}];
        if (detail::row_skipped(r.result))
            ++acc.skipped;
        else if (std::isinf(r.result.statistic))
            ++acc.infeasible;
        else
            acc.finite.push_back(r.result.statistic);
    }
    const auto plots = std::filesystem::path(out_dir) / "plots";
    detail::write_box_csv(opp, {"scenario", "predictor", "opportunity_set", "y_star"},
                          (plots / "opportunity_box.csv").string());
    detail::write_box_csv(eff, {"scenario", "predictor", "opportunity_set", "y"},
                          (plots / "effort_box.csv").string());
    detail::write_box_csv(gce, {"scenario", "predictor", "opportunity_set", "group", "y", "y_star"},
                          (plots / "group_effort_box.csv").string());

    nlohmann::json summary = {
        {"config", rep.config_echo},
        {"pass_rates", detail::pass_rates_to_json(rep.pass_rates)},
        {"rows", {{"individual", rep.individual_rows.size()}, {"group", rep.group_rows.size()}}},
        {"fitted", rep.fitted},
        {"warnings", rep.warnings},
        {"runtimes_ms", rep.runtimes_ms},
    };
    std::ofstream out(std::filesystem::path(out_dir) / "summary.json");
    out << summary.dump(2) << "\n";
}

// --- pipeline ------------------------------------------------------------------

namespace detail {

template <typename F>
auto run_stage(const char* name, std::map<std::string, double>& times, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto done = [&] {
        times[name] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                 t0)
                           .count();
    };
    try {
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            done();
        } else {
            auto r = f();
            done();
            return r;
        }
    } catch (const std::exception& e) {
        const std::string prefix = std::string(name) + ": ";
        const std::string what = e.what();
        throw std::runtime_error(what.rfind(prefix, 0) == 0 ? what : prefix + what);
    }
}

struct ResolvedUnit {
    std::string scenario;
    CausalModel model;
    FactualTable factual;
    ColumnTable fit_data;
};

// Fitting view over a factual table: endogenous columns plus the recorded
// noise, so predictors may train on residual-style covariates too.
inline ColumnTable fitting_view(const FactualTable& f) {
    ColumnTable t(f.v.names);
    t.cols = f.v.cols;
    for (std::size_t i = 0; i < f.u.names.size(); ++i) t.add_col(f.u.names[i], f.u.cols[i]);
    return t;
}

inline void validate_config_against_model(const AuditConfig& cfg, const CausalModel& model,
                                          const ColumnTable& fit_data) {
    if (model.is_exogenous(cfg.decision))
        config_error("decision '" + cfg.decision + "' names an exogenous variable");
    for (const auto& p : cfg.predictors) {
        if (p.kind == "builtin") {
            if (!model.is_endogenous(cfg.decision))
                config_error("predictor '" + p.name + "': model has no builtin '" + cfg.decision +
                             "'");
            continue;
        }
        if (p.kind == "random" || p.kind == "constant") continue;
        if (p.kind == "icf_fair") {
            for (const char* c : {"r", "x", "l", "g", "y"})
                if (!fit_data.has(c))
                    config_error("predictor '" + p.name + "': fitting data lacks column '" +
                                 std::string(c) + "'");
            continue;
        }
        if (!fit_data.has(p.target))
            config_error("predictor '" + p.name + "': unknown target '" + p.target + "'");
        for (const auto& c : p.covariates)
            if (!fit_data.has(c) && !model.has_variable(c))
                config_error("predictor '" + p.name + "': unknown covariate '" + c + "'");
        if (p.covariates.empty())
            config_error("predictor '" + p.name + "': covariate list is empty");
    }
    for (const auto& name : cfg.immutable)
        if (!model.is_exogenous(name))
            config_error("immutable entry '" + name + "' is not an exogenous variable");
    for (const auto& [name, rule] : cfg.rules)
        if (!model.is_exogenous(name))
            config_error("rules entry '" + name + "' is not an exogenous variable");
    for (const auto& g : cfg.groups)
        for (const auto& [var, val] : g.defining)
            if (!model.has_variable(var)) config_error("group variable '" + var + "' not in model");
    for (const auto& s : cfg.opportunity_sets) {
        if (s.set.members.empty()) config_error("opportunity set '" + s.name + "' is empty");
        for (const auto& m : s.set.members)
            if (!model.has_variable(m))
                config_error("opportunity member '" + m + "' not in model");
    }
    if (std::find(cfg.criteria.begin(), cfg.criteria.end(), "individual_opportunity") !=
            cfg.criteria.end() &&
        cfg.groups.size() != 2)
        config_error("individual_opportunity needs exactly two groups");
}

// Fitted decision model for one spec; median cuts resolve to a concrete
// threshold on the fitting data's scores.
inline Predictor fit_spec(const PredictorSpec& ps, const ColumnTable& data, std::uint64_t seed) {
    Predictor p;
    if (ps.kind == "random") {
        p = make_random(seed);
    } else if (ps.kind == "constant") {
        p = make_constant(ps.value);
    } else if (ps.kind == "icf_fair") {
        p = make_icf_fair(data).first;
    } else if (ps.kind == "logistic") {
        p = fit_logistic(data, ps.target, ps.covariates).first;
    } else {
        p = fit_ols(data, ps.target, ps.covariates).first;
    }
    if (ps.has_binarize)
        p.binarize = BinarizeSpec::at(ps.median_cut ? median_cutoff(predictor_scores(p, data))
                                                    : ps.cutoff);
    return p;
}

inline BacktrackingConditional build_conditional(const CausalModel& spliced,
                                                 const AuditConfig& cfg) {
    // Everything resamples from the prior except the configured immutables;
    // spliced predictor slots stay mutable so the decision re-randomizes.
    BacktrackingConditional cond(spliced, BacktrackRule::resample());
    for (const auto& name : cfg.immutable) cond.set_rule(name, BacktrackRule::keep());
    for (const auto& [name, rule] : cfg.rules) cond.set_rule(name, rule);
    return cond;
}

}  // namespace detail

inline AuditReport run_audit(const AuditConfig& cfg) {
    AuditReport rep;
    rep.config_echo = audit_config_to_json(cfg);
    auto& times = rep.runtimes_ms;

    // Observed-data route: load and fit once, shared by every repetition.
    std::optional<detail::ResolvedUnit> observed;
    if (!cfg.data.empty()) {
        observed = detail::run_stage("generate", times, [&] {
            auto records = load_law_school(cfg.data, cfg.mapping);
            if (cfg.sample > 0)
                records = subsample(records, cfg.sample,
                                    derive_seed(cfg.seed, detail::fnv1a("sample")));
            auto fit = fit_law_school_scm(records, cfg.mapping);
            detail::ResolvedUnit unit;
            unit.scenario = std::filesystem::path(cfg.data).stem().string();
            if (unit.scenario.empty()) unit.scenario = "data";
            unit.fit_data = detail::fitting_view(fit.factual);
            // The outcome node only feeds data generation; the audited
            // decision replaces it, so sampling drops the sink.
            unit.model = drop_endogenous(fit.model, "y");
            unit.factual = std::move(fit.factual);
            return unit;
        });
    }

    std::vector<std::string> scenario_list =
        observed ? std::vector<std::string>{observed->scenario} : cfg.scenarios;

    for (const auto& scenario : scenario_list) {
        for (std::size_t rep_i = 0; rep_i < cfg.repetitions; ++rep_i) {
            detail::ResolvedUnit unit;
            if (observed) {
                unit = *observed;  // factual data fixed; repetitions reseed sampling
            } else {
                unit = detail::run_stage("generate", times, [&] {
                    auto sd = generate({scenario, cfg.n,
                                        derive_seed(cfg.seed, detail::fnv1a("dataset:" + scenario),
                                                    rep_i)});
                    detail::ResolvedUnit u;
                    u.scenario = scenario;
                    u.fit_data = detail::fitting_view(sd.factual);
                    u.model = std::move(sd.model);
                    u.factual = std::move(sd.factual);
                    return u;
                });
            }
            if (rep_i == 0)
                detail::run_stage("config", times, [&] {
                    detail::validate_config_against_model(cfg, unit.model, unit.fit_data);
                });

            for (const auto& ps : cfg.predictors) {
                const bool builtin = ps.kind == "builtin";
                Predictor pred;
                if (!builtin) {
                    pred = detail::run_stage("fit", times, [&] {
                        return detail::fit_spec(ps, unit.fit_data,
                                                derive_seed(cfg.seed,
                                                            detail::fnv1a("fit:" + ps.name),
                                                            rep_i));
                    });
                    rep.fitted.push_back({{"scenario", unit.scenario},
                                          {"rep", rep_i},
                                          {"predictor", ps.name},
                                          {"model", predictor_to_json(pred)}});
                }

                CounterfactualTable table;
                CausalModel spliced = unit.model;
                BacktrackingConditional cond(spliced, BacktrackRule::keep());
                detail::run_stage("sample", times, [&] {
                    if (!builtin) spliced = splice(unit.model, pred, cfg.decision);
                    FactualTable extended =
                        builtin ? unit.factual
                                : extend_factual(spliced, unit.factual,
                                                 derive_seed(cfg.seed,
                                                             detail::fnv1a("extend:" + ps.name),
                                                             rep_i));
                    for (double v : extended.v.col(cfg.decision))
                        if (v != 0.0 && v != 1.0)
                            throw std::invalid_argument("decision '" + cfg.decision +
                                                        "' is not binary in the factual data");
                    cond = detail::build_conditional(spliced, cfg);
                    table = sample_joint(
                        spliced, cond, extended, cfg.n_star,
                        derive_seed(cfg.seed,
                                    detail::fnv1a("table:" + unit.scenario + ":" + ps.name),
                                    rep_i));
                });

                detail::run_stage("criteria", times, [&] {
                    for (const auto& ns : cfg.opportunity_sets) {
                        if (rep_i == 0) {
                            for (auto& wmsg : opportunity_warnings(spliced, cond, ns.set))
                                rep.warnings.push_back(unit.scenario + "/" + ps.name + "/" +
                                                       ns.name + ": " + wmsg);
                        }
                        auto push = [&](std::vector<AuditRow>& dst, CriterionResult&& r,
                                        const char* criterion) {
                            r.criterion = criterion;
                            dst.push_back({unit.scenario, ps.name, rep_i, ns.name, std::move(r)});
                        };
                        const std::uint64_t key = derive_seed(
                            cfg.seed,
                            detail::fnv1a(unit.scenario + ":" + ps.name + ":" + ns.name), rep_i);
                        for (const auto& crit : cfg.criteria) {
                            if (crit == "individual_opportunity") {
                                BatchTestOptions opt;
                                opt.alpha = cfg.alpha;
                                opt.n_perm = cfg.n_perm;
                                opt.cap = cfg.mmd_cap;
                                opt.min_rows = cfg.min_rows;
                                opt.seed = derive_seed(key, detail::fnv1a(crit));
                                for (auto& r : audit_individual_opportunity(
                                         table, ns.set, cfg.groups, cfg.decision, opt))
                                    push(rep.individual_rows, std::move(r),
                                         "individual_opportunity");
                            } else if (crit == "individual_effort") {
                                for (auto& r : audit_individual_effort(table, ns.set, cfg.decision,
                                                                       cfg.min_rows))
                                    push(rep.individual_rows, std::move(r), "individual_effort");
                            } else if (crit == "group_opportunity") {
                                TestOptions opt;
                                opt.alpha = cfg.alpha;
                                opt.n_perm = cfg.n_perm;
                                opt.cap = cfg.mmd_cap;
                                opt.min_rows = cfg.min_rows;
                                for (int y = 0; y < 2; ++y) {
                                    opt.seed = derive_seed(key, detail::fnv1a(crit),
                                                           std::uint64_t(y));
                                    for (auto& r : group_equality_cf_opportunity(
                                             table, ns.set, cfg.groups,
                                             {cfg.decision, double(y)}, opt))
                                        push(rep.group_rows, std::move(r), "group_opportunity");
                                }
                            } else if (crit == "group_effort") {
                                TestOptions opt;
                                opt.cap = cfg.mmd_cap;
                                opt.min_rows = cfg.min_rows;
                                for (const auto& g : cfg.groups) {
                                    for (int y = 0; y < 2; ++y) {
                                        const Outcome from{cfg.decision, double(y)};
                                        const Outcome to{cfg.decision, 1.0 - double(y)};
                                        opt.seed = derive_seed(
                                            key, detail::fnv1a(crit + (":" + g.label())),
                                            std::uint64_t(y));
                                        CriterionResult r;
                                        r.subject = g.label();
                                        r.y = from.value;
                                        r.y_star = to.value;
                                        r.threshold = std::numeric_limits<double>::quiet_NaN();
                                        try {
                                            r.statistic =
                                                group_effort_gce(table, g, from, to, ns.set, opt);
                                            r.satisfied = std::isfinite(r.statistic);
                                            r.accepted_rows =
                                                detail::gather_group_effort(table, g, from, to,
                                                                            ns.set, 0)
                                                    .cf_total;
                                        } catch (const InsufficientRows& e) {
                                            r.accepted_rows = e.survivors;
                                            if (e.survivors == 0) {
                                                r.statistic = kInfeasible;
                                                r.note = "infeasible: no accepted rows";
                                            } else {
                                                r.statistic =
                                                    std::numeric_limits<double>::quiet_NaN();
                                                r.note = "skipped: " + std::string(e.what());
                                            }
                                        } catch (const std::invalid_argument& e) {
                                            r.statistic = std::numeric_limits<double>::quiet_NaN();
                                            r.note = std::string("skipped: ") + e.what();
                                        }
                                        push(rep.group_rows, std::move(r), "group_effort");
                                    }
                                }
                            } else if (crit == "effort_comparison") {
                                EffortBandOptions opt;
                                opt.n_boot = cfg.n_boot;
                                opt.alpha = cfg.alpha;
                                opt.cap = cfg.mmd_cap;
                                opt.min_rows = cfg.min_rows;
                                for (int y = 0; y < 2; ++y) {
                                    opt.seed = derive_seed(key, detail::fnv1a(crit),
                                                           std::uint64_t(y));
                                    for (auto& r : group_equality_effort(
                                             table, cfg.groups, {cfg.decision, double(y)},
                                             {cfg.decision, 1.0 - double(y)}, ns.set, opt))
                                        push(rep.group_rows, std::move(r), "effort_comparison");
                                }
                            }
                        }
                    }
                });
            }
        }
    }

    rep.pass_rates = detail::tally_pass_rates(rep);
    if (!cfg.out.empty())
        detail::run_stage("write", times, [&] { write_audit_outputs(rep, cfg.out); });
    return rep;
}

// --- console report ------------------------------------------------------------

inline nlohmann::json load_audit_summary(const std::string& dir) {
    const auto path = std::filesystem::path(dir) / "summary.json";
    if (!std::filesystem::exists(path))
        throw std::runtime_error("missing report: no summary.json under '" + dir + "'");
    std::ifstream in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

// Pass-rate table with violations flagged; rows sorted for stable output.
inline std::string audit_report_table(const nlohmann::json& summary) {
    struct Line {
        std::string scenario, predictor, criterion, set, rows, rate, flag;
    };
    std::vector<Line> lines;
    std::size_t violations = 0;
    for (const auto& p : summary.at("pass_rates")) {
        Line l;
        l.scenario = p.at("scenario");
        l.predictor = p.at("predictor");
        l.criterion = p.at("criterion");
        l.set = p.at("opportunity_set");
        const std::size_t rows = p.at("rows").get<std::size_t>();
        const std::size_t skipped = p.at("skipped").get<std::size_t>();
        l.rows = std::to_string(rows - skipped) + "/" + std::to_string(rows);
        if (p.at("pass_rate").is_null()) {
            l.rate = "-";
        } else {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.3f", p.at("pass_rate").get<double>());
            l.rate = buf;
            if (p.at("pass_rate").get<double>() < 1.0) {
                l.flag = "violations";
                ++violations;
            }
        }
        lines.push_back(std::move(l));
    }
    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
        return std::tie(a.scenario, a.predictor, a.criterion, a.set) <
               std::tie(b.scenario, b.predictor, b.criterion, b.set);
    });

    std::array<std::size_t, 6> width = {8, 9, 9, 3, 6, 4};
    auto grow = [&](const Line& l) {
        width[0] = std::max(width[0], l.scenario.size());
        width[1] = std::max(width[1], l.predictor.size());
        width[2] = std::max(width[2], l.criterion.size());
        width[3] = std::max(width[3], l.set.size());
        width[4] = std::max(width[4], l.rows.size());
        width[5] = std::max(width[5], l.rate.size());
    };
    const Line header{"scenario", "predictor", "criterion", "set", "tested", "rate", ""};
    grow(header);
    for (const auto& l : lines) grow(l);

    std::string out;
    auto emit = [&](const Line& l) {
        auto pad = [](const std::string& s, std::size_t w) {
            return s + std::string(w - s.size(), ' ');
        };
        out += pad(l.scenario, width[0] + 2) + pad(l.predictor, width[1] + 2) +
               pad(l.criterion, width[2] + 2) + pad(l.set, width[3] + 2) +
               pad(l.rows, width[4] + 2) + pad(l.rate, width[5]) +
               (l.flag.empty() ? "" : "  " + l.flag) + "\n";
    };
    emit(header);
    for (const auto& l : lines) emit(l);
    out += std::to_string(violations) + " of " + std::to_string(lines.size()) +
           " criterion groups show violations\n";
    return out;
}

}  // namespace backtrack
