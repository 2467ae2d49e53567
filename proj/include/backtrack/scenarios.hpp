#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "backtrack/csv.hpp"
#include "backtrack/model.hpp"
#include "backtrack/parser.hpp"
#include "backtrack/predictors.hpp"
#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

// Binary trait plus a score; the decision is their disjunction with a
// degenerate noise slot so cross-world rules can address it.
inline const char* example1_description() {
    return R"(# trait/score toy decision model
exo u_a ~ bernoulli(0.5)
exo u_x ~ normal(0, 1)
exo u_yhat ~ point(0)
endo a = linear(0) + u_a
endo x = linear(0) + u_x
endo yhat = or(a, x) + u_yhat
)";
}

// Hiring model where skill is balanced across the two groups: group affects
// the outcome only through the dependence-carrying za channel.
inline const char* balanced_hiring_description() {
    return R"(# balanced hiring model
exo u_a ~ bernoulli(0.5)
exo u_za ~ normal(0.5*a, 1)
exo u_zap ~ normal(0, 1)
exo u_x1 ~ normal(0, 1)
exo u_x2 ~ normal(0, 1)
exo u_y ~ normal(0, 1)
endo a = linear(0) + u_a
endo za = linear(0) + u_za
endo zap = linear(0) + u_zap
endo x1 = linear(zap) + u_x1
endo x2 = linear(3*zap) + u_x2
endo y = linear(x1 + x2 + 2*za + zap - 1) + u_y
)";
}

// Variant where x1 also loads the group-linked za, unbalancing the groups.
inline const char* unbalanced_hiring_description() {
    return R"(# unbalanced hiring model
exo u_a ~ bernoulli(0.5)
exo u_za ~ normal(0.5*a, 1)
exo u_zap ~ normal(0, 1)
exo u_x1 ~ normal(0, 1)
exo u_x2 ~ normal(0, 1)
exo u_y ~ normal(0, 1)
endo a = linear(0) + u_a
endo za = linear(0) + u_za
endo zap = linear(0) + u_zap
endo x1 = linear(2*za + zap) + u_x1
endo x2 = linear(3*zap) + u_x2
endo y = linear(x1 + x2 + 2*za + zap - 2) + u_y
)";
}

struct ScenarioConfig {
    std::string name;  // example1 | balanced | unbalanced
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

struct ScenarioData {
    CausalModel model;
    FactualTable factual;
};

inline ScenarioData generate(const ScenarioConfig& cfg) {
    if (cfg.n < 1) throw std::invalid_argument("scenario size must be at least 1");
    const char* text = nullptr;
    if (cfg.name == "example1")
        text = example1_description();
    else if (cfg.name == "balanced")
        text = balanced_hiring_description();
    else if (cfg.name == "unbalanced")
        text = unbalanced_hiring_description();
    else
        throw std::invalid_argument("unknown scenario '" + cfg.name + "'");
    ScenarioData out{parse_and_build(text), {}};
    out.factual = out.model.generate_table(cfg.n, cfg.seed);
    return out;
}

// --- law-school data ---------------------------------------------------------

struct LawSchoolRecord {
    std::string race;
    std::string sex;
    double lsat = 0.0;
    double ugpa = 0.0;
    double outcome = 0.0;
};

struct LawMapping {
    std::string race_col = "race";
    std::string sex_col = "sex";
    std::string lsat_col = "lsat";
    std::string ugpa_col = "ugpa";
    std::string outcome_col = "fya";
    std::string majority_race;  // category mapped to r=1
    std::string sex_reference;  // category mapped to x=1
    bool strict = true;         // false skips malformed rows instead of failing

    static LawMapping from_json(const nlohmann::json& j) {
        LawMapping m;
        if (j.contains("columns")) {
            const auto& c = j.at("columns");
            m.race_col = c.value("race", m.race_col);
            m.sex_col = c.value("sex", m.sex_col);
            m.lsat_col = c.value("lsat", m.lsat_col);
            m.ugpa_col = c.value("ugpa", m.ugpa_col);
            m.outcome_col = c.value("outcome", m.outcome_col);
        }
        m.majority_race = j.value("majority_race", std::string{});
        m.sex_reference = j.value("sex_reference", std::string{});
        m.strict = j.value("strict", true);
        return m;
    }
};

namespace detail {

inline double parse_numeric(const std::string& s, std::size_t line_no, const std::string& col) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("line " + std::to_string(line_no) + ": column '" + col +
                                    "' has non-numeric value '" + s + "'");
    }
}

}  // namespace detail

// Reads the raw survey CSV. Malformed rows either abort (strict) or are
// skipped with their messages appended to row_errors.
inline std::vector<LawSchoolRecord> load_law_school(const std::string& path, const LawMapping& map,
                                                    std::vector<std::string>* row_errors = nullptr) {
    auto doc = csv::read_file(path);
    auto col_index = [&](const std::string& name) {
        for (std::size_t c = 0; c < doc.header.size(); ++c)
            if (doc.header[c] == name) return c;
        throw std::invalid_argument(path + ": missing column '" + name + "'");
    };
    const std::size_t ri = col_index(map.race_col), si = col_index(map.sex_col),
                      li = col_index(map.lsat_col), gi = col_index(map.ugpa_col),
                      oi = col_index(map.outcome_col);
    std::vector<LawSchoolRecord> out;
    out.reserve(doc.rows.size());
    for (std::size_t r = 0; r < doc.rows.size(); ++r) {
        const std::size_t line_no = r + 2;  // header is line 1
        try {
            const auto& row = doc.rows[r];
            if (row.size() != doc.header.size())
                throw std::invalid_argument("line " + std::to_string(line_no) + ": ragged row");
            LawSchoolRecord rec;
            rec.race = row[ri];
            rec.sex = row[si];
            if (rec.race.empty() || rec.sex.empty())
                throw std::invalid_argument("line " + std::to_string(line_no) +
                                            ": empty category field");
            rec.lsat = detail::parse_numeric(row[li], line_no, map.lsat_col);
            rec.ugpa = detail::parse_numeric(row[gi], line_no, map.ugpa_col);
            rec.outcome = detail::parse_numeric(row[oi], line_no, map.outcome_col);
            out.push_back(std::move(rec));
        } catch (const std::invalid_argument& e) {
            if (map.strict || !row_errors) throw;
            row_errors->push_back(e.what());
        }
    }
    return out;
}

// Applies the majority/reference binarization, yielding the numeric columns
// the fitters consume: r, x, l, g and the raw outcome o.
inline ColumnTable law_records_to_table(const std::vector<LawSchoolRecord>& records,
                                        const LawMapping& map) {
    ColumnTable t({"r", "x", "l", "g", "o"});
    for (auto& c : t.cols) c.reserve(records.size());
    for (const auto& rec : records) {
        t.cols[0].push_back(rec.race == map.majority_race ? 1.0 : 0.0);
        t.cols[1].push_back(rec.sex == map.sex_reference ? 1.0 : 0.0);
        t.cols[2].push_back(rec.lsat);
        t.cols[3].push_back(rec.ugpa);
        t.cols[4].push_back(rec.outcome);
    }
    return t;
}

// Seeded subsample without replacement; the full set passes through as-is.
inline std::vector<LawSchoolRecord> subsample(const std::vector<LawSchoolRecord>& records,
                                              std::size_t n, std::uint64_t seed) {
    if (n > records.size())
        throw std::invalid_argument("subsample of " + std::to_string(n) + " from " +
                                    std::to_string(records.size()) + " records");
    if (n == records.size()) return records;
    std::vector<std::size_t> idx(records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    std::vector<LawSchoolRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.below(idx.size() - i);
        std::swap(idx[i], idx[j]);
        out.push_back(records[idx[i]]);
    }
    return out;
}

struct LawSchoolFit {
    CausalModel model;
    FactualTable factual;  // u: u_r, u_s, u_l, u_g (residuals); v: r, x, l, g, y
    FitReport l_report, g_report, y_report;
    double outcome_median = 0.0;
};

// Fits the two-root SCM: scores regress linearly on (r, x) with normal
// residual noise, and the binarized outcome gets a logistic link on (r, x).
// The factual table carries the abduced residual noise so cross-world
// sampling can run directly on real records.
inline LawSchoolFit fit_law_school_scm(const std::vector<LawSchoolRecord>& records,
                                       const LawMapping& map) {
    if (records.size() < 100)
        throw std::invalid_argument("need at least 100 records to fit the law-school model");
    ColumnTable data = law_records_to_table(records, map);
    const std::size_t n = data.rows();

    auto [lfit, lrep] = fit_ols(data, "l", {"r", "x"});
    auto [gfit, grep] = fit_ols(data, "g", {"r", "x"});

    const double med = median_cutoff(data.col("o"));
    ColumnTable with_y = data;
    with_y.add_col("y", binarize(data.col("o"), BinarizeSpec::at(med)));
    auto [yfit, yrep] = fit_logistic(with_y, "y", {"r", "x"});

    double r_rate = 0.0, x_rate = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r_rate += data.col("r")[i];
        x_rate += data.col("x")[i];
    }
    r_rate /= double(n);
    x_rate /= double(n);

    ModelSpec spec;
    spec.exo(ModelSpec::bernoulli("u_r", r_rate));
    spec.exo(ModelSpec::bernoulli("u_s", x_rate));
    spec.exo(ModelSpec::normal("u_l", 0.0, std::sqrt(lrep.residual_variance)));
    spec.exo(ModelSpec::normal("u_g", 0.0, std::sqrt(grep.residual_variance)));
    spec.exo(ModelSpec::uniform01("u_y"));
    spec.endo(ModelSpec::linear("r", {}, {}, 0.0, "u_r"));
    spec.endo(ModelSpec::linear("x", {}, {}, 0.0, "u_s"));
    spec.endo(ModelSpec::linear("l", {"r", "x"}, lfit.weights, lfit.intercept, "u_l"));
    spec.endo(ModelSpec::linear("g", {"r", "x"}, gfit.weights, gfit.intercept, "u_g"));
    spec.endo(ModelSpec::bernexpit("y", {"r", "x"}, yfit.weights, yfit.intercept, "u_y"));

    LawSchoolFit out{build_model(spec), {}, lrep, grep, yrep, med};

    auto lhat = predictor_scores(lfit, data);
    auto ghat = predictor_scores(gfit, data);
    out.factual.u = ColumnTable({"u_r", "u_s", "u_l", "u_g"});
    out.factual.v = ColumnTable({"r", "x", "l", "g", "y"});
    out.factual.ids.reserve(n);
    for (auto& c : out.factual.u.cols) c.reserve(n);
    for (auto& c : out.factual.v.cols) c.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.factual.ids.push_back(static_cast<std::int64_t>(i));
        out.factual.u.cols[0].push_back(data.col("r")[i]);
        out.factual.u.cols[1].push_back(data.col("x")[i]);
        out.factual.u.cols[2].push_back(data.col("l")[i] - lhat[i]);
        out.factual.u.cols[3].push_back(data.col("g")[i] - ghat[i]);
        out.factual.v.cols[0].push_back(data.col("r")[i]);
        out.factual.v.cols[1].push_back(data.col("x")[i]);
        out.factual.v.cols[2].push_back(data.col("l")[i]);
        out.factual.v.cols[3].push_back(data.col("g")[i]);
        out.factual.v.cols[4].push_back(with_y.col("y")[i]);
    }
    return out;
}

// Synthetic survey-shaped fixture drawn from a known linear-Gaussian model,
// so fits can be checked against the generating coefficients. Categories and
// scales imitate the real data (majority race "white", sex coded 1/2).
struct SyntheticLawTruth {
    double l_r = 4.6, l_x = 0.3, l_const = 30.8, l_sd = 4.2;
    double g_r = 0.35, g_x = 0.02, g_const = 2.9, g_sd = 0.42;
    double o_r = 0.9, o_x = 0.1, o_const = -0.4, o_sd = 1.0;
    double p_majority = 0.82, p_sex_ref = 0.44;
};

inline std::vector<LawSchoolRecord> synthetic_law_records(std::size_t n, std::uint64_t seed,
                                                          const SyntheticLawTruth& truth = {}) {
    std::vector<LawSchoolRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        const double r = rng.bernoulli(truth.p_majority);
        const double x = rng.bernoulli(truth.p_sex_ref);
        LawSchoolRecord rec;
        rec.race = r > 0.5 ? "white" : "nonwhite";
        rec.sex = x > 0.5 ? "2" : "1";
        rec.lsat = rng.normal(truth.l_const + truth.l_r * r + truth.l_x * x, truth.l_sd);
        rec.ugpa = rng.normal(truth.g_const + truth.g_r * r + truth.g_x * x, truth.g_sd);
        rec.outcome = rng.normal(truth.o_const + truth.o_r * r + truth.o_x * x, truth.o_sd);
        out.push_back(std::move(rec));
    }
    return out;
}

inline LawMapping synthetic_law_mapping() {
    LawMapping m;
    m.majority_race = "white";
    m.sex_reference = "2";
    return m;
}

inline void write_law_csv(const std::vector<LawSchoolRecord>& records, const LawMapping& map,
                          const std::string& path) {
    csv::Writer w(path);
    w.row({map.race_col, map.sex_col, map.lsat_col, map.ugpa_col, map.outcome_col});
    for (const auto& rec : records)
        w.row({rec.race, rec.sex, csv::format_double(rec.lsat), csv::format_double(rec.ugpa),
               csv::format_double(rec.outcome)});
}

}  // namespace backtrack
