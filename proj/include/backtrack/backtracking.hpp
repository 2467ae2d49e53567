#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "backtrack/csv.hpp"
#include "backtrack/divergence.hpp"
#include "backtrack/model.hpp"
#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

// Thrown when conditioning leaves fewer than min_rows survivors; callers
// should raise n_star or relax the predicate.
struct InsufficientRows : std::runtime_error {
    std::size_t survivors;
    std::size_t wanted;
    InsufficientRows(std::size_t got, std::size_t want)
        : std::runtime_error("conditioning kept " + std::to_string(got) + " rows, need " +
                             std::to_string(want) + "; raise n_star or relax the predicate"),
          survivors(got),
          wanted(want) {}
};

enum class RuleKind { keep, resample_prior, gaussian_kernel, pin };

struct BacktrackRule {
    RuleKind kind = RuleKind::keep;
    double param = 0.0;  // kernel bandwidth or pinned value

    static BacktrackRule keep() { return {RuleKind::keep, 0.0}; }
    static BacktrackRule resample() { return {RuleKind::resample_prior, 0.0}; }
    static BacktrackRule kernel(double bandwidth) {
        if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel bandwidth must be > 0");
        return {RuleKind::gaussian_kernel, bandwidth};
    }
    static BacktrackRule pin(double value) { return {RuleKind::pin, value}; }
};

// Per-exogenous-variable sampling rules defining the cross-world
// conditional: keep reproduces the factual draw, resample draws afresh from
// the prior, kernel jitters around the factual value, pin fixes a constant.
class BacktrackingConditional {
public:
    BacktrackingConditional(const CausalModel& model, BacktrackRule default_rule)
        : names_(model.exo_names()), rules_(model.n_exo(), default_rule) {}

    void set_rule(const std::string& exo, BacktrackRule rule) {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == exo) {
                rules_[i] = rule;
                return;
            }
        }
        throw std::invalid_argument("unknown exogenous variable '" + exo + "'");
    }

    const BacktrackRule& rule(std::size_t exo_idx) const { return rules_[exo_idx]; }
    const std::vector<std::string>& names() const { return names_; }

    std::vector<std::string> mutable_names() const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < rules_.size(); ++i)
            if (rules_[i].kind != RuleKind::keep) out.push_back(names_[i]);
        return out;
    }

    std::uint64_t hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < names_.size(); ++i) {
            h = detail::fnv1a(names_[i], h);
            h = detail::fnv1a(std::to_string(static_cast<int>(rules_[i].kind)) + ":" +
                                  std::to_string(rules_[i].param), h);
        }
        return h;
    }

private:
    std::vector<std::string> names_;
    std::vector<BacktrackRule> rules_;
};

// Resample-prior for the mutable set, keep for everything else.
inline BacktrackingConditional noninformative(const CausalModel& model,
                                              const std::vector<std::string>& mutable_vars) {
    BacktrackingConditional cond(model, BacktrackRule::keep());
    for (const auto& name : mutable_vars) {
        if (!model.is_exogenous(name))
            throw std::invalid_argument("mutable set names unknown exogenous variable '" + name + "'");
        cond.set_rule(name, BacktrackRule::resample());
    }
    return cond;
}

// Empirical joint over (U, V, U*, V*); each factual individual contributes
// n_star counterfactual rows.
struct CounterfactualTable {
    std::vector<std::int64_t> ids;
    ColumnTable u, v, u_star, v_star;

    struct Meta {
        std::uint64_t model_hash = 0;
        std::uint64_t conditional_hash = 0;
        std::uint64_t seed = 0;
        std::size_t n = 0;
        std::size_t n_star = 0;
        double acceptance_rate = 1.0;
    } meta;

    std::size_t rows() const { return ids.size(); }
};

enum class World { factual, counterfactual };

struct Clause {
    std::string variable;
    World world = World::counterfactual;
    enum Cmp { eq, gt, le } cmp = eq;
    double value = 0.0;
};

struct Predicate {
    std::vector<Clause> clauses;

    Predicate& where(std::string var, World w, Clause::Cmp cmp, double value) {
        clauses.push_back({std::move(var), w, cmp, value});
        return *this;
    }
};

namespace detail {

inline const std::vector<double>& table_column(const CounterfactualTable& t, const std::string& var,
                                               World w) {
    const ColumnTable& exo = w == World::factual ? t.u : t.u_star;
    const ColumnTable& endo = w == World::factual ? t.v : t.v_star;
    if (exo.has(var)) return exo.col(var);
    if (endo.has(var)) return endo.col(var);
    throw std::out_of_range("unknown variable '" + var + "' in counterfactual table");
}

inline bool clause_holds(double x, const Clause& c) {
    switch (c.cmp) {
        case Clause::eq: return x == c.value;
        case Clause::gt: return x > c.value;
        case Clause::le: return x <= c.value;
    }
    return false;
}

}  // namespace detail

// Cross-world sampler: for each factual row, draws n_star counterfactual
// worlds by sampling U* per rule and pushing it through the unchanged
// mechanisms. Individual i uses the stream derived from (seed, id_i), so
// output is identical under any parallel chunking.
inline CounterfactualTable sample_joint(const CausalModel& model,
                                        const BacktrackingConditional& cond,
                                        const FactualTable& factual, std::size_t n_star,
                                        std::uint64_t seed) {
    if (n_star < 1) throw std::invalid_argument("n_star must be at least 1");
    const std::size_t nu = model.n_exo();
    const std::size_t nv = model.n_endo();
    std::vector<std::size_t> ucol(nu), vcol(nv);
    for (std::size_t i = 0; i < nu; ++i) {
        if (!factual.u.has(model.exo_names()[i]))
            throw std::invalid_argument("factual table is missing exogenous column '" +
                                        model.exo_names()[i] + "'");
        ucol[i] = factual.u.index_of(model.exo_names()[i]);
    }
    for (std::size_t j = 0; j < nv; ++j) {
        if (!factual.v.has(model.endo_names()[j]))
            throw std::invalid_argument("factual table is missing column '" +
                                        model.endo_names()[j] + "'");
        vcol[j] = factual.v.index_of(model.endo_names()[j]);
    }

    CounterfactualTable out;
    out.u = ColumnTable(model.exo_names());
    out.v = ColumnTable(model.endo_names());
    out.u_star = ColumnTable(model.exo_names());
    out.v_star = ColumnTable(model.endo_names());
    const std::size_t total = factual.rows() * n_star;
    out.ids.reserve(total);
    out.u.reserve_rows(total);
    out.v.reserve_rows(total);
    out.u_star.reserve_rows(total);
    out.v_star.reserve_rows(total);

    std::vector<double> ufact(nu), vfact(nv), ustar, vstar;
    for (std::size_t r = 0; r < factual.rows(); ++r) {
        for (std::size_t i = 0; i < nu; ++i) ufact[i] = factual.u.cols[ucol[i]][r];
        for (std::size_t j = 0; j < nv; ++j) vfact[j] = factual.v.cols[vcol[j]][r];
        const std::int64_t id = factual.ids[r];
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(id)));
        for (std::size_t k = 0; k < n_star; ++k) {
            model.generate(
                [&](std::size_t i, std::span<const double> us, std::span<const double> vs) {
                    const auto& rule = cond.rule(i);
                    switch (rule.kind) {
                        case RuleKind::keep: return ufact[i];
                        case RuleKind::pin: return rule.param;
                        case RuleKind::gaussian_kernel: return rng.normal(ufact[i], rule.param);
                        case RuleKind::resample_prior: return model.draw_noise(i, rng, us, vs);
                    }
                    return 0.0;
                },
                ustar, vstar);
            out.ids.push_back(id);
            for (std::size_t i = 0; i < nu; ++i) {
                out.u.cols[i].push_back(ufact[i]);
                out.u_star.cols[i].push_back(ustar[i]);
            }
            for (std::size_t j = 0; j < nv; ++j) {
                out.v.cols[j].push_back(vfact[j]);
                out.v_star.cols[j].push_back(vstar[j]);
            }
        }
    }
    out.meta.model_hash = model.structural_hash();
    out.meta.conditional_hash = cond.hash();
    out.meta.seed = seed;
    out.meta.n = factual.rows();
    out.meta.n_star = n_star;
    out.meta.acceptance_rate = 1.0;
    return out;
}

// Row indices satisfying every clause.
inline std::vector<std::size_t> matching_rows(const CounterfactualTable& t, const Predicate& pred) {
    std::vector<const std::vector<double>*> cols;
    cols.reserve(pred.clauses.size());
    for (const auto& c : pred.clauses) cols.push_back(&detail::table_column(t, c.variable, c.world));
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        bool ok = true;
        for (std::size_t k = 0; k < pred.clauses.size(); ++k) {
            if (!detail::clause_holds((*cols[k])[r], pred.clauses[k])) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back(r);
    }
    return out;
}

// Rejection conditioning: keeps rows satisfying the predicate, preserving
// order; acceptance rate recorded in meta.
inline CounterfactualTable condition(const CounterfactualTable& t, const Predicate& pred,
                                     std::size_t min_rows) {
    if (t.rows() == 0) throw std::invalid_argument("cannot condition an empty table");
    auto keep = matching_rows(t, pred);
    if (keep.size() < min_rows) throw InsufficientRows(keep.size(), min_rows);
    CounterfactualTable out;
    out.meta = t.meta;
    out.meta.acceptance_rate = double(keep.size()) / double(t.rows());
    out.u = ColumnTable(t.u.names);
    out.v = ColumnTable(t.v.names);
    out.u_star = ColumnTable(t.u_star.names);
    out.v_star = ColumnTable(t.v_star.names);
    out.ids.reserve(keep.size());
    for (std::size_t r : keep) out.ids.push_back(t.ids[r]);
    auto gather = [&](const ColumnTable& src, ColumnTable& dst) {
        for (std::size_t c = 0; c < src.cols.size(); ++c) {
            dst.cols[c].reserve(keep.size());
            for (std::size_t r : keep) dst.cols[c].push_back(src.cols[c][r]);
        }
    };
    gather(t.u, out.u);
    gather(t.v, out.v);
    gather(t.u_star, out.u_star);
    gather(t.v_star, out.v_star);
    return out;
}

// Extracts the named (variable, world) columns as an observation matrix.
inline EmpiricalSample project(const CounterfactualTable& t,
                               const std::vector<std::pair<std::string, World>>& vars) {
    if (vars.empty()) throw std::invalid_argument("projection needs at least one variable");
    EmpiricalSample s;
    s.dim = vars.size();
    std::vector<const std::vector<double>*> cols;
    for (const auto& [name, world] : vars) cols.push_back(&detail::table_column(t, name, world));
    s.data.reserve(t.rows() * s.dim);
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (const auto* c : cols) s.data.push_back((*c)[r]);
    return s;
}

// --- serialization ----------------------------------------------------------

// Flat CSV `id, <u>, <v>, <u>_star, <v>_star`; meta lands in a JSON sidecar
// at <path>.meta.json.
inline void write_counterfactual_csv(const CounterfactualTable& t, const std::string& path) {
    {
        csv::Writer w(path);
        std::vector<std::string> header = {"id"};
        for (const auto& n : t.u.names) header.push_back(n);
        for (const auto& n : t.v.names) header.push_back(n);
        for (const auto& n : t.u_star.names) header.push_back(n + "_star");
        for (const auto& n : t.v_star.names) header.push_back(n + "_star");
        w.row(header);
        std::vector<std::string> fields(header.size());
        for (std::size_t r = 0; r < t.rows(); ++r) {
            std::size_t k = 0;
            fields[k++] = std::to_string(t.ids[r]);
            for (const auto& c : t.u.cols) fields[k++] = csv::format_double(c[r]);
            for (const auto& c : t.v.cols) fields[k++] = csv::format_double(c[r]);
            for (const auto& c : t.u_star.cols) fields[k++] = csv::format_double(c[r]);
            for (const auto& c : t.v_star.cols) fields[k++] = csv::format_double(c[r]);
            w.row(fields);
        }
    }

    nlohmann::json meta = {
        {"model_hash", t.meta.model_hash},     {"conditional_hash", t.meta.conditional_hash},
        {"seed", t.meta.seed},                 {"n", t.meta.n},
        {"n_star", t.meta.n_star},             {"acceptance_rate", t.meta.acceptance_rate},
    };
    std::ofstream out(path + ".meta.json");
    out << meta.dump(2) << "\n";
}

inline CounterfactualTable read_counterfactual_csv(const std::string& path) {
    auto doc = csv::read_file(path);
    if (doc.header.empty() || doc.header[0] != "id")
        throw std::invalid_argument(path + ": expected leading 'id' column");
    // Columns between id and the first *_star column are factual; the naming
    // convention keeps world split unambiguous.
    std::size_t first_star = doc.header.size();
    for (std::size_t c = 1; c < doc.header.size(); ++c) {
        if (doc.header[c].size() > 5 &&
            doc.header[c].compare(doc.header[c].size() - 5, 5, "_star") == 0) {
            first_star = c;
            break;
        }
    }
    const std::size_t n_fact = first_star - 1;
    if (n_fact == 0 || doc.header.size() != 1 + 2 * n_fact)
        throw std::invalid_argument(path + ": factual/counterfactual column counts do not match");

    CounterfactualTable t;
    // Without the model at hand, the exogenous/endogenous split falls back
    // on the writer's naming convention: "u_"-prefixed columns are noise.
    std::vector<std::string> unames, vnames;
    for (std::size_t c = 1; c <= n_fact; ++c) {
        const auto& name = doc.header[c];
        if (name.rfind("u_", 0) == 0)
            unames.push_back(name);
        else
            vnames.push_back(name);
    }
    t.u = ColumnTable(unames);
    t.v = ColumnTable(vnames);
    t.u_star = ColumnTable(unames);
    t.v_star = ColumnTable(vnames);
    for (const auto& row : doc.rows) {
        if (row.size() != doc.header.size())
            throw std::invalid_argument(path + ": ragged row");
        t.ids.push_back(std::stoll(row[0]));
        std::size_t uc = 0, vc = 0;
        for (std::size_t c = 1; c <= n_fact; ++c) {
            const double val = std::stod(row[c]);
            const double sval = std::stod(row[c + n_fact]);
            if (doc.header[c].rfind("u_", 0) == 0) {
                t.u.cols[uc].push_back(val);
                t.u_star.cols[uc].push_back(sval);
                ++uc;
            } else {
                t.v.cols[vc].push_back(val);
                t.v_star.cols[vc].push_back(sval);
                ++vc;
            }
        }
    }

    std::ifstream meta_in(path + ".meta.json");
    if (meta_in) {
        nlohmann::json meta = nlohmann::json::parse(meta_in);
        t.meta.model_hash = meta.value("model_hash", 0ULL);
        t.meta.conditional_hash = meta.value("conditional_hash", 0ULL);
        t.meta.seed = meta.value("seed", 0ULL);
        t.meta.n = meta.value("n", std::size_t(0));
        t.meta.n_star = meta.value("n_star", std::size_t(0));
        t.meta.acceptance_rate = meta.value("acceptance_rate", 1.0);
    }
    return t;
}

}  // namespace backtrack
