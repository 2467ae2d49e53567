#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "backtrack/model.hpp"
#include "backtrack/rng.hpp"
#include "backtrack/table.hpp"

namespace backtrack {

enum class PredictorKind { ols, logistic, random, constant };

struct BinarizeSpec {
    enum Kind { none, threshold, median } kind = none;
    double cutoff = 0.0;  // strict >: score above cutoff maps to 1

    static BinarizeSpec at(double c) { return {threshold, c}; }
    static BinarizeSpec at_median() { return {median, 0.0}; }
};

// Fitted scoring function over named covariates, plus an optional
// binarization of the linear score.
struct Predictor {
    PredictorKind kind = PredictorKind::ols;
    std::vector<std::string> covariates;
    std::vector<double> weights;
    double intercept = 0.0;
    BinarizeSpec binarize;
    std::uint64_t seed = 0;  // random kind only

    bool operator==(const Predictor& o) const {
        return kind == o.kind && covariates == o.covariates && weights == o.weights &&
               intercept == o.intercept && binarize.kind == o.binarize.kind &&
               binarize.cutoff == o.binarize.cutoff && seed == o.seed;
    }
};

// Mean squared residual for least squares; mean deviance for logistic.
struct FitReport {
    double residual_variance = 0.0;
    std::vector<double> weight_se;
    double intercept_se = 0.0;
    std::size_t n_used = 0;
    std::size_t iterations = 0;
    bool ridge_stabilized = false;
};

namespace detail {

inline Eigen::MatrixXd design_matrix(const ColumnTable& data,
                                     const std::vector<std::string>& covariates) {
    const std::size_t n = data.rows(), p = covariates.size();
    Eigen::MatrixXd X(n, p + 1);
    for (std::size_t j = 0; j < p; ++j) {
        const auto& c = data.col(covariates[j]);
        for (std::size_t i = 0; i < n; ++i) X(i, j) = c[i];
    }
    X.col(p).setOnes();
    return X;
}

}  // namespace detail

inline std::pair<Predictor, FitReport> fit_ols(const ColumnTable& data, const std::string& target,
                                               const std::vector<std::string>& covariates) {
    const auto& ycol = data.col(target);
    const std::size_t n = data.rows(), p = covariates.size();
    if (n <= p + 1)
        throw std::invalid_argument("least squares needs more than " + std::to_string(p + 1) +
                                    " rows, got " + std::to_string(n));
    Eigen::MatrixXd X = detail::design_matrix(data, covariates);
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ycol.data(), n);
    auto qr = X.colPivHouseholderQr();
    if (qr.rank() < static_cast<Eigen::Index>(p + 1))
        throw std::invalid_argument("rank-deficient design matrix fitting '" + target +
                                    "' (collinear covariates?)");
    Eigen::VectorXd beta = qr.solve(y);
    Eigen::VectorXd resid = y - X * beta;
    const double sigma2 = resid.squaredNorm() / double(n - p - 1);
    Eigen::MatrixXd cov = sigma2 * (X.transpose() * X).inverse();

    Predictor out;
    out.kind = PredictorKind::ols;
    out.covariates = covariates;
    out.weights.assign(beta.data(), beta.data() + p);
    out.intercept = beta(p);

    FitReport rep;
    rep.residual_variance = sigma2;
    rep.n_used = n;
    rep.iterations = 1;
    for (std::size_t j = 0; j < p; ++j) rep.weight_se.push_back(std::sqrt(cov(j, j)));
    rep.intercept_se = std::sqrt(cov(p, p));
    return {out, rep};
}

// Iteratively reweighted least squares with a fixed iteration cap.
// Separation or a singular information matrix falls back to a small ridge
// penalty instead of failing; the report carries the flag.
inline std::pair<Predictor, FitReport> fit_logistic(const ColumnTable& data,
                                                    const std::string& target,
                                                    const std::vector<std::string>& covariates) {
    const auto& ycol = data.col(target);
    const std::size_t n = data.rows(), p = covariates.size();
    if (n <= p + 1)
        throw std::invalid_argument("logistic fit needs more than " + std::to_string(p + 1) +
                                    " rows, got " + std::to_string(n));
    for (double v : ycol)
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("logistic target '" + target + "' must be 0/1");

    Eigen::MatrixXd X = detail::design_matrix(data, covariates);
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(ycol.data(), n);

    constexpr std::size_t kMaxIter = 100;
    constexpr double kTol = 1e-8;
    constexpr double kRidge = 1e-6;

    FitReport rep;
    rep.n_used = n;
    Eigen::VectorXd beta;
    Eigen::MatrixXd info;

    auto run = [&](double ridge) {
        beta = Eigen::VectorXd::Zero(p + 1);
        for (std::size_t it = 1; it <= kMaxIter; ++it) {
            rep.iterations = it;
            Eigen::VectorXd eta = X * beta;
            Eigen::VectorXd mu = eta.unaryExpr([](double e) { return expit(e); });
            Eigen::VectorXd w = (mu.array() * (1.0 - mu.array())).cwiseMax(1e-10);
            Eigen::VectorXd z = eta.array() + (y - mu).array() / w.array();
            info = X.transpose() * w.asDiagonal() * X;
            info.diagonal().array() += ridge;
            Eigen::VectorXd rhs = X.transpose() * (w.asDiagonal() * z);
            Eigen::VectorXd next = info.ldlt().solve(rhs);
            if (!next.allFinite()) return false;
            if ((info * next - rhs).norm() > 1e-6 * (rhs.norm() + 1.0)) return false;
            const double step = (next - beta).cwiseAbs().maxCoeff();
            beta = next;
            if (step < kTol) return true;
        }
        return false;
    };

    // Saturated IRLS can stall at a huge finite coefficient on separated
    // data, so perfect strict classification also routes to the ridge run.
    bool clean = run(0.0);
    if (clean) {
        Eigen::VectorXd eta = X * beta;
        bool separated = true;
        for (std::size_t i = 0; i < n && separated; ++i)
            if ((y(i) > 0.5 ? eta(i) : -eta(i)) <= 0.0) separated = false;
        if (separated) clean = false;
    }
    if (!clean) {
        rep.ridge_stabilized = true;
        run(kRidge);
    }

    Predictor out;
    out.kind = PredictorKind::logistic;
    out.covariates = covariates;
    out.weights.assign(beta.data(), beta.data() + p);
    out.intercept = beta(p);

    Eigen::MatrixXd cov = info.inverse();
    for (std::size_t j = 0; j < p; ++j) rep.weight_se.push_back(std::sqrt(std::max(0.0, cov(j, j))));
    rep.intercept_se = std::sqrt(std::max(0.0, cov(p, p)));
    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = expit((X.row(i) * beta)(0));
        const double pi = y(i) > 0.5 ? mu : 1.0 - mu;
        dev += -2.0 * std::log(std::max(pi, 1e-300));
    }
    rep.residual_variance = dev / double(n);
    return {out, rep};
}

// Coin-flip predictor: Bernoulli(1/2) independent of every covariate,
// realized through its own noise slot when spliced.
inline Predictor make_random(std::uint64_t seed) {
    Predictor p;
    p.kind = PredictorKind::random;
    p.seed = seed;
    return p;
}

inline Predictor make_constant(double value) {
    Predictor p;
    p.kind = PredictorKind::constant;
    p.intercept = value;
    return p;
}

inline std::vector<double> predictor_scores(const Predictor& p, const ColumnTable& data) {
    const std::size_t n = data.rows();
    std::vector<double> out(n, p.intercept);
    switch (p.kind) {
        case PredictorKind::ols:
        case PredictorKind::logistic: {
            for (std::size_t j = 0; j < p.covariates.size(); ++j) {
                const auto& c = data.col(p.covariates[j]);
                for (std::size_t i = 0; i < n; ++i) out[i] += p.weights[j] * c[i];
            }
            break;
        }
        case PredictorKind::random: {
            for (std::size_t i = 0; i < n; ++i) {
                Rng rng(derive_seed(p.seed, i));
                out[i] = rng.bernoulli(0.5);
            }
            break;
        }
        case PredictorKind::constant:
            break;
    }
    return out;
}

inline double median_cutoff(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("median of an empty column");
    std::sort(scores.begin(), scores.end());
    const std::size_t n = scores.size();
    return n % 2 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
}

inline std::vector<double> binarize(const std::vector<double>& scores, const BinarizeSpec& rule) {
    if (scores.empty()) throw std::invalid_argument("cannot binarize an empty column");
    const double cut = rule.kind == BinarizeSpec::median ? median_cutoff(scores) : rule.cutoff;
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] > cut ? 1.0 : 0.0;
    return out;
}

inline std::vector<double> predictor_labels(const Predictor& p, const ColumnTable& data) {
    auto s = predictor_scores(p, data);
    return p.binarize.kind == BinarizeSpec::none ? s : binarize(s, p.binarize);
}

// Column roles for the two-stage residual predictor.
struct LawRoles {
    std::string r = "r", x = "x", l = "l", g = "g", y = "y";
    std::string eps_l = "u_l", eps_g = "u_g";
};

// Two-stage construction: regress the mediating scores on the protected
// root and covariate, then predict the outcome from the residuals alone.
inline std::pair<Predictor, FitReport> make_icf_fair(const ColumnTable& data,
                                                     const LawRoles& roles = {}) {
    auto [lfit, lrep] = fit_ols(data, roles.l, {roles.r, roles.x});
    auto [gfit, grep] = fit_ols(data, roles.g, {roles.r, roles.x});
    const std::size_t n = data.rows();
    auto lhat = predictor_scores(lfit, data);
    auto ghat = predictor_scores(gfit, data);
    ColumnTable stage2({roles.eps_l, roles.eps_g, roles.y});
    stage2.cols[0].resize(n);
    stage2.cols[1].resize(n);
    stage2.cols[2] = data.col(roles.y);
    for (std::size_t i = 0; i < n; ++i) {
        stage2.cols[0][i] = data.col(roles.l)[i] - lhat[i];
        stage2.cols[1][i] = data.col(roles.g)[i] - ghat[i];
    }
    bool binary = true;
    for (double v : stage2.cols[2])
        if (v != 0.0 && v != 1.0) binary = false;
    return binary ? fit_logistic(stage2, roles.y, {roles.eps_l, roles.eps_g})
                  : fit_ols(stage2, roles.y, {roles.eps_l, roles.eps_g});
}

// Installs the predictor as endogenous node `node`. Binarized predictors
// contribute a `<node>_score` stage plus a cutoff stage; linear stages carry
// a degenerate noise slot to satisfy the mechanism catalog. Replacing an
// existing node swaps only that mechanism.
inline CausalModel splice(const CausalModel& model, const Predictor& p, const std::string& node) {
    if (model.is_exogenous(node))
        throw std::invalid_argument("cannot splice over exogenous variable '" + node + "'");
    for (const auto& c : p.covariates)
        if (!model.has_variable(c))
            throw std::invalid_argument("predictor covariate '" + c + "' missing from model");

    ModelSpec spec = model.spec();
    if (model.is_endogenous(node)) {
        const auto old = model.mechanism(node);
        std::erase_if(spec.mechanisms, [&](const Mechanism& m) { return m.target == node; });
        if (!old.exo.empty()) {
            bool referenced = false;
            for (const auto& m : spec.mechanisms) {
                if (m.exo == old.exo) referenced = true;
                for (const auto& pa : m.parents)
                    if (pa == old.exo) referenced = true;
            }
            for (const auto& ns : spec.noises)
                for (const auto& v : ns.mean.vars)
                    if (v == old.exo) referenced = true;
            if (!referenced)
                std::erase_if(spec.noises, [&](const NoiseSpec& ns) { return ns.variable == old.exo; });
        }
    }

    // Collision check runs against the edited spec so a replaced node can
    // reuse its old slot name once the orphaned noise is gone.
    auto fresh = [&](const std::string& name) {
        for (const auto& ns : spec.noises)
            if (ns.variable == name)
                throw std::invalid_argument("splice name collision on '" + name + "'");
        for (const auto& m : spec.mechanisms)
            if (m.target == name)
                throw std::invalid_argument("splice name collision on '" + name + "'");
        return name;
    };

    switch (p.kind) {
        case PredictorKind::random: {
            const std::string slot = fresh("u_" + node);
            spec.exo(ModelSpec::bernoulli(slot, 0.5));
            spec.endo(ModelSpec::linear(node, {}, {}, 0.0, slot));
            break;
        }
        case PredictorKind::constant:
            spec.endo(ModelSpec::constant(node, p.intercept));
            break;
        case PredictorKind::ols:
        case PredictorKind::logistic: {
            if (p.binarize.kind == BinarizeSpec::median)
                throw std::invalid_argument(
                    "resolve the median rule to a concrete threshold before splicing");
            if (p.binarize.kind == BinarizeSpec::none) {
                const std::string slot = fresh("u_" + node);
                spec.exo(ModelSpec::point(slot, 0.0));
                spec.endo(ModelSpec::linear(node, p.covariates, p.weights, p.intercept, slot));
            } else {
                const std::string score = fresh(node + "_score");
                const std::string slot = fresh("u_" + score);
                spec.exo(ModelSpec::point(slot, 0.0));
                spec.endo(ModelSpec::linear(score, p.covariates, p.weights, p.intercept, slot));
                spec.endo(ModelSpec::threshold(node, score, p.binarize.cutoff));
            }
            break;
        }
    }
    return build_model(spec);
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json predictor_to_json(const Predictor& p) {
    nlohmann::json j;
    switch (p.kind) {
        case PredictorKind::ols: j["kind"] = "ols"; break;
        case PredictorKind::logistic: j["kind"] = "logistic"; break;
        case PredictorKind::random: j["kind"] = "random"; break;
        case PredictorKind::constant: j["kind"] = "constant"; break;
    }
    j["covariates"] = p.covariates;
    j["weights"] = p.weights;
    j["intercept"] = p.intercept;
    if (p.binarize.kind == BinarizeSpec::none)
        j["binarize"] = nullptr;
    else if (p.binarize.kind == BinarizeSpec::median)
        j["binarize"] = "median";
    else
        j["binarize"] = {{"threshold", p.binarize.cutoff}};
    if (p.kind == PredictorKind::random) j["seed"] = p.seed;
    return j;
}

inline Predictor predictor_from_json(const nlohmann::json& j) {
    Predictor p;
    const std::string kind = j.at("kind");
    if (kind == "ols") p.kind = PredictorKind::ols;
    else if (kind == "logistic") p.kind = PredictorKind::logistic;
    else if (kind == "random") p.kind = PredictorKind::random;
    else if (kind == "constant") p.kind = PredictorKind::constant;
    else throw std::invalid_argument("unknown predictor kind '" + kind + "'");
    p.covariates = j.value("covariates", std::vector<std::string>{});
    p.weights = j.value("weights", std::vector<double>{});
    p.intercept = j.value("intercept", 0.0);
    if (j.contains("binarize") && !j.at("binarize").is_null()) {
        if (j.at("binarize").is_string() && j.at("binarize") == "median")
            p.binarize = BinarizeSpec::at_median();
        else
            p.binarize = BinarizeSpec::at(j.at("binarize").at("threshold").get<double>());
    }
    p.seed = j.value("seed", std::uint64_t(0));
    if (p.weights.size() != p.covariates.size())
        throw std::invalid_argument("predictor weights/covariates length mismatch");
    return p;
}

}  // namespace backtrack
