#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "backtrack/backtracking.hpp"
#include "backtrack/criteria.hpp"
#include "backtrack/csv.hpp"
#include "backtrack/divergence.hpp"
#include "backtrack/parser.hpp"
#include "backtrack/scenarios.hpp"

using namespace backtrack;

namespace {

// Trait/score disjunction model with a resample rule on the score noise:
// the trait is immutable across worlds, the score redraws from its prior.
CausalModel toy_model() {
    return parse_and_build(R"(
exo u_a ~ bernoulli(0.5)
exo u_x ~ normal(0, 1)
exo u_yhat ~ point(0)
endo a = linear(0) + u_a
endo x = linear(0) + u_x
endo yhat = or(a, x) + u_yhat
)");
}

void append_individual(FactualTable& t, const CausalModel& m, double a, double x) {
    Assignment u;
    u.set("u_a", a);
    u.set("u_x", x);
    u.set("u_yhat", 0.0);
    auto w = m.forward(u);
    t.ids.push_back(t.ids.empty() ? 0 : t.ids.back() + 1);
    t.u.cols[t.u.index_of("u_a")].push_back(a);
    t.u.cols[t.u.index_of("u_x")].push_back(x);
    t.u.cols[t.u.index_of("u_yhat")].push_back(0.0);
    t.v.cols[t.v.index_of("a")].push_back(w.at("a"));
    t.v.cols[t.v.index_of("x")].push_back(w.at("x"));
    t.v.cols[t.v.index_of("yhat")].push_back(w.at("yhat"));
}

FactualTable crafted_factual(const CausalModel& m,
                             const std::vector<std::pair<double, double>>& ax) {
    FactualTable t;
    t.u = ColumnTable({"u_a", "u_x", "u_yhat"});
    t.v = ColumnTable({"a", "x", "yhat"});
    for (auto [a, x] : ax) append_individual(t, m, a, x);
    return t;
}

EmpiricalSample fresh_normal(std::size_t n, std::uint64_t seed) {
    EmpiricalSample s;
    s.dim = 1;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) s.data.push_back(rng.normal(0.0, 1.0));
    return s;
}

double sample_mean(const EmpiricalSample& s) {
    double m = 0.0;
    for (double v : s.data) m += v;
    return m / double(s.data.size());
}

CounterfactualTable permuted(const CounterfactualTable& t, std::uint64_t seed) {
    std::vector<std::size_t> order(t.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.data(), order.size());
    CounterfactualTable out;
    out.meta = t.meta;
    out.u = ColumnTable(t.u.names);
    out.v = ColumnTable(t.v.names);
    out.u_star = ColumnTable(t.u_star.names);
    out.v_star = ColumnTable(t.v_star.names);
    for (std::size_t r : order) {
        out.ids.push_back(t.ids[r]);
        for (std::size_t c = 0; c < t.u.cols.size(); ++c) {
            out.u.cols[c].push_back(t.u.cols[c][r]);
            out.u_star.cols[c].push_back(t.u_star.cols[c][r]);
        }
        for (std::size_t c = 0; c < t.v.cols.size(); ++c) {
            out.v.cols[c].push_back(t.v.cols[c][r]);
            out.v_star.cols[c].push_back(t.v_star.cols[c][r]);
        }
    }
    return out;
}

// Frozen reference values, cross-checked by quadrature: with P standard
// normal and H half-normal, E|P-P'| = E|P-H| = 2/sqrt(pi) and
// E|H-H'| = 0.6609891568356737.
constexpr double kNormalGap = 1.1283791670955126;
constexpr double kHalfGap = 0.6609891568356737;
constexpr double kHalfMean = 0.7978845608028654;

}  // namespace

TEST_CASE("individual opportunity is the accepted counterfactual conditional") {
    auto model = toy_model();
    auto factual = crafted_factual(model, {{0.0, -0.5}, {1.0, 0.3}});
    auto cond = noninformative(model, {"u_x"});
    auto table = sample_joint(model, cond, factual, 20000, 99);

    OpportunitySet S{{"x"}};
    auto up = individual_cf_opportunity(table, 0, {"yhat", 1.0}, S);
    REQUIRE(up.dim == 1);
    for (double v : up.data) REQUIRE(v > 0.0);
    REQUIRE(sample_mean(up) == Catch::Approx(kHalfMean).margin(0.02));

    auto down = individual_cf_opportunity(table, 0, {"yhat", 0.0}, S);
    for (double v : down.data) REQUIRE(v <= 0.0);

    // The trait alone decides for the second individual, so the score's
    // conditional is just its prior.
    auto free = individual_cf_opportunity(table, 1, {"yhat", 1.0}, S);
    REQUIRE(free.size() == 20000);
    auto res = two_sample_energy_test(subsample_rows(free, 1500, 5), fresh_normal(1500, 6), 100,
                                      0.01, 7);
    REQUIRE_FALSE(res.rejected);

    REQUIRE_THROWS_AS(individual_cf_opportunity(table, 0, {"yhat", 1.0}, OpportunitySet{}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(individual_cf_opportunity(table, 0, {"yhat", 1.0}, OpportunitySet{{"zz"}}),
                      std::out_of_range);
    REQUIRE_THROWS_AS(individual_cf_opportunity(table, 44, {"yhat", 1.0}, S),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(individual_cf_opportunity(table, 0, {"yhat", 1.0}, S, 20001),
                      InsufficientRows);
}

TEST_CASE("realized opportunity reads the factual record") {
    auto model = toy_model();
    auto factual = crafted_factual(model, {{0.0, -0.5}});
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 5, 1);

    REQUIRE(individual_realized_opportunity(table, 0, OpportunitySet{{"x"}}) ==
            std::vector<double>{-0.5});
    REQUIRE(individual_realized_opportunity(table, 0, OpportunitySet{{"a", "x", "u_x"}}) ==
            std::vector<double>{0.0, -0.5, -0.5});

    Assignment obs;
    obs.set("x", 0.25);
    REQUIRE(individual_realized_opportunity(obs, OpportunitySet{{"x"}}) ==
            std::vector<double>{0.25});
    REQUIRE_THROWS_WITH(individual_realized_opportunity(obs, OpportunitySet{{"x", "q"}}),
                        Catch::Matchers::ContainsSubstring("missing member 'q'"));
}

TEST_CASE("group opportunity pools accepted member draws") {
    auto model = toy_model();
    auto factual = model.generate_table(500, 17);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 100, 23);
    OpportunitySet S{{"x"}};

    auto low = group_cf_opportunity(table, GroupSpec{{{"a", 0.0}}}, {"yhat", 1.0}, S);
    for (double v : low.data) REQUIRE(v > 0.0);
    REQUIRE(sample_mean(low) == Catch::Approx(kHalfMean).margin(0.02));

    auto high = group_cf_opportunity(table, GroupSpec{{{"a", 1.0}}}, {"yhat", 1.0}, S);
    auto res = two_sample_energy_test(subsample_rows(high, 1500, 3), fresh_normal(1500, 4), 100,
                                      0.01, 5);
    REQUIRE_FALSE(res.rejected);

    REQUIRE_THROWS_WITH(group_cf_opportunity(table, GroupSpec{{{"a", 2.0}}}, {"yhat", 1.0}, S),
                        Catch::Matchers::ContainsSubstring("empty group"));

    // Pooling everyone is the same multiset as concatenating each
    // individual's own conditional.
    auto whole = group_cf_opportunity(table, GroupSpec{}, {"yhat", 1.0}, S, 1);
    std::vector<double> glued;
    for (std::int64_t id = 0; id < 500; ++id) {
        auto one = individual_cf_opportunity(table, id, {"yhat", 1.0}, S, 1);
        glued.insert(glued.end(), one.data.begin(), one.data.end());
    }
    auto sorted_whole = whole.data;
    std::sort(sorted_whole.begin(), sorted_whole.end());
    std::sort(glued.begin(), glued.end());
    REQUIRE(sorted_whole == glued);
}

TEST_CASE("group realized opportunity selects factual rows") {
    auto model = toy_model();
    auto factual = model.generate_table(4000, 29);
    OpportunitySet S{{"x"}};

    auto hired_low = group_realized_opportunity(factual, GroupSpec{{{"a", 0.0}}}, {"yhat", 1.0}, S);
    for (double v : hired_low.data) REQUIRE(v > 0.0);
    auto passed_low = group_realized_opportunity(factual, GroupSpec{{{"a", 0.0}}}, {"yhat", 0.0}, S);
    for (double v : passed_low.data) REQUIRE(v <= 0.0);

    auto hired_high = group_realized_opportunity(factual, GroupSpec{{{"a", 1.0}}}, {"yhat", 1.0}, S);
    auto res = two_sample_energy_test(subsample_rows(hired_high, 1500, 3), fresh_normal(1500, 8),
                                      100, 0.01, 9);
    REQUIRE_FALSE(res.rejected);

    REQUIRE_THROWS_WITH(
        group_realized_opportunity(factual, GroupSpec{{{"a", 1.0}}}, {"yhat", 0.0}, S),
        Catch::Matchers::ContainsSubstring("empty selection"));
}

TEST_CASE("individual opportunity test flags the shielded trait group") {
    auto model = toy_model();
    auto factual = model.generate_table(150, 41);
    append_individual(factual, model, 1.0, 0.3);  // id 150
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 1000, 43);

    // The audited individual's conditional is the full prior while the
    // population mixes prior and truncated parts 2:1, an energy gap of
    // (E|P-P'| - E|H-H'|)/9.
    TestOptions opt;
    opt.n_perm = 100;
    opt.seed = 11;
    auto res = individual_equality_cf_opportunity(table, 150, OpportunitySet{{"x"}},
                                                  OpportunityBaseline::population(), {"yhat", 1.0},
                                                  opt);
    REQUIRE(res.statistic == Catch::Approx((kNormalGap - kHalfGap) / 9.0).margin(0.05));
    REQUIRE_FALSE(res.satisfied);
    REQUIRE(res.accepted_rows == 1000);
    REQUIRE(res.criterion == "individual_equality_cf_opportunity");
}

TEST_CASE("baseline variants resolve against the right comparison rows") {
    auto model = toy_model();
    auto factual = model.generate_table(300, 47);
    append_individual(factual, model, 0.0, -0.5);  // id 300, factual yhat=0
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 1000, 53);
    OpportunitySet S{{"x"}};
    TestOptions opt;
    opt.n_perm = 100;
    opt.seed = 20;

    // Everyone who was factually declined shares this individual's
    // truncated conditional, so recourse is even-handed here.
    auto rec = individual_equality_cf_opportunity(table, 300, S, OpportunityBaseline::recourse(),
                                                  {"yhat", 1.0}, opt);
    REQUIRE(rec.satisfied);

    auto other = individual_equality_cf_opportunity(
        table, 300, S, OpportunityBaseline::other_group(GroupSpec{{{"a", 1.0}}}), {"yhat", 1.0},
        opt);
    REQUIRE_FALSE(other.satisfied);
    REQUIRE(other.statistic == Catch::Approx(kNormalGap - kHalfGap).margin(0.08));

    // Score-alike neighbours still split by trait, which shields half of
    // them, so the individual's truncated view disagrees with the blend.
    auto close = individual_equality_cf_opportunity(
        table, 300, S, OpportunityBaseline::same_covariates(0.25), {"yhat", 1.0}, opt);
    REQUIRE_FALSE(close.satisfied);

    REQUIRE_THROWS_WITH(
        individual_equality_cf_opportunity(
            table, 300, S, OpportunityBaseline::other_group(GroupSpec{{{"a", 5.0}}}),
            {"yhat", 1.0}, opt),
        Catch::Matchers::ContainsSubstring("empty group"));

    TestOptions strict = opt;
    strict.min_rows = 200000;
    REQUIRE_THROWS_AS(individual_equality_cf_opportunity(table, 300, S,
                                                         OpportunityBaseline::population(),
                                                         {"yhat", 1.0}, strict),
                      InsufficientRows);
}

TEST_CASE("a constant decision satisfies the individual criterion") {
    auto model = parse_and_build(R"(
exo u_a ~ bernoulli(0.5)
exo u_x ~ normal(0, 1)
endo a = linear(0) + u_a
endo x = linear(0) + u_x
endo yhat = const(1)
)");
    auto cond = noninformative(model, {"u_a", "u_x"});
    std::size_t satisfied = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        auto factual = model.generate_table(20, derive_seed(900, trial));
        auto table = sample_joint(model, cond, factual, 60, derive_seed(901, trial));
        TestOptions opt;
        opt.n_perm = 100;
        opt.cap = 800;
        opt.seed = derive_seed(902, trial);
        auto res = individual_equality_cf_opportunity(table, 0, OpportunitySet{{"x"}},
                                                      OpportunityBaseline::population(),
                                                      {"yhat", 1.0}, opt);
        if (res.satisfied) ++satisfied;
    }
    REQUIRE(satisfied >= 93);
}

TEST_CASE("group opportunity comparison separates the two traits") {
    auto model = toy_model();
    auto factual = model.generate_table(600, 59);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 50, 61);
    OpportunitySet S{{"x"}};
    std::vector<GroupSpec> groups{GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};
    TestOptions opt;
    opt.n_perm = 100;
    opt.cap = 1500;
    opt.seed = 67;

    auto results = group_equality_cf_opportunity(table, S, groups, {"yhat", 1.0}, opt);
    REQUIRE(results.size() == 1);
    REQUIRE(results[0].subject == "a=0|a=1");
    REQUIRE(results[0].statistic == Catch::Approx(kNormalGap - kHalfGap).margin(0.05));
    REQUIRE_FALSE(results[0].satisfied);

    // Listing the groups the other way round changes nothing.
    std::vector<GroupSpec> flipped{groups[1], groups[0]};
    auto mirror = group_equality_cf_opportunity(table, S, flipped, {"yhat", 1.0}, opt);
    REQUIRE(mirror[0].subject == results[0].subject);
    REQUIRE(mirror[0].statistic == results[0].statistic);
    REQUIRE(mirror[0].threshold == results[0].threshold);

    std::vector<GroupSpec> twins{groups[0], groups[0]};
    auto self = group_equality_cf_opportunity(table, S, twins, {"yhat", 1.0}, opt);
    REQUIRE(self[0].statistic == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(self[0].satisfied);

    REQUIRE_THROWS_AS(group_equality_cf_opportunity(table, S, {groups[0]}, {"yhat", 1.0}, opt),
                      std::invalid_argument);
}

TEST_CASE("rare-group comparisons are skipped with a note") {
    auto model = toy_model();
    auto factual = model.generate_table(200, 71);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 5, 73);
    std::vector<GroupSpec> groups{GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};

    // The trait group can never reach a declined counterfactual, so its
    // side has zero accepted rows.
    auto results = group_equality_cf_opportunity(table, OpportunitySet{{"x"}}, groups,
                                                 {"yhat", 0.0}, {});
    REQUIRE(results.size() == 1);
    REQUIRE(std::isnan(results[0].statistic));
    REQUIRE_FALSE(results[0].satisfied);
    REQUIRE(results[0].note.find("skipped") != std::string::npos);
    REQUIRE(results[0].accepted_rows == 0);
}

TEST_CASE("group comparison accepts extra factual clauses") {
    auto model = toy_model();
    auto factual = model.generate_table(400, 79);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 60, 83);
    std::vector<GroupSpec> groups{GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};
    TestOptions opt;
    opt.n_perm = 100;
    opt.cap = 1000;
    std::vector<Clause> hired{{"yhat", World::factual, Clause::eq, 1.0}};
    auto results =
        group_equality_cf_opportunity(table, OpportunitySet{{"x"}}, groups, {"yhat", 1.0}, opt,
                                      hired);
    REQUIRE(results.size() == 1);
    REQUIRE(results[0].accepted_rows > 0);
    REQUIRE(std::isfinite(results[0].statistic));
}

TEST_CASE("individual effort prices the distance to the target conditional") {
    auto model = toy_model();
    auto factual = crafted_factual(model, {{0.0, -0.5}, {0.0, 0.8}, {1.0, 0.3}});
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 60000, 89);
    OpportunitySet S{{"x"}};

    const double far = individual_effort(table, 0, {"yhat", 1.0}, S);
    const double near = individual_effort(table, 1, {"yhat", 1.0}, S);
    REQUIRE(far == Catch::Approx(1.9347799648).margin(0.02));
    REQUIRE(near == Catch::Approx(0.3048995931).margin(0.02));
    REQUIRE(near < far);

    // The trait pins the third individual's decision at 1 in every draw.
    REQUIRE(individual_effort(table, 2, {"yhat", 0.0}, S) == kInfeasible);
    REQUIRE(std::isinf(individual_effort(table, 2, {"yhat", 0.0}, S)));

    // When the projection is the decision itself, the realized value is the
    // sole support point of the target conditional.
    REQUIRE(individual_effort(table, 2, {"yhat", 1.0}, OpportunitySet{{"yhat"}}) == 0.0);

    REQUIRE_THROWS_AS(individual_effort(table, 0, {"yhat", 1.0}, S, 60001), InsufficientRows);
}

TEST_CASE("group effort matches the truncated-pair distance") {
    auto model = toy_model();
    auto factual = model.generate_table(8000, 97);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 30, 101);
    OpportunitySet S{{"x"}};
    TestOptions opt;
    opt.seed = 5;

    // Declined low-trait members sit on the negative half while their
    // accepted counterfactuals sit on the positive half:
    // 4*sqrt(2/pi) - 2*E|H-H'|.
    const double gce = group_effort_gce(table, GroupSpec{{{"a", 0.0}}}, {"yhat", 0.0},
                                        {"yhat", 1.0}, S, opt);
    REQUIRE(gce == Catch::Approx(1.8695599295).margin(0.08));

    const double none = group_effort_gce(table, GroupSpec{{{"a", 1.0}}}, {"yhat", 1.0},
                                         {"yhat", 1.0}, S, opt);
    REQUIRE(none == Catch::Approx(0.0).margin(0.05));

    REQUIRE_THROWS_WITH(group_effort_gce(table, GroupSpec{{{"a", 1.0}}}, {"yhat", 0.0},
                                         {"yhat", 1.0}, S, opt),
                        Catch::Matchers::ContainsSubstring("empty conditional"));
}

TEST_CASE("group effort ignores row order") {
    auto model = toy_model();
    auto factual = model.generate_table(60, 103);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 40, 107);
    OpportunitySet S{{"x"}};
    TestOptions opt;
    opt.min_rows = 20;

    const double base = group_effort_gce(table, GroupSpec{{{"a", 0.0}}}, {"yhat", 0.0},
                                         {"yhat", 1.0}, S, opt);
    const double shuffled = group_effort_gce(permuted(table, 5), GroupSpec{{{"a", 0.0}}},
                                             {"yhat", 0.0}, {"yhat", 1.0}, S, opt);
    REQUIRE(base == Catch::Approx(shuffled).margin(1e-9));
}

TEST_CASE("effort comparison flags infeasible flips as unequal") {
    auto model = toy_model();
    auto factual = model.generate_table(400, 109);
    auto table = sample_joint(model, noninformative(model, {"u_x"}), factual, 30, 113);
    OpportunitySet S{{"x"}};
    std::vector<GroupSpec> groups{GroupSpec{{{"a", 0.0}}}, GroupSpec{{{"a", 1.0}}}};
    EffortBandOptions opt;
    opt.n_boot = 60;
    opt.cap = 500;
    opt.seed = 3;

    // No high-trait member was factually declined, so the upward flip has
    // no defined effort for that group at all.
    auto up = group_equality_effort(table, groups, {"yhat", 0.0}, {"yhat", 1.0}, S, opt);
    REQUIRE(up.size() == 1);
    REQUIRE(up[0].statistic == kInfeasible);
    REQUIRE_FALSE(up[0].satisfied);
    REQUIRE(up[0].note.find("undefined") != std::string::npos);

    // Staying at the accepted decision costs both groups nothing.
    auto flat = group_equality_effort(table, groups, {"yhat", 1.0}, {"yhat", 1.0}, S, opt);
    REQUIRE(flat[0].satisfied);
    REQUIRE(flat[0].statistic < 0.1);

    std::vector<GroupSpec> flipped{groups[1], groups[0]};
    auto mirror = group_equality_effort(permuted(table, 7), flipped, {"yhat", 1.0}, {"yhat", 1.0},
                                        S, opt);
    REQUIRE(mirror[0].subject == flat[0].subject);

    std::vector<GroupSpec> twins{groups[0], groups[0]};
    auto self = group_equality_effort(table, twins, {"yhat", 0.0}, {"yhat", 1.0}, S, opt);
    REQUIRE(self[0].statistic == 0.0);
    REQUIRE(self[0].satisfied);

    std::vector<GroupSpec> high_twins{groups[1], groups[1]};
    auto both = group_equality_effort(table, high_twins, {"yhat", 0.0}, {"yhat", 1.0}, S, opt);
    REQUIRE(std::isnan(both[0].statistic));
    REQUIRE(both[0].note.find("both groups undefined") != std::string::npos);
}

TEST_CASE("frozen members of the opportunity set draw a warning") {
    auto model = toy_model();
    auto cond = noninformative(model, {"u_x"});
    REQUIRE(opportunity_warnings(model, cond, OpportunitySet{{"x"}}).empty());
    REQUIRE(opportunity_warnings(model, cond, OpportunitySet{{"yhat"}}).empty());
    REQUIRE(opportunity_warnings(model, cond, OpportunitySet{{"a"}}).size() == 1);
    REQUIRE(opportunity_warnings(model, cond, OpportunitySet{{"u_a", "x"}}).size() == 1);

    auto all_keep = BacktrackingConditional(model, BacktrackRule::keep());
    REQUIRE(opportunity_warnings(model, all_keep, OpportunitySet{{"x"}}).size() == 1);
    REQUIRE_THROWS_AS(opportunity_warnings(model, cond, OpportunitySet{{"zz"}}),
                      std::invalid_argument);
}

TEST_CASE("criterion results serialize to csv") {
    std::vector<CriterionResult> results(2);
    results[0].subject = "3";
    results[0].criterion = "individual_equality_cf_opportunity";
    results[0].y_star = 1.0;
    results[0].statistic = 0.25;
    results[0].threshold = 0.5;
    results[0].satisfied = true;
    results[0].accepted_rows = 120;
    results[1].subject = "a=0|a=1";
    results[1].criterion = "group_equality_effort";
    results[1].y = 0.0;
    results[1].y_star = 1.0;
    results[1].statistic = 1.25;
    results[1].threshold = 0.1;
    results[1].satisfied = false;
    results[1].accepted_rows = 400;

    const std::string path =
        (std::filesystem::temp_directory_path() / "criteria_csv_test.csv").string();
    write_criteria_csv(results, path);
    auto doc = csv::read_file(path);
    REQUIRE(doc.header == std::vector<std::string>{"subject", "criterion", "y", "y_star",
                                                   "statistic", "threshold", "satisfied",
                                                   "accepted_rows"});
    REQUIRE(doc.rows.size() == 2);
    REQUIRE(doc.rows[0][0] == "3");
    REQUIRE(doc.rows[0][2] == "");  // unset factual outcome stays blank
    REQUIRE(doc.rows[0][6] == "true");
    REQUIRE(doc.rows[1][2] == "0");
    REQUIRE(doc.rows[1][6] == "false");
    REQUIRE(doc.rows[1][7] == "400");
}
