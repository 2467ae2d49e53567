#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "backtrack/audit.hpp"

namespace {

backtrack::LawMapping load_mapping(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open mapping '" + path + "'");
    try {
        return backtrack::LawMapping::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }
}

struct GenerateArgs {
    std::string scenario, data, mapping, out = ".";
    std::size_t n = 500, sample = 0;
    std::uint64_t seed = 0;
};

// Writes the factual table and the model it came from: either a synthetic
// scenario draw or the causal model fitted to an observed-data CSV.
int cmd_generate(const GenerateArgs& a) {
    namespace fs = std::filesystem;
    backtrack::FactualTable factual;
    backtrack::CausalModel model;
    if (!a.scenario.empty()) {
        auto sd = backtrack::generate({a.scenario, a.n, a.seed});
        model = std::move(sd.model);
        factual = std::move(sd.factual);
    } else {
        const auto mapping = load_mapping(a.mapping);
        auto records = backtrack::load_law_school(a.data, mapping);
        if (a.sample > 0)
            records = backtrack::subsample(records, a.sample,
                                           backtrack::derive_seed(a.seed, 1));
        auto fit = backtrack::fit_law_school_scm(records, mapping);
        model = std::move(fit.model);
        factual = std::move(fit.factual);
    }
    fs::create_directories(a.out);
    backtrack::write_factual_csv(factual, (fs::path(a.out) / "factual.csv").string());
    std::ofstream mf(fs::path(a.out) / "model.txt");
    mf << backtrack::serialize_model(model.spec());
    std::cout << "wrote " << factual.rows() << " rows to " << a.out << "/factual.csv\n";
    return 0;
}

struct Override {
    std::string scenario, data, mapping, out;
    std::size_t n = 0, n_star = 0, mmd_cap = 0, min_rows = 0;
    std::uint64_t seed = 0;
    double alpha = 0.0;
    bool has_n = false, has_n_star = false, has_seed = false, has_alpha = false;
    bool has_mmd_cap = false, has_min_rows = false;
};

int cmd_audit(const std::string& config_path, const Override& ov) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("config: cannot open '" + config_path + "'");
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("config: " + config_path + ": " + e.what());
        }
    }
    if (!ov.scenario.empty()) {
        j["scenarios"] = nlohmann::json::array({ov.scenario});
        j.erase("data");
    }
    if (!ov.data.empty()) {
        j["data"] = ov.data;
        j.erase("scenarios");
    }
    if (!ov.mapping.empty()) {
        std::ifstream min(ov.mapping);
        if (!min) throw std::runtime_error("config: cannot open mapping '" + ov.mapping + "'");
        j["mapping"] = nlohmann::json::parse(min);
    }
    if (ov.has_n) j["n"] = ov.n;
    if (ov.has_n_star) j["n_star"] = ov.n_star;
    if (ov.has_seed) j["seed"] = ov.seed;
    if (ov.has_alpha) j["alpha"] = ov.alpha;
    if (ov.has_mmd_cap) j["mmd_cap"] = ov.mmd_cap;
    if (ov.has_min_rows) j["min_rows"] = ov.min_rows;
    if (!ov.out.empty()) j["out"] = ov.out;

    const auto cfg = backtrack::audit_config_from_json(j);
    const auto report = backtrack::run_audit(cfg);

    nlohmann::json summary = {{"pass_rates", backtrack::detail::pass_rates_to_json(report.pass_rates)}};
    std::cout << backtrack::audit_report_table(summary);
    for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
    if (!cfg.out.empty()) std::cout << "report written to " << cfg.out << "\n";
    return 0;  // violations are findings, not failures
}

int cmd_report(const std::string& dir) {
    std::cout << backtrack::audit_report_table(backtrack::load_audit_summary(dir));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"backtracking counterfactual fairness audits"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "draw a synthetic dataset or fit an observed one");
    g->add_option("--scenario", gen.scenario, "example1 | balanced | unbalanced");
    g->add_option("--data", gen.data, "observed-data CSV to fit instead");
    g->add_option("--mapping", gen.mapping, "JSON column mapping for --data");
    g->add_option("--n", gen.n, "rows to draw");
    g->add_option("--sample", gen.sample, "subsample observed records");
    g->add_option("--seed", gen.seed, "RNG seed");
    g->add_option("--out", gen.out, "output directory");

    std::string config_path;
    Override ov;
    auto* a = app.add_subcommand("audit", "run the criteria in a config file");
    a->add_option("config", config_path, "audit config JSON");
    a->add_option("--scenario", ov.scenario, "replace the config's scenario list");
    a->add_option("--data", ov.data, "replace the config's data path");
    a->add_option("--mapping", ov.mapping, "JSON column mapping for --data");
    auto* on = a->add_option("--n", ov.n, "dataset rows");
    auto* ons = a->add_option("--n-star", ov.n_star, "counterfactual draws per row");
    auto* osd = a->add_option("--seed", ov.seed, "RNG seed");
    auto* oal = a->add_option("--alpha", ov.alpha, "test level");
    auto* omc = a->add_option("--mmd-cap", ov.mmd_cap, "subsample cap for distance tests");
    auto* omr = a->add_option("--min-rows", ov.min_rows, "minimum accepted rows per conditional");
    a->add_option("--out", ov.out, "report directory");

    std::string report_dir;
    auto* r = app.add_subcommand("report", "print the pass-rate table of a finished audit");
    r->add_option("dir", report_dir, "report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (g->parsed()) {
            if (gen.scenario.empty() == gen.data.empty())
                throw CLI::ValidationError("generate",
                                           "exactly one of --scenario and --data is required");
            return cmd_generate(gen);
        }
        if (a->parsed()) {
            ov.has_n = on->count() > 0;
            ov.has_n_star = ons->count() > 0;
            ov.has_seed = osd->count() > 0;
            ov.has_alpha = oal->count() > 0;
            ov.has_mmd_cap = omc->count() > 0;
            ov.has_min_rows = omr->count() > 0;
            return cmd_audit(config_path, ov);
        }
        return cmd_report(report_dir);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "backtrack_audit: " << e.what() << "\n";
        return 1;
    }
}
