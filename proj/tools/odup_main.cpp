#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odup/error.hpp"
#include "odup/pipeline.hpp"

namespace {

odup::ExperimentConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides,
                               const std::uint64_t* seed, const std::string& out) {
    odup::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = odup::ExperimentConfig::load(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw odup::Error(odup::ErrorKind::config, "--set expects key=value, got '" + kv + "'");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(' '));
            s.erase(s.find_last_not_of(' ') + 1);
            return s;
        };
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (seed != nullptr) cfg.seed = *seed;
    if (!out.empty()) cfg.out_dir = out;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"On-device embedding compression and update simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key = value experiment config")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--set", overrides, "override a config key (key=value); repeatable");

    auto* synth = app.add_subcommand("synth", "write a synthetic event log and dataset cache");
    auto* train = app.add_subcommand("train", "train the cloud recommender on every slice");
    auto* compress = app.add_subcommand("compress", "compress each slice's item table");
    auto* simulate = app.add_subcommand("simulate", "run the cloud/device update simulation");
    auto* report = app.add_subcommand("report", "summarise one or more simulation runs");
    std::vector<std::string> run_dirs;
    report->add_option("runs", run_dirs, "run directories holding report.csv and report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const std::uint64_t* seed_ptr = seed_opt->count() > 0 ? &seed : nullptr;
        if (*report) {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            std::cout << odup::cmd_report(dirs, out.empty() ? std::filesystem::path("report") : std::filesystem::path(out));
            return 0;
        }
        const auto cfg = resolve(config_path, overrides, seed_ptr, out);
        if (*synth) odup::cmd_synth(cfg);
        else if (*train) odup::cmd_train(cfg);
        else if (*compress) odup::cmd_compress(cfg);
        else if (*simulate) odup::cmd_simulate(cfg);
        std::cerr << "wrote " << cfg.out_dir.string() << "\n";
        return 0;
    } catch (const odup::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return odup::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
