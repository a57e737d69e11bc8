// mfm -- config-driven driver for the masked-feature-modeling training stack.
//
// Verbs:
//   run        train per config (every listed seed) and write run artifacts
//   eval       like run with steps forced to 0: score a fresh or warm-started model
//   sweep      vary one axis over a list of values, aggregate results in a CSV
//   gradcheck  run the double-precision gradient verification suite
//   datagen    render a synthetic two-domain dataset to PNG folders
//
// Exit codes: 0 success, 2 invalid configuration or usage, 3 numerical failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfm/gradsuite.hpp"
#include "mfm/harness.hpp"

namespace {

using namespace mfm;

std::vector<std::string> split_values(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : csv) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    for (const auto& v : out)
        if (v.empty()) throw ConfigError("sweep: --values contains an empty entry");
    return out;
}

ExperimentConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed,
                             const std::optional<std::string>& out) {
    ExperimentConfig cfg = ExperimentConfig::load(path);
    if (seed) cfg.seeds = {*seed};
    if (out) cfg.out_dir = *out;
    return cfg;
}

int report_experiment(const ExperimentResult& res) {
    for (const auto& r : res.runs) {
        if (r.failed)
            std::printf("seed %llu: FAILED (%s)\n", static_cast<unsigned long long>(r.seed),
                        r.error.c_str());
        else
            std::printf("seed %llu: target mIoU %.4f  (%s)\n",
                        static_cast<unsigned long long>(r.seed), r.final_miou,
                        r.run_dir.c_str());
    }
    int ok = 0;
    for (const auto& r : res.runs)
        if (!r.failed) ++ok;
    if (ok > 0) std::printf("mean target mIoU over %d run(s): %.4f\n", ok, res.mean_miou());
    return res.any_failed() ? 3 : 0;
}

int do_run(const std::string& config, const std::optional<std::uint64_t>& seed,
           const std::optional<std::string>& out, bool eval_only) {
    ExperimentConfig cfg = load_config(config, seed, out);
    if (eval_only) cfg.steps = 0;
    return report_experiment(run_experiment(cfg));
}

int do_sweep(const std::string& config, const std::optional<std::uint64_t>& seed,
             const std::optional<std::string>& out, const std::string& axis,
             const std::string& values_csv) {
    ExperimentConfig cfg = load_config(config, seed, out);
    std::vector<SweepRow> rows = run_sweep(cfg, axis, split_values(values_csv));
    bool failed = false;
    std::printf("%-12s %-12s %-6s %-12s %s\n", "axis", "value", "seed", "final_miou", "status");
    for (const auto& r : rows) {
        std::printf("%-12s %-12s %-6llu %-12.4f %s\n", axis.c_str(), r.value.c_str(),
                    static_cast<unsigned long long>(r.seed), r.failed ? 0.0 : r.final_miou,
                    r.failed ? "failed" : "ok");
        failed = failed || r.failed;
    }
    std::printf("table: %s/sweep.csv\n", cfg.out_dir.c_str());
    return failed ? 3 : 0;
}

int do_gradcheck(std::uint64_t seed) {
    GradSuiteResult res = run_gradient_suite(10, seed);
    std::printf("%-28s %-7s %-12s %s\n", "primitive", "cases", "max_rel_err", "status");
    for (const auto& row : res.primitives)
        std::printf("%-28s %-7d %-12.3e %s\n", primitive_name(row.op), row.cases, row.max_err,
                    row.max_err <= res.primitive_tol ? "ok" : "FAIL");
    std::printf("%-28s %-7s %-12.3e %s\n", "end-to-end composition", "1", res.composition_err,
                res.composition_err <= res.composition_tol ? "ok" : "FAIL");
    std::printf("suite time: %.1fs\n", res.seconds);
    if (!res.ok()) {
        std::fprintf(stderr, "gradcheck: analytic gradients disagree with central differences\n");
        return 3;
    }
    return 0;
}

int do_datagen(const std::string& config, const std::optional<std::uint64_t>& seed_opt,
               const std::optional<std::string>& out_opt) {
    ExperimentConfig cfg = ExperimentConfig::load(config);
    cfg.scene.validate();  // datagen always needs a valid scene spec
    const std::uint64_t seed = seed_opt ? *seed_opt : cfg.seeds.front();
    const std::string out = out_opt ? *out_opt : cfg.out_dir;

    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["count"] = cfg.train_scenes;
    manifest["classes"] = cfg.scene.classes;
    manifest["height"] = cfg.scene.height;
    manifest["width"] = cfg.scene.width;
    nlohmann::json stems = nlohmann::json::array();
    for (int i = 0; i < cfg.train_scenes; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%05d", i);
        write_scene(out + "/source", stem,
                    generate_pair(derive_seed(seed, "data-src", i), cfg.scene, Domain::source));
        write_scene(out + "/target", stem,
                    generate_pair(derive_seed(seed, "data-tgt", i), cfg.scene, Domain::target));
        stems.push_back(stem);
    }
    manifest["stems"] = stems;
    std::ofstream(std::filesystem::path(out) / "manifest.json") << manifest.dump(2) << "\n";
    std::printf("wrote %d scene pairs per domain under %s\n", cfg.train_scenes, out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-feature-modeling training harness"};
    app.require_subcommand(1);

    std::string config, out_str, axis, values_csv;
    std::uint64_t seed_val = 0;
    bool seed_set = false, out_set = false;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* c = cmd->add_option("--config", config, "JSON experiment config");
        if (need_config) c->required();
        cmd->add_option("--seed", seed_val, "override: run only this seed")
            ->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_str, "override: output directory")
            ->each([&](const std::string&) { out_set = true; });
    };

    CLI::App* run_cmd = app.add_subcommand("run", "train per config");
    add_common(run_cmd, true);
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate without training (steps=0)");
    add_common(eval_cmd, true);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "vary one axis over several values");
    add_common(sweep_cmd, true);
    sweep_cmd->add_option("--axis", axis, "config axis to vary")->required();
    sweep_cmd->add_option("--values", values_csv, "comma-separated values")->required();
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "gradient verification suite");
    grad_cmd->add_option("--seed", seed_val, "suite seed")
        ->each([&](const std::string&) { seed_set = true; });
    CLI::App* data_cmd = app.add_subcommand("datagen", "render a synthetic dataset to PNG");
    add_common(data_cmd, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // help/version exit clean; any usage error is code 2
    }

    const std::optional<std::uint64_t> seed =
        seed_set ? std::optional<std::uint64_t>(seed_val) : std::nullopt;
    const std::optional<std::string> out =
        out_set ? std::optional<std::string>(out_str) : std::nullopt;

    try {
        if (app.got_subcommand(run_cmd)) return do_run(config, seed, out, false);
        if (app.got_subcommand(eval_cmd)) return do_run(config, seed, out, true);
        if (app.got_subcommand(sweep_cmd)) return do_sweep(config, seed, out, axis, values_csv);
        if (app.got_subcommand(grad_cmd)) return do_gradcheck(seed ? *seed : 7);
        if (app.got_subcommand(data_cmd)) return do_datagen(config, seed, out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    }
    return 2;  // unreachable with require_subcommand(1)
}
