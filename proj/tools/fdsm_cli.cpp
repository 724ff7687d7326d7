#include "fdsm/errors.hpp"
#include "fdsm/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

// "train.batch_size" -> "train-batch-size"
std::string flag_name(const std::string& dotted) {
    std::string out = dotted;
    std::replace(out.begin(), out.end(), '.', '-');
    std::replace(out.begin(), out.end(), '_', '-');
    return out;
}

struct ConfigOptions {
    std::string config_path;
    std::map<std::string, std::string> overrides;  // dotted key -> text
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts) {
    cmd->add_option("--config", opts.config_path, "JSON experiment config; flags override its values")
        ->check(CLI::ExistingFile);
    const json defaults = fdsm::to_json(fdsm::ExperimentConfig{});
    for (const std::string& key : fdsm::config_keys(defaults)) {
        auto* opt = cmd->add_option_function<std::string>(
            "--" + flag_name(key), [&opts, key](const std::string& v) { opts.overrides[key] = v; },
            "config key " + key);
        opt->group("Config overrides");
    }
}

// Defaults <- config file <- FDSM_SEED <- flags.
fdsm::ExperimentConfig resolve_config(const ConfigOptions& opts) {
    fdsm::ExperimentConfig base = opts.config_path.empty() ? fdsm::ExperimentConfig{} : fdsm::load_config(opts.config_path);
    fdsm::apply_env_overrides(base);
    json doc = fdsm::to_json(base);
    for (const auto& [key, value] : opts.overrides) fdsm::apply_override(doc, key, value);
    fdsm::ExperimentConfig cfg = fdsm::config_from_json(doc);
    cfg.validate();
    return cfg;
}

void write_json(const std::string& path, const json& j) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out) throw fdsm::ConfigError("cannot write " + path);
    out << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fdsm: frequency-aware diffusion for zero-shot action recognition on synthetic latents"};
    app.require_subcommand(1);

    ConfigOptions distill_cfg, train_cfg, eval_cfg, spectrum_cfg, ablate_cfg, export_cfg;
    std::string head_out = "head.ckpt";
    std::string head_in, model_out = "model.ckpt", metrics_out = "metrics.csv";
    std::string eval_model, eval_out = "-";
    std::string spectrum_model, spectrum_out = "-";
    std::string matrix_path, ablate_out = "ablation.csv";
    std::string export_out = "data.jsonl", export_split = "all";

    auto* distill = app.add_subcommand("distill", "Stage 1: train the intensity head");
    add_config_options(distill, distill_cfg);
    distill->add_option("--out", head_out, "head checkpoint path");

    auto* train = app.add_subcommand("train", "Stage 2: train the denoiser with a frozen head");
    add_config_options(train, train_cfg);
    train->add_option("--head", head_in, "head checkpoint from distill")->required()->check(CLI::ExistingFile);
    train->add_option("--out", model_out, "model checkpoint path");
    train->add_option("--metrics", metrics_out, "metrics CSV path");

    auto* eval = app.add_subcommand("eval", "Zero-shot accuracy on the unseen split");
    eval->add_option("--model", eval_model, "model checkpoint")->required()->check(CLI::ExistingFile);
    add_config_options(eval, eval_cfg);
    eval->add_option("--out", eval_out, "report path ('-' for stdout)");

    auto* spectrum = app.add_subcommand("analyze-spectrum", "Band energy of z0 estimates vs ground truth");
    spectrum->add_option("--model", spectrum_model, "model checkpoint")->required()->check(CLI::ExistingFile);
    add_config_options(spectrum, spectrum_cfg);
    spectrum->add_option("--out", spectrum_out, "report path ('-' for stdout)");

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate every cell of an override matrix");
    add_config_options(ablate, ablate_cfg);
    ablate->add_option("--matrix", matrix_path, "JSON with \"cells\" and/or \"sweeps\"")
        ->required()
        ->check(CLI::ExistingFile);
    ablate->add_option("--out", ablate_out, "CSV output path");

    auto* gen = app.add_subcommand("gen-data-export", "Write the synthetic dataset as JSON lines");
    add_config_options(gen, export_cfg);
    gen->add_option("--out", export_out, "JSONL output path");
    gen->add_option("--split", export_split, "seen, unseen or all")->check(CLI::IsMember({"seen", "unseen", "all"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*distill) {
            fdsm::run_distill(resolve_config(distill_cfg), head_out);
        } else if (*train) {
            fdsm::run_train(resolve_config(train_cfg), head_in, model_out, metrics_out);
        } else if (*eval) {
            // Only the eval/inference sections of these options are used; the rest comes from the checkpoint.
            const bool custom = !eval_cfg.config_path.empty() || !eval_cfg.overrides.empty();
            std::optional<fdsm::ExperimentConfig> override_cfg;
            if (custom) override_cfg = resolve_config(eval_cfg);
            write_json(eval_out, fdsm::run_eval(eval_model, override_cfg));
        } else if (*spectrum) {
            const bool custom = !spectrum_cfg.config_path.empty() || !spectrum_cfg.overrides.empty();
            std::optional<fdsm::ExperimentConfig> override_cfg;
            if (custom) override_cfg = resolve_config(spectrum_cfg);
            write_json(spectrum_out, fdsm::run_analyze_spectrum(spectrum_model, override_cfg));
        } else if (*ablate) {
            std::ifstream in(matrix_path);
            const auto cells = fdsm::parse_ablation_matrix(json::parse(in));
            const auto rows = fdsm::run_ablation(resolve_config(ablate_cfg), cells, ablate_out);
            const auto failed = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; });
            std::fprintf(stderr, "ablate: %zu cells, %td failed\n", rows.size(), failed);
        } else if (*gen) {
            const fdsm::ExperimentData data = fdsm::prepare_data(resolve_config(export_cfg));
            std::vector<fdsm::Sample> samples;
            if (export_split != "unseen") samples.insert(samples.end(), data.train.begin(), data.train.end());
            if (export_split != "seen") samples.insert(samples.end(), data.test.begin(), data.test.end());
            fdsm::export_jsonl(export_out, samples);
        }
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return 1;
    }
    return 0;
}
