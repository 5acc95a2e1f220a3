// Command-line front end for the training engine: variant comparisons,
// learning-rate sweeps, eigenvalue snapshots and the gradient-noise study.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mlns/common.hpp"
#include "mlns/experiment.hpp"

namespace {

struct CliState {
    mlns::ExperimentConfig cfg;
    std::string config_path;
    std::vector<std::string> variants;
    std::vector<double> mus;
    std::vector<uint64_t> seeds;
    std::vector<int> analysis_steps;
    mlns::AnalyzeArgs analyze;
};

void add_common_flags(CLI::App* sub, CliState& st) {
    sub->add_option("--config", st.config_path, "key=value config file (flags override it)");
    sub->add_option("--out", st.cfg.out_dir, "output directory");
    sub->add_option("--seed", st.seeds, "training seed (repeatable)");
    sub->add_option("--variant", st.variants,
                    "baseline|batchnorm|bn_amplify|bn_suppress|bn_prior|nlms_l1|nlms_l2 "
                    "(repeatable)");
    sub->add_option("--mu-conv", st.mus, "learning rate for conv filter weights (repeatable)");
    sub->add_option("--mu-other", st.cfg.mu_other, "learning rate for all other parameters");
    sub->add_option("--epochs", st.cfg.epochs, "training epochs");
    sub->add_option("--batch-size", st.cfg.batch_size, "minibatch size");
    sub->add_option("--analysis-steps", st.analysis_steps,
                    "training steps at which eigen-snapshots are taken (repeatable)");
    sub->add_option("--analysis-batch", st.cfg.analysis_batch, "probe batch size for analysis");
    sub->add_option("--noise-alpha", st.cfg.noise_alpha,
                    "gradient noise scale (multiples of the local error std)");
    sub->add_option("--dataset", st.cfg.dataset, "mnist|synthetic");
    sub->add_option("--mnist-dir", st.cfg.mnist_dir, "directory with the IDX files");
    sub->add_option("--train-limit", st.cfg.train_limit, "training subset size (0 = all)");
    sub->add_option("--val-limit", st.cfg.val_limit, "validation subset size (0 = all)");
    sub->add_flag("--paper-scale", st.cfg.paper_scale,
                  "full-dataset 20-epoch 5-seed configuration");
    sub->add_option("--bn-threshold", st.cfg.bn_threshold, "power threshold for BN variants");
    sub->add_flag("--prose-mask", st.cfg.prose_mask,
                  "use the alternative (prose) threshold reading for BN variants");
    sub->add_option("--nlms-eps", st.cfg.nlms_eps, "NLMS denominator stabilizer");
    sub->add_flag("--freeze-fc", st.cfg.freeze_fc, "leave the FC layer untrained");
    sub->add_flag("--variant-conv2-only", st.cfg.variant_conv2_only,
                  "apply the variant's norm/NLMS to the second conv layer only");
    sub->add_flag("--pmd-exact", st.cfg.pmd_exact,
                  "bn_prior only: divide conv updates by gamma^2+beta^2 per channel");
    sub->add_flag("--no-propagate-upstream",
                  [&st](int64_t) { st.cfg.propagate_upstream = false; },
                  "restrict injected noise to the weight gradient");
    sub->add_flag("--fail-on-divergence", st.cfg.fail_on_divergence,
                  "exit 3 when any run diverges");
    sub->add_flag("--aggregate-only", st.cfg.aggregate_only,
                  "sweep: aggregate existing runs, never train");
    sub->add_option("--synth-channels", st.cfg.synth.channels, "synthetic: channel count");
    sub->add_option("--synth-powers", st.cfg.synth.powers, "synthetic: per-channel power");
    sub->add_option("--synth-rho", st.cfg.synth.rho, "synthetic: inter-channel correlation");
    sub->add_option("--synth-block", st.cfg.synth.block_size, "synthetic: rows per channel");
    sub->add_option("--synth-samples", st.cfg.synth.samples, "synthetic: column count");
    sub->add_option("--synth-seed", st.cfg.synth.seed, "synthetic: generator seed");
}

// Layer the three config sources: file < paper-scale defaults < explicit flags.
int assemble(CLI::App* sub, CliState& st, const std::string& command) {
    mlns::ExperimentConfig cfg;
    if (!st.config_path.empty()) cfg = mlns::load_config_file(st.config_path);
    cfg.command = command;

    auto passed = [&](const std::string& name) { return sub->count(name) > 0; };
    if (passed("--out")) cfg.out_dir = st.cfg.out_dir;
    if (passed("--paper-scale")) cfg.paper_scale = true;
    if (cfg.paper_scale) {
        cfg.train_limit = 0;
        cfg.val_limit = 0;
        cfg.epochs = command == "noise" ? 40 : 20;
        cfg.seeds = {1, 2, 3, 4, 5};
    } else if (command == "noise" && !passed("--epochs") && st.config_path.empty()) {
        cfg.epochs = 10;
    }
    if (!st.variants.empty()) {
        cfg.variants.clear();
        for (const auto& v : st.variants) cfg.variants.push_back(mlns::variant_from_string(v));
    }
    if (!st.mus.empty()) cfg.mu_conv = st.mus;
    if (!st.seeds.empty()) cfg.seeds = st.seeds;
    if (!st.analysis_steps.empty()) cfg.analysis_steps = st.analysis_steps;
    if (passed("--mu-other")) cfg.mu_other = st.cfg.mu_other;
    if (passed("--epochs")) cfg.epochs = st.cfg.epochs;
    if (passed("--batch-size")) cfg.batch_size = st.cfg.batch_size;
    if (passed("--analysis-batch")) cfg.analysis_batch = st.cfg.analysis_batch;
    if (passed("--noise-alpha")) cfg.noise_alpha = st.cfg.noise_alpha;
    if (passed("--dataset")) cfg.dataset = st.cfg.dataset;
    if (passed("--mnist-dir")) cfg.mnist_dir = st.cfg.mnist_dir;
    if (passed("--train-limit")) cfg.train_limit = st.cfg.train_limit;
    if (passed("--val-limit")) cfg.val_limit = st.cfg.val_limit;
    if (passed("--bn-threshold")) cfg.bn_threshold = st.cfg.bn_threshold;
    if (passed("--prose-mask")) cfg.prose_mask = true;
    if (passed("--nlms-eps")) cfg.nlms_eps = st.cfg.nlms_eps;
    if (passed("--freeze-fc")) cfg.freeze_fc = true;
    if (passed("--variant-conv2-only")) cfg.variant_conv2_only = true;
    if (passed("--pmd-exact")) cfg.pmd_exact = true;
    if (passed("--no-propagate-upstream")) cfg.propagate_upstream = false;
    if (passed("--fail-on-divergence")) cfg.fail_on_divergence = true;
    if (passed("--aggregate-only")) cfg.aggregate_only = true;
    if (passed("--synth-channels")) cfg.synth.channels = st.cfg.synth.channels;
    if (passed("--synth-powers")) cfg.synth.powers = st.cfg.synth.powers;
    if (passed("--synth-rho")) cfg.synth.rho = st.cfg.synth.rho;
    if (passed("--synth-block")) cfg.synth.block_size = st.cfg.synth.block_size;
    if (passed("--synth-samples")) cfg.synth.samples = st.cfg.synth.samples;
    if (passed("--synth-seed")) cfg.synth.seed = st.cfg.synth.seed;

    st.cfg = cfg;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CNN training engine with adaptive-filter instrumentation"};
    app.require_subcommand(1);

    CliState train_st, sweep_st, noise_st, analyze_st;
    auto* train = app.add_subcommand("train", "train (variant x mu x seed) runs");
    add_common_flags(train, train_st);
    auto* sweep = app.add_subcommand("sweep", "train a grid and aggregate quartile statistics");
    add_common_flags(sweep, sweep_st);
    auto* noise = app.add_subcommand(
        "noise", "gradient-noise study: frozen FC, variant on the second conv layer only");
    add_common_flags(noise, noise_st);

    auto* analyze = app.add_subcommand("analyze", "eigen-analysis of a checkpoint or run");
    add_common_flags(analyze, analyze_st);
    analyze->add_option("--run-dir", analyze_st.analyze.run_dir, "run directory to analyze");
    analyze->add_option("--checkpoint", analyze_st.analyze.checkpoint, "checkpoint file");
    analyze->add_option("--checkpoint-variant", analyze_st.analyze.variant,
                        "variant for a bare checkpoint");
    analyze->add_option("--step", analyze_st.analyze.step, "analysis step checkpoint to load");
    analyze->add_option("--mu", analyze_st.analyze.mu, "learning rate for tau/mu_max columns");
    analyze->add_option("--analyze-out", analyze_st.analyze.out_dir, "where to write the CSVs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            if (int rc = assemble(train, train_st, "train"); rc) return rc;
            return mlns::cmd_train(train_st.cfg);
        }
        if (sweep->parsed()) {
            if (int rc = assemble(sweep, sweep_st, "sweep"); rc) return rc;
            return mlns::cmd_sweep(sweep_st.cfg);
        }
        if (noise->parsed()) {
            if (int rc = assemble(noise, noise_st, "noise"); rc) return rc;
            return mlns::cmd_noise(noise_st.cfg);
        }
        if (analyze->parsed()) {
            if (int rc = assemble(analyze, analyze_st, "analyze"); rc) return rc;
            analyze_st.analyze.base = analyze_st.cfg;
            return mlns::cmd_analyze(analyze_st.analyze);
        }
    } catch (const mlns::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const mlns::io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
