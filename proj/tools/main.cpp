#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coetal/cli.hpp"

using namespace coetal;

namespace {

struct GlobalArgs {
    std::string config_path;
    cli::CommonFlags flags;
};

void add_common(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config_path, "configuration file (JSON with // comments)")
        ->required();
    cmd->add_option("--seed", args.flags.seed, "override the config seed");
    cmd->add_option("--shots", args.flags.shots, "support videos per episode");
    cmd->add_option("--t-snippets", args.flags.t_snippets, "snippet count after rescaling");
    cmd->add_option("--out", args.flags.out, "output directory");
    cmd->add_flag("--overwrite", args.flags.overwrite, "replace existing outputs");
}

int load_and_run(const GlobalArgs& args,
                 const std::function<int(const config::RunConfig&)>& body) {
    try {
        config::RunConfig cfg = config::load_config(args.config_path);
        cli::apply_overrides(cfg, args.flags);
        return body(cfg);
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return cli::exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::exit_io;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot temporal action localization with chain-of-evidence texts"};
    app.require_subcommand(1);

    GlobalArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, synth_args);

    GlobalArgs train_args;
    std::optional<std::string> train_manifest;
    CLI::App* train = app.add_subcommand("train", "episodic training");
    add_common(train, train_args);
    train->add_option("--manifest", train_manifest, "dataset manifest path");

    GlobalArgs eval_args;
    cli::EvalFlags eval_flags;
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eval_args);
    eval->add_option("--manifest", eval_flags.manifest, "dataset manifest path");
    eval->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint directory");
    eval->add_option("--split", eval_flags.split, "split to evaluate (train|val|test)");
    eval->add_option("--episodes", eval_flags.episodes, "episode count");
    eval->add_flag("--oracle-probs", eval_flags.oracle_probs,
                   "debug: use ground-truth masks as probabilities");
    eval->add_flag("--zero-probs", eval_flags.zero_probs, "debug: use all-zero probabilities");

    GlobalArgs gen_args;
    std::optional<std::string> gen_manifest;
    CLI::App* gentext = app.add_subcommand("gentext", "generate and verify chain texts");
    add_common(gentext, gen_args);
    gentext->add_option("--manifest", gen_manifest, "dataset manifest path");

    GlobalArgs verify_args;
    std::optional<std::string> verify_manifest;
    CLI::App* verify = app.add_subcommand("verify", "re-score existing texts");
    add_common(verify, verify_args);
    verify->add_option("--manifest", verify_manifest, "dataset manifest path");

    GlobalArgs plot_args;
    std::vector<std::string> plot_inputs;
    CLI::App* plot = app.add_subcommand("plot", "render metric charts");
    add_common(plot, plot_args);
    plot->add_option("inputs", plot_inputs, "metrics.jsonl and report.json files")->required();

    GlobalArgs cal_args;
    std::string labeled_path;
    CLI::App* calibrate = app.add_subcommand("calibrate", "sweep alpha on a labeled seed set");
    add_common(calibrate, cal_args);
    calibrate->add_option("--labeled", labeled_path, "labeled seed set JSON")->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed())
        return load_and_run(synth_args,
                            [&](const config::RunConfig& c) { return cli::cmd_synth(c, synth_args.flags); });
    if (train->parsed())
        return load_and_run(train_args, [&](const config::RunConfig& c) {
            return cli::cmd_train(c, train_args.flags, train_manifest);
        });
    if (eval->parsed())
        return load_and_run(eval_args, [&](const config::RunConfig& c) {
            return cli::cmd_eval(c, eval_args.flags, eval_flags);
        });
    if (gentext->parsed())
        return load_and_run(gen_args, [&](const config::RunConfig& c) {
            return cli::cmd_gentext(c, gen_args.flags, gen_manifest);
        });
    if (verify->parsed())
        return load_and_run(verify_args, [&](const config::RunConfig& c) {
            return cli::cmd_verify(c, verify_args.flags, verify_manifest);
        });
    if (plot->parsed())
        return load_and_run(plot_args, [&](const config::RunConfig& c) {
            return cli::cmd_plot(c, plot_args.flags, plot_inputs);
        });
    if (calibrate->parsed())
        return load_and_run(cal_args, [&](const config::RunConfig& c) {
            return cli::cmd_calibrate(c, cal_args.flags, labeled_path);
        });
    return cli::exit_config;
}
