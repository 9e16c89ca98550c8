#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "flowfoley/cli_commands.hpp"
#include "flowfoley/errors.hpp"

#include "CLI11.hpp"

namespace {

// Exit codes are a stable contract: 0 success, 2 usage, 3 validation,
// 4 numeric failure.
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

struct GlobalFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

ff::cli::RunConfig make_run(const GlobalFlags& g) {
    return ff::cli::load_run_config(g.config_path, g.overrides, g.seed, g.threads);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-matching multimodal foley sandbox"};
    app.require_subcommand(1);

    GlobalFlags flags;
    std::uint64_t seed_value = 0;
    int threads_value = 1;
    app.add_option("--config", flags.config_path, "Run config JSON file");
    app.add_option("--set", flags.overrides, "Dotted-path config override, e.g. train.steps=500");
    auto* seed_opt = app.add_option("--seed", seed_value, "Master seed override");
    auto* threads_opt = app.add_option("--threads", threads_value, "Worker threads for eval");

    std::string out_path, dataset_path, checkpoint_path, resume_path, report_path;
    ff::cli::SampleArgs sargs;
    bool corrupt = false;
    bool raw_params = false;

    // Global flags remain usable after the subcommand name.
    app.fallthrough();

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
    gen->add_option("--out", out_path, "Dataset output path")->required();

    auto* train = app.add_subcommand("train", "Train the velocity-field model");
    train->add_option("--dataset", dataset_path, "Dataset file")->required();
    train->add_option("--out", out_path, "Output prefix for checkpoints and logs")->required();
    train->add_option("--resume", resume_path, "Training state file to resume from");

    auto add_sample_common = [&](CLI::App* cmd, bool needs_record) {
        cmd->add_option("--checkpoint", sargs.checkpoint_path, "Model checkpoint")->required();
        cmd->add_option("--dataset", dataset_path, "Dataset file providing conditions");
        if (needs_record) cmd->add_option("--record", sargs.record, "Record index");
        cmd->add_option("--out", out_path, "Output latent path")->required();
        cmd->add_flag("--raw-params", raw_params, "Use raw instead of EMA parameters");
    };

    auto* sample = app.add_subcommand("sample", "Sample a latent clip");
    add_sample_common(sample, true);
    sample->add_flag("--unconditional", sargs.unconditional, "Ignore the dataset conditions");

    auto* stage1 = app.add_subcommand("stage1", "Foley generation from the full condition bundle");
    add_sample_common(stage1, true);

    auto* stage2 = app.add_subcommand("stage2", "Object-focused refinement with audio context");
    add_sample_common(stage2, true);
    stage2->add_option("--context", sargs.context_path, "Stage1 output latent")->required();
    stage2->add_option("--roi-event", sargs.roi_event, "Event index for the ROI track");

    auto* stage3 = app.add_subcommand("stage3", "Instruction-style editing of an existing latent");
    add_sample_common(stage3, true);
    stage3->add_option("--context", sargs.context_path, "Latent to edit")->required();
    stage3->add_option("--op", sargs.op, "inpaint | extend | add | remove")->required();
    stage3->add_option("--event", sargs.event_index, "Event index for add/remove");
    stage3->add_option("--span-start", sargs.span_start, "Inpaint span start frame");
    stage3->add_option("--span-len", sargs.span_len, "Inpaint span length");
    stage3->add_option("--hidden-len", sargs.hidden_len, "Extend hidden suffix length");

    auto* eval = app.add_subcommand("eval", "Objective metric report for a checkpoint");
    eval->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
    eval->add_option("--dataset", dataset_path, "Held-out dataset")->required();
    eval->add_option("--out", out_path, "Report JSON path")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gradcheck->add_option("--out", report_path, "Report JSON path");
    gradcheck->add_flag("--corrupt", corrupt, "Inject a fault to verify detection");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (seed_opt->count()) flags.seed = seed_value;
        if (threads_opt->count()) flags.threads = threads_value;
        sargs.use_ema = !raw_params;
        sargs.dataset_path = dataset_path;

        if (gen->parsed()) {
            ff::cli::cmd_gen_data(make_run(flags), out_path);
        } else if (train->parsed()) {
            ff::cli::cmd_train(make_run(flags), dataset_path, out_path, resume_path);
        } else if (sample->parsed()) {
            ff::cli::cmd_sample(make_run(flags), sargs, out_path);
        } else if (stage1->parsed()) {
            ff::cli::cmd_stage1(make_run(flags), sargs, out_path);
        } else if (stage2->parsed()) {
            ff::cli::cmd_stage2(make_run(flags), sargs, out_path);
        } else if (stage3->parsed()) {
            ff::cli::cmd_stage3(make_run(flags), sargs, out_path);
        } else if (eval->parsed()) {
            ff::cli::cmd_eval(make_run(flags), checkpoint_path, dataset_path, out_path);
        } else if (gradcheck->parsed()) {
            bool ok = ff::cli::cmd_gradcheck(make_run(flags), report_path, corrupt);
            if (!ok) {
                std::cerr << "gradcheck: tolerance exceeded\n";
                return kExitNumeric;
            }
        }
    } catch (const ff::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return 0;
}
