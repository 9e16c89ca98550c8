#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "flowfoley/checkpoint.hpp"
#include "flowfoley/cli_commands.hpp"
#include "flowfoley/errors.hpp"
#include "flowfoley/hash.hpp"
#include "flowfoley/synthdata.hpp"
#include "flowfoley/tensor_io.hpp"

using namespace ff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fftest-" + std::to_string(Rng(std::random_device{}()).next_u64()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

cli::RunConfig tiny_run(std::uint64_t seed) {
    cli::RunConfig run = cli::load_run_config("", {}, seed, std::nullopt);
    run.gen_records = 9;
    run.train.steps = 10;
    run.train.batch_size = 2;
    run.train.learning_rate = 1e-3f;
    run.sample.steps = 6;
    return run;
}

nlohmann::json read_json(const std::string& path) {
    return nlohmann::json::parse(read_file_bytes(path));
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("gen-data: manifest counts, qc conservation, byte determinism") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1001);
    std::string out = dir / "data.ffds";
    cli::cmd_gen_data(run, out);

    synth::Dataset ds = synth::read_dataset_file(out);
    nlohmann::json manifest = read_json(cli::manifest_path_for(out));

    std::int64_t kept = manifest["qc"]["kept"].get<std::int64_t>();
    std::int64_t dropped = manifest["qc"]["dropped"].get<std::int64_t>();
    CHECK(kept + dropped == 9);
    CHECK(kept == static_cast<std::int64_t>(ds.records.size()));
    CHECK(manifest["qc"]["threshold"].get<double>() == doctest::Approx(0.2));

    REQUIRE(kept == 9);  // this world keeps everything at the default threshold
    CHECK(manifest["counts"]["easy"].get<int>() == 3);
    CHECK(manifest["counts"]["medium"].get<int>() == 3);
    CHECK(manifest["counts"]["hard"].get<int>() == 3);
    CHECK(manifest["audit"]["indices"].size() == 1);  // ceil(0.05 * 9)
    CHECK(manifest["audit"]["recalibration_trigger"].get<double>() == doctest::Approx(0.05));
    CHECK(manifest.contains("run_config"));

    std::string again = dir / "data2.ffds";
    cli::cmd_gen_data(run, again);
    CHECK(sha256_hex(read_file_bytes(out)) == sha256_hex(read_file_bytes(again)));
}

TEST_CASE("config: file merge, dotted overrides, unknown keys rejected") {
    TempDir dir;
    std::string cfg_path = dir / "run.json";
    write_file_bytes(cfg_path, R"({"train": {"steps": 123}})");
    cli::RunConfig run = cli::load_run_config(cfg_path, {"train.batch_size=7", "world.vocab=5"},
                                              std::nullopt, std::nullopt);
    CHECK(run.train.steps == 123);
    CHECK(run.train.batch_size == 7);
    CHECK(run.world.vocab == 5);

    // Defaults carry the published training constants.
    cli::RunConfig defaults = cli::load_run_config("", {}, std::nullopt, std::nullopt);
    CHECK(defaults.train.learning_rate == doctest::Approx(1e-4f));
    CHECK(defaults.train.p_drop == doctest::Approx(0.2f));
    CHECK(defaults.train.ema_decay == doctest::Approx(0.999f));
    CHECK(defaults.qc_threshold == doctest::Approx(0.2f));
    CHECK(defaults.audit_fraction == doctest::Approx(0.05f));

    write_file_bytes(cfg_path, R"({"wrold": {}})");
    CHECK_THROWS_WITH_AS(cli::load_run_config(cfg_path, {}, std::nullopt, std::nullopt),
                         doctest::Contains("wrold"), ValidationError);
    write_file_bytes(cfg_path, R"({"train": {"stepz": 5}})");
    CHECK_THROWS_WITH_AS(cli::load_run_config(cfg_path, {}, std::nullopt, std::nullopt),
                         doctest::Contains("train.stepz"), ValidationError);
}

TEST_CASE("train: smoke run produces a loadable checkpoint and does not mutate inputs") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1002);
    std::string data = dir / "data.ffds";
    cli::cmd_gen_data(run, data);
    std::string before = sha256_hex(read_file_bytes(data));

    std::string prefix = dir / "model";
    cli::cmd_train(run, data, prefix);
    CHECK(sha256_hex(read_file_bytes(data)) == before);

    Checkpoint ck = read_checkpoint_file(prefix + ".ffck");
    CHECK(ck.config.hidden_size == run.model.hidden_size);
    CHECK(ck.params.tensors.size() == ck.ema.tensors.size());

    // Loss log: one JSON object per step with the logged fields.
    std::ifstream log(prefix + ".loss.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.contains("step"));
        CHECK(j.contains("loss"));
        CHECK(j.contains("grad_norm"));
        CHECK(j.contains("wall_ms"));
        lines += 1;
    }
    CHECK(lines == 10);

    auto [state, cfg] = read_train_state_file(prefix + ".state");
    CHECK(state.step == 10);
}

TEST_CASE("stage pipeline: outputs, sidecars, preservation and degeneracy") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1003);
    std::string data = dir / "data.ffds";
    cli::cmd_gen_data(run, data);
    std::string prefix = dir / "model";
    cli::cmd_train(run, data, prefix);

    cli::SampleArgs args;
    args.checkpoint_path = prefix + ".ffck";
    args.dataset_path = data;
    args.record = 0;

    std::string s1 = dir / "stage1.fft";
    cli::cmd_stage1(run, args, s1);
    Tensor latent1 = read_tensor_file(s1);
    CHECK(latent1.shape() == std::vector<std::int64_t>{run.model.latent_len, run.model.latent_dim});
    nlohmann::json side1 = read_json(cli::sidecar_path_for(s1));
    CHECK(side1["command"] == "stage1");
    CHECK(side1.contains("bundle_fingerprint"));
    CHECK(side1.contains("run_config"));

    std::string s2 = dir / "stage2.fft";
    args.context_path = s1;
    args.roi_event = 0;
    cli::cmd_stage2(run, args, s2);
    CHECK(read_tensor_file(s2).shape() == latent1.shape());

    // Stage3 inpaint preserves the visible context frames bit-exactly.
    synth::Dataset ds = synth::read_dataset_file(data);
    std::string truth = dir / "truth.fft";
    write_tensor_file(ds.records[0].x1, truth);
    std::string s3 = dir / "stage3.fft";
    args.context_path = truth;
    args.op = "inpaint";
    args.span_start = 2;
    args.span_len = 3;
    cli::cmd_stage3(run, args, s3);
    Tensor edited = read_tensor_file(s3);
    for (std::int64_t f = 0; f < run.model.latent_len; ++f) {
        if (f >= 2 && f < 5) continue;  // the hole
        for (std::int64_t c = 0; c < run.model.latent_dim; ++c) {
            CHECK(edited.at(f, c) == ds.records[0].x1.at(f, c));
        }
    }

    // Zero-weight guidance makes stage2 collapse onto the unconditional
    // sample for the same seed.
    cli::RunConfig zero = run;
    zero.sample.guidance.joint_weight = 0.0f;
    std::string s2z = dir / "stage2-zero.fft";
    args.context_path = s1;
    cli::cmd_stage2(zero, args, s2z);
    cli::SampleArgs unc;
    unc.checkpoint_path = prefix + ".ffck";
    unc.unconditional = true;
    std::string su = dir / "uncond.fft";
    cli::cmd_sample(zero, unc, su);
    CHECK(read_file_bytes(s2z).substr(0) == read_file_bytes(su));

    // Stage3 remove rewrites the CoT for the reduced script.
    std::string s3r = dir / "stage3-remove.fft";
    args.op = "remove";
    args.event_index = 0;
    args.context_path = truth;
    cli::cmd_stage3(run, args, s3r);
    nlohmann::json side3 = read_json(cli::sidecar_path_for(s3r));
    CHECK(side3["op"] == "remove");
}

TEST_CASE("sample: byte-reproducible artifacts") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1004);
    std::string data = dir / "data.ffds";
    cli::cmd_gen_data(run, data);
    std::string prefix = dir / "model";
    cli::cmd_train(run, data, prefix);

    cli::SampleArgs args;
    args.checkpoint_path = prefix + ".ffck";
    args.dataset_path = data;
    args.record = 1;
    std::string a = dir / "a.fft";
    std::string b = dir / "b.fft";
    cli::cmd_sample(run, args, a);
    cli::cmd_sample(run, args, b);
    CHECK(read_file_bytes(a) == read_file_bytes(b));
}

TEST_CASE("eval: report carries metrics and provenance") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1005);
    std::string data = dir / "data.ffds";
    cli::cmd_gen_data(run, data);
    std::string prefix = dir / "model";
    cli::cmd_train(run, data, prefix);

    std::string report_path = dir / "report.json";
    cli::cmd_eval(run, prefix + ".ffck", data, report_path);
    nlohmann::json report = read_json(report_path);
    CHECK(report.contains("fd"));
    CHECK(report.contains("kl"));
    CHECK(report.contains("clap_cot"));
    CHECK(report.contains("clap_cap"));
    CHECK(report.contains("desync"));
    CHECK(report.contains("run_config"));
    CHECK(report["protocol"].contains("scorer_seed"));
    CHECK(std::isfinite(report["fd"].get<double>()));
}

TEST_CASE("gradcheck: passes clean and flags injected faults") {
    TempDir dir;
    cli::RunConfig run = tiny_run(1006);
    std::string report_path = dir / "gradcheck.json";
    CHECK(cli::cmd_gradcheck(run, report_path));
    nlohmann::json report = read_json(report_path);
    CHECK(report["pass"].get<bool>());
    for (const auto& entry : report["entries"]) CHECK(entry["pass"].get<bool>());

    CHECK_FALSE(cli::cmd_gradcheck(run, dir / "gradcheck-corrupt.json", /*corrupt=*/true));
}

#ifdef FF_CLI_PATH
TEST_CASE("binary: stable exit codes") {
    TempDir dir;
    std::string cli = FF_CLI_PATH;
    auto run_cmd = [&](const std::string& args) {
        std::string cmd = cli + " " + args + " >/dev/null 2>&1";
        int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run_cmd("") == 2);                 // usage error
    CHECK(run_cmd("frobnicate") == 2);       // unknown subcommand
    std::string bad_cfg = dir / "bad.json";
    write_file_bytes(bad_cfg, R"({"whirled": {}})");
    CHECK(run_cmd("gen-data --config " + bad_cfg + " --out " + (dir / "x.ffds")) == 3);
    CHECK(run_cmd("train --dataset " + (dir / "missing.ffds") + " --out " + (dir / "m")) == 3);
    CHECK(run_cmd("gen-data --out " + (dir / "ok.ffds") + " --set gen.records=4") == 0);
}
#endif

TEST_SUITE_END();
