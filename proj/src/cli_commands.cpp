#include "flowfoley/cli_commands.hpp"

#include <fstream>
#include <set>

#include "flowfoley/checkpoint.hpp"
#include "flowfoley/errors.hpp"
#include "flowfoley/gradcheck.hpp"
#include "flowfoley/hash.hpp"
#include "flowfoley/json_io.hpp"
#include "flowfoley/tensor_io.hpp"

namespace ff::cli {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& prefix) {
    if (!j.is_object()) throw ValidationError("config: " + prefix + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ValidationError("config: unknown key " +
                                  (prefix.empty() ? it.key() : prefix + "." + it.key()));
        }
    }
}

metrics::ScorerSuite suite_for(const RunConfig& run) {
    return metrics::ScorerSuite::seeded(run.suite_seed, run.world.latent_dim, run.world.text_dim,
                                        run.world.caption_dim, run.world.sync_dim);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_file_bytes(path, j.dump(2) + "\n");
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["world"] = world;
    j["model"] = model;
    j["train"] = train;
    j["sample"] = sample;
    j["metrics"] = nlohmann::json{{"kl_reverse", kl_reverse}, {"threads", threads}};
    j["gen"] = nlohmann::json{{"records", gen_records},
                              {"qc_threshold", qc_threshold},
                              {"audit_fraction", audit_fraction}};
    j["eval"] = nlohmann::json{{"suite_seed", suite_seed}, {"use_ema", eval_use_ema}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    check_keys(j, {"world", "model", "train", "sample", "metrics", "gen", "eval"}, "");
    RunConfig run;
    if (j.contains("world")) {
        check_keys(j.at("world"),
                   {"vocab", "latent_len", "latent_dim", "video_len", "video_dim", "text_dim",
                    "caption_dim", "sync_dim", "max_events", "noise_sigma", "ambient_scale",
                    "cot_jitter", "clip_seconds", "seed"},
                   "world");
        j.at("world").get_to(run.world);
    }
    if (j.contains("model")) {
        check_keys(j.at("model"),
                   {"hidden_size", "heads", "multistream_layers", "singlestream_layers",
                    "latent_dim", "latent_len", "video_dim", "text_dim", "caption_dim", "sync_dim",
                    "mlp_ratio", "nearest_upsample", "ln_eps"},
                   "model");
        j.at("model").get_to(run.model);
    }
    if (j.contains("train")) {
        check_keys(j.at("train"),
                   {"steps", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
                    "weight_decay", "p_drop", "ema_decay", "context_task_fraction", "mode", "seed",
                    "checkpoint_every", "model_seed"},
                   "train");
        j.at("train").get_to(run.train);
    }
    if (j.contains("sample")) {
        check_keys(j.at("sample"), {"steps", "solver", "seed", "guidance"}, "sample");
        j.at("sample").get_to(run.sample);
    }
    if (j.contains("metrics")) {
        check_keys(j.at("metrics"), {"kl_reverse", "threads"}, "metrics");
        if (j.at("metrics").contains("kl_reverse")) {
            j.at("metrics").at("kl_reverse").get_to(run.kl_reverse);
        }
        if (j.at("metrics").contains("threads")) j.at("metrics").at("threads").get_to(run.threads);
    }
    if (j.contains("gen")) {
        check_keys(j.at("gen"), {"records", "qc_threshold", "audit_fraction"}, "gen");
        if (j.at("gen").contains("records")) j.at("gen").at("records").get_to(run.gen_records);
        if (j.at("gen").contains("qc_threshold")) {
            j.at("gen").at("qc_threshold").get_to(run.qc_threshold);
        }
        if (j.at("gen").contains("audit_fraction")) {
            j.at("gen").at("audit_fraction").get_to(run.audit_fraction);
        }
    }
    if (j.contains("eval")) {
        check_keys(j.at("eval"), {"suite_seed", "use_ema"}, "eval");
        if (j.at("eval").contains("suite_seed")) j.at("eval").at("suite_seed").get_to(run.suite_seed);
        if (j.at("eval").contains("use_ema")) j.at("eval").at("use_ema").get_to(run.eval_use_ema);
    }
    return run;
}

void RunConfig::validate() const {
    world.validate();
    model.validate();
    train.validate();
    sample.validate();
    auto match = [](std::int64_t a, std::int64_t b, const char* key) {
        if (a != b) {
            throw ValidationError(std::string("config: world.") + key + " and model." + key +
                                  " disagree (" + std::to_string(a) + " vs " + std::to_string(b) +
                                  ")");
        }
    };
    match(world.latent_len, model.latent_len, "latent_len");
    match(world.latent_dim, model.latent_dim, "latent_dim");
    match(world.video_dim, model.video_dim, "video_dim");
    match(world.text_dim, model.text_dim, "text_dim");
    match(world.caption_dim, model.caption_dim, "caption_dim");
    match(world.sync_dim, model.sync_dim, "sync_dim");
    if (gen_records < 1) throw ValidationError("config: gen.records must be positive");
    if (qc_threshold <= 0.0f || qc_threshold >= 1.0f) {
        throw ValidationError("config: gen.qc_threshold must lie in (0,1)");
    }
    if (audit_fraction <= 0.0f || audit_fraction > 1.0f) {
        throw ValidationError("config: gen.audit_fraction must lie in (0,1]");
    }
    if (threads < 1) throw ValidationError("config: metrics.threads must be >= 1");
}

namespace {

// Applies "a.b.c=value" onto a JSON tree; the value parses as JSON when it
// can, otherwise it is taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("config override must look like path.to.key=value, got \"" +
                              assignment + "\"");
    }
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;

    nlohmann::json* cursor = &j;
    std::size_t start = 0;
    while (true) {
        std::size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ValidationError("config override has an empty path segment");
        if (dot == std::string::npos) {
            (*cursor)[key] = parsed;
            break;
        }
        cursor = &(*cursor)[key];
        start = dot + 1;
    }
}

}  // namespace

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed, std::optional<int> threads) {
    nlohmann::json j = RunConfig{}.to_json();
    if (!config_path.empty()) {
        nlohmann::json file = nlohmann::json::parse(read_file_bytes(config_path), nullptr, false);
        if (file.is_discarded()) throw ValidationError("config: " + config_path + " is not valid JSON");
        j.update(file, /*merge_objects=*/true);
    }
    for (const std::string& o : overrides) apply_override(j, o);
    if (seed) {
        j["world"]["seed"] = *seed;
        j["train"]["seed"] = *seed;
        j["sample"]["seed"] = *seed;
        j["eval"]["suite_seed"] = *seed;
    }
    if (threads) j["metrics"]["threads"] = *threads;
    RunConfig run = RunConfig::from_json(j);
    run.validate();
    return run;
}

std::string manifest_path_for(const std::string& dataset_path) {
    return dataset_path + ".manifest.json";
}

std::string sidecar_path_for(const std::string& artifact_path) { return artifact_path + ".json"; }

void cmd_gen_data(const RunConfig& run, const std::string& out_path) {
    run.validate();
    const synth::WorldConfig& world = run.world;
    Rng root(world.seed);

    std::vector<synth::DatasetRecord> records;
    records.reserve(static_cast<std::size_t>(run.gen_records));
    for (std::int64_t i = 0; i < run.gen_records; ++i) {
        Rng script_rng = root.derive("script").derive(static_cast<std::uint64_t>(i));
        Rng render_rng = root.derive("render").derive(static_cast<std::uint64_t>(i));
        synth::EventScript script = synth::random_script(world, script_rng);
        records.push_back(synth::render_record(script, world, render_rng));
    }

    std::int64_t regen_counter = 0;
    synth::QcResult qc = synth::qc_filter(
        std::move(records), run.qc_threshold, [&](const synth::DatasetRecord& rec) {
            Rng regen_rng = root.derive("qc-regen").derive(static_cast<std::uint64_t>(regen_counter++));
            return synth::regenerate_cot(rec, world, regen_rng);
        });

    std::vector<synth::RecordScores> scores;
    scores.reserve(qc.kept.size());
    for (const auto& rec : qc.kept) scores.push_back(rec.scores);
    std::vector<synth::Difficulty> labels;
    if (qc.kept.size() >= 3) {
        labels = synth::assign_difficulty(scores);
        for (std::size_t i = 0; i < labels.size(); ++i) qc.kept[i].difficulty = labels[i];
    }

    synth::Dataset ds;
    ds.world = world;
    ds.records = std::move(qc.kept);
    synth::write_dataset_file(ds, out_path);

    Rng audit_rng = root.derive("audit");
    std::vector<std::size_t> audit =
        synth::human_audit_sample(ds.records.size(), run.audit_fraction, audit_rng);

    nlohmann::json counts = {{"easy", 0}, {"medium", 0}, {"hard", 0}};
    nlohmann::json bands = {{"semantic", {{"easy", 0}, {"medium", 0}, {"hard", 0}}},
                            {"clap", {{"easy", 0}, {"medium", 0}, {"hard", 0}}},
                            {"temporal", {{"easy", 0}, {"medium", 0}, {"hard", 0}}},
                            {"complexity", {{"easy", 0}, {"medium", 0}, {"hard", 0}}}};
    for (const auto& rec : ds.records) {
        counts[synth::difficulty_name(rec.difficulty)] =
            counts[synth::difficulty_name(rec.difficulty)].get<int>() + 1;
        synth::BandLabels bl = synth::score_bands(rec.scores);
        auto bump = [&](const char* dim, synth::Difficulty d) {
            bands[dim][synth::difficulty_name(d)] = bands[dim][synth::difficulty_name(d)].get<int>() + 1;
        };
        bump("semantic", bl.semantic);
        bump("clap", bl.clap);
        bump("temporal", bl.temporal);
        bump("complexity", bl.complexity);
    }

    nlohmann::json manifest;
    manifest["counts"] = counts;
    manifest["bands"] = bands;
    manifest["qc"] = nlohmann::json{{"kept", qc.ledger.kept},
                                    {"regenerated", qc.ledger.regenerated},
                                    {"dropped", qc.ledger.dropped},
                                    {"threshold", qc.ledger.threshold}};
    manifest["audit"] = nlohmann::json{{"fraction", run.audit_fraction},
                                       {"indices", audit},
                                       {"recalibration_trigger", 0.05}};
    manifest["records_requested"] = run.gen_records;
    manifest["records_written"] = ds.records.size();
    manifest["dataset_sha256"] = sha256_hex(read_file_bytes(out_path));
    manifest["run_config"] = run.to_json();
    write_json_file(manifest_path_for(out_path), manifest);
}

void cmd_train(const RunConfig& run, const std::string& dataset_path, const std::string& out_prefix,
               const std::string& resume_state_path) {
    run.validate();
    synth::Dataset ds = synth::read_dataset_file(dataset_path);

    std::optional<TrainingState> resume;
    if (!resume_state_path.empty()) {
        auto [state, cfg] = read_train_state_file(resume_state_path);
        nlohmann::json a = cfg, b = run.model;
        if (a.dump() != b.dump()) {
            throw ValidationError("resume: train state was written under a different model config");
        }
        resume = std::move(state);
    }

    std::ofstream log(out_prefix + ".loss.jsonl",
                      resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log for write: " + out_prefix + ".loss.jsonl");

    auto sink = [&](const TrainingState& st, bool final) {
        std::string tag = final ? "" : ".step" + std::to_string(st.step);
        Checkpoint ck;
        ck.config = run.model;
        ck.params = st.params;
        ck.ema = st.ema;
        write_checkpoint_file(ck, out_prefix + tag + ".ffck");
        write_train_state_file(st, run.model, out_prefix + tag + ".state");
    };

    train(run.model, run.train, ds, std::move(resume), sink, &log);
    write_json_file(sidecar_path_for(out_prefix + ".ffck"), run.to_json());
}

ConditionBundle stage1_bundle(const synth::DatasetRecord& rec) {
    ConditionBundle b = rec.bundle;
    b.audio_context.reset();
    b.context_mask.reset();
    return b;
}

namespace {

Checkpoint load_model(const RunConfig& run, const std::string& path) {
    Checkpoint ck = read_checkpoint_file(path);
    nlohmann::json a = ck.config, b = run.model;
    if (a.dump() != b.dump()) {
        throw ValidationError("checkpoint model config does not match the run config");
    }
    return ck;
}

const synth::DatasetRecord& record_at(const synth::Dataset& ds, std::int64_t idx) {
    if (idx < 0 || idx >= static_cast<std::int64_t>(ds.records.size())) {
        throw ValidationError("record index " + std::to_string(idx) + " out of range (dataset has " +
                              std::to_string(ds.records.size()) + " records)");
    }
    return ds.records[static_cast<std::size_t>(idx)];
}

void write_sample_outputs(const RunConfig& run, const ConditionBundle& bundle, const Tensor& latent,
                          const std::string& out_path, const std::string& command,
                          const nlohmann::json& extra) {
    write_tensor_file(latent, out_path);
    nlohmann::json side;
    side["command"] = command;
    side["seed"] = run.sample.seed;
    side["steps"] = run.sample.steps;
    side["solver"] = solver_name(run.sample.solver);
    side["guidance"] = run.sample.guidance;
    side["bundle_fingerprint"] = bundle_fingerprint(bundle);
    side["run_config"] = run.to_json();
    for (auto it = extra.begin(); it != extra.end(); ++it) side[it.key()] = it.value();
    write_json_file(sidecar_path_for(out_path), side);
}

}  // namespace

void cmd_sample(const RunConfig& run, const SampleArgs& args, const std::string& out_path) {
    run.validate();
    Checkpoint ck = load_model(run, args.checkpoint_path);
    ModelParams& params = args.use_ema ? ck.ema : ck.params;
    ConditionBundle bundle;
    if (!args.unconditional) {
        synth::Dataset ds = synth::read_dataset_file(args.dataset_path);
        bundle = stage1_bundle(record_at(ds, args.record));
    }
    Tensor latent = sample(params, run.model, bundle, run.sample);
    write_sample_outputs(run, bundle, latent, out_path, "sample",
                         {{"record", args.record}, {"unconditional", args.unconditional}});
}

void cmd_stage1(const RunConfig& run, const SampleArgs& args, const std::string& out_path) {
    run.validate();
    Checkpoint ck = load_model(run, args.checkpoint_path);
    ModelParams& params = args.use_ema ? ck.ema : ck.params;
    synth::Dataset ds = synth::read_dataset_file(args.dataset_path);
    ConditionBundle bundle = stage1_bundle(record_at(ds, args.record));
    Tensor latent = sample(params, run.model, bundle, run.sample);
    write_sample_outputs(run, bundle, latent, out_path, "stage1", {{"record", args.record}});
}

void cmd_stage2(const RunConfig& run, const SampleArgs& args, const std::string& out_path) {
    run.validate();
    Checkpoint ck = load_model(run, args.checkpoint_path);
    ModelParams& params = args.use_ema ? ck.ema : ck.params;
    synth::Dataset ds = synth::read_dataset_file(args.dataset_path);
    const synth::DatasetRecord& rec = record_at(ds, args.record);
    if (args.context_path.empty()) {
        throw ValidationError("stage2 needs --context pointing at a stage1 output latent");
    }
    ConditionBundle bundle = stage1_bundle(rec);
    bundle.roi_feats = synth::roi_for_event(ds.world, rec.script, args.roi_event);
    bundle.audio_context = read_tensor_file(args.context_path);
    bundle.context_mask.emplace(static_cast<std::size_t>(run.model.latent_len), 1);
    Tensor latent = sample(params, run.model, bundle, run.sample);
    write_sample_outputs(run, bundle, latent, out_path, "stage2",
                         {{"record", args.record}, {"roi_event", args.roi_event}});
}

void cmd_stage3(const RunConfig& run, const SampleArgs& args, const std::string& out_path) {
    run.validate();
    Checkpoint ck = load_model(run, args.checkpoint_path);
    ModelParams& params = args.use_ema ? ck.ema : ck.params;
    synth::Dataset ds = synth::read_dataset_file(args.dataset_path);
    const synth::DatasetRecord& rec = record_at(ds, args.record);
    if (args.context_path.empty()) {
        throw ValidationError("stage3 needs --context pointing at the latent to edit");
    }
    EditOp op = edit_op_from_name(args.op);
    Tensor context = read_tensor_file(args.context_path);

    ConditionBundle bundle = stage1_bundle(rec);
    const std::int64_t len = run.model.latent_len;
    Rng span_rng = Rng(run.sample.seed).derive("stage3-span");
    switch (op) {
        case EditOp::inpaint: {
            std::int64_t span_len = args.span_len;
            std::int64_t span_start = args.span_start;
            if (span_len < 0) {
                EditExample e = mask_audio_context(context, {}, EditOp::inpaint, span_rng);
                bundle.context_mask = e.context_mask;
            } else {
                EditExample e = make_inpaint_example(context, span_start, span_len);
                bundle.context_mask = e.context_mask;
            }
            break;
        }
        case EditOp::extend: {
            std::int64_t hidden = args.hidden_len;
            if (hidden < 0) {
                EditExample e = mask_audio_context(context, {}, EditOp::extend, span_rng);
                bundle.context_mask = e.context_mask;
            } else {
                EditExample e = make_extend_example(context, hidden);
                bundle.context_mask = e.context_mask;
            }
            break;
        }
        case EditOp::add:
            bundle.context_mask.emplace(static_cast<std::size_t>(len), 1);
            break;
        case EditOp::remove: {
            bundle.context_mask.emplace(static_cast<std::size_t>(len), 1);
            if (args.event_index < 0 ||
                args.event_index >= static_cast<std::int64_t>(rec.script.events.size())) {
                throw ValidationError("stage3 remove: --event out of range");
            }
            synth::EventScript reduced = rec.script;
            reduced.events.erase(reduced.events.begin() + args.event_index);
            if (reduced.events.empty()) {
                bundle.cot_tokens.reset();
            } else {
                Rng cot_rng = Rng(run.sample.seed).derive("stage3-cot");
                bundle.cot_tokens = synth::cot_for_script(ds.world, reduced, cot_rng);
            }
            break;
        }
    }
    // For inpaint/extend the visible part of the context conditions the
    // model; hidden frames are zeroed exactly like the training examples.
    Tensor ctx_masked = context;
    if (op == EditOp::inpaint || op == EditOp::extend) {
        const auto& mask = *bundle.context_mask;
        for (std::int64_t f = 0; f < len; ++f) {
            if (mask[static_cast<std::size_t>(f)]) continue;
            for (std::int64_t c = 0; c < run.model.latent_dim; ++c) {
                ctx_masked[f * run.model.latent_dim + c] = 0.0f;
            }
        }
    }
    bundle.audio_context = ctx_masked;

    Tensor latent = edit_sample(params, run.model, bundle, op, run.sample);
    write_sample_outputs(run, bundle, latent, out_path, "stage3",
                         {{"record", args.record},
                          {"op", edit_op_name(op)},
                          {"event_index", args.event_index}});
}

void cmd_eval(const RunConfig& run, const std::string& checkpoint_path,
              const std::string& dataset_path, const std::string& out_path) {
    run.validate();
    Checkpoint ck = load_model(run, checkpoint_path);
    ModelParams& params = run.eval_use_ema ? ck.ema : ck.params;
    synth::Dataset ds = synth::read_dataset_file(dataset_path);
    if (ds.records.empty()) throw ValidationError("eval: dataset is empty");

    std::vector<metrics::EvalItem> gen, ref;
    gen.reserve(ds.records.size());
    ref.reserve(ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const synth::DatasetRecord& rec = ds.records[i];
        ConditionBundle bundle = stage1_bundle(rec);
        SampleSpec spec = run.sample;
        spec.seed = Rng(run.sample.seed).derive("eval").derive(i).state();
        Tensor latent = sample(params, run.model, bundle, spec);
        metrics::EvalItem g{latent, rec.bundle.cot_tokens, rec.bundle.caption_emb,
                            rec.bundle.sync_feats};
        metrics::EvalItem r{rec.x1, rec.bundle.cot_tokens, rec.bundle.caption_emb,
                            rec.bundle.sync_feats};
        gen.push_back(std::move(g));
        ref.push_back(std::move(r));
    }

    metrics::MetricProtocol protocol;
    protocol.kl_reverse = run.kl_reverse;
    protocol.clip_seconds = run.world.clip_seconds;
    protocol.window_seconds = std::min(4.8, static_cast<double>(run.world.clip_seconds));
    protocol.threads = run.threads;
    metrics::MetricReport report = metrics::evaluate(gen, ref, suite_for(run), protocol);

    nlohmann::json j = metrics::report_to_json(report);
    j["run_config"] = run.to_json();
    j["checkpoint"] = checkpoint_path;
    j["dataset"] = dataset_path;
    j["ema"] = run.eval_use_ema;
    write_json_file(out_path, j);
}

bool cmd_gradcheck(const RunConfig& run, const std::string& out_path, bool corrupt) {
    nlohmann::json report = gradcheck_report(run.suite_seed, corrupt);
    if (!out_path.empty()) write_json_file(out_path, report);
    return gradcheck_passed(report);
}

}  // namespace ff::cli
