#include "flowfoley/json_io.hpp"

#include "flowfoley/errors.hpp"

namespace ff {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"hidden_size", c.hidden_size},
                       {"heads", c.heads},
                       {"multistream_layers", c.multistream_layers},
                       {"singlestream_layers", c.singlestream_layers},
                       {"latent_dim", c.latent_dim},
                       {"latent_len", c.latent_len},
                       {"video_dim", c.video_dim},
                       {"text_dim", c.text_dim},
                       {"caption_dim", c.caption_dim},
                       {"sync_dim", c.sync_dim},
                       {"mlp_ratio", c.mlp_ratio},
                       {"nearest_upsample", c.nearest_upsample},
                       {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    j.at("hidden_size").get_to(c.hidden_size);
    j.at("heads").get_to(c.heads);
    j.at("multistream_layers").get_to(c.multistream_layers);
    j.at("singlestream_layers").get_to(c.singlestream_layers);
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("latent_len").get_to(c.latent_len);
    j.at("video_dim").get_to(c.video_dim);
    j.at("text_dim").get_to(c.text_dim);
    j.at("caption_dim").get_to(c.caption_dim);
    j.at("sync_dim").get_to(c.sync_dim);
    if (j.contains("mlp_ratio")) j.at("mlp_ratio").get_to(c.mlp_ratio);
    if (j.contains("nearest_upsample")) j.at("nearest_upsample").get_to(c.nearest_upsample);
    if (j.contains("ln_eps")) j.at("ln_eps").get_to(c.ln_eps);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"steps", c.steps},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"weight_decay", c.weight_decay},
                       {"p_drop", c.p_drop},
                       {"ema_decay", c.ema_decay},
                       {"context_task_fraction", c.context_task_fraction},
                       {"mode", c.mode == TrainMode::finetune ? "finetune" : "foundation"},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every},
                       {"model_seed", c.model_seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    if (j.contains("steps")) j.at("steps").get_to(c.steps);
    if (j.contains("batch_size")) j.at("batch_size").get_to(c.batch_size);
    if (j.contains("learning_rate")) j.at("learning_rate").get_to(c.learning_rate);
    if (j.contains("adam_beta1")) j.at("adam_beta1").get_to(c.adam_beta1);
    if (j.contains("adam_beta2")) j.at("adam_beta2").get_to(c.adam_beta2);
    if (j.contains("adam_eps")) j.at("adam_eps").get_to(c.adam_eps);
    if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
    if (j.contains("p_drop")) j.at("p_drop").get_to(c.p_drop);
    if (j.contains("ema_decay")) j.at("ema_decay").get_to(c.ema_decay);
    if (j.contains("context_task_fraction")) {
        j.at("context_task_fraction").get_to(c.context_task_fraction);
    }
    if (j.contains("mode")) {
        std::string m = j.at("mode").get<std::string>();
        if (m == "finetune") {
            c.mode = TrainMode::finetune;
        } else if (m == "foundation") {
            c.mode = TrainMode::foundation;
        } else {
            throw ValidationError("train config: unknown mode " + m);
        }
    }
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("checkpoint_every")) j.at("checkpoint_every").get_to(c.checkpoint_every);
    if (j.contains("model_seed")) j.at("model_seed").get_to(c.model_seed);
}

void to_json(nlohmann::json& j, const GuidanceSpec& g) {
    j = nlohmann::json{{"mode", g.mode == GuidanceMode::joint ? "joint" : "compositional"},
                       {"joint_weight", g.joint_weight},
                       {"per_modality_weights", g.per_modality_weights}};
}

void from_json(const nlohmann::json& j, GuidanceSpec& g) {
    g = GuidanceSpec{};
    if (j.contains("mode")) {
        std::string m = j.at("mode").get<std::string>();
        if (m == "joint") {
            g.mode = GuidanceMode::joint;
        } else if (m == "compositional") {
            g.mode = GuidanceMode::compositional;
        } else {
            throw ValidationError("guidance: unknown mode " + m);
        }
    }
    if (j.contains("joint_weight")) j.at("joint_weight").get_to(g.joint_weight);
    if (j.contains("per_modality_weights")) {
        j.at("per_modality_weights").get_to(g.per_modality_weights);
    }
}

void to_json(nlohmann::json& j, const SampleSpec& s) {
    j = nlohmann::json{{"steps", s.steps},
                       {"solver", solver_name(s.solver)},
                       {"seed", s.seed},
                       {"guidance", s.guidance}};
}

void from_json(const nlohmann::json& j, SampleSpec& s) {
    s = SampleSpec{};
    if (j.contains("steps")) j.at("steps").get_to(s.steps);
    if (j.contains("solver")) s.solver = solver_from_name(j.at("solver").get<std::string>());
    if (j.contains("seed")) j.at("seed").get_to(s.seed);
    if (j.contains("guidance")) j.at("guidance").get_to(s.guidance);
}

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

}  // namespace ff

namespace ff::synth {

void to_json(nlohmann::json& j, const WorldConfig& w) {
    j = nlohmann::json{{"vocab", w.vocab},
                       {"latent_len", w.latent_len},
                       {"latent_dim", w.latent_dim},
                       {"video_len", w.video_len},
                       {"video_dim", w.video_dim},
                       {"text_dim", w.text_dim},
                       {"caption_dim", w.caption_dim},
                       {"sync_dim", w.sync_dim},
                       {"max_events", w.max_events},
                       {"noise_sigma", w.noise_sigma},
                       {"ambient_scale", w.ambient_scale},
                       {"cot_jitter", w.cot_jitter},
                       {"clip_seconds", w.clip_seconds},
                       {"seed", w.seed}};
}

void from_json(const nlohmann::json& j, WorldConfig& w) {
    w = WorldConfig{};
    if (j.contains("vocab")) j.at("vocab").get_to(w.vocab);
    if (j.contains("latent_len")) j.at("latent_len").get_to(w.latent_len);
    if (j.contains("latent_dim")) j.at("latent_dim").get_to(w.latent_dim);
    if (j.contains("video_len")) j.at("video_len").get_to(w.video_len);
    if (j.contains("video_dim")) j.at("video_dim").get_to(w.video_dim);
    if (j.contains("text_dim")) j.at("text_dim").get_to(w.text_dim);
    if (j.contains("caption_dim")) j.at("caption_dim").get_to(w.caption_dim);
    if (j.contains("sync_dim")) j.at("sync_dim").get_to(w.sync_dim);
    if (j.contains("max_events")) j.at("max_events").get_to(w.max_events);
    if (j.contains("noise_sigma")) j.at("noise_sigma").get_to(w.noise_sigma);
    if (j.contains("ambient_scale")) j.at("ambient_scale").get_to(w.ambient_scale);
    if (j.contains("cot_jitter")) j.at("cot_jitter").get_to(w.cot_jitter);
    if (j.contains("clip_seconds")) j.at("clip_seconds").get_to(w.clip_seconds);
    if (j.contains("seed")) j.at("seed").get_to(w.seed);
}

void to_json(nlohmann::json& j, const Event& e) {
    j = nlohmann::json{
        {"type", e.type}, {"onset", e.onset}, {"duration", e.duration}, {"amplitude", e.amplitude}};
}

void from_json(const nlohmann::json& j, Event& e) {
    j.at("type").get_to(e.type);
    j.at("onset").get_to(e.onset);
    j.at("duration").get_to(e.duration);
    j.at("amplitude").get_to(e.amplitude);
}

void to_json(nlohmann::json& j, const EventScript& s) {
    j = nlohmann::json{{"events", s.events}, {"clip_seconds", s.clip_seconds}};
}

void from_json(const nlohmann::json& j, EventScript& s) {
    s = EventScript{};
    j.at("events").get_to(s.events);
    if (j.contains("clip_seconds")) j.at("clip_seconds").get_to(s.clip_seconds);
}

}  // namespace ff::synth
