#include "flowfoley/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "flowfoley/errors.hpp"
#include "flowfoley/flow.hpp"
#include "flowfoley/hash.hpp"
#include "flowfoley/json_io.hpp"
#include "flowfoley/tensor_io.hpp"

namespace ff {

namespace {

void write_param_section(const std::map<std::string, Tensor>& tensors, std::ostream& out) {
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_string(out, name);
        write_tensor(t, out);
    }
}

std::map<std::string, Tensor> read_param_section(std::istream& in, const char* what) {
    std::uint32_t count = get_u32(in, what);
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(in, what);
        tensors.emplace(std::move(name), read_tensor(in));
    }
    return tensors;
}

// Body serialized first so the CRC-32 trailer covers every prior byte.
void write_with_crc(std::ostream& out, const std::string& body) {
    put_bytes(out, body.data(), body.size());
    put_u32(out, crc32(body.data(), body.size()));
}

std::string read_all_check_crc(std::istream& in, const char* what) {
    std::ostringstream os;
    os << in.rdbuf();
    std::string all = os.str();
    if (all.size() < 4) throw FormatError(std::string(what) + ": too short", 0);
    std::string body = all.substr(0, all.size() - 4);
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
        stored |= std::uint32_t(static_cast<std::uint8_t>(all[body.size() + i])) << (8 * i);
    }
    std::uint32_t actual = crc32(body.data(), body.size());
    if (stored != actual) {
        throw FormatError(std::string(what) + ": CRC mismatch", body.size());
    }
    return body;
}

ModelConfig read_config_json(std::istream& in, const char* what) {
    std::string cj = get_string(in, what);
    nlohmann::json j = nlohmann::json::parse(cj, nullptr, false);
    if (j.is_discarded()) throw FormatError(std::string(what) + ": invalid config JSON", 8);
    return j.get<ModelConfig>();
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, std::ostream& out) {
    std::ostringstream body(std::ios::binary);
    put_bytes(body, "FFCK", 4);
    put_u32(body, kCheckpointVersion);
    nlohmann::json cj = ck.config;
    put_string(body, cj.dump());
    write_param_section(ck.params.tensors, body);
    write_param_section(ck.ema.tensors, body);
    write_with_crc(out, body.str());
}

Checkpoint read_checkpoint(std::istream& in) {
    std::string body = read_all_check_crc(in, "checkpoint");
    std::istringstream is(body, std::ios::binary);
    expect_magic(is, "FFCK", "checkpoint");
    std::uint32_t version = get_u32(is, "checkpoint version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    Checkpoint ck;
    ck.config = read_config_json(is, "checkpoint config");
    ck.params.tensors = read_param_section(is, "checkpoint params");
    ck.ema.tensors = read_param_section(is, "checkpoint ema");
    return ck;
}

void write_checkpoint_file(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    write_checkpoint(ck, f);
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return read_checkpoint(f);
}

void write_train_state(const TrainingState& state, const ModelConfig& cfg, std::ostream& out) {
    std::ostringstream body(std::ios::binary);
    put_bytes(body, "FFTS", 4);
    put_u32(body, kCheckpointVersion);
    nlohmann::json cj = cfg;
    put_string(body, cj.dump());
    put_u64(body, state.step);
    put_u64(body, state.rng_state);
    write_param_section(state.params.tensors, body);
    write_param_section(state.ema.tensors, body);
    write_param_section(state.adam_m, body);
    write_param_section(state.adam_v, body);
    write_with_crc(out, body.str());
}

std::pair<TrainingState, ModelConfig> read_train_state(std::istream& in) {
    std::string body = read_all_check_crc(in, "train state");
    std::istringstream is(body, std::ios::binary);
    expect_magic(is, "FFTS", "train state");
    std::uint32_t version = get_u32(is, "train state version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported train state version " + std::to_string(version), 4);
    }
    ModelConfig cfg = read_config_json(is, "train state config");
    TrainingState st;
    st.step = get_u64(is, "train state step");
    st.rng_state = get_u64(is, "train state rng");
    st.params.tensors = read_param_section(is, "train state params");
    st.ema.tensors = read_param_section(is, "train state ema");
    st.adam_m = read_param_section(is, "train state adam m");
    st.adam_v = read_param_section(is, "train state adam v");
    return {std::move(st), cfg};
}

void write_train_state_file(const TrainingState& state, const ModelConfig& cfg,
                            const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    write_train_state(state, cfg, f);
}

std::pair<TrainingState, ModelConfig> read_train_state_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    return read_train_state(f);
}

}  // namespace ff
