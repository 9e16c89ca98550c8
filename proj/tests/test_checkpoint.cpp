#include <sstream>

#include "doctest.h"
#include "flowfoley/checkpoint.hpp"
#include "flowfoley/errors.hpp"
#include "flowfoley/flow.hpp"
#include "flowfoley/mmdit.hpp"

using namespace ff;

TEST_SUITE_BEGIN("checkpoint");

namespace {
std::string to_bytes(const Checkpoint& ck) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(ck, os);
    return os.str();
}
}  // namespace

TEST_CASE("checkpoint round-trips params and ema bit-exactly") {
    ModelConfig cfg = ModelConfig::toy();
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 31);
    ck.ema = init_params(cfg, 32, /*zero_gates=*/false);

    std::string bytes = to_bytes(ck);
    std::istringstream is(bytes, std::ios::binary);
    Checkpoint back = read_checkpoint(is);

    REQUIRE(back.params.tensors.size() == ck.params.tensors.size());
    REQUIRE(back.ema.tensors.size() == ck.ema.tensors.size());
    for (const auto& [name, t] : ck.params.tensors) CHECK(back.params.at(name) == t);
    for (const auto& [name, t] : ck.ema.tensors) CHECK(back.ema.at(name) == t);
    CHECK(back.config.hidden_size == cfg.hidden_size);
    CHECK(back.config.latent_len == cfg.latent_len);

    // Same state serializes to the same bytes.
    CHECK(to_bytes(back) == bytes);
}

TEST_CASE("checkpoint detects corruption through the CRC trailer") {
    ModelConfig cfg = ModelConfig::toy();
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 33);
    ck.ema = ck.params;
    std::string bytes = to_bytes(ck);

    std::string corrupted = bytes;
    corrupted[corrupted.size() / 2] ^= 0x40;
    std::istringstream is(corrupted, std::ios::binary);
    CHECK_THROWS_AS(read_checkpoint(is), FormatError);

    std::string bad_version = bytes;
    bad_version[4] = 9;  // version without fixing the CRC
    std::istringstream is2(bad_version, std::ios::binary);
    CHECK_THROWS_AS(read_checkpoint(is2), FormatError);
}

TEST_CASE("training state round-trips everything resume needs") {
    ModelConfig cfg = ModelConfig::toy();
    TrainConfig tc;
    tc.seed = 77;
    TrainingState st = init_training_state(cfg, tc);
    st.step = 123;
    st.rng_state = 0xDEADBEEFCAFEF00DULL;
    st.adam_m.at("out.w")[0] = 0.25f;
    st.adam_v.at("out.w")[0] = 0.5f;

    std::ostringstream os(std::ios::binary);
    write_train_state(st, cfg, os);
    std::istringstream is(os.str(), std::ios::binary);
    auto [back, cfg2] = read_train_state(is);

    CHECK(back.step == st.step);
    CHECK(back.rng_state == st.rng_state);
    CHECK(cfg2.hidden_size == cfg.hidden_size);
    for (const auto& [name, t] : st.params.tensors) CHECK(back.params.at(name) == t);
    for (const auto& [name, t] : st.adam_m) CHECK(back.adam_m.at(name) == t);
    for (const auto& [name, t] : st.adam_v) CHECK(back.adam_v.at(name) == t);
}

TEST_CASE("parameter set is a pure function of the config") {
    ModelConfig cfg = ModelConfig::toy();
    auto spec1 = param_spec(cfg);
    auto spec2 = param_spec(cfg);
    REQUIRE(spec1.size() == spec2.size());
    for (std::size_t i = 0; i < spec1.size(); ++i) {
        CHECK(spec1[i].first == spec2[i].first);
        CHECK(spec1[i].second == spec2[i].second);
    }
    ModelParams a = init_params(cfg, 5);
    ModelParams b = init_params(cfg, 5);
    for (const auto& [name, t] : a.tensors) CHECK(b.at(name) == t);
}

TEST_SUITE_END();
