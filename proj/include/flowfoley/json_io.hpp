#pragma once

#include "flowfoley/flow.hpp"
#include "flowfoley/mmdit.hpp"
#include "flowfoley/sampler.hpp"
#include "flowfoley/synthdata.hpp"

#include "json.hpp"

// JSON conversions for the config structs. nlohmann keeps object keys
// sorted, so dump() of any of these is canonical.
namespace ff {

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const GuidanceSpec& g);
void from_json(const nlohmann::json& j, GuidanceSpec& g);

void to_json(nlohmann::json& j, const SampleSpec& s);
void from_json(const nlohmann::json& j, SampleSpec& s);

std::string canonical_json(const nlohmann::json& j);

}  // namespace ff

namespace ff::synth {

void to_json(nlohmann::json& j, const WorldConfig& w);
void from_json(const nlohmann::json& j, WorldConfig& w);

void to_json(nlohmann::json& j, const Event& e);
void from_json(const nlohmann::json& j, Event& e);

void to_json(nlohmann::json& j, const EventScript& s);
void from_json(const nlohmann::json& j, EventScript& s);

}  // namespace ff::synth
