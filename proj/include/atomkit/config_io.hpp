#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "atomkit/curation.hpp"
#include "atomkit/model.hpp"
#include "atomkit/training.hpp"
#include "atomkit/trajectory.hpp"

namespace atomkit {

using Json = nlohmann::ordered_json;

std::string to_string(SymmetryMode mode);
std::string to_string(LiftingKind kind);
std::string to_string(DiscretizationStrategy strategy);
std::string to_string(ToyPotential potential);
SymmetryMode parse_symmetry_mode(const std::string& s);
LiftingKind parse_lifting_kind(const std::string& s);
DiscretizationStrategy parse_strategy(const std::string& s);
ToyPotential parse_potential(const std::string& s);

Json to_json(const AtomModelConfig& c);
Json to_json(const TrainRunConfig& c);
Json to_json(const ToyConfig& c);
Json to_json(const SelectionConfig& c);

// Each reader starts from `base` and overrides the fields present in `j`.
// Unknown keys and wrongly typed values raise ConfigError naming the key.
AtomModelConfig model_config_from_json(const Json& j, AtomModelConfig base = {});
TrainRunConfig train_config_from_json(const Json& j, TrainRunConfig base = {});
ToyConfig toy_config_from_json(const Json& j, ToyConfig base = {});
SelectionConfig selection_config_from_json(const Json& j, SelectionConfig base = {});

/// Parses a JSON file; syntax errors become ConfigError with the path.
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace atomkit
