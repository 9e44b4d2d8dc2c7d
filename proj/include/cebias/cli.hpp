#pragma once

#include "cebias/compose.hpp"
#include "cebias/concept_embedding.hpp"
#include "cebias/dataset_index.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace cebias::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

enum class TrainOn { All, Variants, Originals };

/// One run's configuration: a JSON file whose relative paths resolve against
/// the file's directory, with command-line flags applied on top.
struct PipelineConfig {
    std::filesystem::path index;                     // concept dataset index (JSON lines)
    std::vector<std::filesystem::path> activations;  // activation manifests
    std::optional<std::filesystem::path> pool;
    std::optional<std::filesystem::path> exclusions;
    std::optional<std::filesystem::path> supercategories;  // default: built-in table
    std::filesystem::path output = "out";

    std::vector<std::string> models;
    std::vector<std::string> layers;
    std::vector<std::string> concepts;  // empty: every concept in the index
    Scheme scheme = Scheme::Net2Vec;
    DataTag data_tag = DataTag::Vanilla;
    TrainConfig train;
    TrainOn train_on = TrainOn::All;

    Technique technique = Technique::Paste;
    std::size_t variants = 1;
    std::optional<std::string> category;
    std::optional<Split> compose_split;
    bool pin_voronoi_background = false;

    std::map<std::string, std::filesystem::path> test_sets;  // bias-report category -> index
    std::optional<std::vector<std::string>> report_layers;   // default: all configured layers

    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const PipelineConfig& cfg);

// Entry point of the cebias binary; usable in-process.
int run(int argc, const char* const* argv);

}  // namespace cebias::cli
