#pragma once

#include "cebias/tensor_io.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cebias {

enum class Scheme { Net2Vec, Loce, Gloce };
enum class DataTag { Vanilla, Places, Voronoi, Synthetic };

std::string_view to_string(Scheme s) noexcept;
std::string_view to_string(DataTag t) noexcept;
Scheme parse_scheme(std::string_view text);
DataTag parse_data_tag(std::string_view text);

struct TrainConfig {
    int epochs = 30;
    int batch_images = 256;   // whole images per optimizer step (global CEs)
    int batch_pixels = 512;   // pixels per optimizer step (local CEs)
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t common_size = 80;
    bool use_bias = true;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct CeMeta {
    std::string concept_name;
    std::string model;
    std::string layer;
    Scheme scheme = Scheme::Net2Vec;
    DataTag data_tag = DataTag::Vanilla;
    std::string sample;  // source image for local CEs, empty otherwise

    // Same (concept, model, layer); the key matched across data tags.
    bool same_target(const CeMeta& o) const {
        return concept_name == o.concept_name && model == o.model && layer == o.layer;
    }
};

// A linear classifier on activation-map pixels: logit = weights . a[:, p] + bias.
struct ConceptEmbedding {
    std::vector<double> weights;
    double bias = 0.0;
    CeMeta meta;
    std::optional<TrainConfig> train_config;

    std::size_t channels() const noexcept { return weights.size(); }
    bool operator==(const ConceptEmbedding& o) const { return weights == o.weights && bias == o.bias; }
};

void validate(const ConceptEmbedding& ce);

struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;
};

double sigmoid(double z) noexcept;

/// Per-pixel sigmoid(v . a[:, p] + bias). Channel mismatch is a Shape error.
Heatmap predict_heatmap(const ConceptEmbedding& ce, const ActivationMap& activation);

// value > threshold -> 1
ConceptMask binarize(const Heatmap& heatmap, double threshold = 0.5);

/// Mean of a concept's local CEs. The per-component sum is taken over sorted
/// values in extended precision, which makes the result independent of input
/// order and exact for identical inputs.
ConceptEmbedding globalize(std::span<const ConceptEmbedding> loces);

// Persistence: {concept, model, layer, scheme, data_tag, channels, weights, bias, train_config, seed}.
std::string ce_filename(const CeMeta& meta);
nlohmann::ordered_json to_json(const ConceptEmbedding& ce);
ConceptEmbedding ce_from_json(const nlohmann::json& j);
void save_ce(const ConceptEmbedding& ce, const std::filesystem::path& path);
ConceptEmbedding load_ce(const std::filesystem::path& path);

}  // namespace cebias
