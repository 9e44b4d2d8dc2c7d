#pragma once

#include "cebias/concept_embedding.hpp"
#include "cebias/dataset_index.hpp"
#include "cebias/image_io.hpp"
#include "cebias/metrics.hpp"
#include "cebias/training.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cebias {

inline constexpr const char* kAnyCategory = "any";
inline constexpr const char* kVanillaCategory = "vanilla";
inline constexpr double kDeltaEpsilon = 1e-6;

// Running sums of IoU values; merging is exact in count and sample-weighted in mean.
struct CellStats {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;

    void add(double value);
    void merge(const CellStats& other);
    double mean() const;
    double std() const;  // population
};

// IoU of ce on each test sample (resampled to common_size, predicted, binarized at 0.5).
std::vector<IoUResult> evaluate_maps(const ConceptEmbedding& ce, std::span<const LabeledMap> samples,
                                     std::size_t common_size = 80);

/// Evaluate ce on every entry of `index` for its concept (optionally one split),
/// loading activations for the CE's model and layer from `store`. Missing
/// activations raise one Integrity error listing every missing image.
std::vector<IoUResult> evaluate_ce(const ConceptEmbedding& ce, const ConceptDatasetIndex& index,
                                   const ActivationStore& store, std::optional<Split> split = std::nullopt,
                                   std::size_t common_size = 80);

// Loads (activation, mask) pairs for the entries of one concept.
std::vector<LabeledMap> load_samples(const ConceptDatasetIndex& index, const std::vector<IndexEntry>& entries,
                                     const ActivationStore& store, const std::string& model, const std::string& layer);

// Per (model, layer, concept, category) IoU statistics. Aggregation replaces
// collapsed key fields with "*".
struct EvalCell {
    std::string model;
    std::string layer;
    std::string concept_name;
    std::string category;
    CellStats stats;
};

enum class Scope { PerModel, CrossModel, PerLayer };
std::string_view to_string(Scope s) noexcept;

// Flat, sample-weighted aggregation; EmptyReport when there is nothing to aggregate.
std::vector<EvalCell> aggregate(std::span<const EvalCell> cells, Scope scope);

struct BiasCell {
    std::string concept_name;
    std::string category;
    CellStats stats;
    std::optional<double> delta_pct;  // undefined when the baseline mean is below kDeltaEpsilon
};

struct BiasReport {
    std::vector<std::string> concepts;    // sorted
    std::vector<std::string> categories;  // "any", "vanilla" (if present), then the rest sorted
    std::vector<BiasCell> cells;          // row-major concepts x categories; absent cells have n == 0
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();

    const BiasCell& at(const std::string& concept_name, const std::string& category) const;
};

// delta = 100 (x - b) / b, or nullopt when b < kDeltaEpsilon.
std::optional<double> relative_delta_pct(double value, double baseline);

/// Builds the report from cross-model cells (model and layer are ignored and
/// pooled). Every concept needs an "any" cell, else BaselineMissing.
BiasReport bias_table(std::span<const EvalCell> cells, nlohmann::ordered_json meta = nlohmann::ordered_json::object());

/// Evaluates every CE on the test set of each category (keyed by category
/// name, samples carry their concept in mask.concept_name) and builds the report.
BiasReport bias_table(std::span<const ConceptEmbedding> ces, const std::map<std::string, std::vector<LabeledMap>>& test_sets,
                      std::size_t common_size = 80, std::size_t jobs = 1);

// CosSim matrix of one (scheme, model) group.
struct SimilarityGroup {
    Scheme scheme;
    std::string model;
    CosMatrix matrix;
};

/// Groups CEs by (scheme, model), keeps only `layers` when given, and computes
/// the pairwise tag matrix per group. The diagonal cells are the self-similarity
/// reference (always mean 1, std 0). Groups with fewer than two tags are skipped;
/// EmptyReport when no group remains.
std::vector<SimilarityGroup> scheme_similarity_report(std::span<const ConceptEmbedding> ces,
                                                      const std::optional<std::vector<std::string>>& layers = std::nullopt);

enum class AblationAxis { VariantCount, LayerDepth, Scheme, Model };
std::string_view to_string(AblationAxis a) noexcept;
AblationAxis parse_ablation_axis(std::string_view text);

struct AblationPoint {
    std::string value;
    MeanStd stats;
    std::optional<std::string> error;  // set when this point failed; the sweep continues
};

struct AblationResult {
    AblationAxis axis;
    std::vector<AblationPoint> points;

    std::size_t failures() const;
};

/// Runs `run_point` for each value; it returns the pooled IoU values over
/// concepts and models for that value. Exceptions are recorded on the point.
AblationResult ablation_sweep(AblationAxis axis, const std::vector<std::string>& values,
                              const std::function<std::vector<double>(const std::string&)>& run_point);

// Report emitters. Numbers are written with fixed precision so that reruns are
// byte-identical.
std::string bias_long_csv(const BiasReport& report);   // concept,category,mean_iou,n,delta_pct
std::string bias_delta_csv(const BiasReport& report);  // concept,<category>...; cells are delta_pct
nlohmann::ordered_json to_json(const BiasReport& report);
std::string cossim_csv(const CosMatrix& matrix);       // tag_a,tag_b,mean,std,n
std::string ablation_csv(const AblationResult& result);  // axis,value,mean_iou,std,n
nlohmann::ordered_json to_json(const AblationResult& result);

// Diverging heatmap of the delta table: one block per cell, red for positive,
// blue for negative, gray for undefined, saturating at max |delta|.
RgbImage render_bias_heatmap(const BiasReport& report, std::size_t cell = 24);

// Prediction alpha-blended over the input image in red.
RgbImage render_overlay(const RgbImage& image, const ConceptMask& prediction, double alpha = 0.5);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cebias
