#pragma once

#include "cebias/bias_analysis.hpp"
#include "cebias/concept_embedding.hpp"
#include "cebias/dataset_index.hpp"
#include "cebias/rng.hpp"
#include "cebias/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cebias {

// Background pixels of one category are pushed by strength * delta_hat toward
// the foreground side.
struct BiasInjection {
    std::size_t category = 0;
    std::vector<double> delta;  // empty: a unit decoy direction orthogonal to v* is derived from the seed
    double strength = 0.0;
};

/// Planted-concept activation data. Foreground pixels are margin * v* + noise * n,
/// vanilla background pixels -margin * v* - decoy * delta_hat + noise * n, and
/// category backgrounds -margin * v* (+ strength * delta_hat for the biased
/// category) + noise * n, with n standard normal per channel.
struct SyntheticSpec {
    std::size_t channels = 16;
    std::size_t height = 40;
    std::size_t width = 40;
    std::vector<double> direction;  // v*, unit; empty: random +-1/sqrt(C) sign vector
    double margin = 1.0;
    double noise = 0.1;
    std::size_t images = 20;      // train split
    std::size_t val_images = 10;  // val split
    double fg_fraction = 0.3;
    std::size_t categories = 10;  // background categories available to variants and test sets
    std::optional<BiasInjection> bias;
    // Offset of vanilla backgrounds along -delta_hat. Models the scenery that
    // co-occurs with the concept in its own dataset; 0 disables it.
    double decoy = 0.0;
    std::uint64_t seed = 0;
    std::string concept_name = "planted";
    std::string model = "synthetic";
    std::string layer = "block";

    void validate() const;
};

struct SyntheticSample {
    ActivationMap activation;
    ConceptMask mask;
    std::string id;
    Split split = Split::Train;
    std::optional<std::size_t> category;  // background category; nullopt for vanilla backgrounds
    std::optional<std::string> variant_of;
};

struct SyntheticDataset {
    SyntheticSpec spec;
    std::vector<double> direction;  // v*
    std::vector<double> decoy;      // delta_hat
    std::vector<SyntheticSample> samples;

    std::vector<LabeledMap> labeled(std::optional<Split> split = std::nullopt) const;
    std::vector<const SyntheticSample*> select(Split split) const;
};

std::string category_name(std::size_t category);  // "bg0", "bg1", ...

std::vector<double> planted_direction(const SyntheticSpec& spec);
std::vector<double> decoy_direction(const SyntheticSpec& spec, const std::vector<double>& direction);

// Axis-aligned block covering about fg_fraction of the grid at a random offset.
ConceptMask block_mask(std::size_t height, std::size_t width, double fg_fraction, Rng& rng);

// Vanilla data: no category labels, no bias shift.
SyntheticDataset gen_separable(const SyntheticSpec& spec);

/// As gen_separable (same masks and noise) with a background category label
/// per image; images of the biased category get +strength * delta_hat on their
/// background pixels. Requires spec.bias; |v* . delta_hat| >= 0.5 is a
/// Precondition error.
SyntheticDataset gen_biased(const SyntheticSpec& spec);

// Keeps the foreground pixels and redraws every background pixel from `category`.
SyntheticSample with_background(const SyntheticDataset& data, const SyntheticSample& sample, std::size_t category,
                                Rng& rng);

/// k background-randomized variants per sample of `split`: categories without
/// replacement while they last, noise seeded per (sample, k index).
std::vector<SyntheticSample> randomized_variants(const SyntheticDataset& data, Split split, std::size_t k,
                                                 std::uint64_t seed);

// Every sample of `split` with its background redrawn from one category.
std::vector<SyntheticSample> category_test_set(const SyntheticDataset& data, Split split, std::size_t category,
                                               std::uint64_t seed);

std::vector<LabeledMap> to_labeled(const std::vector<SyntheticSample>& samples);

// Sign-vector recovery trains quickly with this step size; the library
// defaults stay as documented for real activations.
TrainConfig harness_train_config();

CeMeta harness_meta(const SyntheticSpec& spec, Scheme scheme = Scheme::Net2Vec, DataTag tag = DataTag::Vanilla);

/// Per-category test sets built from the val split: "vanilla" (unchanged),
/// one per category, and "any" (each foreground once per category).
std::map<std::string, std::vector<LabeledMap>> bias_test_sets(const SyntheticDataset& data, std::uint64_t seed);

struct BiasCalibration {
    double strength = 0.0;
    double delta_pct = 0.0;  // biased-category delta reached at `strength`
};

/// Finds the bias strength at which a vanilla-trained CE loses `target_delta_pct`
/// (negative) on the biased category relative to "any", by bisection on the
/// monotone map strength -> delta. The CE and test noise are fixed during
/// the search.
BiasCalibration calibrate_bias_strength(SyntheticSpec spec, const TrainConfig& cfg, double target_delta_pct,
                                        double max_strength = 64.0);

/// Writes a workspace with the same formats as a real extractor dump:
/// images/<id>.png, masks/<id>.png, activations/<model>/<layer>/<id>.npy,
/// activations.json (manifest), index.jsonl for the vanilla data.
/// Extra layers reuse the masks with their own noise level.
struct WorkspaceLayer {
    std::string name;
    double noise = 0.1;
};

struct WorkspaceOptions {
    SyntheticSpec spec;
    std::vector<WorkspaceLayer> layers;           // empty: spec.layer with spec.noise
    std::vector<std::size_t> variant_counts;      // randomized training sets variants/randomized_k<k>/
    bool test_sets = true;                        // tests/<category>/index.jsonl for bias reports
    std::size_t pool_images_per_category = 2;     // pool/<category>/ RGB images for composing
};

void write_workspace(const WorkspaceOptions& options, const std::filesystem::path& dir);

}  // namespace cebias
