#pragma once

#include "cebias/concept_embedding.hpp"
#include "cebias/tensor_io.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cebias {

// An activation map with the ground-truth mask of one concept for the same image.
struct LabeledMap {
    ActivationMap activation;
    ConceptMask mask;
    std::string id;
};

// Activation-map pixels flattened for training. Features are stored pixel-major
// (C contiguous floats per pixel); image_offsets keeps the per-image grouping.
struct PixelDataset {
    std::size_t channels = 0;
    std::vector<float> features;
    std::vector<std::uint8_t> labels;
    std::vector<std::size_t> image_offsets{0};
    std::vector<std::string> image_ids;

    std::size_t pixels() const noexcept { return labels.size(); }
    std::size_t images() const noexcept { return image_ids.size(); }
    std::size_t positives() const noexcept;

    void add_image(const ActivationMap& activation, const ConceptMask& mask, std::string id);
};

/// Resamples every (activation, mask) to common_size x common_size and
/// flattens. All activations must share one channel count (Shape error).
PixelDataset build_pixel_dataset(std::span<const LabeledMap> samples, std::size_t common_size);

struct ClassWeights {
    double positive = 1.0;
    double negative = 1.0;
};

// w_pos = N / (2 N_pos), w_neg = N / (2 N_neg). DegenerateData if a class is absent.
ClassWeights class_balance_weights(std::size_t n_pos, std::size_t n_neg);
ClassWeights class_balance_weights(const PixelDataset& data);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean over pixels of -[w_pos y log p + w_neg (1-y) log(1-p)], p clamped to
/// [1e-7, 1 - 1e-7].
double weighted_bce_loss(const Heatmap& pred, const ConceptMask& gt, double w_pos, double w_neg);

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d weights, then d loss / d bias as the last entry
};

// Analytic gradient of weighted_bce_loss(predict_heatmap(ce, a), gt, ...) w.r.t. (v, bias).
LossGradient weighted_bce_gradient(std::span<const double> weights, double bias, const ActivationMap& activation,
                                   const ConceptMask& gt, ClassWeights cw);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW step (decoupled weight decay, bias-corrected moments) at step
/// index t >= 1. Only the first `decayed` parameters receive weight decay.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg,
                long t, std::size_t decayed);

struct TrainTrace {
    std::vector<double> epoch_loss;  // full training loss after each epoch
};

// Global CE over all pixels of all samples; batches are sets of whole images,
// each contributing its mean pixel loss.
ConceptEmbedding train_net2vec(std::span<const LabeledMap> samples, const TrainConfig& cfg, CeMeta meta,
                               TrainTrace* trace = nullptr);
ConceptEmbedding train_net2vec(const PixelDataset& data, const TrainConfig& cfg, CeMeta meta,
                               TrainTrace* trace = nullptr);

// Local CE fitted to one image's pixels with per-image class weights; batches
// are random subsets of batch_pixels pixels.
ConceptEmbedding train_loce(const LabeledMap& sample, const TrainConfig& cfg, CeMeta meta,
                            TrainTrace* trace = nullptr);

}  // namespace cebias
