#include "cebias/training.hpp"

#include "cebias/error.hpp"
#include "cebias/resample.hpp"
#include "cebias/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cebias {

namespace {

struct PixelTerm {
    double loss;
    double dlogit;
};

// Loss and d loss / d logit for one pixel; the clamp has zero derivative
// outside [eps, 1 - eps].
inline PixelTerm pixel_term(double z, bool positive, ClassWeights cw) {
    const double p = sigmoid(z);
    const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const bool clamped = p != pc;
    if (positive) return {-cw.positive * std::log(pc), clamped ? 0.0 : -cw.positive * (1.0 - p)};
    return {-cw.negative * std::log(1.0 - pc), clamped ? 0.0 : cw.negative * p};
}

// Adds scale * (loss, gradient) over the pixels [begin, end) of `data`, or over
// the listed pixel indices when `order` is non-null. Returns the scaled loss.
double accumulate(const PixelDataset& data, const std::uint32_t* order, std::size_t begin, std::size_t end,
                  std::span<const double> params, bool use_bias, ClassWeights cw, double scale, double* grad) {
    const std::size_t C = data.channels;
    const double bias = use_bias ? params[C] : 0.0;
    double loss = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t p = order ? order[i] : i;
        const float* x = data.features.data() + p * C;
        double z = bias;
        for (std::size_t c = 0; c < C; ++c) z += params[c] * x[c];
        const auto term = pixel_term(z, data.labels[p] != 0, cw);
        loss += term.loss;
        if (grad) {
            const double d = scale * term.dlogit;
            for (std::size_t c = 0; c < C; ++c) grad[c] += d * x[c];
            if (use_bias) grad[C] += d;
        }
    }
    return loss * scale;
}

double image_mean_loss(const PixelDataset& data, std::span<const double> params, bool use_bias, ClassWeights cw) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.images(); ++i) {
        const std::size_t b = data.image_offsets[i], e = data.image_offsets[i + 1];
        total += accumulate(data, nullptr, b, e, params, use_bias, cw, 1.0 / static_cast<double>(e - b), nullptr);
    }
    return total / static_cast<double>(data.images());
}

std::vector<double> initial_params(std::size_t channels, Rng& rng) {
    std::vector<double> params(channels + 1, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
    for (std::size_t c = 0; c < channels; ++c) params[c] = rng.normal() * scale;
    return params;
}

ConceptEmbedding finish(std::vector<double> params, const TrainConfig& cfg, CeMeta meta) {
    ConceptEmbedding ce;
    ce.bias = cfg.use_bias ? params.back() : 0.0;
    params.pop_back();
    ce.weights = std::move(params);
    ce.meta = std::move(meta);
    ce.train_config = cfg;
    validate(ce);
    return ce;
}

}  // namespace

std::size_t PixelDataset::positives() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void PixelDataset::add_image(const ActivationMap& a, const ConceptMask& mask, std::string id) {
    require(a.height == mask.height && a.width == mask.width, ErrorKind::Shape,
            "activation and mask sizes differ for " + id);
    if (channels == 0) channels = a.channels;
    require(a.channels == channels, ErrorKind::Shape,
            "channel mismatch: " + id + " has " + std::to_string(a.channels) + ", expected " + std::to_string(channels));
    const std::size_t n = a.pixels();
    const std::size_t base = features.size();
    features.resize(base + n * channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const auto plane = a.channel(c);
        for (std::size_t p = 0; p < n; ++p) features[base + p * channels + c] = plane[p];
    }
    labels.insert(labels.end(), mask.values.begin(), mask.values.end());
    image_offsets.push_back(labels.size());
    image_ids.push_back(std::move(id));
}

PixelDataset build_pixel_dataset(std::span<const LabeledMap> samples, std::size_t common_size) {
    PixelDataset data;
    for (const auto& s : samples) {
        data.add_image(resample_to_common(s.activation, common_size), resample_to_common(s.mask, common_size), s.id);
    }
    return data;
}

ClassWeights class_balance_weights(std::size_t n_pos, std::size_t n_neg) {
    require(n_pos > 0 && n_neg > 0, ErrorKind::DegenerateData,
            "class balancing needs both classes (positives " + std::to_string(n_pos) + ", negatives " +
                std::to_string(n_neg) + ")");
    const double n = static_cast<double>(n_pos + n_neg);
    return {n / (2.0 * static_cast<double>(n_pos)), n / (2.0 * static_cast<double>(n_neg))};
}

ClassWeights class_balance_weights(const PixelDataset& data) {
    const std::size_t pos = data.positives();
    return class_balance_weights(pos, data.pixels() - pos);
}

double weighted_bce_loss(const Heatmap& pred, const ConceptMask& gt, double w_pos, double w_neg) {
    require(pred.height == gt.height && pred.width == gt.width, ErrorKind::Shape, "heatmap and mask sizes differ");
    require(w_pos > 0.0 && w_neg > 0.0, ErrorKind::Precondition, "class weights must be positive");
    require(!pred.values.empty(), ErrorKind::Precondition, "empty heatmap");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const double p = std::clamp(pred.values[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        total += gt.values[i] ? -w_pos * std::log(p) : -w_neg * std::log(1.0 - p);
    }
    return total / static_cast<double>(pred.values.size());
}

LossGradient weighted_bce_gradient(std::span<const double> weights, double bias, const ActivationMap& a,
                                   const ConceptMask& gt, ClassWeights cw) {
    require(a.channels == weights.size(), ErrorKind::Shape, "channel mismatch in gradient evaluation");
    PixelDataset data;
    data.add_image(a, gt, "gradient");
    std::vector<double> params(weights.begin(), weights.end());
    params.push_back(bias);
    LossGradient out;
    out.grad.assign(params.size(), 0.0);
    const double scale = 1.0 / static_cast<double>(data.pixels());
    out.loss = accumulate(data, nullptr, 0, data.pixels(), params, true, cw, scale, out.grad.data());
    return out;
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg,
                long t, std::size_t decayed) {
    require(params.size() == grads.size() && state.m.size() == params.size() && state.v.size() == params.size(),
            ErrorKind::Precondition, "adamw_step: params, grads and state must have equal length");
    require(t >= 1, ErrorKind::Precondition, "adamw_step: step index starts at 1");
    for (double g : grads) require(std::isfinite(g), ErrorKind::Numerical, "non-finite gradient");

    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (i < decayed) params[i] *= 1.0 - cfg.learning_rate * cfg.weight_decay;
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / correction1;
        const double v_hat = state.v[i] / correction2;
        params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
}

ConceptEmbedding train_net2vec(std::span<const LabeledMap> samples, const TrainConfig& cfg, CeMeta meta,
                               TrainTrace* trace) {
    require(!samples.empty(), ErrorKind::Precondition, "Net2Vec training needs at least one image");
    return train_net2vec(build_pixel_dataset(samples, cfg.common_size), cfg, std::move(meta), trace);
}

ConceptEmbedding train_net2vec(const PixelDataset& data, const TrainConfig& cfg, CeMeta meta, TrainTrace* trace) {
    cfg.validate();
    require(data.images() > 0, ErrorKind::Precondition, "Net2Vec training needs at least one image");
    const ClassWeights cw = class_balance_weights(data);
    const std::size_t C = data.channels;

    Rng rng(cfg.seed);
    auto params = initial_params(C, rng);
    AdamState state(params.size());
    std::vector<double> grad(params.size());
    std::vector<std::size_t> order(data.images());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_images);

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(start + batch, order.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t img = order[k];
                const std::size_t b = data.image_offsets[img], e = data.image_offsets[img + 1];
                const double scale = 1.0 / (static_cast<double>(e - b) * static_cast<double>(stop - start));
                accumulate(data, nullptr, b, e, params, cfg.use_bias, cw, scale, grad.data());
            }
            adamw_step(params, grad, state, cfg, ++step, C);
        }
        if (trace) trace->epoch_loss.push_back(image_mean_loss(data, params, cfg.use_bias, cw));
    }
    return finish(std::move(params), cfg, std::move(meta));
}

ConceptEmbedding train_loce(const LabeledMap& sample, const TrainConfig& cfg, CeMeta meta, TrainTrace* trace) {
    cfg.validate();
    PixelDataset data;
    data.add_image(resample_to_common(sample.activation, cfg.common_size),
                   resample_to_common(sample.mask, cfg.common_size), sample.id);
    const std::size_t pos = data.positives();
    if (pos == 0 || pos == data.pixels())
        fail(ErrorKind::DegenerateData, "mask of " + sample.id + " is single-class at " +
                                            std::to_string(cfg.common_size) + "x" + std::to_string(cfg.common_size));
    const ClassWeights cw = class_balance_weights(data);
    const std::size_t C = data.channels;
    if (meta.sample.empty()) meta.sample = sample.id;

    Rng rng(cfg.seed);
    auto params = initial_params(C, rng);
    AdamState state(params.size());
    std::vector<double> grad(params.size());
    std::vector<std::uint32_t> order(data.pixels());
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_pixels);

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(start + batch, order.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            accumulate(data, order.data(), start, stop, params, cfg.use_bias, cw,
                       1.0 / static_cast<double>(stop - start), grad.data());
            adamw_step(params, grad, state, cfg, ++step, C);
        }
        if (trace) trace->epoch_loss.push_back(image_mean_loss(data, params, cfg.use_bias, cw));
    }
    return finish(std::move(params), cfg, std::move(meta));
}

}  // namespace cebias
