#pragma once

#include "cebias/concept_embedding.hpp"
#include "cebias/tensor_io.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace cebias {

struct IoUResult {
    double value = 0.0;
    std::size_t intersection = 0;
    std::size_t union_size = 0;
    std::string sample;

    // Both masks empty: value is reported as 1 but the result is excluded from means.
    bool empty_union() const noexcept { return union_size == 0; }
};

IoUResult iou(const ConceptMask& predicted, const ConceptMask& truth, std::string sample = {});

// v1 . v2 / (|v1| |v2|), clamped to [-1, 1]. Zero vectors raise UndefinedSimilarity.
double cos_sim(std::span<const double> v1, std::span<const double> v2);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    std::size_t n = 0;
    std::size_t excluded = 0;
};

MeanStd mean_std(std::span<const double> values);
MeanStd mean_iou(std::span<const IoUResult> results);

// Pairwise CosSim statistics between CE groups keyed by data tag.
struct CosCell {
    DataTag tag_a;
    DataTag tag_b;
    MeanStd stats;
};

struct CosMatrix {
    std::vector<DataTag> tags;
    std::vector<CosCell> cells;  // row-major over tags x tags

    const CosCell& at(DataTag a, DataTag b) const;
};

/// For every ordered tag pair, CosSim over CEs matched on (concept, model, layer),
/// summarized as mean and population std. Throws EmptyReport when no pair matches.
CosMatrix pairwise_cos_matrix(const std::map<DataTag, std::vector<ConceptEmbedding>>& groups);

}  // namespace cebias
