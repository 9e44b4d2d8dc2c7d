#include "cebias/metrics.hpp"

#include "cebias/error.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace cebias {

namespace {

// Largest binary exponent among |v_i|; scaling by 2^-e is exact and keeps the
// squared norm away from overflow/underflow.
int scale_exponent(std::span<const double> v) {
    double largest = 0.0;
    for (double x : v) largest = std::max(largest, std::abs(x));
    int e = 0;
    std::frexp(largest, &e);
    return e;
}

using MatchKey = std::tuple<std::string, std::string, std::string>;

MatchKey key_of(const ConceptEmbedding& ce) { return {ce.meta.concept_name, ce.meta.model, ce.meta.layer}; }

std::map<MatchKey, const ConceptEmbedding*> by_key(const std::vector<ConceptEmbedding>& ces) {
    std::map<MatchKey, const ConceptEmbedding*> out;
    for (const auto& ce : ces) {
        if (!out.emplace(key_of(ce), &ce).second)
            fail(ErrorKind::Meta, "duplicate CE for " + ce.meta.concept_name + "/" + ce.meta.model + "/" + ce.meta.layer +
                                      " within tag " + std::string(to_string(ce.meta.data_tag)));
    }
    return out;
}

}  // namespace

IoUResult iou(const ConceptMask& m, const ConceptMask& gt, std::string sample) {
    require(m.height == gt.height && m.width == gt.width, ErrorKind::Shape,
            "IoU of masks with different sizes (" + std::to_string(m.height) + "x" + std::to_string(m.width) + " vs " +
                std::to_string(gt.height) + "x" + std::to_string(gt.width) + ")");
    IoUResult r;
    r.sample = std::move(sample);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        const bool a = m.values[i] != 0, b = gt.values[i] != 0;
        r.intersection += (a && b) ? 1 : 0;
        r.union_size += (a || b) ? 1 : 0;
    }
    r.value = r.union_size == 0 ? 1.0 : static_cast<double>(r.intersection) / static_cast<double>(r.union_size);
    return r;
}

double cos_sim(std::span<const double> v1, std::span<const double> v2) {
    require(v1.size() == v2.size(), ErrorKind::Shape, "cos_sim of vectors with different lengths");
    const int e1 = scale_exponent(v1), e2 = scale_exponent(v2);
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i) {
        const double a = std::ldexp(v1[i], -e1), b = std::ldexp(v2[i], -e2);
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    if (n1 == 0.0 || n2 == 0.0) fail(ErrorKind::UndefinedSimilarity, "cosine similarity with a zero vector");
    // sqrt(n1 * n2) rather than sqrt(n1) * sqrt(n2): sqrt(fl(x * x)) == |x|, so
    // cos(v, v) and cos(v, -v) come out as exactly 1 and -1.
    return std::clamp(dot / std::sqrt(n1 * n2), -1.0, 1.0);
}

MeanStd mean_std(std::span<const double> values) {
    require(!values.empty(), ErrorKind::Precondition, "mean of an empty list");
    MeanStd s;
    s.n = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(s.n));
    return s;
}

MeanStd mean_iou(std::span<const IoUResult> results) {
    require(!results.empty(), ErrorKind::Precondition, "mean IoU of an empty list");
    std::vector<double> values;
    std::size_t excluded = 0;
    for (const auto& r : results) {
        if (r.empty_union())
            ++excluded;
        else
            values.push_back(r.value);
    }
    require(!values.empty(), ErrorKind::Precondition, "every IoU result has an empty union");
    MeanStd s = mean_std(values);
    s.excluded = excluded;
    return s;
}

const CosCell& CosMatrix::at(DataTag a, DataTag b) const {
    for (const auto& c : cells)
        if (c.tag_a == a && c.tag_b == b) return c;
    fail(ErrorKind::EmptyReport, "no CosSim cell for " + std::string(to_string(a)) + " x " + std::string(to_string(b)));
}

CosMatrix pairwise_cos_matrix(const std::map<DataTag, std::vector<ConceptEmbedding>>& groups) {
    CosMatrix matrix;
    std::map<DataTag, std::map<MatchKey, const ConceptEmbedding*>> keyed;
    for (const auto& [tag, ces] : groups) {
        matrix.tags.push_back(tag);
        keyed[tag] = by_key(ces);
    }
    bool any_match = false;
    for (DataTag a : matrix.tags) {
        for (DataTag b : matrix.tags) {
            std::vector<double> sims;
            for (const auto& [key, ce_a] : keyed[a]) {
                const auto it = keyed[b].find(key);
                if (it == keyed[b].end()) continue;
                sims.push_back(cos_sim(ce_a->weights, it->second->weights));
            }
            CosCell cell{a, b, {}};
            if (!sims.empty()) {
                cell.stats = mean_std(sims);
                if (a != b) any_match = true;
            }
            matrix.cells.push_back(cell);
        }
    }
    if (!any_match && matrix.tags.size() > 1) fail(ErrorKind::EmptyReport, "no CE is matched across data tags");
    if (matrix.tags.empty() || (matrix.tags.size() == 1 && matrix.cells.front().stats.n == 0))
        fail(ErrorKind::EmptyReport, "no CEs to compare");
    return matrix;
}

}  // namespace cebias
