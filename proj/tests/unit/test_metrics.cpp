#include "cebias/metrics.hpp"
#include "cebias/rng.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

using namespace cebias;

namespace {

ConceptMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p) {
    ConceptMask m(h, w);
    for (auto& v : m.values) v = rng.uniform() < p ? 1 : 0;
    return m;
}

ConceptEmbedding ce_with(std::vector<double> w, DataTag tag, std::string concept_name = "c") {
    ConceptEmbedding ce;
    ce.weights = std::move(w);
    ce.meta.concept_name = std::move(concept_name);
    ce.meta.model = "m";
    ce.meta.layer = "l";
    ce.meta.data_tag = tag;
    return ce;
}

}  // namespace

TEST_CASE("IoU examples", "[iou]") {
    ConceptMask a(2, 2), b(2, 2);
    a.values = {1, 1, 0, 0};
    CHECK(iou(a, a).value == 1.0);
    b.values = {0, 0, 1, 1};
    CHECK(iou(a, b).value == 0.0);
    b.values = {0, 1, 1, 0};
    const auto r = iou(a, b);
    CHECK(r.value == 1.0 / 3.0);
    CHECK(r.intersection == 1);
    CHECK(r.union_size == 3);
}

TEST_CASE("both-empty IoU is flagged", "[iou]") {
    ConceptMask a(3, 3);
    const auto r = iou(a, a, "s");
    CHECK(r.value == 1.0);
    CHECK(r.empty_union());
    CHECK(r.sample == "s");
}

TEST_CASE("IoU shape mismatch", "[iou]") {
    CHECK(testing::error_kind([] { iou(ConceptMask(2, 3), ConceptMask(3, 2)); }) == ErrorKind::Shape);
}

TEST_CASE("IoU is symmetric and matches set enumeration", "[iou]") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
        const auto a = random_mask(rng, h, w, rng.uniform());
        const auto b = random_mask(rng, h, w, rng.uniform());
        std::set<std::size_t> sa, sb, inter, uni;
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            if (a.values[i]) sa.insert(i);
            if (b.values[i]) sb.insert(i);
        }
        for (auto i : sa) {
            uni.insert(i);
            if (sb.count(i)) inter.insert(i);
        }
        uni.insert(sb.begin(), sb.end());
        const auto r = iou(a, b);
        if (uni.empty()) {
            CHECK(r.empty_union());
            continue;
        }
        CHECK(r.value == static_cast<double>(inter.size()) / static_cast<double>(uni.size()));
        CHECK(r.value == iou(b, a).value);
        CHECK(r.value >= 0.0);
        CHECK(r.value <= 1.0);
        if (!sa.empty()) CHECK(iou(a, a).value == 1.0);
    }
}

TEST_CASE("cosine examples are exact", "[cos]") {
    const std::vector<double> v{0.3, -1.7, 2.9, 1e-3};
    std::vector<double> neg(v);
    for (auto& x : neg) x = -x;
    CHECK(cos_sim(v, v) == 1.0);
    CHECK(cos_sim(v, neg) == -1.0);
    const std::vector<double> e1{1, 0}, e2{0, 1};
    CHECK(cos_sim(e1, e2) == 0.0);
}

TEST_CASE("cosine is scale invariant", "[cos]") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(1 + rng.below(20)), w(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = rng.normal();
            w[i] = rng.normal();
        }
        const double a = std::exp(rng.uniform(-20, 20)), b = std::exp(rng.uniform(-20, 20));
        std::vector<double> va(v), wb(w);
        for (auto& x : va) x *= a;
        for (auto& x : wb) x *= b;
        CHECK(std::abs(cos_sim(va, wb) - cos_sim(v, w)) <= 1e-12);
    }
}

TEST_CASE("cosine errors", "[cos]") {
    const std::vector<double> z{0, 0}, v{1, 2}, u{1, 2, 3};
    CHECK(testing::error_kind([&] { cos_sim(z, v); }) == ErrorKind::UndefinedSimilarity);
    CHECK(testing::error_kind([&] { cos_sim(v, u); }) == ErrorKind::Shape);
}

TEST_CASE("mean IoU examples", "[iou]") {
    std::vector<IoUResult> r(2);
    r[0].value = 1.0;
    r[0].union_size = 4;
    r[1].value = 0.0;
    r[1].union_size = 4;
    auto s = mean_iou(r);
    CHECK(s.mean == 0.5);
    CHECK(s.std == 0.5);

    std::vector<IoUResult> one(1);
    one[0].value = 0.7;
    one[0].union_size = 1;
    s = mean_iou(one);
    CHECK(s.mean == 0.7);
    CHECK(s.std == 0.0);

    std::vector<IoUResult> with_sentinel(2);
    with_sentinel[0].value = 1.0;  // union 0
    with_sentinel[1].value = 0.4;
    with_sentinel[1].union_size = 5;
    s = mean_iou(with_sentinel);
    CHECK(s.mean == 0.4);
    CHECK(s.excluded == 1);
    CHECK(s.n == 1);

    CHECK(testing::error_kind([] { mean_iou(std::vector<IoUResult>{}); }) == ErrorKind::Precondition);
}

TEST_CASE("pairwise cosine matrix", "[cos]") {
    std::map<DataTag, std::vector<ConceptEmbedding>> groups;
    groups[DataTag::Vanilla] = {ce_with({1, 2, 3}, DataTag::Vanilla), ce_with({0, 1, 0}, DataTag::Vanilla, "d")};
    groups[DataTag::Places] = {ce_with({1, 2, 3}, DataTag::Places), ce_with({0, 1, 0}, DataTag::Places, "d")};
    groups[DataTag::Voronoi] = {ce_with({-1, -2, -3}, DataTag::Voronoi)};
    const auto m = pairwise_cos_matrix(groups);
    CHECK(m.tags.size() == 3);
    for (auto t : m.tags) {
        CHECK(m.at(t, t).stats.mean == 1.0);
        CHECK(m.at(t, t).stats.std == 0.0);
    }
    CHECK(m.at(DataTag::Vanilla, DataTag::Places).stats.mean == 1.0);
    CHECK(m.at(DataTag::Vanilla, DataTag::Places).stats.n == 2);
    CHECK(m.at(DataTag::Vanilla, DataTag::Voronoi).stats.mean == -1.0);
    CHECK(m.at(DataTag::Vanilla, DataTag::Voronoi).stats.n == 1);
    for (auto a : m.tags)
        for (auto b : m.tags) {
            CHECK(m.at(a, b).stats.mean == m.at(b, a).stats.mean);
            CHECK(m.at(a, b).stats.n == m.at(b, a).stats.n);
        }
}

TEST_CASE("unmatched cosine groups are an empty report", "[cos]") {
    std::map<DataTag, std::vector<ConceptEmbedding>> groups;
    groups[DataTag::Vanilla] = {ce_with({1, 2}, DataTag::Vanilla, "a")};
    groups[DataTag::Places] = {ce_with({1, 2}, DataTag::Places, "b")};
    CHECK(testing::error_kind([&] { pairwise_cos_matrix(groups); }) == ErrorKind::EmptyReport);
    CHECK(testing::error_kind([] { pairwise_cos_matrix({}); }) == ErrorKind::EmptyReport);
}
