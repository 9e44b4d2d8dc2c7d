#include "cebias/metrics.hpp"
#include "cebias/synthetic.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

using namespace cebias;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

double mean_of(const std::vector<IoUResult>& r) { return mean_iou(r).mean; }

}  // namespace

TEST_CASE("planted and decoy directions are unit and orthogonal", "[harness]") {
    SyntheticSpec spec;
    spec.seed = 3;
    const auto v = planted_direction(spec);
    const auto d = decoy_direction(spec, v);
    CHECK(dot(v, v) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(dot(d, d) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(dot(v, d)) < 1e-12);
}

TEST_CASE("block masks cover the requested fraction", "[harness]") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto m = block_mask(40, 40, 0.3, rng);
        CHECK(std::abs(static_cast<double>(m.count()) / 1600.0 - 0.3) < 0.02);
        // one contiguous rectangle: the bounding box is full
        std::size_t y0 = 40, y1 = 0, x0 = 40, x1 = 0;
        for (std::size_t y = 0; y < 40; ++y)
            for (std::size_t x = 0; x < 40; ++x)
                if (m.at(y, x)) {
                    y0 = std::min(y0, y), y1 = std::max(y1, y);
                    x0 = std::min(x0, x), x1 = std::max(x1, x);
                }
        CHECK((y1 - y0 + 1) * (x1 - x0 + 1) == m.count());
    }
}

TEST_CASE("zero noise makes the planted direction exact", "[harness]") {
    SyntheticSpec spec;
    spec.noise = 0.0;
    spec.seed = 4;
    const auto data = gen_separable(spec);
    ConceptEmbedding ce;
    ce.weights = data.direction;
    for (auto& w : ce.weights) w *= 2.5;
    for (const auto& r : evaluate_maps(ce, data.labeled())) CHECK(r.value == 1.0);

    // a trained CE separates every training pixel
    const auto trained = train_net2vec(data.labeled(Split::Train), harness_train_config(), harness_meta(spec));
    for (const auto& s : data.labeled(Split::Train)) CHECK(binarize(predict_heatmap(trained, s.activation)) == s.mask);
}

TEST_CASE("seeds change noise but keep the layout rule", "[harness]") {
    SyntheticSpec a, b;
    a.seed = 1;
    b.seed = 2;
    const auto da = gen_separable(a), db = gen_separable(b);
    REQUIRE(da.samples.size() == 30);
    CHECK(da.samples[0].activation.data != db.samples[0].activation.data);
    for (std::size_t i = 0; i < da.samples.size(); ++i)
        CHECK(std::abs(static_cast<long>(da.samples[i].mask.count()) - static_cast<long>(db.samples[i].mask.count())) <= 40);
    CHECK(gen_separable(a).samples[5].activation == da.samples[5].activation);
    CHECK(da.select(Split::Train).size() == 20);
    CHECK(da.select(Split::Val).size() == 10);
}

TEST_CASE("no bias reproduces the separable data", "[harness]") {
    SyntheticSpec spec;
    spec.seed = 8;
    spec.decoy = 1.0;
    spec.bias = BiasInjection{2, {}, 0.0};
    const auto plain = gen_separable(spec);
    const auto biased = gen_biased(spec);
    REQUIRE(plain.samples.size() == biased.samples.size());
    std::set<std::size_t> cats;
    for (std::size_t i = 0; i < plain.samples.size(); ++i) {
        CHECK(plain.samples[i].activation == biased.samples[i].activation);
        CHECK(plain.samples[i].mask == biased.samples[i].mask);
        REQUIRE(biased.samples[i].category);
        cats.insert(*biased.samples[i].category);
    }
    CHECK(cats.size() == spec.categories);
}

TEST_CASE("biased category shifts only its own backgrounds", "[harness]") {
    SyntheticSpec spec;
    spec.seed = 8;
    spec.bias = BiasInjection{2, {}, 1.5};
    const auto plain = gen_separable(spec);
    const auto biased = gen_biased(spec);
    for (std::size_t i = 0; i < plain.samples.size(); ++i) {
        const auto& p = plain.samples[i];
        const auto& q = biased.samples[i];
        const bool hit = q.category == spec.bias->category;
        for (std::size_t y = 0; y < spec.height; y += 3)
            for (std::size_t x = 0; x < spec.width; x += 3) {
                double shift = 0;
                for (std::size_t c = 0; c < spec.channels; ++c)
                    shift += (q.activation.at(c, y, x) - p.activation.at(c, y, x)) * biased.decoy[c];
                const double expected = (hit && !q.mask.at(y, x)) ? 1.5 : 0.0;
                REQUIRE(shift == Catch::Approx(expected).margin(1e-5));
            }
    }
}

TEST_CASE("a bias direction along v* is rejected", "[harness]") {
    SyntheticSpec spec;
    spec.seed = 1;
    const auto v = planted_direction(spec);
    std::vector<double> delta(v);
    delta[0] += 0.1;
    spec.bias = BiasInjection{0, delta, 1.0};
    CHECK(testing::error_kind([&] { gen_biased(spec); }) == ErrorKind::Precondition);
    spec.bias.reset();
    CHECK(testing::error_kind([&] { gen_biased(spec); }) == ErrorKind::Precondition);
}

TEST_CASE("randomized variants draw categories without replacement", "[harness]") {
    SyntheticSpec spec;
    spec.images = 4;
    spec.val_images = 2;
    const auto data = gen_separable(spec);
    const auto vars = randomized_variants(data, Split::Train, 10, 5);
    REQUIRE(vars.size() == 40);
    for (std::size_t img = 0; img < 4; ++img) {
        std::set<std::size_t> cats;
        for (std::size_t j = 0; j < 10; ++j) {
            const auto& v = vars[img * 10 + j];
            CHECK(v.variant_of == data.samples[img].id);
            CHECK(v.mask == data.samples[img].mask);
            cats.insert(*v.category);
            // foreground pixels are kept verbatim
            for (std::size_t p = 0; p < v.mask.pixels(); ++p)
                if (v.mask.values[p]) REQUIRE(v.activation.data[p] == data.samples[img].activation.data[p]);
        }
        CHECK(cats.size() == 10);
    }
    const auto again = randomized_variants(data, Split::Train, 10, 5);
    CHECK(again[7].activation == vars[7].activation);
    CHECK(randomized_variants(data, Split::Train, 10, 6)[7].activation != vars[7].activation);
}

TEST_CASE("category test sets", "[harness]") {
    SyntheticSpec spec;
    spec.bias = BiasInjection{1, {}, 0.5};
    const auto data = gen_separable(spec);
    const auto sets = bias_test_sets(data, 4);
    CHECK(sets.size() == spec.categories + 2);
    CHECK(sets.at(kVanillaCategory).size() == spec.val_images);
    CHECK(sets.at(kAnyCategory).size() == spec.val_images * spec.categories);
    CHECK(sets.at("bg1").size() == spec.val_images);
    CHECK(category_name(7) == "bg7");
}

TEST_CASE("biased-category IoU falls monotonically with strength", "[harness][slow]") {
    const auto cfg = harness_train_config();
    std::vector<double> strengths, ious;
    for (std::uint64_t seed : {21, 22, 23}) {
        SyntheticSpec spec;
        spec.seed = seed;
        spec.noise = 0.7;
        spec.decoy = 1.0;
        spec.bias = BiasInjection{3, {}, 0.0};
        auto data = gen_separable(spec);
        const auto ce = train_net2vec(data.labeled(Split::Train), cfg, harness_meta(spec));
        for (double beta = 0.0; beta <= 1.61; beta += 0.2) {
            data.spec.bias->strength = beta;
            const auto set = to_labeled(category_test_set(data, Split::Val, 3, 9));
            strengths.push_back(beta);
            ious.push_back(mean_of(evaluate_maps(ce, set)));
        }
    }
    CHECK(spearman(strengths, ious) <= -0.9);
}

TEST_CASE("strong bias hurts vanilla CEs more than randomized ones", "[harness][slow]") {
    const auto cfg = harness_train_config();
    SyntheticSpec spec;
    spec.seed = 40;
    spec.noise = 0.7;
    spec.decoy = 1.0;
    spec.bias = BiasInjection{3, {}, 1.5};
    const auto data = gen_separable(spec);
    const auto vanilla = train_net2vec(data.labeled(Split::Train), cfg, harness_meta(spec));
    const auto randomized =
        train_net2vec(to_labeled(randomized_variants(data, Split::Train, 1, 3)), cfg, harness_meta(spec));
    const auto sets = bias_test_sets(data, 4);
    auto gap = [&](const ConceptEmbedding& ce) {
        double unbiased = 0;
        for (std::size_t c = 0; c < spec.categories; ++c)
            if (c != 3) unbiased += mean_of(evaluate_maps(ce, sets.at(category_name(c))));
        unbiased /= static_cast<double>(spec.categories - 1);
        return unbiased - mean_of(evaluate_maps(ce, sets.at("bg3")));
    };
    const double g_van = gap(vanilla), g_rand = gap(randomized);
    CHECK(g_van > 0.0);
    CHECK(std::abs(g_rand) < g_van);
}

TEST_CASE("calibration hits the requested delta", "[harness][slow]") {
    SyntheticSpec spec;
    spec.seed = 1;
    spec.noise = 0.7;
    spec.decoy = 1.0;
    spec.bias = BiasInjection{3, {}, 0.0};
    const auto cal = calibrate_bias_strength(spec, harness_train_config(), -20.0);
    CHECK(cal.strength > 0.0);
    CHECK(cal.strength < 64.0);
    CHECK(cal.delta_pct <= -20.0);
    CHECK(cal.delta_pct > -22.0);
    CHECK(testing::error_kind([&] { calibrate_bias_strength(spec, harness_train_config(), 5.0); }) ==
          ErrorKind::Precondition);
}

TEST_CASE("workspace files parse with the core readers", "[harness]") {
    testing::TempDir dir("ws");
    WorkspaceOptions opt;
    opt.spec.images = 3;
    opt.spec.val_images = 2;
    opt.spec.categories = 3;
    opt.layers = {{"early", 1.0}, {"late", 0.1}};
    opt.variant_counts = {1, 2};
    write_workspace(opt, dir.path());

    const auto index = load_index(dir / "index.jsonl");
    CHECK(index.entries.size() == 5);
    ActivationStore store;
    store.add_manifest(dir / "activations.json");
    // per layer: 5 originals, 3 + 6 variants, 3 category sets and "any" of 2 x 3 each
    CHECK(store.size() == 2 * (5 + 3 + 6 + 3 * 2 + 2 * 3));
    const auto data = gen_separable(opt.spec);
    for (const char* layer : {"early", "late"}) {
        const auto samples = load_samples(index, index.entries, store, opt.spec.model, layer);
        REQUIRE(samples.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(samples[i].activation.channels == opt.spec.channels);
            CHECK(samples[i].mask == data.samples[i].mask);
        }
    }
    // the default layer noise reproduces gen_separable exactly
    const auto late = load_samples(index, index.entries, store, opt.spec.model, "late");
    CHECK(late[0].activation.data == data.samples[0].activation.data);

    const auto k2 = load_index(dir / "variants/randomized_k2/index.jsonl");
    CHECK(k2.entries.size() == 6);
    for (const char* set : {"vanilla", "any", "bg0", "bg2"}) CHECK(std::filesystem::exists(dir / "tests" / set / "index.jsonl"));
    CHECK(load_index(dir / "tests/any/index.jsonl").entries.size() == 2 * 3);
    CHECK(std::filesystem::exists(dir / "pool/bg1"));
}
