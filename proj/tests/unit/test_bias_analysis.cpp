#include "cebias/bias_analysis.hpp"
#include "cebias/synthetic.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace cebias;

namespace {

CellStats stats_of(std::initializer_list<double> xs) {
    CellStats s;
    for (double x : xs) s.add(x);
    return s;
}

CellStats repeated(double value, std::size_t n) {
    CellStats s;
    for (std::size_t i = 0; i < n; ++i) s.add(value);
    return s;
}

EvalCell cell(std::string model, std::string layer, std::string concept_name, std::string category, CellStats s) {
    return EvalCell{std::move(model), std::move(layer), std::move(concept_name), std::move(category), s};
}

}  // namespace

TEST_CASE("cell stats merge like a flat list", "[stats]") {
    const auto a = stats_of({0.1, 0.4, 0.9});
    const auto b = stats_of({0.3, 0.5});
    auto merged = a;
    merged.merge(b);
    const auto flat = stats_of({0.1, 0.4, 0.9, 0.3, 0.5});
    CHECK(merged.n == 5);
    CHECK(merged.mean() == Catch::Approx(flat.mean()).epsilon(1e-14));
    CHECK(merged.std() == Catch::Approx(flat.std()).epsilon(1e-12));
}

TEST_CASE("relative delta", "[bias]") {
    CHECK(*relative_delta_pct(0.4, 0.5) == Catch::Approx(-20.0).epsilon(1e-12));
    CHECK(*relative_delta_pct(0.5, 0.5) == 0.0);
    CHECK_FALSE(relative_delta_pct(0.3, 0.0));
    CHECK_FALSE(relative_delta_pct(0.3, 1e-7));
}

TEST_CASE("bias table from aggregated cells", "[bias]") {
    const std::vector<EvalCell> cells{
        cell("m", "l", "car", "any", repeated(0.5, 10)),
        cell("m", "l", "car", "road", repeated(0.4, 10)),
        cell("m", "l", "car", "vanilla", repeated(0.55, 10)),
        cell("m", "l", "car", "forest", repeated(0.5, 10)),
    };
    const auto report = bias_table(cells);
    CHECK(report.categories == std::vector<std::string>{"any", "vanilla", "forest", "road"});
    CHECK(*report.at("car", "road").delta_pct == Catch::Approx(-20.0));
    CHECK(*report.at("car", "any").delta_pct == 0.0);
    CHECK(*report.at("car", "forest").delta_pct == 0.0);
    CHECK(*report.at("car", "vanilla").delta_pct == Catch::Approx(10.0));
}

TEST_CASE("identical categories give zero deltas", "[bias]") {
    std::vector<EvalCell> cells;
    for (const char* cat : {"any", "a", "b", "c"}) {
        cells.push_back(cell("m1", "l", "car", cat, stats_of({0.2, 0.7, 0.35})));
        cells.push_back(cell("m2", "l", "car", cat, stats_of({0.6})));
    }
    const auto report = bias_table(cells);
    for (const auto& c : report.cells) CHECK(*c.delta_pct == 0.0);
    CHECK(bias_delta_csv(report) == "concept,any,a,b,c\ncar,0.0000,0.0000,0.0000,0.0000\n");
}

TEST_CASE("missing baseline", "[bias]") {
    const std::vector<EvalCell> cells{cell("m", "l", "car", "road", repeated(0.4, 3))};
    CHECK(testing::error_kind([&] { bias_table(cells); }) == ErrorKind::BaselineMissing);
    CHECK(testing::error_kind([] { bias_table(std::span<const EvalCell>{}); }) == ErrorKind::EmptyReport);
}

TEST_CASE("deltas are invariant to scaling every IoU", "[bias]") {
    Rng rng(6);
    std::vector<EvalCell> cells, scaled;
    for (const char* concept_name : {"car", "dog"})
        for (const char* cat : {"any", "x", "y", "z"}) {
            CellStats s, t;
            for (int i = 0; i < 7; ++i) {
                const double v = rng.uniform(0.05, 0.95);
                s.add(v);
                t.add(v * 0.37);
            }
            cells.push_back(cell("m", "l", concept_name, cat, s));
            scaled.push_back(cell("m", "l", concept_name, cat, t));
        }
    const auto a = bias_table(cells), b = bias_table(scaled);
    for (std::size_t i = 0; i < a.cells.size(); ++i)
        CHECK(*a.cells[i].delta_pct == Catch::Approx(*b.cells[i].delta_pct).margin(1e-9));
}

TEST_CASE("aggregation examples", "[aggregate]") {
    const std::vector<EvalCell> one{cell("m", "l", "car", "any", stats_of({0.1, 0.3}))};
    const auto same = aggregate(one, Scope::PerModel);
    REQUIRE(same.size() == 1);
    CHECK(same[0].stats.mean() == one[0].stats.mean());
    CHECK(same[0].model == "m");

    const std::vector<EvalCell> equal{cell("a", "l", "car", "any", repeated(0.2, 10)),
                                      cell("b", "l", "car", "any", repeated(0.4, 10))};
    CHECK(aggregate(equal, Scope::CrossModel)[0].stats.mean() == Catch::Approx(0.3));

    const std::vector<EvalCell> weighted{cell("a", "l", "car", "any", repeated(0.2, 10)),
                                         cell("b", "l", "car", "any", repeated(0.4, 30))};
    const auto cross = aggregate(weighted, Scope::CrossModel);
    REQUIRE(cross.size() == 1);
    CHECK(cross[0].stats.mean() == Catch::Approx(0.35));
    CHECK(cross[0].stats.n == 40);
    CHECK(cross[0].model == "*");

    CHECK(testing::error_kind([] { aggregate(std::span<const EvalCell>{}, Scope::PerModel); }) == ErrorKind::EmptyReport);
}

TEST_CASE("per-model then cross-model equals flat aggregation", "[aggregate]") {
    Rng rng(13);
    std::vector<EvalCell> cells;
    for (const char* model : {"m1", "m2", "m3"})
        for (const char* layer : {"early", "late"})
            for (int rep = 0; rep < 3; ++rep) {
                CellStats s;
                const auto n = 1 + rng.below(20);
                for (std::size_t i = 0; i < n; ++i) s.add(rng.uniform());
                cells.push_back(cell(model, layer, "car", rep == 0 ? "any" : "road", s));
            }
    const auto per_model = aggregate(cells, Scope::PerModel);
    const auto two_step = aggregate(per_model, Scope::CrossModel);
    const auto flat = aggregate(cells, Scope::CrossModel);
    REQUIRE(two_step.size() == flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        CHECK(two_step[i].stats.n == flat[i].stats.n);
        CHECK(two_step[i].stats.mean() == Catch::Approx(flat[i].stats.mean()).epsilon(1e-13));
    }
    for (const auto& c : aggregate(cells, Scope::PerLayer)) CHECK(c.layer != "*");
}

TEST_CASE("evaluation of a zero CE scores zero", "[eval]") {
    SyntheticSpec spec;
    spec.images = 3;
    spec.val_images = 0;
    const auto data = gen_separable(spec);
    ConceptEmbedding zero;
    zero.weights.assign(spec.channels, 0.0);
    zero.meta = harness_meta(spec);
    for (const auto& r : evaluate_maps(zero, data.labeled(Split::Train))) CHECK(r.value == 0.0);

    ConceptEmbedding planted = zero;
    planted.weights = data.direction;
    for (const auto& r : evaluate_maps(planted, data.labeled(Split::Train))) CHECK(r.value >= 0.95);
}

TEST_CASE("evaluation through the index and activation store", "[eval]") {
    testing::TempDir dir("eval");
    WorkspaceOptions opt;
    opt.spec.images = 4;
    opt.spec.val_images = 2;
    opt.test_sets = false;
    write_workspace(opt, dir.path());
    const auto index = load_index(dir / "index.jsonl");
    ActivationStore store;
    store.add_manifest(dir / "activations.json");
    const auto data = gen_separable(opt.spec);
    ConceptEmbedding planted;
    planted.weights = data.direction;
    planted.meta = harness_meta(opt.spec);
    const auto results = evaluate_ce(planted, index, store, Split::Val);
    REQUIRE(results.size() == 2);
    for (const auto& r : results) CHECK(r.value >= 0.95);

    ActivationStore empty;
    CHECK(testing::error_kind([&] { evaluate_ce(planted, index, empty, Split::Val); }) == ErrorKind::Integrity);
    ConceptDatasetIndex none;
    CHECK(testing::error_kind([&] { evaluate_ce(planted, none, store); }) == ErrorKind::Precondition);
}

TEST_CASE("the baseline fed as a category has zero delta", "[bias]") {
    SyntheticSpec spec;
    spec.noise = 0.6;
    spec.seed = 2;
    const auto data = gen_separable(spec);
    const auto ce = train_net2vec(data.labeled(Split::Train), harness_train_config(), harness_meta(spec));
    auto sets = bias_test_sets(data, 3);
    sets["copy_of_any"] = sets.at(kAnyCategory);
    const std::vector<ConceptEmbedding> ces{ce};
    const auto report = bias_table(ces, sets);
    CHECK(report.at(spec.concept_name, "copy_of_any").delta_pct == 0.0);
    CHECK(report.at(spec.concept_name, kAnyCategory).delta_pct == 0.0);
    CHECK(report.meta["models"] == nlohmann::ordered_json::array({spec.model}));

    sets.erase(kAnyCategory);
    CHECK(testing::error_kind([&] { bias_table(ces, sets); }) == ErrorKind::BaselineMissing);
}

TEST_CASE("scheme similarity report", "[cos]") {
    auto make = [](std::vector<double> w, DataTag tag, std::string layer) {
        ConceptEmbedding ce;
        ce.weights = std::move(w);
        ce.meta = CeMeta{"car", "m", std::move(layer), Scheme::Net2Vec, tag, ""};
        return ce;
    };
    const std::vector<ConceptEmbedding> ces{make({1, 2, 3}, DataTag::Vanilla, "late"),
                                            make({1, 2, 3}, DataTag::Places, "late"),
                                            make({3, 0, -1}, DataTag::Voronoi, "late"),
                                            make({5, 5, 5}, DataTag::Places, "early")};
    const auto groups = scheme_similarity_report(ces, std::vector<std::string>{"late"});
    REQUIRE(groups.size() == 1);
    const auto& m = groups[0].matrix;
    CHECK(m.at(DataTag::Vanilla, DataTag::Places).stats.mean == 1.0);
    CHECK(m.at(DataTag::Vanilla, DataTag::Voronoi).stats.mean == 0.0);
    for (auto t : m.tags) {
        CHECK(m.at(t, t).stats.mean == 1.0);
        CHECK(m.at(t, t).stats.std == 0.0);
    }
    const auto csv = cossim_csv(m);
    CHECK(csv.rfind("tag_a,tag_b,mean,std,n\nvanilla,vanilla,1.000000,0.000000,1\n", 0) == 0);

    const std::vector<ConceptEmbedding> lone{ces[0]};
    CHECK(testing::error_kind([&] { scheme_similarity_report(lone); }) == ErrorKind::EmptyReport);
}

TEST_CASE("ablation records failing points and continues", "[ablation]") {
    const auto result = ablation_sweep(AblationAxis::VariantCount, {"1", "4", "8", "32"}, [](const std::string& v) {
        if (v == "8") throw Error(ErrorKind::Integrity, "missing index for k=8");
        return std::vector<double>{0.5, 0.7};
    });
    REQUIRE(result.points.size() == 4);
    CHECK(result.failures() == 1);
    CHECK(result.points[2].error);
    CHECK(result.points[3].stats.mean == Catch::Approx(0.6));
    CHECK(ablation_csv(result) ==
          "axis,value,mean_iou,std,n\n"
          "variant_count,1,0.600000,0.100000,2\n"
          "variant_count,4,0.600000,0.100000,2\n"
          "variant_count,8,NA,NA,0\n"
          "variant_count,32,0.600000,0.100000,2\n");
    CHECK(to_json(result)["points"][2].contains("error"));

    CHECK(testing::error_kind([] { ablation_sweep(AblationAxis::Scheme, {}, [](auto&) { return std::vector<double>{}; }); }) ==
          ErrorKind::Precondition);
    CHECK(testing::error_kind([] {
              ablation_sweep(AblationAxis::Scheme, {"a", "a"}, [](auto&) { return std::vector<double>{1}; });
          }) == ErrorKind::Precondition);
    CHECK(parse_ablation_axis("layer_depth") == AblationAxis::LayerDepth);
    CHECK(testing::error_kind([] { parse_ablation_axis("depth"); }) == ErrorKind::Config);
}

TEST_CASE("report emitters", "[bias]") {
    const std::vector<EvalCell> cells{cell("m", "l", "car", "any", repeated(0.5, 2)),
                                      cell("m", "l", "car", "road", repeated(0.4, 2)),
                                      cell("m", "l", "dog", "any", repeated(0.0, 2)),
                                      cell("m", "l", "dog", "road", repeated(0.3, 2))};
    const auto report = bias_table(cells);
    CHECK(bias_long_csv(report) ==
          "concept,category,mean_iou,n,delta_pct\n"
          "car,any,0.500000,2,0.0000\n"
          "car,road,0.400000,2,-20.0000\n"
          "dog,any,0.000000,2,NA\n"
          "dog,road,0.300000,2,NA\n");
    const auto j = to_json(report);
    CHECK(j["cells"][1]["delta_pct"].get<double>() == Catch::Approx(-20.0));
    CHECK(j["cells"][2]["delta_pct"].is_null());

    const auto heat = render_bias_heatmap(report, 10);
    CHECK(heat.width > 0);
    CHECK(heat.height > 0);
    const auto overlay = render_overlay(testing::solid(4, 4, 0, 0, 0), ConceptMask(4, 4, 1), 0.5);
    CHECK(overlay.at(0, 0)[0] > overlay.at(0, 0)[1]);
}
