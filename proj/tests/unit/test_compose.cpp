#include "cebias/compose.hpp"
#include "cebias/rng.hpp"
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>

using namespace cebias;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CEBIAS_TEST_DATA;

// Foreground images plus a pool of solid-color backgrounds for four classes.
struct Workspace {
    testing::TempDir dir{"compose"};
    ConceptDatasetIndex index;
    BackgroundPool pool;

    Workspace() {
        fs::create_directories(dir / "fg");
        const char* classes[] = {"bedroom", "crosswalk", "highway", "ocean"};
        std::uint8_t shade = 20;
        for (const char* cls : classes) {
            fs::create_directories(dir / ("pool/" + std::string(cls)));
            for (int i = 0; i < 2; ++i) {
                write_png(testing::solid(300 + 10 * i, 260, shade, static_cast<std::uint8_t>(255 - shade), 77),
                          dir / ("pool/" + std::string(cls) + "/img" + std::to_string(i) + ".png"));
                shade += 25;
            }
        }
        for (int n = 0; n < 3; ++n) {
            RgbImage img(320, 256 + 16 * n);
            for (std::size_t y = 0; y < img.height; ++y)
                for (std::size_t x = 0; x < img.width; ++x) {
                    auto* p = img.at(x, y);
                    p[0] = static_cast<std::uint8_t>(x);
                    p[1] = static_cast<std::uint8_t>(y);
                    p[2] = static_cast<std::uint8_t>(x ^ y);
                }
            ConceptMask m(img.height, img.width);
            for (std::size_t y = 40; y < 200; ++y)
                for (std::size_t x = 60 + 10 * n; x < 240; ++x) m.at(y, x) = 1;
            const std::string stem = "fg" + std::to_string(n);
            write_png(img, dir / ("fg/" + stem + ".png"));
            write_mask(m, dir / ("fg/" + stem + "_mask.png"));
            index.entries.push_back({"fg/" + stem + ".png", "fg/" + stem + "_mask.png", n < 2 ? "car" : "dog",
                                     n == 1 ? Split::Val : Split::Train, std::nullopt});
        }
        index.root = dir.path();
        pool = load_pool(dir / "pool", places_supercategories());
    }
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) { return read_file_bytes(p); }

}  // namespace

TEST_CASE("resize_crop geometry", "[compose]") {
    const auto square = testing::solid(256, 256, 1, 2, 3);
    CHECK(resize_crop(square) == square);

    const auto big = resize_crop(testing::solid(512, 512, 90, 80, 70));
    CHECK(big.width == 256);
    CHECK(big.height == 256);
    CHECK(big == testing::solid(256, 256, 90, 80, 70));

    // 512x256: height already at the target, so the middle 256 columns remain
    RgbImage wide(512, 256);
    ConceptMask mask(256, 512);
    for (std::size_t y = 0; y < 256; ++y)
        for (std::size_t x = 0; x < 512; ++x) {
            wide.at(x, y)[0] = static_cast<std::uint8_t>(x & 0xff);
            wide.at(x, y)[1] = static_cast<std::uint8_t>(x >> 8);
            wide.at(x, y)[2] = static_cast<std::uint8_t>(y);
            mask.at(y, x) = x >= 200 && x < 260;
        }
    const auto [img, m] = resize_crop(wide, mask);
    REQUIRE(img.width == 256);
    for (std::size_t y = 0; y < 256; y += 17)
        for (std::size_t x = 0; x < 256; ++x) {
            const std::size_t src = x + 128;
            REQUIRE(img.at(x, y)[0] == (src & 0xff));
            REQUIRE(img.at(x, y)[1] == (src >> 8));
            REQUIRE(img.at(x, y)[2] == y);
            REQUIRE(m.at(y, x) == (src >= 200 && src < 260));
        }
}

TEST_CASE("resize_crop of a tall image keeps aspect", "[compose]") {
    const auto tall = resize_crop(testing::solid(100, 300, 5, 6, 7));
    CHECK(tall.width == 256);
    CHECK(tall.height == 256);
    CHECK(tall == testing::solid(256, 256, 5, 6, 7));
    CHECK(testing::error_kind([] { resize_crop(RgbImage(0, 3)); }) == ErrorKind::Precondition);
}

TEST_CASE("paste is a per-pixel two-source choice", "[compose]") {
    const auto fg = testing::solid(8, 8, 255, 0, 0);
    const auto bg = testing::solid(8, 8, 0, 0, 255);
    CHECK(paste(fg, ConceptMask(8, 8, 1), bg) == fg);
    CHECK(paste(fg, ConceptMask(8, 8, 0), bg) == bg);
    ConceptMask half(8, 8);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 4; ++x) half.at(y, x) = 1;
    const auto out = paste(fg, half, bg);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) CHECK(out.at(x, y)[0] == (x < 4 ? 255 : 0));
}

TEST_CASE("voronoi partition examples", "[voronoi]") {
    const std::array<double, 2> one[] = {{0.3, 0.9}};
    const auto single = voronoi_partition(one);
    CHECK(std::all_of(single.labels.begin(), single.labels.end(), [](auto l) { return l == 0; }));

    const std::array<double, 2> two[] = {{0.25, 0.5}, {0.75, 0.5}};
    const auto halves = voronoi_partition(two);
    for (std::size_t y = 0; y < 256; y += 5)
        for (std::size_t x = 0; x < 256; ++x) REQUIRE(halves.at(x, y) == (x < 128 ? 0u : 1u));

    // seeds at x = 64 and x = 193 put column 128's centre (128.5) on the bisector
    const std::array<double, 2> tied[] = {{0.25, 0.5}, {193.0 / 256.0, 0.5}};
    const auto t = voronoi_partition(tied);
    const std::array<double, 2> tied_swapped[] = {{193.0 / 256.0, 0.5}, {0.25, 0.5}};
    const auto ts = voronoi_partition(tied_swapped);
    for (std::size_t y = 0; y < 256; y += 5) {
        CHECK(t.at(128, y) == 0u);
        CHECK(t.at(129, y) == 1u);
        CHECK(ts.at(128, y) == 0u);  // now the right-hand seed has the lower index
        CHECK(ts.at(127, y) == 1u);
    }
}

TEST_CASE("voronoi duplicates and empty input are rejected", "[voronoi]") {
    const std::array<double, 2> dup[] = {{0.1, 0.2}, {0.5, 0.5}, {0.1, 0.2}};
    CHECK(testing::error_kind([&] { voronoi_partition(dup); }) == ErrorKind::Precondition);
    CHECK(testing::error_kind([] { voronoi_partition(std::span<const std::array<double, 2>>{}); }) ==
          ErrorKind::Precondition);
}

TEST_CASE("voronoi matches brute force and every cell holds its seed", "[voronoi]") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.below(12);
        auto pts = sample_voronoi_points(rng, n);
        const auto map = voronoi_partition(pts, 32);
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) {
                std::uint32_t best = 0;
                double best_d = 1e300;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dx = x + 0.5 - pts[i][0] * 32, dy = y + 0.5 - pts[i][1] * 32;
                    if (dx * dx + dy * dy < best_d) {
                        best_d = dx * dx + dy * dy;
                        best = static_cast<std::uint32_t>(i);
                    }
                }
                REQUIRE(map.at(x, y) == best);
            }
    }
    // at 256 px the eight default seeds are well separated for these seeds
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng r(seed);
        const auto pts = sample_voronoi_points(r);
        double min_gap = 1e300;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j)
                min_gap = std::min(min_gap, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]) * 256);
        if (min_gap < 2.0) continue;
        const auto map = voronoi_partition(pts);
        for (std::size_t i = 0; i < pts.size(); ++i)
            CHECK(map.at(static_cast<std::size_t>(pts[i][0] * 256), static_cast<std::size_t>(pts[i][1] * 256)) == i);
    }
}

TEST_CASE("voronoi fill semantics", "[voronoi]") {
    const std::array<double, 2> one[] = {{0.5, 0.5}};
    const auto cells1 = voronoi_partition(one, 16);
    RgbImage bg(16, 16);
    for (std::size_t i = 0; i < bg.pixels.size(); ++i) bg.pixels[i] = static_cast<std::uint8_t>(i * 7);
    const CellFill no_shift{0, 0, 0};
    CHECK(voronoi_fill(cells1, std::span(&bg, 1), std::span(&no_shift, 1)) == bg);

    const CellFill shifted{0, 3, 5};
    const auto out = voronoi_fill(cells1, std::span(&bg, 1), std::span(&shifted, 1));
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) REQUIRE(out.at(x, y)[0] == bg.at((x + 3) % 16, (y + 5) % 16)[0]);

    Rng rng(12);
    const auto pts = sample_voronoi_points(rng, 5);
    const auto cells = voronoi_partition(pts, 64);
    std::vector<RgbImage> colors;
    for (int i = 0; i < 5; ++i) colors.push_back(testing::solid(64, 64, static_cast<std::uint8_t>(40 * i + 10), 0, 0));
    const auto [img, fills] = voronoi_background(cells, colors, rng);
    std::set<std::size_t> used;
    for (const auto& f : fills) used.insert(f.background);
    CHECK(used.size() == 5);  // without replacement while the pool lasts
    for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
            REQUIRE(img.at(x, y)[0] == colors[fills[cells.at(x, y)].background].at(0, 0)[0]);

    Rng a(77), b(77);
    CHECK(voronoi_background(cells, colors, a).first == voronoi_background(cells, colors, b).first);
    CHECK(testing::error_kind([&] { voronoi_background(cells, std::span<const RgbImage>{}, a); }) ==
          ErrorKind::Precondition);
}

TEST_CASE("cell plans reuse backgrounds only after exhausting them", "[voronoi]") {
    Rng rng(3);
    const auto fills = plan_voronoi_cells(8, 3, rng);
    std::set<std::size_t> first3{fills[0].background, fills[1].background, fills[2].background};
    CHECK(first3.size() == 3);
    for (const auto& f : fills) {
        CHECK(f.background < 3);
        CHECK(f.dx < 256);
        CHECK(f.dy < 256);
    }
    for (const auto& f : plan_voronoi_cells(8, 3, rng, 256, true)) CHECK(f.background == 0);
}

TEST_CASE("supercategory table", "[pool]") {
    const auto table = places_supercategories();
    CHECK(table.categories.size() == 10);
    CHECK(table.classes_in("road") == std::vector<std::string>{"crosswalk", "highway"});
    CHECK(table.category_of("iceberg") == "snow");
    CHECK_FALSE(table.category_of("parking_lot"));
    const auto shipped = load_supercategories(fs::path(CEBIAS_TEST_DATA) / "../../config/places_supercategories.json");
    CHECK(shipped.categories == table.categories);
    CHECK(shipped.class_to_category == table.class_to_category);
}

TEST_CASE("background sampling without replacement", "[pool]") {
    Workspace ws;
    Rng rng(1);
    const auto ids = sample_backgrounds(ws.pool, "car", 4, rng);
    std::set<std::string> classes;
    for (const auto& id : ids) classes.insert(ws.pool.image(id).scene_class);
    CHECK(classes.size() == 4);

    for (int trial = 0; trial < 20; ++trial) {
        for (const auto& id : sample_backgrounds(ws.pool, "car", 3, rng, std::string("road"))) {
            const auto cls = ws.pool.image(id).scene_class;
            CHECK((cls == "crosswalk" || cls == "highway"));
        }
    }
    CHECK(testing::error_kind([&] { sample_backgrounds(ws.pool, "car", 1, rng, std::string("lava")); }) ==
          ErrorKind::Config);
    CHECK(testing::error_kind([&] { sample_backgrounds(ws.pool, "car", 1, rng, std::string("snow")); }) ==
          ErrorKind::ExhaustedPool);
}

TEST_CASE("exclusions are never violated", "[pool]") {
    Workspace ws;
    {
        std::ofstream out(ws.dir / "excl.json");
        out << R"([{"background": "ocean/img0.png", "concepts": ["car"]},
                   {"background": "ocean/img1.png", "concepts": ["car", "dog"]},
                   {"background": "bedroom/img1.png", "concepts": ["car"]}])";
    }
    auto pool = load_pool(ws.dir / "pool", places_supercategories(), ws.dir / "excl.json");
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        for (const auto& id : sample_backgrounds(pool, "car", 3, rng)) {
            CHECK(pool.image(id).scene_class != "ocean");
            CHECK(id != "bedroom/img1.png");
        }
    }
    const auto dog = sample_backgrounds(pool, "dog", 4, rng);
    CHECK(std::count(dog.begin(), dog.end(), "ocean/img0.png") <= 1);

    {
        std::ofstream out(ws.dir / "bad.json");
        out << R"([{"background": "ocean/nope.png", "concepts": ["car"]}])";
    }
    CHECK(testing::error_kind([&] { load_pool(ws.dir / "pool", places_supercategories(), ws.dir / "bad.json"); }) ==
          ErrorKind::Integrity);
}

TEST_CASE("missing or empty pools", "[pool]") {
    testing::TempDir dir("pool");
    CHECK(testing::error_kind([&] { load_pool(dir / "none", places_supercategories()); }) == ErrorKind::Io);
    fs::create_directories(dir / "empty/highway");
    CHECK(testing::error_kind([&] { load_pool(dir / "empty", places_supercategories()); }) == ErrorKind::ExhaustedPool);
}

TEST_CASE("composition specs round trip through JSON", "[compose]") {
    CompositionSpec spec;
    spec.technique = Technique::Voronoi;
    spec.foreground_image = "a.png";
    spec.foreground_mask = "a_m.png";
    spec.concept_name = "car";
    spec.background_ids = {"x/1.png", "y/2.png"};
    spec.seed_points = {{0.1, 0.2}, {0.7, 0.3}};
    spec.cells = {{0, 1, 2}, {1, 255, 0}};
    spec.rng_seed = 0xfedcba9876543210ull;
    spec.category = "road";
    const auto back = composition_spec_from_json(to_json(spec));
    CHECK(to_json(back) == to_json(spec));
    CHECK(back.rng_seed == spec.rng_seed);
    CHECK(back.seed_points == spec.seed_points);

    spec.cells.pop_back();
    CHECK(testing::error_kind([&] { spec.validate(); }) == ErrorKind::Precondition);
    CHECK(parse_technique("synthetic") == Technique::Synthetic);
    CHECK(testing::error_kind([] { parse_technique("blur"); }) == ErrorKind::Schema);
}

TEST_CASE("variants preserve the canvas and are reconstructible", "[compose]") {
    Workspace ws;
    for (auto technique : {Technique::Paste, Technique::Voronoi}) {
        VariantOptions opt;
        opt.technique = technique;
        opt.variants = 3;
        opt.seed = 5;
        const auto out = ws.dir / ("out_" + std::string(to_string(technique)));
        const auto set = generate_variants(ws.index, ws.pool, opt, out);
        REQUIRE(set.index.entries.size() == 3 + 9);
        REQUIRE(set.specs.size() == 9);
        std::size_t k = 0;
        for (const auto& e : set.index.entries) {
            if (!e.variant_of) continue;
            const auto& spec = set.specs[k++];
            const auto fg = resize_crop(read_image(set.index.resolve(*e.variant_of)));
            const auto img = read_image(set.index.image_path(e));
            const auto mask = read_mask(set.index.mask_path(e));
            const auto orig_mask = resize_crop(read_image(set.index.resolve(*e.variant_of)),
                                               read_mask(set.index.resolve(spec.foreground_mask)))
                                       .second;
            CHECK(mask == orig_mask);
            for (std::size_t i = 0; i < mask.pixels(); ++i)
                if (mask.values[i])
                    for (int c = 0; c < 3; ++c) REQUIRE(img.pixels[3 * i + c] == fg.pixels[3 * i + c]);

            // the sidecar alone rebuilds the PNG
            std::ifstream in(set.index.image_path(e).replace_extension(".json"));
            const auto sidecar = composition_spec_from_json(nlohmann::json::parse(in));
            const auto rebuilt = compose(sidecar, out, ws.pool);
            CHECK(rebuilt.pixels == img);
        }
    }
}

TEST_CASE("one variant doubles the concept's entries", "[compose]") {
    Workspace ws;
    VariantOptions opt;
    opt.concept_name = "car";
    const auto set = generate_variants(ws.index, ws.pool, opt, ws.dir / "out");
    CHECK(set.index.select("car").size() == 4);
    CHECK(set.index.select("dog").size() == 1);
}

TEST_CASE("paste variants draw distinct classes per foreground", "[compose]") {
    Workspace ws;
    VariantOptions opt;
    opt.variants = 4;
    opt.split = Split::Val;
    const auto set = generate_variants(ws.index, ws.pool, opt, ws.dir / "out");
    REQUIRE(set.specs.size() == 4);
    std::set<std::string> classes;
    for (const auto& s : set.specs) classes.insert(ws.pool.image(s.background_ids[0]).scene_class);
    CHECK(classes.size() == 4);
}

TEST_CASE("variant generation is deterministic across runs and job counts", "[compose]") {
    Workspace ws;
    VariantOptions opt;
    opt.technique = Technique::Voronoi;
    opt.variants = 2;
    opt.seed = 9;
    const auto a = generate_variants(ws.index, ws.pool, opt, ws.dir / "a");
    opt.jobs = 3;
    const auto b = generate_variants(ws.index, ws.pool, opt, ws.dir / "b");
    REQUIRE(a.index.entries.size() == b.index.entries.size());
    CHECK(format_index(a.index) == format_index(b.index));
    for (const auto& e : a.index.entries) {
        if (!e.variant_of) continue;
        CHECK(file_bytes(a.index.image_path(e)) == file_bytes(b.index.image_path(e)));
        CHECK(file_bytes(a.index.mask_path(e)) == file_bytes(b.index.mask_path(e)));
    }
    opt.seed = 10;
    const auto c = generate_variants(ws.index, ws.pool, opt, ws.dir / "c");
    CHECK(to_json(c.specs[0]) != to_json(a.specs[0]));
}

TEST_CASE("pinned voronoi variants use one background", "[compose]") {
    Workspace ws;
    VariantOptions opt;
    opt.technique = Technique::Voronoi;
    opt.pin_voronoi_background = true;
    const auto set = generate_variants(ws.index, ws.pool, opt, ws.dir / "out");
    for (const auto& s : set.specs) {
        CHECK(s.background_ids.size() == 1);
        for (const auto& c : s.cells) CHECK(c.background == 0);
    }
}
