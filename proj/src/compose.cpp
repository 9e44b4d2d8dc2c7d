#include "cebias/compose.hpp"

#include "cebias/error.hpp"
#include "cebias/parallel.hpp"
#include "cebias/resample.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cebias {

using nlohmann::json;
using nlohmann::ordered_json;

namespace fs = std::filesystem;

std::optional<std::string> SupercategoryMap::category_of(const std::string& scene_class) const {
    const auto it = class_to_category.find(scene_class);
    if (it == class_to_category.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> SupercategoryMap::classes_in(const std::string& category) const {
    std::vector<std::string> out;
    for (const auto& [cls, cat] : class_to_category)
        if (cat == category) out.push_back(cls);
    return out;
}

SupercategoryMap places_supercategories() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
        {"architecture", {"abbey", "aqueduct", "arch", "attic", "basilica", "building_facade", "office_building"}},
        {"indoors", {"bedroom", "dining_room", "hotel_room", "kitchen", "kitchenette", "living_room"}},
        {"at_water", {"bayou", "canyon", "coast", "creek", "dock", "islet", "marsh", "ocean", "pond"}},
        {"machinery", {"engine_room"}},
        {"open_lands", {"badlands", "butte"}},
        {"forest", {"bamboo_forest", "forest_path", "rainforest"}},
        {"botanical", {"botanical_garden", "cottage_garden", "formal_garden", "orchard", "topiary_garden"}},
        {"field", {"golf_course", "wheat_field", "fairway"}},
        {"snow", {"crevasse", "iceberg", "mountain_snowy", "ski_slope", "snowfield"}},
        {"road", {"crosswalk", "highway"}},
    };
    SupercategoryMap map;
    for (const auto& [cat, classes] : table) {
        map.categories.push_back(cat);
        for (const auto& c : classes) map.class_to_category[c] = cat;
    }
    return map;
}

SupercategoryMap load_supercategories(const fs::path& json_path) {
    std::ifstream in(json_path);
    if (!in) fail(ErrorKind::Io, "cannot open supercategory map " + json_path.string());
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Schema, json_path.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (!doc.is_object()) fail(ErrorKind::Schema, json_path.string() + ": expected {category: [classes]}");
    SupercategoryMap map;
    for (const auto& [cat, classes] : doc.items()) {
        if (!classes.is_array()) fail(ErrorKind::Schema, json_path.string() + ": category " + cat + " must list classes");
        map.categories.push_back(cat);
        for (const auto& c : classes) {
            const auto name = c.get<std::string>();
            if (!map.class_to_category.emplace(name, cat).second)
                fail(ErrorKind::Schema, json_path.string() + ": class " + name + " appears in two supercategories");
        }
    }
    return map;
}

ordered_json to_json(const SupercategoryMap& map) {
    ordered_json j = ordered_json::object();
    for (const auto& cat : map.categories) {
        // keep the declaration order of classes from the built-in table where possible
        std::vector<std::string> classes;
        for (const auto& [cls, c] : map.class_to_category)
            if (c == cat) classes.push_back(cls);
        j[cat] = classes;
    }
    return j;
}

std::vector<std::string> BackgroundPool::classes() const {
    std::set<std::string> out;
    for (const auto& img : images) out.insert(img.scene_class);
    return {out.begin(), out.end()};
}

bool BackgroundPool::admissible(const BackgroundImage& image, const std::string& concept_name) const {
    const auto it = exclusions.find(image.id);
    return it == exclusions.end() || !it->second.contains(concept_name);
}

const BackgroundImage& BackgroundPool::image(const std::string& id) const {
    const auto it = std::lower_bound(images.begin(), images.end(), id,
                                     [](const BackgroundImage& b, const std::string& key) { return b.id < key; });
    if (it == images.end() || it->id != id) fail(ErrorKind::Integrity, "unknown background id " + id);
    return *it;
}

void load_exclusions(BackgroundPool& pool, const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open exclusion list " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Schema, path.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (!doc.is_array()) fail(ErrorKind::Schema, path.string() + ": exclusion list must be a JSON array");
    for (const auto& rec : doc) {
        if (!rec.is_object() || !rec.contains("background") || !rec.contains("concepts") || !rec["concepts"].is_array())
            fail(ErrorKind::Schema, path.string() + ": entries need \"background\" and \"concepts\"");
        const auto id = rec["background"].get<std::string>();
        pool.image(id);  // throws Integrity for unknown ids
        auto& banned = pool.exclusions[id];
        for (const auto& c : rec["concepts"]) banned.insert(c.get<std::string>());
    }
}

BackgroundPool load_pool(const fs::path& root, SupercategoryMap categories,
                         const std::optional<fs::path>& exclusions) {
    if (!fs::is_directory(root)) fail(ErrorKind::Io, "background pool directory does not exist: " + root.string());
    BackgroundPool pool;
    pool.root = root;
    pool.categories = std::move(categories);
    for (const auto& class_dir : fs::directory_iterator(root)) {
        if (!class_dir.is_directory()) continue;
        const auto scene_class = class_dir.path().filename().string();
        for (const auto& file : fs::directory_iterator(class_dir.path())) {
            if (!file.is_regular_file()) continue;
            auto ext = file.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
            if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
            pool.images.push_back({scene_class + "/" + file.path().filename().string(), scene_class, file.path()});
        }
    }
    std::sort(pool.images.begin(), pool.images.end(),
              [](const BackgroundImage& a, const BackgroundImage& b) { return a.id < b.id; });
    if (pool.images.empty()) fail(ErrorKind::ExhaustedPool, "background pool is empty: " + root.string());
    if (exclusions) load_exclusions(pool, *exclusions);
    return pool;
}

std::string_view to_string(Technique t) noexcept {
    switch (t) {
        case Technique::Paste: return "paste";
        case Technique::Voronoi: return "voronoi";
        case Technique::Synthetic: return "synthetic";
    }
    return "?";
}

Technique parse_technique(std::string_view text) {
    for (Technique t : {Technique::Paste, Technique::Voronoi, Technique::Synthetic})
        if (to_string(t) == text) return t;
    fail(ErrorKind::Schema, "unknown technique \"" + std::string(text) + "\" (paste|voronoi|synthetic)");
}

void CompositionSpec::validate() const {
    require(output_size > 0, ErrorKind::Precondition, "output size must be positive");
    require(!background_ids.empty(), ErrorKind::Precondition, "composition needs at least one background");
    if (technique == Technique::Voronoi) {
        require(!seed_points.empty() && cells.size() == seed_points.size(), ErrorKind::Precondition,
                "voronoi composition needs one cell fill per seed point");
        for (const auto& c : cells)
            require(c.background < background_ids.size() && c.dx < output_size && c.dy < output_size,
                    ErrorKind::Precondition, "voronoi cell fill out of range");
    } else {
        require(background_ids.size() == 1, ErrorKind::Precondition, "paste compositions use exactly one background");
    }
}

ordered_json to_json(const CompositionSpec& spec) {
    ordered_json j;
    j["technique"] = std::string(to_string(spec.technique));
    j["foreground"] = {{"image", spec.foreground_image}, {"mask", spec.foreground_mask}, {"concept", spec.concept_name}};
    j["backgrounds"] = spec.background_ids;
    if (spec.technique == Technique::Voronoi) {
        ordered_json pts = ordered_json::array();
        for (const auto& p : spec.seed_points) pts.push_back({p[0], p[1]});
        j["seed_points"] = pts;
        ordered_json cells = ordered_json::array();
        for (const auto& c : spec.cells) cells.push_back({{"background", c.background}, {"dx", c.dx}, {"dy", c.dy}});
        j["cells"] = cells;
    }
    j["rng_seed"] = spec.rng_seed;
    j["output_size"] = spec.output_size;
    j["category"] = spec.category ? json(*spec.category) : json(nullptr);
    return j;
}

CompositionSpec composition_spec_from_json(const json& j) {
    CompositionSpec spec;
    try {
        spec.technique = parse_technique(j.at("technique").get<std::string>());
        const auto& fg = j.at("foreground");
        spec.foreground_image = fg.at("image").get<std::string>();
        spec.foreground_mask = fg.at("mask").get<std::string>();
        spec.concept_name = fg.at("concept").get<std::string>();
        spec.background_ids = j.at("backgrounds").get<std::vector<std::string>>();
        if (j.contains("seed_points"))
            for (const auto& p : j["seed_points"]) spec.seed_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        if (j.contains("cells"))
            for (const auto& c : j["cells"])
                spec.cells.push_back({c.at("background").get<std::size_t>(), c.at("dx").get<std::uint32_t>(),
                                      c.at("dy").get<std::uint32_t>()});
        spec.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        spec.output_size = j.at("output_size").get<std::size_t>();
        if (j.contains("category") && !j["category"].is_null()) spec.category = j["category"].get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("bad composition spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

namespace {

struct CropGeometry {
    std::size_t scaled_w, scaled_h, offset_x, offset_y;
};

CropGeometry crop_geometry(std::size_t w, std::size_t h, std::size_t size) {
    require(w >= 1 && h >= 1 && size >= 1, ErrorKind::Precondition, "resize_crop of an empty image");
    CropGeometry g{};
    if (w <= h) {
        g.scaled_w = size;
        g.scaled_h = std::max<std::size_t>(size, static_cast<std::size_t>(std::llround(
                                                     static_cast<double>(h) * static_cast<double>(size) / static_cast<double>(w))));
    } else {
        g.scaled_h = size;
        g.scaled_w = std::max<std::size_t>(size, static_cast<std::size_t>(std::llround(
                                                     static_cast<double>(w) * static_cast<double>(size) / static_cast<double>(h))));
    }
    g.offset_x = (g.scaled_w - size) / 2;
    g.offset_y = (g.scaled_h - size) / 2;
    return g;
}

RgbImage crop(const RgbImage& img, const CropGeometry& g, std::size_t size) {
    if (img.width == size && img.height == size) return img;
    RgbImage out(size, size);
    for (std::size_t y = 0; y < size; ++y)
        std::copy_n(img.at(g.offset_x, y + g.offset_y), size * 3, out.at(0, y));
    return out;
}

ConceptMask crop(const ConceptMask& m, const CropGeometry& g, std::size_t size) {
    ConceptMask out(size, size);
    out.concept_name = m.concept_name;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) out.at(y, x) = m.at(y + g.offset_y, x + g.offset_x);
    return out;
}

struct PreparedForeground {
    RgbImage image;
    ConceptMask mask;
};

PreparedForeground prepare_foreground(const fs::path& image_path, const fs::path& mask_path, std::size_t size) {
    const RgbImage img = read_image(image_path);
    const ConceptMask mask = read_mask(mask_path);
    require(img.width == mask.width && img.height == mask.height, ErrorKind::Shape,
            "mask " + mask_path.string() + " does not match image size");
    auto [fg, m] = resize_crop(img, mask, size);
    return {std::move(fg), std::move(m)};
}

CompositeImage compose_prepared(const PreparedForeground& fg, const CompositionSpec& spec, const BackgroundPool& pool) {
    spec.validate();
    std::vector<RgbImage> backgrounds;
    backgrounds.reserve(spec.background_ids.size());
    for (const auto& id : spec.background_ids)
        backgrounds.push_back(resize_crop(read_image(pool.image(id).path), spec.output_size));

    RgbImage background;
    if (spec.technique == Technique::Voronoi) {
        const auto cells = voronoi_partition(spec.seed_points, spec.output_size);
        background = voronoi_fill(cells, backgrounds, spec.cells);
    } else {
        background = std::move(backgrounds.front());
    }
    if (fg.mask.count() == 0)
        spdlog::warn("mask of {} is empty; composite is pure background", spec.foreground_image);
    CompositeImage out;
    out.pixels = paste(fg.image, fg.mask, background);
    out.mask = fg.mask;
    out.spec = spec;
    return out;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
    return fs::absolute(p).lexically_normal().lexically_relative(fs::absolute(base).lexically_normal()).generic_string();
}

void write_json_file(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(1) << '\n';
}

}  // namespace

RgbImage resize_crop(const RgbImage& image, std::size_t size) {
    const auto g = crop_geometry(image.width, image.height, size);
    return crop(resize_bilinear(image, g.scaled_w, g.scaled_h), g, size);
}

std::pair<RgbImage, ConceptMask> resize_crop(const RgbImage& image, const ConceptMask& mask, std::size_t size) {
    require(image.width == mask.width && image.height == mask.height, ErrorKind::Shape,
            "image and mask sizes differ");
    const auto g = crop_geometry(image.width, image.height, size);
    auto img = crop(resize_bilinear(image, g.scaled_w, g.scaled_h), g, size);
    auto m = crop(resize_area(mask, g.scaled_h, g.scaled_w), g, size);
    return {std::move(img), std::move(m)};
}

RgbImage paste(const RgbImage& fg, const ConceptMask& mask, const RgbImage& bg) {
    require(fg.width == bg.width && fg.height == bg.height && mask.width == fg.width && mask.height == fg.height,
            ErrorKind::Shape, "paste inputs must share one size");
    RgbImage out = bg;
    for (std::size_t y = 0; y < fg.height; ++y)
        for (std::size_t x = 0; x < fg.width; ++x)
            if (mask.at(y, x)) std::copy_n(fg.at(x, y), 3, out.at(x, y));
    return out;
}

LabelMap voronoi_partition(std::span<const std::array<double, 2>> points, std::size_t size) {
    require(!points.empty(), ErrorKind::Precondition, "voronoi partition needs at least one point");
    require(size > 0, ErrorKind::Precondition, "voronoi partition size must be positive");
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j)
            require(points[i] != points[j], ErrorKind::Precondition, "duplicate voronoi seed point");

    const double s = static_cast<double>(size);
    std::vector<std::array<double, 2>> seeds(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) seeds[i] = {points[i][0] * s, points[i][1] * s};

    LabelMap map{size, std::vector<std::uint32_t>(size * size)};
    for (std::size_t y = 0; y < size; ++y) {
        const double cy = static_cast<double>(y) + 0.5;
        for (std::size_t x = 0; x < size; ++x) {
            const double cx = static_cast<double>(x) + 0.5;
            std::uint32_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                const double dx = cx - seeds[i][0], dy = cy - seeds[i][1];
                const double d = dx * dx + dy * dy;
                if (d < best_d) {  // strict: earlier seeds win ties
                    best_d = d;
                    best = static_cast<std::uint32_t>(i);
                }
            }
            map.labels[y * size + x] = best;
        }
    }
    return map;
}

std::vector<std::array<double, 2>> sample_voronoi_points(Rng& rng, std::size_t count) {
    std::vector<std::array<double, 2>> pts;
    while (pts.size() < count) {
        std::array<double, 2> p{rng.uniform(), rng.uniform()};
        if (std::find(pts.begin(), pts.end(), p) == pts.end()) pts.push_back(p);
    }
    return pts;
}

RgbImage voronoi_fill(const LabelMap& cells, std::span<const RgbImage> backgrounds, std::span<const CellFill> fills) {
    require(!backgrounds.empty(), ErrorKind::Precondition, "voronoi fill needs at least one background");
    const std::size_t n = cells.size;
    for (const auto& bg : backgrounds)
        require(bg.width == n && bg.height == n, ErrorKind::Shape, "voronoi backgrounds must match the label map size");
    RgbImage out(n, n);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const auto label = cells.at(x, y);
            require(label < fills.size(), ErrorKind::Precondition, "voronoi cell without a fill");
            const auto& f = fills[label];
            require(f.background < backgrounds.size(), ErrorKind::Precondition, "voronoi fill references missing background");
            const auto& bg = backgrounds[f.background];
            std::copy_n(bg.at((x + f.dx) % n, (y + f.dy) % n), 3, out.at(x, y));
        }
    }
    return out;
}

std::vector<CellFill> plan_voronoi_cells(std::size_t cell_count, std::size_t background_count, Rng& rng,
                                         std::size_t size, bool pin_first) {
    require(background_count > 0, ErrorKind::Precondition, "voronoi background needs at least one background");
    std::vector<std::size_t> order(background_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    std::vector<CellFill> fills(cell_count);
    for (std::size_t i = 0; i < cell_count; ++i) {
        if (pin_first)
            fills[i].background = 0;
        else
            fills[i].background = i < background_count ? order[i] : static_cast<std::size_t>(rng.below(background_count));
        fills[i].dx = static_cast<std::uint32_t>(rng.below(size));
        fills[i].dy = static_cast<std::uint32_t>(rng.below(size));
    }
    return fills;
}

std::pair<RgbImage, std::vector<CellFill>> voronoi_background(const LabelMap& cells,
                                                              std::span<const RgbImage> backgrounds, Rng& rng,
                                                              bool pin_first) {
    require(!backgrounds.empty(), ErrorKind::Precondition, "voronoi background needs at least one background");
    const std::uint32_t cell_count = *std::max_element(cells.labels.begin(), cells.labels.end()) + 1;
    auto fills = plan_voronoi_cells(cell_count, backgrounds.size(), rng, cells.size, pin_first);
    auto img = voronoi_fill(cells, backgrounds, fills);
    return {std::move(img), std::move(fills)};
}

std::vector<std::string> sample_backgrounds(const BackgroundPool& pool, const std::string& concept_name, std::size_t k,
                                            Rng& rng, const std::optional<std::string>& category) {
    std::vector<std::string> classes = pool.classes();
    if (category) {
        std::vector<std::string> allowed;
        if (std::find(pool.categories.categories.begin(), pool.categories.categories.end(), *category) !=
            pool.categories.categories.end()) {
            allowed = pool.categories.classes_in(*category);
        } else if (std::binary_search(classes.begin(), classes.end(), *category)) {
            allowed = {*category};  // pseudo-class pools (synthetic backgrounds)
        } else {
            fail(ErrorKind::Config, "unknown background category \"" + *category + "\"");
        }
        std::sort(allowed.begin(), allowed.end());
        std::vector<std::string> kept;
        std::set_intersection(classes.begin(), classes.end(), allowed.begin(), allowed.end(), std::back_inserter(kept));
        classes = std::move(kept);
    }

    std::vector<std::vector<const BackgroundImage*>> candidates;
    std::vector<std::string> admissible_classes;
    for (const auto& cls : classes) {
        std::vector<const BackgroundImage*> imgs;
        for (const auto& img : pool.images)
            if (img.scene_class == cls && pool.admissible(img, concept_name)) imgs.push_back(&img);
        if (!imgs.empty()) {
            admissible_classes.push_back(cls);
            candidates.push_back(std::move(imgs));
        }
    }
    if (admissible_classes.empty())
        fail(ErrorKind::ExhaustedPool, "no admissible background for concept \"" + concept_name + "\"" +
                                           (category ? " in category \"" + *category + "\"" : std::string()));

    std::vector<std::string> out;
    out.reserve(k);
    std::vector<std::size_t> order(admissible_classes.size());
    while (out.size() < k) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        for (std::size_t i = 0; i < order.size() && out.size() < k; ++i) {
            const auto& imgs = candidates[order[i]];
            out.push_back(imgs[rng.below(imgs.size())]->id);
        }
    }
    return out;
}

CompositeImage compose(const CompositionSpec& spec, const fs::path& fg_root, const BackgroundPool& pool) {
    auto resolve = [&](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp : fg_root / fp;
    };
    const auto fg = prepare_foreground(resolve(spec.foreground_image), resolve(spec.foreground_mask), spec.output_size);
    return compose_prepared(fg, spec, pool);
}

VariantSet generate_variants(const ConceptDatasetIndex& index, const BackgroundPool& pool, const VariantOptions& options,
                             const fs::path& out_dir) {
    require(options.variants >= 1, ErrorKind::Precondition, "variant count must be >= 1");
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");

    std::vector<const IndexEntry*> selected;
    for (const auto& e : index.entries) {
        if (e.variant_of) continue;
        if (options.split && e.split != *options.split) continue;
        if (options.concept_name && e.concept_name != *options.concept_name) continue;
        selected.push_back(&e);
    }

    struct Produced {
        std::vector<IndexEntry> entries;
        std::vector<CompositionSpec> specs;
    };
    std::vector<Produced> produced(selected.size());
    const std::size_t k = options.variants;

    parallel_for(selected.size(), options.jobs, [&](std::size_t slot) {
        const IndexEntry& e = *selected[slot];
        const auto image_path = index.image_path(e);
        const auto mask_path = index.mask_path(e);
        const auto fg = prepare_foreground(image_path, mask_path, kCompositeSize);
        const std::uint64_t image_hash = fnv1a64(canonical_key(image_path));
        const std::uint64_t concept_hash = fnv1a64(e.concept_name);

        std::vector<std::string> per_variant_bg;
        if (options.technique != Technique::Voronoi) {
            Rng fg_rng(derive_seed(options.seed, {image_hash, concept_hash}));
            per_variant_bg = sample_backgrounds(pool, e.concept_name, k, fg_rng, options.category);
        }
        char tag[9];
        std::snprintf(tag, sizeof tag, "%08x", static_cast<unsigned>(image_hash & 0xffffffffu));
        const std::string base = fs::path(e.image).stem().string() + "_" + tag + "__" + e.concept_name;

        for (std::size_t i = 0; i < k; ++i) {
            CompositionSpec spec;
            spec.technique = options.technique;
            spec.foreground_image = relative_to(image_path, out_dir);
            spec.foreground_mask = relative_to(mask_path, out_dir);
            spec.concept_name = e.concept_name;
            spec.category = options.category;
            spec.rng_seed = derive_seed(options.seed, {image_hash, concept_hash, i});
            if (options.technique == Technique::Voronoi) {
                Rng rng(spec.rng_seed);
                const std::size_t wanted = options.pin_voronoi_background ? 1 : kVoronoiPoints;
                spec.background_ids = sample_backgrounds(pool, e.concept_name, wanted, rng, options.category);
                spec.seed_points = sample_voronoi_points(rng, kVoronoiPoints);
                spec.cells = plan_voronoi_cells(kVoronoiPoints, spec.background_ids.size(), rng, kCompositeSize,
                                                options.pin_voronoi_background);
            } else {
                spec.background_ids = {per_variant_bg[i]};
            }
            const CompositeImage composite = compose_prepared(fg, spec, pool);

            const std::string name = base + "__v" + std::to_string(i);
            const fs::path img_out = out_dir / "images" / (name + ".png");
            const fs::path mask_out = out_dir / "masks" / (name + ".png");
            write_png(composite.pixels, img_out);
            write_mask(composite.mask, mask_out);
            write_json_file(out_dir / "images" / (name + ".json"), to_json(spec));

            IndexEntry v;
            v.image = relative_to(img_out, out_dir);
            v.mask = relative_to(mask_out, out_dir);
            v.concept_name = e.concept_name;
            v.split = e.split;
            v.variant_of = relative_to(image_path, out_dir);
            produced[slot].entries.push_back(std::move(v));
            produced[slot].specs.push_back(std::move(spec));
        }
    });

    VariantSet result;
    result.index.root = out_dir;
    for (const auto& e : index.entries) {
        IndexEntry copy = e;
        copy.image = relative_to(index.image_path(e), out_dir);
        copy.mask = relative_to(index.mask_path(e), out_dir);
        if (e.variant_of) copy.variant_of = relative_to(index.resolve(*e.variant_of), out_dir);
        result.index.entries.push_back(std::move(copy));
    }
    for (auto& p : produced) {
        for (auto& e : p.entries) result.index.entries.push_back(std::move(e));
        for (auto& s : p.specs) result.specs.push_back(std::move(s));
    }
    return result;
}

}  // namespace cebias
