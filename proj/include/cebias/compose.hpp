#pragma once

#include "cebias/dataset_index.hpp"
#include "cebias/image_io.hpp"
#include "cebias/rng.hpp"
#include "cebias/tensor_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cebias {

inline constexpr std::size_t kCompositeSize = 256;
inline constexpr std::size_t kVoronoiPoints = 8;

// Scene class -> supercategory. Classes absent from the map are "unmapped".
struct SupercategoryMap {
    std::vector<std::string> categories;                    // in declaration order
    std::map<std::string, std::string> class_to_category;

    std::optional<std::string> category_of(const std::string& scene_class) const;
    std::vector<std::string> classes_in(const std::string& category) const;
};

// The ten visually homogeneous Places205 supercategories used for
// background-category testing.
SupercategoryMap places_supercategories();
SupercategoryMap load_supercategories(const std::filesystem::path& json_path);
nlohmann::ordered_json to_json(const SupercategoryMap& map);

struct BackgroundImage {
    std::string id;           // "<class>/<file>", relative to the pool root
    std::string scene_class;
    std::filesystem::path path;
};

struct BackgroundPool {
    std::filesystem::path root;
    std::vector<BackgroundImage> images;  // sorted by id
    SupercategoryMap categories;
    std::map<std::string, std::set<std::string>> exclusions;  // background id -> banned concepts

    std::vector<std::string> classes() const;  // sorted, unique
    bool admissible(const BackgroundImage& image, const std::string& concept_name) const;
    const BackgroundImage& image(const std::string& id) const;
};

/// Pool directory layout: <root>/<scene class>/<image>.{png,jpg,jpeg}. For
/// synthetic pools the subdirectory names act as pseudo-classes. The optional
/// exclusion file is a JSON array of {"background": id, "concepts": [...]};
/// entries naming unknown backgrounds are Integrity errors.
BackgroundPool load_pool(const std::filesystem::path& root, SupercategoryMap categories,
                         const std::optional<std::filesystem::path>& exclusions = std::nullopt);
void load_exclusions(BackgroundPool& pool, const std::filesystem::path& path);

enum class Technique { Paste, Voronoi, Synthetic };
std::string_view to_string(Technique t) noexcept;
Technique parse_technique(std::string_view text);

struct CellFill {
    std::size_t background = 0;  // index into CompositionSpec::background_ids
    std::uint32_t dx = 0;
    std::uint32_t dy = 0;
};

// Everything needed to rebuild one composite bit-exactly.
struct CompositionSpec {
    Technique technique = Technique::Paste;
    std::string foreground_image;
    std::string foreground_mask;
    std::string concept_name;
    std::vector<std::string> background_ids;
    std::vector<std::array<double, 2>> seed_points;  // voronoi only, in [0, 1)^2
    std::vector<CellFill> cells;                     // voronoi only, one per seed point
    std::uint64_t rng_seed = 0;
    std::size_t output_size = kCompositeSize;
    std::optional<std::string> category;

    void validate() const;
};

nlohmann::ordered_json to_json(const CompositionSpec& spec);
CompositionSpec composition_spec_from_json(const nlohmann::json& j);

struct CompositeImage {
    RgbImage pixels;
    ConceptMask mask;
    CompositionSpec spec;
};

/// Scale the shorter side to `size` (bilinear for the image, area + threshold
/// for the mask) and center-crop to size x size.
RgbImage resize_crop(const RgbImage& image, std::size_t size = kCompositeSize);
std::pair<RgbImage, ConceptMask> resize_crop(const RgbImage& image, const ConceptMask& mask,
                                             std::size_t size = kCompositeSize);

// out = fg where mask == 1, bg elsewhere. All inputs must share one size.
RgbImage paste(const RgbImage& foreground, const ConceptMask& mask, const RgbImage& background);

struct LabelMap {
    std::size_t size = 0;
    std::vector<std::uint32_t> labels;  // row-major size x size

    std::uint32_t at(std::size_t x, std::size_t y) const { return labels[y * size + x]; }
};

/// Nearest seed (Euclidean, pixel centers at (x + 0.5, y + 0.5), seeds at
/// point * size) per pixel; ties go to the lowest seed index. Duplicate seed
/// points are a Precondition error.
LabelMap voronoi_partition(std::span<const std::array<double, 2>> points, std::size_t size = kCompositeSize);

std::vector<std::array<double, 2>> sample_voronoi_points(Rng& rng, std::size_t count = kVoronoiPoints);

// Fill each cell from its assigned background with a toroidal shift.
RgbImage voronoi_fill(const LabelMap& cells, std::span<const RgbImage> backgrounds, std::span<const CellFill> fills);

/// Assign a background and shift to every cell: backgrounds without
/// replacement while they last, then with replacement; shifts uniform in
/// [0, size)^2. `pin_first` uses background 0 for every cell.
std::vector<CellFill> plan_voronoi_cells(std::size_t cell_count, std::size_t background_count, Rng& rng,
                                         std::size_t size = kCompositeSize, bool pin_first = false);

std::pair<RgbImage, std::vector<CellFill>> voronoi_background(const LabelMap& cells,
                                                              std::span<const RgbImage> backgrounds, Rng& rng,
                                                              bool pin_first = false);

/// Draw k backgrounds for `concept_name`: distinct scene classes (restricted to
/// `category` when given) while classes last, one admissible image per class.
/// Classes whose images are all excluded for the concept are never drawn.
std::vector<std::string> sample_backgrounds(const BackgroundPool& pool, const std::string& concept_name, std::size_t k,
                                            Rng& rng, const std::optional<std::string>& category = std::nullopt);

// Rebuild a composite from its recipe; foreground paths resolve against fg_root.
CompositeImage compose(const CompositionSpec& spec, const std::filesystem::path& fg_root,
                       const BackgroundPool& pool);

struct VariantOptions {
    Technique technique = Technique::Paste;
    std::size_t variants = 1;
    std::uint64_t seed = 0;
    std::optional<std::string> category;
    std::optional<Split> split;  // restrict to one split
    std::optional<std::string> concept_name;
    bool pin_voronoi_background = false;
    std::size_t jobs = 1;
};

struct VariantSet {
    ConceptDatasetIndex index;  // original entries followed by variant entries
    std::vector<CompositionSpec> specs;
};

/// For every vanilla (image, concept) entry selected by `options`, write k
/// composites as PNG + mask PNG + spec JSON sidecar under out_dir and return
/// the combined index (rooted at out_dir). Output is a pure function of the
/// inputs and options.seed.
VariantSet generate_variants(const ConceptDatasetIndex& index, const BackgroundPool& pool,
                             const VariantOptions& options, const std::filesystem::path& out_dir);

}  // namespace cebias
