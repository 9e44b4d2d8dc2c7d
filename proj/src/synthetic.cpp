#include "cebias/synthetic.hpp"

#include "cebias/error.hpp"
#include "cebias/image_io.hpp"
#include "cebias/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

namespace cebias {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void normalize(std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    require(n > 0.0, ErrorKind::Precondition, "cannot normalize a zero vector");
    for (double& x : v) x /= n;
}

// Categories drawn in rounds of shuffled permutations, so any k consecutive
// draws with k <= count are distinct.
std::vector<std::size_t> draw_categories(std::size_t count, std::size_t k, Rng& rng) {
    std::vector<std::size_t> out, perm(count);
    while (out.size() < k) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        for (std::size_t i = 0; i < count && out.size() < k; ++i) out.push_back(perm[i]);
    }
    return out;
}

bool is_biased(const SyntheticSpec& spec, std::optional<std::size_t> category) {
    return spec.bias && category && *category == spec.bias->category && spec.bias->strength != 0.0;
}

// Offset of a background pixel in `category` that every variant shares.
std::vector<double> category_base(const SyntheticDataset& d, std::optional<std::size_t> category) {
    std::vector<double> base(d.direction.size());
    for (std::size_t c = 0; c < base.size(); ++c) base[c] = -d.spec.margin * d.direction[c];
    if (is_biased(d.spec, category))
        for (std::size_t c = 0; c < base.size(); ++c) base[c] += d.spec.bias->strength * d.decoy[c];
    return base;
}

SyntheticSample make_sample(const SyntheticDataset& d, std::size_t i, std::optional<std::size_t> category) {
    const auto& spec = d.spec;
    Rng rng(derive_seed(spec.seed, {fnv1a64("image"), i}));
    SyntheticSample s;
    s.mask = block_mask(spec.height, spec.width, spec.fg_fraction, rng);
    s.mask.concept_name = spec.concept_name;
    s.activation = ActivationMap(spec.channels, spec.height, spec.width);
    char id[32];
    std::snprintf(id, sizeof id, "img_%04zu", i);
    s.id = id;
    s.split = i < spec.images ? Split::Train : Split::Val;
    s.category = category;
    s.activation.source = {spec.model, spec.layer, s.id};

    const std::size_t C = spec.channels;
    std::vector<double> fg(C), bg(C);
    for (std::size_t c = 0; c < C; ++c) {
        fg[c] = spec.margin * d.direction[c];
        bg[c] = -spec.margin * d.direction[c] - spec.decoy * d.decoy[c];
    }
    if (is_biased(spec, category))
        for (std::size_t c = 0; c < C; ++c) bg[c] += spec.bias->strength * d.decoy[c];

    for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x) {
            const auto& base = s.mask.at(y, x) ? fg : bg;
            for (std::size_t c = 0; c < C; ++c)
                s.activation.at(c, y, x) = static_cast<float>(base[c] + spec.noise * rng.normal());
        }
    return s;
}

SyntheticDataset make_dataset(const SyntheticSpec& spec, bool with_categories) {
    spec.validate();
    SyntheticDataset d;
    d.spec = spec;
    d.direction = planted_direction(spec);
    d.decoy = decoy_direction(spec, d.direction);
    const std::size_t total = spec.images + spec.val_images;
    std::vector<std::size_t> cats;
    if (with_categories) {
        Rng rng(derive_seed(spec.seed, {fnv1a64("category")}));
        cats = draw_categories(spec.categories, total, rng);
    }
    d.samples.reserve(total);
    for (std::size_t i = 0; i < total; ++i)
        d.samples.push_back(make_sample(d, i, with_categories ? std::optional(cats[i]) : std::nullopt));
    return d;
}

}  // namespace

void SyntheticSpec::validate() const {
    require(channels >= 1 && height >= 2 && width >= 2, ErrorKind::Precondition, "synthetic grid too small");
    require(margin > 0.0, ErrorKind::Precondition, "margin must be positive");
    require(noise >= 0.0, ErrorKind::Precondition, "noise must be non-negative");
    require(fg_fraction > 0.0 && fg_fraction < 1.0, ErrorKind::Precondition, "foreground fraction must be in (0, 1)");
    require(images + val_images >= 1, ErrorKind::Precondition, "synthetic dataset needs at least one image");
    require(decoy >= 0.0, ErrorKind::Precondition, "decoy offset must be non-negative");
    if (!direction.empty()) {
        require(direction.size() == channels, ErrorKind::Precondition, "planted direction length != channels");
        require(std::abs(dot(direction, direction) - 1.0) < 1e-9, ErrorKind::Precondition,
                "planted direction must be a unit vector");
    }
    if (bias) {
        require(categories >= 1 && bias->category < categories, ErrorKind::Precondition,
                "biased category out of range");
        require(bias->delta.empty() || bias->delta.size() == channels, ErrorKind::Precondition,
                "bias shift length != channels");
    }
}

std::vector<LabeledMap> SyntheticDataset::labeled(std::optional<Split> split) const {
    std::vector<LabeledMap> out;
    for (const auto& s : samples)
        if (!split || s.split == *split) out.push_back({s.activation, s.mask, s.id});
    return out;
}

std::vector<const SyntheticSample*> SyntheticDataset::select(Split split) const {
    std::vector<const SyntheticSample*> out;
    for (const auto& s : samples)
        if (s.split == split) out.push_back(&s);
    return out;
}

std::string category_name(std::size_t category) { return "bg" + std::to_string(category); }

std::vector<double> planted_direction(const SyntheticSpec& spec) {
    if (!spec.direction.empty()) return spec.direction;
    Rng rng(derive_seed(spec.seed, {fnv1a64("direction")}));
    const double a = 1.0 / std::sqrt(static_cast<double>(spec.channels));
    std::vector<double> v(spec.channels);
    for (double& x : v) x = rng.below(2) ? a : -a;
    return v;
}

std::vector<double> decoy_direction(const SyntheticSpec& spec, const std::vector<double>& v) {
    std::vector<double> d;
    if (spec.bias && !spec.bias->delta.empty()) {
        d = spec.bias->delta;
        normalize(d);
    } else {
        Rng rng(derive_seed(spec.seed, {fnv1a64("decoy")}));
        const bool uniform_magnitude =
            std::all_of(v.begin(), v.end(), [&](double x) { return std::abs(std::abs(x) - std::abs(v[0])) < 1e-15; });
        d.resize(v.size());
        if (uniform_magnitude && v.size() % 2 == 0) {
            // flip the signs of exactly half of v*: unit, orthogonal, still +-1/sqrt(C)
            std::vector<int> flips(v.size(), 1);
            std::fill(flips.begin(), flips.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), -1);
            rng.shuffle(flips.begin(), flips.end());
            for (std::size_t i = 0; i < v.size(); ++i) d[i] = v[i] * flips[i];
        } else if (v.size() >= 2) {
            for (double& x : d) x = rng.normal();
            const double p = dot(d, v);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= p * v[i];
            normalize(d);
        } else {
            d = v;  // a single channel has no orthogonal complement
        }
    }
    if (spec.bias)
        require(std::abs(dot(d, v)) < 0.5, ErrorKind::Precondition,
                "bias shift is too close to the planted direction (|proj| >= 0.5)");
    return d;
}

ConceptMask block_mask(std::size_t height, std::size_t width, double fg_fraction, Rng& rng) {
    const double area = fg_fraction * static_cast<double>(height * width);
    auto bh = static_cast<std::size_t>(std::lround(static_cast<double>(height) * std::sqrt(fg_fraction)));
    bh = std::clamp<std::size_t>(bh, 1, height);
    auto bw = static_cast<std::size_t>(std::lround(area / static_cast<double>(bh)));
    bw = std::clamp<std::size_t>(bw, 1, width);
    if (bh == height && bw == width) --bw;  // keep both classes present
    const std::size_t y0 = rng.below(height - bh + 1);
    const std::size_t x0 = rng.below(width - bw + 1);
    ConceptMask m(height, width);
    for (std::size_t y = y0; y < y0 + bh; ++y)
        for (std::size_t x = x0; x < x0 + bw; ++x) m.at(y, x) = 1;
    return m;
}

SyntheticDataset gen_separable(const SyntheticSpec& spec) { return make_dataset(spec, false); }

SyntheticDataset gen_biased(const SyntheticSpec& spec) {
    require(spec.bias.has_value(), ErrorKind::Precondition, "gen_biased needs a bias injection");
    return make_dataset(spec, true);
}

SyntheticSample with_background(const SyntheticDataset& d, const SyntheticSample& sample, std::size_t category,
                                Rng& rng) {
    require(category < std::max<std::size_t>(d.spec.categories, 1), ErrorKind::Precondition,
            "background category out of range");
    SyntheticSample out = sample;
    out.category = category;
    const auto base = category_base(d, category);
    const std::size_t C = d.spec.channels;
    for (std::size_t y = 0; y < out.mask.height; ++y)
        for (std::size_t x = 0; x < out.mask.width; ++x) {
            if (out.mask.at(y, x)) continue;
            for (std::size_t c = 0; c < C; ++c)
                out.activation.at(c, y, x) = static_cast<float>(base[c] + d.spec.noise * rng.normal());
        }
    return out;
}

std::vector<SyntheticSample> randomized_variants(const SyntheticDataset& d, Split split, std::size_t k,
                                                 std::uint64_t seed) {
    require(d.spec.categories >= 1, ErrorKind::Precondition, "randomized variants need background categories");
    std::vector<SyntheticSample> out;
    for (const auto* s : d.select(split)) {
        Rng cat_rng(derive_seed(seed, {fnv1a64(s->id), fnv1a64("categories")}));
        const auto cats = draw_categories(d.spec.categories, k, cat_rng);
        for (std::size_t j = 0; j < k; ++j) {
            Rng rng(derive_seed(seed, {fnv1a64(s->id), j}));
            auto v = with_background(d, *s, cats[j], rng);
            v.id = s->id + "__v" + std::to_string(j);
            v.variant_of = s->id;
            v.activation.source.image = v.id;
            out.push_back(std::move(v));
        }
    }
    return out;
}

std::vector<SyntheticSample> category_test_set(const SyntheticDataset& d, Split split, std::size_t category,
                                               std::uint64_t seed) {
    std::vector<SyntheticSample> out;
    const auto name = category_name(category);
    for (const auto* s : d.select(split)) {
        Rng rng(derive_seed(seed, {fnv1a64(s->id), fnv1a64(name)}));
        auto v = with_background(d, *s, category, rng);
        v.id = s->id + "__" + name;
        v.variant_of = s->id;
        v.activation.source.image = v.id;
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<LabeledMap> to_labeled(const std::vector<SyntheticSample>& samples) {
    std::vector<LabeledMap> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({s.activation, s.mask, s.id});
    return out;
}

TrainConfig harness_train_config() {
    TrainConfig cfg;
    cfg.epochs = 75;
    cfg.batch_images = 5;
    cfg.learning_rate = 0.05;
    return cfg;
}

CeMeta harness_meta(const SyntheticSpec& spec, Scheme scheme, DataTag tag) {
    CeMeta m;
    m.concept_name = spec.concept_name;
    m.model = spec.model;
    m.layer = spec.layer;
    m.scheme = scheme;
    m.data_tag = tag;
    return m;
}

std::map<std::string, std::vector<LabeledMap>> bias_test_sets(const SyntheticDataset& d, std::uint64_t seed) {
    std::map<std::string, std::vector<LabeledMap>> sets;
    sets[kVanillaCategory] = d.labeled(Split::Val);
    for (std::size_t c = 0; c < d.spec.categories; ++c)
        sets[category_name(c)] = to_labeled(category_test_set(d, Split::Val, c, seed));
    sets[kAnyCategory] = to_labeled(randomized_variants(d, Split::Val, d.spec.categories, seed));
    return sets;
}

BiasCalibration calibrate_bias_strength(SyntheticSpec spec, const TrainConfig& cfg, double target_delta_pct,
                                        double max_strength) {
    require(target_delta_pct < 0.0, ErrorKind::Precondition, "calibration target must be a negative delta");
    if (!spec.bias) spec.bias = BiasInjection{};
    spec.bias->strength = 0.0;
    SyntheticDataset d = gen_separable(spec);
    const auto train = d.labeled(Split::Train);
    const ConceptEmbedding ce = train_net2vec(train, cfg, harness_meta(spec));
    const std::vector<ConceptEmbedding> ces{ce};
    const std::string biased = category_name(spec.bias->category);
    const std::uint64_t test_seed = derive_seed(spec.seed, {fnv1a64("calibration")});

    auto delta_at = [&](double strength) {
        d.spec.bias->strength = strength;
        const auto report = bias_table(ces, bias_test_sets(d, test_seed), cfg.common_size);
        const auto& cell = report.at(spec.concept_name, biased);
        require(cell.delta_pct.has_value(), ErrorKind::Numerical, "calibration baseline IoU is zero");
        return *cell.delta_pct;
    };

    double lo = 0.0, hi = max_strength;
    double d_hi = delta_at(hi);
    if (d_hi > target_delta_pct) return {hi, d_hi};
    for (int it = 0; it < 40 && hi - lo > 1e-4 * max_strength; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double dm = delta_at(mid);
        if (dm > target_delta_pct)
            lo = mid;
        else {
            hi = mid;
            d_hi = dm;
        }
    }
    return {hi, d_hi};
}

namespace {

// Visualization of an activation map: red follows v*, green the decoy axis.
RgbImage render_activation(const SyntheticDataset& d, const ActivationMap& a) {
    RgbImage img(a.width, a.height);
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x) {
            double pv = 0.0, pd = 0.0;
            for (std::size_t c = 0; c < a.channels; ++c) {
                pv += d.direction[c] * a.at(c, y, x);
                pd += d.decoy[c] * a.at(c, y, x);
            }
            const auto chan = [&](double p) {
                return static_cast<std::uint8_t>(std::clamp(std::lround(128.0 + 100.0 * p / d.spec.margin), 0L, 255L));
            };
            std::uint8_t* px = img.at(x, y);
            px[0] = chan(pv);
            px[1] = chan(pd);
            px[2] = 128;
        }
    return img;
}

struct WorkspaceWriter {
    fs::path dir;
    std::vector<std::map<std::string, std::string>> manifest;

    // Writes image, mask and the activation of every layer; returns the index entry.
    IndexEntry write(const std::vector<const SyntheticDataset*>& layers, const std::vector<SyntheticSample>& per_layer,
                     const std::string& group) {
        const auto& first = per_layer.front();
        const std::string stem = group.empty() ? first.id : group + "/" + first.id;
        const fs::path img_rel = fs::path("images") / (stem + ".png");
        const fs::path mask_rel = fs::path("masks") / (stem + ".png");
        fs::create_directories((dir / img_rel).parent_path());
        fs::create_directories((dir / mask_rel).parent_path());
        write_png(render_activation(*layers.front(), first.activation), dir / img_rel);
        write_mask(first.mask, dir / mask_rel);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& spec = layers[l]->spec;
            const fs::path act_rel = fs::path("activations") / spec.model / spec.layer / (stem + ".npy");
            fs::create_directories((dir / act_rel).parent_path());
            write_tensor(per_layer[l].activation, dir / act_rel);
            manifest.push_back({{"model", spec.model}, {"layer", spec.layer}, {"image", img_rel.generic_string()},
                                {"file", act_rel.generic_string()}});
        }
        IndexEntry e;
        e.image = img_rel.generic_string();
        e.mask = mask_rel.generic_string();
        e.concept_name = first.mask.concept_name;
        e.split = first.split;
        if (first.variant_of) e.variant_of = (fs::path("images") / (*first.variant_of + ".png")).generic_string();
        return e;
    }

    void save(const std::vector<IndexEntry>& entries, const fs::path& rel) {
        ConceptDatasetIndex idx;
        idx.root = dir;
        std::vector<IndexEntry> rebased;
        // index files live in subdirectories; make their paths relative to them
        for (auto e : entries) {
            const auto base = rel.parent_path();
            auto rebase = [&](const std::string& p) { return (dir / p).lexically_relative(dir / base).generic_string(); };
            e.image = rebase(e.image);
            e.mask = rebase(e.mask);
            if (e.variant_of) e.variant_of = rebase(*e.variant_of);
            rebased.push_back(std::move(e));
        }
        idx.entries = std::move(rebased);
        fs::create_directories((dir / rel).parent_path());
        save_index(idx, dir / rel);
    }
};

}  // namespace

void write_workspace(const WorkspaceOptions& options, const fs::path& dir) {
    std::vector<WorkspaceLayer> layers = options.layers;
    if (layers.empty()) layers.push_back({options.spec.layer, options.spec.noise});
    std::vector<SyntheticDataset> data;
    for (const auto& l : layers) {
        SyntheticSpec s = options.spec;
        s.layer = l.name;
        s.noise = l.noise;
        data.push_back(gen_separable(s));
    }
    std::vector<const SyntheticDataset*> ptrs;
    for (const auto& d : data) ptrs.push_back(&d);

    fs::create_directories(dir);
    WorkspaceWriter w{dir, {}};
    const std::uint64_t seed = options.spec.seed;

    // every layer shares masks and sample ids, so entry i lines up across layers
    auto emit = [&](const std::function<std::vector<SyntheticSample>(const SyntheticDataset&)>& make,
                    const std::string& group) {
        std::vector<std::vector<SyntheticSample>> per_layer;
        for (const auto& d : data) per_layer.push_back(make(d));
        std::vector<IndexEntry> entries;
        for (std::size_t i = 0; i < per_layer.front().size(); ++i) {
            std::vector<SyntheticSample> row;
            for (auto& l : per_layer) row.push_back(l[i]);
            entries.push_back(w.write(ptrs, row, group));
        }
        return entries;
    };

    const auto vanilla = emit([](const SyntheticDataset& d) { return d.samples; }, "");
    w.save(vanilla, "index.jsonl");

    for (std::size_t k : options.variant_counts) {
        const std::string group = "randomized_k" + std::to_string(k);
        const auto entries = emit(
            [&](const SyntheticDataset& d) { return randomized_variants(d, Split::Train, k, derive_seed(seed, {k})); },
            group);
        w.save(entries, fs::path("variants") / group / "index.jsonl");
    }

    if (options.test_sets && options.spec.categories > 0) {
        const std::uint64_t test_seed = derive_seed(seed, {fnv1a64("tests")});
        std::vector<IndexEntry> val;
        for (const auto& e : vanilla)
            if (e.split == Split::Val) val.push_back(e);
        w.save(val, fs::path("tests") / kVanillaCategory / "index.jsonl");
        for (std::size_t c = 0; c < options.spec.categories; ++c) {
            const auto name = category_name(c);
            const auto entries = emit(
                [&](const SyntheticDataset& d) { return category_test_set(d, Split::Val, c, test_seed); },
                "tests/" + name);
            w.save(entries, fs::path("tests") / name / "index.jsonl");
        }
        const auto any = emit(
            [&](const SyntheticDataset& d) {
                return randomized_variants(d, Split::Val, d.spec.categories, test_seed);
            },
            std::string("tests/") + kAnyCategory);
        w.save(any, fs::path("tests") / kAnyCategory / "index.jsonl");
    }

    // small RGB pool with one pseudo-class per category, for compose runs
    for (std::size_t c = 0; c < std::max<std::size_t>(options.spec.categories, 1); ++c) {
        const fs::path cls = dir / "pool" / category_name(c);
        fs::create_directories(cls);
        for (std::size_t i = 0; i < options.pool_images_per_category; ++i) {
            RgbImage img(64, 48);
            Rng rng(derive_seed(seed, {fnv1a64("pool"), c, i}));
            const std::uint8_t base[3] = {static_cast<std::uint8_t>(rng.below(256)),
                                          static_cast<std::uint8_t>(rng.below(256)),
                                          static_cast<std::uint8_t>(rng.below(256))};
            for (std::size_t y = 0; y < img.height; ++y)
                for (std::size_t x = 0; x < img.width; ++x) {
                    std::uint8_t* p = img.at(x, y);
                    p[0] = static_cast<std::uint8_t>((base[0] + 2 * x) % 256);
                    p[1] = static_cast<std::uint8_t>((base[1] + 3 * y) % 256);
                    p[2] = base[2];
                }
            write_png(img, cls / ("img" + std::to_string(i) + ".png"));
        }
    }

    ActivationStore::write_manifest(dir / "activations.json", w.manifest);
}

}  // namespace cebias
