#include "cebias/bias_analysis.hpp"

#include "cebias/error.hpp"
#include "cebias/parallel.hpp"
#include "cebias/resample.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <tuple>

namespace cebias {

using nlohmann::ordered_json;

void CellStats::add(double value) {
    sum += value;
    sum_sq += value * value;
    ++n;
}

void CellStats::merge(const CellStats& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    n += o.n;
}

double CellStats::mean() const {
    require(n > 0, ErrorKind::EmptyReport, "mean of an empty cell");
    return sum / static_cast<double>(n);
}

double CellStats::std() const {
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - m * m));
}

std::vector<IoUResult> evaluate_maps(const ConceptEmbedding& ce, std::span<const LabeledMap> samples,
                                     std::size_t common_size) {
    require(!samples.empty(), ErrorKind::Precondition, "empty test set for concept " + ce.meta.concept_name);
    std::vector<IoUResult> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto a = resample_to_common(s.activation, common_size);
        const auto gt = resample_to_common(s.mask, common_size);
        out.push_back(iou(binarize(predict_heatmap(ce, a)), gt, s.id));
    }
    return out;
}

std::vector<LabeledMap> load_samples(const ConceptDatasetIndex& index, const std::vector<IndexEntry>& entries,
                                     const ActivationStore& store, const std::string& model, const std::string& layer) {
    std::vector<std::filesystem::path> images;
    images.reserve(entries.size());
    for (const auto& e : entries) images.push_back(index.image_path(e));
    const auto files = store.require_all(model, layer, images);
    std::vector<LabeledMap> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        LabeledMap s;
        s.activation = read_tensor(files[i]);
        s.activation.source = {model, layer, entries[i].image};
        s.mask = read_mask(index.mask_path(entries[i]));
        s.mask.concept_name = entries[i].concept_name;
        s.id = entries[i].image;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<IoUResult> evaluate_ce(const ConceptEmbedding& ce, const ConceptDatasetIndex& index,
                                   const ActivationStore& store, std::optional<Split> split, std::size_t common_size) {
    const auto entries = index.select(ce.meta.concept_name, split);
    require(!entries.empty(), ErrorKind::Precondition, "empty test set for concept " + ce.meta.concept_name);
    const auto samples = load_samples(index, entries, store, ce.meta.model, ce.meta.layer);
    return evaluate_maps(ce, samples, common_size);
}

std::string_view to_string(Scope s) noexcept {
    switch (s) {
        case Scope::PerModel: return "per-model";
        case Scope::CrossModel: return "cross-model";
        case Scope::PerLayer: return "per-layer";
    }
    return "?";
}

std::vector<EvalCell> aggregate(std::span<const EvalCell> cells, Scope scope) {
    require(!cells.empty(), ErrorKind::EmptyReport, "nothing to aggregate");
    using Key = std::tuple<std::string, std::string, std::string, std::string>;
    std::map<Key, CellStats> acc;
    for (const auto& c : cells) {
        Key k{scope == Scope::PerModel ? c.model : "*", scope == Scope::PerLayer ? c.layer : "*", c.concept_name,
              c.category};
        acc[k].merge(c.stats);
    }
    std::vector<EvalCell> out;
    for (const auto& [k, s] : acc) out.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), s});
    return out;
}

const BiasCell& BiasReport::at(const std::string& concept_name, const std::string& category) const {
    for (const auto& c : cells)
        if (c.concept_name == concept_name && c.category == category) return c;
    fail(ErrorKind::EmptyReport, "bias report has no cell " + concept_name + "/" + category);
}

std::optional<double> relative_delta_pct(double value, double baseline) {
    if (baseline < kDeltaEpsilon) return std::nullopt;
    return 100.0 * (value - baseline) / baseline;
}

BiasReport bias_table(std::span<const EvalCell> cells, ordered_json meta) {
    require(!cells.empty(), ErrorKind::EmptyReport, "bias table without evaluations");
    std::map<std::pair<std::string, std::string>, CellStats> acc;
    std::set<std::string> concepts, categories;
    for (const auto& c : cells) {
        acc[{c.concept_name, c.category}].merge(c.stats);
        concepts.insert(c.concept_name);
        categories.insert(c.category);
    }
    BiasReport report;
    report.meta = std::move(meta);
    report.concepts.assign(concepts.begin(), concepts.end());
    report.categories.push_back(kAnyCategory);
    if (categories.contains(kVanillaCategory)) report.categories.push_back(kVanillaCategory);
    for (const auto& c : categories)
        if (c != kAnyCategory && c != kVanillaCategory) report.categories.push_back(c);

    for (const auto& concept_name : report.concepts) {
        const auto base_it = acc.find({concept_name, kAnyCategory});
        if (base_it == acc.end() || base_it->second.n == 0)
            fail(ErrorKind::BaselineMissing, "no \"any\" baseline for concept " + concept_name);
        const double baseline = base_it->second.mean();
        for (const auto& category : report.categories) {
            BiasCell cell{concept_name, category, {}, std::nullopt};
            const auto it = acc.find({concept_name, category});
            if (it != acc.end() && it->second.n > 0) {
                cell.stats = it->second;
                // the baseline compared with itself is 0 by definition, not by rounding
                cell.delta_pct = category == kAnyCategory ? (baseline < kDeltaEpsilon ? std::nullopt : std::optional(0.0))
                                                          : relative_delta_pct(cell.stats.mean(), baseline);
            }
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

BiasReport bias_table(std::span<const ConceptEmbedding> ces, const std::map<std::string, std::vector<LabeledMap>>& test_sets,
                      std::size_t common_size, std::size_t jobs) {
    require(!ces.empty(), ErrorKind::EmptyReport, "bias table without CEs");
    struct Task {
        const ConceptEmbedding* ce;
        std::string category;
        std::vector<LabeledMap> samples;
    };
    std::vector<Task> tasks;
    for (const auto& ce : ces) {
        for (const auto& [category, samples] : test_sets) {
            Task t{&ce, category, {}};
            for (const auto& s : samples)
                if (s.mask.concept_name == ce.meta.concept_name) t.samples.push_back(s);
            if (!t.samples.empty()) tasks.push_back(std::move(t));
        }
    }
    std::vector<EvalCell> cells(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
        const auto& t = tasks[i];
        EvalCell cell{t.ce->meta.model, t.ce->meta.layer, t.ce->meta.concept_name, t.category, {}};
        for (const auto& r : evaluate_maps(*t.ce, t.samples, common_size))
            if (!r.empty_union()) cell.stats.add(r.value);
        cells[i] = std::move(cell);
    });
    std::set<std::string> models, layers;
    for (const auto& ce : ces) {
        models.insert(ce.meta.model);
        layers.insert(ce.meta.layer);
    }
    ordered_json meta;
    meta["models"] = std::vector<std::string>(models.begin(), models.end());
    meta["layers"] = std::vector<std::string>(layers.begin(), layers.end());
    meta["scheme"] = std::string(to_string(ces.front().meta.scheme));
    meta["scope"] = std::string(to_string(Scope::CrossModel));
    return bias_table(cells, std::move(meta));
}

std::vector<SimilarityGroup> scheme_similarity_report(std::span<const ConceptEmbedding> ces,
                                                      const std::optional<std::vector<std::string>>& layers) {
    std::map<std::pair<Scheme, std::string>, std::map<DataTag, std::vector<ConceptEmbedding>>> groups;
    for (const auto& ce : ces) {
        if (layers && std::find(layers->begin(), layers->end(), ce.meta.layer) == layers->end()) continue;
        groups[{ce.meta.scheme, ce.meta.model}][ce.meta.data_tag].push_back(ce);
    }
    std::vector<SimilarityGroup> out;
    for (const auto& [key, by_tag] : groups) {
        if (by_tag.size() < 2) continue;
        out.push_back({key.first, key.second, pairwise_cos_matrix(by_tag)});
    }
    require(!out.empty(), ErrorKind::EmptyReport, "no (scheme, model) group has CEs of two or more data tags");
    return out;
}

std::string_view to_string(AblationAxis a) noexcept {
    switch (a) {
        case AblationAxis::VariantCount: return "variant_count";
        case AblationAxis::LayerDepth: return "layer_depth";
        case AblationAxis::Scheme: return "scheme";
        case AblationAxis::Model: return "model";
    }
    return "?";
}

AblationAxis parse_ablation_axis(std::string_view text) {
    for (auto a : {AblationAxis::VariantCount, AblationAxis::LayerDepth, AblationAxis::Scheme, AblationAxis::Model})
        if (to_string(a) == text) return a;
    fail(ErrorKind::Config, "unknown ablation axis \"" + std::string(text) + "\" (variant_count|layer_depth|scheme|model)");
}

std::size_t AblationResult::failures() const {
    return static_cast<std::size_t>(std::count_if(points.begin(), points.end(), [](const auto& p) { return p.error.has_value(); }));
}

AblationResult ablation_sweep(AblationAxis axis, const std::vector<std::string>& values,
                              const std::function<std::vector<double>(const std::string&)>& run_point) {
    require(!values.empty(), ErrorKind::Precondition, "ablation sweep without values");
    std::set<std::string> seen;
    for (const auto& v : values) require(seen.insert(v).second, ErrorKind::Precondition, "duplicate ablation value " + v);
    AblationResult result{axis, {}};
    for (const auto& v : values) {
        AblationPoint p{v, {}, std::nullopt};
        try {
            const auto ious = run_point(v);
            p.stats = mean_std(ious);
        } catch (const std::exception& e) {
            p.error = e.what();
        }
        result.points.push_back(std::move(p));
    }
    return result;
}

namespace {

std::string fmt_delta(const std::optional<double>& d) { return d ? fmt::format("{:.4f}", *d) : "NA"; }

std::string fmt_mean(const CellStats& s) { return s.n ? fmt::format("{:.6f}", s.mean()) : "NA"; }

}  // namespace

std::string bias_long_csv(const BiasReport& report) {
    std::string out = "concept,category,mean_iou,n,delta_pct\n";
    for (const auto& c : report.cells)
        out += fmt::format("{},{},{},{},{}\n", c.concept_name, c.category, fmt_mean(c.stats), c.stats.n, fmt_delta(c.delta_pct));
    return out;
}

std::string bias_delta_csv(const BiasReport& report) {
    std::string out = "concept";
    for (const auto& cat : report.categories) out += "," + cat;
    out += "\n";
    for (const auto& concept_name : report.concepts) {
        out += concept_name;
        for (const auto& cat : report.categories) out += "," + fmt_delta(report.at(concept_name, cat).delta_pct);
        out += "\n";
    }
    return out;
}

ordered_json to_json(const BiasReport& report) {
    ordered_json j;
    j["meta"] = report.meta;
    j["categories"] = report.categories;
    j["concepts"] = report.concepts;
    ordered_json cells = ordered_json::array();
    for (const auto& c : report.cells) {
        ordered_json cell;
        cell["concept"] = c.concept_name;
        cell["category"] = c.category;
        cell["n"] = c.stats.n;
        cell["mean_iou"] = c.stats.n ? ordered_json(c.stats.mean()) : ordered_json(nullptr);
        cell["std_iou"] = c.stats.n ? ordered_json(c.stats.std()) : ordered_json(nullptr);
        cell["delta_pct"] = c.delta_pct ? ordered_json(*c.delta_pct) : ordered_json(nullptr);
        cells.push_back(std::move(cell));
    }
    j["cells"] = std::move(cells);
    return j;
}

std::string cossim_csv(const CosMatrix& matrix) {
    std::string out = "tag_a,tag_b,mean,std,n\n";
    for (const auto& c : matrix.cells) {
        if (c.stats.n == 0)
            out += fmt::format("{},{},NA,NA,0\n", to_string(c.tag_a), to_string(c.tag_b));
        else
            out += fmt::format("{},{},{:.6f},{:.6f},{}\n", to_string(c.tag_a), to_string(c.tag_b), c.stats.mean,
                               c.stats.std, c.stats.n);
    }
    return out;
}

std::string ablation_csv(const AblationResult& result) {
    std::string out = "axis,value,mean_iou,std,n\n";
    for (const auto& p : result.points) {
        if (p.error)
            out += fmt::format("{},{},NA,NA,0\n", to_string(result.axis), p.value);
        else
            out += fmt::format("{},{},{:.6f},{:.6f},{}\n", to_string(result.axis), p.value, p.stats.mean, p.stats.std,
                               p.stats.n);
    }
    return out;
}

ordered_json to_json(const AblationResult& result) {
    ordered_json j;
    j["axis"] = std::string(to_string(result.axis));
    ordered_json pts = ordered_json::array();
    for (const auto& p : result.points) {
        ordered_json pt;
        pt["value"] = p.value;
        if (p.error) {
            pt["error"] = *p.error;
        } else {
            pt["mean_iou"] = p.stats.mean;
            pt["std"] = p.stats.std;
            pt["n"] = p.stats.n;
        }
        pts.push_back(std::move(pt));
    }
    j["points"] = std::move(pts);
    return j;
}

RgbImage render_bias_heatmap(const BiasReport& report, std::size_t cell) {
    require(!report.concepts.empty() && !report.categories.empty(), ErrorKind::EmptyReport, "empty bias report");
    double scale = 0.0;
    for (const auto& c : report.cells)
        if (c.delta_pct) scale = std::max(scale, std::abs(*c.delta_pct));
    RgbImage img(report.categories.size() * cell, report.concepts.size() * cell);
    for (std::size_t r = 0; r < report.concepts.size(); ++r) {
        for (std::size_t k = 0; k < report.categories.size(); ++k) {
            const auto& c = report.at(report.concepts[r], report.categories[k]);
            std::uint8_t rgb[3] = {128, 128, 128};
            if (c.delta_pct) {
                const double t = scale > 0.0 ? std::clamp(*c.delta_pct / scale, -1.0, 1.0) : 0.0;
                const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
                if (t >= 0) {
                    rgb[0] = 255, rgb[1] = fade, rgb[2] = fade;
                } else {
                    rgb[0] = fade, rgb[1] = fade, rgb[2] = 255;
                }
            }
            for (std::size_t y = r * cell; y < (r + 1) * cell; ++y)
                for (std::size_t x = k * cell; x < (k + 1) * cell; ++x) {
                    // one-pixel grid lines keep neighbouring cells apart
                    const bool border = (y % cell == 0) || (x % cell == 0);
                    std::uint8_t* p = img.at(x, y);
                    for (int ch = 0; ch < 3; ++ch) p[ch] = border ? 255 : rgb[ch];
                }
        }
    }
    return img;
}

RgbImage render_overlay(const RgbImage& image, const ConceptMask& prediction, double alpha) {
    const ConceptMask m = (prediction.height == image.height && prediction.width == image.width)
                              ? prediction
                              : resize_area(prediction, image.height, image.width);
    RgbImage out = image;
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            if (!m.at(y, x)) continue;
            std::uint8_t* p = out.at(x, y);
            const double red[3] = {255.0, 0.0, 0.0};
            for (int c = 0; c < 3; ++c)
                p[c] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[c] + alpha * red[c]));
        }
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace cebias
