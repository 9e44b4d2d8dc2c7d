#include "cebias/bias_analysis.hpp"
#include "cebias/cli.hpp"
#include "cebias/compose.hpp"
#include "cebias/error.hpp"
#include "cebias/parallel.hpp"
#include "cebias/synthetic.hpp"
#include "cebias/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <set>

namespace cebias::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Flag values; unset ones leave the config untouched.
struct Overrides {
    std::string config;
    std::optional<std::string> output, index, pool, exclusions, scheme, data_tag, technique, category, split;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs, variants;
    std::optional<int> epochs, batch_images, batch_pixels;
    std::optional<double> learning_rate, weight_decay;
    std::vector<std::string> layers, models, concepts, activations;
    std::optional<std::string> train_on;
    bool pin_voronoi = false;
};

fs::path from_cwd(const std::string& p) { return fs::absolute(p).lexically_normal(); }

PipelineConfig apply_overrides(const Overrides& o) {
    PipelineConfig cfg;
    if (!o.config.empty()) {
        cfg = load_config(o.config);
    } else {
        cfg.output = from_cwd("out");
    }
    if (o.output) cfg.output = from_cwd(*o.output);
    if (o.index) cfg.index = from_cwd(*o.index);
    if (o.pool) cfg.pool = from_cwd(*o.pool);
    if (o.exclusions) cfg.exclusions = from_cwd(*o.exclusions);
    if (!o.activations.empty()) {
        cfg.activations.clear();
        for (const auto& a : o.activations) cfg.activations.push_back(from_cwd(a));
    }
    if (o.scheme) cfg.scheme = parse_scheme(*o.scheme);
    if (o.data_tag) cfg.data_tag = parse_data_tag(*o.data_tag);
    if (o.technique) cfg.technique = parse_technique(*o.technique);
    if (o.category) cfg.category = *o.category;
    if (o.split) cfg.compose_split = parse_split(*o.split);
    if (o.variants) cfg.variants = *o.variants;
    if (o.seed) cfg.seed = *o.seed;
    if (o.jobs) cfg.jobs = *o.jobs;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.batch_images) cfg.train.batch_images = *o.batch_images;
    if (o.batch_pixels) cfg.train.batch_pixels = *o.batch_pixels;
    if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
    if (o.weight_decay) cfg.train.weight_decay = *o.weight_decay;
    if (!o.layers.empty()) cfg.layers = o.layers;
    if (!o.models.empty()) cfg.models = o.models;
    if (!o.concepts.empty()) cfg.concepts = o.concepts;
    if (o.train_on) {
        if (*o.train_on == "all") cfg.train_on = TrainOn::All;
        else if (*o.train_on == "variants") cfg.train_on = TrainOn::Variants;
        else if (*o.train_on == "originals") cfg.train_on = TrainOn::Originals;
        else fail(ErrorKind::Config, "--train-on must be all|variants|originals");
    }
    if (o.pin_voronoi) cfg.pin_voronoi_background = true;
    require(cfg.jobs >= 1, ErrorKind::Config, "--jobs must be >= 1");
    cfg.train.validate();
    return cfg;
}

// Bad flag values are usage errors whatever module rejects them.
PipelineConfig resolve_config(const Overrides& o) {
    try {
        return apply_overrides(o);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) throw;
        fail(ErrorKind::Config, e.detail());
    }
}

void require_path(const fs::path& p, const std::string& what) {
    if (p.empty()) fail(ErrorKind::Config, what + " is not configured");
    if (!fs::exists(p)) fail(ErrorKind::Config, what + " does not exist: " + p.string());
}

// Console logging at CEBIAS_LOG level (default warn); the timestamped log file
// under the output directory records everything from info up.
// Messages already printed to stderr go to the log file only.
std::shared_ptr<spdlog::logger> g_file_log;

void log_to_file(spdlog::level::level_enum level, const std::string& msg) {
    if (g_file_log) g_file_log->log(level, msg);
}

void setup_logging(const fs::path& output) {
    spdlog::level::level_enum level = spdlog::level::warn;
    if (const char* env = std::getenv("CEBIAS_LOG")) {
        const std::string v = env;
        if (v == "error") level = spdlog::level::err;
        else if (v == "warn") level = spdlog::level::warn;
        else if (v == "info") level = spdlog::level::info;
        else if (v == "debug") level = spdlog::level::debug;
    }
    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    console->set_level(level);
    console->set_pattern("%l: %v");
    std::vector<spdlog::sink_ptr> sinks{console};
    fs::create_directories(output);
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>((output / "cebias.log").string(), false);
    file->set_level(std::min(level, spdlog::level::info));
    file->set_pattern("%Y-%m-%d %H:%M:%S.%e [%l] %v");
    sinks.push_back(file);
    g_file_log = std::make_shared<spdlog::logger>("cebias-file", file);
    g_file_log->set_level(spdlog::level::info);
    g_file_log->flush_on(spdlog::level::info);
    auto logger = std::make_shared<spdlog::logger>("cebias", sinks.begin(), sinks.end());
    logger->set_level(std::min(level, spdlog::level::info));
    logger->flush_on(spdlog::level::info);
    spdlog::set_default_logger(logger);
}

void reset_logging() {
    g_file_log.reset();
    auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    console->set_pattern("%l: %v");
    auto logger = std::make_shared<spdlog::logger>("cebias", console);
    logger->set_level(spdlog::level::warn);
    spdlog::set_default_logger(logger);
}

ActivationStore load_store(const PipelineConfig& cfg) {
    require(!cfg.activations.empty(), ErrorKind::Config, "no activation manifest configured");
    ActivationStore store;
    for (const auto& m : cfg.activations) {
        require_path(m, "activation manifest");
        store.add_manifest(m);
    }
    return store;
}

ConceptDatasetIndex load_checked_index(const fs::path& p, const std::string& what) {
    require_path(p, what);
    return load_index(p);
}

std::vector<std::string> concepts_of(const PipelineConfig& cfg, const ConceptDatasetIndex& index) {
    auto concepts = cfg.concepts.empty() ? index.concepts() : cfg.concepts;
    require(!concepts.empty(), ErrorKind::Config, "no concepts configured or present in the index");
    return concepts;
}

void require_targets(const PipelineConfig& cfg) {
    require(!cfg.models.empty(), ErrorKind::Config, "no models configured");
    require(!cfg.layers.empty(), ErrorKind::Config, "no layers configured");
}

std::vector<IndexEntry> training_entries(const ConceptDatasetIndex& index, const std::string& concept_name, TrainOn on) {
    std::vector<IndexEntry> out;
    for (const auto& e : index.select(concept_name, Split::Train)) {
        if (on == TrainOn::Variants && !e.variant_of) continue;
        if (on == TrainOn::Originals && e.variant_of) continue;
        out.push_back(e);
    }
    return out;
}

struct TrainOutcome {
    std::vector<ConceptEmbedding> ces;
    std::vector<std::string> failures;  // degenerate concepts or samples
};

CeMeta make_meta(const std::string& concept_name, const std::string& model, const std::string& layer, Scheme scheme,
                 DataTag tag) {
    CeMeta m;
    m.concept_name = concept_name;
    m.model = model;
    m.layer = layer;
    m.scheme = scheme;
    m.data_tag = tag;
    return m;
}

// Trains every (model, layer, concept) target; degenerate data is reported
// and skipped, every other error is fatal.
TrainOutcome train_all(const PipelineConfig& cfg, const ConceptDatasetIndex& index, const ActivationStore& store) {
    struct Task {
        std::string model, layer, concept_name;
    };
    std::vector<Task> tasks;
    for (const auto& model : cfg.models)
        for (const auto& layer : cfg.layers)
            for (const auto& c : concepts_of(cfg, index)) tasks.push_back({model, layer, c});

    std::vector<TrainOutcome> results(tasks.size());
    parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
        const auto& t = tasks[i];
        auto& out = results[i];
        const auto entries = training_entries(index, t.concept_name, cfg.train_on);
        const std::string target = t.concept_name + "/" + t.model + "/" + t.layer;
        if (entries.empty()) {
            out.failures.push_back(target + ": no training images");
            return;
        }
        const auto samples = load_samples(index, entries, store, t.model, t.layer);
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {cfg.train.seed, fnv1a64(t.model), fnv1a64(t.layer), fnv1a64(t.concept_name)});
        const CeMeta meta = make_meta(t.concept_name, t.model, t.layer, cfg.scheme, cfg.data_tag);
        try {
            if (cfg.scheme == Scheme::Net2Vec) {
                out.ces.push_back(train_net2vec(samples, tc, meta));
                return;
            }
            std::vector<ConceptEmbedding> loces;
            for (const auto& s : samples) {
                TrainConfig ltc = tc;
                ltc.seed = derive_seed(tc.seed, {fnv1a64(s.id)});
                CeMeta lm = meta;
                lm.scheme = Scheme::Loce;
                try {
                    loces.push_back(train_loce(s, ltc, lm));
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::DegenerateData) throw;
                    out.failures.push_back(target + " " + s.id + ": " + e.detail());
                }
            }
            if (cfg.scheme == Scheme::Loce) {
                out.ces = std::move(loces);
            } else if (loces.empty()) {
                out.failures.push_back(target + ": no usable LoCE to globalize");
            } else {
                out.ces.push_back(globalize(loces));
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DegenerateData) throw;
            out.failures.push_back(target + ": " + e.detail());
        }
    });
    TrainOutcome all;
    for (auto& r : results) {
        for (auto& ce : r.ces) all.ces.push_back(std::move(ce));
        for (auto& f : r.failures) all.failures.push_back(std::move(f));
    }
    return all;
}

fs::path ce_dir(const PipelineConfig& cfg) { return cfg.output / "ces" / std::string(to_string(cfg.data_tag)); }
fs::path report_dir(const PipelineConfig& cfg) { return cfg.output / "reports" / std::string(to_string(cfg.data_tag)); }

std::vector<ConceptEmbedding> load_ce_dir(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorKind::Config, "CE directory does not exist: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir))
        if (f.is_regular_file() && f.path().extension() == ".json") files.push_back(f.path());
    std::sort(files.begin(), files.end());
    std::vector<ConceptEmbedding> out;
    for (const auto& f : files) out.push_back(load_ce(f));
    return out;
}

std::vector<ConceptEmbedding> select_ces(std::vector<ConceptEmbedding> ces, std::optional<Scheme> scheme,
                                         const std::optional<std::vector<std::string>>& layers) {
    std::vector<ConceptEmbedding> out;
    for (auto& ce : ces) {
        if (scheme && ce.meta.scheme != *scheme) continue;
        if (layers && std::find(layers->begin(), layers->end(), ce.meta.layer) == layers->end()) continue;
        out.push_back(std::move(ce));
    }
    return out;
}

void report_failures(const std::vector<std::string>& failures, const std::string& what) {
    if (failures.empty()) return;
    std::cerr << what << ": " << failures.size() << " partial failure(s)\n";
    for (const auto& f : failures) {
        std::cerr << "  " << f << "\n";
        log_to_file(spdlog::level::warn, what + ": " + f);
    }
}

std::string ce_stem(const ConceptEmbedding& ce) {
    const auto name = ce_filename(ce.meta);
    return name.substr(0, name.size() - 5);
}

// ---- commands ----------------------------------------------------------------

int cmd_compose(const PipelineConfig& cfg, const std::string& tag_flag) {
    require(cfg.pool.has_value(), ErrorKind::Config, "no background pool configured (--pool)");
    require_path(*cfg.pool, "background pool");
    if (cfg.exclusions) require_path(*cfg.exclusions, "exclusion list");
    if (cfg.supercategories) require_path(*cfg.supercategories, "supercategory map");
    const auto index = load_checked_index(cfg.index, "concept index");
    const auto categories = cfg.supercategories ? load_supercategories(*cfg.supercategories) : places_supercategories();
    const auto pool = load_pool(*cfg.pool, categories, cfg.exclusions);

    VariantOptions opt;
    opt.technique = cfg.technique;
    opt.variants = cfg.variants;
    opt.seed = cfg.seed;
    opt.category = cfg.category;
    opt.split = cfg.compose_split;
    opt.pin_voronoi_background = cfg.pin_voronoi_background;
    opt.jobs = cfg.jobs;
    if (cfg.concepts.size() == 1) opt.concept_name = cfg.concepts.front();

    std::string tag = tag_flag;
    if (tag.empty()) {
        tag = std::string(to_string(cfg.technique));
        if (cfg.category) tag += "__" + *cfg.category;
        if (cfg.compose_split) tag += "__" + std::string(to_string(*cfg.compose_split));
    }
    const fs::path out = cfg.output / "variants" / tag;
    spdlog::info("compose: technique={} variants={} seed={} -> {}", to_string(cfg.technique), cfg.variants, cfg.seed,
                 out.string());
    const auto set = generate_variants(index, pool, opt, out);
    save_index(set.index, out / "index.jsonl");
    std::cout << "wrote " << set.specs.size() << " variants to " << out.string() << "\n";
    return kOk;
}

int cmd_train(const PipelineConfig& cfg) {
    require_targets(cfg);
    const auto index = load_checked_index(cfg.index, "concept index");
    const auto store = load_store(cfg);
    const auto outcome = train_all(cfg, index, store);
    const fs::path dir = ce_dir(cfg);
    fs::create_directories(dir);
    for (const auto& ce : outcome.ces) save_ce(ce, dir / ce_filename(ce.meta));
    spdlog::info("train: {} CEs ({}) -> {}", outcome.ces.size(), to_string(cfg.scheme), dir.string());
    std::cout << "trained " << outcome.ces.size() << " " << to_string(cfg.scheme) << " CEs into " << dir.string() << "\n";
    report_failures(outcome.failures, "train");
    return kOk;
}

int cmd_eval(const PipelineConfig& cfg, const std::optional<std::string>& test_index, const std::optional<std::string>& split,
             std::size_t overlays, bool any_scheme) {
    const auto ces = select_ces(load_ce_dir(ce_dir(cfg)), any_scheme ? std::nullopt : std::optional(cfg.scheme),
                                cfg.report_layers);
    require(!ces.empty(), ErrorKind::EmptyReport, "no CEs to evaluate in " + ce_dir(cfg).string());
    const fs::path idx_path = test_index ? from_cwd(*test_index) : cfg.index;
    const auto index = load_checked_index(idx_path, "test index");
    const std::optional<Split> sp = split ? std::optional(parse_split(*split))
                                          : (test_index ? std::nullopt : std::optional(Split::Val));
    const auto store = load_store(cfg);

    std::vector<std::vector<IoUResult>> results(ces.size());
    parallel_for(ces.size(), cfg.jobs, [&](std::size_t i) {
        results[i] = evaluate_ce(ces[i], index, store, sp, cfg.train.common_size);
    });

    const fs::path dir = report_dir(cfg);
    std::string csv = "ce,concept,model,layer,scheme,mean_iou,std,n,excluded\n";
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < ces.size(); ++i) {
        const auto s = mean_iou(results[i]);
        const auto& m = ces[i].meta;
        csv += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{},{}\n", ce_filename(m), m.concept_name, m.model, m.layer,
                           to_string(m.scheme), s.mean, s.std, s.n, s.excluded);
        ordered_json r;
        r["ce"] = ce_filename(m);
        r["mean_iou"] = s.mean;
        r["std"] = s.std;
        r["n"] = s.n;
        r["excluded"] = s.excluded;
        ordered_json per = ordered_json::array();
        for (const auto& x : results[i]) per.push_back({{"sample", x.sample}, {"iou", x.value}});
        r["samples"] = per;
        rows.push_back(std::move(r));
    }
    write_text_file(dir / "eval.csv", csv);
    write_text_file(dir / "eval.json", rows.dump(1) + "\n");

    if (overlays > 0) {
        fs::create_directories(dir / "overlays");
        for (const auto& ce : ces) {
            const auto entries = index.select(ce.meta.concept_name, sp);
            for (std::size_t k = 0; k < std::min(overlays, entries.size()); ++k) {
                const auto& e = entries[k];
                const auto file = store.find(ce.meta.model, ce.meta.layer, index.image_path(e));
                if (!file) continue;
                const RgbImage img = read_image(index.image_path(e));
                const auto pred = binarize(predict_heatmap(ce, read_tensor(*file)));
                write_png(render_overlay(img, pred),
                          dir / "overlays" / (ce_stem(ce) + "__" + fs::path(e.image).stem().string() + ".png"));
            }
        }
    }
    std::cout << "evaluated " << ces.size() << " CEs -> " << (dir / "eval.csv").string() << "\n";
    return kOk;
}

int report_bias(const PipelineConfig& cfg, bool heatmap) {
    require(!cfg.test_sets.empty(), ErrorKind::Config, "no test sets configured (--test-set NAME=INDEX)");
    if (!cfg.test_sets.contains(kAnyCategory))
        fail(ErrorKind::BaselineMissing, "test sets lack the \"any\" baseline category");
    const auto ces = select_ces(load_ce_dir(ce_dir(cfg)), cfg.scheme, cfg.report_layers);
    require(!ces.empty(), ErrorKind::EmptyReport, "no " + std::string(to_string(cfg.scheme)) + " CEs in " + ce_dir(cfg).string());
    const auto store = load_store(cfg);

    std::map<std::string, ConceptDatasetIndex> sets;
    for (const auto& [name, path] : cfg.test_sets) sets.emplace(name, load_checked_index(path, "test set " + name));

    struct Task {
        const ConceptEmbedding* ce;
        const std::string* category;
        const ConceptDatasetIndex* index;
    };
    std::vector<Task> tasks;
    for (const auto& ce : ces)
        for (const auto& [name, idx] : sets)
            if (!idx.select(ce.meta.concept_name).empty()) tasks.push_back({&ce, &name, &idx});
    std::vector<EvalCell> cells(tasks.size());
    parallel_for(tasks.size(), cfg.jobs, [&](std::size_t i) {
        const auto& t = tasks[i];
        EvalCell c{t.ce->meta.model, t.ce->meta.layer, t.ce->meta.concept_name, *t.category, {}};
        for (const auto& r : evaluate_ce(*t.ce, *t.index, store, std::nullopt, cfg.train.common_size))
            if (!r.empty_union()) c.stats.add(r.value);
        cells[i] = std::move(c);
    });

    std::set<std::string> models, layers;
    for (const auto& ce : ces) {
        models.insert(ce.meta.model);
        layers.insert(ce.meta.layer);
    }
    ordered_json meta;
    meta["models"] = std::vector<std::string>(models.begin(), models.end());
    meta["layers"] = std::vector<std::string>(layers.begin(), layers.end());
    meta["scheme"] = std::string(to_string(cfg.scheme));
    meta["data_tag"] = std::string(to_string(cfg.data_tag));
    meta["scope"] = std::string(to_string(Scope::CrossModel));
    const auto report = bias_table(aggregate(cells, Scope::CrossModel), meta);

    const fs::path dir = report_dir(cfg);
    const std::string stem = "bias_" + std::string(to_string(cfg.scheme));
    write_text_file(dir / (stem + "_table.csv"), bias_long_csv(report));
    write_text_file(dir / (stem + "_delta.csv"), bias_delta_csv(report));
    write_text_file(dir / (stem + ".json"), to_json(report).dump(1) + "\n");
    if (heatmap) write_png(render_bias_heatmap(report), dir / (stem + "_heatmap.png"));
    std::cout << "bias report for " << report.concepts.size() << " concept(s) -> " << (dir / (stem + "_delta.csv")).string()
              << "\n";
    return kOk;
}

int report_cossim(const PipelineConfig& cfg) {
    const fs::path root = cfg.output / "ces";
    require(fs::is_directory(root), ErrorKind::Config, "CE store does not exist: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& d : fs::directory_iterator(root))
        if (d.is_directory()) dirs.push_back(d.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<ConceptEmbedding> ces;
    for (const auto& d : dirs)
        for (auto& ce : load_ce_dir(d)) ces.push_back(std::move(ce));
    const auto groups = scheme_similarity_report(ces, cfg.report_layers);
    const fs::path dir = cfg.output / "reports" / "cossim";
    for (const auto& g : groups)
        write_text_file(dir / fmt::format("cossim__{}__{}.csv", to_string(g.scheme), g.model), cossim_csv(g.matrix));
    std::cout << "cossim report for " << groups.size() << " (scheme, model) group(s) -> " << dir.string() << "\n";
    return kOk;
}

int report_ablation(const PipelineConfig& cfg, const std::string& axis_text, const std::vector<std::string>& values,
                    const std::optional<std::string>& train_template, const std::optional<std::string>& test_index) {
    const AblationAxis axis = parse_ablation_axis(axis_text);
    require(!values.empty(), ErrorKind::Config, "--values is required with --axis");
    if (axis == AblationAxis::VariantCount)
        require(train_template.has_value(), ErrorKind::Config,
                "--train-index TEMPLATE (with {value}) is required for the variant_count axis");
    const auto store = load_store(cfg);
    const fs::path test_path = test_index ? from_cwd(*test_index) : cfg.index;
    const auto test = load_checked_index(test_path, "test index");
    const std::optional<Split> test_split = test_index ? std::nullopt : std::optional(Split::Val);

    const auto result = ablation_sweep(axis, values, [&](const std::string& value) {
        PipelineConfig point = cfg;
        fs::path train_path = cfg.index;
        if (train_template) {
            std::string p = *train_template;
            for (auto pos = p.find("{value}"); pos != std::string::npos; pos = p.find("{value}"))
                p.replace(pos, 7, value);
            train_path = from_cwd(p);
        }
        switch (axis) {
            case AblationAxis::VariantCount: break;
            case AblationAxis::LayerDepth: point.layers = {value}; break;
            case AblationAxis::Scheme: point.scheme = parse_scheme(value); break;
            case AblationAxis::Model: point.models = {value}; break;
        }
        require_targets(point);
        const auto train_index = load_checked_index(train_path, "training index");
        const auto outcome = train_all(point, train_index, store);
        require(!outcome.ces.empty(), ErrorKind::DegenerateData, "no CE could be trained");
        std::vector<double> ious;
        for (const auto& ce : outcome.ces)
            for (const auto& r : evaluate_ce(ce, test, store, test_split, point.train.common_size))
                if (!r.empty_union()) ious.push_back(r.value);
        return ious;
    });

    const fs::path dir = report_dir(cfg);
    const std::string stem = "ablation__" + std::string(to_string(axis));
    write_text_file(dir / (stem + ".csv"), ablation_csv(result));
    write_text_file(dir / (stem + ".json"), to_json(result).dump(1) + "\n");
    std::vector<std::string> failures;
    for (const auto& p : result.points)
        if (p.error) failures.push_back(p.value + ": " + *p.error);
    report_failures(failures, "ablation");
    std::cout << "ablation over " << to_string(axis) << " (" << result.points.size() << " points) -> "
              << (dir / (stem + ".csv")).string() << "\n";
    return kOk;
}

struct SynthFlags {
    std::string out;
    std::size_t channels = 16, images = 20, val_images = 10, categories = 10;
    double noise = 0.1, decoy = 0.0, fg_fraction = 0.3;
    std::optional<std::size_t> bias_category;
    double bias_strength = 0.0;
    std::vector<std::size_t> variant_counts;
    std::vector<std::string> layers;  // name:noise
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthFlags& f) {
    require(!f.out.empty(), ErrorKind::Config, "--out is required");
    WorkspaceOptions opt;
    opt.spec.channels = f.channels;
    opt.spec.images = f.images;
    opt.spec.val_images = f.val_images;
    opt.spec.categories = f.categories;
    opt.spec.noise = f.noise;
    opt.spec.decoy = f.decoy;
    opt.spec.fg_fraction = f.fg_fraction;
    opt.spec.seed = f.seed;
    if (f.bias_category) opt.spec.bias = BiasInjection{*f.bias_category, {}, f.bias_strength};
    opt.variant_counts = f.variant_counts;
    for (const auto& l : f.layers) {
        const auto colon = l.find(':');
        require(colon != std::string::npos, ErrorKind::Config, "--layer-noise entries are NAME:NOISE, got " + l);
        try {
            opt.layers.push_back({l.substr(0, colon), std::stod(l.substr(colon + 1))});
        } catch (const std::exception&) {
            fail(ErrorKind::Config, "bad noise level in --layer-noise entry " + l);
        }
    }
    opt.spec.validate();
    const fs::path dir = from_cwd(f.out);
    write_workspace(opt, dir);

    ordered_json cfg;
    cfg["index"] = "index.jsonl";
    cfg["activations"] = {"activations.json"};
    cfg["pool"] = "pool";
    cfg["output"] = "out";
    cfg["models"] = {opt.spec.model};
    std::vector<std::string> layers;
    if (opt.layers.empty()) layers.push_back(opt.spec.layer);
    for (const auto& l : opt.layers) layers.push_back(l.name);
    cfg["layers"] = layers;
    cfg["concepts"] = {opt.spec.concept_name};
    cfg["scheme"] = "net2vec";
    cfg["data_tag"] = "vanilla";
    cfg["train"] = cebias::to_json(harness_train_config());
    ordered_json tests = ordered_json::object();
    if (opt.test_sets && opt.spec.categories > 0) {
        tests[kAnyCategory] = std::string("tests/") + kAnyCategory + "/index.jsonl";
        tests[kVanillaCategory] = std::string("tests/") + kVanillaCategory + "/index.jsonl";
        for (std::size_t c = 0; c < opt.spec.categories; ++c)
            tests[category_name(c)] = "tests/" + category_name(c) + "/index.jsonl";
    }
    cfg["test_sets"] = tests;
    cfg["seed"] = f.seed;
    write_text_file(dir / "config.json", cfg.dump(1) + "\n");
    std::cout << "synthetic workspace -> " << dir.string() << "\n";
    return kOk;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::size_t start = 0;
        while (start <= item.size()) {
            const auto comma = item.find(',', start);
            const auto piece = item.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!piece.empty()) out.push_back(piece);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    return out;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Concept embeddings and background-bias reports on DNN activation maps", "cebias"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "pipeline config (JSON)");
    app.add_option("--output", o.output, "output directory");
    app.add_option("--seed", o.seed, "global seed");
    app.add_option("--jobs", o.jobs, "worker threads");
    app.add_option("--index", o.index, "concept dataset index (JSON lines)");
    app.add_option("--activations", o.activations, "activation manifest(s)");
    app.add_option("--layers", o.layers, "layers (comma separated)")->delimiter(',');
    app.add_option("--models", o.models, "models (comma separated)")->delimiter(',');
    app.add_option("--concepts", o.concepts, "concepts (comma separated)")->delimiter(',');
    app.add_option("--scheme", o.scheme, "net2vec|loce|gloce");
    app.add_option("--epochs", o.epochs);
    app.add_option("--lr", o.learning_rate);
    app.add_option("--weight-decay", o.weight_decay);
    app.add_option("--batch-images", o.batch_images);
    app.add_option("--batch-pixels", o.batch_pixels);

    auto* compose = app.add_subcommand("compose", "generate background-randomized variants");
    std::string compose_tag;
    compose->add_option("--technique", o.technique, "paste|voronoi|synthetic");
    compose->add_option("--variants", o.variants, "variants per foreground");
    compose->add_option("--category", o.category, "restrict backgrounds to one supercategory");
    compose->add_option("--split", o.split, "train|val");
    compose->add_option("--pool", o.pool, "background pool directory");
    compose->add_option("--exclusions", o.exclusions, "exclusion list (JSON)");
    compose->add_option("--tag", compose_tag, "output subdirectory under variants/");
    compose->add_flag("--pin-voronoi-background", o.pin_voronoi, "fill every Voronoi cell from one background");

    auto* train = app.add_subcommand("train", "train concept embeddings");
    train->add_option("--tag", o.data_tag, "data tag: vanilla|places|voronoi|synthetic");
    train->add_option("--train-on", o.train_on, "all|variants|originals");

    auto* eval = app.add_subcommand("eval", "evaluate stored CEs");
    std::optional<std::string> eval_index, eval_split;
    std::size_t overlays = 0;
    bool any_scheme = false;
    eval->add_option("--tag", o.data_tag, "data tag of the CEs");
    eval->add_option("--test-index", eval_index, "test index (default: configured index, val split)");
    eval->add_option("--split", eval_split, "train|val");
    eval->add_option("--overlays", overlays, "prediction overlays per CE");
    eval->add_flag("--all-schemes", any_scheme, "evaluate CEs of every scheme");

    auto* report = app.add_subcommand("report", "bias, cossim and ablation reports");
    std::string kind;
    std::optional<std::string> axis, train_template, report_index;
    std::vector<std::string> values, test_set_flags;
    bool heatmap = false;
    report->add_option("--kind", kind, "bias|cossim");
    report->add_option("--tag", o.data_tag, "data tag of the CEs");
    report->add_option("--axis", axis, "ablation axis: variant_count|layer_depth|scheme|model");
    report->add_option("--values", values, "ablation values (comma separated)")->delimiter(',');
    report->add_option("--train-index", train_template, "training index per ablation point ({value} is substituted)");
    report->add_option("--test-index", report_index, "test index for ablations");
    report->add_option("--test-set", test_set_flags, "NAME=INDEX bias test set (repeatable)");
    report->add_flag("--heatmap", heatmap, "also render the delta table as PNG");

    auto* synth = app.add_subcommand("synth", "write a synthetic planted-concept workspace");
    SynthFlags sf;
    std::vector<std::string> variant_counts;
    synth->add_option("--out", sf.out, "workspace directory")->required();
    synth->add_option("--channels", sf.channels);
    synth->add_option("--images", sf.images, "training images");
    synth->add_option("--val-images", sf.val_images);
    synth->add_option("--categories", sf.categories, "background categories");
    synth->add_option("--noise", sf.noise);
    synth->add_option("--decoy", sf.decoy);
    synth->add_option("--fg-fraction", sf.fg_fraction);
    synth->add_option("--bias-category", sf.bias_category);
    synth->add_option("--bias-strength", sf.bias_strength);
    synth->add_option("--variant-counts", variant_counts, "randomized training sets to emit")->delimiter(',');
    synth->add_option("--layer-noise", sf.layers, "NAME:NOISE per layer")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    int code = kOk;
    try {
        if (synth->parsed()) {
            sf.seed = o.seed.value_or(0);
            for (const auto& v : split_list(variant_counts)) sf.variant_counts.push_back(std::stoul(v));
            reset_logging();
            return cmd_synth(sf);
        }
        PipelineConfig cfg = resolve_config(o);
        setup_logging(cfg.output);
        spdlog::info("cebias {} (seed {}, jobs {})", app.get_subcommands().front()->get_name(), cfg.seed, cfg.jobs);
        if (compose->parsed()) {
            code = cmd_compose(cfg, compose_tag);
        } else if (train->parsed()) {
            code = cmd_train(cfg);
        } else if (eval->parsed()) {
            code = cmd_eval(cfg, eval_index, eval_split, overlays, any_scheme);
        } else if (report->parsed()) {
            for (const auto& ts : test_set_flags) {
                const auto eq = ts.find('=');
                require(eq != std::string::npos && eq > 0, ErrorKind::Config, "--test-set expects NAME=INDEX, got " + ts);
                cfg.test_sets[ts.substr(0, eq)] = from_cwd(ts.substr(eq + 1));
            }
            if (!o.layers.empty()) cfg.report_layers = o.layers;
            if (axis) {
                code = report_ablation(cfg, *axis, split_list(values), train_template, report_index);
            } else if (kind.empty() || kind == "bias") {
                code = report_bias(cfg, heatmap);
            } else if (kind == "cossim") {
                code = report_cossim(cfg);
            } else {
                fail(ErrorKind::Config, "--kind must be bias or cossim");
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        log_to_file(spdlog::level::err, e.what());
        code = e.kind() == ErrorKind::Config ? kUsage : kFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        log_to_file(spdlog::level::err, e.what());
        code = kFailure;
    }
    reset_logging();
    return code;
}

}  // namespace cebias::cli
