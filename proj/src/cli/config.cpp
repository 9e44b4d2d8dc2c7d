#include "cebias/cli.hpp"

#include "cebias/error.hpp"

#include <fstream>
#include <set>

namespace cebias::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp : (base / fp).lexically_normal();
}

template <typename T>
T get(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("config field \"") + key + "\": " + e.what());
    }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) fail(ErrorKind::Config, where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.contains(k)) fail(ErrorKind::Config, "unknown config field \"" + k + "\" in " + where);
}

TrainOn parse_train_on(const std::string& s) {
    if (s == "all") return TrainOn::All;
    if (s == "variants") return TrainOn::Variants;
    if (s == "originals") return TrainOn::Originals;
    fail(ErrorKind::Config, "train_on must be all|variants|originals, got \"" + s + "\"");
}

std::string to_string(TrainOn t) {
    switch (t) {
        case TrainOn::All: return "all";
        case TrainOn::Variants: return "variants";
        case TrainOn::Originals: return "originals";
    }
    return "?";
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base) {
    check_keys(j,
               {"index", "activations", "pool", "exclusions", "supercategories", "output", "models", "layers",
                "concepts", "scheme", "data_tag", "train", "train_on", "compose", "test_sets", "report_layers", "seed",
                "jobs"},
               "config");
    PipelineConfig cfg;
    try {
        if (j.contains("index")) cfg.index = resolve(base, get<std::string>(j, "index"));
        if (j.contains("activations")) {
            const auto& a = j["activations"];
            if (a.is_string())
                cfg.activations.push_back(resolve(base, a.get<std::string>()));
            else
                for (const auto& p : get<std::vector<std::string>>(j, "activations")) cfg.activations.push_back(resolve(base, p));
        }
        if (j.contains("pool")) cfg.pool = resolve(base, get<std::string>(j, "pool"));
        if (j.contains("exclusions")) cfg.exclusions = resolve(base, get<std::string>(j, "exclusions"));
        if (j.contains("supercategories")) cfg.supercategories = resolve(base, get<std::string>(j, "supercategories"));
        if (j.contains("output")) cfg.output = resolve(base, get<std::string>(j, "output"));
        else cfg.output = resolve(base, "out");
        if (j.contains("models")) cfg.models = get<std::vector<std::string>>(j, "models");
        if (j.contains("layers")) cfg.layers = get<std::vector<std::string>>(j, "layers");
        if (j.contains("concepts")) cfg.concepts = get<std::vector<std::string>>(j, "concepts");
        if (j.contains("scheme")) cfg.scheme = parse_scheme(get<std::string>(j, "scheme"));
        if (j.contains("data_tag")) cfg.data_tag = parse_data_tag(get<std::string>(j, "data_tag"));
        if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
        if (j.contains("train_on")) cfg.train_on = parse_train_on(get<std::string>(j, "train_on"));
        if (j.contains("compose")) {
            const auto& c = j["compose"];
            check_keys(c, {"technique", "variants", "category", "split", "pin_voronoi_background"}, "compose");
            if (c.contains("technique")) cfg.technique = parse_technique(get<std::string>(c, "technique"));
            if (c.contains("variants")) cfg.variants = get<std::size_t>(c, "variants");
            if (c.contains("category") && !c["category"].is_null()) cfg.category = get<std::string>(c, "category");
            if (c.contains("split") && !c["split"].is_null()) cfg.compose_split = parse_split(get<std::string>(c, "split"));
            if (c.contains("pin_voronoi_background")) cfg.pin_voronoi_background = get<bool>(c, "pin_voronoi_background");
        }
        if (j.contains("test_sets")) {
            if (!j["test_sets"].is_object()) fail(ErrorKind::Config, "test_sets must map category names to index files");
            for (const auto& [k, v] : j["test_sets"].items()) cfg.test_sets[k] = resolve(base, v.get<std::string>());
        }
        if (j.contains("report_layers")) cfg.report_layers = get<std::vector<std::string>>(j, "report_layers");
        if (j.contains("seed")) cfg.seed = get<std::uint64_t>(j, "seed");
        if (j.contains("jobs")) cfg.jobs = get<std::size_t>(j, "jobs");
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) throw;
        fail(ErrorKind::Config, e.detail());
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, e.what());
    }
    return cfg;
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Config, path.string() + ": invalid JSON (" + e.what() + ")");
    }
    return config_from_json(j, fs::absolute(path).parent_path());
}

ordered_json to_json(const PipelineConfig& cfg) {
    ordered_json j;
    j["index"] = cfg.index.generic_string();
    std::vector<std::string> acts;
    for (const auto& a : cfg.activations) acts.push_back(a.generic_string());
    j["activations"] = acts;
    if (cfg.pool) j["pool"] = cfg.pool->generic_string();
    if (cfg.exclusions) j["exclusions"] = cfg.exclusions->generic_string();
    if (cfg.supercategories) j["supercategories"] = cfg.supercategories->generic_string();
    j["output"] = cfg.output.generic_string();
    j["models"] = cfg.models;
    j["layers"] = cfg.layers;
    j["concepts"] = cfg.concepts;
    j["scheme"] = std::string(to_string(cfg.scheme));
    j["data_tag"] = std::string(to_string(cfg.data_tag));
    j["train"] = cebias::to_json(cfg.train);
    j["train_on"] = to_string(cfg.train_on);
    ordered_json c;
    c["technique"] = std::string(cebias::to_string(cfg.technique));
    c["variants"] = cfg.variants;
    c["category"] = cfg.category ? ordered_json(*cfg.category) : ordered_json(nullptr);
    c["split"] = cfg.compose_split ? ordered_json(std::string(cebias::to_string(*cfg.compose_split))) : ordered_json(nullptr);
    c["pin_voronoi_background"] = cfg.pin_voronoi_background;
    j["compose"] = c;
    ordered_json t = ordered_json::object();
    for (const auto& [k, v] : cfg.test_sets) t[k] = v.generic_string();
    j["test_sets"] = t;
    if (cfg.report_layers) j["report_layers"] = *cfg.report_layers;
    j["seed"] = cfg.seed;
    j["jobs"] = cfg.jobs;
    return j;
}

}  // namespace cebias::cli
