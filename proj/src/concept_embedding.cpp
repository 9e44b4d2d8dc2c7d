#include "cebias/concept_embedding.hpp"

#include "cebias/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cebias {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Scheme s) noexcept {
    switch (s) {
        case Scheme::Net2Vec: return "net2vec";
        case Scheme::Loce: return "loce";
        case Scheme::Gloce: return "gloce";
    }
    return "?";
}

std::string_view to_string(DataTag t) noexcept {
    switch (t) {
        case DataTag::Vanilla: return "vanilla";
        case DataTag::Places: return "places";
        case DataTag::Voronoi: return "voronoi";
        case DataTag::Synthetic: return "synthetic";
    }
    return "?";
}

Scheme parse_scheme(std::string_view text) {
    for (Scheme s : {Scheme::Net2Vec, Scheme::Loce, Scheme::Gloce})
        if (to_string(s) == text) return s;
    fail(ErrorKind::Schema, "unknown scheme \"" + std::string(text) + "\" (net2vec|loce|gloce)");
}

DataTag parse_data_tag(std::string_view text) {
    for (DataTag t : {DataTag::Vanilla, DataTag::Places, DataTag::Voronoi, DataTag::Synthetic})
        if (to_string(t) == text) return t;
    fail(ErrorKind::Schema, "unknown data tag \"" + std::string(text) + "\" (vanilla|places|voronoi|synthetic)");
}

void TrainConfig::validate() const {
    require(epochs > 0, ErrorKind::Precondition, "epochs must be positive");
    require(batch_images > 0 && batch_pixels > 0, ErrorKind::Precondition, "batch sizes must be positive");
    require(learning_rate > 0.0, ErrorKind::Precondition, "learning_rate must be > 0");
    require(weight_decay >= 0.0, ErrorKind::Precondition, "weight_decay must be >= 0");
    require(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0, ErrorKind::Precondition,
            "adam betas must lie in (0, 1)");
    require(adam_eps > 0.0, ErrorKind::Precondition, "adam_eps must be > 0");
    require(common_size >= 1, ErrorKind::Precondition, "common_size must be >= 1");
}

ordered_json to_json(const TrainConfig& cfg) {
    ordered_json j;
    j["epochs"] = cfg.epochs;
    j["batch_images"] = cfg.batch_images;
    j["batch_pixels"] = cfg.batch_pixels;
    j["learning_rate"] = cfg.learning_rate;
    j["weight_decay"] = cfg.weight_decay;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["common_size"] = cfg.common_size;
    j["use_bias"] = cfg.use_bias;
    j["seed"] = cfg.seed;
    return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig cfg) {
    if (!j.is_object()) fail(ErrorKind::Schema, "train config must be an object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "epochs") cfg.epochs = value.get<int>();
            else if (key == "batch_images") cfg.batch_images = value.get<int>();
            else if (key == "batch_pixels") cfg.batch_pixels = value.get<int>();
            else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
            else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
            else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
            else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
            else if (key == "adam_eps") cfg.adam_eps = value.get<double>();
            else if (key == "common_size") cfg.common_size = value.get<std::size_t>();
            else if (key == "use_bias") cfg.use_bias = value.get<bool>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else fail(ErrorKind::Schema, "unknown train config field \"" + key + "\"");
        } catch (const json::type_error&) {
            fail(ErrorKind::Schema, "train config field \"" + key + "\" has the wrong type");
        }
    }
    cfg.validate();
    return cfg;
}

void validate(const ConceptEmbedding& ce) {
    require(!ce.weights.empty(), ErrorKind::Precondition, "concept embedding has no weights");
    for (double w : ce.weights) require(std::isfinite(w), ErrorKind::Numerical, "concept embedding weight is not finite");
    require(std::isfinite(ce.bias), ErrorKind::Numerical, "concept embedding bias is not finite");
}

double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Heatmap predict_heatmap(const ConceptEmbedding& ce, const ActivationMap& a) {
    require(a.channels == ce.weights.size(), ErrorKind::Shape,
            "activation has " + std::to_string(a.channels) + " channels, CE expects " + std::to_string(ce.weights.size()));
    const std::size_t n = a.pixels();
    std::vector<double> logits(n, ce.bias);
    for (std::size_t c = 0; c < a.channels; ++c) {
        const double w = ce.weights[c];
        const auto plane = a.channel(c);
        for (std::size_t p = 0; p < n; ++p) logits[p] += w * plane[p];
    }
    Heatmap h{a.height, a.width, std::move(logits)};
    for (double& v : h.values) v = sigmoid(v);
    return h;
}

ConceptMask binarize(const Heatmap& heatmap, double threshold) {
    ConceptMask m(heatmap.height, heatmap.width);
    for (std::size_t i = 0; i < heatmap.values.size(); ++i) m.values[i] = heatmap.values[i] > threshold ? 1 : 0;
    return m;
}

ConceptEmbedding globalize(std::span<const ConceptEmbedding> loces) {
    require(!loces.empty(), ErrorKind::Precondition, "cannot globalize an empty set of CEs");
    const auto& first = loces.front();
    for (const auto& ce : loces) {
        if (!ce.meta.same_target(first.meta) || ce.meta.data_tag != first.meta.data_tag)
            fail(ErrorKind::Meta, "globalize needs CEs of one (concept, model, layer, data tag); got " + ce.meta.concept_name +
                                      "/" + ce.meta.model + "/" + ce.meta.layer + " vs " + first.meta.concept_name + "/" +
                                      first.meta.model + "/" + first.meta.layer);
        require(ce.channels() == first.channels(), ErrorKind::Meta, "globalize over CEs of different channel counts");
    }
    const std::size_t n = loces.size();
    auto mean_of = [n](std::vector<double>& values) {
        std::sort(values.begin(), values.end());
        long double sum = 0.0L;
        for (double v : values) sum += v;
        return static_cast<double>(sum / static_cast<long double>(n));
    };

    ConceptEmbedding out;
    out.meta = first.meta;
    out.meta.scheme = Scheme::Gloce;
    out.meta.sample.clear();
    out.train_config = first.train_config;
    out.weights.resize(first.channels());
    std::vector<double> column(n);
    for (std::size_t c = 0; c < first.channels(); ++c) {
        for (std::size_t i = 0; i < n; ++i) column[i] = loces[i].weights[c];
        out.weights[c] = mean_of(column);
    }
    for (std::size_t i = 0; i < n; ++i) column[i] = loces[i].bias;
    out.bias = mean_of(column);
    return out;
}

std::string ce_filename(const CeMeta& meta) {
    auto clean = [](std::string s) {
        std::replace(s.begin(), s.end(), '/', '_');
        return s;
    };
    std::string name = clean(meta.model) + "__" + clean(meta.layer) + "__" + clean(meta.concept_name) + "__" +
                       std::string(to_string(meta.scheme)) + "__" + std::string(to_string(meta.data_tag));
    if (!meta.sample.empty()) name += "__" + clean(std::filesystem::path(meta.sample).stem().string());
    return name + ".json";
}

ordered_json to_json(const ConceptEmbedding& ce) {
    ordered_json j;
    j["concept"] = ce.meta.concept_name;
    j["model"] = ce.meta.model;
    j["layer"] = ce.meta.layer;
    j["scheme"] = std::string(to_string(ce.meta.scheme));
    j["data_tag"] = std::string(to_string(ce.meta.data_tag));
    if (!ce.meta.sample.empty()) j["sample"] = ce.meta.sample;
    j["channels"] = ce.channels();
    j["weights"] = ce.weights;
    j["bias"] = ce.bias;
    if (ce.train_config) {
        j["train_config"] = to_json(*ce.train_config);
        j["seed"] = ce.train_config->seed;
    } else {
        j["train_config"] = nullptr;
        j["seed"] = nullptr;
    }
    return j;
}

ConceptEmbedding ce_from_json(const json& j) {
    ConceptEmbedding ce;
    try {
        ce.meta.concept_name = j.at("concept").get<std::string>();
        ce.meta.model = j.at("model").get<std::string>();
        ce.meta.layer = j.at("layer").get<std::string>();
        ce.meta.scheme = parse_scheme(j.at("scheme").get<std::string>());
        ce.meta.data_tag = parse_data_tag(j.at("data_tag").get<std::string>());
        if (j.contains("sample")) ce.meta.sample = j["sample"].get<std::string>();
        ce.weights = j.at("weights").get<std::vector<double>>();
        ce.bias = j.at("bias").get<double>();
        const auto channels = j.at("channels").get<std::size_t>();
        require(channels == ce.weights.size(), ErrorKind::Schema, "channels does not match weights length");
        if (j.contains("train_config") && !j["train_config"].is_null())
            ce.train_config = train_config_from_json(j["train_config"]);
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("bad concept embedding JSON: ") + e.what());
    }
    validate(ce);
    return ce;
}

void save_ce(const ConceptEmbedding& ce, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << to_json(ce).dump(1) << '\n';
}

ConceptEmbedding load_ce(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    try {
        return ce_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Schema, path.string() + ": invalid JSON (" + e.what() + ")");
    }
}

}  // namespace cebias
