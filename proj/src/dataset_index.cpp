#include "cebias/dataset_index.hpp"

#include "cebias/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace cebias {

using nlohmann::json;

namespace {

constexpr std::string_view kFields[] = {"image", "mask", "concept", "split", "variant_of"};

std::string required_string(const json& obj, const char* field, std::size_t line) {
    const auto it = obj.find(field);
    if (it == obj.end())
        fail(ErrorKind::Schema, "line " + std::to_string(line) + ": missing field \"" + field + "\"");
    if (!it->is_string())
        fail(ErrorKind::Schema, "line " + std::to_string(line) + ": field \"" + field + "\" must be a string");
    return it->get<std::string>();
}

std::string store_key(const std::string& model, const std::string& layer, const std::filesystem::path& image) {
    return model + '\x1f' + layer + '\x1f' + canonical_key(image);
}

}  // namespace

std::string_view to_string(Split split) noexcept { return split == Split::Train ? "train" : "val"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    fail(ErrorKind::Schema, "split must be \"train\" or \"val\", got \"" + std::string(text) + "\"");
}

std::string canonical_key(const std::filesystem::path& p) {
    return std::filesystem::absolute(p).lexically_normal().generic_string();
}

std::filesystem::path ConceptDatasetIndex::resolve(const std::string& relative) const {
    const std::filesystem::path p(relative);
    return p.is_absolute() ? p : root / p;
}

std::vector<IndexEntry> ConceptDatasetIndex::select(const std::string& concept_name, std::optional<Split> split) const {
    std::vector<IndexEntry> out;
    for (const auto& e : entries)
        if (e.concept_name == concept_name && (!split || e.split == *split)) out.push_back(e);
    return out;
}

std::vector<std::string> ConceptDatasetIndex::concepts() const {
    std::set<std::string> names;
    for (const auto& e : entries) names.insert(e.concept_name);
    return {names.begin(), names.end()};
}

ConceptDatasetIndex parse_index(const std::string& jsonl, const std::filesystem::path& root, bool check_paths) {
    ConceptDatasetIndex index;
    index.root = root;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::istringstream in(jsonl);
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(text);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::Schema, "line " + std::to_string(line) + ": invalid JSON (" + e.what() + ")");
        }
        if (!obj.is_object()) fail(ErrorKind::Schema, "line " + std::to_string(line) + ": entry must be an object");
        for (const auto& [key, _] : obj.items())
            if (std::find(std::begin(kFields), std::end(kFields), key) == std::end(kFields))
                fail(ErrorKind::Schema, "line " + std::to_string(line) + ": unknown field \"" + key + "\"");

        IndexEntry e;
        e.image = required_string(obj, "image", line);
        e.mask = required_string(obj, "mask", line);
        e.concept_name = required_string(obj, "concept", line);
        e.split = parse_split(required_string(obj, "split", line));
        if (const auto it = obj.find("variant_of"); it != obj.end() && !it->is_null()) {
            if (!it->is_string())
                fail(ErrorKind::Schema, "line " + std::to_string(line) + ": variant_of must be a string or null");
            e.variant_of = it->get<std::string>();
        }

        if (check_paths) {
            for (const auto* p : {&e.image, &e.mask})
                if (!std::filesystem::exists(index.resolve(*p)))
                    fail(ErrorKind::Integrity, "line " + std::to_string(line) + ": path does not exist: " + *p);
        }
        if (!seen.emplace(e.image, e.concept_name, e.variant_of.value_or("")).second)
            fail(ErrorKind::Integrity, "line " + std::to_string(line) + ": duplicate (image, concept, variant) entry for " +
                                           e.image + " / " + e.concept_name);
        index.entries.push_back(std::move(e));
    }
    return index;
}

ConceptDatasetIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open index " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto root = path.parent_path();
    if (root.empty()) root = ".";
    try {
        return parse_index(buffer.str(), root);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.detail());
    }
}

std::string format_index(const ConceptDatasetIndex& index) {
    std::string out;
    for (const auto& e : index.entries) {
        // Insertion order of ordered_json keeps the field order stable.
        nlohmann::ordered_json obj;
        obj["image"] = e.image;
        obj["mask"] = e.mask;
        obj["concept"] = e.concept_name;
        obj["split"] = std::string(to_string(e.split));
        if (e.variant_of) obj["variant_of"] = *e.variant_of;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_index(const ConceptDatasetIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write index " + path.string());
    out << format_index(index);
}

void ActivationStore::add(const std::string& model, const std::string& layer, const std::filesystem::path& image,
                          const std::filesystem::path& file) {
    files_[store_key(model, layer, image)] = file;
}

void ActivationStore::add_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) fail(ErrorKind::Io, "cannot open activation manifest " + manifest.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Schema, manifest.string() + ": invalid JSON (" + e.what() + ")");
    }
    if (!doc.is_array()) fail(ErrorKind::Schema, manifest.string() + ": activation manifest must be a JSON array");
    const auto root = manifest.parent_path();
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& rec = doc[i];
        for (const char* field : {"model", "layer", "image", "file"})
            if (!rec.contains(field) || !rec[field].is_string())
                fail(ErrorKind::Schema, manifest.string() + ": record " + std::to_string(i) + " lacks string field " + field);
        auto resolve = [&](const std::string& p) {
            const std::filesystem::path fp(p);
            return fp.is_absolute() ? fp : root / fp;
        };
        add(rec["model"].get<std::string>(), rec["layer"].get<std::string>(), resolve(rec["image"].get<std::string>()),
            resolve(rec["file"].get<std::string>()));
    }
}

std::optional<std::filesystem::path> ActivationStore::find(const std::string& model, const std::string& layer,
                                                           const std::filesystem::path& image) const {
    const auto it = files_.find(store_key(model, layer, image));
    if (it == files_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::filesystem::path> ActivationStore::require_all(
    const std::string& model, const std::string& layer, const std::vector<std::filesystem::path>& images) const {
    std::vector<std::filesystem::path> out;
    std::vector<std::string> missing;
    for (const auto& img : images) {
        if (auto f = find(model, layer, img))
            out.push_back(*f);
        else
            missing.push_back(img.generic_string());
    }
    if (!missing.empty()) {
        std::string msg = "missing activations for " + model + "/" + layer + ":";
        for (const auto& m : missing) msg += " " + m;
        fail(ErrorKind::Integrity, msg);
    }
    return out;
}

void ActivationStore::write_manifest(const std::filesystem::path& manifest,
                                     const std::vector<std::map<std::string, std::string>>& records) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& rec : records) {
        nlohmann::ordered_json obj;
        for (const char* field : {"model", "layer", "image", "file"}) obj[field] = rec.at(field);
        doc.push_back(std::move(obj));
    }
    std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + manifest.string());
    out << doc.dump(1) << '\n';
}

}  // namespace cebias
