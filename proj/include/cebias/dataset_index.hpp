#pragma once

#include "cebias/tensor_io.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cebias {

enum class Split { Train, Val };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

// One line of the JSON-lines manifest. Paths are kept exactly as written in the
// file (relative to the manifest's directory unless absolute).
struct IndexEntry {
    std::string image;
    std::string mask;
    std::string concept_name;
    Split split = Split::Train;
    std::optional<std::string> variant_of;

    bool operator==(const IndexEntry&) const = default;
};

struct ConceptDatasetIndex {
    std::filesystem::path root;  // directory that relative entry paths resolve against
    std::vector<IndexEntry> entries;

    std::filesystem::path resolve(const std::string& relative) const;
    std::filesystem::path image_path(const IndexEntry& e) const { return resolve(e.image); }
    std::filesystem::path mask_path(const IndexEntry& e) const { return resolve(e.mask); }

    std::vector<IndexEntry> select(const std::string& concept_name, std::optional<Split> split = std::nullopt) const;
    std::vector<std::string> concepts() const;  // sorted, unique
};

/// Parse a JSON-lines manifest with fields image, mask, concept, split and
/// optional variant_of. Missing or mistyped fields raise Schema errors; paths
/// that do not exist and duplicate (image, concept, variant_of) triples raise
/// Integrity errors. Entry order follows the file.
ConceptDatasetIndex load_index(const std::filesystem::path& path);
ConceptDatasetIndex parse_index(const std::string& jsonl, const std::filesystem::path& root, bool check_paths = true);

// Serializes entries in order; paths are written verbatim.
void save_index(const ConceptDatasetIndex& index, const std::filesystem::path& path);
std::string format_index(const ConceptDatasetIndex& index);

// Lexically normalized absolute form, used as the key joining manifests.
std::string canonical_key(const std::filesystem::path& p);

/// Lookup of activation files by (model, layer, image). Backed by one or more
/// JSON manifests: an array of {"model", "layer", "image", "file"} objects,
/// paths relative to the manifest file.
class ActivationStore {
public:
    void add_manifest(const std::filesystem::path& manifest);
    void add(const std::string& model, const std::string& layer, const std::filesystem::path& image,
             const std::filesystem::path& file);

    std::optional<std::filesystem::path> find(const std::string& model, const std::string& layer,
                                              const std::filesystem::path& image) const;
    // Throws Integrity listing every image without an activation file.
    std::vector<std::filesystem::path> require_all(const std::string& model, const std::string& layer,
                                                   const std::vector<std::filesystem::path>& images) const;
    std::size_t size() const noexcept { return files_.size(); }

    static void write_manifest(const std::filesystem::path& manifest,
                               const std::vector<std::map<std::string, std::string>>& records);

private:
    std::map<std::string, std::filesystem::path> files_;
};

}  // namespace cebias
