#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cebias {

struct ActivationSource {
    std::string model;
    std::string layer;
    std::string image;

    bool operator==(const ActivationSource&) const = default;
};

// One layer's output for one image, row-major C x H x W.
struct ActivationMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;
    ActivationSource source;

    ActivationMap() = default;
    ActivationMap(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    std::size_t pixels() const noexcept { return height * width; }

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    std::span<float> channel(std::size_t c) { return {data.data() + c * pixels(), pixels()}; }
    std::span<const float> channel(std::size_t c) const { return {data.data() + c * pixels(), pixels()}; }

    bool operator==(const ActivationMap&) const = default;
};

// Throws Precondition (empty dims / wrong data length) or DataIntegrity (NaN/Inf).
void validate(const ActivationMap& map);

struct ConceptMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> values;  // 0 or 1, row-major
    std::string concept_name;

    ConceptMask() = default;
    ConceptMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

    std::size_t pixels() const noexcept { return height * width; }
    std::size_t count() const noexcept;

    std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

    bool operator==(const ConceptMask& o) const { return height == o.height && width == o.width && values == o.values; }
};

/// Decode an NPY v1.0 file holding a little-endian float32, C-order, 3-d array.
///
/// Magic/version/header damage is a Format error, other dtypes or Fortran
/// order are UnsupportedEncoding, non-finite payload values are DataIntegrity.
ActivationMap read_tensor(const std::filesystem::path& path);
ActivationMap decode_tensor(std::span<const std::uint8_t> bytes);

/// Emit the canonical NPY v1.0 encoding (the same bytes numpy.save writes for
/// a '<f4' C-order array): header dict padded with spaces and a trailing
/// newline so that the payload starts on a 64-byte boundary.
void write_tensor(const ActivationMap& map, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_tensor(const ActivationMap& map);

// Masks are 8-bit grayscale (or paletted) PNGs; pixel > threshold is foreground.
ConceptMask read_mask(const std::filesystem::path& path, int threshold = 127);
// Written as 8-bit grayscale 0/255.
void write_mask(const ConceptMask& mask, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cebias
