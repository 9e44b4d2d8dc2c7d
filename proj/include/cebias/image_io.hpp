#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cebias {

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    RgbImage() = default;
    RgbImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

    std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
    const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + (y * width + x) * 3; }

    bool operator==(const RgbImage&) const = default;
};

// Single-channel 8-bit raster as stored in a PNG, before any thresholding.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;
};

// PNG or JPEG, detected from the file signature. Gray and paletted inputs are
// expanded to RGB, alpha is dropped.
RgbImage read_image(const std::filesystem::path& path);
void write_png(const RgbImage& image, const std::filesystem::path& path);

// Accepts 8-bit (or lower bit depth) grayscale and paletted PNGs only.
// Palette entries map to their luma.
GrayImage read_gray_png(const std::filesystem::path& path);
void write_gray_png(const GrayImage& image, const std::filesystem::path& path);

}  // namespace cebias
