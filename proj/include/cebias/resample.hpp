#pragma once

#include "cebias/image_io.hpp"
#include "cebias/tensor_io.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace cebias {

// Bilinear interpolation with pixel-center alignment (half-pixel offsets,
// edge clamping), i.e. the align_corners=False convention.
std::vector<float> resize_bilinear(std::span<const float> plane, std::size_t in_h, std::size_t in_w,
                                   std::size_t out_h, std::size_t out_w);
RgbImage resize_bilinear(const RgbImage& image, std::size_t out_w, std::size_t out_h);

// Exact area-average followed by a >= 0.5 threshold. Overlaps are computed in
// integer units so the threshold decision has no rounding.
ConceptMask resize_area(const ConceptMask& mask, std::size_t out_h, std::size_t out_w);

// Every channel resized independently to size x size.
ActivationMap resample_to_common(const ActivationMap& map, std::size_t size);
ConceptMask resample_to_common(const ConceptMask& mask, std::size_t size);

}  // namespace cebias
