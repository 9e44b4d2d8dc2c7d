#include "cebias/resample.hpp"

#include "cebias/error.hpp"

#include <algorithm>
#include <cmath>

namespace cebias {

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double t;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const auto hi = std::min(lo + 1, in - 1);
        taps[d] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

// a + t*(b - a) keeps a == b exact, so constant regions stay constant.
inline double lerp(double a, double b, double t) { return a + t * (b - a); }

struct Overlap {
    std::size_t src;
    std::size_t amount;  // in units of 1/out source pixels
};

// Output cell d spans [d*in, (d+1)*in) and source cell s spans [s*out, (s+1)*out)
// on a common integer axis scaled by in*out.
std::vector<std::vector<Overlap>> area_overlaps(std::size_t in, std::size_t out) {
    std::vector<std::vector<Overlap>> result(out);
    for (std::size_t d = 0; d < out; ++d) {
        const std::size_t begin = d * in;
        const std::size_t end = (d + 1) * in;
        for (std::size_t s = begin / out; s < in && s * out < end; ++s) {
            const std::size_t lo = std::max(begin, s * out);
            const std::size_t hi = std::min(end, (s + 1) * out);
            if (hi > lo) result[d].push_back({s, hi - lo});
        }
    }
    return result;
}

}  // namespace

std::vector<float> resize_bilinear(std::span<const float> plane, std::size_t in_h, std::size_t in_w,
                                   std::size_t out_h, std::size_t out_w) {
    require(in_h > 0 && in_w > 0 && out_h > 0 && out_w > 0, ErrorKind::Precondition, "resize with empty dimension");
    require(plane.size() == in_h * in_w, ErrorKind::Precondition, "plane size does not match dimensions");
    const auto ty = bilinear_taps(in_h, out_h);
    const auto tx = bilinear_taps(in_w, out_w);
    std::vector<float> out(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const float* r0 = plane.data() + ty[y].lo * in_w;
        const float* r1 = plane.data() + ty[y].hi * in_w;
        for (std::size_t x = 0; x < out_w; ++x) {
            const double top = lerp(r0[tx[x].lo], r0[tx[x].hi], tx[x].t);
            const double bottom = lerp(r1[tx[x].lo], r1[tx[x].hi], tx[x].t);
            out[y * out_w + x] = static_cast<float>(lerp(top, bottom, ty[y].t));
        }
    }
    return out;
}

RgbImage resize_bilinear(const RgbImage& image, std::size_t out_w, std::size_t out_h) {
    require(image.width > 0 && image.height > 0 && out_w > 0 && out_h > 0, ErrorKind::Precondition,
            "resize with empty dimension");
    if (image.width == out_w && image.height == out_h) return image;
    const auto ty = bilinear_taps(image.height, out_h);
    const auto tx = bilinear_taps(image.width, out_w);
    RgbImage out(out_w, out_h);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto* a = image.at(tx[x].lo, ty[y].lo);
            const auto* b = image.at(tx[x].hi, ty[y].lo);
            const auto* c = image.at(tx[x].lo, ty[y].hi);
            const auto* d = image.at(tx[x].hi, ty[y].hi);
            auto* o = out.at(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                const double top = lerp(a[ch], b[ch], tx[x].t);
                const double bottom = lerp(c[ch], d[ch], tx[x].t);
                const double v = std::clamp(lerp(top, bottom, ty[y].t), 0.0, 255.0);
                o[ch] = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return out;
}

ConceptMask resize_area(const ConceptMask& mask, std::size_t out_h, std::size_t out_w) {
    require(mask.height > 0 && mask.width > 0 && out_h > 0 && out_w > 0, ErrorKind::Precondition,
            "resize with empty dimension");
    ConceptMask out(out_h, out_w);
    out.concept_name = mask.concept_name;
    if (mask.height == out_h && mask.width == out_w) {
        out.values = mask.values;
        return out;
    }
    const auto oy = area_overlaps(mask.height, out_h);
    const auto ox = area_overlaps(mask.width, out_w);
    // Each output cell covers in_h*in_w units^2; foreground area >= half of it.
    const std::size_t cell_area = mask.height * mask.width;
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t covered = 0;
            for (const auto& vy : oy[y])
                for (const auto& vx : ox[x])
                    if (mask.at(vy.src, vx.src)) covered += vy.amount * vx.amount;
            out.at(y, x) = 2 * covered >= cell_area ? 1 : 0;
        }
    }
    return out;
}

ActivationMap resample_to_common(const ActivationMap& map, std::size_t size) {
    require(size >= 1, ErrorKind::Precondition, "common size must be >= 1");
    require(map.height >= 1 && map.width >= 1 && map.channels >= 1, ErrorKind::Precondition,
            "activation map has an empty dimension");
    if (map.height == size && map.width == size) return map;
    ActivationMap out(map.channels, size, size);
    out.source = map.source;
    for (std::size_t c = 0; c < map.channels; ++c) {
        const auto plane = resize_bilinear(map.channel(c), map.height, map.width, size, size);
        std::copy(plane.begin(), plane.end(), out.channel(c).begin());
    }
    return out;
}

ConceptMask resample_to_common(const ConceptMask& mask, std::size_t size) {
    require(size >= 1, ErrorKind::Precondition, "common size must be >= 1");
    return resize_area(mask, size, size);
}

}  // namespace cebias
