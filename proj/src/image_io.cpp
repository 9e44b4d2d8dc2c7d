#include "cebias/image_io.hpp"

#include "cebias/error.hpp"
#include "cebias/tensor_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include <jpeglib.h>

namespace cebias {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

bool has_png_signature(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

bool has_jpeg_signature(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

struct PngImage {
    png_image image{};
    PngImage() {
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

void begin_png(PngImage& png, const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
    if (!has_png_signature(bytes)) fail(ErrorKind::Format, "not a PNG file: " + path.string());
    if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size()))
        fail(ErrorKind::Format, std::string("cannot decode PNG ") + path.string() + ": " + png.image.message);
}

void finish_png(PngImage& png, std::uint32_t format, std::vector<std::uint8_t>& out, const std::filesystem::path& path) {
    png.image.format = format;
    out.resize(PNG_IMAGE_SIZE(png.image));
    if (!png_image_finish_read(&png.image, nullptr, out.data(), 0, nullptr))
        fail(ErrorKind::Format, std::string("cannot decode PNG ") + path.string() + ": " + png.image.message);
}

RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
    PngImage png;
    begin_png(png, bytes, path);
    RgbImage img;
    img.width = png.image.width;
    img.height = png.image.height;
    finish_png(png, PNG_FORMAT_RGB, img.pixels, path);
    return img;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Only trivially destructible locals live in the setjmp frame; `out` is
// constructed by the caller.
bool decode_jpeg_into(const std::vector<std::uint8_t>& bytes, RgbImage& out, char* message) {
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        std::strncpy(message, err.message, JMSG_LENGTH_MAX);
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = cinfo.output_width;
    out.height = cinfo.output_height;
    out.pixels.resize(out.width * out.height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

void write_png_buffer(png_uint_32 width, png_uint_32 height, std::uint32_t format, const std::uint8_t* data,
                      const std::filesystem::path& path) {
    PngImage png;
    png.image.width = width;
    png.image.height = height;
    png.image.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(png.image, size, 0, data, 0, nullptr))
        fail(ErrorKind::Io, std::string("cannot encode PNG: ") + png.image.message);
    std::vector<std::uint8_t> buffer(size);
    if (!png_image_write_to_memory(&png.image, buffer.data(), &size, 0, data, 0, nullptr))
        fail(ErrorKind::Io, std::string("cannot encode PNG: ") + png.image.message);
    buffer.resize(size);
    write_file_bytes(path, buffer);
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (has_png_signature(bytes)) return decode_png_rgb(bytes, path);
    if (has_jpeg_signature(bytes)) {
        RgbImage img;
        char message[JMSG_LENGTH_MAX] = {};
        if (!decode_jpeg_into(bytes, img, message))
            fail(ErrorKind::Format, "cannot decode JPEG " + path.string() + ": " + message);
        return img;
    }
    fail(ErrorKind::Format, "unrecognized image format: " + path.string());
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
    require(image.width > 0 && image.height > 0 && image.pixels.size() == image.width * image.height * 3,
            ErrorKind::Precondition, "RGB image has inconsistent dimensions");
    write_png_buffer(static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), PNG_FORMAT_RGB,
                     image.pixels.data(), path);
}

GrayImage read_gray_png(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    PngImage png;
    begin_png(png, bytes, path);
    const std::uint32_t fmt = png.image.format;
    const bool paletted = (fmt & PNG_FORMAT_FLAG_COLORMAP) != 0;
    if (!paletted) {
        if (fmt & PNG_FORMAT_FLAG_COLOR) fail(ErrorKind::Format, "mask must be grayscale or paletted: " + path.string());
        if (fmt & PNG_FORMAT_FLAG_ALPHA) fail(ErrorKind::Format, "mask must not carry an alpha channel: " + path.string());
        if (fmt & PNG_FORMAT_FLAG_LINEAR) fail(ErrorKind::Format, "mask must be 8-bit: " + path.string());
    }
    GrayImage gray;
    gray.width = png.image.width;
    gray.height = png.image.height;
    if (!paletted) {
        finish_png(png, PNG_FORMAT_GRAY, gray.pixels, path);
        return gray;
    }
    // Expand the palette ourselves: the simplified reader's gray conversion
    // is gamma-aware, which would shift mid-gray palette entries.
    std::vector<std::uint8_t> rgb;
    finish_png(png, PNG_FORMAT_RGB, rgb, path);
    gray.pixels.resize(gray.width * gray.height);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
        const unsigned r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
        gray.pixels[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return gray;
}

void write_gray_png(const GrayImage& image, const std::filesystem::path& path) {
    require(image.width > 0 && image.height > 0 && image.pixels.size() == image.width * image.height,
            ErrorKind::Precondition, "gray image has inconsistent dimensions");
    write_png_buffer(static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), PNG_FORMAT_GRAY,
                     image.pixels.data(), path);
}

}  // namespace cebias
