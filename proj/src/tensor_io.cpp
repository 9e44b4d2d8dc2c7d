#include "cebias/tensor_io.hpp"

#include "cebias/error.hpp"
#include "cebias/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <string_view>

namespace cebias {

namespace {

static_assert(std::endian::native == std::endian::little, "payload is copied verbatim; little-endian host required");

constexpr std::uint8_t kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kPreludeSize = 10;  // magic + version + header length
constexpr std::size_t kAlignment = 64;

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Returns the raw text of the value that follows `'key':` in the header dict.
std::optional<std::string_view> dict_value(std::string_view dict, std::string_view key) {
    for (char quote : {'\'', '"'}) {
        const std::string needle = std::string(1, quote) + std::string(key) + std::string(1, quote);
        const auto pos = dict.find(needle);
        if (pos == std::string_view::npos) continue;
        auto rest = dict.substr(pos + needle.size());
        rest = trim(rest);
        if (rest.empty() || rest.front() != ':') fail(ErrorKind::Format, "npy header: missing ':' after " + std::string(key));
        rest = trim(rest.substr(1));
        std::size_t end = 0;
        if (!rest.empty() && rest.front() == '(') {
            end = rest.find(')');
            if (end == std::string_view::npos) fail(ErrorKind::Format, "npy header: unterminated shape tuple");
            return rest.substr(0, end + 1);
        }
        if (!rest.empty() && (rest.front() == '\'' || rest.front() == '"')) {
            end = rest.find(rest.front(), 1);
            if (end == std::string_view::npos) fail(ErrorKind::Format, "npy header: unterminated string");
            return rest.substr(0, end + 1);
        }
        end = rest.find_first_of(",}");
        return trim(rest.substr(0, end));
    }
    return std::nullopt;
}

std::vector<std::size_t> parse_shape(std::string_view tuple) {
    if (tuple.size() < 2 || tuple.front() != '(' || tuple.back() != ')') fail(ErrorKind::Format, "npy header: bad shape");
    tuple = tuple.substr(1, tuple.size() - 2);
    std::vector<std::size_t> dims;
    while (true) {
        tuple = trim(tuple);
        if (tuple.empty()) break;
        std::size_t value = 0;
        std::size_t i = 0;
        while (i < tuple.size() && std::isdigit(static_cast<unsigned char>(tuple[i]))) {
            value = value * 10 + static_cast<std::size_t>(tuple[i] - '0');
            ++i;
        }
        if (i == 0) fail(ErrorKind::Format, "npy header: non-integer shape entry");
        dims.push_back(value);
        tuple = trim(tuple.substr(i));
        if (tuple.empty()) break;
        if (tuple.front() != ',') fail(ErrorKind::Format, "npy header: bad shape separator");
        tuple.remove_prefix(1);
    }
    return dims;
}

std::string header_dict(const ActivationMap& map) {
    return "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(map.channels) + ", " +
           std::to_string(map.height) + ", " + std::to_string(map.width) + "), }";
}

}  // namespace

void validate(const ActivationMap& map) {
    require(map.channels > 0 && map.height > 0 && map.width > 0, ErrorKind::Precondition,
            "activation map has an empty dimension");
    require(map.data.size() == map.channels * map.height * map.width, ErrorKind::Precondition,
            "activation data length does not match C*H*W");
    for (float v : map.data)
        require(std::isfinite(v), ErrorKind::DataIntegrity, "activation map contains NaN or Inf");
}

std::size_t ConceptMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

ActivationMap decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreludeSize || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        fail(ErrorKind::Format, "not an npy file (bad magic)");
    if (bytes[6] != 1 || bytes[7] != 0)
        fail(ErrorKind::Format, "unsupported npy version " + std::to_string(bytes[6]) + "." + std::to_string(bytes[7]));
    const std::size_t header_len = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8);
    if (bytes.size() < kPreludeSize + header_len) fail(ErrorKind::Format, "truncated npy header");

    const std::string_view dict(reinterpret_cast<const char*>(bytes.data()) + kPreludeSize, header_len);
    const auto body = trim(dict);
    if (body.empty() || body.front() != '{' || body.back() != '}') fail(ErrorKind::Format, "npy header is not a dict");

    const auto descr = dict_value(body, "descr");
    const auto fortran = dict_value(body, "fortran_order");
    const auto shape = dict_value(body, "shape");
    if (!descr || !fortran || !shape) fail(ErrorKind::Format, "npy header lacks descr/fortran_order/shape");

    if (descr->size() < 2 || (descr->front() != '\'' && descr->front() != '"'))
        fail(ErrorKind::Format, "npy header: descr is not a string");
    const auto descr_str = descr->substr(1, descr->size() - 2);
    if (descr_str != "<f4") fail(ErrorKind::UnsupportedEncoding, "dtype " + std::string(descr_str) + " (need <f4)");
    if (*fortran == "True") fail(ErrorKind::UnsupportedEncoding, "fortran-order arrays are not supported");
    if (*fortran != "False") fail(ErrorKind::Format, "bad fortran_order value");

    const auto dims = parse_shape(*shape);
    if (dims.size() != 3) fail(ErrorKind::Format, "expected a 3-d shape, got " + std::to_string(dims.size()) + "-d");

    ActivationMap map(dims[0], dims[1], dims[2]);
    const std::size_t payload = map.data.size() * sizeof(float);
    if (bytes.size() != kPreludeSize + header_len + payload)
        fail(ErrorKind::Format, "payload size does not match the declared shape");
    std::memcpy(map.data.data(), bytes.data() + kPreludeSize + header_len, payload);

    require(map.channels > 0 && map.height > 0 && map.width > 0, ErrorKind::Format, "npy shape has a zero dimension");
    for (float v : map.data)
        require(std::isfinite(v), ErrorKind::DataIntegrity, "npy payload contains NaN or Inf");
    return map;
}

ActivationMap read_tensor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_tensor(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), e.detail() + " [" + path.string() + "]");
    }
}

std::vector<std::uint8_t> encode_tensor(const ActivationMap& map) {
    validate(map);
    std::string header = header_dict(map);
    const std::size_t unpadded = kPreludeSize + header.size() + 1;
    const std::size_t padded = (unpadded + kAlignment - 1) / kAlignment * kAlignment;
    header.append(padded - unpadded, ' ');
    header.push_back('\n');
    require(header.size() <= 0xFFFF, ErrorKind::Precondition, "npy header too long for v1.0");

    std::vector<std::uint8_t> out;
    out.reserve(padded + map.data.size() * sizeof(float));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    out.push_back(1);
    out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(header.size() & 0xFF));
    out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
    out.insert(out.end(), header.begin(), header.end());
    const auto* payload = reinterpret_cast<const std::uint8_t*>(map.data.data());
    out.insert(out.end(), payload, payload + map.data.size() * sizeof(float));
    return out;
}

void write_tensor(const ActivationMap& map, const std::filesystem::path& path) {
    write_file_bytes(path, encode_tensor(map));
}

ConceptMask read_mask(const std::filesystem::path& path, int threshold) {
    const GrayImage gray = read_gray_png(path);
    ConceptMask mask(gray.height, gray.width);
    for (std::size_t i = 0; i < gray.pixels.size(); ++i) mask.values[i] = gray.pixels[i] > threshold ? 1 : 0;
    return mask;
}

void write_mask(const ConceptMask& mask, const std::filesystem::path& path) {
    require(mask.height > 0 && mask.width > 0 && mask.values.size() == mask.pixels(), ErrorKind::Precondition,
            "mask has inconsistent dimensions");
    GrayImage gray{mask.width, mask.height, std::vector<std::uint8_t>(mask.pixels())};
    for (std::size_t i = 0; i < mask.values.size(); ++i) gray.pixels[i] = mask.values[i] ? 255 : 0;
    write_gray_png(gray, path);
}

}  // namespace cebias
