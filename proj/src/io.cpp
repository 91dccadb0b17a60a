#include "latcomp/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

namespace latcomp {
inline namespace LATCOMP_ABI {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

const Tensor& Checkpoint::tensor(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.tensor;
    fail(ErrorCode::IoError, "checkpoint has no tensor '" + std::string(name) + "'");
}

bool Checkpoint::has(std::string_view name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const NamedTensor& t) { return t.name == name; });
}

namespace {

fs::path temp_sibling(const fs::path& target) {
    std::random_device rd;
    return target.parent_path() / (target.filename().string() + ".tmp-" + std::to_string(rd()));
}

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) fail(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string blob_name(std::size_t i, const std::string& name) {
    std::string safe = name;
    for (char& c : safe)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.') c = '_';
    return std::to_string(i) + "_" + safe + ".f32";
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
    if (!dir.parent_path().empty()) fs::create_directories(dir.parent_path());
    const fs::path tmp = temp_sibling(dir);
    fs::create_directories(tmp);
    try {
        Json meta = ckpt.meta;
        meta["format_version"] = kCheckpointFormatVersion;
        Json table = Json::array();
        for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
            const auto& nt = ckpt.tensors[i];
            const std::string file = blob_name(i, nt.name);
            std::vector<float> buf(nt.tensor.storage().begin(), nt.tensor.storage().end());
            write_bytes(tmp / file, buf.data(), buf.size() * sizeof(float));
            table.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"file", file}});
        }
        meta["tensors"] = table;
        const std::string text = meta.dump(2);
        write_bytes(tmp / "meta.json", text.data(), text.size());
        if (fs::exists(dir)) {
            const fs::path old = temp_sibling(dir);
            fs::rename(dir, old);
            fs::rename(tmp, dir);
            fs::remove_all(old);
        } else {
            fs::rename(tmp, dir);
        }
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(tmp);
        fail(ErrorCode::IoError, "saving checkpoint " + dir.string() + ": " + e.what());
    } catch (...) {
        fs::remove_all(tmp);
        throw;
    }
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const fs::path meta_path = dir / "meta.json";
    require(fs::is_regular_file(meta_path), ErrorCode::IoError, "no checkpoint at " + dir.string());
    Checkpoint ckpt;
    try {
        ckpt.meta = Json::parse(read_text_file(meta_path));
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, "corrupt meta.json in " + dir.string() + ": " + e.what());
    }
    require(ckpt.meta.value("format_version", 0) == kCheckpointFormatVersion, ErrorCode::IoError,
            "unsupported checkpoint format in " + dir.string());
    try {
        for (const auto& entry : ckpt.meta.at("tensors")) {
            Shape shape = entry.at("shape").get<Shape>();
            const auto bytes = read_bytes(dir / entry.at("file").get<std::string>());
            const std::size_t n = shape_numel(shape);
            require(bytes.size() == n * sizeof(float), ErrorCode::IoError,
                    "blob size mismatch for '" + entry.at("name").get<std::string>() + "' in " + dir.string());
            std::vector<float> buf(n);
            std::memcpy(buf.data(), bytes.data(), bytes.size());
            ckpt.tensors.push_back({entry.at("name").get<std::string>(),
                                    Tensor(std::move(shape), std::vector<Real>(buf.begin(), buf.end()))});
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, "corrupt tensor table in " + dir.string() + ": " + e.what());
    }
    return ckpt;
}

void write_text_file(const fs::path& path, std::string_view text) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path tmp = temp_sibling(path);
    write_bytes(tmp, text.data(), text.size());
    fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
    auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

Json read_json_file(const fs::path& path) {
    try {
        return Json::parse(read_text_file(path));
    } catch (const Json::exception& e) {
        fail(ErrorCode::IoError, "invalid JSON in " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// PNG

namespace {

std::uint8_t to_byte(Real v) {
    const double x = std::clamp((double(v) + 1.0) * 127.5, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::lround(x));
}

Real from_byte(std::uint8_t b) { return static_cast<Real>(double(b) / 127.5 - 1.0); }

std::vector<std::uint8_t> encode_png(const std::vector<std::uint8_t>& pixels, int width, int height, int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(width);
    img.height = static_cast<png_uint_32>(height);
    img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
        fail(ErrorCode::IoError, std::string("png encode: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
        fail(ErrorCode::IoError, std::string("png encode: ") + img.message);
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> decode_png(std::span<const std::uint8_t> bytes, png_uint_32 format, int& width,
                                     int& height) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        fail(ErrorCode::IoError, std::string("png decode: ") + img.message);
    img.format = format;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        fail(ErrorCode::IoError, std::string("png decode: ") + img.message);
    }
    width = static_cast<int>(img.width);
    height = static_cast<int>(img.height);
    return pixels;
}

}  // namespace

std::vector<std::uint8_t> encode_png_rgb(const ImageBatch& image, int index) {
    require(image.channels() == 3, ErrorCode::ShapeMismatch, "PNG export needs 3-channel images");
    const int H = image.height(), W = image.width();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                px[(static_cast<std::size_t>(y) * W + x) * 3 + c] = to_byte(image.values.at(index, c, y, x));
    return encode_png(px, W, H, 3);
}

std::vector<std::uint8_t> encode_png_mask(const Mask& mask, int index) {
    const int H = mask.height(), W = mask.width();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) px[static_cast<std::size_t>(y) * W + x] = mask.values.at(index, 0, y, x) > 0 ? 255 : 0;
    return encode_png(px, W, H, 1);
}

ImageBatch decode_png_image(std::span<const std::uint8_t> bytes) {
    int W = 0, H = 0;
    const auto px = decode_png(bytes, PNG_FORMAT_RGB, W, H);
    Tensor t({1, 3, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = from_byte(px[(static_cast<std::size_t>(y) * W + x) * 3 + c]);
    return ImageBatch(std::move(t));
}

Mask decode_png_mask(std::span<const std::uint8_t> bytes) {
    int W = 0, H = 0;
    const auto px = decode_png(bytes, PNG_FORMAT_GRAY, W, H);
    Tensor t({1, 1, H, W});
    for (std::size_t i = 0; i < px.size(); ++i) t[i] = px[i] >= 128 ? Real(1) : Real(0);
    return Mask(std::move(t));
}

void write_png(const fs::path& path, const ImageBatch& image, int index) {
    const auto bytes = encode_png_rgb(image, index);
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    write_bytes(path, bytes.data(), bytes.size());
}

void write_mask_png(const fs::path& path, const Mask& mask, int index) {
    const auto bytes = encode_png_mask(mask, index);
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    write_bytes(path, bytes.data(), bytes.size());
}

ImageBatch read_png(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return decode_png_image({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

Mask read_mask_png(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return decode_png_mask({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
    require(clean.size() % 4 == 0, ErrorCode::InvalidArgument, "base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out(clean.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    require(n >= 0, ErrorCode::InvalidArgument, "invalid base64 payload");
    // EVP_DecodeBlock keeps padding bytes; trim them.
    std::size_t pad = 0;
    if (!clean.empty() && clean.back() == '=') ++pad;
    if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

ImageBatch quantize8(const ImageBatch& image) {
    ImageBatch out = image;
    for (Real& v : out.values.values()) v = from_byte(to_byte(v));
    return out;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::IoError, "not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
