#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latcomp/types.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// A checkpoint directory: `meta.json` plus one little-endian float32 blob per
/// tensor. The tensor table lives under meta["tensors"].
struct Checkpoint {
    Json meta = Json::object();
    std::vector<NamedTensor> tensors;

    const Tensor& tensor(std::string_view name) const;
    bool has(std::string_view name) const;
};

/// Writes into a sibling temp directory and renames it into place.
void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const fs::path& dir);

/// Atomic text write (temp file + rename).
void write_text_file(const fs::path& path, std::string_view text);
std::string read_text_file(const fs::path& path);
Json read_json_file(const fs::path& path);

// 8-bit PNG codec. Images map [-1, 1] <-> [0, 255]; masks map {0, 1} <-> {0, 255}.
std::vector<std::uint8_t> encode_png_rgb(const ImageBatch& image, int index = 0);
std::vector<std::uint8_t> encode_png_mask(const Mask& mask, int index = 0);
ImageBatch decode_png_image(std::span<const std::uint8_t> bytes);
Mask decode_png_mask(std::span<const std::uint8_t> bytes);

void write_png(const fs::path& path, const ImageBatch& image, int index = 0);
void write_mask_png(const fs::path& path, const Mask& mask, int index = 0);
ImageBatch read_png(const fs::path& path);
Mask read_mask_png(const fs::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Rounds an image through the 8-bit wire quantisation.
ImageBatch quantize8(const ImageBatch& image);

/// Every *.png in a directory, sorted by file name.
std::vector<fs::path> list_pngs(const fs::path& dir);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
