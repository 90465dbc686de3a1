#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oracle_grasp/depth_refine.hpp"
#include "oracle_grasp/eval.hpp"
#include "oracle_grasp/oracle.hpp"
#include "oracle_grasp/tiling.hpp"

namespace oracle_grasp {

namespace fs = std::filesystem;

/// Lowercase hex SHA-256.
std::string image_digest(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Lossless PNG encoding of an RGB image.
std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// 8-bit PNG (gray, RGB or RGBA) as RGB. Throws Error(kIo) naming the path.
RgbImage load_rgb(const fs::path& path);
void save_rgb(const fs::path& path, const RgbImage& image);

/// 16-bit single-channel PNG in millimeters; zeros are invalid readings.
DepthMap load_depth(const fs::path& path);
void save_depth(const fs::path& path, const DepthMap& depth);

struct ManifestEntry {
    std::string id;
    std::string image;  // as written in the manifest
    std::optional<std::string> depth;
    std::optional<std::string> annotation;
};

/// Dataset listing; relative paths resolve against the manifest's directory.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    fs::path base_dir;

    fs::path resolve(const std::string& relative) const;
};

DatasetManifest manifest_from_json(const nlohmann::json& doc, const fs::path& base_dir);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
/// Parses, checks ids for uniqueness and verifies referenced files exist.
DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const fs::path& path, const DatasetManifest& manifest);

AnnotationSet annotation_from_json(const nlohmann::json& doc);
nlohmann::json annotation_to_json(const AnnotationSet& ann);
AnnotationSet load_annotation(const fs::path& path);
void save_annotation(const fs::path& path, const AnnotationSet& ann);

nlohmann::json transcript_entry_to_json(const TranscriptEntry& entry);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& doc);

/// JSON-lines transcript. The first line is a header object carrying
/// `"kind": "header"`; every further line is one exchange.
struct TranscriptFile {
    nlohmann::json header = nlohmann::json::object();
    OracleTranscript transcript;
};

void write_transcript(const fs::path& path, const TranscriptFile& file);
TranscriptFile read_transcript(const fs::path& path);

/// Writes each distinct sent image as <dir>/<digest>.png.
void write_image_store(const fs::path& dir, const OracleTranscript& transcript);

nlohmann::json read_json_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

}  // namespace oracle_grasp
