#include "oracle_grasp/io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& pointer, const std::string& message) {
    throw Error(ErrorKind::kIo, "schema error at " + pointer + ": " + message);
}

const json& require(const json& doc, const std::string& key, const std::string& pointer) {
    if (!doc.is_object()) schema_error(pointer, "expected an object");
    const auto it = doc.find(key);
    if (it == doc.end()) schema_error(pointer + "/" + key, "missing");
    return *it;
}

std::string require_string(const json& doc, const std::string& key, const std::string& pointer) {
    const json& v = require(doc, key, pointer);
    if (!v.is_string()) schema_error(pointer + "/" + key, "expected a string");
    return v.get<std::string>();
}

double require_number(const json& doc, const std::string& key, const std::string& pointer) {
    const json& v = require(doc, key, pointer);
    if (!v.is_number()) schema_error(pointer + "/" + key, "expected a number");
    return v.get<double>();
}

std::optional<std::string> optional_string(const json& doc, const std::string& key, const std::string& pointer) {
    const auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) schema_error(pointer + "/" + key, "expected a string");
    return it->get<std::string>();
}

void require_file(const fs::path& path) {
    if (!fs::exists(path)) throw Error(ErrorKind::kIo, path.string() + ": file not found");
}

}  // namespace

std::string image_digest(std::span<const std::uint8_t> bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorKind::kIo, "sha256 failed");
    }
    std::ostringstream hex;
    hex << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) hex << std::setw(2) << static_cast<int>(md[i]);
    return hex.str();
}

std::string sha256_hex(const std::string& text) {
    return image_digest({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    std::vector<std::uint8_t> out(3 * (text.size() / 4) + 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorKind::kIo, "invalid base64");
    size_t size = static_cast<size_t>(n);
    // EVP_DecodeBlock counts padding characters as zero bytes.
    for (size_t i = text.size(); i > 0 && text[i - 1] == '='; --i) --size;
    out.resize(size);
    return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
    cv::Mat bgr;
    cv::cvtColor(image, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", bgr, bytes)) throw Error(ErrorKind::kIo, "PNG encoding failed");
    return bytes;
}

RgbImage load_rgb(const fs::path& path) {
    require_file(path);
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw Error(ErrorKind::kIo, path.string() + ": unreadable or unsupported image format");
    if (raw.depth() != CV_8U) throw Error(ErrorKind::kIo, path.string() + ": unsupported bit depth");
    RgbImage rgb;
    switch (raw.channels()) {
        case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
        case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
        case 4: cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB); break;
        default: throw Error(ErrorKind::kIo, path.string() + ": unsupported channel count");
    }
    return rgb;
}

void save_rgb(const fs::path& path, const RgbImage& image) {
    cv::Mat bgr;
    cv::cvtColor(image, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw Error(ErrorKind::kIo, path.string() + ": cannot write image");
}

DepthMap load_depth(const fs::path& path) {
    require_file(path);
    const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw Error(ErrorKind::kIo, path.string() + ": unreadable or unsupported image format");
    if (raw.depth() != CV_16U || raw.channels() != 1) {
        throw Error(ErrorKind::kIo, path.string() + ": depth map must be a 16-bit single-channel PNG");
    }
    std::vector<std::uint16_t> values(static_cast<size_t>(raw.rows) * raw.cols);
    for (int y = 0; y < raw.rows; ++y) {
        const auto* row = raw.ptr<std::uint16_t>(y);
        std::copy(row, row + raw.cols, values.begin() + static_cast<std::ptrdiff_t>(y) * raw.cols);
    }
    return DepthMap(raw.cols, raw.rows, std::move(values));
}

void save_depth(const fs::path& path, const DepthMap& depth) {
    cv::Mat raw(depth.height(), depth.width(), CV_16UC1);
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) raw.at<std::uint16_t>(y, x) = depth.at(x, y);
    }
    if (!cv::imwrite(path.string(), raw)) throw Error(ErrorKind::kIo, path.string() + ": cannot write depth map");
}

fs::path DatasetManifest::resolve(const std::string& relative) const {
    const fs::path p(relative);
    return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest manifest_from_json(const json& doc, const fs::path& base_dir) {
    DatasetManifest manifest;
    manifest.base_dir = base_dir;
    const json& entries = require(doc, "entries", "");
    if (!entries.is_array()) schema_error("/entries", "expected an array");
    std::set<std::string> seen;
    for (size_t i = 0; i < entries.size(); ++i) {
        const std::string pointer = "/entries/" + std::to_string(i);
        ManifestEntry e;
        e.id = require_string(entries[i], "id", pointer);
        e.image = require_string(entries[i], "image", pointer);
        e.depth = optional_string(entries[i], "depth", pointer);
        e.annotation = optional_string(entries[i], "annotation", pointer);
        if (!seen.insert(e.id).second) schema_error(pointer + "/id", "duplicate id '" + e.id + "'");
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

json manifest_to_json(const DatasetManifest& manifest) {
    json entries = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        json j = {{"id", e.id}, {"image", e.image}};
        if (e.depth) j["depth"] = *e.depth;
        if (e.annotation) j["annotation"] = *e.annotation;
        entries.push_back(std::move(j));
    }
    return {{"entries", entries}};
}

DatasetManifest load_manifest(const fs::path& path) {
    DatasetManifest manifest = manifest_from_json(read_json_file(path), path.parent_path());
    for (const ManifestEntry& e : manifest.entries) {
        require_file(manifest.resolve(e.image));
        if (e.depth) require_file(manifest.resolve(*e.depth));
        if (e.annotation) require_file(manifest.resolve(*e.annotation));
    }
    return manifest;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    write_text_file(path, manifest_to_json(manifest).dump(2) + "\n");
}

AnnotationSet annotation_from_json(const json& doc) {
    AnnotationSet ann;
    ann.image_id = require_string(doc, "image", "");
    ann.bounding_diameter_px = require_number(doc, "d_px", "");
    if (const auto it = doc.find("mm_per_px"); it != doc.end() && !it->is_null()) {
        if (!it->is_number()) schema_error("/mm_per_px", "expected a number");
        ann.mm_per_px = it->get<double>();
    }
    const json& grasps = require(doc, "grasps", "");
    if (!grasps.is_array()) schema_error("/grasps", "expected an array");
    for (size_t i = 0; i < grasps.size(); ++i) {
        const std::string pointer = "/grasps/" + std::to_string(i);
        ann.grasps.push_back({{require_number(grasps[i], "x", pointer), require_number(grasps[i], "y", pointer)},
                              require_number(grasps[i], "theta_deg", pointer)});
    }
    try {
        ann.validate();
    } catch (const Error& e) {
        throw Error(ErrorKind::kIo, std::string("schema error: ") + e.what());
    }
    return ann;
}

json annotation_to_json(const AnnotationSet& ann) {
    json grasps = json::array();
    for (const AnnotatedGrasp& g : ann.grasps) {
        grasps.push_back({{"x", g.position.x}, {"y", g.position.y}, {"theta_deg", g.theta_deg}});
    }
    json doc = {{"image", ann.image_id}, {"d_px", ann.bounding_diameter_px}, {"grasps", grasps}};
    if (ann.mm_per_px) doc["mm_per_px"] = *ann.mm_per_px;
    return doc;
}

AnnotationSet load_annotation(const fs::path& path) {
    try {
        return annotation_from_json(read_json_file(path));
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

void save_annotation(const fs::path& path, const AnnotationSet& ann) {
    write_text_file(path, annotation_to_json(ann).dump(2) + "\n");
}

json transcript_entry_to_json(const TranscriptEntry& entry) {
    json grid = nullptr;
    if (entry.grid) {
        grid = {{"columns", entry.grid->columns},
                {"rows", entry.grid->rows},
                {"image_width", entry.grid->image_width},
                {"image_height", entry.grid->image_height}};
    }
    return {{"kind", to_string(entry.kind)},   {"grid", grid},
            {"image_digest", entry.image_digest}, {"prompt", entry.prompt},
            {"response", entry.response},         {"error", entry.error},
            {"failure", entry.failure ? json(to_string(*entry.failure)) : json(nullptr)},
            {"latency_ms", entry.latency_ms},     {"timestamp", entry.timestamp}};
}

TranscriptEntry transcript_entry_from_json(const json& doc) {
    TranscriptEntry e;
    try {
        e.kind = request_kind_from_string(require_string(doc, "kind", ""));
    } catch (const std::invalid_argument&) {
        schema_error("/kind", "unknown request kind");
    }
    if (const auto it = doc.find("grid"); it != doc.end() && !it->is_null()) {
        e.grid = GridSpec{it->at("columns").get<int>(), it->at("rows").get<int>(),
                          it->at("image_width").get<int>(), it->at("image_height").get<int>()};
    }
    e.image_digest = require_string(doc, "image_digest", "");
    e.prompt = require_string(doc, "prompt", "");
    e.response = require_string(doc, "response", "");
    e.error = doc.value("error", "");
    if (const auto it = doc.find("failure"); it != doc.end() && !it->is_null()) {
        try {
            e.failure = oracle_failure_from_string(it->get<std::string>());
        } catch (const std::exception&) {
            schema_error("/failure", "unknown oracle failure");
        }
    }
    e.latency_ms = doc.value("latency_ms", 0.0);
    e.timestamp = doc.value("timestamp", "");
    return e;
}

void write_transcript(const fs::path& path, const TranscriptFile& file) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, path.string() + ": cannot open for writing");
    json header = file.header;
    header["kind"] = "header";
    out << header.dump() << '\n';
    for (const TranscriptEntry& e : file.transcript.entries) out << transcript_entry_to_json(e).dump() << '\n';
    if (!out) throw Error(ErrorKind::kIo, path.string() + ": write failed");
}

TranscriptFile read_transcript(const fs::path& path) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    TranscriptFile file;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (doc.value("kind", "") == "header") {
            file.header = std::move(doc);
            continue;
        }
        try {
            file.transcript.entries.push_back(transcript_entry_from_json(doc));
        } catch (const std::exception& e) {
            throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return file;
}

void write_image_store(const fs::path& dir, const OracleTranscript& transcript) {
    fs::create_directories(dir);
    for (const TranscriptEntry& e : transcript.entries) {
        if (!e.image_png || e.image_digest.empty()) continue;
        const fs::path target = dir / (e.image_digest + ".png");
        if (fs::exists(target)) continue;
        std::ofstream out(target, std::ios::binary);
        out.write(reinterpret_cast<const char*>(e.image_png->data()), static_cast<std::streamsize>(e.image_png->size()));
        if (!out) throw Error(ErrorKind::kIo, target.string() + ": write failed");
    }
}

json read_json_file(const fs::path& path) {
    require_file(path);
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::kIo, path.string() + ": " + e.what());
    }
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw Error(ErrorKind::kIo, path.string() + ": write failed");
}

std::string read_text_file(const fs::path& path) {
    require_file(path);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace oracle_grasp
