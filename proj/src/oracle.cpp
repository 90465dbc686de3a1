#include "oracle_grasp/oracle.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>
#include <utility>

#include "oracle_grasp/io.hpp"

namespace oracle_grasp {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof(out), "%s.%03lldZ", buf, static_cast<long long>(ms));
    return out;
}

// Drops markdown code-fence lines such as ``` or ```text.
std::string strip_fences(const std::string& raw) {
    std::istringstream in(raw);
    std::string line, out;
    while (std::getline(in, line)) {
        if (trim(line).rfind("```", 0) == 0) continue;
        out += line;
        out += '\n';
    }
    return out;
}

std::string exchange(Oracle& oracle, const OracleRequest& request, TranscriptEntry& entry,
                     OracleTranscript& transcript) {
    const auto start = std::chrono::steady_clock::now();
    entry.timestamp = utc_timestamp();
    try {
        entry.response = oracle.respond(request);
    } catch (const OracleError& e) {
        entry.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        entry.error = e.what();
        entry.failure = e.failure();
        transcript.entries.push_back(entry);
        throw;
    } catch (const std::exception& e) {
        entry.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        entry.error = e.what();
        transcript.entries.push_back(entry);
        throw;
    }
    entry.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return entry.response;
}

}  // namespace

namespace {
constexpr std::pair<OracleFailure, const char*> kFailureNames[] = {
    {OracleFailure::kTransport, "transport"},     {OracleFailure::kUnparseable, "unparseable"},
    {OracleFailure::kOutOfRange, "out_of_range"}, {OracleFailure::kEmptyContext, "empty_context"},
    {OracleFailure::kExhausted, "exhausted"},     {OracleFailure::kDivergence, "divergence"},
};
}  // namespace

std::string to_string(OracleFailure failure) {
    for (const auto& [f, name] : kFailureNames)
        if (f == failure) return name;
    return "transport";
}

OracleFailure oracle_failure_from_string(const std::string& text) {
    for (const auto& [f, name] : kFailureNames)
        if (text == name) return f;
    throw std::invalid_argument("unknown oracle failure '" + text + "'");
}

std::string to_string(RequestKind kind) { return kind == RequestKind::kScp ? "SCP" : "GRP"; }

RequestKind request_kind_from_string(const std::string& text) {
    if (text == "SCP") return RequestKind::kScp;
    if (text == "GRP") return RequestKind::kGrp;
    throw std::invalid_argument("unknown request kind '" + text + "'");
}

SceneContext SceneContext::make(const std::string& raw) {
    std::string text = trim(raw);
    if (text.empty()) throw OracleError(OracleFailure::kEmptyContext, "empty context");
    return {std::move(text)};
}

std::string build_scp() {
    return "Please provide a short, concise description of the principal object present in the image, "
           "focusing on the parts of the object that could be used for grasping. If the object has a clear "
           "handle or grip, mention that; if not, describe a cylindrical or otherwise ergonomically graspable "
           "section of the object. Avoid extraneous details unrelated to how one might physically grasp the "
           "object. Keep your answer to one sentence.";
}

std::string build_grp(const SceneContext* context, const GridSpec& grid, bool include_explanation) {
    std::ostringstream p;
    if (context) {
        p << "Based on the following image context: " << context->text << ", analyze";
    } else {
        p << "Analyze";
    }
    p << " the provided image and determine the optimal grid cell, from (0,0) to (" << grid.columns << ", "
      << grid.rows - 1
      << "), that corresponds to the best grasping area for the object. Focus exclusively on the object "
         "(ignore all background and surrounding elements).\n"
         "CONSIDER THE FOLLOWING:\n"
         "1. Prioritize areas that resemble handles or have handle-like features.\n"
         "2. If no handle is present, select the most stable area.\n"
         "3. Avoid areas that could interfere with the object's functionality.\n"
         "IMPORTANT:\n"
         "1. Your response MUST follow exactly the format below.\n"
         "2. DO NOT include any additional text, markdown formatting, or commentary.\n"
         "OUTPUT FORMAT:\n"
         "GRID_CELL: <cell_number>";
    if (include_explanation) p << "\nEXPLANATION: <brief explanation of your choice>";
    return p.str();
}

GraspRegionChoice parse_grp_response(const std::string& raw, const GridSpec& grid) {
    static const std::regex cell_re(
        R"(GRID[_\\ ]*CELL[*_]*\s*[:=]\s*[*_]*\s*(?:[\(\[]\s*(-?\d+)\s*,\s*(-?\d+)\s*[\)\]]|(-?\d+)))",
        std::regex::icase);
    static const std::regex explanation_re(R"(EXPLANATION[*_]*\s*:\s*[*_]*[ \t]*([\s\S]*))", std::regex::icase);

    const std::string text = strip_fences(raw);
    std::smatch m;
    if (!std::regex_search(text, m, cell_re)) {
        throw OracleError(OracleFailure::kUnparseable, "unparseable response");
    }
    long long index = 0;
    if (m[3].matched) {
        index = std::stoll(m[3].str());
    } else {
        const long long col = std::stoll(m[1].str());
        const long long row = std::stoll(m[2].str());
        if (col < 0 || row < 0 || col >= grid.columns || row >= grid.rows) {
            throw OracleError(OracleFailure::kOutOfRange, "cell out of range");
        }
        index = row * grid.columns + col;
    }
    if (index < 0 || index >= grid.cell_count()) throw OracleError(OracleFailure::kOutOfRange, "cell out of range");

    GraspRegionChoice choice;
    choice.cell_index = static_cast<int>(index);
    if (std::smatch e; std::regex_search(text, e, explanation_re)) choice.explanation = trim(e[1].str());
    return choice;
}

std::string format_grp_response(const GraspRegionChoice& choice, bool include_explanation) {
    std::string out = "GRID_CELL: " + std::to_string(choice.cell_index);
    if (include_explanation) out += "\nEXPLANATION: " + choice.explanation;
    return out;
}

// --- scripted ----------------------------------------------------------------

ScriptedOracle::ScriptedOracle(ScriptedOracleConfig config) : config_(std::move(config)), rng_(config_.seed) {
    if (config_.mode != ScriptedMode::kRandomCell && config_.targets.empty()) {
        throw Error(ErrorKind::kConfig, "scripted oracle needs at least one target point");
    }
    if (config_.noise_radius_px < 0.0) throw Error(ErrorKind::kConfig, "noise radius must be non-negative");
}

std::string ScriptedOracle::respond(const OracleRequest& request) {
    if (request.kind == RequestKind::kScp) return config_.scene_text;
    if (!request.grid) throw Error(ErrorKind::kInvalidArgument, "GRP request without a grid");
    const GridSpec& grid = *request.grid;
    const bool explain = request.prompt.find("EXPLANATION") != std::string::npos;

    std::lock_guard lock(mutex_);
    if (config_.mode == ScriptedMode::kRandomCell) {
        std::uniform_int_distribution<int> pick(0, grid.cell_count() - 1);
        return format_grp_response({pick(rng_), "random cell"}, explain);
    }
    Point target = config_.targets[cursor_++ % config_.targets.size()];
    if (config_.mode == ScriptedMode::kNoisyTarget && config_.noise_radius_px > 0.0) {
        // Uniform over the disc of the configured radius.
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double r = config_.noise_radius_px * std::sqrt(unit(rng_));
        const double phi = 2.0 * 3.14159265358979323846 * unit(rng_);
        target = {target.x + r * std::cos(phi), target.y + r * std::sin(phi)};
    }
    const Point local = request.frame.is_identity() ? target : request.frame.forward(target);
    const int px = static_cast<int>(std::floor(local.x + 0.5));
    const int py = static_cast<int>(std::floor(local.y + 0.5));
    return format_grp_response({cell_index_at(grid, px, py), "cell containing the scripted target"}, explain);
}

// --- replay ------------------------------------------------------------------

ReplayOracle::ReplayOracle(OracleTranscript recording) : recording_(std::move(recording)) {}

std::string ReplayOracle::respond(const OracleRequest& request) {
    std::lock_guard lock(mutex_);
    if (cursor_ >= recording_.entries.size()) {
        throw OracleError(OracleFailure::kExhausted, "transcript exhausted");
    }
    const TranscriptEntry& entry = recording_.entries[cursor_];
    if (entry.kind != request.kind || entry.prompt != request.prompt || entry.grid != request.grid) {
        throw OracleError(OracleFailure::kDivergence,
                          "transcript divergence at entry " + std::to_string(cursor_) + ": recorded " +
                              to_string(entry.kind) + " request differs from the replayed one");
    }
    ++cursor_;
    if (entry.failure) throw OracleError(*entry.failure, entry.error);
    if (!entry.error.empty() && entry.response.empty()) {
        throw OracleError(OracleFailure::kTransport, entry.error);
    }
    return entry.response;
}

size_t ReplayOracle::remaining() const {
    std::lock_guard lock(mutex_);
    return recording_.entries.size() - cursor_;
}

// --- http --------------------------------------------------------------------

struct HttpOracle::Pool {
    std::mutex mutex;
    std::vector<std::unique_ptr<httplib::Client>> idle;
};

HttpOracleConfig http_config_from_env(HttpOracleConfig config) {
    if (const char* v = std::getenv("ORACLE_GRASP_ENDPOINT"); v && *v) config.endpoint = v;
    if (const char* v = std::getenv("ORACLE_GRASP_API_KEY"); v && *v) config.api_key = v;
    if (const char* v = std::getenv("ORACLE_GRASP_MODEL"); v && *v) config.model = v;
    if (config.endpoint.empty()) throw Error(ErrorKind::kConfig, "endpoint not configured");
    return config;
}

HttpOracle::HttpOracle(HttpOracleConfig config) : config_(std::move(config)), pool_(std::make_unique<Pool>()) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url_re)) {
        throw Error(ErrorKind::kConfig, "invalid endpoint URL '" + config_.endpoint + "'");
    }
    host_ = m[1].str();
    path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
}

HttpOracle::~HttpOracle() = default;

std::string HttpOracle::request_body(const OracleRequest& request) const {
    std::vector<std::uint8_t> encoded;
    const std::vector<std::uint8_t>* png = request.png;
    if (!png) {
        encoded = encode_png(*request.image);
        png = &encoded;
    }
    nlohmann::json body = {
        {"model", config_.model},
        {"temperature", config_.temperature},
        {"messages",
         {{{"role", "user"},
           {"content",
            {{{"type", "text"}, {"text", request.prompt}},
             {{"type", "image_url"},
              {"image_url", {{"url", "data:image/png;base64," + base64_encode(*png)}}}}}}}}}};
    return body.dump();
}

std::string parse_chat_completion(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
        throw OracleError(OracleFailure::kUnparseable, "malformed chat completion: body is not JSON");
    }
    const auto choices = doc.find("choices");
    if (choices == doc.end() || !choices->is_array() || choices->empty() || !(*choices)[0].contains("message")) {
        throw OracleError(OracleFailure::kUnparseable, "malformed chat completion: no message");
    }
    const nlohmann::json& content = (*choices)[0]["message"].value("content", nlohmann::json());
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
        std::string text;
        for (const auto& part : content) {
            if (part.value("type", "") == "text") text += part.value("text", "");
        }
        return text;
    }
    throw OracleError(OracleFailure::kUnparseable, "malformed chat completion: no text content");
}

std::string HttpOracle::respond(const OracleRequest& request) {
    std::unique_ptr<httplib::Client> client;
    {
        std::lock_guard lock(pool_->mutex);
        if (!pool_->idle.empty()) {
            client = std::move(pool_->idle.back());
            pool_->idle.pop_back();
        }
    }
    if (!client) {
        client = std::make_unique<httplib::Client>(host_);
        const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::duration<double>(config_.timeout_s));
        client->set_connection_timeout(timeout);
        client->set_read_timeout(timeout);
        client->set_write_timeout(timeout);
        client->set_keep_alive(true);
    }
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto result = client->Post(path_, headers, request_body(request), "application/json");
    if (!result) {
        throw OracleError(OracleFailure::kTransport,
                          "oracle transport failure (" + host_ + path_ + "): " + httplib::to_string(result.error()));
    }
    if (result->status < 200 || result->status >= 300) {
        throw OracleError(OracleFailure::kTransport,
                          "oracle returned HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200));
    }
    std::string text = parse_chat_completion(result->body);
    {
        std::lock_guard lock(pool_->mutex);
        if (static_cast<int>(pool_->idle.size()) < config_.max_connections) pool_->idle.push_back(std::move(client));
    }
    return text;
}

// --- queries -----------------------------------------------------------------

SceneContext query_scene_context(Oracle& oracle, const RgbImage& image, OracleTranscript& transcript) {
    if (image.empty()) throw Error(ErrorKind::kInvalidArgument, "empty image");
    auto png = std::make_shared<const std::vector<std::uint8_t>>(encode_png(image));

    TranscriptEntry entry;
    entry.kind = RequestKind::kScp;
    entry.prompt = build_scp();
    entry.image_digest = image_digest(*png);
    entry.image_png = png;

    OracleRequest request;
    request.kind = RequestKind::kScp;
    request.prompt = entry.prompt;
    request.image = &image;
    request.png = png.get();
    request.frame = FrameTransform(image.cols, image.rows);

    const std::string raw = exchange(oracle, request, entry, transcript);
    try {
        SceneContext context = SceneContext::make(raw);
        transcript.entries.push_back(std::move(entry));
        return context;
    } catch (const std::exception& e) {
        entry.error = e.what();
        transcript.entries.push_back(std::move(entry));
        throw;
    }
}

GraspRegionChoice query_grasp_region(Oracle& oracle, const RgbImage& overlaid, const GridSpec& grid,
                                     const SceneContext* context, bool include_explanation,
                                     const FrameTransform& frame, OracleTranscript& transcript) {
    if (overlaid.cols != grid.image_width || overlaid.rows != grid.image_height) {
        throw Error(ErrorKind::kInvalidArgument, "grid does not match the image it overlays");
    }
    auto png = std::make_shared<const std::vector<std::uint8_t>>(encode_png(overlaid));

    TranscriptEntry entry;
    entry.kind = RequestKind::kGrp;
    entry.grid = grid;
    entry.prompt = build_grp(context, grid, include_explanation);
    entry.image_digest = image_digest(*png);
    entry.image_png = png;

    OracleRequest request;
    request.kind = RequestKind::kGrp;
    request.prompt = entry.prompt;
    request.image = &overlaid;
    request.png = png.get();
    request.grid = grid;
    request.frame = frame;

    const std::string raw = exchange(oracle, request, entry, transcript);
    try {
        GraspRegionChoice choice = parse_grp_response(raw, grid);
        transcript.entries.push_back(std::move(entry));
        return choice;
    } catch (const std::exception& e) {
        entry.error = e.what();
        transcript.entries.push_back(std::move(entry));
        throw;
    }
}

}  // namespace oracle_grasp
