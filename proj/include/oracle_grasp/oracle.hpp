#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oracle_grasp/error.hpp"
#include "oracle_grasp/tiling.hpp"

namespace oracle_grasp {

enum class RequestKind { kScp, kGrp };

std::string to_string(RequestKind kind);
RequestKind request_kind_from_string(const std::string& text);

/// One-sentence grasp-oriented description of the principal object.
struct SceneContext {
    std::string text;

    /// Trims whitespace; throws OracleError(kEmptyContext) if nothing is left.
    static SceneContext make(const std::string& raw);
};

struct GraspRegionChoice {
    int cell_index = 0;
    std::string explanation;

    friend bool operator==(const GraspRegionChoice&, const GraspRegionChoice&) = default;
};

enum class OracleFailure {
    kTransport,     // backend unreachable or returned an error status
    kUnparseable,   // reply had no usable GRID_CELL field
    kOutOfRange,    // reply named a cell outside the grid
    kEmptyContext,  // SCP reply was blank
    kExhausted,     // replay transcript has no more entries
    kDivergence,    // replay request does not match the recording
};

std::string to_string(OracleFailure failure);
OracleFailure oracle_failure_from_string(const std::string& text);

class OracleError : public Error {
public:
    OracleError(OracleFailure failure, const std::string& what)
        : Error(ErrorKind::kOracle, what), failure_(failure) {}

    OracleFailure failure() const noexcept { return failure_; }
    /// Parse-class failures that the pipeline may retry.
    bool retryable() const noexcept {
        return failure_ == OracleFailure::kUnparseable || failure_ == OracleFailure::kOutOfRange;
    }

private:
    OracleFailure failure_;
};

// --- prompts ---------------------------------------------------------------

std::string build_scp();

/// GRP text for `grid`. A null context drops the leading context clause
/// (SCP ablation); include_explanation=false drops the EXPLANATION field.
std::string build_grp(const SceneContext* context, const GridSpec& grid, bool include_explanation);

/// Accepts "GRID_CELL: 7" or "GRID_CELL: (col,row)", tolerating markdown
/// fences, emphasis and surrounding chatter.
GraspRegionChoice parse_grp_response(const std::string& raw, const GridSpec& grid);

/// Canonical reply text in the GRP output format.
std::string format_grp_response(const GraspRegionChoice& choice, bool include_explanation = true);

// --- transcript ------------------------------------------------------------

struct TranscriptEntry {
    RequestKind kind = RequestKind::kScp;
    std::optional<GridSpec> grid;
    std::string image_digest;  // SHA-256 of the PNG bytes sent
    std::string prompt;
    std::string response;
    std::string error;  // empty on success
    /// Failure class when the backend raised.
    std::optional<OracleFailure> failure;
    double latency_ms = 0.0;
    std::string timestamp;  // ISO-8601 UTC
    /// PNG bytes that were sent; kept in memory for recording, never serialized inline.
    std::shared_ptr<const std::vector<std::uint8_t>> image_png;
};

struct OracleTranscript {
    std::vector<TranscriptEntry> entries;
};

// --- backends --------------------------------------------------------------

struct OracleRequest {
    RequestKind kind = RequestKind::kScp;
    std::string prompt;
    const RgbImage* image = nullptr;
    const std::vector<std::uint8_t>* png = nullptr;
    std::optional<GridSpec> grid;
    /// Maps root-image points into the frame of `image`.
    FrameTransform frame;
};

/// A backend answering SCP and GRP requests with raw reply text.
/// Implementations must tolerate concurrent calls.
class Oracle {
public:
    virtual ~Oracle() = default;
    virtual std::string respond(const OracleRequest& request) = 0;
};

enum class ScriptedMode { kFixedTarget, kNoisyTarget, kRandomCell };

struct ScriptedOracleConfig {
    std::string scene_text = "a graspable object";
    ScriptedMode mode = ScriptedMode::kFixedTarget;
    /// Root-frame targets; successive GRP queries cycle through them.
    std::vector<Point> targets;
    double noise_radius_px = 0.0;
    std::uint64_t seed = 0;
};

/// Deterministic test double: answers GRP queries with the cell holding its
/// configured target, optionally jittered, or with a uniformly random cell.
class ScriptedOracle : public Oracle {
public:
    explicit ScriptedOracle(ScriptedOracleConfig config);
    std::string respond(const OracleRequest& request) override;

private:
    ScriptedOracleConfig config_;
    std::mutex mutex_;
    std::mt19937_64 rng_;
    size_t cursor_ = 0;
};

/// Replays the replies of a recorded transcript in order.
class ReplayOracle : public Oracle {
public:
    explicit ReplayOracle(OracleTranscript recording);
    std::string respond(const OracleRequest& request) override;
    size_t remaining() const;

private:
    OracleTranscript recording_;
    mutable std::mutex mutex_;
    size_t cursor_ = 0;
};

struct HttpOracleConfig {
    std::string endpoint;  // full URL of the chat-completions route
    std::string api_key;
    std::string model = "llama-3.2-11b-vision-instruct";
    double temperature = 0.6;
    double timeout_s = 60.0;
    int max_connections = 4;
};

/// Reads ORACLE_GRASP_ENDPOINT, ORACLE_GRASP_API_KEY and ORACLE_GRASP_MODEL;
/// throws Error(kConfig) "endpoint not configured" when the endpoint is unset.
HttpOracleConfig http_config_from_env(HttpOracleConfig defaults = {});

/// Multimodal chat-completion client. One user message carries the prompt
/// and the image as a base64 PNG data URL.
class HttpOracle : public Oracle {
public:
    explicit HttpOracle(HttpOracleConfig config);
    ~HttpOracle() override;
    std::string respond(const OracleRequest& request) override;

    /// JSON body sent for `request`; exposed for wire-format tests.
    std::string request_body(const OracleRequest& request) const;

private:
    struct Pool;
    HttpOracleConfig config_;
    std::string host_;
    std::string path_;
    std::unique_ptr<Pool> pool_;
};

/// Extracts the assistant text from a chat-completion response body.
std::string parse_chat_completion(const std::string& body);

// --- queries ---------------------------------------------------------------

/// Sends the SCP with the raw image. Appends exactly one transcript entry,
/// also when the query fails.
SceneContext query_scene_context(Oracle& oracle, const RgbImage& image, OracleTranscript& transcript);

/// Sends one GRP for `grid` with the already-overlaid image. Appends exactly
/// one transcript entry, also when the query fails.
GraspRegionChoice query_grasp_region(Oracle& oracle, const RgbImage& overlaid, const GridSpec& grid,
                                     const SceneContext* context, bool include_explanation,
                                     const FrameTransform& frame, OracleTranscript& transcript);

}  // namespace oracle_grasp
