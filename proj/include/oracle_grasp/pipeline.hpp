#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oracle_grasp/depth_refine.hpp"
#include "oracle_grasp/oracle.hpp"
#include "oracle_grasp/tiling.hpp"

namespace oracle_grasp {

enum class OverlayMode { kGrid, kNone };

struct PipelineConfig {
    int iterations = 6;          // K, full-image GRP budget
    int stop_window = 3;         // m
    int crop_iterations = 0;     // iterations in the crop stage; 0 means m
    double iou_threshold = 0.4;  // gamma
    double stop_factor = 0.3;    // rho
    double alpha_min_deg = 15.0;
    double anisotropy_min = 2.0;
    std::vector<std::pair<int, int>> grid_schedule;  // empty: coarse-to-fine default
    double crop_margin_frac = 0.10;
    int max_parse_retries = 2;
    bool continuous_early_stop = false;

    bool use_scp = true;
    bool use_orientation_refinement = true;
    bool use_explanation = true;
    bool use_depth_refinement = true;

    OverlayMode overlay = OverlayMode::kGrid;
    OverlayStyle overlay_style;

    int depth_samples = 10;           // w
    double focal_length_px = 0.0;     // 0: not configured
    double clearance_radius_m = 0.0;  // 0: not configured

    int effective_crop_iterations() const { return crop_iterations > 0 ? crop_iterations : stop_window; }
    /// Throws Error(kConfig) naming the first violated constraint.
    void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& config);
/// Fields absent from `doc` keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& doc, PipelineConfig base = {});
/// SHA-256 of the canonical JSON form.
std::string config_digest(const PipelineConfig& config);

/// (3,3), (4,4), ... (9,9), then off-diagonal pairs in row-major order of
/// {3..9}^2. Throws once the 49 distinct pairs are exhausted.
std::vector<std::pair<int, int>> default_grid_schedule(int count);

struct AugmentResult {
    std::vector<RectMask> masks;  // originals followed by appended intersections
    int added = 0;                // s
};

/// One pass over unordered pairs of the input masks; the overlap of every
/// pair whose IoU exceeds `gamma` is appended. Appended masks are not paired.
AugmentResult augment_intersections(std::span<const RectMask> masks, double gamma);

/// Stopping test: max distance of `centers` from their centroid < rho * diagonal.
bool early_stop_check(std::span<const Point> centers, double rho, double diagonal);

enum class Stage { kFull, kCrop, kRotated };
std::string to_string(Stage stage);

struct Candidate {
    RectMask mask;        // in the frame described by `frame`
    FrameTransform frame;
    Stage stage = Stage::kFull;
    Point center;         // root frame
    bool augmented = false;
};

struct CandidateSet {
    std::vector<Candidate> candidates;
    int added = 0;  // s

    std::vector<Point> centers() const;
};

struct GraspPose {
    Point p;  // root frame, integral pixel coordinates
    double theta_deg = 0.0;
};

struct PoseEstimate {
    GraspPose pose;
    Point centroid;  // unrounded
    bool low_confidence = false;
};

PoseEstimate estimate_pose(const CandidateSet& candidates, int image_width, int image_height);

struct DepthDiagnostics {
    GraspPose unrefined;
    double reference_depth_mm = 0.0;
    double refined_depth_mm = 0.0;
    double clearance_px = 0.0;  // r(z_p)
    double max_radius_px = 0.0;
    bool refined = false;
};

struct GraspResult {
    GraspPose pose;
    Point centroid;
    CandidateSet candidate_set;
    bool early_stopped = false;
    int grp_queries_used = 0;    // budget units (iterations), at most K + m
    int grp_requests_sent = 0;   // including parse retries
    int discarded_iterations = 0;
    bool orientation_refined = false;
    bool low_confidence_orientation = false;
    std::optional<RectMask> crop_window;
    std::optional<std::string> scene_context;
    std::optional<DepthDiagnostics> depth;
    std::vector<std::string> notes;
    OracleTranscript transcript;
};

/// Error raised mid-prediction; carries the transcript gathered so far.
class PredictionError : public Error {
public:
    PredictionError(ErrorKind kind, const std::string& what, OracleTranscript partial)
        : Error(kind, what), partial_(std::move(partial)) {}
    const OracleTranscript& partial_transcript() const { return partial_; }

private:
    OracleTranscript partial_;
};

/// Candidate generation with early stopping, IoU augmentation and optional
/// orientation refinement. `context` may be null (SCP ablation).
GraspResult run_candidate_loop(const RgbImage& image, Oracle& oracle, const PipelineConfig& config,
                               const SceneContext* context = nullptr, OracleTranscript transcript = {});

/// Full prediction: SCP, candidate loop, then depth refinement of p when a
/// registered depth map is supplied.
GraspResult predict_grasp(const RgbImage& image, const DepthMap* depth, Oracle& oracle,
                          const PipelineConfig& config);

/// Canonical JSON document; excludes timing so replays compare byte-equal.
nlohmann::json result_to_json(const GraspResult& result, const PipelineConfig& config);
std::string transcript_digest(const OracleTranscript& transcript);

}  // namespace oracle_grasp
