#include "oracle_grasp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "oracle_grasp/io.hpp"

namespace oracle_grasp {

namespace {

Point clamp_to_image(Point p, int width, int height) {
    return {std::clamp(p.x, 0.0, static_cast<double>(width - 1)),
            std::clamp(p.y, 0.0, static_cast<double>(height - 1))};
}

// Mutable state of one prediction. Queries are issued strictly in sequence.
class CandidateLoop {
public:
    CandidateLoop(const RgbImage& image, Oracle& oracle, const PipelineConfig& config, const SceneContext* context,
                  OracleTranscript transcript)
        : image_(image), oracle_(oracle), config_(config), context_(context) {
        result_.transcript = std::move(transcript);
        if (config.grid_schedule.empty()) {
            const int needed = std::max(config.iterations, config.stop_window + config.effective_crop_iterations()) +
                               config.stop_window;
            schedule_ = default_grid_schedule(std::min(needed, 49));
        } else {
            schedule_ = config.grid_schedule;
        }
    }

    GraspResult run() {
        const int width = image_.cols;
        const int height = image_.rows;
        const double diagonal = std::hypot(static_cast<double>(width), static_cast<double>(height));
        const FrameTransform root(width, height);
        const int m = config_.stop_window;
        const int crop_iters = config_.effective_crop_iterations();

        std::vector<Candidate> full;
        std::vector<std::optional<Candidate>> full_iterations;
        std::vector<Candidate> cropped;
        std::optional<std::pair<RgbImage, FrameTransform>> crop_frame;

        while (result_.grp_queries_used < config_.iterations) {
            auto c = iterate(image_, root, Stage::kFull);
            full_iterations.push_back(c);
            if (c) full.push_back(*c);

            const int done = static_cast<int>(full_iterations.size());
            const bool check_now = !crop_frame && (done == m || (config_.continuous_early_stop && done > m));
            if (!check_now) continue;

            std::vector<Candidate> window;
            for (int i = done - m; i < done; ++i) {
                if (full_iterations[static_cast<size_t>(i)]) window.push_back(*full_iterations[static_cast<size_t>(i)]);
            }
            if (window.empty() || !early_stop_check(centers_of(window), config_.stop_factor, diagonal)) continue;

            std::vector<RectMask> masks;
            for (const Candidate& w : window) masks.push_back(w.mask);
            const CropWindow crop = crop_window_from_masks(masks, width, height, config_.crop_margin_frac);
            result_.crop_window = crop.rect;
            crop_frame.emplace(crop_image(image_, crop.rect),
                               root.then(CropStep{crop.rect.x0, crop.rect.y0, crop.rect.width, crop.rect.height}));
            for (int k = 0; k < crop_iters; ++k) {
                if (auto cc = iterate(crop_frame->first, crop_frame->second, Stage::kCrop)) cropped.push_back(*cc);
            }
            if (!cropped.empty() && early_stop_check(centers_of(cropped), config_.stop_factor, diagonal)) {
                result_.early_stopped = true;
                break;
            }
            result_.notes.push_back("crop-stage centers failed the stopping test; continuing on the full image");
        }

        append_with_intersections(full);
        append_with_intersections(cropped);

        if (!result_.early_stopped) {
            refine_orientation(crop_frame ? crop_frame->first : image_, crop_frame ? crop_frame->second : root);
        } else if (config_.use_orientation_refinement) {
            result_.notes.push_back("orientation refinement skipped: early stop converged");
        }

        if (result_.candidate_set.candidates.empty()) {
            throw PredictionError(ErrorKind::kPipeline, "no candidates", std::move(result_.transcript));
        }
        const PoseEstimate estimate = estimate_pose(result_.candidate_set, width, height);
        result_.pose = estimate.pose;
        result_.centroid = estimate.centroid;
        result_.low_confidence_orientation = estimate.low_confidence;
        return std::move(result_);
    }

private:
    static std::vector<Point> centers_of(const std::vector<Candidate>& cs) {
        std::vector<Point> out;
        out.reserve(cs.size());
        for (const Candidate& c : cs) out.push_back(c.center);
        return out;
    }

    GridSpec next_grid(int width, int height) {
        const auto [u, v] = schedule_[static_cast<size_t>(next_grid_++) % schedule_.size()];
        return GridSpec::make(std::min(u, width), std::min(v, height), width, height);
    }

    // One budgeted GRP iteration. Parse failures are retried; once retries run
    // out the iteration is discarded but still counts against the budget.
    std::optional<Candidate> iterate(const RgbImage& frame_image, const FrameTransform& frame, Stage stage) {
        const GridSpec grid = next_grid(frame_image.cols, frame_image.rows);
        ++result_.grp_queries_used;

        RgbImage shown = frame_image;
        if (config_.overlay == OverlayMode::kGrid) {
            OverlayResult overlay = render_grid_overlay(frame_image, grid, config_.overlay_style);
            shown = std::move(overlay.image);
            for (std::string& w : overlay.warnings) result_.notes.push_back(std::move(w));
        }

        for (int attempt = 0; attempt <= config_.max_parse_retries; ++attempt) {
            ++result_.grp_requests_sent;
            try {
                const GraspRegionChoice choice = query_grasp_region(oracle_, shown, grid, context_,
                                                                    config_.use_explanation, frame, result_.transcript);
                Candidate c;
                c.mask = cell_mask(grid, choice.cell_index);
                c.frame = frame;
                c.stage = stage;
                c.center = clamp_to_image(frame.inverse(c.mask.center()), image_.cols, image_.rows);
                return c;
            } catch (const OracleError& e) {
                if (!e.retryable()) throw PredictionError(e.kind(), e.what(), std::move(result_.transcript));
            } catch (const Error& e) {
                throw PredictionError(e.kind(), e.what(), std::move(result_.transcript));
            }
        }
        ++result_.discarded_iterations;
        result_.notes.push_back("iteration " + std::to_string(result_.grp_queries_used) +
                                " discarded after unparseable replies");
        return std::nullopt;
    }

    void append_with_intersections(const std::vector<Candidate>& group) {
        if (group.empty()) return;
        std::vector<RectMask> masks;
        for (const Candidate& c : group) masks.push_back(c.mask);
        const AugmentResult aug = augment_intersections(masks, config_.iou_threshold);
        auto& out = result_.candidate_set;
        for (const Candidate& c : group) out.candidates.push_back(c);
        for (size_t i = group.size(); i < aug.masks.size(); ++i) {
            Candidate c;
            c.mask = aug.masks[i];
            c.frame = group.front().frame;
            c.stage = group.front().stage;
            c.center = clamp_to_image(c.frame.inverse(c.mask.center()), image_.cols, image_.rows);
            c.augmented = true;
            out.candidates.push_back(std::move(c));
        }
        out.added += aug.added;
    }

    void refine_orientation(const RgbImage& base, const FrameTransform& base_frame) {
        if (!config_.use_orientation_refinement) return;
        const std::vector<Point> centers = result_.candidate_set.centers();
        if (centers.size() < 2) {
            result_.notes.push_back("orientation refinement skipped: fewer than two centers");
            return;
        }
        const PrincipalAxis axis = principal_axis(centers);
        if (axis.isotropic || axis.anisotropy < config_.anisotropy_min) {
            result_.notes.push_back("orientation refinement skipped: centers not elongated enough");
            return;
        }
        const double alpha = signed_angle_mod180(angle_from_vector(axis.direction));
        if (std::abs(alpha) <= config_.alpha_min_deg) {
            result_.notes.push_back("orientation refinement skipped: axis within alpha_min");
            return;
        }
        const RotatedImage rotated = rotate_image(base, -alpha);
        const FrameTransform frame = base_frame.then(rotated.step);
        std::vector<Candidate> extra;
        for (int k = 0; k < config_.stop_window; ++k) {
            if (auto c = iterate(rotated.image, frame, Stage::kRotated)) extra.push_back(*c);
        }
        for (Candidate& c : extra) result_.candidate_set.candidates.push_back(std::move(c));
        result_.orientation_refined = true;
    }

    const RgbImage& image_;
    Oracle& oracle_;
    const PipelineConfig& config_;
    const SceneContext* context_;
    std::vector<std::pair<int, int>> schedule_;
    int next_grid_ = 0;
    GraspResult result_;
};

nlohmann::json point_json(Point p) { return {{"x", p.x}, {"y", p.y}}; }

nlohmann::json mask_json(const RectMask& m) {
    return {{"x0", m.x0}, {"y0", m.y0}, {"width", m.width}, {"height", m.height}};
}

nlohmann::json frame_json(const FrameTransform& t) {
    nlohmann::json steps = nlohmann::json::array();
    for (const FrameStep& step : t.steps()) {
        if (const auto* crop = std::get_if<CropStep>(&step)) {
            steps.push_back({{"crop", {{"offset_x", crop->offset_x}, {"offset_y", crop->offset_y},
                                       {"width", crop->width}, {"height", crop->height}}}});
        } else {
            const auto& rot = std::get<RotationStep>(step);
            steps.push_back({{"rotate", {{"angle_deg", rot.angle_deg}, {"width", rot.dst_width},
                                         {"height", rot.dst_height}}}});
        }
    }
    return steps;
}

}  // namespace

void PipelineConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, "invalid config: " + what); };
    if (stop_window < 1 || stop_window >= iterations) fail("require 1 <= m < K");
    if (crop_iterations < 0 || crop_iterations > iterations) fail("crop_iterations must lie in [0, K]");
    if (!(stop_factor >= 0.0 && stop_factor < 1.0)) fail("rho must lie in [0, 1)");
    if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) fail("gamma must lie in [0, 1]");
    if (alpha_min_deg < 0.0) fail("alpha_min must be non-negative");
    if (crop_margin_frac < 0.0) fail("crop_margin_frac must be non-negative");
    if (max_parse_retries < 0) fail("max_parse_retries must be non-negative");
    if (depth_samples < 1) fail("depth samples w must be at least 1");
    if (overlay_style.thickness < 0) fail("overlay thickness must be non-negative");
    if (!grid_schedule.empty()) {
        const std::set<std::pair<int, int>> distinct(grid_schedule.begin(), grid_schedule.end());
        if (static_cast<int>(distinct.size()) < iterations) fail("grid_schedule needs at least K distinct entries");
        for (const auto& [u, v] : grid_schedule) {
            if (u < 1 || v < 1) fail("grid dimensions must be positive");
        }
    }
}

nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json schedule = nlohmann::json::array();
    for (const auto& [u, v] : c.grid_schedule) schedule.push_back({u, v});
    return {
        {"iterations", c.iterations},
        {"stop_window", c.stop_window},
        {"crop_iterations", c.crop_iterations},
        {"iou_threshold", c.iou_threshold},
        {"stop_factor", c.stop_factor},
        {"alpha_min_deg", c.alpha_min_deg},
        {"anisotropy_min", c.anisotropy_min},
        {"grid_schedule", schedule},
        {"crop_margin_frac", c.crop_margin_frac},
        {"max_parse_retries", c.max_parse_retries},
        {"continuous_early_stop", c.continuous_early_stop},
        {"ablation",
         {{"use_scp", c.use_scp},
          {"use_orientation_refinement", c.use_orientation_refinement},
          {"use_explanation", c.use_explanation},
          {"use_depth_refinement", c.use_depth_refinement}}},
        {"overlay",
         {{"mode", c.overlay == OverlayMode::kGrid ? "grid" : "none"},
          {"color", {c.overlay_style.color[0], c.overlay_style.color[1], c.overlay_style.color[2]}},
          {"thickness", c.overlay_style.thickness},
          {"labels", c.overlay_style.labels},
          {"font_scale", c.overlay_style.font_scale}}},
        {"depth",
         {{"samples", c.depth_samples},
          {"focal_length_px", c.focal_length_px},
          {"clearance_radius_m", c.clearance_radius_m}}},
    };
}

PipelineConfig config_from_json(const nlohmann::json& doc, PipelineConfig c) {
    const nlohmann::json defaults = config_to_json(c);
    // Reject keys the canonical form does not know about.
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!defaults.contains(it.key())) throw Error(ErrorKind::kConfig, "unknown config key '" + it.key() + "'");
        if (it->is_object()) {
            for (auto jt = it->begin(); jt != it->end(); ++jt) {
                if (!defaults[it.key()].contains(jt.key())) {
                    throw Error(ErrorKind::kConfig, "unknown config key '" + it.key() + "." + jt.key() + "'");
                }
            }
        }
    }
    try {
        nlohmann::json merged = defaults;
        merged.merge_patch(doc);
        c.iterations = merged.at("iterations").get<int>();
        c.stop_window = merged.at("stop_window").get<int>();
        c.crop_iterations = merged.at("crop_iterations").get<int>();
        c.iou_threshold = merged.at("iou_threshold").get<double>();
        c.stop_factor = merged.at("stop_factor").get<double>();
        c.alpha_min_deg = merged.at("alpha_min_deg").get<double>();
        c.anisotropy_min = merged.at("anisotropy_min").get<double>();
        c.grid_schedule.clear();
        for (const auto& pair : merged.at("grid_schedule")) {
            c.grid_schedule.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        }
        c.crop_margin_frac = merged.at("crop_margin_frac").get<double>();
        c.max_parse_retries = merged.at("max_parse_retries").get<int>();
        c.continuous_early_stop = merged.at("continuous_early_stop").get<bool>();
        const auto& ab = merged.at("ablation");
        c.use_scp = ab.at("use_scp").get<bool>();
        c.use_orientation_refinement = ab.at("use_orientation_refinement").get<bool>();
        c.use_explanation = ab.at("use_explanation").get<bool>();
        c.use_depth_refinement = ab.at("use_depth_refinement").get<bool>();
        const auto& ov = merged.at("overlay");
        const std::string mode = ov.at("mode").get<std::string>();
        if (mode != "grid" && mode != "none") throw Error(ErrorKind::kConfig, "overlay.mode must be 'grid' or 'none'");
        c.overlay = mode == "grid" ? OverlayMode::kGrid : OverlayMode::kNone;
        const auto& color = ov.at("color");
        for (int i = 0; i < 3; ++i) c.overlay_style.color[i] = static_cast<uchar>(color.at(i).get<int>());
        c.overlay_style.thickness = ov.at("thickness").get<int>();
        c.overlay_style.labels = ov.at("labels").get<bool>();
        c.overlay_style.font_scale = ov.at("font_scale").get<double>();
        const auto& depth = merged.at("depth");
        c.depth_samples = depth.at("samples").get<int>();
        c.focal_length_px = depth.at("focal_length_px").get<double>();
        c.clearance_radius_m = depth.at("clearance_radius_m").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kConfig, std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string config_digest(const PipelineConfig& config) { return sha256_hex(config_to_json(config).dump()); }

std::vector<std::pair<int, int>> default_grid_schedule(int count) {
    if (count < 0) throw Error(ErrorKind::kConfig, "grid schedule length must be non-negative");
    std::vector<std::pair<int, int>> out;
    for (int n = 3; n <= 9 && static_cast<int>(out.size()) < count; ++n) out.emplace_back(n, n);
    for (int u = 3; u <= 9 && static_cast<int>(out.size()) < count; ++u) {
        for (int v = 3; v <= 9 && static_cast<int>(out.size()) < count; ++v) {
            if (u != v) out.emplace_back(u, v);
        }
    }
    if (static_cast<int>(out.size()) < count) {
        throw Error(ErrorKind::kConfig, "only 49 distinct grids exist in {3..9}^2, requested " + std::to_string(count));
    }
    return out;
}

AugmentResult augment_intersections(std::span<const RectMask> masks, double gamma) {
    AugmentResult out;
    out.masks.assign(masks.begin(), masks.end());
    for (size_t j = 0; j < masks.size(); ++j) {
        for (size_t k = j + 1; k < masks.size(); ++k) {
            if (rect_iou(masks[j], masks[k]) > gamma) {
                out.masks.push_back(*rect_intersection(masks[j], masks[k]));
                ++out.added;
            }
        }
    }
    return out;
}

bool early_stop_check(std::span<const Point> centers, double rho, double diagonal) {
    if (centers.empty()) throw Error(ErrorKind::kInvalidArgument, "empty point set");
    if (!(diagonal > 0.0)) throw Error(ErrorKind::kInvalidArgument, "image diagonal must be positive");
    return max_spread(centers, centroid(centers)) < rho * diagonal;
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::kFull: return "full";
        case Stage::kCrop: return "crop";
        default: return "rotated";
    }
}

std::vector<Point> CandidateSet::centers() const {
    std::vector<Point> out;
    out.reserve(candidates.size());
    for (const Candidate& c : candidates) out.push_back(c.center);
    return out;
}

PoseEstimate estimate_pose(const CandidateSet& candidates, int image_width, int image_height) {
    const std::vector<Point> centers = candidates.centers();
    if (centers.empty()) throw Error(ErrorKind::kInvalidArgument, "empty candidate set");
    PoseEstimate est;
    est.centroid = centroid(centers);
    const Point snapped{std::floor(est.centroid.x + 0.5), std::floor(est.centroid.y + 0.5)};
    est.pose.p = clamp_to_image(snapped, image_width, image_height);
    est.low_confidence = true;
    if (centers.size() >= 2) {
        const PrincipalAxis axis = principal_axis(centers);
        if (!axis.isotropic && axis.anisotropy > 1.0 + 1e-6) {
            est.pose.theta_deg = angle_from_vector(axis.direction);
            est.low_confidence = false;
        }
    }
    return est;
}

GraspResult run_candidate_loop(const RgbImage& image, Oracle& oracle, const PipelineConfig& config,
                               const SceneContext* context, OracleTranscript transcript) {
    config.validate();
    if (image.empty()) throw Error(ErrorKind::kInvalidArgument, "empty image");
    return CandidateLoop(image, oracle, config, context, std::move(transcript)).run();
}

GraspResult predict_grasp(const RgbImage& image, const DepthMap* depth, Oracle& oracle, const PipelineConfig& config) {
    config.validate();
    if (image.empty()) throw Error(ErrorKind::kInvalidArgument, "empty image");
    const bool refine = depth && config.use_depth_refinement;
    if (depth && (depth->width() != image.cols || depth->height() != image.rows)) {
        throw Error(ErrorKind::kInvalidArgument, "depth map size does not match the image");
    }
    if (refine && (config.focal_length_px <= 0.0 || config.clearance_radius_m <= 0.0)) {
        throw Error(ErrorKind::kConfig,
                    "depth refinement needs depth.focal_length_px and depth.clearance_radius_m in the config");
    }

    OracleTranscript transcript;
    std::optional<SceneContext> context;
    if (config.use_scp) {
        try {
            context = query_scene_context(oracle, image, transcript);
        } catch (const Error& e) {
            throw PredictionError(e.kind(), e.what(), std::move(transcript));
        }
    }
    GraspResult result = run_candidate_loop(image, oracle, config, context ? &*context : nullptr, std::move(transcript));
    if (context) result.scene_context = context->text;

    if (refine) {
        const auto intrinsics = CameraIntrinsics::make(config.focal_length_px);
        const auto gripper = GripperSpec::make(config.clearance_radius_m);
        const RefinedGrasp r = refine_grasp(*depth, result.pose.p, intrinsics, gripper, config.depth_samples);
        DepthDiagnostics diag;
        diag.unrefined = result.pose;
        diag.reference_depth_mm = r.reference_depth_mm;
        diag.refined_depth_mm = r.depth_mm;
        diag.max_radius_px = r.max_radius_px;
        diag.refined = r.refined;
        if (r.reference_depth_mm > 0.0) {
            diag.clearance_px = clearance_radius_px(intrinsics.focal_length_px, gripper.clearance_radius_m,
                                                    r.reference_depth_mm / 1000.0);
        } else {
            result.notes.push_back("depth refinement skipped: no valid depth near the grasp point");
        }
        result.pose.p = r.position;
        result.depth = diag;
    }
    return result;
}

std::string transcript_digest(const OracleTranscript& transcript) {
    nlohmann::json canonical = nlohmann::json::array();
    for (const TranscriptEntry& e : transcript.entries) {
        nlohmann::json j = transcript_entry_to_json(e);
        j.erase("latency_ms");
        j.erase("timestamp");
        canonical.push_back(std::move(j));
    }
    return sha256_hex(canonical.dump());
}

nlohmann::json result_to_json(const GraspResult& r, const PipelineConfig& config) {
    nlohmann::json candidates = nlohmann::json::array();
    for (const Candidate& c : r.candidate_set.candidates) {
        candidates.push_back({{"stage", to_string(c.stage)},
                              {"mask", mask_json(c.mask)},
                              {"frame", frame_json(c.frame)},
                              {"center", point_json(c.center)},
                              {"augmented", c.augmented}});
    }
    nlohmann::json doc = {
        {"pose", {{"x", r.pose.p.x}, {"y", r.pose.p.y}, {"theta_deg", r.pose.theta_deg}}},
        {"centroid", point_json(r.centroid)},
        {"candidates", candidates},
        {"intersections_added", r.candidate_set.added},
        {"early_stopped", r.early_stopped},
        {"grp_queries_used", r.grp_queries_used},
        {"grp_requests_sent", r.grp_requests_sent},
        {"discarded_iterations", r.discarded_iterations},
        {"orientation_refined", r.orientation_refined},
        {"low_confidence_orientation", r.low_confidence_orientation},
        {"notes", r.notes},
        {"config_digest", config_digest(config)},
        {"transcript", {{"entries", r.transcript.entries.size()}, {"digest", transcript_digest(r.transcript)}}},
    };
    doc["crop_window"] = r.crop_window ? mask_json(*r.crop_window) : nlohmann::json(nullptr);
    doc["scene_context"] = r.scene_context ? nlohmann::json(*r.scene_context) : nlohmann::json(nullptr);
    if (r.depth) {
        doc["depth_refinement"] = {
            {"unrefined", {{"x", r.depth->unrefined.p.x}, {"y", r.depth->unrefined.p.y}}},
            {"reference_depth_mm", r.depth->reference_depth_mm},
            {"refined_depth_mm", r.depth->refined_depth_mm},
            {"clearance_px", r.depth->clearance_px},
            {"max_radius_px", r.depth->max_radius_px},
            {"refined", r.depth->refined},
        };
    } else {
        doc["depth_refinement"] = nullptr;
    }
    return doc;
}

}  // namespace oracle_grasp
