#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "oracle_grasp/geometry.hpp"

namespace oracle_grasp {

struct AnnotatedGrasp {
    Point position;
    double theta_deg = 0.0;
};

/// Human grasp annotations for one image.
struct AnnotationSet {
    std::string image_id;
    std::vector<AnnotatedGrasp> grasps;
    double bounding_diameter_px = 0.0;
    std::optional<double> mm_per_px;

    /// Checks: at least one grasp, d > 0, scale > 0 when present.
    void validate() const;
    /// Additionally checks that every annotated position lies inside the image.
    void validate_within(int image_width, int image_height) const;
};

/// Index of the annotated grasp nearest to `pred` (first on ties).
size_t nearest_annotation(Point pred, const AnnotationSet& ann);

/// Distance to the nearest annotated position divided by the bounding-circle diameter.
double position_nrmse(Point pred, const AnnotationSet& ann);

/// Distance to the nearest annotated position in millimeters.
double position_rmse_mm(Point pred, const AnnotationSet& ann);

/// Mod-180 error against the orientation of the nearest annotated position.
double orientation_error(Point pred, double theta_deg, const AnnotationSet& ann);

struct Prediction {
    std::string image_id;
    Point position;
    double theta_deg = 0.0;
    bool depth_refined = false;
};

struct EvalRow {
    std::string image_id;
    double nrmse = 0.0;
    std::optional<double> rmse_mm;
    double orientation_mae = 0.0;
    bool depth_refined = false;
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
    size_t count = 0;
};

MetricSummary summarize(const std::vector<double>& values);

struct EvalFailure {
    std::string image_id;
    std::string error;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    MetricSummary nrmse;
    MetricSummary rmse_mm;
    MetricSummary orientation_mae;
    std::vector<EvalFailure> failures;
    nlohmann::json settings = nlohmann::json::object();  // pipeline toggles in effect
};

/// Per-image metrics for every prediction plus mean and sample std.
/// Throws Error(kInvalidArgument) on an empty batch or unmatched image ids.
EvalReport evaluate_batch(const std::vector<Prediction>& predictions,
                          const std::vector<AnnotationSet>& annotations);

nlohmann::json report_to_json(const EvalReport& report);
/// Aligned-column text rendering, NRMSE shown x10^2.
std::string report_to_table(const EvalReport& report);

}  // namespace oracle_grasp
