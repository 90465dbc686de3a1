#include "oracle_grasp/eval.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

void AnnotationSet::validate() const {
    if (grasps.empty()) throw Error(ErrorKind::kInvalidArgument, image_id + ": no annotated grasps");
    if (!(bounding_diameter_px > 0.0)) {
        throw Error(ErrorKind::kInvalidArgument, image_id + ": bounding diameter must be positive");
    }
    if (mm_per_px && !(*mm_per_px > 0.0)) {
        throw Error(ErrorKind::kInvalidArgument, image_id + ": mm_per_px must be positive");
    }
}

void AnnotationSet::validate_within(int image_width, int image_height) const {
    validate();
    for (const AnnotatedGrasp& g : grasps) {
        if (g.position.x < 0 || g.position.y < 0 || g.position.x > image_width - 1 ||
            g.position.y > image_height - 1) {
            throw Error(ErrorKind::kInvalidArgument, image_id + ": annotated grasp outside the image");
        }
    }
}

size_t nearest_annotation(Point pred, const AnnotationSet& ann) {
    ann.validate();
    size_t best = 0;
    for (size_t i = 1; i < ann.grasps.size(); ++i) {
        if (distance(pred, ann.grasps[i].position) < distance(pred, ann.grasps[best].position)) best = i;
    }
    return best;
}

double position_nrmse(Point pred, const AnnotationSet& ann) {
    return distance(pred, ann.grasps[nearest_annotation(pred, ann)].position) / ann.bounding_diameter_px;
}

double position_rmse_mm(Point pred, const AnnotationSet& ann) {
    if (!ann.mm_per_px) throw Error(ErrorKind::kInvalidArgument, "no metric scale");
    return distance(pred, ann.grasps[nearest_annotation(pred, ann)].position) * *ann.mm_per_px;
}

double orientation_error(Point pred, double theta_deg, const AnnotationSet& ann) {
    return angular_distance_mod180(theta_deg, ann.grasps[nearest_annotation(pred, ann)].theta_deg);
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    s.count = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

EvalReport evaluate_batch(const std::vector<Prediction>& predictions,
                          const std::vector<AnnotationSet>& annotations) {
    if (predictions.empty()) throw Error(ErrorKind::kInvalidArgument, "no predictions to evaluate");
    std::map<std::string, const AnnotationSet*> by_id;
    for (const AnnotationSet& a : annotations) by_id[a.image_id] = &a;

    std::string missing;
    for (const Prediction& p : predictions) {
        if (!by_id.contains(p.image_id)) missing += (missing.empty() ? "" : ", ") + p.image_id;
    }
    if (!missing.empty()) throw Error(ErrorKind::kInvalidArgument, "no annotations for: " + missing);

    EvalReport report;
    std::vector<double> nrmse, rmse, mae;
    for (const Prediction& p : predictions) {
        const AnnotationSet& ann = *by_id.at(p.image_id);
        EvalRow row;
        row.image_id = p.image_id;
        row.nrmse = position_nrmse(p.position, ann);
        if (ann.mm_per_px) row.rmse_mm = position_rmse_mm(p.position, ann);
        row.orientation_mae = orientation_error(p.position, p.theta_deg, ann);
        row.depth_refined = p.depth_refined;
        nrmse.push_back(row.nrmse);
        if (row.rmse_mm) rmse.push_back(*row.rmse_mm);
        mae.push_back(row.orientation_mae);
        report.rows.push_back(std::move(row));
    }
    report.nrmse = summarize(nrmse);
    report.rmse_mm = summarize(rmse);
    report.orientation_mae = summarize(mae);
    return report;
}

namespace {
nlohmann::json summary_json(const MetricSummary& s) {
    return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}
}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const EvalRow& r : report.rows) {
        nlohmann::json row = {{"image", r.image_id},
                              {"nrmse", r.nrmse},
                              {"nrmse_x100", r.nrmse * 100.0},
                              {"orientation_mae_deg", r.orientation_mae},
                              {"depth_refined", r.depth_refined}};
        row["rmse_mm"] = r.rmse_mm ? nlohmann::json(*r.rmse_mm) : nlohmann::json(nullptr);
        rows.push_back(std::move(row));
    }
    nlohmann::json failures = nlohmann::json::array();
    for (const EvalFailure& f : report.failures) failures.push_back({{"image", f.image_id}, {"error", f.error}});

    MetricSummary x100 = report.nrmse;
    x100.mean *= 100.0;
    x100.std *= 100.0;
    return {{"rows", rows},
            {"aggregate",
             {{"nrmse", summary_json(report.nrmse)},
              {"nrmse_x100", summary_json(x100)},
              {"rmse_mm", summary_json(report.rmse_mm)},
              {"orientation_mae_deg", summary_json(report.orientation_mae)}}},
            {"failures", failures},
            {"settings", report.settings}};
}

std::string report_to_table(const EvalReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(24) << "image" << std::right << std::setw(14) << "NRMSE(x10^2)"
        << std::setw(12) << "RMSE(mm)" << std::setw(12) << "MAE(deg)" << std::setw(8) << "GR" << '\n';
    for (const EvalRow& r : report.rows) {
        out << std::left << std::setw(24) << r.image_id << std::right << std::setw(14) << r.nrmse * 100.0;
        if (r.rmse_mm) {
            out << std::setw(12) << *r.rmse_mm;
        } else {
            out << std::setw(12) << "-";
        }
        out << std::setw(12) << r.orientation_mae << std::setw(8) << (r.depth_refined ? "yes" : "no") << '\n';
    }
    auto pm = [](const MetricSummary& s, double scale) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << s.mean * scale << "+-" << s.std * scale;
        return cell.str();
    };
    out << std::left << std::setw(24) << "mean+-std" << std::right << std::setw(14) << pm(report.nrmse, 100.0)
        << std::setw(12) << (report.rmse_mm.count ? pm(report.rmse_mm, 1.0) : "-") << std::setw(12)
        << pm(report.orientation_mae, 1.0) << '\n';
    for (const EvalFailure& f : report.failures) out << "FAILED " << f.image_id << ": " << f.error << '\n';
    return out.str();
}

}  // namespace oracle_grasp
