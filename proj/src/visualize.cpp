#include "oracle_grasp/visualize.hpp"

#include <cmath>
#include <numbers>
#include <opencv2/imgproc.hpp>

namespace oracle_grasp {

namespace {
const cv::Scalar kRed(255, 0, 0);
const cv::Scalar kGreen(0, 200, 0);
const cv::Scalar kBlue(0, 0, 255);

cv::Point to_cv(Point p) { return {static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))}; }
}  // namespace

RgbImage render_grasp_overlay(const RgbImage& image, const GraspResult& result) {
    RgbImage out = image.clone();
    RgbImage tint = image.clone();
    for (const Candidate& c : result.candidate_set.candidates) {
        if (c.stage != Stage::kFull || c.augmented) continue;
        cv::rectangle(tint, cv::Rect(c.mask.x0, c.mask.y0, c.mask.width, c.mask.height), kRed, cv::FILLED);
    }
    cv::addWeighted(tint, 0.25, out, 0.75, 0.0, out);
    for (const Candidate& c : result.candidate_set.candidates) cv::circle(out, to_cv(c.center), 2, kRed, cv::FILLED);

    const Point p = result.pose.p;
    if (result.depth) {
        cv::circle(out, to_cv(result.depth->unrefined.p), 4, kGreen, cv::FILLED);
        if (result.depth->clearance_px > 0.0) {
            cv::circle(out, to_cv(result.depth->unrefined.p), static_cast<int>(std::lround(result.depth->clearance_px)),
                       kGreen, 1);
        }
    }
    const double half = std::max(10.0, std::min(image.cols, image.rows) * 0.08);
    const double rad = result.pose.theta_deg * std::numbers::pi / 180.0;
    const Point d{std::cos(rad) * half, std::sin(rad) * half};
    cv::line(out, to_cv(p - d), to_cv(p + d), kBlue, 2);
    cv::circle(out, to_cv(p), 4, kBlue, cv::FILLED);
    return out;
}

}  // namespace oracle_grasp
