#include "oracle_grasp/synth.hpp"

#include <cmath>
#include <numbers>
#include <opencv2/imgproc.hpp>
#include <random>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

namespace {

constexpr std::uint16_t kTableMm = 1000;

// Integer-only draws keep scenes identical across standard libraries.
int draw(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

RgbImage table(int width, int height) { return RgbImage(height, width, CV_8UC3, cv::Scalar(200, 190, 170)); }

SynthScene handle_hole(const SynthOptions& o, std::mt19937_64& rng) {
    SynthScene s;
    const double outer = std::min(o.width, o.height) * (0.25 + draw(rng, 0, 10) / 100.0);
    const double inner = outer * 0.6;
    const Point c{o.width / 2.0 + draw(rng, -10, 10), o.height / 2.0 + draw(rng, -10, 10)};

    s.image = table(o.width, o.height);
    const cv::Point cc(static_cast<int>(c.x), static_cast<int>(c.y));
    cv::circle(s.image, cc, static_cast<int>(outer), cv::Scalar(60, 60, 70), cv::FILLED, cv::LINE_8);
    cv::circle(s.image, cc, static_cast<int>(inner), cv::Scalar(200, 190, 170), cv::FILLED, cv::LINE_8);
    s.depth = make_ring_depth(o.width, o.height, c, inner, outer, 400, kTableMm);
    s.hole_center = c;

    const double mid = (inner + outer) / 2.0;
    s.annotation.image_id = "handle-hole";
    s.annotation.bounding_diameter_px = 2.0 * outer;
    // Grasp across the top of the ring; the jaws close along the radial direction.
    s.annotation.grasps.push_back({{std::round(c.x), std::round(c.y - mid)}, 90.0});
    return s;
}

SynthScene bar(const SynthOptions& o, std::mt19937_64& rng) {
    SynthScene s;
    const double length = std::min(o.width, o.height) * (0.6 + draw(rng, 0, 10) / 100.0);
    const double thickness = 12.0 + draw(rng, 0, 6);
    const Point c{o.width / 2.0, o.height / 2.0};
    const double rad = o.angle_deg * std::numbers::pi / 180.0;

    s.image = table(o.width, o.height);
    s.depth = DepthMap::constant(o.width, o.height, kTableMm);
    const Point axis{std::cos(rad), std::sin(rad)};
    for (int y = 0; y < o.height; ++y) {
        for (int x = 0; x < o.width; ++x) {
            const Point d{x - c.x, y - c.y};
            const double along = d.x * axis.x + d.y * axis.y;
            const double across = -d.x * axis.y + d.y * axis.x;
            if (std::abs(along) <= length / 2.0 && std::abs(across) <= thickness / 2.0) {
                s.image.at<cv::Vec3b>(y, x) = {40, 90, 160};
                s.depth.set(x, y, 900);
            }
        }
    }
    s.annotation.image_id = "bar";
    s.annotation.bounding_diameter_px = length;
    s.annotation.grasps.push_back({{std::round(c.x), std::round(c.y)}, o.angle_deg});
    return s;
}

SynthScene blob(const SynthOptions& o, std::mt19937_64& rng) {
    SynthScene s;
    const int a = std::min(o.width, o.height) / 4 + draw(rng, 0, 20);
    const int b = a / 2 + draw(rng, 0, 10);
    const int angle = draw(rng, 0, 179);
    const cv::Point c(o.width / 2 + draw(rng, -15, 15), o.height / 2 + draw(rng, -15, 15));

    s.image = table(o.width, o.height);
    cv::ellipse(s.image, c, cv::Size(a, b), angle, 0, 360, cv::Scalar(150, 60, 60), cv::FILLED, cv::LINE_8);
    s.depth = DepthMap::constant(o.width, o.height, kTableMm);
    for (int y = 0; y < o.height; ++y) {
        for (int x = 0; x < o.width; ++x) {
            if (s.image.at<cv::Vec3b>(y, x) == cv::Vec3b(150, 60, 60)) s.depth.set(x, y, 850);
        }
    }
    s.annotation.image_id = "blob";
    s.annotation.bounding_diameter_px = 2.0 * a;
    s.annotation.grasps.push_back({{static_cast<double>(c.x), static_cast<double>(c.y)}, static_cast<double>(angle)});
    return s;
}

}  // namespace

std::vector<std::string> synth_scene_names() { return {"handle-hole", "bar", "blob"}; }

DepthMap make_ring_depth(int width, int height, Point center, double inner, double outer, std::uint16_t ring_mm,
                         std::uint16_t background_mm) {
    DepthMap depth = DepthMap::constant(width, height, background_mm);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double r = std::hypot(x - center.x, y - center.y);
            if (r >= inner && r <= outer) depth.set(x, y, ring_mm);
        }
    }
    return depth;
}

SynthScene make_synth_scene(const SynthOptions& options) {
    if (options.width < 32 || options.height < 32) throw Error(ErrorKind::kConfig, "synthetic scenes need at least 32x32 px");
    std::mt19937_64 rng(options.seed);
    if (options.scene == "handle-hole") return handle_hole(options, rng);
    if (options.scene == "bar") return bar(options, rng);
    if (options.scene == "blob") return blob(options, rng);
    throw Error(ErrorKind::kConfig, "unknown scene '" + options.scene + "'");
}

}  // namespace oracle_grasp
