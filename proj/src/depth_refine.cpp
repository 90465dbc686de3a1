#include "oracle_grasp/depth_refine.hpp"

#include <cmath>
#include <string>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

namespace {
constexpr double kFallbackRadiusPx = 5.0;
}

DepthMap::DepthMap(int width, int height, std::vector<std::uint16_t> values_mm)
    : width_(width), height_(height), values_(std::move(values_mm)) {
    if (width < 1 || height < 1 || values_.size() != static_cast<size_t>(width) * height) {
        throw Error(ErrorKind::kInvalidArgument, "depth map size does not match its dimensions");
    }
}

DepthMap DepthMap::constant(int width, int height, std::uint16_t value_mm) {
    return DepthMap(width, height, std::vector<std::uint16_t>(static_cast<size_t>(width) * height, value_mm));
}

bool DepthMap::contains(Point p) const {
    const double x = std::floor(p.x + 0.5);
    const double y = std::floor(p.y + 0.5);
    return x >= 0 && y >= 0 && x < width_ && y < height_;
}

CameraIntrinsics CameraIntrinsics::make(double focal_length_px) {
    if (!(focal_length_px > 0.0)) throw Error(ErrorKind::kInvalidArgument, "focal length must be positive");
    return {focal_length_px};
}

GripperSpec GripperSpec::make(double clearance_radius_m) {
    if (!(clearance_radius_m > 0.0)) {
        throw Error(ErrorKind::kInvalidArgument, "clearance radius must be positive");
    }
    return {clearance_radius_m};
}

double clearance_radius_px(double focal_length_px, double clearance_radius_m, double depth_m) {
    if (!(depth_m > 0.0)) throw Error(ErrorKind::kInvalidArgument, "invalid depth");
    return focal_length_px * clearance_radius_m / depth_m;
}

std::optional<DepthSample> min_depth_in_disc(const DepthMap& depth, Point center, double radius) {
    const double r2 = radius * radius;
    const int x_lo = std::max(0, static_cast<int>(std::ceil(center.x - radius)));
    const int x_hi = std::min(depth.width() - 1, static_cast<int>(std::floor(center.x + radius)));
    const int y_lo = std::max(0, static_cast<int>(std::ceil(center.y - radius)));
    const int y_hi = std::min(depth.height() - 1, static_cast<int>(std::floor(center.y + radius)));

    std::optional<DepthSample> best;
    double best_d2 = 0.0;
    // Row-major scan; strict comparisons keep the first pixel on exact ties.
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            const double dx = x - center.x;
            const double dy = y - center.y;
            const double d2 = dx * dx + dy * dy;
            if (d2 > r2 || !depth.valid(x, y)) continue;
            const std::uint16_t z = depth.at(x, y);
            if (!best || z < best->depth_mm || (z == best->depth_mm && d2 < best_d2)) {
                best = DepthSample{z, x, y};
                best_d2 = d2;
            }
        }
    }
    return best;
}

RefinedGrasp refine_grasp(const DepthMap& depth, Point p, const CameraIntrinsics& intrinsics,
                          const GripperSpec& gripper, int samples) {
    if (!depth.contains(p)) throw Error(ErrorKind::kInvalidArgument, "grasp point outside the depth map");
    if (samples < 1) throw Error(ErrorKind::kInvalidArgument, "sample count must be at least 1");

    RefinedGrasp out;
    out.position = p;
    const int px = static_cast<int>(std::floor(p.x + 0.5));
    const int py = static_cast<int>(std::floor(p.y + 0.5));
    double z_p = depth.valid(px, py) ? depth.at(px, py) : 0.0;
    if (z_p == 0.0) {
        // Largest valid reading nearby; an overestimate only shrinks the discs.
        const int reach = static_cast<int>(kFallbackRadiusPx);
        for (int y = std::max(0, py - reach); y <= std::min(depth.height() - 1, py + reach); ++y) {
            for (int x = std::max(0, px - reach); x <= std::min(depth.width() - 1, px + reach); ++x) {
                const double dx = x - p.x, dy = y - p.y;
                if (depth.valid(x, y) && dx * dx + dy * dy <= kFallbackRadiusPx * kFallbackRadiusPx) {
                    z_p = std::max(z_p, static_cast<double>(depth.at(x, y)));
                }
            }
        }
    }
    out.reference_depth_mm = z_p;
    out.depth_mm = z_p;
    if (z_p == 0.0) return out;

    std::optional<DepthSample> best;
    for (int j = 1; j <= samples; ++j) {
        const double z_j_m = (static_cast<double>(j) / samples) * z_p / 1000.0;
        const double radius = clearance_radius_px(intrinsics.focal_length_px, gripper.clearance_radius_m, z_j_m);
        out.max_radius_px = std::max(out.max_radius_px, radius);
        const auto found = min_depth_in_disc(depth, p, radius);
        // First j wins ties, so equal minima resolve to the widest disc.
        if (found && (!best || found->depth_mm < best->depth_mm)) best = found;
    }
    if (!best) return out;
    out.position = {static_cast<double>(best->x), static_cast<double>(best->y)};
    out.depth_mm = best->depth_mm;
    out.refined = true;
    return out;
}

}  // namespace oracle_grasp
