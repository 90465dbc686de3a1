#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "oracle_grasp/geometry.hpp"

namespace oracle_grasp {

/// Per-pixel depth in millimeters. 0 marks an invalid reading, as does the
/// saturated value 65535.
class DepthMap {
public:
    DepthMap() = default;
    DepthMap(int width, int height, std::vector<std::uint16_t> values_mm);
    static DepthMap constant(int width, int height, std::uint16_t value_mm);

    int width() const { return width_; }
    int height() const { return height_; }
    std::uint16_t at(int x, int y) const { return values_[static_cast<size_t>(y) * width_ + x]; }
    bool valid(int x, int y) const {
        const std::uint16_t v = at(x, y);
        return v != 0 && v != 65535;
    }
    void set(int x, int y, std::uint16_t value_mm) { values_[static_cast<size_t>(y) * width_ + x] = value_mm; }
    bool contains(Point p) const;
    const std::vector<std::uint16_t>& values() const { return values_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint16_t> values_;
};

struct CameraIntrinsics {
    double focal_length_px = 0.0;
    static CameraIntrinsics make(double focal_length_px);
};

struct GripperSpec {
    double clearance_radius_m = 0.0;
    static GripperSpec make(double clearance_radius_m);
};

/// Gripper clearance projected into pixels at depth z: f * r_ee / z.
double clearance_radius_px(double focal_length_px, double clearance_radius_m, double depth_m);

struct DepthSample {
    std::uint16_t depth_mm = 0;
    int x = 0;
    int y = 0;

    friend bool operator==(const DepthSample&, const DepthSample&) = default;
};

/// Minimum valid depth among pixels whose centers lie within `radius` of
/// `center`. Ties go to the pixel nearest the center, then row-major order.
std::optional<DepthSample> min_depth_in_disc(const DepthMap& depth, Point center, double radius);

struct RefinedGrasp {
    Point position;
    double depth_mm = 0.0;
    bool refined = false;  // false when no disc held a valid pixel
    double reference_depth_mm = 0.0;  // z_p
    double max_radius_px = 0.0;       // radius of the widest disc, r(z_p / w)
};

/// Relocates `p` to the nearest surface among w clearance discs sampled at
/// depths (j / w) * z_p, j = 1..w. If depth at p is invalid, z_p falls back to
/// the largest valid depth within 5 px.
RefinedGrasp refine_grasp(const DepthMap& depth, Point p, const CameraIntrinsics& intrinsics,
                          const GripperSpec& gripper, int samples);

}  // namespace oracle_grasp
