#pragma once

#include <optional>
#include <span>

namespace oracle_grasp {

/// Sub-pixel image coordinate. Integer values sit on pixel centers, so the
/// pixel (i, j) covers [i - 0.5, i + 0.5) x [j - 0.5, j + 0.5).
struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

Point operator+(Point a, Point b);
Point operator-(Point a, Point b);
Point operator*(Point a, double s);
double norm(Point v);
double distance(Point a, Point b);

/// Axis-aligned pixel rectangle covering the half-open ranges
/// [x0, x0 + width) and [y0, y0 + height).
struct RectMask {
    int x0 = 0;
    int y0 = 0;
    int width = 1;
    int height = 1;

    /// Throws Error(kInvalidArgument) unless width and height are >= 1.
    static RectMask make(int x0, int y0, int width, int height);

    int x1() const { return x0 + width; }
    int y1() const { return y0 + height; }
    long long area() const { return static_cast<long long>(width) * height; }
    bool contains(int px, int py) const { return px >= x0 && px < x1() && py >= y0 && py < y1(); }
    bool contains(const RectMask& other) const;
    /// Center in pixel-index coordinates: the mean of the covered pixel indices.
    Point center() const;

    friend bool operator==(const RectMask&, const RectMask&) = default;
};

std::optional<RectMask> rect_intersection(const RectMask& a, const RectMask& b);
double rect_iou(const RectMask& a, const RectMask& b);

Point centroid(std::span<const Point> points);

/// Largest Euclidean distance from any point to `center`.
double max_spread(std::span<const Point> points, Point center);

struct PrincipalAxis {
    Point direction{1.0, 0.0};  // unit length, sign unspecified
    double lambda1 = 0.0;       // larger eigenvalue
    double lambda2 = 0.0;
    double anisotropy = 1.0;    // lambda1 / (lambda2 + eps); 1 when isotropic
    bool isotropic = true;
};

/// Principal axis of the population covariance of `points` (divide by n).
/// Isotropic sets (eigenvalues equal within relative 1e-6) yield direction
/// (1, 0) and anisotropy 1. Requires at least two points.
PrincipalAxis principal_axis(std::span<const Point> points);

/// atan2 angle of `v` in degrees, folded into [0, 180).
double angle_from_vector(Point v);

/// Folds any angle in degrees into [0, 180).
double normalize_angle_mod180(double degrees);

/// Folds any angle in degrees into (-90, 90].
double signed_angle_mod180(double degrees);

/// Distance between two gripper orientations on the mod-180 circle, in [0, 90].
double angular_distance_mod180(double a, double b);

}  // namespace oracle_grasp
