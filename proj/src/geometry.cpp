#include "oracle_grasp/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

namespace {
constexpr double kIsotropyTolerance = 1e-6;
constexpr double kAnisotropyEps = 1e-12;
}  // namespace

Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point operator*(Point a, double s) { return {a.x * s, a.y * s}; }
double norm(Point v) { return std::hypot(v.x, v.y); }
double distance(Point a, Point b) { return norm(a - b); }

RectMask RectMask::make(int x0, int y0, int width, int height) {
    if (width < 1 || height < 1) {
        throw Error(ErrorKind::kInvalidArgument,
                    "rectangle must be at least 1x1, got " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
    return RectMask{x0, y0, width, height};
}

bool RectMask::contains(const RectMask& other) const {
    return other.x0 >= x0 && other.y0 >= y0 && other.x1() <= x1() && other.y1() <= y1();
}

Point RectMask::center() const {
    return {x0 + (width - 1) / 2.0, y0 + (height - 1) / 2.0};
}

std::optional<RectMask> rect_intersection(const RectMask& a, const RectMask& b) {
    const int x0 = std::max(a.x0, b.x0);
    const int y0 = std::max(a.y0, b.y0);
    const int x1 = std::min(a.x1(), b.x1());
    const int y1 = std::min(a.y1(), b.y1());
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    return RectMask{x0, y0, x1 - x0, y1 - y0};
}

double rect_iou(const RectMask& a, const RectMask& b) {
    const auto overlap = rect_intersection(a, b);
    if (!overlap) return 0.0;
    const long long inter = overlap->area();
    return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

Point centroid(std::span<const Point> points) {
    if (points.empty()) throw Error(ErrorKind::kInvalidArgument, "empty point set");
    Point sum;
    for (const Point& p : points) sum = sum + p;
    return sum * (1.0 / static_cast<double>(points.size()));
}

double max_spread(std::span<const Point> points, Point center) {
    if (points.empty()) throw Error(ErrorKind::kInvalidArgument, "empty point set");
    double best = 0.0;
    for (const Point& p : points) best = std::max(best, distance(p, center));
    return best;
}

PrincipalAxis principal_axis(std::span<const Point> points) {
    if (points.size() < 2) throw Error(ErrorKind::kInvalidArgument, "degenerate point set");

    const Point mean = centroid(points);
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const Point& p : points) {
        const Eigen::Vector2d d(p.x - mean.x, p.y - mean.y);
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(points.size());

    // Eigenvalues come back in increasing order.
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(cov);
    PrincipalAxis axis;
    axis.lambda1 = std::max(solver.eigenvalues()(1), 0.0);
    axis.lambda2 = std::max(solver.eigenvalues()(0), 0.0);
    axis.isotropic = axis.lambda1 - axis.lambda2 <= kIsotropyTolerance * axis.lambda1;
    if (axis.isotropic) {
        axis.direction = {1.0, 0.0};
        axis.anisotropy = 1.0;
        return axis;
    }
    const Eigen::Vector2d v = solver.eigenvectors().col(1).normalized();
    axis.direction = {v.x(), v.y()};
    axis.anisotropy = axis.lambda1 / (axis.lambda2 + kAnisotropyEps);
    return axis;
}

double normalize_angle_mod180(double degrees) {
    double a = std::fmod(degrees, 180.0);
    if (a < 0.0) a += 180.0;
    if (a >= 180.0) a = 0.0;
    return a;
}

double signed_angle_mod180(double degrees) {
    const double a = normalize_angle_mod180(degrees);
    return a > 90.0 ? a - 180.0 : a;
}

double angle_from_vector(Point v) {
    if (v.x == 0.0 && v.y == 0.0) {
        throw Error(ErrorKind::kInvalidArgument, "angle of zero vector is undefined");
    }
    return normalize_angle_mod180(std::atan2(v.y, v.x) * 180.0 / std::numbers::pi);
}

double angular_distance_mod180(double a, double b) {
    const double d = normalize_angle_mod180(a - b);
    return std::min(d, 180.0 - d);
}

}  // namespace oracle_grasp
