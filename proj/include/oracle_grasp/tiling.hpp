#pragma once

#include <opencv2/core.hpp>
#include <string>
#include <variant>
#include <vector>

#include "oracle_grasp/geometry.hpp"

namespace oracle_grasp {

/// 8-bit, 3-channel image in RGB channel order (CV_8UC3).
using RgbImage = cv::Mat;

/// A u x v tiling of a W x H image. Cells are indexed row-major.
struct GridSpec {
    int columns = 3;
    int rows = 3;
    int image_width = 0;
    int image_height = 0;

    /// Validates 1 <= columns <= width and 1 <= rows <= height.
    static GridSpec make(int columns, int rows, int image_width, int image_height);

    int cell_count() const { return columns * rows; }
    /// True when both dimensions lie in the coarse-to-fine range {3..9}.
    bool in_default_range() const;

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// x coordinate of the i-th vertical boundary, i in [0, columns].
int column_boundary(const GridSpec& grid, int i);
/// y coordinate of the j-th horizontal boundary, j in [0, rows].
int row_boundary(const GridSpec& grid, int j);

/// All cells, row-major. Boundaries are round(i * W / u), so the cells
/// partition the image exactly and differ from W/u by less than one pixel.
std::vector<RectMask> tile(const GridSpec& grid);

RectMask cell_mask(const GridSpec& grid, int linear_index);

/// Linear index of the cell containing pixel (px, py); clamps to the image.
int cell_index_at(const GridSpec& grid, int px, int py);

struct OverlayStyle {
    cv::Vec3b color{255, 0, 0};  // RGB
    int thickness = 2;
    bool labels = true;
    double font_scale = 0.35;
};

struct OverlayResult {
    RgbImage image;
    std::vector<std::string> warnings;
};

/// Draws the interior grid lines and a "<index> (<col>,<row>)" label in every
/// cell large enough to hold it. The input image is left untouched.
OverlayResult render_grid_overlay(const RgbImage& image, const GridSpec& grid,
                                  const OverlayStyle& style);

struct CropWindow {
    RectMask rect;  // in the parent frame
    int parent_width = 0;
    int parent_height = 0;
};

/// Bounding box of the union of `masks`, grown on every side by
/// margin_frac times the box diagonal and clamped to the parent image.
CropWindow crop_window_from_masks(std::span<const RectMask> masks, int image_width,
                                  int image_height, double margin_frac);

struct CropStep {
    int offset_x = 0;
    int offset_y = 0;
    int width = 0;
    int height = 0;
};

/// Rotation of a src_width x src_height image by angle_deg about its center
/// onto an enlarged dst canvas. Positive angles increase atan2 angles
/// measured in pixel coordinates.
struct RotationStep {
    double angle_deg = 0.0;
    int src_width = 0;
    int src_height = 0;
    int dst_width = 0;
    int dst_height = 0;
};

using FrameStep = std::variant<CropStep, RotationStep>;

/// Chain of steps mapping the root image frame onto a derived frame.
/// An empty chain is the identity.
class FrameTransform {
public:
    FrameTransform() = default;
    FrameTransform(int root_width, int root_height);

    /// Returns a new transform with `step` applied after this one.
    FrameTransform then(const FrameStep& step) const;

    Point forward(Point root_point) const;  // root -> derived
    Point inverse(Point frame_point) const;  // derived -> root

    bool is_identity() const { return steps_.empty(); }
    const std::vector<FrameStep>& steps() const { return steps_; }
    int width() const { return width_; }
    int height() const { return height_; }
    int root_width() const { return root_width_; }
    int root_height() const { return root_height_; }
    /// True when the chain contains a rotation step.
    bool rotated() const;

private:
    std::vector<FrameStep> steps_;
    int root_width_ = 0;
    int root_height_ = 0;
    int width_ = 0;
    int height_ = 0;
};

/// Maps a point in `t`'s derived frame back into the root frame.
Point to_original_frame(Point p, const FrameTransform& t);

struct RotatedImage {
    RgbImage image;
    RotationStep step;
};

/// Rotates about the image center onto a canvas large enough to keep every
/// source pixel; uncovered canvas is filled mid-gray. |angle_deg| <= 180.
RotatedImage rotate_image(const RgbImage& image, double angle_deg);

/// Deep copy of the region `rect`, which must lie inside the image.
RgbImage crop_image(const RgbImage& image, const RectMask& rect);

}  // namespace oracle_grasp
