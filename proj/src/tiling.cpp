#include "oracle_grasp/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <opencv2/imgproc.hpp>

#include "oracle_grasp/error.hpp"

namespace oracle_grasp {

namespace {

// Exact values at multiples of 90 degrees keep right-angle rotations lossless.
std::pair<double, double> cos_sin_deg(double deg) {
    const double quarter = deg / 90.0;
    if (quarter == std::round(quarter)) {
        switch (((static_cast<long long>(std::round(quarter)) % 4) + 4) % 4) {
            case 0: return {1.0, 0.0};
            case 1: return {0.0, 1.0};
            case 2: return {-1.0, 0.0};
            default: return {0.0, -1.0};
        }
    }
    const double rad = deg * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

int rounded_boundary(int index, int extent, int parts) {
    // round(index * extent / parts) with halves rounded up, in integers.
    return static_cast<int>((2LL * index * extent + parts) / (2LL * parts));
}

Point rotate_forward(const RotationStep& r, Point p) {
    const auto [c, s] = cos_sin_deg(r.angle_deg);
    const double cx = (r.src_width - 1) / 2.0;
    const double cy = (r.src_height - 1) / 2.0;
    const double dx = p.x - cx;
    const double dy = p.y - cy;
    return {c * dx - s * dy + (r.dst_width - 1) / 2.0, s * dx + c * dy + (r.dst_height - 1) / 2.0};
}

Point rotate_inverse(const RotationStep& r, Point p) {
    const auto [c, s] = cos_sin_deg(r.angle_deg);
    const double dx = p.x - (r.dst_width - 1) / 2.0;
    const double dy = p.y - (r.dst_height - 1) / 2.0;
    return {c * dx + s * dy + (r.src_width - 1) / 2.0, -s * dx + c * dy + (r.src_height - 1) / 2.0};
}

}  // namespace

GridSpec GridSpec::make(int columns, int rows, int image_width, int image_height) {
    if (columns < 1 || rows < 1) {
        throw Error(ErrorKind::kInvalidArgument, "grid must have at least one row and column");
    }
    if (columns > image_width || rows > image_height) {
        throw Error(ErrorKind::kInvalidArgument,
                    "grid " + std::to_string(columns) + "x" + std::to_string(rows) +
                        " is finer than the " + std::to_string(image_width) + "x" +
                        std::to_string(image_height) + " image");
    }
    return GridSpec{columns, rows, image_width, image_height};
}

bool GridSpec::in_default_range() const {
    return columns >= 3 && columns <= 9 && rows >= 3 && rows <= 9;
}

int column_boundary(const GridSpec& grid, int i) {
    return rounded_boundary(i, grid.image_width, grid.columns);
}

int row_boundary(const GridSpec& grid, int j) {
    return rounded_boundary(j, grid.image_height, grid.rows);
}

std::vector<RectMask> tile(const GridSpec& grid) {
    std::vector<RectMask> cells;
    cells.reserve(static_cast<size_t>(grid.cell_count()));
    for (int r = 0; r < grid.rows; ++r) {
        const int y0 = row_boundary(grid, r);
        const int y1 = row_boundary(grid, r + 1);
        for (int c = 0; c < grid.columns; ++c) {
            const int x0 = column_boundary(grid, c);
            cells.push_back(RectMask{x0, y0, column_boundary(grid, c + 1) - x0, y1 - y0});
        }
    }
    return cells;
}

RectMask cell_mask(const GridSpec& grid, int linear_index) {
    if (linear_index < 0 || linear_index >= grid.cell_count()) {
        throw Error(ErrorKind::kInvalidArgument, "cell index out of bounds");
    }
    const int c = linear_index % grid.columns;
    const int r = linear_index / grid.columns;
    const int x0 = column_boundary(grid, c);
    const int y0 = row_boundary(grid, r);
    return RectMask{x0, y0, column_boundary(grid, c + 1) - x0, row_boundary(grid, r + 1) - y0};
}

int cell_index_at(const GridSpec& grid, int px, int py) {
    px = std::clamp(px, 0, grid.image_width - 1);
    py = std::clamp(py, 0, grid.image_height - 1);
    int c = 0;
    while (c + 1 < grid.columns && column_boundary(grid, c + 1) <= px) ++c;
    int r = 0;
    while (r + 1 < grid.rows && row_boundary(grid, r + 1) <= py) ++r;
    return r * grid.columns + c;
}

OverlayResult render_grid_overlay(const RgbImage& image, const GridSpec& grid,
                                  const OverlayStyle& style) {
    OverlayResult out{image.clone(), {}};
    cv::Mat& canvas = out.image;
    const int w = canvas.cols;
    const int h = canvas.rows;

    if (style.thickness > 0) {
        const int lead = style.thickness / 2;
        for (int i = 1; i < grid.columns; ++i) {
            const int x0 = std::max(0, column_boundary(grid, i) - lead);
            const int x1 = std::min(w, x0 + style.thickness);
            canvas(cv::Rect(x0, 0, x1 - x0, h)).setTo(style.color);
        }
        for (int j = 1; j < grid.rows; ++j) {
            const int y0 = std::max(0, row_boundary(grid, j) - lead);
            const int y1 = std::min(h, y0 + style.thickness);
            canvas(cv::Rect(0, y0, w, y1 - y0)).setTo(style.color);
        }
    }
    if (!style.labels) return out;

    const int font = cv::FONT_HERSHEY_SIMPLEX;
    const int pad = (style.thickness + 1) / 2 + 1;
    int shortened = 0;
    int omitted = 0;
    for (int idx = 0; idx < grid.cell_count(); ++idx) {
        const RectMask cell = cell_mask(grid, idx);
        // Full label first, then the linear index alone.
        const std::string full = std::to_string(idx) + " (" + std::to_string(idx % grid.columns) + "," +
                                 std::to_string(idx / grid.columns) + ")";
        bool placed = false;
        for (const std::string& label : {full, std::to_string(idx)}) {
            int baseline = 0;
            const cv::Size text = cv::getTextSize(label, font, style.font_scale, 1, &baseline);
            const int box_w = text.width + 2;
            const int box_h = text.height + baseline + 2;
            if (box_w + 2 * pad > cell.width || box_h + 2 * pad > cell.height) continue;
            const cv::Rect box(cell.x0 + pad, cell.y0 + pad, box_w, box_h);
            canvas(box).setTo(cv::Vec3b{255, 255, 255});
            cv::putText(canvas, label, {box.x + 1, box.y + 1 + text.height}, font, style.font_scale,
                        cv::Scalar(style.color[0], style.color[1], style.color[2]), 1, cv::LINE_8);
            if (label != full) ++shortened;
            placed = true;
            break;
        }
        if (!placed) ++omitted;
    }
    if (shortened > 0) {
        out.warnings.push_back("(col,row) omitted from " + std::to_string(shortened) + " narrow cell labels");
    }
    if (omitted > 0) {
        out.warnings.push_back("labels omitted for " + std::to_string(omitted) +
                               " cells smaller than the label glyph");
    }
    return out;
}

CropWindow crop_window_from_masks(std::span<const RectMask> masks, int image_width,
                                  int image_height, double margin_frac) {
    if (masks.empty()) throw Error(ErrorKind::kInvalidArgument, "crop needs at least one mask");
    int x0 = masks.front().x0, y0 = masks.front().y0;
    int x1 = masks.front().x1(), y1 = masks.front().y1();
    for (const RectMask& m : masks) {
        x0 = std::min(x0, m.x0);
        y0 = std::min(y0, m.y0);
        x1 = std::max(x1, m.x1());
        y1 = std::max(y1, m.y1());
    }
    const auto margin = static_cast<int>(
        std::lround(margin_frac * std::hypot(double(x1 - x0), double(y1 - y0))));
    x0 = std::max(0, x0 - margin);
    y0 = std::max(0, y0 - margin);
    x1 = std::min(image_width, x1 + margin);
    y1 = std::min(image_height, y1 + margin);
    if (x1 <= x0 || y1 <= y0) {
        throw Error(ErrorKind::kInvalidArgument, "masks lie outside the image");
    }
    return CropWindow{RectMask{x0, y0, x1 - x0, y1 - y0}, image_width, image_height};
}

FrameTransform::FrameTransform(int root_width, int root_height)
    : root_width_(root_width), root_height_(root_height), width_(root_width), height_(root_height) {}

FrameTransform FrameTransform::then(const FrameStep& step) const {
    FrameTransform next = *this;
    next.steps_.push_back(step);
    if (const auto* crop = std::get_if<CropStep>(&step)) {
        next.width_ = crop->width;
        next.height_ = crop->height;
    } else {
        const auto& rot = std::get<RotationStep>(step);
        next.width_ = rot.dst_width;
        next.height_ = rot.dst_height;
    }
    return next;
}

Point FrameTransform::forward(Point p) const {
    for (const FrameStep& step : steps_) {
        if (const auto* crop = std::get_if<CropStep>(&step)) {
            p = {p.x - crop->offset_x, p.y - crop->offset_y};
        } else {
            p = rotate_forward(std::get<RotationStep>(step), p);
        }
    }
    return p;
}

Point FrameTransform::inverse(Point p) const {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
        if (const auto* crop = std::get_if<CropStep>(&*it)) {
            p = {p.x + crop->offset_x, p.y + crop->offset_y};
        } else {
            p = rotate_inverse(std::get<RotationStep>(*it), p);
        }
    }
    return p;
}

bool FrameTransform::rotated() const {
    return std::any_of(steps_.begin(), steps_.end(),
                       [](const FrameStep& s) { return std::holds_alternative<RotationStep>(s); });
}

Point to_original_frame(Point p, const FrameTransform& t) { return t.inverse(p); }

RotatedImage rotate_image(const RgbImage& image, double angle_deg) {
    if (std::abs(angle_deg) > 180.0) {
        throw Error(ErrorKind::kInvalidArgument, "rotation angle must lie in [-180, 180]");
    }
    const auto [c, s] = cos_sin_deg(angle_deg);
    RotationStep step;
    step.angle_deg = angle_deg;
    step.src_width = image.cols;
    step.src_height = image.rows;
    // Pixel-center extents, so a W x H image turned by 90 degrees lands on H x W.
    const double span_x = std::abs(c) * (image.cols - 1) + std::abs(s) * (image.rows - 1);
    const double span_y = std::abs(s) * (image.cols - 1) + std::abs(c) * (image.rows - 1);
    step.dst_width = static_cast<int>(std::ceil(span_x - 1e-9)) + 1;
    step.dst_height = static_cast<int>(std::ceil(span_y - 1e-9)) + 1;

    if (angle_deg == 0.0) return {image.clone(), step};

    const Point origin = rotate_forward(step, {0.0, 0.0});
    const cv::Matx23d forward(c, -s, origin.x, s, c, origin.y);
    RgbImage out;
    const int interp = (c == std::round(c) && s == std::round(s)) ? cv::INTER_NEAREST : cv::INTER_LINEAR;
    cv::warpAffine(image, out, forward, cv::Size(step.dst_width, step.dst_height), interp,
                   cv::BORDER_CONSTANT, cv::Scalar(128, 128, 128));
    return {out, step};
}

RgbImage crop_image(const RgbImage& image, const RectMask& rect) {
    if (rect.x0 < 0 || rect.y0 < 0 || rect.x1() > image.cols || rect.y1() > image.rows) {
        throw Error(ErrorKind::kInvalidArgument, "crop window exceeds the image");
    }
    return image(cv::Rect(rect.x0, rect.y0, rect.width, rect.height)).clone();
}

}  // namespace oracle_grasp
