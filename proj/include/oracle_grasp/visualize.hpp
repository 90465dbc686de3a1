#pragma once

#include "oracle_grasp/pipeline.hpp"

namespace oracle_grasp {

/// Annotated copy of `image`: selected cells tinted red, grasp point and
/// orientation line in blue, clearance circle and unrefined point in green.
RgbImage render_grasp_overlay(const RgbImage& image, const GraspResult& result);

}  // namespace oracle_grasp
