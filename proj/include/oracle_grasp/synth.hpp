#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oracle_grasp/depth_refine.hpp"
#include "oracle_grasp/eval.hpp"
#include "oracle_grasp/tiling.hpp"

namespace oracle_grasp {

/// Synthetic test scene with ground-truth grasp annotation.
struct SynthScene {
    RgbImage image;
    DepthMap depth;
    AnnotationSet annotation;
    /// Point inside the hollow part of the scene (handle-hole only).
    std::optional<Point> hole_center;
};

struct SynthOptions {
    std::string scene = "bar";  // handle-hole | bar | blob
    std::uint64_t seed = 0;
    int width = 320;
    int height = 240;
    double angle_deg = 30.0;  // bar orientation
};

std::vector<std::string> synth_scene_names();

/// Deterministic for a given option set. Throws Error(kConfig) for an
/// unknown scene name.
SynthScene make_synth_scene(const SynthOptions& options);

/// Kettle-handle depth fixture: `background_mm` seen through a ring of
/// `ring_mm` with inner radius `inner` and outer radius `outer` around (cx, cy).
DepthMap make_ring_depth(int width, int height, Point center, double inner, double outer,
                         std::uint16_t ring_mm, std::uint16_t background_mm);

}  // namespace oracle_grasp
