#pragma once

#include <vector>

#include "meds/volume.hpp"

namespace meds::mip {

enum class Direction { Forward, Backward };

// One 2D image, row-major (ny x nx).
struct Image {
    std::vector<float> pixels;
    int ny = 0, nx = 0;
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * nx + x]; }
};

// Six projections anchored at one central slice: forward and backward at
// 3, 5 and 10 mm slab thickness.
struct MIPStack {
    int center_index = 0;
    std::array<Image, 3> forward;  // 3, 5, 10 mm
    std::array<Image, 3> backward; // 3, 5, 10 mm
    static constexpr std::array<int, 3> thicknesses_mm{3, 5, 10};
};

// Pixelwise maximum over the slab anchored at `center`. Forward covers
// [center, center+t-1], backward [center-t+1, center], clamped at the
// volume boundary so the slab always contains the central slice.
Image directional_mip(const NormalizedVolume& volume, int center,
                      int thickness_mm, Direction direction);

MIPStack build_mip_stack(const NormalizedVolume& volume, int center);

} // namespace meds::mip
