#include "meds/mip_gen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meds::mip {

Image directional_mip(const NormalizedVolume& volume, int center,
                      int thickness_mm, Direction direction) {
    if (center < 0 || center >= volume.nz)
        throw std::invalid_argument("directional_mip: center slice out of range");
    if (thickness_mm < 1)
        throw std::invalid_argument("directional_mip: thickness must be >= 1");
    // 1 mm slices upstream, so thickness in mm equals slice count.
    if (std::abs(volume.spacing_mm[0] - 1.0) > 1e-6)
        throw std::invalid_argument("directional_mip: volume z-spacing must be 1 mm");

    int z0, z1;
    if (direction == Direction::Forward) {
        z0 = center;
        z1 = std::min(volume.nz - 1, center + thickness_mm - 1);
    } else {
        z0 = std::max(0, center - thickness_mm + 1);
        z1 = center;
    }

    Image img;
    img.ny = volume.ny;
    img.nx = volume.nx;
    const std::size_t plane = static_cast<std::size_t>(volume.ny) * volume.nx;
    img.pixels.assign(volume.voxels.begin() + static_cast<std::size_t>(z0) * plane,
                      volume.voxels.begin() + static_cast<std::size_t>(z0 + 1) * plane);
    for (int z = z0 + 1; z <= z1; ++z) {
        const float* src = volume.voxels.data() + static_cast<std::size_t>(z) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            img.pixels[i] = std::max(img.pixels[i], src[i]);
    }
    return img;
}

MIPStack build_mip_stack(const NormalizedVolume& volume, int center) {
    MIPStack s;
    s.center_index = center;
    for (std::size_t i = 0; i < MIPStack::thicknesses_mm.size(); ++i) {
        s.forward[i] = directional_mip(volume, center, MIPStack::thicknesses_mm[i],
                                       Direction::Forward);
        s.backward[i] = directional_mip(volume, center, MIPStack::thicknesses_mm[i],
                                        Direction::Backward);
    }
    return s;
}

} // namespace meds::mip
