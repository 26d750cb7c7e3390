#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "meds/errors.hpp"

namespace meds {

// A scalar 3D field in Hounsfield units, axes ordered (z, y, x).
// origin_mm locates voxel (0,0,0) in the world frame of the original scan,
// so annotations stay valid through resampling and cropping.
struct CTVolume {
    std::vector<float> voxels; // z-major, size nz*ny*nx
    int nz = 0, ny = 0, nx = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0}; // (z, y, x)
    std::array<double, 3> origin_mm{0.0, 0.0, 0.0};  // (z, y, x)
    std::string scan_id;

    std::size_t size() const { return voxels.size(); }
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    float& at(int z, int y, int x) { return voxels[index(z, y, x)]; }
    float at(int z, int y, int x) const { return voxels[index(z, y, x)]; }

    void resize(int z, int y, int x, float fill = 0.0f) {
        nz = z; ny = y; nx = x;
        voxels.assign(static_cast<std::size_t>(z) * y * x, fill);
    }
    bool same_shape(const CTVolume& o) const {
        return nz == o.nz && ny == o.ny && nx == o.nx;
    }
};

// Boolean field congruent with a CTVolume.
struct LungMask {
    std::vector<std::uint8_t> mask;
    int nz = 0, ny = 0, nx = 0;

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    bool at(int z, int y, int x) const { return mask[index(z, y, x)] != 0; }
    void set(int z, int y, int x, bool v) { mask[index(z, y, x)] = v ? 1 : 0; }
    void resize(int z, int y, int x, bool fill = false) {
        nz = z; ny = y; nx = x;
        mask.assign(static_cast<std::size_t>(z) * y * x, fill ? 1 : 0);
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : mask) n += v;
        return n;
    }
    bool shape_matches(const CTVolume& v) const {
        return nz == v.nz && ny == v.ny && nx == v.nx;
    }
};

// A preprocessed volume: values in [0,1], z-spacing 1 mm, square in-plane shape.
struct NormalizedVolume {
    std::vector<float> voxels;
    int nz = 0, ny = 0, nx = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::array<double, 3> origin_mm{0.0, 0.0, 0.0};
    std::string scan_id;

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    float at(int z, int y, int x) const { return voxels[index(z, y, x)]; }
};

// One nodule annotation in world millimetres (relative to the scan origin).
struct Annotation {
    std::string scan_id;
    double center_x_mm = 0.0;
    double center_y_mm = 0.0;
    double center_z_mm = 0.0;
    double diameter_mm = 0.0;
};

} // namespace meds
