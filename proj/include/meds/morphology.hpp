#pragma once

#include <cstdint>
#include <vector>

namespace meds {

// Exact Euclidean binary morphology with spherical structuring elements,
// implemented through the squared distance transform (per-axis parabolic
// lower envelopes). Radii are in voxels.

// Squared Euclidean distance to the nearest true voxel, for every voxel.
void squared_edt(const std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                 std::vector<float>& dist2);

void dilate_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                   double radius);
void erode_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                  double radius);
// Dilation followed by erosion.
void close_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                  double radius);

// Fill regions of false voxels not reachable from the slice border, per slice.
void fill_holes_per_slice(std::vector<std::uint8_t>& mask, int nz, int ny,
                          int nx);

} // namespace meds
