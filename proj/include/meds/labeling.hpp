#pragma once

#include <cstdint>
#include <vector>

namespace meds {

// Connected-component labeling of a 3D boolean field, 6- or 26-connectivity.
// Labels are 1-based; 0 marks background. Returns the number of components.
int label_components(const std::vector<std::uint8_t>& mask, int nz, int ny,
                     int nx, int connectivity, std::vector<int>& labels);

// Voxel counts per label (index 0 unused).
std::vector<std::size_t> component_sizes(const std::vector<int>& labels,
                                         int num_components);

} // namespace meds
