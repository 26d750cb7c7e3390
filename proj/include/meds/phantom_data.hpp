#pragma once

#include <array>
#include <vector>

#include "meds/volume.hpp"

namespace meds::phantom {

// Synthetic thoracic phantom: a soft-tissue body cylinder holding two lung
// ellipsoids, solid nodule spheres (annotated), and tubular vessels with
// occasional sub-3mm bulges acting as false-positive confusers.
struct PhantomSpec {
    std::uint64_t seed = 1;
    std::array<int, 3> volume_shape{21, 72, 72};      // (z, y, x)
    std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};  // (z, y, x)
    int n_nodules = 3;
    std::array<double, 2> nodule_diameter_range_mm{8.0, 16.0};
    int n_vessels = 6;
    double noise_sigma_hu = 15.0;
    std::array<double, 2> vessel_radius_range_mm{0.8, 1.8};
    double vessel_bulge_rate = 0.35; // bulges per vessel vertex
    std::string scan_id = "phantom";

    void validate() const;
};

struct PhantomResult {
    CTVolume volume;
    std::vector<Annotation> annotations;
};

PhantomResult generate_phantom(const PhantomSpec& spec);

} // namespace meds::phantom
