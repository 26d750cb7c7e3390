#pragma once

#include <optional>

#include "meds/volume.hpp"

namespace meds::preproc {

struct PreprocConfig {
    double air_threshold_hu = -320.0; // separates lung air from soft tissue
    double closing_radius_vox = 2.0;
    double dilation_radius_vox = 5.0;
    double mask_fill_hu = -1000.0;
    int crop_size = 256;
    double target_z_spacing_mm = 1.0;
};

// Threshold air, drop components touching the in-plane border, keep the two
// largest, fill per-slice holes, then close and dilate.
LungMask segment_lung_parenchyma(const CTVolume& volume,
                                 const PreprocConfig& cfg = {});

// Voxels outside the mask are set to the fill value; inside untouched.
CTVolume apply_mask(const CTVolume& volume, const LungMask& mask,
                    double fill_hu = -1000.0);

// clamp(HU, -1000, 400) -> (HU + 1000) / 1400, into [0,1].
CTVolume normalize_intensity(const CTVolume& volume);

// Linear interpolation along z to the target spacing. In-plane untouched.
CTVolume resample_axial(const CTVolume& volume, double target_z_mm = 1.0);

// Crop/pad in-plane to size x size, centred on the mask centroid when given,
// else the image centre. Pads with -1000 HU.
CTVolume crop_center(const CTVolume& volume, int size = 256,
                     const LungMask* mask = nullptr, double pad_hu = -1000.0);

// In-plane centroid (y, x) of a mask; nullopt when the mask is empty.
std::optional<std::pair<double, double>> mask_centroid_yx(const LungMask& mask);

// Full pipeline: resample -> segment -> mask -> crop; normalization is applied
// when the volume is loaded for MIP/patch extraction.
struct PreprocessResult {
    CTVolume volume;  // masked, 1 mm slices, crop_size x crop_size, HU
    LungMask mask;    // mask aligned with `volume`
};
PreprocessResult preprocess_scan(const CTVolume& raw, const PreprocConfig& cfg = {});

// View of a preprocessed volume as a NormalizedVolume (applies the intensity
// window); validates spacing and shape contracts.
NormalizedVolume to_normalized(const CTVolume& preprocessed);

} // namespace meds::preproc
