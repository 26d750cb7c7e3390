#include "meds/ct_preproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meds/labeling.hpp"
#include "meds/morphology.hpp"

namespace meds::preproc {

LungMask segment_lung_parenchyma(const CTVolume& volume, const PreprocConfig& cfg) {
    const int nz = volume.nz, ny = volume.ny, nx = volume.nx;
    std::vector<std::uint8_t> air(volume.size());
    bool any_air = false;
    for (std::size_t i = 0; i < volume.size(); ++i) {
        air[i] = volume.voxels[i] < cfg.air_threshold_hu ? 1 : 0;
        any_air |= air[i] != 0;
    }
    if (!any_air) throw DataError("no lung candidate region");

    // Drop air components touching the in-plane border (background, couch).
    std::vector<int> labels;
    const int ncomp = label_components(air, nz, ny, nx, 6, labels);
    std::vector<std::uint8_t> border_touch(static_cast<std::size_t>(ncomp) + 1, 0);
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                if (y != 0 && y != ny - 1 && x != 0 && x != nx - 1) continue;
                const int l = labels[volume.index(z, y, x)];
                if (l > 0) border_touch[static_cast<std::size_t>(l)] = 1;
            }

    auto sizes = component_sizes(labels, ncomp);
    std::vector<int> kept;
    for (int l = 1; l <= ncomp; ++l)
        if (!border_touch[static_cast<std::size_t>(l)] && sizes[static_cast<std::size_t>(l)] > 0)
            kept.push_back(l);
    if (kept.empty()) throw DataError("no lung candidate region");
    std::sort(kept.begin(), kept.end(), [&](int a, int b) {
        return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
    });
    if (kept.size() > 2) kept.resize(2); // the two lungs (possibly merged)

    LungMask out;
    out.resize(nz, ny, nx, false);
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.mask[i] = (labels[i] == kept[0] || (kept.size() > 1 && labels[i] == kept[1]))
                          ? 1
                          : 0;

    fill_holes_per_slice(out.mask, nz, ny, nx);
    close_sphere(out.mask, nz, ny, nx, cfg.closing_radius_vox);
    dilate_sphere(out.mask, nz, ny, nx, cfg.dilation_radius_vox);
    return out;
}

CTVolume apply_mask(const CTVolume& volume, const LungMask& mask, double fill_hu) {
    if (!mask.shape_matches(volume))
        throw std::invalid_argument("apply_mask: shape mismatch");
    CTVolume out = volume;
    const float fill = static_cast<float>(fill_hu);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!mask.mask[i]) out.voxels[i] = fill;
    return out;
}

CTVolume normalize_intensity(const CTVolume& volume) {
    CTVolume out = volume;
    for (auto& v : out.voxels) {
        const float c = std::min(400.0f, std::max(-1000.0f, v));
        v = (c + 1000.0f) / 1400.0f;
    }
    return out;
}

CTVolume resample_axial(const CTVolume& volume, double target_z_mm) {
    if (target_z_mm <= 0)
        throw std::invalid_argument("resample_axial: target spacing must be > 0");
    if (volume.nz < 2) throw DataError("cannot resample along z");
    const double sz = volume.spacing_mm[0];
    if (std::abs(sz - target_z_mm) < 1e-9) return volume;

    const double extent = (volume.nz - 1) * sz;
    const int out_nz = static_cast<int>(std::floor(extent / target_z_mm + 1e-9)) + 1;

    CTVolume out;
    out.resize(out_nz, volume.ny, volume.nx);
    out.spacing_mm = {target_z_mm, volume.spacing_mm[1], volume.spacing_mm[2]};
    out.origin_mm = volume.origin_mm;
    out.scan_id = volume.scan_id;
    const std::size_t plane = static_cast<std::size_t>(volume.ny) * volume.nx;
    for (int z = 0; z < out_nz; ++z) {
        const double src = z * target_z_mm / sz;
        int z0 = static_cast<int>(std::floor(src));
        if (z0 >= volume.nz - 1) z0 = volume.nz - 2;
        const double t = src - z0;
        const float* a = volume.voxels.data() + static_cast<std::size_t>(z0) * plane;
        const float* b = a + plane;
        float* o = out.voxels.data() + static_cast<std::size_t>(z) * plane;
        const float tf = static_cast<float>(t);
        for (std::size_t i = 0; i < plane; ++i)
            o[i] = a[i] + tf * (b[i] - a[i]);
    }
    return out;
}

std::optional<std::pair<double, double>> mask_centroid_yx(const LungMask& mask) {
    double sy = 0, sx = 0;
    std::size_t n = 0;
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < mask.ny; ++y)
            for (int x = 0; x < mask.nx; ++x)
                if (mask.at(z, y, x)) {
                    sy += y;
                    sx += x;
                    ++n;
                }
    if (n == 0) return std::nullopt;
    return std::make_pair(sy / n, sx / n);
}

CTVolume crop_center(const CTVolume& volume, int size, const LungMask* mask,
                     double pad_hu) {
    double cy = (volume.ny - 1) / 2.0, cx = (volume.nx - 1) / 2.0;
    if (mask) {
        if (auto c = mask_centroid_yx(*mask)) {
            cy = c->first;
            cx = c->second;
        }
    }
    auto window_start = [size](double center, int dim) {
        if (dim <= size) return -(size - dim) / 2; // symmetric padding
        int start = static_cast<int>(std::lround(center)) - size / 2;
        return std::clamp(start, 0, dim - size);
    };
    const int y0 = window_start(cy, volume.ny);
    const int x0 = window_start(cx, volume.nx);

    CTVolume out;
    out.resize(volume.nz, size, size, static_cast<float>(pad_hu));
    out.spacing_mm = volume.spacing_mm;
    out.origin_mm = {volume.origin_mm[0],
                     volume.origin_mm[1] + y0 * volume.spacing_mm[1],
                     volume.origin_mm[2] + x0 * volume.spacing_mm[2]};
    out.scan_id = volume.scan_id;
    for (int z = 0; z < volume.nz; ++z)
        for (int y = 0; y < size; ++y) {
            const int sy = y0 + y;
            if (sy < 0 || sy >= volume.ny) continue;
            for (int x = 0; x < size; ++x) {
                const int sx = x0 + x;
                if (sx < 0 || sx >= volume.nx) continue;
                out.at(z, y, x) = volume.at(z, sy, sx);
            }
        }
    return out;
}

namespace {

LungMask crop_mask(const LungMask& mask, int size, double cy, double cx) {
    auto window_start = [size](double center, int dim) {
        if (dim <= size) return -(size - dim) / 2;
        int start = static_cast<int>(std::lround(center)) - size / 2;
        return std::clamp(start, 0, dim - size);
    };
    const int y0 = window_start(cy, mask.ny);
    const int x0 = window_start(cx, mask.nx);
    LungMask out;
    out.resize(mask.nz, size, size, false);
    for (int z = 0; z < mask.nz; ++z)
        for (int y = 0; y < size; ++y) {
            const int sy = y0 + y;
            if (sy < 0 || sy >= mask.ny) continue;
            for (int x = 0; x < size; ++x) {
                const int sx = x0 + x;
                if (sx < 0 || sx >= mask.nx) continue;
                out.set(z, y, x, mask.at(z, sy, sx));
            }
        }
    return out;
}

} // namespace

PreprocessResult preprocess_scan(const CTVolume& raw, const PreprocConfig& cfg) {
    CTVolume resampled = resample_axial(raw, cfg.target_z_spacing_mm);
    LungMask mask = segment_lung_parenchyma(resampled, cfg);
    CTVolume masked = apply_mask(resampled, mask, cfg.mask_fill_hu);
    CTVolume cropped = crop_center(masked, cfg.crop_size, &mask, cfg.mask_fill_hu);

    auto c = mask_centroid_yx(mask);
    const double cy = c ? c->first : (mask.ny - 1) / 2.0;
    const double cx = c ? c->second : (mask.nx - 1) / 2.0;
    PreprocessResult r;
    r.volume = std::move(cropped);
    r.mask = crop_mask(mask, cfg.crop_size, cy, cx);
    return r;
}

NormalizedVolume to_normalized(const CTVolume& preprocessed) {
    if (std::abs(preprocessed.spacing_mm[0] - 1.0) > 1e-6)
        throw std::invalid_argument("to_normalized: z-spacing must be 1 mm");
    if (preprocessed.ny != preprocessed.nx)
        throw std::invalid_argument("to_normalized: in-plane shape must be square");
    CTVolume n = normalize_intensity(preprocessed);
    NormalizedVolume out;
    out.voxels = std::move(n.voxels);
    out.nz = n.nz;
    out.ny = n.ny;
    out.nx = n.nx;
    out.spacing_mm = n.spacing_mm;
    out.origin_mm = n.origin_mm;
    out.scan_id = n.scan_id;
    return out;
}

} // namespace meds::preproc
