#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "meds/volume.hpp"

namespace meds::io {

// Volume on disk is a two-file pair: <stem>.raw (little-endian int16 HU,
// z-major) and <stem>.json (shape, spacing, origin, scan id). Round trips are
// bit-exact for int16-valued volumes.
void write_volume(const std::filesystem::path& stem, const CTVolume& volume);
CTVolume read_volume(const std::filesystem::path& stem);

// Annotation CSV: header scan_id,center_x_mm,center_y_mm,center_z_mm,diameter_mm.
// Rows with diameter < 3 mm are excluded; a warning line is recorded per
// excluded row.
struct AnnotationLoad {
    std::vector<Annotation> annotations;
    std::vector<std::string> warnings;
};
AnnotationLoad load_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path,
                       const std::vector<Annotation>& annotations);

// 16-bit binary PGM (P5) for MIP inspection images; pixels in [0,1].
void write_pgm16(const std::filesystem::path& path, const std::vector<float>& pixels,
                 int ny, int nx);

} // namespace meds::io
