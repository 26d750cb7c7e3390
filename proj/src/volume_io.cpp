#include "meds/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace meds::io {

namespace fs = std::filesystem;
using nlohmann::json;

void write_volume(const fs::path& stem, const CTVolume& volume) {
    fs::path raw = stem;
    raw += ".raw";
    fs::path meta = stem;
    meta += ".json";

    std::vector<std::int16_t> buf(volume.size());
    for (std::size_t i = 0; i < volume.size(); ++i) {
        const double v = std::llround(volume.voxels[i]);
        buf[i] = static_cast<std::int16_t>(
            std::min<double>(32767, std::max<double>(-32768, v)));
    }
    std::ofstream rf(raw, std::ios::binary);
    if (!rf) throw DataError("cannot write voxel file: " + raw.string());
    rf.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(std::int16_t)));
    rf.close();
    if (!rf) throw DataError("failed writing voxel file: " + raw.string());

    json j;
    j["schema_version"] = 1;
    j["scan_id"] = volume.scan_id;
    j["shape"] = {volume.nz, volume.ny, volume.nx};
    j["spacing_mm"] = {volume.spacing_mm[0], volume.spacing_mm[1],
                       volume.spacing_mm[2]};
    j["origin_mm"] = {volume.origin_mm[0], volume.origin_mm[1],
                      volume.origin_mm[2]};
    std::ofstream mf(meta);
    if (!mf) throw DataError("cannot write sidecar: " + meta.string());
    mf << j.dump(2) << "\n";
}

CTVolume read_volume(const fs::path& stem) {
    fs::path raw = stem;
    raw += ".raw";
    fs::path meta = stem;
    meta += ".json";

    std::ifstream mf(meta);
    if (!mf) throw DataError("missing sidecar: " + meta.string());
    json j;
    try {
        mf >> j;
    } catch (const json::exception& e) {
        throw DataError("corrupt sidecar " + meta.string() + ": " + e.what());
    }
    CTVolume v;
    try {
        const auto shape = j.at("shape");
        v.nz = shape.at(0).get<int>();
        v.ny = shape.at(1).get<int>();
        v.nx = shape.at(2).get<int>();
        const auto sp = j.at("spacing_mm");
        v.spacing_mm = {sp.at(0).get<double>(), sp.at(1).get<double>(),
                        sp.at(2).get<double>()};
        if (j.contains("origin_mm")) {
            const auto og = j.at("origin_mm");
            v.origin_mm = {og.at(0).get<double>(), og.at(1).get<double>(),
                           og.at(2).get<double>()};
        }
        v.scan_id = j.at("scan_id").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError("invalid sidecar " + meta.string() + ": " + e.what());
    }
    if (v.nz <= 0 || v.ny <= 0 || v.nx <= 0)
        throw DataError("invalid sidecar " + meta.string() + ": non-positive shape");
    for (double s : v.spacing_mm)
        if (!(s > 0))
            throw DataError("invalid sidecar " + meta.string() +
                            ": spacing must be positive");

    std::ifstream rf(raw, std::ios::binary | std::ios::ate);
    if (!rf) throw DataError("missing voxel file: " + raw.string());
    const auto bytes = static_cast<std::size_t>(rf.tellg());
    const std::size_t expected =
        static_cast<std::size_t>(v.nz) * v.ny * v.nx * sizeof(std::int16_t);
    if (bytes != expected)
        throw DataError("voxel file size mismatch for " + raw.string() + ": got " +
                        std::to_string(bytes) + " bytes, sidecar implies " +
                        std::to_string(expected));
    rf.seekg(0);
    std::vector<std::int16_t> buf(static_cast<std::size_t>(v.nz) * v.ny * v.nx);
    rf.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(expected));
    if (!rf) throw DataError("failed reading voxel file: " + raw.string());
    v.voxels.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        v.voxels[i] = static_cast<float>(buf[i]);
    return v;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

} // namespace

AnnotationLoad load_annotations(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open annotation file: " + path.string());
    std::string line;
    if (!std::getline(f, line))
        throw DataError("empty annotation file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> expected{"scan_id", "center_x_mm", "center_y_mm",
                                            "center_z_mm", "diameter_mm"};
    auto header = split_csv_line(line);
    for (const auto& col : expected)
        if (std::find(header.begin(), header.end(), col) == header.end())
            throw DataError("annotation file " + path.string() +
                            ": missing column '" + col + "'");
    std::vector<int> col_idx;
    for (const auto& col : expected)
        col_idx.push_back(static_cast<int>(
            std::find(header.begin(), header.end(), col) - header.begin()));

    AnnotationLoad out;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() < header.size())
            throw DataError("annotation file " + path.string() + " line " +
                            std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        Annotation a;
        try {
            a.scan_id = fields[static_cast<std::size_t>(col_idx[0])];
            a.center_x_mm = std::stod(fields[static_cast<std::size_t>(col_idx[1])]);
            a.center_y_mm = std::stod(fields[static_cast<std::size_t>(col_idx[2])]);
            a.center_z_mm = std::stod(fields[static_cast<std::size_t>(col_idx[3])]);
            a.diameter_mm = std::stod(fields[static_cast<std::size_t>(col_idx[4])]);
        } catch (const std::exception&) {
            throw DataError("annotation file " + path.string() + " line " +
                            std::to_string(line_no) + ": malformed numeric field");
        }
        if (a.diameter_mm < 3.0) {
            out.warnings.push_back("line " + std::to_string(line_no) +
                                   ": nodule diameter " +
                                   std::to_string(a.diameter_mm) +
                                   " mm below 3 mm, excluded");
            continue;
        }
        out.annotations.push_back(std::move(a));
    }
    return out;
}

void write_annotations(const fs::path& path,
                       const std::vector<Annotation>& annotations) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write annotation file: " + path.string());
    f << "scan_id,center_x_mm,center_y_mm,center_z_mm,diameter_mm\n";
    f.precision(10);
    for (const auto& a : annotations)
        f << a.scan_id << "," << a.center_x_mm << "," << a.center_y_mm << ","
          << a.center_z_mm << "," << a.diameter_mm << "\n";
}

void write_pgm16(const fs::path& path, const std::vector<float>& pixels, int ny,
                 int nx) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image: " + path.string());
    f << "P5\n" << nx << " " << ny << "\n65535\n";
    for (float p : pixels) {
        const float c = std::min(1.0f, std::max(0.0f, p));
        const auto v = static_cast<std::uint16_t>(std::lround(c * 65535.0f));
        // big-endian per PGM convention
        const char hi = static_cast<char>(v >> 8);
        const char lo = static_cast<char>(v & 0xff);
        f.put(hi);
        f.put(lo);
    }
}

} // namespace meds::io
