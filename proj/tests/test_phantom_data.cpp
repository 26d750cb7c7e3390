#include "doctest.h"

#include "meds/labeling.hpp"
#include "meds/phantom_data.hpp"
#include "meds/volume_io.hpp"

#include <fstream>
#include <random>

using namespace meds;

TEST_CASE("phantom generation is deterministic per seed") {
    phantom::PhantomSpec spec;
    spec.seed = 7;
    spec.n_nodules = 3;
    auto a = phantom::generate_phantom(spec);
    auto b = phantom::generate_phantom(spec);
    CHECK(a.volume.voxels == b.volume.voxels); // bitwise
    REQUIRE(a.annotations.size() == b.annotations.size());
    for (std::size_t i = 0; i < a.annotations.size(); ++i) {
        CHECK(a.annotations[i].center_x_mm == b.annotations[i].center_x_mm);
        CHECK(a.annotations[i].diameter_mm == b.annotations[i].diameter_mm);
    }
    spec.seed = 8;
    auto c = phantom::generate_phantom(spec);
    CHECK(a.volume.voxels != c.volume.voxels);
}

TEST_CASE("phantom with no nodules has an empty annotation list") {
    phantom::PhantomSpec spec;
    spec.n_nodules = 0;
    auto r = phantom::generate_phantom(spec);
    CHECK(r.annotations.empty());
}

TEST_CASE("annotation centers sit in nodule-intensity voxels inside a lung") {
    phantom::PhantomSpec spec;
    spec.seed = 21;
    spec.n_nodules = 4;
    spec.noise_sigma_hu = 0.0; // exact intensity audit
    auto r = phantom::generate_phantom(spec);
    REQUIRE(r.annotations.size() == 4);
    for (const auto& a : r.annotations) {
        const int z = static_cast<int>(std::lround(a.center_z_mm / spec.spacing_mm[0]));
        const int y = static_cast<int>(std::lround(a.center_y_mm / spec.spacing_mm[1]));
        const int x = static_cast<int>(std::lround(a.center_x_mm / spec.spacing_mm[2]));
        const float hu = r.volume.at(z, y, x);
        CHECK(hu > 0.0f);   // nodule band (~30 HU), far from lung air
        CHECK(hu < 100.0f);
        CHECK(a.diameter_mm >= 3.0);
        CHECK(a.diameter_mm <= 30.0);
    }
}

TEST_CASE("phantom nodules are recoverable by a thresholding oracle") {
    phantom::PhantomSpec spec;
    spec.seed = 33;
    spec.n_nodules = 3;
    auto r = phantom::generate_phantom(spec);
    // threshold bright-inside-lung; every annotation center must land in a
    // connected bright component
    const auto& v = r.volume;
    std::vector<std::uint8_t> bright(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        bright[i] = (v.voxels[i] > -300.0f && v.voxels[i] < 200.0f) ? 1 : 0;
    std::vector<int> labels;
    const int ncomp = label_components(bright, v.nz, v.ny, v.nx, 26, labels);
    CHECK(ncomp > 0);
    for (const auto& a : r.annotations) {
        const int z = static_cast<int>(std::lround(a.center_z_mm / spec.spacing_mm[0]));
        const int y = static_cast<int>(std::lround(a.center_y_mm / spec.spacing_mm[1]));
        const int x = static_cast<int>(std::lround(a.center_x_mm / spec.spacing_mm[2]));
        CHECK(labels[v.index(z, y, x)] > 0);
    }
}

TEST_CASE("volume IO round trip is exact") {
    phantom::PhantomSpec spec;
    spec.seed = 5;
    auto r = phantom::generate_phantom(spec);
    const auto dir = std::filesystem::temp_directory_path() / "meds_io_test";
    std::filesystem::create_directories(dir);
    r.volume.scan_id = "roundtrip";
    io::write_volume(dir / "vol", r.volume);
    auto loaded = io::read_volume(dir / "vol");
    CHECK(loaded.voxels == r.volume.voxels);
    CHECK(loaded.nz == r.volume.nz);
    CHECK(loaded.spacing_mm == r.volume.spacing_mm);
    CHECK(loaded.origin_mm == r.volume.origin_mm);
    CHECK(loaded.scan_id == "roundtrip");
    std::filesystem::remove_all(dir);
}

TEST_CASE("volume IO error paths: truncation and sidecar mismatch") {
    const auto dir = std::filesystem::temp_directory_path() / "meds_io_err";
    std::filesystem::create_directories(dir);
    CTVolume v;
    v.resize(4, 6, 6, 10.0f);
    v.scan_id = "x";
    io::write_volume(dir / "vol", v);

    // truncated voxel file
    {
        std::ofstream f(dir / "vol.raw", std::ios::binary | std::ios::trunc);
        f << "1234";
    }
    CHECK_THROWS_AS(io::read_volume(dir / "vol"), DataError);

    // restore, then corrupt the sidecar shape
    io::write_volume(dir / "vol", v);
    {
        std::ifstream in(dir / "vol.json");
        std::string s((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
        auto pos = s.find("4,");
        s.replace(pos, 2, "5,");
        std::ofstream out(dir / "vol.json", std::ios::trunc);
        out << s;
    }
    CHECK_THROWS_AS(io::read_volume(dir / "vol"), DataError);

    // missing sidecar names the path
    CHECK_THROWS_AS(io::read_volume(dir / "missing"), DataError);
    try {
        io::read_volume(dir / "missing");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("missing") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("annotation loading: rows, sub-3mm rejection, malformed input") {
    const auto dir = std::filesystem::temp_directory_path() / "meds_ann_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "ann.csv";
    {
        std::ofstream f(path);
        f << "scan_id,center_x_mm,center_y_mm,center_z_mm,diameter_mm\n";
        f << "s1,10.5,20.5,30.5,8.0\n";
        f << "s2,1,2,3,12.25\n";
    }
    auto load = io::load_annotations(path);
    REQUIRE(load.annotations.size() == 2);
    CHECK(load.warnings.empty());
    CHECK(load.annotations[0].scan_id == "s1");
    CHECK(load.annotations[1].diameter_mm == doctest::Approx(12.25));

    // diameter below 3 mm excluded with a warning
    {
        std::ofstream f(path);
        f << "scan_id,center_x_mm,center_y_mm,center_z_mm,diameter_mm\n";
        f << "s1,10,20,30,2.0\n";
        f << "s1,10,20,30,3.0\n";
    }
    auto load2 = io::load_annotations(path);
    CHECK(load2.annotations.size() == 1);
    REQUIRE(load2.warnings.size() == 1);
    CHECK(load2.warnings[0].find("below 3 mm") != std::string::npos);

    // missing column named in the error
    {
        std::ofstream f(path);
        f << "scan_id,center_x_mm,center_y_mm,center_z_mm\n";
        f << "s1,10,20,30\n";
    }
    CHECK_THROWS_AS(io::load_annotations(path), DataError);
    try {
        io::load_annotations(path);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("diameter_mm") != std::string::npos);
    }

    // malformed row names the line number
    {
        std::ofstream f(path);
        f << "scan_id,center_x_mm,center_y_mm,center_z_mm,diameter_mm\n";
        f << "s1,10,garbage,30,8\n";
    }
    try {
        io::load_annotations(path);
        CHECK(false);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("annotation writer round trips through the loader") {
    std::vector<Annotation> anns;
    Annotation a;
    a.scan_id = "p0";
    a.center_x_mm = 31.25;
    a.center_y_mm = 42.5;
    a.center_z_mm = 13.75;
    a.diameter_mm = 9.5;
    anns.push_back(a);
    const auto path = std::filesystem::temp_directory_path() / "meds_ann_rt.csv";
    io::write_annotations(path, anns);
    auto load = io::load_annotations(path);
    REQUIRE(load.annotations.size() == 1);
    CHECK(load.annotations[0].center_x_mm == doctest::Approx(31.25).epsilon(1e-9));
    CHECK(load.annotations[0].diameter_mm == doctest::Approx(9.5).epsilon(1e-9));
    std::filesystem::remove(path);
}

TEST_CASE("phantom spec validation") {
    phantom::PhantomSpec spec;
    spec.nodule_diameter_range_mm = {2.0, 10.0}; // below the 3 mm floor
    CHECK_THROWS_AS(phantom::generate_phantom(spec), std::invalid_argument);
    spec.nodule_diameter_range_mm = {8.0, 40.0}; // above 30 mm
    CHECK_THROWS_AS(phantom::generate_phantom(spec), std::invalid_argument);
}
