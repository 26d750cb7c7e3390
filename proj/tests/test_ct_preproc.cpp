#include "doctest.h"

#include "meds/ct_preproc.hpp"

#include <cmath>
#include <random>

using namespace meds;

namespace {

// Hand-built phantom with known region labels: -1000 background, 40 body,
// two -800 lung ellipsoids.
struct TestPhantom {
    CTVolume vol;
    std::vector<std::size_t> lung_voxels;
};

TestPhantom make_phantom(int nz = 20, int ny = 48, int nx = 48) {
    TestPhantom p;
    p.vol.resize(nz, ny, nx, -1000.0f);
    p.vol.spacing_mm = {1.0, 1.0, 1.0};
    p.vol.scan_id = "test";
    const double cy = (ny - 1) / 2.0, cx = (nx - 1) / 2.0, cz = (nz - 1) / 2.0;
    const double body_ay = 0.40 * ny, body_ax = 0.42 * nx;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const double ry = (y - cy) / body_ay, rx = (x - cx) / body_ax;
                if (ry * ry + rx * rx <= 1.0) p.vol.at(z, y, x) = 40.0f;
            }
    const double az = 0.35 * nz, ay = 0.25 * ny, ax = 0.14 * nx;
    for (double side : {-1.0, 1.0}) {
        const double lcx = cx + side * 0.20 * nx;
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    const double rz = (z - cz) / az, ry = (y - cy) / ay,
                                 rx = (x - lcx) / ax;
                    if (rz * rz + ry * ry + rx * rx <= 1.0) {
                        p.vol.at(z, y, x) = -800.0f;
                        p.lung_voxels.push_back(p.vol.index(z, y, x));
                    }
                }
    }
    return p;
}

} // namespace

TEST_CASE("segment_lung_parenchyma covers lungs and excludes background") {
    TestPhantom p = make_phantom();
    LungMask mask = preproc::segment_lung_parenchyma(p.vol);
    for (std::size_t idx : p.lung_voxels) CHECK(mask.mask[idx] != 0);
    // background corners stay excluded
    CHECK_FALSE(mask.at(0, 0, 0));
    CHECK_FALSE(mask.at(p.vol.nz - 1, 0, p.vol.nx - 1));
    CHECK_FALSE(mask.at(0, p.vol.ny - 1, 0));
}

TEST_CASE("segment_lung_parenchyma rejects volumes with no air region") {
    CTVolume v;
    v.resize(8, 16, 16, 0.0f);
    CHECK_THROWS_WITH_AS(preproc::segment_lung_parenchyma(v),
                         "no lung candidate region", DataError);
}

TEST_CASE("wall-attached nodule survives masking via dilation") {
    TestPhantom p = make_phantom(20, 64, 64);
    // 60 HU sphere centred on the left lung boundary
    const double cy = (p.vol.ny - 1) / 2.0, cz = (p.vol.nz - 1) / 2.0;
    const double lcx = (p.vol.nx - 1) / 2.0 - 0.20 * p.vol.nx;
    const double ax = 0.14 * p.vol.nx;
    const int sx = static_cast<int>(lcx + ax); // on the wall
    const int sy = static_cast<int>(cy), sz = static_cast<int>(cz);
    const int r = 3;
    std::vector<std::size_t> sphere;
    for (int z = sz - r; z <= sz + r; ++z)
        for (int y = sy - r; y <= sy + r; ++y)
            for (int x = sx - r; x <= sx + r; ++x)
                if ((z - sz) * (z - sz) + (y - sy) * (y - sy) + (x - sx) * (x - sx) <=
                    r * r) {
                    p.vol.at(z, y, x) = 60.0f;
                    sphere.push_back(p.vol.index(z, y, x));
                }
    LungMask mask = preproc::segment_lung_parenchyma(p.vol);
    // dilation radius (5) >= attachment depth (sphere radius 3)
    for (std::size_t idx : sphere) CHECK(mask.mask[idx] != 0);
}

TEST_CASE("apply_mask fill rules") {
    CTVolume v;
    v.resize(4, 6, 6);
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> d(-900, 400);
    for (auto& x : v.voxels) x = d(rng);

    LungMask all_true;
    all_true.resize(4, 6, 6, true);
    CHECK(preproc::apply_mask(v, all_true).voxels == v.voxels);

    LungMask all_false;
    all_false.resize(4, 6, 6, false);
    auto masked = preproc::apply_mask(v, all_false);
    for (float x : masked.voxels) CHECK(x == -1000.0f);

    LungMask half;
    half.resize(4, 6, 6, false);
    for (std::size_t i = 0; i < half.mask.size() / 2; ++i) half.mask[i] = 1;
    auto half_masked = preproc::apply_mask(v, half);
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (half.mask[i])
            CHECK(half_masked.voxels[i] == v.voxels[i]);
        else
            CHECK(half_masked.voxels[i] == -1000.0f);
    }

    LungMask wrong;
    wrong.resize(4, 6, 5, true);
    CHECK_THROWS_AS(preproc::apply_mask(v, wrong), std::invalid_argument);
}

TEST_CASE("normalize_intensity window endpoints and clamping") {
    CTVolume v;
    v.resize(1, 1, 4);
    v.voxels = {-1000.0f, 400.0f, -300.0f, 1000.0f};
    auto n = preproc::normalize_intensity(v);
    CHECK(n.voxels[0] == doctest::Approx(0.0));
    CHECK(n.voxels[1] == doctest::Approx(1.0));
    CHECK(n.voxels[2] == doctest::Approx(0.5));
    CHECK(n.voxels[3] == doctest::Approx(1.0)); // clamped
}

TEST_CASE("normalize_intensity is monotone and stays in [0,1]") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> d(-2000, 2000);
    CTVolume v;
    v.resize(2, 8, 8);
    for (auto& x : v.voxels) x = d(rng);
    auto n = preproc::normalize_intensity(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(n.voxels[i] >= 0.0f);
        CHECK(n.voxels[i] <= 1.0f);
        for (std::size_t j = 0; j < v.size(); ++j)
            if (v.voxels[i] <= v.voxels[j]) CHECK(n.voxels[i] <= n.voxels[j]);
    }
}

TEST_CASE("resample_axial identity at matching spacing") {
    CTVolume v;
    v.resize(5, 4, 4);
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> d(-1000, 400);
    for (auto& x : v.voxels) x = d(rng);
    v.spacing_mm = {1.0, 0.7, 0.7};
    auto r = preproc::resample_axial(v, 1.0);
    CHECK(r.voxels == v.voxels); // bitwise identity
}

TEST_CASE("resample_axial closed-form interpolation") {
    CTVolume v;
    v.resize(2, 1, 1);
    v.voxels = {0.0f, 1.0f};
    v.spacing_mm = {2.0, 1.0, 1.0};
    auto r = preproc::resample_axial(v, 1.0);
    REQUIRE(r.nz == 3);
    CHECK(r.voxels[0] == doctest::Approx(0.0));
    CHECK(r.voxels[1] == doctest::Approx(0.5));
    CHECK(r.voxels[2] == doctest::Approx(1.0));
    CHECK(r.spacing_mm[0] == 1.0);
}

TEST_CASE("resample_axial slice-count formula") {
    CTVolume v;
    v.resize(100, 2, 2);
    v.spacing_mm = {2.5, 1.0, 1.0};
    auto r = preproc::resample_axial(v, 1.0);
    CHECK(r.nz == 248); // extent 247.5 mm at 1 mm steps
}

TEST_CASE("resample_axial rejects single-slice volumes") {
    CTVolume v;
    v.resize(1, 4, 4);
    v.spacing_mm = {2.0, 1.0, 1.0};
    CHECK_THROWS_WITH_AS(preproc::resample_axial(v, 1.0), "cannot resample along z",
                         DataError);
}

TEST_CASE("crop_center symmetric, shifted, and padded windows") {
    CTVolume v;
    v.resize(2, 512, 512);
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 512; ++y)
            for (int x = 0; x < 512; ++x)
                v.at(z, y, x) = static_cast<float>(y * 1000 + x);

    auto central = preproc::crop_center(v, 256);
    CHECK(central.ny == 256);
    CHECK(central.nx == 256);
    CHECK(central.at(0, 0, 0) == v.at(0, 128, 128));

    // centroid offset +40 px in y
    LungMask m;
    m.resize(2, 512, 512, false);
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 11; ++y)
            for (int x = 0; x < 11; ++x)
                m.set(z, 295 - 5 + y, 255 - 5 + x, true); // centroid (295.5, 255.5)... exact below
    // mask centred at (295, 255)
    auto shifted = preproc::crop_center(v, 256, &m);
    CHECK(shifted.at(0, 0, 0) == v.at(0, 295 - 128, 255 - 128));

    CTVolume small;
    small.resize(1, 200, 200, 7.0f);
    auto padded = preproc::crop_center(small, 256);
    CHECK(padded.ny == 256);
    CHECK(padded.nx == 256);
    CHECK(padded.at(0, 0, 0) == -1000.0f);           // border padding
    CHECK(padded.at(0, 128, 128) == 7.0f);           // interior preserved
    CHECK(padded.at(0, 27, 27) == -1000.0f);         // just outside the paste
    CHECK(padded.at(0, 28, 28) == 7.0f);             // paste corner
}

TEST_CASE("crop_center output shape invariant") {
    std::mt19937 rng(13);
    for (int trial = 0; trial < 6; ++trial) {
        const int ny = 30 + static_cast<int>(rng() % 500);
        const int nx = 30 + static_cast<int>(rng() % 500);
        CTVolume v;
        v.resize(2, ny, nx, 0.0f);
        auto c = preproc::crop_center(v, 256);
        CHECK(c.ny == 256);
        CHECK(c.nx == 256);
        CHECK(c.nz == 2);
    }
}

TEST_CASE("masking never destroys lung voxels (segment after mask)") {
    TestPhantom p = make_phantom();
    LungMask m1 = preproc::segment_lung_parenchyma(p.vol);
    CTVolume masked = preproc::apply_mask(p.vol, m1);
    LungMask m2 = preproc::segment_lung_parenchyma(masked);
    for (std::size_t idx : p.lung_voxels) CHECK(m2.mask[idx] != 0);
}

TEST_CASE("preprocess_scan full pipeline contract") {
    TestPhantom p = make_phantom();
    p.vol.spacing_mm = {2.0, 1.0, 1.0};
    preproc::PreprocConfig cfg;
    cfg.crop_size = 32;
    auto result = preproc::preprocess_scan(p.vol, cfg);
    CHECK(result.volume.nz == 39); // extent 38 mm at 1 mm
    CHECK(result.volume.ny == 32);
    CHECK(result.volume.nx == 32);
    CHECK(result.volume.spacing_mm[0] == 1.0);
    auto nv = preproc::to_normalized(result.volume);
    for (float x : nv.voxels) {
        CHECK(x >= 0.0f);
        CHECK(x <= 1.0f);
    }
}
