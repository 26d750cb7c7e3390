#include "doctest.h"

#include "meds/mip_gen.hpp"

#include <random>

using namespace meds;
using mip::Direction;

namespace {

NormalizedVolume random_volume(int nz, int ny, int nx, unsigned seed) {
    NormalizedVolume v;
    v.nz = nz;
    v.ny = ny;
    v.nx = nx;
    v.spacing_mm = {1.0, 1.0, 1.0};
    v.voxels.resize(static_cast<std::size_t>(nz) * ny * nx);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& x : v.voxels) x = d(rng);
    return v;
}

// Independent oracle: per-pixel triple loop over the clamped slab.
mip::Image brute_force_mip(const NormalizedVolume& v, int center, int t,
                           Direction dir) {
    const int z0 = dir == Direction::Forward ? center : std::max(0, center - t + 1);
    const int z1 =
        dir == Direction::Forward ? std::min(v.nz - 1, center + t - 1) : center;
    mip::Image img;
    img.ny = v.ny;
    img.nx = v.nx;
    img.pixels.assign(static_cast<std::size_t>(v.ny) * v.nx, 0.0f);
    for (int y = 0; y < v.ny; ++y)
        for (int x = 0; x < v.nx; ++x) {
            float best = v.at(z0, y, x);
            for (int z = z0; z <= z1; ++z) best = std::max(best, v.at(z, y, x));
            img.pixels[static_cast<std::size_t>(y) * v.nx + x] = best;
        }
    return img;
}

NormalizedVolume reverse_z(const NormalizedVolume& v) {
    NormalizedVolume r = v;
    const std::size_t plane = static_cast<std::size_t>(v.ny) * v.nx;
    for (int z = 0; z < v.nz; ++z)
        std::copy_n(v.voxels.data() + static_cast<std::size_t>(v.nz - 1 - z) * plane,
                    plane, r.voxels.data() + static_cast<std::size_t>(z) * plane);
    return r;
}

} // namespace

TEST_CASE("thickness 1 returns exactly the central slice") {
    auto v = random_volume(8, 6, 6, 1);
    for (auto dir : {Direction::Forward, Direction::Backward}) {
        auto img = mip::directional_mip(v, 3, 1, dir);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) CHECK(img.at(y, x) == v.at(3, y, x));
    }
}

TEST_CASE("constant volume projects to the constant") {
    NormalizedVolume v = random_volume(6, 4, 4, 2);
    std::fill(v.voxels.begin(), v.voxels.end(), 0.37f);
    auto img = mip::directional_mip(v, 2, 5, Direction::Forward);
    for (float p : img.pixels) CHECK(p == 0.37f);
}

TEST_CASE("forward MIP equals brute-force slab maximum") {
    auto v = random_volume(16, 32, 32, 3);
    auto img = mip::directional_mip(v, 8, 5, Direction::Forward);
    auto oracle = brute_force_mip(v, 8, 5, Direction::Forward);
    CHECK(img.pixels == oracle.pixels);
}

TEST_CASE("brute-force equivalence over random volumes and all combinations") {
    std::mt19937 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const int nz = 2 + static_cast<int>(rng() % 31);
        const int ny = 2 + static_cast<int>(rng() % 15);
        const int nx = 2 + static_cast<int>(rng() % 15);
        auto v = random_volume(nz, ny, nx, 100 + trial);
        for (int center = 0; center < nz; ++center)
            for (int t : {3, 5, 10})
                for (auto dir : {Direction::Forward, Direction::Backward}) {
                    auto img = mip::directional_mip(v, center, t, dir);
                    auto oracle = brute_force_mip(v, center, t, dir);
                    REQUIRE(img.pixels == oracle.pixels);
                }
    }
}

TEST_CASE("reflection identity") {
    auto v = random_volume(13, 8, 8, 4);
    auto rv = reverse_z(v);
    for (int z = 0; z < v.nz; ++z)
        for (int t : {3, 5, 10}) {
            auto bwd = mip::directional_mip(v, z, t, Direction::Backward);
            auto fwd = mip::directional_mip(rv, v.nz - 1 - z, t, Direction::Forward);
            REQUIRE(bwd.pixels == fwd.pixels);
        }
}

TEST_CASE("slab monotonicity and central-slice lower bound") {
    auto v = random_volume(24, 10, 10, 5);
    for (int center : {0, 5, 12, 23}) {
        auto s = mip::build_mip_stack(v, center);
        const std::size_t plane = static_cast<std::size_t>(v.ny) * v.nx;
        for (std::size_t i = 0; i < plane; ++i) {
            const float central = v.voxels[static_cast<std::size_t>(center) * plane + i];
            CHECK(s.forward[0].pixels[i] >= central);
            CHECK(s.backward[0].pixels[i] >= central);
            CHECK(s.forward[1].pixels[i] >= s.forward[0].pixels[i]);
            CHECK(s.forward[2].pixels[i] >= s.forward[1].pixels[i]);
            CHECK(s.backward[1].pixels[i] >= s.backward[0].pixels[i]);
            CHECK(s.backward[2].pixels[i] >= s.backward[1].pixels[i]);
        }
    }
}

TEST_CASE("build_mip_stack contract: six images in range") {
    auto v = random_volume(12, 16, 16, 6);
    auto s = mip::build_mip_stack(v, 6);
    for (const auto& img : {s.forward[0], s.forward[1], s.forward[2], s.backward[0],
                            s.backward[1], s.backward[2]}) {
        CHECK(img.ny == 16);
        CHECK(img.nx == 16);
        for (float p : img.pixels) {
            CHECK(p >= 0.0f);
            CHECK(p <= 1.0f);
        }
    }
}

TEST_CASE("symmetric volume has equal forward and backward MIPs") {
    auto v = random_volume(11, 8, 8, 7);
    const std::size_t plane = 64;
    // mirror about the central slice
    for (int z = 0; z < 5; ++z)
        std::copy_n(v.voxels.data() + static_cast<std::size_t>(10 - z) * plane, plane,
                    v.voxels.data() + static_cast<std::size_t>(z) * plane);
    auto s = mip::build_mip_stack(v, 5);
    for (int t = 0; t < 3; ++t) CHECK(s.forward[t].pixels == s.backward[t].pixels);
}

TEST_CASE("bright voxel slab membership") {
    NormalizedVolume v = random_volume(32, 8, 8, 8);
    for (auto& x : v.voxels) x *= 0.1f;
    const int center = 10;
    v.voxels[(static_cast<std::size_t>(center + 4) * 8 + 3) * 8 + 4] = 0.99f;
    auto s = mip::build_mip_stack(v, center);
    const std::size_t px = (3u * 8 + 4);
    CHECK(s.forward[1].pixels[px] == 0.99f);  // 5 mm: slices 10..14
    CHECK(s.forward[2].pixels[px] == 0.99f);  // 10 mm
    CHECK(s.forward[0].pixels[px] != 0.99f);  // 3 mm: slices 10..12
    CHECK(s.backward[2].pixels[px] != 0.99f); // backward never sees +4
}

TEST_CASE("center out of range and bad spacing are rejected") {
    auto v = random_volume(6, 4, 4, 9);
    CHECK_THROWS_AS(mip::directional_mip(v, -1, 3, Direction::Forward),
                    std::invalid_argument);
    CHECK_THROWS_AS(mip::directional_mip(v, 6, 3, Direction::Forward),
                    std::invalid_argument);
    v.spacing_mm[0] = 2.0;
    CHECK_THROWS_AS(mip::directional_mip(v, 2, 3, Direction::Forward),
                    std::invalid_argument);
}
