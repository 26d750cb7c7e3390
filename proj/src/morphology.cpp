#include "meds/morphology.hpp"

#include <algorithm>
#include <limits>

namespace meds {

namespace {

constexpr float kInf = std::numeric_limits<float>::max() / 4;

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher).
void edt_1d(const float* f, float* out, int n, std::vector<int>& v,
            std::vector<float>& z) {
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        float s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0f * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        out[q] = (q - p) * (q - p) + f[p];
    }
}

} // namespace

void squared_edt(const std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                 std::vector<float>& dist2) {
    const std::size_t n = static_cast<std::size_t>(nz) * ny * nx;
    dist2.assign(n, kInf);
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) dist2[i] = 0.0f;

    std::vector<float> line, out;
    std::vector<int> v;
    std::vector<float> z;

    // x axis
    line.resize(static_cast<std::size_t>(nx));
    out.resize(static_cast<std::size_t>(nx));
    for (int zz = 0; zz < nz; ++zz)
        for (int yy = 0; yy < ny; ++yy) {
            float* row = dist2.data() + (static_cast<std::size_t>(zz) * ny + yy) * nx;
            edt_1d(row, out.data(), nx, v, z);
            std::copy(out.begin(), out.begin() + nx, row);
        }
    // y axis
    line.resize(static_cast<std::size_t>(ny));
    out.resize(static_cast<std::size_t>(ny));
    for (int zz = 0; zz < nz; ++zz)
        for (int xx = 0; xx < nx; ++xx) {
            for (int yy = 0; yy < ny; ++yy)
                line[yy] = dist2[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx];
            edt_1d(line.data(), out.data(), ny, v, z);
            for (int yy = 0; yy < ny; ++yy)
                dist2[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx] = out[yy];
        }
    // z axis
    line.resize(static_cast<std::size_t>(nz));
    out.resize(static_cast<std::size_t>(nz));
    for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
            for (int zz = 0; zz < nz; ++zz)
                line[zz] = dist2[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx];
            edt_1d(line.data(), out.data(), nz, v, z);
            for (int zz = 0; zz < nz; ++zz)
                dist2[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx] = out[zz];
        }
}

void dilate_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                   double radius) {
    if (radius <= 0) return;
    std::vector<float> d2;
    squared_edt(mask, nz, ny, nx, d2);
    const float r2 = static_cast<float>(radius * radius);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (d2[i] <= r2) mask[i] = 1;
}

void erode_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                  double radius) {
    if (radius <= 0) return;
    std::vector<std::uint8_t> inv(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) inv[i] = mask[i] ? 0 : 1;
    std::vector<float> d2;
    squared_edt(inv, nz, ny, nx, d2);
    const float r2 = static_cast<float>(radius * radius);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (d2[i] <= r2) mask[i] = 0;
}

void close_sphere(std::vector<std::uint8_t>& mask, int nz, int ny, int nx,
                  double radius) {
    dilate_sphere(mask, nz, ny, nx, radius);
    erode_sphere(mask, nz, ny, nx, radius);
}

void fill_holes_per_slice(std::vector<std::uint8_t>& mask, int nz, int ny,
                          int nx) {
    const std::size_t plane = static_cast<std::size_t>(ny) * nx;
    std::vector<std::uint8_t> reach(plane);
    std::vector<int> stack;
    for (int zz = 0; zz < nz; ++zz) {
        std::uint8_t* m = mask.data() + static_cast<std::size_t>(zz) * plane;
        std::fill(reach.begin(), reach.end(), 0);
        stack.clear();
        auto push = [&](int y, int x) {
            const int i = y * nx + x;
            if (!m[i] && !reach[i]) {
                reach[i] = 1;
                stack.push_back(i);
            }
        };
        for (int x = 0; x < nx; ++x) {
            push(0, x);
            push(ny - 1, x);
        }
        for (int y = 0; y < ny; ++y) {
            push(y, 0);
            push(y, nx - 1);
        }
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            const int y = i / nx, x = i % nx;
            if (y > 0) push(y - 1, x);
            if (y < ny - 1) push(y + 1, x);
            if (x > 0) push(y, x - 1);
            if (x < nx - 1) push(y, x + 1);
        }
        for (std::size_t i = 0; i < plane; ++i)
            if (!m[i] && !reach[i]) m[i] = 1;
    }
}

} // namespace meds
