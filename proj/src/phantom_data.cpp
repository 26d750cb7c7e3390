#include "meds/phantom_data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace meds::phantom {

namespace {

constexpr double kBackgroundHU = -1000.0;
constexpr double kBodyHU = 40.0;
constexpr double kLungHU = -800.0;
constexpr double kNoduleHU = 30.0;
constexpr double kVesselHU = 30.0;

struct Vec3 {
    double z, y, x;
};

double dot(const Vec3& a, const Vec3& b) { return a.z * b.z + a.y * b.y + a.x * b.x; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.z - b.z, a.y - b.y, a.x - b.x}; }
Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.z + b.z, a.y + b.y, a.x + b.x}; }
Vec3 operator*(const Vec3& a, double s) { return {a.z * s, a.y * s, a.x * s}; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Ellipsoid {
    Vec3 center;
    Vec3 semi;
    double norm2(const Vec3& p) const {
        const Vec3 d = p - center;
        const double z = d.z / semi.z, y = d.y / semi.y, x = d.x / semi.x;
        return z * z + y * y + x * x;
    }
};

// Paint a bright value with smooth partial-volume edges; keeps the brighter of
// the current and blended values so overlapping structures merge cleanly.
void paint_bright(float& voxel, double target, double coverage) {
    if (coverage <= 0) return;
    const double c = std::min(1.0, coverage);
    const double blended = voxel + (target - voxel) * c;
    voxel = static_cast<float>(std::max<double>(voxel, blended));
}

double edge_coverage(double signed_dist_mm, double edge_mm) {
    return std::clamp(0.5 + signed_dist_mm / (2.0 * edge_mm), 0.0, 1.0);
}

double dist_point_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = dot(ab, ab);
    if (len2 <= 0) return norm(p - a);
    const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
    return norm(p - (a + ab * t));
}

} // namespace

void PhantomSpec::validate() const {
    if (volume_shape[0] < 4 || volume_shape[1] < 8 || volume_shape[2] < 8)
        throw std::invalid_argument("PhantomSpec: volume_shape too small");
    for (double s : spacing_mm)
        if (!(s > 0)) throw std::invalid_argument("PhantomSpec: spacing must be > 0");
    if (n_nodules < 0 || n_vessels < 0)
        throw std::invalid_argument("PhantomSpec: negative structure count");
    if (nodule_diameter_range_mm[0] < 3.0 || nodule_diameter_range_mm[1] > 30.0 ||
        nodule_diameter_range_mm[0] > nodule_diameter_range_mm[1])
        throw std::invalid_argument(
            "PhantomSpec: nodule diameters must lie within [3, 30] mm");
    if (noise_sigma_hu < 0)
        throw std::invalid_argument("PhantomSpec: noise sigma must be >= 0");
}

PhantomResult generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    const int nz = spec.volume_shape[0], ny = spec.volume_shape[1],
              nx = spec.volume_shape[2];
    const double sz = spec.spacing_mm[0], sy = spec.spacing_mm[1],
                 sx = spec.spacing_mm[2];
    const double fz = nz * sz, fy = ny * sy, fx = nx * sx;
    const double edge = 0.5 * std::cbrt(sz * sy * sx);

    CTVolume vol;
    vol.resize(nz, ny, nx, static_cast<float>(kBackgroundHU));
    vol.spacing_mm = {sz, sy, sx};
    vol.scan_id = spec.scan_id;

    auto world = [&](int z, int y, int x) {
        return Vec3{z * sz, y * sy, x * sx};
    };

    const Vec3 center{(nz - 1) * sz / 2.0, (ny - 1) * sy / 2.0, (nx - 1) * sx / 2.0};

    // Body: elliptical cylinder along z.
    const double body_ay = 0.42 * fy, body_ax = 0.45 * fx;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const Vec3 p = world(z, y, x);
                const double ry = (p.y - center.y) / body_ay;
                const double rx = (p.x - center.x) / body_ax;
                const double rho = std::sqrt(ry * ry + rx * rx);
                const double d = (1.0 - rho) * std::min(body_ay, body_ax);
                const double cov = edge_coverage(d, edge);
                if (cov > 0)
                    paint_bright(vol.at(z, y, x), kBodyHU, cov);
            }

    // Two lung ellipsoids inside the body.
    const Vec3 lung_semi{0.40 * fz, 0.27 * fy, 0.16 * fx};
    const double lung_dx = 0.20 * fx;
    const std::array<Ellipsoid, 2> lungs{
        Ellipsoid{{center.z, center.y, center.x - lung_dx}, lung_semi},
        Ellipsoid{{center.z, center.y, center.x + lung_dx}, lung_semi}};
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const Vec3 p = world(z, y, x);
                for (const auto& lung : lungs) {
                    const double nrm = std::sqrt(lung.norm2(p));
                    const double d = (1.0 - nrm) *
                                     std::min({lung.semi.z, lung.semi.y, lung.semi.x});
                    const double cov = edge_coverage(d, edge);
                    if (cov > 0) {
                        float& v = vol.at(z, y, x);
                        v = static_cast<float>(v + (kLungHU - v) * std::min(1.0, cov));
                    }
                }
            }

    auto uniform = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };

    // Nodules: solid spheres fully inside a lung, pairwise separated.
    std::vector<Annotation> annotations;
    std::vector<std::pair<Vec3, double>> placed; // (center, radius)
    for (int i = 0; i < spec.n_nodules; ++i) {
        const double diam = uniform(spec.nodule_diameter_range_mm[0],
                                    spec.nodule_diameter_range_mm[1]);
        const double r = diam / 2.0;
        bool ok = false;
        for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
            const auto& lung = lungs[rng() % 2];
            const Vec3 scale{std::max(0.0, (lung.semi.z - r) / lung.semi.z),
                             std::max(0.0, (lung.semi.y - r) / lung.semi.y),
                             std::max(0.0, (lung.semi.x - r) / lung.semi.x)};
            if (scale.z <= 0 || scale.y <= 0 || scale.x <= 0) continue;
            const Vec3 q{uniform(-1, 1), uniform(-1, 1), uniform(-1, 1)};
            if (dot(q, q) > 1.0) continue;
            const Vec3 c = lung.center + Vec3{q.z * lung.semi.z * scale.z,
                                              q.y * lung.semi.y * scale.y,
                                              q.x * lung.semi.x * scale.x};
            bool clash = false;
            for (const auto& [pc, pr] : placed)
                if (norm(c - pc) < r + pr + 2.0) clash = true;
            if (clash) continue;
            placed.push_back({c, r});
            Annotation a;
            a.scan_id = spec.scan_id;
            a.center_z_mm = c.z;
            a.center_y_mm = c.y;
            a.center_x_mm = c.x;
            a.diameter_mm = diam;
            annotations.push_back(a);
            ok = true;
        }
        if (!ok)
            throw DataError("nodule placement failed after bounded retries (seed " +
                            std::to_string(spec.seed) + ")");
    }

    // Vessels: jittered z-biased polylines with occasional sub-3mm bulges.
    struct Sphere {
        Vec3 c;
        double r;
    };
    std::vector<Sphere> bulges;
    std::vector<std::pair<std::array<Vec3, 2>, double>> segments;
    for (int i = 0; i < spec.n_vessels; ++i) {
        const auto& lung = lungs[static_cast<std::size_t>(i) % 2];
        const double r =
            uniform(spec.vessel_radius_range_mm[0], spec.vessel_radius_range_mm[1]);
        Vec3 p{lung.center.z + uniform(-0.5, 0.5) * lung.semi.z,
               lung.center.y + uniform(-0.5, 0.5) * lung.semi.y,
               lung.center.x + uniform(-0.5, 0.5) * lung.semi.x};
        Vec3 dir{rng() % 2 ? 1.0 : -1.0, uniform(-0.35, 0.35), uniform(-0.35, 0.35)};
        dir = dir * (1.0 / norm(dir));
        for (int step = 0; step < 24; ++step) {
            const Vec3 q = p + dir * 3.0;
            if (lung.norm2(q) > 0.92 * 0.92) break;
            segments.push_back({{p, q}, r});
            if (uniform(0, 1) < spec.vessel_bulge_rate)
                bulges.push_back({q, std::min(1.5, r * uniform(1.4, 2.0))});
            p = q;
            Vec3 jitter{uniform(-0.2, 0.2), uniform(-0.3, 0.3), uniform(-0.3, 0.3)};
            dir = dir + jitter;
            dir = dir * (1.0 / norm(dir));
        }
    }

    auto paint_sphere = [&](const Vec3& c, double r, double hu) {
        const int z0 = std::max(0, static_cast<int>((c.z - r - 2 * edge) / sz));
        const int z1 = std::min(nz - 1, static_cast<int>((c.z + r + 2 * edge) / sz) + 1);
        const int y0 = std::max(0, static_cast<int>((c.y - r - 2 * edge) / sy));
        const int y1 = std::min(ny - 1, static_cast<int>((c.y + r + 2 * edge) / sy) + 1);
        const int x0 = std::max(0, static_cast<int>((c.x - r - 2 * edge) / sx));
        const int x1 = std::min(nx - 1, static_cast<int>((c.x + r + 2 * edge) / sx) + 1);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d = r - norm(world(z, y, x) - c);
                    paint_bright(vol.at(z, y, x), hu, edge_coverage(d, edge));
                }
    };

    for (const auto& [seg, r] : segments) {
        const Vec3 &a = seg[0], &b = seg[1];
        const double pad = r + 2 * edge;
        const int z0 = std::max(0, static_cast<int>((std::min(a.z, b.z) - pad) / sz));
        const int z1 =
            std::min(nz - 1, static_cast<int>((std::max(a.z, b.z) + pad) / sz) + 1);
        const int y0 = std::max(0, static_cast<int>((std::min(a.y, b.y) - pad) / sy));
        const int y1 =
            std::min(ny - 1, static_cast<int>((std::max(a.y, b.y) + pad) / sy) + 1);
        const int x0 = std::max(0, static_cast<int>((std::min(a.x, b.x) - pad) / sx));
        const int x1 =
            std::min(nx - 1, static_cast<int>((std::max(a.x, b.x) + pad) / sx) + 1);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const double d = r - dist_point_segment(world(z, y, x), a, b);
                    paint_bright(vol.at(z, y, x), kVesselHU, edge_coverage(d, edge));
                }
    }
    for (const auto& b : bulges) paint_sphere(b.c, b.r, kVesselHU);
    for (std::size_t i = 0; i < placed.size(); ++i)
        paint_sphere(placed[i].first, placed[i].second, kNoduleHU);

    if (spec.noise_sigma_hu > 0) {
        std::normal_distribution<double> noise(0.0, spec.noise_sigma_hu);
        for (auto& v : vol.voxels) v = static_cast<float>(v + noise(rng));
    }
    for (auto& v : vol.voxels)
        v = static_cast<float>(
            std::min<double>(32767, std::max<double>(-32768, std::llround(v))));

    return {std::move(vol), std::move(annotations)};
}

} // namespace meds::phantom
