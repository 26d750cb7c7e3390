#include "meds/labeling.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace meds {

int label_components(const std::vector<std::uint8_t>& mask, int nz, int ny,
                     int nx, int connectivity, std::vector<int>& labels) {
    if (connectivity != 6 && connectivity != 26)
        throw std::invalid_argument("label_components: connectivity must be 6 or 26");
    const std::size_t n = static_cast<std::size_t>(nz) * ny * nx;
    labels.assign(n, 0);

    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && dy == 0 && dx == 0) continue;
                if (connectivity == 6 &&
                    std::abs(dz) + std::abs(dy) + std::abs(dx) != 1)
                    continue;
                offsets.push_back({dz, dy, dx});
            }

    int next_label = 0;
    std::vector<std::size_t> queue;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!mask[seed] || labels[seed]) continue;
        ++next_label;
        labels[seed] = next_label;
        queue.clear();
        queue.push_back(seed);
        while (!queue.empty()) {
            const std::size_t cur = queue.back();
            queue.pop_back();
            const int z = static_cast<int>(cur / (static_cast<std::size_t>(ny) * nx));
            const int rem = static_cast<int>(cur % (static_cast<std::size_t>(ny) * nx));
            const int y = rem / nx;
            const int x = rem % nx;
            for (const auto& [dz, dy, dx] : offsets) {
                const int zz = z + dz, yy = y + dy, xx = x + dx;
                if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx)
                    continue;
                const std::size_t idx =
                    (static_cast<std::size_t>(zz) * ny + yy) * nx + xx;
                if (mask[idx] && !labels[idx]) {
                    labels[idx] = next_label;
                    queue.push_back(idx);
                }
            }
        }
    }
    return next_label;
}

std::vector<std::size_t> component_sizes(const std::vector<int>& labels,
                                         int num_components) {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(num_components) + 1, 0);
    for (int l : labels)
        if (l > 0) ++sizes[static_cast<std::size_t>(l)];
    return sizes;
}

} // namespace meds
