#include "meds/candidate_fp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "meds/labeling.hpp"
#include "meds/mip_gen.hpp"
#include "meds/trainer.hpp"

namespace meds::cand {

ProbabilityVolumeSet infer_volume(model::MedsNet<float>& net,
                                  const NormalizedVolume& scan, int batch_slices) {
    const auto& cfg = net.config();
    if (scan.ny != cfg.input_size || scan.nx != cfg.input_size)
        throw std::invalid_argument("infer_volume: scan in-plane size " +
                                    std::to_string(scan.ny) +
                                    " does not match model input size " +
                                    std::to_string(cfg.input_size));
    ProbabilityVolumeSet out;
    out.nz = scan.nz;
    out.ny = scan.ny;
    out.nx = scan.nx;
    const std::size_t plane = static_cast<std::size_t>(scan.ny) * scan.nx;
    out.main.assign(static_cast<std::size_t>(scan.nz) * plane, 0.0f);
    out.aux.assign(static_cast<std::size_t>(cfg.num_aux_detectors),
                   std::vector<float>(static_cast<std::size_t>(scan.nz) * plane, 0.0f));

    train::ScanData sd;
    sd.volume = scan;

    nn::NoGradGuard guard;
    for (int z0 = 0; z0 < scan.nz; z0 += batch_slices) {
        const int z1 = std::min(scan.nz, z0 + batch_slices);
        const int B = z1 - z0;
        nn::Tensor<float> patch({B, 1, cfg.patch_depth, scan.ny, scan.nx});
        nn::Tensor<float> fm({B, 3, scan.ny, scan.nx});
        nn::Tensor<float> bm({B, 3, scan.ny, scan.nx});
        for (int b = 0; b < B; ++b) {
            train::PatchSample s =
                train::make_patch_sample(sd, z0 + b, cfg.patch_depth, false);
            std::copy(s.patch.begin(), s.patch.end(),
                      patch.data() +
                          static_cast<std::size_t>(b) * cfg.patch_depth * plane);
            for (int t = 0; t < 3; ++t) {
                std::copy(s.mips.forward[t].pixels.begin(),
                          s.mips.forward[t].pixels.end(),
                          fm.data() + (static_cast<std::size_t>(b) * 3 + t) * plane);
                std::copy(s.mips.backward[t].pixels.begin(),
                          s.mips.backward[t].pixels.end(),
                          bm.data() + (static_cast<std::size_t>(b) * 3 + t) * plane);
            }
        }
        auto outputs = net.forward(nn::make_var(std::move(patch), false),
                                   nn::make_var(std::move(fm), false),
                                   nn::make_var(std::move(bm), false), false);
        for (int b = 0; b < B; ++b) {
            std::copy_n(outputs.main_prob->val.data() + static_cast<std::size_t>(b) * plane,
                        plane, out.main.data() + static_cast<std::size_t>(z0 + b) * plane);
            for (int k = 0; k < cfg.num_aux_detectors; ++k)
                std::copy_n(outputs.aux_probs[static_cast<std::size_t>(k)]->val.data() +
                                static_cast<std::size_t>(b) * plane,
                            plane,
                            out.aux[static_cast<std::size_t>(k)].data() +
                                static_cast<std::size_t>(z0 + b) * plane);
        }
    }
    return out;
}

std::vector<Candidate> extract_candidates(const ProbabilityVolumeSet& probs,
                                          const NormalizedVolume& scan,
                                          const CandidateConfig& cfg) {
    if (!(cfg.bin_threshold > 0.0 && cfg.bin_threshold < 1.0))
        throw std::invalid_argument("extract_candidates: bin_threshold in (0,1)");
    std::vector<std::uint8_t> binary(probs.main.size());
    for (std::size_t i = 0; i < probs.main.size(); ++i)
        binary[i] = probs.main[i] > cfg.bin_threshold ? 1 : 0;

    std::vector<int> labels;
    const int ncomp =
        label_components(binary, probs.nz, probs.ny, probs.nx, cfg.connectivity, labels);
    if (ncomp == 0) return {};

    struct Acc {
        int z0 = 1 << 30, y0 = 1 << 30, x0 = 1 << 30;
        int z1 = -1, y1 = -1, x1 = -1;
        double sz = 0, sy = 0, sx = 0, sp = 0;
        std::size_t n = 0;
    };
    std::vector<Acc> acc(static_cast<std::size_t>(ncomp) + 1);
    for (int z = 0; z < probs.nz; ++z)
        for (int y = 0; y < probs.ny; ++y)
            for (int x = 0; x < probs.nx; ++x) {
                const std::size_t i = probs.index(z, y, x);
                const int l = labels[i];
                if (l == 0) continue;
                Acc& a = acc[static_cast<std::size_t>(l)];
                a.z0 = std::min(a.z0, z);
                a.y0 = std::min(a.y0, y);
                a.x0 = std::min(a.x0, x);
                a.z1 = std::max(a.z1, z);
                a.y1 = std::max(a.y1, y);
                a.x1 = std::max(a.x1, x);
                a.sz += z;
                a.sy += y;
                a.sx += x;
                a.sp += probs.main[i];
                ++a.n;
            }

    std::vector<Candidate> out;
    for (int l = 1; l <= ncomp; ++l) {
        const Acc& a = acc[static_cast<std::size_t>(l)];
        if (a.n < cfg.min_voxels) continue;
        Candidate c;
        c.scan_id = scan.scan_id;
        c.z0 = a.z0;
        c.y0 = a.y0;
        c.x0 = a.x0;
        c.z1 = a.z1;
        c.y1 = a.y1;
        c.x1 = a.x1;
        c.voxel_count = a.n;
        c.centroid_z = a.sz / static_cast<double>(a.n);
        c.centroid_y = a.sy / static_cast<double>(a.n);
        c.centroid_x = a.sx / static_cast<double>(a.n);
        c.centroid_z_mm = scan.origin_mm[0] + c.centroid_z * scan.spacing_mm[0];
        c.centroid_y_mm = scan.origin_mm[1] + c.centroid_y * scan.spacing_mm[1];
        c.centroid_x_mm = scan.origin_mm[2] + c.centroid_x * scan.spacing_mm[2];
        c.mean_main_prob = a.sp / static_cast<double>(a.n);
        out.push_back(c);
    }
    return out;
}

std::pair<bool, double> is_true_positive(const Candidate& c,
                                         const ProbabilityVolumeSet& probs,
                                         double tau) {
    if (c.z1 < c.z0 || c.y1 < c.y0 || c.x1 < c.x0)
        throw std::invalid_argument("is_true_positive: degenerate box");
    if (c.z0 < 0 || c.z1 >= probs.nz || c.y0 < 0 || c.y1 >= probs.ny || c.x0 < 0 ||
        c.x1 >= probs.nx)
        throw std::invalid_argument("is_true_positive: box outside volume");
    const std::size_t k = probs.aux.size();
    if (k == 0) throw std::invalid_argument("is_true_positive: no auxiliary volumes");
    const std::size_t n = static_cast<std::size_t>(c.z1 - c.z0 + 1) *
                          (c.y1 - c.y0 + 1) * (c.x1 - c.x0 + 1);
    double sum = 0;
    for (const auto& vol : probs.aux)
        for (int z = c.z0; z <= c.z1; ++z)
            for (int y = c.y0; y <= c.y1; ++y) {
                const float* row = vol.data() + probs.index(z, y, c.x0);
                for (int x = 0; x <= c.x1 - c.x0; ++x) sum += row[x];
            }
    const double theta = sum / (static_cast<double>(n) * static_cast<double>(k));
    return {thr(theta, tau) == 1, theta};
}

std::vector<Candidate> reduce_false_positives(std::vector<Candidate>& candidates,
                                              const ProbabilityVolumeSet& probs,
                                              double tau) {
    std::vector<Candidate> kept;
    for (auto& c : candidates) {
        auto [tp, theta] = is_true_positive(c, probs, tau);
        c.theta = theta;
        c.survived = tp;
        if (tp) kept.push_back(c);
    }
    return kept;
}

void write_candidates_csv(const std::filesystem::path& path,
                          const std::vector<Candidate>& candidates) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write candidates: " + path.string());
    f << "scan_id,z0,y0,x0,z1,y1,x1,centroid_x_mm,centroid_y_mm,centroid_z_mm,"
         "theta,survived\n";
    f.precision(10);
    for (const auto& c : candidates)
        f << c.scan_id << "," << c.z0 << "," << c.y0 << "," << c.x0 << "," << c.z1
          << "," << c.y1 << "," << c.x1 << "," << c.centroid_x_mm << ","
          << c.centroid_y_mm << "," << c.centroid_z_mm << "," << c.theta << ","
          << (c.survived ? 1 : 0) << "\n";
}

std::vector<Candidate> read_candidates_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open candidates: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty candidate file: " + path.string());
    std::vector<Candidate> out;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 12)
            throw DataError("candidate file " + path.string() + " line " +
                            std::to_string(line_no) + ": expected 12 fields");
        try {
            Candidate c;
            c.scan_id = fields[0];
            c.z0 = std::stoi(fields[1]);
            c.y0 = std::stoi(fields[2]);
            c.x0 = std::stoi(fields[3]);
            c.z1 = std::stoi(fields[4]);
            c.y1 = std::stoi(fields[5]);
            c.x1 = std::stoi(fields[6]);
            c.centroid_x_mm = std::stod(fields[7]);
            c.centroid_y_mm = std::stod(fields[8]);
            c.centroid_z_mm = std::stod(fields[9]);
            c.theta = std::stod(fields[10]);
            c.survived = std::stoi(fields[11]) != 0;
            out.push_back(std::move(c));
        } catch (const std::exception&) {
            throw DataError("candidate file " + path.string() + " line " +
                            std::to_string(line_no) + ": malformed field");
        }
    }
    return out;
}

} // namespace meds::cand
