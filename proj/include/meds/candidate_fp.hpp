#pragma once

#include <filesystem>
#include <vector>

#include "meds/meds_model.hpp"
#include "meds/volume.hpp"

namespace meds::cand {

// Main + auxiliary probability volumes, congruent with the scan.
struct ProbabilityVolumeSet {
    int nz = 0, ny = 0, nx = 0;
    std::vector<float> main;              // nz*ny*nx in [0,1]
    std::vector<std::vector<float>> aux;  // k volumes, same shape
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
};

// A region of proposal from the main detector, with the auxiliary-mean
// aggregate probability used by the false-positive test.
struct Candidate {
    std::string scan_id;
    int z0 = 0, y0 = 0, x0 = 0; // inclusive box
    int z1 = 0, y1 = 0, x1 = 0;
    double centroid_z = 0, centroid_y = 0, centroid_x = 0; // voxel units
    double centroid_z_mm = 0, centroid_y_mm = 0, centroid_x_mm = 0;
    std::size_t voxel_count = 0;
    double mean_main_prob = 0;
    double theta = -1.0; // aggregate aux probability; -1 = undetermined
    bool survived = true;
};

struct CandidateConfig {
    double bin_threshold = 0.5; // binarization of the main probability volume
    std::size_t min_voxels = 3;
    int connectivity = 26; // 26 or 6
    double tau = 0.3;      // threshold on theta
};

// Slide the per-slice network over the whole scan and stack the maps.
ProbabilityVolumeSet infer_volume(model::MedsNet<float>& net,
                                  const NormalizedVolume& scan,
                                  int batch_slices = 4);

// Binarize the main volume, take connected components, emit tight boxes.
std::vector<Candidate> extract_candidates(const ProbabilityVolumeSet& probs,
                                          const NormalizedVolume& scan,
                                          const CandidateConfig& cfg);

// Binarization rule: 1 when theta > tau, else 0 (strict).
inline int thr(double theta, double tau) { return theta > tau ? 1 : 0; }

// Mean of all auxiliary-volume voxels inside the candidate box, normalized by
// n*k; returns (survives, theta).
std::pair<bool, double> is_true_positive(const Candidate& c,
                                         const ProbabilityVolumeSet& probs,
                                         double tau);

// Applies the same criterion to every candidate: annotates theta on all,
// keeps the ones that pass.
std::vector<Candidate> reduce_false_positives(std::vector<Candidate>& candidates,
                                              const ProbabilityVolumeSet& probs,
                                              double tau);

// Candidate list CSV:
// scan_id,z0,y0,x0,z1,y1,x1,centroid_x_mm,centroid_y_mm,centroid_z_mm,theta,survived
void write_candidates_csv(const std::filesystem::path& path,
                          const std::vector<Candidate>& candidates);
std::vector<Candidate> read_candidates_csv(const std::filesystem::path& path);

} // namespace meds::cand
