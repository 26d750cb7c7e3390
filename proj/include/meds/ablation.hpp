#pragma once

#include <string>
#include <vector>

#include "meds/froc_eval.hpp"
#include "meds/meds_model.hpp"
#include "meds/trainer.hpp"

namespace meds::ablation {

// Downgraded variants of the full network, configured over one code path:
// encoder wiring, attention units, and the self-distillation heads.
inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{
        "single_3d",  "single_fwd",   "single_bwd", "dual_3d_fwd", "dual_fwd_bwd",
        "multi_plain", "multi_attn",  "multi_sd",   "meds_full"};
    return names;
}

struct Variant {
    model::ModelConfig model;
    train::TrainConfig train;
};

// Applies a preset on top of base configs. Distillation-off presets drop the
// auxiliary heads entirely and zero alpha/lambda.
Variant build_variant(const std::string& preset, model::ModelConfig base_model,
                      train::TrainConfig base_train);

// Per-detector evaluation rows for the size-stratified table.
struct DetectorRow {
    std::string detector; // "aux1".."aux4", "main", "ensemble", "no_sd"
    std::array<std::size_t, 3> detected_by_stratum{}; // 3-10, 10-20, >=20 mm
    std::size_t detected_total = 0;
    double sensitivity = 0;
    std::size_t false_positives = 0;
    double fps_per_scan = 0;
};

inline constexpr std::array<double, 2> kSizeStrataEdges{10.0, 20.0};

// Candidate sets per detector (aux1..k then main); the ensemble row pools all
// candidates from every detector.
std::vector<DetectorRow> per_detector_table(
    const std::vector<std::vector<cand::Candidate>>& per_detector_candidates,
    const std::vector<Annotation>& annotations, int num_scans);

std::string format_detector_table(const std::vector<DetectorRow>& rows,
                                  std::size_t total_nodules);

} // namespace meds::ablation
