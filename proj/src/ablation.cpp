#include "meds/ablation.hpp"

#include <algorithm>
#include <sstream>

namespace meds::ablation {

Variant build_variant(const std::string& preset, model::ModelConfig base_model,
                      train::TrainConfig base_train) {
    Variant v{base_model, base_train};
    auto& m = v.model;
    auto set_inputs = [&](bool patch, bool fwd, bool bwd) {
        m.use_patch_input = patch;
        m.use_forward_mip = fwd;
        m.use_backward_mip = bwd;
    };
    auto distillation_off = [&]() {
        m.num_aux_detectors = 0;
        v.train.loss.alpha = 0.0;
        v.train.loss.lambda_feat = 0.0;
    };

    if (preset == "single_3d") {
        set_inputs(true, false, false);
    } else if (preset == "single_fwd") {
        set_inputs(false, true, false);
    } else if (preset == "single_bwd") {
        set_inputs(false, false, true);
    } else if (preset == "dual_3d_fwd") {
        set_inputs(true, true, false);
    } else if (preset == "dual_fwd_bwd") {
        set_inputs(false, true, true);
    } else if (preset == "multi_plain") {
        set_inputs(true, true, true);
        m.use_attention = false;
        distillation_off();
    } else if (preset == "multi_attn") {
        set_inputs(true, true, true);
        m.use_attention = true;
        distillation_off();
    } else if (preset == "multi_sd") {
        set_inputs(true, true, true);
        m.use_attention = false;
    } else if (preset == "meds_full") {
        set_inputs(true, true, true);
        m.use_attention = true;
    } else {
        throw std::invalid_argument("unknown ablation preset: " + preset);
    }
    m.validate();
    return v;
}

namespace {

int stratum_of(double diameter_mm) {
    if (diameter_mm < kSizeStrataEdges[0]) return 0;
    if (diameter_mm < kSizeStrataEdges[1]) return 1;
    return 2;
}

DetectorRow make_row(const std::string& name,
                     const std::vector<cand::Candidate>& candidates,
                     const std::vector<Annotation>& annotations, int num_scans) {
    DetectorRow row;
    row.detector = name;
    auto match = froc::match_candidates(candidates, annotations);
    for (std::size_t ai = 0; ai < annotations.size(); ++ai)
        if (match.annotation_hit[ai]) {
            ++row.detected_by_stratum[static_cast<std::size_t>(
                stratum_of(annotations[ai].diameter_mm))];
            ++row.detected_total;
        }
    row.sensitivity = annotations.empty()
                          ? 0.0
                          : static_cast<double>(row.detected_total) /
                                static_cast<double>(annotations.size());
    row.false_positives = static_cast<std::size_t>(
        std::count(match.labels.begin(), match.labels.end(),
                   froc::MatchLabel::FalsePositive));
    row.fps_per_scan =
        num_scans > 0 ? static_cast<double>(row.false_positives) / num_scans : 0.0;
    return row;
}

} // namespace

std::vector<DetectorRow> per_detector_table(
    const std::vector<std::vector<cand::Candidate>>& per_detector_candidates,
    const std::vector<Annotation>& annotations, int num_scans) {
    std::vector<DetectorRow> rows;
    const std::size_t n = per_detector_candidates.size();
    for (std::size_t d = 0; d < n; ++d) {
        const std::string name =
            d + 1 == n ? "main" : "aux" + std::to_string(d + 1);
        rows.push_back(
            make_row(name, per_detector_candidates[d], annotations, num_scans));
    }
    // Ensemble: pool every detector's candidates. Unique annotations hit are
    // counted once; false positives accumulate across detectors.
    std::vector<bool> hit(annotations.size(), false);
    std::size_t fps = 0;
    for (const auto& cands : per_detector_candidates) {
        auto match = froc::match_candidates(cands, annotations);
        for (std::size_t ai = 0; ai < annotations.size(); ++ai)
            if (match.annotation_hit[ai]) hit[ai] = true;
        fps += static_cast<std::size_t>(std::count(match.labels.begin(),
                                                   match.labels.end(),
                                                   froc::MatchLabel::FalsePositive));
    }
    DetectorRow ens;
    ens.detector = "ensemble";
    for (std::size_t ai = 0; ai < annotations.size(); ++ai)
        if (hit[ai]) {
            ++ens.detected_by_stratum[static_cast<std::size_t>(
                stratum_of(annotations[ai].diameter_mm))];
            ++ens.detected_total;
        }
    ens.sensitivity = annotations.empty()
                          ? 0.0
                          : static_cast<double>(ens.detected_total) /
                                static_cast<double>(annotations.size());
    ens.false_positives = fps;
    ens.fps_per_scan = num_scans > 0 ? static_cast<double>(fps) / num_scans : 0.0;
    rows.push_back(std::move(ens));
    return rows;
}

std::string format_detector_table(const std::vector<DetectorRow>& rows,
                                  std::size_t total_nodules) {
    std::ostringstream os;
    os << "detector,detected_3_10mm,detected_10_20mm,detected_ge20mm,"
          "detected_total,total_nodules,sensitivity,false_positives,fps_per_scan\n";
    os.precision(6);
    for (const auto& r : rows)
        os << r.detector << "," << r.detected_by_stratum[0] << ","
           << r.detected_by_stratum[1] << "," << r.detected_by_stratum[2] << ","
           << r.detected_total << "," << total_nodules << "," << r.sensitivity << ","
           << r.false_positives << "," << r.fps_per_scan << "\n";
    return os.str();
}

} // namespace meds::ablation
