#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "meds/candidate_fp.hpp"
#include "meds/volume.hpp"

namespace meds::froc {

// Candidate/annotation matching outcome. Duplicate detections of an already
// hit nodule are ignored (neither TP nor FP), following the public-challenge
// convention.
enum class MatchLabel { TruePositive, FalsePositive, Ignored };

struct MatchResult {
    std::vector<MatchLabel> labels;   // per candidate, input order
    std::vector<int> hit_annotation;  // per candidate: annotation idx or -1
    std::vector<bool> annotation_hit; // per annotation
};

// Greedy by descending candidate theta; a candidate is a hit when its centroid
// lies within diameter/2 mm of an unclaimed annotation in the same scan.
MatchResult match_candidates(const std::vector<cand::Candidate>& candidates,
                             const std::vector<Annotation>& annotations);

struct FROCCurve {
    // (fp_per_scan, sensitivity), sorted by fp_per_scan ascending.
    std::vector<std::pair<double, double>> points;
};

FROCCurve froc_curve(const std::vector<cand::Candidate>& candidates,
                     const std::vector<Annotation>& annotations, int num_scans);

// Step-function convention: sensitivity at the largest achieved fp/scan <=
// target, 0 when none. Linear interpolation available behind the flag.
double sensitivity_at(const FROCCurve& curve, double fp_per_scan_target,
                      bool interpolate = false);

inline constexpr std::array<double, 7> kCpmOperatingPoints{0.125, 0.25, 0.5,
                                                           1.0,   2.0,  4.0, 8.0};

struct CPMReport {
    std::array<double, 7> sensitivities{};
    double cpm = 0;
};

CPMReport cpm(const FROCCurve& curve, bool interpolate = false);

struct CandidateStageReport {
    double sensitivity = 0;   // fraction of annotations hit, pre-reduction
    std::size_t total_candidates = 0;
    double candidates_per_scan = 0;
    std::size_t false_positives = 0;
    double fps_per_scan = 0;
};

CandidateStageReport candidate_stage_report(
    const std::vector<cand::Candidate>& candidates,
    const std::vector<Annotation>& annotations, int num_scans);

// Pick the tau that maximally cuts false positives subject to losing at most
// max_sensitivity_loss (absolute) against the tau=0 baseline.
struct TauChoice {
    double tau = 0;
    double sensitivity = 0;
    double fps_per_scan = 0;
};
TauChoice tune_tau(const std::vector<cand::Candidate>& candidates,
                   const std::vector<Annotation>& annotations, int num_scans,
                   double max_sensitivity_loss);

void write_froc_csv(const std::filesystem::path& path, const FROCCurve& curve);
FROCCurve read_froc_csv(const std::filesystem::path& path);

// Minimal vector plot of one or more FROC curves (log2 x-axis).
void write_froc_svg(const std::filesystem::path& path,
                    const std::vector<FROCCurve>& curves,
                    const std::vector<std::string>& labels);

} // namespace meds::froc
