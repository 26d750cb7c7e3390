#include "meds/froc_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace meds::froc {

namespace fs = std::filesystem;

MatchResult match_candidates(const std::vector<cand::Candidate>& candidates,
                             const std::vector<Annotation>& annotations) {
    MatchResult r;
    r.labels.assign(candidates.size(), MatchLabel::FalsePositive);
    r.hit_annotation.assign(candidates.size(), -1);
    r.annotation_hit.assign(annotations.size(), false);

    // Greedy by descending score; deterministic tie-break on geometry so the
    // outcome is independent of input order.
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ca = candidates[a];
        const auto& cb = candidates[b];
        if (ca.theta != cb.theta) return ca.theta > cb.theta;
        return std::tie(ca.scan_id, ca.z0, ca.y0, ca.x0, ca.centroid_z_mm) <
               std::tie(cb.scan_id, cb.z0, cb.y0, cb.x0, cb.centroid_z_mm);
    });

    for (std::size_t oi : order) {
        const auto& c = candidates[oi];
        int best_unclaimed = -1;
        double best_dist = 0;
        bool touches_claimed = false;
        for (std::size_t ai = 0; ai < annotations.size(); ++ai) {
            const auto& a = annotations[ai];
            if (a.scan_id != c.scan_id) continue;
            const double dz = c.centroid_z_mm - a.center_z_mm;
            const double dy = c.centroid_y_mm - a.center_y_mm;
            const double dx = c.centroid_x_mm - a.center_x_mm;
            const double dist = std::sqrt(dz * dz + dy * dy + dx * dx);
            if (dist > a.diameter_mm / 2.0) continue;
            if (r.annotation_hit[ai]) {
                touches_claimed = true;
                continue;
            }
            if (best_unclaimed < 0 || dist < best_dist) {
                best_unclaimed = static_cast<int>(ai);
                best_dist = dist;
            }
        }
        if (best_unclaimed >= 0) {
            r.labels[oi] = MatchLabel::TruePositive;
            r.hit_annotation[oi] = best_unclaimed;
            r.annotation_hit[static_cast<std::size_t>(best_unclaimed)] = true;
        } else if (touches_claimed) {
            r.labels[oi] = MatchLabel::Ignored;
        }
    }
    return r;
}

FROCCurve froc_curve(const std::vector<cand::Candidate>& candidates,
                     const std::vector<Annotation>& annotations, int num_scans) {
    if (num_scans <= 0) throw DataError("froc_curve: zero scans");
    MatchResult match = match_candidates(candidates, annotations);

    std::vector<double> thetas;
    for (const auto& c : candidates) thetas.push_back(c.theta);
    std::sort(thetas.begin(), thetas.end(), std::greater<>());
    thetas.erase(std::unique(thetas.begin(), thetas.end()), thetas.end());

    const double n_ann = static_cast<double>(annotations.size());
    FROCCurve curve;
    for (double t : thetas) {
        std::vector<bool> hit(annotations.size(), false);
        std::size_t fps = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (candidates[i].theta < t) continue;
            if (match.labels[i] == MatchLabel::TruePositive)
                hit[static_cast<std::size_t>(match.hit_annotation[i])] = true;
            else if (match.labels[i] == MatchLabel::FalsePositive)
                ++fps;
        }
        const double sens =
            n_ann == 0 ? 0.0
                       : static_cast<double>(std::count(hit.begin(), hit.end(), true)) /
                             n_ann;
        curve.points.push_back({static_cast<double>(fps) / num_scans, sens});
    }
    std::sort(curve.points.begin(), curve.points.end());
    // Collapse duplicate fp/scan values, keeping the best sensitivity.
    std::map<double, double> best;
    for (const auto& [fp, s] : curve.points)
        best[fp] = std::max(best.count(fp) ? best[fp] : 0.0, s);
    curve.points.assign(best.begin(), best.end());
    return curve;
}

double sensitivity_at(const FROCCurve& curve, double target, bool interpolate) {
    if (curve.points.empty()) return 0.0;
    if (!interpolate) {
        double s = 0.0;
        for (const auto& [fp, sens] : curve.points) {
            if (fp <= target)
                s = sens;
            else
                break;
        }
        return s;
    }
    // Linear interpolation, clamped at the ends; (0,0) anchors the left edge.
    double x0 = 0.0, y0 = 0.0;
    for (const auto& [fp, sens] : curve.points) {
        if (fp >= target) {
            if (fp == x0) return sens;
            const double t = (target - x0) / (fp - x0);
            return y0 + t * (sens - y0);
        }
        x0 = fp;
        y0 = sens;
    }
    return curve.points.back().second;
}

CPMReport cpm(const FROCCurve& curve, bool interpolate) {
    if (curve.points.empty()) throw DataError("cpm: empty FROC curve");
    CPMReport r;
    double sum = 0;
    for (std::size_t i = 0; i < kCpmOperatingPoints.size(); ++i) {
        r.sensitivities[i] = sensitivity_at(curve, kCpmOperatingPoints[i], interpolate);
        sum += r.sensitivities[i];
    }
    r.cpm = sum / static_cast<double>(kCpmOperatingPoints.size());
    return r;
}

CandidateStageReport candidate_stage_report(
    const std::vector<cand::Candidate>& candidates,
    const std::vector<Annotation>& annotations, int num_scans) {
    CandidateStageReport r;
    r.total_candidates = candidates.size();
    r.candidates_per_scan =
        num_scans > 0 ? static_cast<double>(candidates.size()) / num_scans : 0.0;
    if (candidates.empty()) return r;
    MatchResult match = match_candidates(candidates, annotations);
    const std::size_t hits = static_cast<std::size_t>(std::count(
        match.annotation_hit.begin(), match.annotation_hit.end(), true));
    r.sensitivity = annotations.empty()
                        ? 0.0
                        : static_cast<double>(hits) / annotations.size();
    r.false_positives = static_cast<std::size_t>(std::count(
        match.labels.begin(), match.labels.end(), MatchLabel::FalsePositive));
    r.fps_per_scan = num_scans > 0
                         ? static_cast<double>(r.false_positives) / num_scans
                         : 0.0;
    return r;
}

namespace {

std::pair<double, double> sens_fps_at_tau(
    const std::vector<cand::Candidate>& candidates,
    const std::vector<Annotation>& annotations, int num_scans, double tau) {
    std::vector<cand::Candidate> kept;
    for (const auto& c : candidates)
        if (cand::thr(c.theta, tau)) kept.push_back(c);
    auto rep = candidate_stage_report(kept, annotations, num_scans);
    return {rep.sensitivity, rep.fps_per_scan};
}

} // namespace

TauChoice tune_tau(const std::vector<cand::Candidate>& candidates,
                   const std::vector<Annotation>& annotations, int num_scans,
                   double max_sensitivity_loss) {
    auto [base_sens, base_fps] =
        sens_fps_at_tau(candidates, annotations, num_scans, -1.0);
    std::vector<double> grid{-1.0};
    for (const auto& c : candidates) grid.push_back(c.theta);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    TauChoice best{-1.0, base_sens, base_fps};
    for (double tau : grid) {
        auto [sens, fps] = sens_fps_at_tau(candidates, annotations, num_scans, tau);
        if (sens + 1e-12 >= base_sens - max_sensitivity_loss && fps < best.fps_per_scan) {
            best = {tau, sens, fps};
        }
    }
    return best;
}

void write_froc_csv(const fs::path& path, const FROCCurve& curve) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write FROC table: " + path.string());
    f << "fp_per_scan,sensitivity\n";
    f.precision(10);
    for (const auto& [fp, s] : curve.points) f << fp << "," << s << "\n";
}

FROCCurve read_froc_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open FROC table: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty FROC table: " + path.string());
    FROCCurve curve;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("FROC table " + path.string() + " line " +
                            std::to_string(line_no) + ": expected two fields");
        try {
            curve.points.push_back(
                {std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
        } catch (const std::exception&) {
            throw DataError("FROC table " + path.string() + " line " +
                            std::to_string(line_no) + ": malformed number");
        }
    }
    return curve;
}

void write_froc_svg(const fs::path& path, const std::vector<FROCCurve>& curves,
                    const std::vector<std::string>& labels) {
    const int W = 720, H = 520;
    const double ml = 70, mr = 30, mt = 30, mb = 60;
    const double x_lo = std::log2(0.125), x_hi = std::log2(8.0);
    auto px = [&](double fp) {
        const double lx = std::log2(std::max(0.125, std::min(8.0, fp)));
        return ml + (lx - x_lo) / (x_hi - x_lo) * (W - ml - mr);
    };
    auto py = [&](double s) { return H - mb - s * (H - mt - mb); };
    const std::array<const char*, 6> colors{"#1f77b4", "#d62728", "#2ca02c",
                                            "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream f(path);
    if (!f) throw DataError("cannot write plot: " + path.string());
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    for (double g : kCpmOperatingPoints) {
        f << "<line x1='" << px(g) << "' y1='" << py(0) << "' x2='" << px(g)
          << "' y2='" << py(1) << "' stroke='#dddddd'/>\n";
        f << "<text x='" << px(g) << "' y='" << H - mb + 18
          << "' font-size='11' text-anchor='middle'>" << g << "</text>\n";
    }
    for (double g = 0; g <= 1.001; g += 0.1) {
        f << "<line x1='" << px(0.125) << "' y1='" << py(g) << "' x2='" << px(8)
          << "' y2='" << py(g) << "' stroke='#eeeeee'/>\n";
        f << "<text x='" << ml - 8 << "' y='" << py(g) + 4
          << "' font-size='11' text-anchor='end'>" << std::round(g * 10) / 10
          << "</text>\n";
    }
    f << "<line x1='" << ml << "' y1='" << py(0) << "' x2='" << W - mr << "' y2='"
      << py(0) << "' stroke='black'/>\n";
    f << "<line x1='" << ml << "' y1='" << py(0) << "' x2='" << ml << "' y2='"
      << py(1) << "' stroke='black'/>\n";
    f << "<text x='" << (W / 2) << "' y='" << H - 16
      << "' font-size='13' text-anchor='middle'>False positives per scan</text>\n";
    f << "<text x='18' y='" << (H / 2)
      << "' font-size='13' text-anchor='middle' transform='rotate(-90 18 " << (H / 2)
      << ")'>Sensitivity</text>\n";

    for (std::size_t ci = 0; ci < curves.size(); ++ci) {
        const char* color = colors[ci % colors.size()];
        f << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (const auto& [fp, s] : curves[ci].points)
            f << px(fp) << "," << py(s) << " ";
        f << "'/>\n";
        const std::string label = ci < labels.size() ? labels[ci] : "curve";
        f << "<text x='" << W - mr - 170 << "' y='" << mt + 18 * (ci + 1)
          << "' font-size='12' fill='" << color << "'>" << label << "</text>\n";
    }
    f << "</svg>\n";
}

} // namespace meds::froc
