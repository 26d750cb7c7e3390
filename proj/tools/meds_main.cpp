// Command-line entry point wiring the pipeline together:
// phantom -> preprocess -> mip/train -> infer -> evaluate -> plot-froc.

#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "meds/ablation.hpp"
#include "meds/candidate_fp.hpp"
#include "meds/checkpoint.hpp"
#include "meds/ct_preproc.hpp"
#include "meds/froc_eval.hpp"
#include "meds/mip_gen.hpp"
#include "meds/phantom_data.hpp"
#include "meds/run_config.hpp"
#include "meds/trainer.hpp"
#include "meds/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meds;

namespace {

constexpr const char* kVersion = "1.0.0";

struct GlobalOpts {
    std::string config_path;
    int jobs = 1;
    bool show_config = false;
    std::int64_t seed_override = -1;
};

config::RunConfig effective_config(const GlobalOpts& g) {
    config::RunConfig cfg =
        g.config_path.empty() ? config::defaults() : config::load(g.config_path);
    if (g.seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(g.seed_override);
        cfg.train.seed = cfg.seed;
        cfg.phantom.seed = cfg.seed;
    }
    return cfg;
}

std::vector<std::string> read_id_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open id file: " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    if (ids.empty()) throw DataError("id file is empty: " + path.string());
    return ids;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const GlobalOpts& g, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["config_file"] = g.config_path;
    m["seed"] = seed;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["version"] = kVersion;
    const auto now = std::chrono::system_clock::now();
    m["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
            .count();
    std::ofstream f(dir / "run_manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir.string());
    f << m.dump(2) << "\n";
}

// Scan-level parallelism; worker exceptions are rethrown on the caller.
void parallel_for(std::size_t n, int jobs,
                  const std::function<void(std::size_t)>& fn) {
    jobs = std::max(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int t = 0; t < std::min<std::size_t>(static_cast<std::size_t>(jobs), n); ++t)
        threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------

int cmd_phantom(const GlobalOpts& g, const std::string& out_dir, int count) {
    auto cfg = effective_config(g);
    if (count > 0) cfg.phantom_count = count;
    fs::create_directories(out_dir);
    std::vector<Annotation> all;
    std::vector<std::string> outputs;
    for (int i = 0; i < cfg.phantom_count; ++i) {
        phantom::PhantomSpec spec = cfg.phantom;
        spec.seed = cfg.phantom.seed + static_cast<std::uint64_t>(i);
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%04d", i);
        spec.scan_id = name;
        auto result = phantom::generate_phantom(spec);
        io::write_volume(fs::path(out_dir) / name, result.volume);
        all.insert(all.end(), result.annotations.begin(), result.annotations.end());
        outputs.push_back(std::string(name) + ".raw");
    }
    io::write_annotations(fs::path(out_dir) / "annotations.csv", all);
    std::ofstream idf(fs::path(out_dir) / "scan_ids.txt");
    for (int i = 0; i < cfg.phantom_count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "phantom_%04d", i);
        idf << name << "\n";
    }
    outputs.push_back("annotations.csv");
    outputs.push_back("scan_ids.txt");
    write_manifest(out_dir, "phantom", g, cfg.phantom.seed, {}, outputs);
    std::cout << "wrote " << cfg.phantom_count << " phantom(s) to " << out_dir
              << "\n";
    return 0;
}

int cmd_preprocess(const GlobalOpts& g, const std::string& in_dir,
                   const std::string& out_dir, const std::string& ids_file) {
    auto cfg = effective_config(g);
    const std::vector<std::string> ids = read_id_file(
        ids_file.empty() ? fs::path(in_dir) / "scan_ids.txt" : fs::path(ids_file));
    fs::create_directories(out_dir);
    parallel_for(ids.size(), g.jobs, [&](std::size_t i) {
        CTVolume raw = io::read_volume(fs::path(in_dir) / ids[i]);
        raw.scan_id = ids[i];
        auto result = preproc::preprocess_scan(raw, cfg.preproc);
        io::write_volume(fs::path(out_dir) / ids[i], result.volume);
    });
    std::ofstream idf(fs::path(out_dir) / "scan_ids.txt");
    for (const auto& id : ids) idf << id << "\n";
    const fs::path ann_src = fs::path(in_dir) / "annotations.csv";
    if (fs::exists(ann_src))
        fs::copy_file(ann_src, fs::path(out_dir) / "annotations.csv",
                      fs::copy_options::overwrite_existing);
    write_manifest(out_dir, "preprocess", g, cfg.seed, {in_dir},
                   {"<id>.raw", "<id>.json", "scan_ids.txt"});
    std::cout << "preprocessed " << ids.size() << " scan(s) to " << out_dir << "\n";
    return 0;
}

int cmd_mip(const GlobalOpts& g, const std::string& in_dir, const std::string& scan,
            int center, const std::string& out_dir) {
    auto cfg = effective_config(g);
    (void)cfg;
    fs::create_directories(out_dir);
    CTVolume v = io::read_volume(fs::path(in_dir) / scan);
    v.scan_id = scan;
    NormalizedVolume nv = preproc::to_normalized(v);
    if (center < 0) center = nv.nz / 2;
    mip::MIPStack stack = mip::build_mip_stack(nv, center);

    json index;
    index["scan_id"] = scan;
    index["center_index"] = center;
    std::vector<std::string> outputs;
    for (std::size_t t = 0; t < mip::MIPStack::thicknesses_mm.size(); ++t) {
        for (const char* dir : {"forward", "backward"}) {
            const auto& img = dir == std::string("forward") ? stack.forward[t]
                                                            : stack.backward[t];
            std::string name = scan + "_" + dir + "_" +
                               std::to_string(mip::MIPStack::thicknesses_mm[t]) +
                               "mm.pgm";
            io::write_pgm16(fs::path(out_dir) / name, img.pixels, img.ny, img.nx);
            index["images"].push_back(
                {{"file", name},
                 {"direction", dir},
                 {"thickness_mm", mip::MIPStack::thicknesses_mm[t]}});
            outputs.push_back(name);
        }
    }
    std::ofstream idx(fs::path(out_dir) / "mip_index.json");
    idx << index.dump(2) << "\n";
    outputs.push_back("mip_index.json");
    write_manifest(out_dir, "mip", g, 0, {in_dir + "/" + scan}, outputs);
    std::cout << "wrote 6 MIP images for " << scan << " slice " << center << "\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir,
              const std::string& ann_file, const std::string& train_ids_file,
              const std::string& val_ids_file, const std::string& preset,
              const std::string& out_dir, const std::string& tag) {
    auto cfg = effective_config(g);
    model::ModelConfig mcfg = cfg.model;
    train::TrainConfig tcfg = cfg.train;
    if (!preset.empty()) {
        auto variant = ablation::build_variant(preset, mcfg, tcfg);
        mcfg = variant.model;
        tcfg = variant.train;
    }
    const auto annotations = io::load_annotations(
        ann_file.empty() ? fs::path(data_dir) / "annotations.csv" : fs::path(ann_file));
    for (const auto& w : annotations.warnings)
        std::cerr << "annotation warning: " << w << "\n";
    auto train_scans = train::load_scan_data(data_dir, read_id_file(train_ids_file),
                                             annotations.annotations);
    auto val_scans = train::load_scan_data(data_dir, read_id_file(val_ids_file),
                                           annotations.annotations);
    for (const auto& s : train_scans)
        if (s.volume.ny != mcfg.input_size)
            throw DataError("scan " + s.volume.scan_id + " in-plane size " +
                            std::to_string(s.volume.ny) +
                            " != model input_size " +
                            std::to_string(mcfg.input_size));
    fs::create_directories(out_dir);
    auto result = train::train_fold(train_scans, val_scans, mcfg, tcfg, out_dir, tag);
    write_manifest(out_dir, "train", g, tcfg.seed,
                   {data_dir, train_ids_file, val_ids_file},
                   {result.checkpoint_path.filename().string(),
                    result.metrics_path.filename().string()});
    std::cout << "trained " << tag << ": " << result.epochs_run
              << " epochs, best epoch " << result.best_epoch << ", val total "
              << result.best_val_total << ", val main dice "
              << result.best_val_main_dice << "\n";
    return 0;
}

int cmd_infer(const GlobalOpts& g, const std::string& data_dir,
              const std::string& ids_file, const std::string& ckpt_file,
              const std::string& out_dir, double tau_flag, bool per_detector) {
    auto cfg = effective_config(g);
    const double tau = tau_flag >= 0 ? tau_flag : cfg.candidates.tau;
    const auto ids = read_id_file(ids_file);
    fs::create_directories(out_dir);
    model::MedsNet<float> net = ckpt::load_checkpoint(ckpt_file);

    std::vector<std::vector<cand::Candidate>> main_cands(ids.size());
    const int k = net.config().num_aux_detectors;
    std::vector<std::vector<std::vector<cand::Candidate>>> det_cands(
        ids.size(), std::vector<std::vector<cand::Candidate>>(
                        static_cast<std::size_t>(k) + 1));
    parallel_for(ids.size(), g.jobs, [&](std::size_t i) {
        CTVolume v = io::read_volume(fs::path(data_dir) / ids[i]);
        v.scan_id = ids[i];
        NormalizedVolume nv = preproc::to_normalized(v);
        auto probs = cand::infer_volume(net, nv);
        auto cands = cand::extract_candidates(probs, nv, cfg.candidates);
        cand::reduce_false_positives(cands, probs, tau); // annotates theta/survived
        main_cands[i] = std::move(cands);
        if (per_detector) {
            for (int d = 0; d < k; ++d) {
                cand::ProbabilityVolumeSet solo;
                solo.nz = probs.nz;
                solo.ny = probs.ny;
                solo.nx = probs.nx;
                solo.main = probs.aux[static_cast<std::size_t>(d)];
                auto dc = cand::extract_candidates(solo, nv, cfg.candidates);
                for (auto& c : dc) c.theta = c.mean_main_prob;
                det_cands[i][static_cast<std::size_t>(d)] = std::move(dc);
            }
            auto mc = main_cands[i];
            for (auto& c : mc) c.theta = c.mean_main_prob;
            det_cands[i][static_cast<std::size_t>(k)] = std::move(mc);
        }
    });

    std::vector<cand::Candidate> combined;
    for (const auto& cs : main_cands)
        combined.insert(combined.end(), cs.begin(), cs.end());
    cand::write_candidates_csv(fs::path(out_dir) / "candidates.csv", combined);
    std::vector<std::string> outputs{"candidates.csv"};
    if (per_detector) {
        for (int d = 0; d <= k; ++d) {
            std::vector<cand::Candidate> det;
            for (const auto& per_scan : det_cands)
                det.insert(det.end(), per_scan[static_cast<std::size_t>(d)].begin(),
                           per_scan[static_cast<std::size_t>(d)].end());
            const std::string name = d == k ? "candidates_main.csv"
                                            : "candidates_aux" + std::to_string(d + 1) +
                                                  ".csv";
            cand::write_candidates_csv(fs::path(out_dir) / name, det);
            outputs.push_back(name);
        }
    }
    write_manifest(out_dir, "infer", g, cfg.seed, {data_dir, ckpt_file}, outputs);
    std::cout << "inferred " << ids.size() << " scan(s), " << combined.size()
              << " candidate(s), tau " << tau << "\n";
    return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& cands_file,
                 const std::string& ann_file, const std::string& ids_file,
                 const std::string& out_dir, bool post_reduction, double tune_tau_loss,
                 const std::string& per_detector_dir) {
    auto cfg = effective_config(g);
    (void)cfg;
    const auto ids = read_id_file(ids_file);
    const auto ann = io::load_annotations(ann_file);
    std::vector<Annotation> annotations;
    for (const auto& a : ann.annotations)
        if (std::find(ids.begin(), ids.end(), a.scan_id) != ids.end())
            annotations.push_back(a);
    auto all_cands = cand::read_candidates_csv(cands_file);
    std::vector<cand::Candidate> cands;
    for (const auto& c : all_cands) {
        if (std::find(ids.begin(), ids.end(), c.scan_id) == ids.end()) continue;
        if (post_reduction && !c.survived) continue;
        cands.push_back(c);
    }
    fs::create_directories(out_dir);
    const int num_scans = static_cast<int>(ids.size());
    auto stage = froc::candidate_stage_report(cands, annotations, num_scans);
    auto curve = froc::froc_curve(cands, annotations, num_scans);
    auto report = froc::cpm(curve);

    json rj;
    rj["num_scans"] = num_scans;
    rj["num_annotations"] = annotations.size();
    rj["mode"] = post_reduction ? "post_reduction" : "pre_reduction";
    rj["sensitivity"] = stage.sensitivity;
    rj["total_candidates"] = stage.total_candidates;
    rj["candidates_per_scan"] = stage.candidates_per_scan;
    rj["false_positives"] = stage.false_positives;
    rj["fps_per_scan"] = stage.fps_per_scan;
    rj["cpm"] = report.cpm;
    for (std::size_t i = 0; i < froc::kCpmOperatingPoints.size(); ++i)
        rj["sensitivity_at"][std::to_string(froc::kCpmOperatingPoints[i])] =
            report.sensitivities[i];
    if (tune_tau_loss >= 0) {
        auto choice = froc::tune_tau(cands, annotations, num_scans, tune_tau_loss);
        rj["tuned_tau"] = choice.tau;
        rj["tuned_sensitivity"] = choice.sensitivity;
        rj["tuned_fps_per_scan"] = choice.fps_per_scan;
    }
    std::vector<std::string> outputs{"report.json", "froc.csv"};
    if (!per_detector_dir.empty()) {
        std::vector<std::vector<cand::Candidate>> per_det;
        for (int d = 1;; ++d) {
            const fs::path p =
                fs::path(per_detector_dir) / ("candidates_aux" + std::to_string(d) + ".csv");
            if (!fs::exists(p)) break;
            per_det.push_back(cand::read_candidates_csv(p));
        }
        per_det.push_back(cand::read_candidates_csv(
            fs::path(per_detector_dir) / "candidates_main.csv"));
        auto rows = ablation::per_detector_table(per_det, annotations, num_scans);
        std::ofstream tf(fs::path(out_dir) / "detector_table.csv");
        tf << ablation::format_detector_table(rows, annotations.size());
        outputs.push_back("detector_table.csv");
    }
    std::ofstream rf(fs::path(out_dir) / "report.json");
    rf << rj.dump(2) << "\n";
    froc::write_froc_csv(fs::path(out_dir) / "froc.csv", curve);
    write_manifest(out_dir, "evaluate", g, 0, {cands_file, ann_file}, outputs);
    std::cout << "evaluate: sensitivity " << stage.sensitivity << ", "
              << stage.fps_per_scan << " FPs/scan, CPM " << report.cpm << "\n";
    return 0;
}

int cmd_plot_froc(const GlobalOpts& g, const std::vector<std::string>& curve_files,
                  const std::vector<std::string>& labels, const std::string& out_file) {
    std::vector<froc::FROCCurve> curves;
    for (const auto& f : curve_files) curves.push_back(froc::read_froc_csv(f));
    froc::write_froc_svg(out_file, curves, labels);
    const fs::path dir = fs::path(out_file).parent_path();
    if (!dir.empty()) write_manifest(dir, "plot-froc", g, 0, curve_files, {out_file});
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MEDS-Net lung nodule detection pipeline"};
    app.require_subcommand(0, 1);
    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON run configuration");
    app.add_option("--jobs", g.jobs, "scan-level parallelism")->check(CLI::PositiveNumber);
    app.add_option("--seed", g.seed_override, "override config seed");
    app.add_flag("--show-config", g.show_config, "print the effective config and exit");

    // phantom
    auto* sp = app.add_subcommand("phantom", "generate synthetic lung phantoms");
    std::string p_out = "phantoms";
    int p_count = -1;
    sp->add_option("--out", p_out, "output directory");
    sp->add_option("--count", p_count, "number of phantoms");

    // preprocess
    auto* pp = app.add_subcommand("preprocess", "lung masking and normalization");
    std::string pre_in, pre_out = "preprocessed", pre_ids;
    pp->add_option("--in", pre_in, "input volume directory")->required();
    pp->add_option("--out", pre_out, "output directory");
    pp->add_option("--ids", pre_ids, "scan id file (default <in>/scan_ids.txt)");

    // mip
    auto* mp = app.add_subcommand("mip", "write bidirectional MIP images");
    std::string mip_in, mip_scan, mip_out = "mips";
    int mip_center = -1;
    mp->add_option("--in", mip_in, "preprocessed volume directory")->required();
    mp->add_option("--scan", mip_scan, "scan id")->required();
    mp->add_option("--center", mip_center, "central slice (default middle)");
    mp->add_option("--out", mip_out, "output directory");

    // train
    auto* tr = app.add_subcommand("train", "train a model on preprocessed scans");
    std::string tr_data, tr_ann, tr_train_ids, tr_val_ids, tr_preset,
        tr_out = "runs", tr_tag = "model";
    tr->add_option("--data", tr_data, "preprocessed volume directory")->required();
    tr->add_option("--annotations", tr_ann, "annotation CSV (default <data>/annotations.csv)");
    tr->add_option("--train-ids", tr_train_ids, "training scan ids")->required();
    tr->add_option("--val-ids", tr_val_ids, "validation scan ids")->required();
    tr->add_option("--preset", tr_preset, "ablation preset");
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--tag", tr_tag, "artifact name prefix");

    // infer
    auto* in = app.add_subcommand("infer", "run detection and FP reduction");
    std::string in_data, in_ids, in_ckpt, in_out = "inference";
    double in_tau = -1;
    bool in_per_det = false;
    in->add_option("--data", in_data, "preprocessed volume directory")->required();
    in->add_option("--ids", in_ids, "scan id file")->required();
    in->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
    in->add_option("--out", in_out, "output directory");
    in->add_option("--tau", in_tau, "FP-reduction threshold (default from config)");
    in->add_flag("--per-detector", in_per_det, "also write per-detector candidates");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "FROC/CPM evaluation of candidates");
    std::string ev_cands, ev_ann, ev_ids, ev_out = "evaluation", ev_det_dir;
    bool ev_post = false;
    double ev_tune = -1;
    ev->add_option("--candidates", ev_cands, "candidate CSV")->required();
    ev->add_option("--annotations", ev_ann, "annotation CSV")->required();
    ev->add_option("--scan-ids", ev_ids, "scan id file")->required();
    ev->add_option("--out", ev_out, "output directory");
    ev->add_flag("--post-reduction", ev_post, "evaluate surviving candidates only");
    ev->add_option("--tune-tau", ev_tune,
                   "tune tau allowing this absolute sensitivity loss");
    ev->add_option("--per-detector", ev_det_dir,
                   "directory with per-detector candidate CSVs");

    // plot-froc
    auto* pf = app.add_subcommand("plot-froc", "plot FROC curves as SVG");
    std::vector<std::string> pf_curves, pf_labels;
    std::string pf_out = "froc.svg";
    pf->add_option("--curves", pf_curves, "FROC CSV files")->required();
    pf->add_option("--labels", pf_labels, "curve labels");
    pf->add_option("--out", pf_out, "output SVG file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (g.show_config) {
            std::cout << config::dump(effective_config(g)) << "\n";
            return 0;
        }
        if (sp->parsed()) return cmd_phantom(g, p_out, p_count);
        if (pp->parsed()) return cmd_preprocess(g, pre_in, pre_out, pre_ids);
        if (mp->parsed()) return cmd_mip(g, mip_in, mip_scan, mip_center, mip_out);
        if (tr->parsed())
            return cmd_train(g, tr_data, tr_ann, tr_train_ids, tr_val_ids, tr_preset,
                             tr_out, tr_tag);
        if (in->parsed())
            return cmd_infer(g, in_data, in_ids, in_ckpt, in_out, in_tau, in_per_det);
        if (ev->parsed())
            return cmd_evaluate(g, ev_cands, ev_ann, ev_ids, ev_out, ev_post, ev_tune,
                                ev_det_dir);
        if (pf->parsed()) return cmd_plot_froc(g, pf_curves, pf_labels, pf_out);
        std::cout << app.help() << "\n";
        return 0;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
