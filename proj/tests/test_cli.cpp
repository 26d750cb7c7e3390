#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "meds/froc_eval.hpp"
#include "meds/volume_io.hpp"

using namespace meds;
namespace fs = std::filesystem;

namespace {

#ifndef MEDS_CLI_PATH
#define MEDS_CLI_PATH "./meds"
#endif

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MEDS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / "meds_cli_test";
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_toy_config(const fs::path& p) {
    std::ofstream f(p);
    f << R"({
  "seed": 3,
  "phantom_count": 3,
  "phantom": {"seed": 3, "volume_shape": [15, 40, 40], "spacing_mm": [2.0, 3.0, 3.0],
              "n_nodules": 2, "nodule_diameter_range_mm": [9, 15], "n_vessels": 4,
              "noise_sigma_hu": 12},
  "preproc": {"crop_size": 32},
  "model": {"base_width": 1, "input_size": 32, "patch_depth": 3, "dense_growth": 1,
            "dense_width": 2, "head_width": 2, "num_aux_detectors": 4},
  "train": {"batch_size": 2, "max_epochs": 1, "patience": 2,
            "max_pos_per_scan": 1, "max_neg_per_scan": 1}
})";
}

} // namespace

TEST_CASE("cli exit codes: usage errors and missing data") {
    CHECK(run_cli("--bogus-flag") == 2);
    CHECK(run_cli("preprocess") == 2);                      // missing required --in
    CHECK(run_cli("preprocess --in /nonexistent_dir") == 3); // data error
    CHECK(run_cli("--help") == 0);
}

TEST_CASE("phantom -> preprocess -> mip chain satisfies MIP invariants") {
    TempDir tmp;
    const auto cfg = tmp.path / "cfg.json";
    write_toy_config(cfg);
    const std::string base = "--config " + cfg.string() + " ";
    REQUIRE(run_cli(base + "phantom --out " + (tmp.path / "ph").string()) == 0);
    REQUIRE(run_cli(base + "preprocess --in " + (tmp.path / "ph").string() + " --out " +
                    (tmp.path / "prep").string()) == 0);
    REQUIRE(run_cli(base + "mip --in " + (tmp.path / "prep").string() +
                    " --scan phantom_0000 --out " + (tmp.path / "mips").string()) == 0);
    for (const char* name :
         {"phantom_0000_forward_3mm.pgm", "phantom_0000_forward_5mm.pgm",
          "phantom_0000_forward_10mm.pgm", "phantom_0000_backward_3mm.pgm",
          "phantom_0000_backward_5mm.pgm", "phantom_0000_backward_10mm.pgm",
          "mip_index.json", "run_manifest.json"})
        CHECK(fs::exists(tmp.path / "mips" / name));

    // manifest exists next to every stage's outputs
    CHECK(fs::exists(tmp.path / "ph" / "run_manifest.json"));
    CHECK(fs::exists(tmp.path / "prep" / "run_manifest.json"));
}

TEST_CASE("phantom output is idempotent given identical inputs and seed") {
    TempDir tmp;
    const auto cfg = tmp.path / "cfg.json";
    write_toy_config(cfg);
    const std::string base = "--config " + cfg.string() + " ";
    REQUIRE(run_cli(base + "phantom --out " + (tmp.path / "a").string()) == 0);
    REQUIRE(run_cli(base + "phantom --out " + (tmp.path / "b").string()) == 0);
    auto va = io::read_volume(tmp.path / "a" / "phantom_0001");
    auto vb = io::read_volume(tmp.path / "b" / "phantom_0001");
    CHECK(va.voxels == vb.voxels);
    std::ifstream fa(tmp.path / "a" / "annotations.csv");
    std::ifstream fb(tmp.path / "b" / "annotations.csv");
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("train -> infer -> evaluate chain writes the documented artifacts"
          * doctest::timeout(600)) {
    TempDir tmp;
    const auto cfg = tmp.path / "cfg.json";
    write_toy_config(cfg);
    const std::string base = "--config " + cfg.string() + " ";
    REQUIRE(run_cli(base + "phantom --out " + (tmp.path / "ph").string()) == 0);
    REQUIRE(run_cli(base + "preprocess --in " + (tmp.path / "ph").string() + " --out " +
                    (tmp.path / "prep").string()) == 0);
    {
        std::ofstream tr(tmp.path / "train_ids.txt");
        tr << "phantom_0000\nphantom_0001\n";
        std::ofstream va(tmp.path / "val_ids.txt");
        va << "phantom_0002\n";
    }
    REQUIRE(run_cli(base + "train --data " + (tmp.path / "prep").string() +
                    " --train-ids " + (tmp.path / "train_ids.txt").string() +
                    " --val-ids " + (tmp.path / "val_ids.txt").string() + " --out " +
                    (tmp.path / "run").string() + " --tag toy") == 0);
    CHECK(fs::exists(tmp.path / "run" / "toy.ckpt"));
    CHECK(fs::exists(tmp.path / "run" / "toy_metrics.csv"));
    {
        std::ifstream m(tmp.path / "run" / "toy_metrics.csv");
        std::string header, row;
        std::getline(m, header);
        CHECK(header ==
              "epoch,train_loss1,train_loss2,train_loss3,train_total,val_total,"
              "val_main_dice");
        CHECK(static_cast<bool>(std::getline(m, row))); // one epoch row
    }
    REQUIRE(run_cli(base + "infer --data " + (tmp.path / "prep").string() + " --ids " +
                    (tmp.path / "val_ids.txt").string() + " --checkpoint " +
                    (tmp.path / "run" / "toy.ckpt").string() + " --out " +
                    (tmp.path / "inf").string() + " --per-detector") == 0);
    CHECK(fs::exists(tmp.path / "inf" / "candidates.csv"));
    CHECK(fs::exists(tmp.path / "inf" / "candidates_main.csv"));
    CHECK(fs::exists(tmp.path / "inf" / "candidates_aux1.csv"));
    REQUIRE(run_cli(base + "evaluate --candidates " +
                    (tmp.path / "inf" / "candidates.csv").string() + " --annotations " +
                    (tmp.path / "prep" / "annotations.csv").string() + " --scan-ids " +
                    (tmp.path / "val_ids.txt").string() + " --out " +
                    (tmp.path / "eval").string() + " --per-detector " +
                    (tmp.path / "inf").string()) == 0);
    CHECK(fs::exists(tmp.path / "eval" / "report.json"));
    CHECK(fs::exists(tmp.path / "eval" / "froc.csv"));
    CHECK(fs::exists(tmp.path / "eval" / "detector_table.csv"));
    REQUIRE(run_cli(base + "plot-froc --curves " +
                    (tmp.path / "eval" / "froc.csv").string() + " --labels toy --out " +
                    (tmp.path / "froc.svg").string()) == 0);
    CHECK(fs::exists(tmp.path / "froc.svg"));
}

TEST_CASE("evaluate reproduces the CPM fixture from a candidate file") {
    // Construct candidates whose FROC curve steps through the published
    // sensitivities of the headline pipeline at the seven operating points.
    TempDir tmp;
    // 1000 annotations over 8 scans; thresholds chosen so that at fp/scan
    // targets {0.125,...,8} the sensitivities match the fixture.
    const std::array<double, 7> sens{0.883, 0.915, 0.928, 0.941, 0.953, 0.962, 0.968};
    const std::array<double, 7> fp_per_scan{0.125, 0.25, 0.5, 1, 2, 4, 8};
    const int num_scans = 8;
    const int num_ann = 1000;
    std::vector<Annotation> anns;
    std::vector<cand::Candidate> cands;
    int made_tp = 0, made_fp = 0;
    for (int level = 0; level < 7; ++level) {
        const double theta = 1.0 - 0.1 * level;
        const int want_tp = static_cast<int>(std::lround(sens[level] * num_ann));
        while (made_tp < want_tp) {
            Annotation a;
            a.scan_id = "scan" + std::to_string(made_tp % num_scans);
            a.center_x_mm = made_tp * 50.0;
            a.center_y_mm = 0;
            a.center_z_mm = 0;
            a.diameter_mm = 10;
            anns.push_back(a);
            cand::Candidate c;
            c.scan_id = a.scan_id;
            c.centroid_x_mm = a.center_x_mm;
            c.theta = theta;
            cands.push_back(c);
            ++made_tp;
        }
        const int want_fp =
            static_cast<int>(std::lround(fp_per_scan[level] * num_scans));
        while (made_fp < want_fp) {
            cand::Candidate c;
            c.scan_id = "scan" + std::to_string(made_fp % num_scans);
            c.centroid_x_mm = -1000.0 - made_fp * 50.0;
            c.theta = theta;
            cands.push_back(c);
            ++made_fp;
        }
    }
    while (made_tp < num_ann) { // undetected annotations
        Annotation a;
        a.scan_id = "scan" + std::to_string(made_tp % num_scans);
        a.center_x_mm = made_tp * 50.0;
        a.center_y_mm = 0;
        a.center_z_mm = 0;
        a.diameter_mm = 10;
        anns.push_back(a);
        ++made_tp;
    }
    io::write_annotations(tmp.path / "ann.csv", anns);
    cand::write_candidates_csv(tmp.path / "cands.csv", cands);
    {
        std::ofstream ids(tmp.path / "ids.txt");
        for (int s = 0; s < num_scans; ++s) ids << "scan" << s << "\n";
    }
    REQUIRE(run_cli("evaluate --candidates " + (tmp.path / "cands.csv").string() +
                    " --annotations " + (tmp.path / "ann.csv").string() +
                    " --scan-ids " + (tmp.path / "ids.txt").string() + " --out " +
                    (tmp.path / "eval").string()) == 0);
    std::ifstream rf(tmp.path / "eval" / "report.json");
    std::string report((std::istreambuf_iterator<char>(rf)),
                       std::istreambuf_iterator<char>());
    const auto pos = report.find("\"cpm\": ");
    REQUIRE(pos != std::string::npos);
    const double cpm_val = std::stod(report.substr(pos + 7));
    CHECK(std::abs(cpm_val - 0.936) <= 0.0005);
}
