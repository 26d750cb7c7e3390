#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "meds/distill_losses.hpp"
#include "meds/meds_model.hpp"
#include "meds/mip_gen.hpp"
#include "meds/volume.hpp"

namespace meds::train {

struct FoldPlan {
    int fold_index = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
};

// Deterministic shuffled partition into k subsets; per fold 2 subsets test,
// 1 validation, 5 training (62.5/12.5/25).
std::vector<FoldPlan> make_folds(std::vector<std::string> scan_ids, int k,
                                 std::uint64_t seed);

struct TrainConfig {
    int batch_size = 3;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int patience = 10;
    int max_epochs = 100;
    std::uint64_t seed = 0;
    double pos_neg_ratio = 1.0;
    int max_pos_per_scan = 0; // 0 = take every eligible slice
    int max_neg_per_scan = 0;
    losses::LossWeights loss;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (patience < 1) throw std::invalid_argument("patience must be >= 1");
        if (learning_rate < 0)
            throw std::invalid_argument("learning_rate must be >= 0");
        if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
        if (pos_neg_ratio <= 0)
            throw std::invalid_argument("pos_neg_ratio must be > 0");
        loss.validate();
    }
};

// One preprocessed scan plus its annotations (world mm).
struct ScanData {
    NormalizedVolume volume;
    std::vector<Annotation> annotations;
};

// Ground-truth mask for one slice: spheres rasterized from annotations.
std::vector<float> rasterize_mask_slice(const NormalizedVolume& vol,
                                        const std::vector<Annotation>& anns,
                                        int z);

struct SamplePlan {
    std::vector<int> positive_centers;
    std::vector<int> negative_centers;
};

// Positives: slices whose rasterized nodule mask is non-empty. Negatives:
// nodule-free slices containing lung tissue, subsampled to pos_neg_ratio.
SamplePlan plan_samples(const ScanData& scan, const TrainConfig& cfg,
                        nn::Rng& rng);

// One training/inference unit: 11-slice patch, MIP stack, central-slice mask.
struct PatchSample {
    std::vector<float> patch; // depth x S x S, reflect-padded in z
    mip::MIPStack mips;
    std::vector<float> mask; // S x S
    int center_z = 0;
    bool is_positive = false;
};

PatchSample make_patch_sample(const ScanData& scan, int center_z, int patch_depth,
                              bool is_positive);

// Early-stopping rule: stop when validation loss has not strictly improved
// for `patience` consecutive epochs; the best epoch's checkpoint is kept.
struct EarlyStopper {
    int patience = 10;
    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int stale = 0;

    explicit EarlyStopper(int p) : patience(p) {}
    // Feed one epoch's validation loss; true means stop after this epoch.
    bool feed(int epoch, double val_loss) {
        if (val_loss < best) {
            best = val_loss;
            best_epoch = epoch;
            stale = 0;
            return false;
        }
        return ++stale >= patience;
    }
};

struct EpochMetrics {
    int epoch = 0;
    double train_loss1 = 0, train_loss2 = 0, train_loss3 = 0, train_total = 0;
    double val_total = 0;
    double val_main_dice = 0;
};

struct TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_total = 0;
    double best_val_main_dice = 0;
    std::vector<EpochMetrics> history;
    std::filesystem::path checkpoint_path;
    std::filesystem::path metrics_path;
};

// Full optimization loop with Adam and early stopping; writes the
// best-validation checkpoint (atomic) and a per-epoch metrics CSV.
TrainResult train_fold(const std::vector<ScanData>& train_scans,
                       const std::vector<ScanData>& val_scans,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                       const std::filesystem::path& out_dir,
                       const std::string& tag = "model");

// Load preprocessed volumes + annotations for the given scan ids.
std::vector<ScanData> load_scan_data(const std::filesystem::path& data_dir,
                                     const std::vector<std::string>& ids,
                                     const std::vector<Annotation>& all_annotations);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<EpochMetrics>& history);

} // namespace meds::train
