#include "meds/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "meds/checkpoint.hpp"
#include "meds/volume_io.hpp"

namespace meds::train {

namespace fs = std::filesystem;

std::vector<FoldPlan> make_folds(std::vector<std::string> scan_ids, int k,
                                 std::uint64_t seed) {
    if (static_cast<int>(scan_ids.size()) < k)
        throw DataError("make_folds: need at least " + std::to_string(k) +
                        " scans, got " + std::to_string(scan_ids.size()));
    std::mt19937_64 rng(seed);
    std::shuffle(scan_ids.begin(), scan_ids.end(), rng);

    const int n = static_cast<int>(scan_ids.size());
    std::vector<std::vector<std::string>> subsets(static_cast<std::size_t>(k));
    // Near-equal subsets; the first n%k subsets take one extra scan.
    int pos = 0;
    for (int s = 0; s < k; ++s) {
        const int len = n / k + (s < n % k ? 1 : 0);
        subsets[static_cast<std::size_t>(s)] =
            std::vector<std::string>(scan_ids.begin() + pos,
                                     scan_ids.begin() + pos + len);
        pos += len;
    }

    std::vector<FoldPlan> folds;
    for (int f = 0; f < k; ++f) {
        FoldPlan plan;
        plan.fold_index = f;
        auto subset_of = [&](int offset) -> const std::vector<std::string>& {
            return subsets[static_cast<std::size_t>((f + offset) % k)];
        };
        for (int o = 0; o < k; ++o) {
            const auto& s = subset_of(o);
            if (o < 2)
                plan.test_ids.insert(plan.test_ids.end(), s.begin(), s.end());
            else if (o == 2)
                plan.val_ids.insert(plan.val_ids.end(), s.begin(), s.end());
            else
                plan.train_ids.insert(plan.train_ids.end(), s.begin(), s.end());
        }
        folds.push_back(std::move(plan));
    }
    return folds;
}

std::vector<float> rasterize_mask_slice(const NormalizedVolume& vol,
                                        const std::vector<Annotation>& anns,
                                        int z) {
    std::vector<float> mask(static_cast<std::size_t>(vol.ny) * vol.nx, 0.0f);
    const double wz = vol.origin_mm[0] + z * vol.spacing_mm[0];
    for (const auto& a : anns) {
        const double r = a.diameter_mm / 2.0;
        const double dz = wz - a.center_z_mm;
        const double r2 = r * r - dz * dz;
        if (r2 <= 0) continue;
        const double rr = std::sqrt(r2);
        const int y0 = std::max(
            0, static_cast<int>((a.center_y_mm - rr - vol.origin_mm[1]) /
                                vol.spacing_mm[1]));
        const int y1 = std::min(
            vol.ny - 1, static_cast<int>((a.center_y_mm + rr - vol.origin_mm[1]) /
                                             vol.spacing_mm[1]) +
                            1);
        const int x0 = std::max(
            0, static_cast<int>((a.center_x_mm - rr - vol.origin_mm[2]) /
                                vol.spacing_mm[2]));
        const int x1 = std::min(
            vol.nx - 1, static_cast<int>((a.center_x_mm + rr - vol.origin_mm[2]) /
                                             vol.spacing_mm[2]) +
                            1);
        for (int y = y0; y <= y1; ++y) {
            const double wy = vol.origin_mm[1] + y * vol.spacing_mm[1] - a.center_y_mm;
            for (int x = x0; x <= x1; ++x) {
                const double wx =
                    vol.origin_mm[2] + x * vol.spacing_mm[2] - a.center_x_mm;
                if (wy * wy + wx * wx <= r2)
                    mask[static_cast<std::size_t>(y) * vol.nx + x] = 1.0f;
            }
        }
    }
    return mask;
}

namespace {

bool slice_has_lung(const NormalizedVolume& vol, int z) {
    const std::size_t plane = static_cast<std::size_t>(vol.ny) * vol.nx;
    const float* p = vol.voxels.data() + static_cast<std::size_t>(z) * plane;
    const std::size_t needed = std::max<std::size_t>(16, plane / 100);
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        if (p[i] > 0.05f && ++count >= needed) return true;
    }
    return false;
}

void check_annotations_in_bounds(const ScanData& scan) {
    const auto& v = scan.volume;
    for (const auto& a : scan.annotations) {
        const double iz = (a.center_z_mm - v.origin_mm[0]) / v.spacing_mm[0];
        const double iy = (a.center_y_mm - v.origin_mm[1]) / v.spacing_mm[1];
        const double ix = (a.center_x_mm - v.origin_mm[2]) / v.spacing_mm[2];
        if (iz < 0 || iz > v.nz - 1 || iy < 0 || iy > v.ny - 1 || ix < 0 ||
            ix > v.nx - 1)
            throw DataError("annotation outside volume: scan " + a.scan_id +
                            " center (" + std::to_string(a.center_x_mm) + ", " +
                            std::to_string(a.center_y_mm) + ", " +
                            std::to_string(a.center_z_mm) + ") mm, diameter " +
                            std::to_string(a.diameter_mm) + " mm");
    }
}

template <class T>
void subsample(std::vector<T>& items, std::size_t target, nn::Rng& rng) {
    if (items.size() <= target) return;
    std::shuffle(items.begin(), items.end(), rng);
    items.resize(target);
    std::sort(items.begin(), items.end());
}

} // namespace

SamplePlan plan_samples(const ScanData& scan, const TrainConfig& cfg, nn::Rng& rng) {
    check_annotations_in_bounds(scan);
    SamplePlan plan;
    const auto& vol = scan.volume;
    std::vector<float> mask;
    for (int z = 0; z < vol.nz; ++z) {
        mask = rasterize_mask_slice(vol, scan.annotations, z);
        const bool has_nodule =
            std::any_of(mask.begin(), mask.end(), [](float m) { return m > 0; });
        if (has_nodule)
            plan.positive_centers.push_back(z);
        else if (slice_has_lung(vol, z))
            plan.negative_centers.push_back(z);
    }
    if (cfg.max_pos_per_scan > 0)
        subsample(plan.positive_centers,
                  static_cast<std::size_t>(cfg.max_pos_per_scan), rng);
    const std::size_t neg_target = static_cast<std::size_t>(std::llround(
        static_cast<double>(plan.positive_centers.size()) / cfg.pos_neg_ratio));
    std::size_t target = plan.positive_centers.empty()
                             ? plan.negative_centers.size()
                             : neg_target;
    if (cfg.max_neg_per_scan > 0)
        target = std::min(target, static_cast<std::size_t>(cfg.max_neg_per_scan));
    subsample(plan.negative_centers, target, rng);
    return plan;
}

PatchSample make_patch_sample(const ScanData& scan, int center_z, int patch_depth,
                              bool is_positive) {
    const auto& vol = scan.volume;
    const std::size_t plane = static_cast<std::size_t>(vol.ny) * vol.nx;
    PatchSample s;
    s.center_z = center_z;
    s.is_positive = is_positive;
    s.patch.resize(static_cast<std::size_t>(patch_depth) * plane);
    auto reflect = [&](int z) {
        // reflect-101 about both ends
        const int last = vol.nz - 1;
        while (z < 0 || z > last) {
            if (z < 0) z = -z;
            if (z > last) z = 2 * last - z;
        }
        return z;
    };
    const int half = (patch_depth - 1) / 2;
    for (int d = 0; d < patch_depth; ++d) {
        const int z = reflect(center_z - half + d);
        std::copy_n(vol.voxels.data() + static_cast<std::size_t>(z) * plane, plane,
                    s.patch.data() + static_cast<std::size_t>(d) * plane);
    }
    s.mips = mip::build_mip_stack(vol, center_z);
    s.mask = rasterize_mask_slice(vol, scan.annotations, center_z);
    return s;
}

namespace {

using Vf = nn::Var<float>;

struct BatchTensors {
    Vf patch, fmips, bmips, target;
};

BatchTensors build_batch(const std::vector<const ScanData*>& scans,
                         const std::vector<std::pair<int, int>>& items, // (scan, z)
                         const std::vector<bool>& positive, int patch_depth) {
    const int B = static_cast<int>(items.size());
    const auto& v0 = scans[static_cast<std::size_t>(items[0].first)]->volume;
    const int S = v0.ny;
    nn::Tensor<float> patch({B, 1, patch_depth, S, S});
    nn::Tensor<float> fmips({B, 3, S, S});
    nn::Tensor<float> bmips({B, 3, S, S});
    nn::Tensor<float> target({B, 1, S, S});
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int b = 0; b < B; ++b) {
        const auto& scan = *scans[static_cast<std::size_t>(items[b].first)];
        PatchSample s = make_patch_sample(scan, items[b].second, patch_depth,
                                          positive[static_cast<std::size_t>(b)]);
        std::copy(s.patch.begin(), s.patch.end(),
                  patch.data() + static_cast<std::size_t>(b) * patch_depth * plane);
        for (int t = 0; t < 3; ++t) {
            std::copy(s.mips.forward[t].pixels.begin(), s.mips.forward[t].pixels.end(),
                      fmips.data() + (static_cast<std::size_t>(b) * 3 + t) * plane);
            std::copy(s.mips.backward[t].pixels.begin(), s.mips.backward[t].pixels.end(),
                      bmips.data() + (static_cast<std::size_t>(b) * 3 + t) * plane);
        }
        std::copy(s.mask.begin(), s.mask.end(),
                  target.data() + static_cast<std::size_t>(b) * plane);
    }
    return {nn::make_var(std::move(patch), false), nn::make_var(std::move(fmips), false),
            nn::make_var(std::move(bmips), false), nn::make_var(std::move(target), false)};
}

struct ParamSnapshot {
    std::vector<nn::Tensor<float>> values;

    static ParamSnapshot take(const model::MedsNet<float>& net) {
        ParamSnapshot s;
        for (const auto& e : net.registry().entries)
            s.values.push_back(e.param ? e.param->val : *e.buffer);
        return s;
    }
    void restore(model::MedsNet<float>& net) const {
        auto& entries = net.registry().entries;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].param)
                entries[i].param->val = values[i];
            else
                *entries[i].buffer = values[i];
        }
    }
};

} // namespace

TrainResult train_fold(const std::vector<ScanData>& train_scans,
                       const std::vector<ScanData>& val_scans,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                       const fs::path& out_dir, const std::string& tag) {
    mcfg.validate();
    tcfg.validate();
    fs::create_directories(out_dir);

    nn::Rng plan_rng(tcfg.seed * 7919 + 17);
    std::vector<std::tuple<int, int, bool>> train_items; // (scan, z, positive)
    for (std::size_t i = 0; i < train_scans.size(); ++i) {
        SamplePlan p = plan_samples(train_scans[i], tcfg, plan_rng);
        for (int z : p.positive_centers)
            train_items.push_back({static_cast<int>(i), z, true});
        for (int z : p.negative_centers)
            train_items.push_back({static_cast<int>(i), z, false});
    }
    std::vector<std::tuple<int, int, bool>> val_items;
    for (std::size_t i = 0; i < val_scans.size(); ++i) {
        SamplePlan p = plan_samples(val_scans[i], tcfg, plan_rng);
        for (int z : p.positive_centers)
            val_items.push_back({static_cast<int>(i), z, true});
        for (int z : p.negative_centers)
            val_items.push_back({static_cast<int>(i), z, false});
    }
    if (train_items.empty()) throw DataError("train_fold: no training samples");
    if (val_items.empty()) throw DataError("train_fold: no validation samples");

    std::vector<const ScanData*> train_ptrs, val_ptrs;
    for (const auto& s : train_scans) train_ptrs.push_back(&s);
    for (const auto& s : val_scans) val_ptrs.push_back(&s);

    model::MedsNet<float> net(mcfg, tcfg.seed);
    nn::Adam<float> opt(net.parameters(), static_cast<float>(tcfg.learning_rate),
                        static_cast<float>(tcfg.beta1), static_cast<float>(tcfg.beta2));

    auto run_batches = [&](const std::vector<std::tuple<int, int, bool>>& items,
                           const std::vector<const ScanData*>& scans, bool training,
                           auto&& per_batch) {
        for (std::size_t start = 0; start < items.size();
             start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t end =
                std::min(items.size(), start + static_cast<std::size_t>(tcfg.batch_size));
            std::vector<std::pair<int, int>> batch;
            std::vector<bool> positive;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back({std::get<0>(items[i]), std::get<1>(items[i])});
                positive.push_back(std::get<2>(items[i]));
            }
            BatchTensors t = build_batch(scans, batch, positive, mcfg.patch_depth);
            per_batch(t, static_cast<double>(batch.size()), training);
        }
    };

    TrainResult result;
    EarlyStopper stopper(tcfg.patience);
    ParamSnapshot best = ParamSnapshot::take(net);
    nn::Rng shuffle_rng(tcfg.seed * 104729 + 31);

    for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        std::shuffle(train_items.begin(), train_items.end(), shuffle_rng);
        EpochMetrics m;
        m.epoch = epoch;
        double train_n = 0;
        run_batches(train_items, train_ptrs, true,
                    [&](BatchTensors& t, double bs, bool) {
                        opt.zero_grad();
                        auto out = net.forward(t.patch, t.fmips, t.bmips, true);
                        auto tl = losses::total_loss(out, t.target, tcfg.loss);
                        if (!std::isfinite(tl.breakdown.total))
                            throw NumericalError(
                                "training diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + " (loss1 " +
                                std::to_string(tl.breakdown.loss1) + ", loss2 " +
                                std::to_string(tl.breakdown.loss2) + ", loss3 " +
                                std::to_string(tl.breakdown.loss3) + ")");
                        nn::backward(tl.total);
                        opt.step();
                        m.train_loss1 += tl.breakdown.loss1 * bs;
                        m.train_loss2 += tl.breakdown.loss2 * bs;
                        m.train_loss3 += tl.breakdown.loss3 * bs;
                        m.train_total += tl.breakdown.total * bs;
                        train_n += bs;
                    });
        m.train_loss1 /= train_n;
        m.train_loss2 /= train_n;
        m.train_loss3 /= train_n;
        m.train_total /= train_n;

        double val_n = 0;
        {
            nn::NoGradGuard guard;
            run_batches(val_items, val_ptrs, false,
                        [&](BatchTensors& t, double bs, bool) {
                            auto out = net.forward(t.patch, t.fmips, t.bmips, false);
                            auto tl = losses::total_loss(out, t.target, tcfg.loss);
                            auto md = losses::dice_loss(
                                out.main_prob, t.target,
                                static_cast<float>(tcfg.loss.dice_epsilon));
                            m.val_total += tl.breakdown.total * bs;
                            m.val_main_dice +=
                                static_cast<double>(md->val.v[0]) * bs;
                            val_n += bs;
                        });
        }
        m.val_total /= val_n;
        m.val_main_dice /= val_n;
        result.history.push_back(m);
        result.epochs_run = epoch;

        // Model selection monitors the main detector's validation dice. The
        // total objective is unusable here: its distillation terms grow from
        // zero as the teacher becomes confident, so the total bottoms out in
        // the first epochs regardless of detection quality.
        const bool stop = stopper.feed(epoch, m.val_main_dice);
        if (stopper.best_epoch == epoch) {
            best = ParamSnapshot::take(net);
            result.best_val_total = m.val_total;
            result.best_val_main_dice = m.val_main_dice;
        }
        if (stop) break;
    }
    result.best_epoch = stopper.best_epoch;

    best.restore(net);
    result.checkpoint_path = out_dir / (tag + ".ckpt");
    result.metrics_path = out_dir / (tag + "_metrics.csv");
    ckpt::save_checkpoint(result.checkpoint_path, net);
    write_metrics_csv(result.metrics_path, result.history);
    return result;
}

std::vector<ScanData> load_scan_data(const fs::path& data_dir,
                                     const std::vector<std::string>& ids,
                                     const std::vector<Annotation>& all_annotations) {
    std::vector<ScanData> out;
    for (const auto& id : ids) {
        ScanData sd;
        CTVolume v = io::read_volume(data_dir / id);
        sd.volume.voxels.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            const float c = std::min(400.0f, std::max(-1000.0f, v.voxels[i]));
            sd.volume.voxels[i] = (c + 1000.0f) / 1400.0f;
        }
        sd.volume.nz = v.nz;
        sd.volume.ny = v.ny;
        sd.volume.nx = v.nx;
        sd.volume.spacing_mm = v.spacing_mm;
        sd.volume.origin_mm = v.origin_mm;
        sd.volume.scan_id = v.scan_id;
        for (const auto& a : all_annotations)
            if (a.scan_id == id) sd.annotations.push_back(a);
        out.push_back(std::move(sd));
    }
    return out;
}

void write_metrics_csv(const fs::path& path,
                       const std::vector<EpochMetrics>& history) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write metrics: " + path.string());
    f << "epoch,train_loss1,train_loss2,train_loss3,train_total,val_total,val_main_dice\n";
    f.precision(10);
    for (const auto& m : history)
        f << m.epoch << "," << m.train_loss1 << "," << m.train_loss2 << ","
          << m.train_loss3 << "," << m.train_total << "," << m.val_total << ","
          << m.val_main_dice << "\n";
}

} // namespace meds::train
