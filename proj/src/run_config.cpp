#include "meds/run_config.hpp"

#include <fstream>

#include "json.hpp"

namespace meds::config {

using nlohmann::json;

namespace {

template <class T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw UsageError(std::string("config field '") + key + "': " + e.what());
        }
    }
}

template <class T, std::size_t N>
void get_array_if(const json& j, const char* key, std::array<T, N>& out) {
    if (j.contains(key)) {
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != N)
            throw UsageError(std::string("config field '") + key + "' must be an array of " +
                             std::to_string(N));
        for (std::size_t i = 0; i < N; ++i) out[i] = a.at(i).get<T>();
    }
}

} // namespace

RunConfig defaults() { return RunConfig{}; }

RunConfig load(const std::filesystem::path& path) {
    RunConfig cfg;
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw UsageError("config parse error in " + path.string() + ": " + e.what());
    }
    get_if(j, "seed", cfg.seed);
    get_if(j, "phantom_count", cfg.phantom_count);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        get_if(m, "base_width", cfg.model.base_width);
        get_if(m, "encoder_depth", cfg.model.encoder_depth);
        get_if(m, "num_aux_detectors", cfg.model.num_aux_detectors);
        get_if(m, "input_size", cfg.model.input_size);
        get_if(m, "patch_depth", cfg.model.patch_depth);
        get_if(m, "dense_growth", cfg.model.dense_growth);
        get_if(m, "dense_width", cfg.model.dense_width);
        get_if(m, "head_width", cfg.model.head_width);
        get_if(m, "use_attention", cfg.model.use_attention);
        get_if(m, "use_patch_input", cfg.model.use_patch_input);
        get_if(m, "use_forward_mip", cfg.model.use_forward_mip);
        get_if(m, "use_backward_mip", cfg.model.use_backward_mip);
        get_if(m, "bn_momentum", cfg.model.bn_momentum);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        get_if(t, "batch_size", cfg.train.batch_size);
        get_if(t, "learning_rate", cfg.train.learning_rate);
        get_if(t, "beta1", cfg.train.beta1);
        get_if(t, "beta2", cfg.train.beta2);
        get_if(t, "patience", cfg.train.patience);
        get_if(t, "max_epochs", cfg.train.max_epochs);
        get_if(t, "seed", cfg.train.seed);
        get_if(t, "pos_neg_ratio", cfg.train.pos_neg_ratio);
        get_if(t, "max_pos_per_scan", cfg.train.max_pos_per_scan);
        get_if(t, "max_neg_per_scan", cfg.train.max_neg_per_scan);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        get_if(l, "alpha", cfg.train.loss.alpha);
        get_if(l, "lambda_feat", cfg.train.loss.lambda_feat);
        get_if(l, "dice_epsilon", cfg.train.loss.dice_epsilon);
        get_if(l, "kl_epsilon", cfg.train.loss.kl_epsilon);
    }
    if (j.contains("preproc")) {
        const auto& p = j.at("preproc");
        get_if(p, "air_threshold_hu", cfg.preproc.air_threshold_hu);
        get_if(p, "closing_radius_vox", cfg.preproc.closing_radius_vox);
        get_if(p, "dilation_radius_vox", cfg.preproc.dilation_radius_vox);
        get_if(p, "mask_fill_hu", cfg.preproc.mask_fill_hu);
        get_if(p, "crop_size", cfg.preproc.crop_size);
        get_if(p, "target_z_spacing_mm", cfg.preproc.target_z_spacing_mm);
    }
    if (j.contains("candidates")) {
        const auto& c = j.at("candidates");
        get_if(c, "bin_threshold", cfg.candidates.bin_threshold);
        get_if(c, "min_voxels", cfg.candidates.min_voxels);
        get_if(c, "connectivity", cfg.candidates.connectivity);
        get_if(c, "tau", cfg.candidates.tau);
    }
    if (j.contains("phantom")) {
        const auto& p = j.at("phantom");
        get_if(p, "seed", cfg.phantom.seed);
        get_array_if(p, "volume_shape", cfg.phantom.volume_shape);
        get_array_if(p, "spacing_mm", cfg.phantom.spacing_mm);
        get_if(p, "n_nodules", cfg.phantom.n_nodules);
        get_array_if(p, "nodule_diameter_range_mm", cfg.phantom.nodule_diameter_range_mm);
        get_if(p, "n_vessels", cfg.phantom.n_vessels);
        get_if(p, "noise_sigma_hu", cfg.phantom.noise_sigma_hu);
        get_array_if(p, "vessel_radius_range_mm", cfg.phantom.vessel_radius_range_mm);
        get_if(p, "vessel_bulge_rate", cfg.phantom.vessel_bulge_rate);
        get_if(p, "scan_id", cfg.phantom.scan_id);
    }
    return cfg;
}

std::string dump(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["phantom_count"] = cfg.phantom_count;
    j["model"] = {{"base_width", cfg.model.base_width},
                  {"encoder_depth", cfg.model.encoder_depth},
                  {"num_aux_detectors", cfg.model.num_aux_detectors},
                  {"input_size", cfg.model.input_size},
                  {"patch_depth", cfg.model.patch_depth},
                  {"dense_growth", cfg.model.dense_growth},
                  {"dense_width", cfg.model.dense_width},
                  {"head_width", cfg.model.head_width},
                  {"use_attention", cfg.model.use_attention},
                  {"use_patch_input", cfg.model.use_patch_input},
                  {"use_forward_mip", cfg.model.use_forward_mip},
                  {"use_backward_mip", cfg.model.use_backward_mip},
                  {"bn_momentum", cfg.model.bn_momentum}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"learning_rate", cfg.train.learning_rate},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"patience", cfg.train.patience},
                  {"max_epochs", cfg.train.max_epochs},
                  {"seed", cfg.train.seed},
                  {"pos_neg_ratio", cfg.train.pos_neg_ratio},
                  {"max_pos_per_scan", cfg.train.max_pos_per_scan},
                  {"max_neg_per_scan", cfg.train.max_neg_per_scan}};
    j["loss"] = {{"alpha", cfg.train.loss.alpha},
                 {"lambda_feat", cfg.train.loss.lambda_feat},
                 {"dice_epsilon", cfg.train.loss.dice_epsilon},
                 {"kl_epsilon", cfg.train.loss.kl_epsilon}};
    j["preproc"] = {{"air_threshold_hu", cfg.preproc.air_threshold_hu},
                    {"closing_radius_vox", cfg.preproc.closing_radius_vox},
                    {"dilation_radius_vox", cfg.preproc.dilation_radius_vox},
                    {"mask_fill_hu", cfg.preproc.mask_fill_hu},
                    {"crop_size", cfg.preproc.crop_size},
                    {"target_z_spacing_mm", cfg.preproc.target_z_spacing_mm}};
    j["candidates"] = {{"bin_threshold", cfg.candidates.bin_threshold},
                       {"min_voxels", cfg.candidates.min_voxels},
                       {"connectivity", cfg.candidates.connectivity},
                       {"tau", cfg.candidates.tau}};
    j["phantom"] = {{"seed", cfg.phantom.seed},
                    {"volume_shape", cfg.phantom.volume_shape},
                    {"spacing_mm", cfg.phantom.spacing_mm},
                    {"n_nodules", cfg.phantom.n_nodules},
                    {"nodule_diameter_range_mm", cfg.phantom.nodule_diameter_range_mm},
                    {"n_vessels", cfg.phantom.n_vessels},
                    {"noise_sigma_hu", cfg.phantom.noise_sigma_hu},
                    {"vessel_radius_range_mm", cfg.phantom.vessel_radius_range_mm},
                    {"vessel_bulge_rate", cfg.phantom.vessel_bulge_rate},
                    {"scan_id", cfg.phantom.scan_id}};
    return j.dump(2);
}

} // namespace meds::config
