#pragma once

#include <filesystem>
#include <string>

#include "meds/candidate_fp.hpp"
#include "meds/ct_preproc.hpp"
#include "meds/meds_model.hpp"
#include "meds/phantom_data.hpp"
#include "meds/trainer.hpp"

namespace meds::config {

// One config file per run; model, training, preprocessing, candidate and
// phantom settings live together. Flags override file values.
struct RunConfig {
    std::uint64_t seed = 1;
    model::ModelConfig model;
    train::TrainConfig train;
    preproc::PreprocConfig preproc;
    cand::CandidateConfig candidates;
    phantom::PhantomSpec phantom;
    int phantom_count = 1;
};

RunConfig defaults();
RunConfig load(const std::filesystem::path& path);
std::string dump(const RunConfig& cfg); // pretty JSON of the effective config

} // namespace meds::config
