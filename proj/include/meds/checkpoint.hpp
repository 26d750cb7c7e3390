#pragma once

#include <filesystem>

#include "meds/meds_model.hpp"

namespace meds::ckpt {

// Single-archive checkpoint: magic, JSON header (format version, model config,
// tensor index), then raw float32 arrays. Writes are atomic
// (write-temp-then-rename). Loading validates config compatibility.

void save_checkpoint(const std::filesystem::path& path,
                     const model::MedsNet<float>& net);
model::MedsNet<float> load_checkpoint(const std::filesystem::path& path);

} // namespace meds::ckpt
