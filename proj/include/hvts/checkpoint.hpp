#pragma once

#include <string>

#include "hvts/model.hpp"

namespace hvts::models {

// Model checkpoint: magic "HVTS", u32 version, the canonical spec JSON, then
// named little-endian f64 blobs in ledger order followed by the batch-norm
// running statistics.  Serialising an unchanged model is byte-identical.
void save_checkpoint(const std::string& path, Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace hvts::models
