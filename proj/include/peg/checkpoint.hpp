#pragma once

#include <string>

#include "peg/embedder.hpp"

namespace peg {

// One model per file: a magic line, a single-line JSON header (arch, classes,
// hyper, lineage, model_id, timestep, rng_stream), then little-endian float32
// blobs for params, ema_params and both Adam moments, each laid out layer by
// layer (W row-major, then b) with the classifier last.
void save_model_checkpoint(const Embedder& m, const std::string& path);
Embedder load_model_checkpoint(const std::string& path);

}  // namespace peg
