#pragma once

#include <json.hpp>

#include "peg/dataset.hpp"
#include "peg/embedder.hpp"
#include "peg/evolution.hpp"
#include "peg/metrics.hpp"

namespace peg {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HyperParams, eps, w_id, w_tri, w_mid, w_mtri, lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthSpec, num_identities, samples_per_identity,
                                                dim, intra_std, camera_count, camera_shift, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CrsConfig, ref_layers, ref_seed, M, ref_iters,
                                                ref_lr, ref_P, ref_K, ref_eps, ref_weight_decay,
                                                kmeans_iters, kmeans_batch, ref_avg)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerationConfig, L, H, r, generations, pml_epochs,
                                                S, alpha, P, K, dbscan_eps, min_samples, k1, k2,
                                                weight_decay, batches_per_epoch, crs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BrdStep, round, agent, actions, dedup, utility,
                                                changed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SelectionRecord, generation, final_selection,
                                                selected_ids, utility, converged, trace)

// NaN has no JSON literal; record fields round-trip through null.
nlohmann::json record_to_json(const MetricRecord& r);
MetricRecord record_from_json(const nlohmann::json& j);

nlohmann::json scatter_to_json(const ScatterReport& r);
nlohmann::json retrieval_to_json(const RetrievalReport& r);

}  // namespace peg
