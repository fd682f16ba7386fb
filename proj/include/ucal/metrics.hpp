#pragma once

// Clustering quality against ground truth, retrieval mAP/CMC, and the per-epoch report record.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"

namespace ucal {

struct EpochMetrics {
    int         epoch              = 0;
    std::size_t n_clusters         = 0;
    std::size_t n_outliers         = 0;
    std::size_t queries_issued     = 0;
    std::size_t cumulative_m       = 0;
    double      cost_percent       = 0.0;
    double      pairwise_precision = 0.0;
    double      pairwise_recall    = 0.0;
    double      pairwise_f1        = 0.0;
    double      nmi                = 0.0;
    double      mean_loss          = 0.0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["epoch"]              = epoch;
        j["n_clusters"]         = n_clusters;
        j["n_outliers"]         = n_outliers;
        j["queries_issued"]     = queries_issued;
        j["cumulative_M"]       = cumulative_m;
        j["cost_percent"]       = cost_percent;
        j["pairwise_precision"] = pairwise_precision;
        j["pairwise_recall"]    = pairwise_recall;
        j["pairwise_f1"]        = pairwise_f1;
        j["nmi"]                = nmi;
        j["mean_loss"]          = mean_loss;
        return j;
    }
};

struct PairwiseScores {
    double precision = 0.0;
    double recall    = 0.0;
    double f1        = 0.0;
};

// Ground-truth identities of every sample; throws when any is missing.
inline std::vector<std::string> identities(const DatasetBundle& dataset) {
    std::vector<std::string> out;
    out.reserve(dataset.size());
    for (const auto& s : dataset.samples) {
        if (!s.identity) throw Error("sample " + std::to_string(s.sample_id) + " has no ground-truth identity");
        out.push_back(*s.identity);
    }
    return out;
}

namespace detail {

// Cluster label per sample with outliers turned into distinct singleton labels.
inline std::vector<std::int64_t> labels_with_singletons(const ClusterState& state) {
    std::vector<std::int64_t> out(state.assignment.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = state.assignment[i] == kOutlier ? -1 - static_cast<std::int64_t>(i) : state.assignment[i];
    }
    return out;
}

inline std::vector<std::size_t> dense_codes(std::span<const std::string> truth) {
    std::map<std::string, std::size_t> code;
    std::vector<std::size_t>           out;
    out.reserve(truth.size());
    for (const auto& t : truth) out.push_back(code.emplace(t, code.size()).first->second);
    return out;
}

inline double pairs(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace detail

// Pair-counting precision/recall. Outliers count as singletons. With no same-cluster pairs the
// precision is 1; with no same-identity pairs the recall is 0.
inline PairwiseScores pairwise_prf(const ClusterState& state, std::span<const std::string> truth) {
    if (truth.size() != state.assignment.size()) throw Error("pairwise_prf: identity count does not match samples");
    const auto labels = detail::labels_with_singletons(state);
    const auto ids    = detail::dense_codes(truth);

    std::map<std::int64_t, double>                           per_cluster;
    std::map<std::size_t, double>                            per_identity;
    std::map<std::pair<std::int64_t, std::size_t>, double>   joint;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        per_cluster[labels[i]] += 1.0;
        per_identity[ids[i]] += 1.0;
        joint[{labels[i], ids[i]}] += 1.0;
    }
    double same_cluster = 0.0, same_identity = 0.0, both = 0.0;
    for (const auto& [k, n] : per_cluster) same_cluster += detail::pairs(n);
    for (const auto& [k, n] : per_identity) same_identity += detail::pairs(n);
    for (const auto& [k, n] : joint) both += detail::pairs(n);

    PairwiseScores s;
    s.precision = same_cluster > 0.0 ? both / same_cluster : 1.0;
    s.recall    = same_identity > 0.0 ? both / same_identity : 0.0;
    s.f1        = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

// I(U;V) / sqrt(H(U) H(V)) with natural logs. A zero-entropy side scores 1 only for identical
// partitions.
inline double nmi(const ClusterState& state, std::span<const std::string> truth) {
    if (truth.size() != state.assignment.size()) throw Error("nmi: identity count does not match samples");
    const auto   labels = detail::labels_with_singletons(state);
    const auto   ids    = detail::dense_codes(truth);
    const double n      = static_cast<double>(labels.size());
    if (labels.empty()) return 1.0;

    std::map<std::int64_t, double>                         pu;
    std::map<std::size_t, double>                          pv;
    std::map<std::pair<std::int64_t, std::size_t>, double> puv;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        pu[labels[i]] += 1.0;
        pv[ids[i]] += 1.0;
        puv[{labels[i], ids[i]}] += 1.0;
    }
    auto entropy = [n](const auto& counts) {
        double h = 0.0;
        for (const auto& [k, c] : counts) h -= (c / n) * std::log(c / n);
        return h;
    };
    const double hu = entropy(pu);
    const double hv = entropy(pv);
    if (hu <= 1e-15 || hv <= 1e-15) {
        // identical partitions share the contingency structure exactly
        const bool identical = puv.size() == pu.size() && puv.size() == pv.size();
        return identical ? 1.0 : 0.0;
    }
    double mi = 0.0;
    for (const auto& [key, c] : puv) mi += (c / n) * std::log(c * n / (pu[key.first] * pv[key.second]));
    return std::clamp(mi / std::sqrt(hu * hv), 0.0, 1.0);
}

struct RetrievalResult {
    double                     mean_ap = 0.0;
    std::map<std::size_t, double> cmc;  // rank -> fraction of queries matched within that rank
};

// Optional camera metadata; when both sides are given, gallery items sharing identity and camera
// with the query are excluded.
struct RetrievalCameras {
    std::span<const std::string> query;
    std::span<const std::string> gallery;
};

inline RetrievalResult retrieval_map_cmc(const FeatureMatrix& query_embeds, std::span<const std::string> query_ids,
                                         const FeatureMatrix& gallery_embeds, std::span<const std::string> gallery_ids,
                                         std::span<const std::size_t> ranks,
                                         std::optional<RetrievalCameras> cameras = std::nullopt) {
    if (query_embeds.rows() != query_ids.size() || gallery_embeds.rows() != gallery_ids.size()) {
        throw Error("retrieval: embedding and identity counts differ");
    }
    if (query_embeds.dim() != gallery_embeds.dim()) throw Error("retrieval: query and gallery dimensions differ");

    RetrievalResult result;
    for (std::size_t r : ranks) {
        if (r == 0) throw Error("retrieval: ranks start at 1");
        result.cmc[r] = 0.0;
    }
    if (query_ids.empty()) return result;

    double ap_sum = 0.0;
    for (std::size_t q = 0; q < query_ids.size(); ++q) {
        std::vector<std::size_t> order;
        for (std::size_t g = 0; g < gallery_ids.size(); ++g) {
            if (cameras && gallery_ids[g] == query_ids[q] && cameras->gallery[g] == cameras->query[q]) continue;
            order.push_back(g);
        }
        std::vector<double> score(gallery_ids.size());
        for (std::size_t g : order) score[g] = dot(query_embeds.row(q), gallery_embeds.row(g));
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

        std::size_t hits      = 0;
        double      precision = 0.0;
        std::size_t first_hit = 0;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (gallery_ids[order[pos]] != query_ids[q]) continue;
            ++hits;
            if (hits == 1) first_hit = pos + 1;
            precision += static_cast<double>(hits) / static_cast<double>(pos + 1);
        }
        if (hits == 0) throw Error("retrieval: query identity '" + query_ids[q] + "' absent from gallery");
        ap_sum += precision / static_cast<double>(hits);
        for (auto& [r, v] : result.cmc) {
            if (first_hit <= r) v += 1.0;
        }
    }
    const double nq = static_cast<double>(query_ids.size());
    result.mean_ap  = ap_sum / nq;
    for (auto& [r, v] : result.cmc) v /= nq;
    return result;
}

}  // namespace ucal
