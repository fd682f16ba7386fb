#pragma once

// Merge proposals: rank each cluster's nearest centroids, find the first large similarity gap,
// ask about the pairs before it, and merge clusters confirmed positive under a per-epoch cap.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "ucal/annotation.hpp"
#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"
#include "ucal/union_find.hpp"

namespace ucal {

struct RankedNeighbor {
    ClusterId cluster_id = 0;
    double    similarity = 0.0;
};

struct RankList {
    ClusterId                   anchor_cluster = 0;
    std::vector<RankedNeighbor> neighbors;  // non-increasing similarity, ties by ascending id
};

struct GapVector {
    std::vector<double> raw;
    std::vector<double> normalized;
};

// A cluster pair the gap rule selects, realized on the clusters' medoid samples.
struct MergeCandidate {
    ClusterId  anchor   = 0;
    ClusterId  neighbor = 0;
    SamplePair pair;
    double     similarity = 0.0;
};

struct MergePair {
    ClusterId a          = 0;
    ClusterId b          = 0;
    double    similarity = 0.0;
};

inline constexpr std::size_t kDefaultRankLength = 10;

// Gap spreads at or below this are treated as all-equal.
inline constexpr double kDegenerateGapSpread = 1e-12;

inline double centroid_similarity(const Cluster& a, const Cluster& b) {
    return std::clamp(dot(a.centroid, b.centroid), -1.0, 1.0);
}

inline RankList rank_neighbors(const ClusterState& state, ClusterId anchor, std::size_t l_max = kDefaultRankLength) {
    if (state.size() < 2) throw Error("rank_neighbors needs at least two clusters");
    const Cluster& a = state.clusters[state.index_of(anchor)];
    RankList       rank;
    rank.anchor_cluster = anchor;
    for (const auto& c : state.clusters) {
        if (c.cluster_id == anchor) continue;
        rank.neighbors.push_back({c.cluster_id, centroid_similarity(a, c)});
    }
    std::sort(rank.neighbors.begin(), rank.neighbors.end(), [](const RankedNeighbor& x, const RankedNeighbor& y) {
        if (x.similarity != y.similarity) return x.similarity > y.similarity;
        return x.cluster_id < y.cluster_id;
    });
    if (rank.neighbors.size() > l_max) rank.neighbors.resize(l_max);
    return rank;
}

// Adjacent similarity differences and their min-max normalization. When every gap is equal the
// normalized values are all 0.
inline GapVector normalized_gaps(const RankList& rank) {
    GapVector gaps;
    const auto& s = rank.neighbors;
    for (std::size_t l = 0; l + 1 < s.size(); ++l) gaps.raw.push_back(s[l].similarity - s[l + 1].similarity);
    if (gaps.raw.empty()) return gaps;
    const auto [lo, hi] = std::minmax_element(gaps.raw.begin(), gaps.raw.end());
    const double spread = *hi - *lo;
    gaps.normalized.assign(gaps.raw.size(), 0.0);
    if (spread <= kDegenerateGapSpread) return gaps;
    for (std::size_t l = 0; l < gaps.raw.size(); ++l) gaps.normalized[l] = (gaps.raw[l] - *lo) / spread;
    return gaps;
}

// Number of leading neighbors to query: the smallest 1-based l with d*_l > delta, or 0.
inline std::size_t merge_prefix_length(const GapVector& gaps, double delta) {
    for (std::size_t l = 0; l < gaps.normalized.size(); ++l) {
        if (gaps.normalized[l] > delta) return l + 1;
    }
    return 0;
}

// Every cluster pair selected by the gap rule, deduplicated, ordered by medoid pair.
inline std::vector<MergeCandidate> merge_candidates(const ClusterState& state, double delta,
                                                    std::size_t l_max = kDefaultRankLength) {
    std::vector<MergeCandidate> out;
    if (state.size() < 2) return out;
    std::set<std::pair<ClusterId, ClusterId>> seen;
    for (const auto& anchor : state.clusters) {
        const RankList    rank = rank_neighbors(state, anchor.cluster_id, l_max);
        const std::size_t l    = merge_prefix_length(normalized_gaps(rank), delta);
        for (std::size_t i = 0; i < l; ++i) {
            const auto& nb  = rank.neighbors[i];
            const auto  key = std::minmax(anchor.cluster_id, nb.cluster_id);
            if (!seen.insert({key.first, key.second}).second) continue;
            const Cluster& other = state.clusters[state.index_of(nb.cluster_id)];
            out.push_back({anchor.cluster_id, nb.cluster_id, SamplePair::of(anchor.medoid, other.medoid), nb.similarity});
        }
    }
    std::sort(out.begin(), out.end(), [](const MergeCandidate& x, const MergeCandidate& y) { return x.pair < y.pair; });
    return out;
}

// MERGE queries for the candidates the memory cannot already answer. query_id is left at 0.
inline std::vector<QueryRequest> propose_merge_queries(const ClusterState& state, double delta, std::size_t l_max,
                                                       const LabelMemory& memory, int epoch = 0) {
    std::vector<QueryRequest> out;
    for (const auto& c : merge_candidates(state, delta, l_max)) {
        if (memory.resolve(c.pair)) continue;
        QueryRequest q;
        q.pair  = c.pair;
        q.kind  = QueryKind::Merge;
        q.epoch = epoch;
        // cluster_a holds pair.a
        const bool anchor_first = state.clusters[state.index_of(c.anchor)].medoid == c.pair.a;
        q.cluster_a             = anchor_first ? c.anchor : c.neighbor;
        q.cluster_b             = anchor_first ? c.neighbor : c.anchor;
        out.push_back(q);
    }
    return out;
}

// floor(cap_fraction * cluster_count), tolerant of representation error in the product.
inline std::size_t merge_cap(double cap_fraction, std::size_t cluster_count) {
    return static_cast<std::size_t>(std::floor(cap_fraction * static_cast<double>(cluster_count) + 1e-9));
}

// Accepts positive pairs in descending similarity order until the number of union operations
// reaches floor(cap_fraction * reference_count). Each merged component keeps its smallest id.
inline ClusterState apply_merges(ClusterState state, std::vector<MergePair> positives, double cap_fraction,
                                 std::size_t reference_count, const FeatureMatrix& features,
                                 const SimilarityMatrix& similarity) {
    if (!(cap_fraction > 0.0 && cap_fraction <= 1.0)) throw Error("merge cap fraction must lie in (0, 1]");
    std::sort(positives.begin(), positives.end(), [](const MergePair& x, const MergePair& y) {
        if (x.similarity != y.similarity) return x.similarity > y.similarity;
        return std::minmax(x.a, x.b) < std::minmax(y.a, y.b);
    });

    const std::size_t cap = merge_cap(cap_fraction, reference_count);
    UnionFind         components(state.size());
    std::size_t       merges = 0;
    for (const auto& p : positives) {
        if (merges >= cap) break;
        if (components.unite(state.index_of(p.a), state.index_of(p.b))) ++merges;
    }
    if (merges == 0) return state;

    std::map<std::size_t, std::vector<std::size_t>> by_root;
    for (std::size_t i = 0; i < state.size(); ++i) by_root[components.find(i)].push_back(i);

    std::vector<Cluster> merged;
    for (const auto& [root, idx] : by_root) {
        if (idx.size() == 1) {
            merged.push_back(std::move(state.clusters[idx.front()]));
            continue;
        }
        std::vector<SampleId> members;
        ClusterId             id = state.clusters[idx.front()].cluster_id;
        for (std::size_t i : idx) {
            const auto& c = state.clusters[i];
            id            = std::min(id, c.cluster_id);
            members.insert(members.end(), c.members.begin(), c.members.end());
        }
        merged.push_back(make_cluster(id, std::move(members), features, similarity));
    }
    state.clusters = std::move(merged);
    reindex(state);
    return state;
}

inline ClusterState apply_merges(ClusterState state, std::vector<MergePair> positives, double cap_fraction,
                                 const FeatureMatrix& features, const SimilarityMatrix& similarity) {
    const std::size_t n = state.size();
    return apply_merges(std::move(state), std::move(positives), cap_fraction, n, features, similarity);
}

}  // namespace ucal
