#pragma once

// Density-based base clustering and per-cluster centroid/medoid bookkeeping.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucal/dataset.hpp"

namespace ucal {

using ClusterId = int;

inline constexpr ClusterId kOutlier = -1;

struct Cluster {
    ClusterId             cluster_id = 0;
    std::vector<SampleId> members;  // ascending
    std::vector<double>   centroid;
    SampleId              medoid = 0;
};

struct ClusterState {
    std::vector<ClusterId> assignment;  // per sample; kOutlier when unclustered
    std::vector<Cluster>   clusters;    // ascending cluster_id
    int                    epoch = 0;

    std::size_t size() const noexcept { return clusters.size(); }

    const Cluster* find(ClusterId id) const {
        auto it = std::lower_bound(clusters.begin(), clusters.end(), id,
                                   [](const Cluster& c, ClusterId v) { return c.cluster_id < v; });
        return (it != clusters.end() && it->cluster_id == id) ? &*it : nullptr;
    }

    std::size_t index_of(ClusterId id) const {
        const Cluster* c = find(id);
        if (!c) throw Error("unknown cluster id " + std::to_string(id));
        return static_cast<std::size_t>(c - clusters.data());
    }

    ClusterId next_id() const { return clusters.empty() ? 0 : clusters.back().cluster_id + 1; }

    std::size_t outlier_count() const {
        return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), kOutlier));
    }
};

// Rebuilds the assignment vector from cluster member lists and sorts clusters by id.
inline void reindex(ClusterState& state) {
    std::sort(state.clusters.begin(), state.clusters.end(),
              [](const Cluster& a, const Cluster& b) { return a.cluster_id < b.cluster_id; });
    std::fill(state.assignment.begin(), state.assignment.end(), kOutlier);
    for (const auto& c : state.clusters) {
        for (SampleId s : c.members) {
            if (s >= state.assignment.size()) throw Error("cluster member out of range");
            if (state.assignment[s] != kOutlier) {
                throw Error("sample " + std::to_string(s) + " belongs to more than one cluster");
            }
            state.assignment[s] = c.cluster_id;
        }
    }
}

// Deterministic DBSCAN over cosine distance. Neighborhoods include the point itself and use
// distance <= eps. Clusters are numbered in order of their smallest core point; border points
// go to the cluster of their smallest-id core neighbor.
inline ClusterState dbscan(const SimilarityMatrix& similarity, double eps, std::size_t min_pts) {
    if (!(eps > 0.0 && eps <= 2.0)) throw Error("dbscan: eps must lie in (0, 2]");
    if (min_pts < 2) throw Error("dbscan: min_pts must be at least 2");

    const std::size_t n = similarity.size();
    auto neighbors      = [&](std::size_t i) {
        std::vector<SampleId> out;
        for (std::size_t j = 0; j < n; ++j) {
            if (similarity.distance(i, j) <= eps) out.push_back(j);
        }
        return out;
    };

    std::vector<std::vector<SampleId>> hood(n);
    std::vector<char>                  core(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        hood[i] = neighbors(i);
        core[i] = hood[i].size() >= min_pts ? 1 : 0;
    }

    ClusterState state;
    state.assignment.assign(n, kOutlier);
    ClusterId next = 0;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!core[seed] || state.assignment[seed] != kOutlier) continue;
        const ClusterId cid   = next++;
        state.assignment[seed] = cid;
        std::deque<SampleId> frontier{seed};
        while (!frontier.empty()) {
            const SampleId p = frontier.front();
            frontier.pop_front();
            for (SampleId q : hood[p]) {
                if (core[q] && state.assignment[q] == kOutlier) {
                    state.assignment[q] = cid;
                    frontier.push_back(q);
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        for (SampleId q : hood[i]) {  // ascending, so the first core neighbor is the smallest
            if (core[q]) {
                state.assignment[i] = state.assignment[q];
                break;
            }
        }
    }

    state.clusters.resize(static_cast<std::size_t>(next));
    for (ClusterId c = 0; c < next; ++c) state.clusters[static_cast<std::size_t>(c)].cluster_id = c;
    for (std::size_t i = 0; i < n; ++i) {
        if (state.assignment[i] != kOutlier) state.clusters[static_cast<std::size_t>(state.assignment[i])].members.push_back(i);
    }
    return state;
}

// Member of `members` with maximal mean similarity to the other members; ties go to the smallest id.
inline SampleId medoid_of(std::span<const SampleId> members, const SimilarityMatrix& similarity) {
    if (members.empty()) throw Error("medoid of an empty member set");
    SampleId best       = members.front();
    double   best_score = -std::numeric_limits<double>::infinity();
    for (SampleId a : members) {
        double sum = 0.0;
        for (SampleId b : members) {
            if (a != b) sum += similarity(a, b);
        }
        const double score = members.size() > 1 ? sum / static_cast<double>(members.size() - 1) : 0.0;
        if (score > best_score || (score == best_score && a < best)) {
            best       = a;
            best_score = score;
        }
    }
    return best;
}

// Re-normalized mean of member rows. A vanishing mean falls back to the medoid row.
inline std::vector<double> centroid_of(std::span<const SampleId> members, const FeatureMatrix& features, SampleId medoid) {
    std::vector<double> c(features.dim(), 0.0);
    for (SampleId s : members) {
        const auto r = features.row(s);
        for (std::size_t d = 0; d < c.size(); ++d) c[d] += r[d];
    }
    double n = norm(c);
    if (n < 1e-12) {
        const auto r = features.row(medoid);
        c.assign(r.begin(), r.end());
        n = norm(c);
    }
    for (double& v : c) v /= n;
    return c;
}

inline Cluster make_cluster(ClusterId id, std::vector<SampleId> members, const FeatureMatrix& features,
                            const SimilarityMatrix& similarity) {
    if (members.empty()) throw Error("cluster " + std::to_string(id) + " is empty");
    std::sort(members.begin(), members.end());
    Cluster c;
    c.cluster_id = id;
    c.medoid     = medoid_of(members, similarity);
    c.centroid   = centroid_of(members, features, c.medoid);
    c.members    = std::move(members);
    return c;
}

inline ClusterState compute_centroids(ClusterState state, const FeatureMatrix& features, const SimilarityMatrix& similarity) {
    if (state.assignment.size() != features.rows()) throw Error("cluster state does not match feature rows");
    for (auto& c : state.clusters) c = make_cluster(c.cluster_id, std::move(c.members), features, similarity);
    return state;
}

// Set-of-sets view of a partition, for comparisons that ignore cluster ids.
inline std::vector<std::vector<SampleId>> canonical_partition(const ClusterState& state) {
    std::vector<std::vector<SampleId>> out;
    for (const auto& c : state.clusters) {
        auto m = c.members;
        std::sort(m.begin(), m.end());
        out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace ucal
