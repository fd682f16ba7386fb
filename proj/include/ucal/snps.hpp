#pragma once

// Split proposals: partition a cluster into k groups with k-medoids, pick k by the summed
// compactness x independence of its groups, ask about group-medoid pairs, and split the
// cluster along negative answers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "ucal/annotation.hpp"
#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"
#include "ucal/union_find.hpp"

namespace ucal {

struct Group {
    std::vector<SampleId> members;  // ascending
    SampleId              medoid = 0;
    double                comp   = 1.0;
    double                indep  = 1.0;
};

struct GroupPartition {
    ClusterId          cluster_id = 0;
    std::vector<Group> groups;  // ascending medoid id
    std::size_t        k     = 0;
    double             score = 0.0;
};

inline constexpr std::size_t kMinSplitClusterSize = 4;
inline constexpr int         kMaxMedoidIterations = 100;

// max(2, floor(sqrt(|C|/2) / 2))
inline std::size_t split_k_max(std::size_t cluster_size) {
    const auto k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(cluster_size) / 2.0) / 2.0));
    return std::max<std::size_t>(2, k);
}

// Alternating k-medoids on cosine distance. Medoids start from the smallest member and grow by
// farthest-point selection; every medoid stays in its own group; ties go to the smallest id.
inline GroupPartition kmedoids_partition(const Cluster& cluster, std::size_t k, const SimilarityMatrix& similarity) {
    std::vector<SampleId> members = cluster.members;
    std::sort(members.begin(), members.end());
    if (k < 1 || k > members.size()) {
        throw Error("kmedoids_partition: k=" + std::to_string(k) + " exceeds " + std::to_string(members.size()) +
                    " members of cluster " + std::to_string(cluster.cluster_id));
    }

    std::vector<SampleId> medoids{members.front()};
    while (medoids.size() < k) {
        SampleId best     = members.front();
        double   best_gap = -1.0;
        for (SampleId m : members) {
            if (std::find(medoids.begin(), medoids.end(), m) != medoids.end()) continue;
            double gap = std::numeric_limits<double>::infinity();
            for (SampleId c : medoids) gap = std::min(gap, similarity.distance(m, c));
            if (gap > best_gap) {
                best     = m;
                best_gap = gap;
            }
        }
        medoids.push_back(best);
    }

    std::vector<std::vector<SampleId>> groups;
    for (int iter = 0; iter < kMaxMedoidIterations; ++iter) {
        std::sort(medoids.begin(), medoids.end());
        groups.assign(k, {});
        for (SampleId m : members) {
            std::size_t slot = k;
            for (std::size_t g = 0; g < k && slot == k; ++g) {
                if (medoids[g] == m) slot = g;
            }
            if (slot == k) {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t g = 0; g < k; ++g) {
                    const double d = similarity.distance(m, medoids[g]);
                    if (d < best) {
                        best = d;
                        slot = g;
                    }
                }
            }
            groups[slot].push_back(m);
        }
        std::vector<SampleId> updated(k);
        for (std::size_t g = 0; g < k; ++g) updated[g] = medoid_of(groups[g], similarity);
        std::sort(updated.begin(), updated.end());
        if (updated == medoids) break;
        medoids = std::move(updated);
    }

    GroupPartition partition;
    partition.cluster_id = cluster.cluster_id;
    partition.k          = k;
    for (std::size_t g = 0; g < k; ++g) {
        Group grp;
        grp.medoid  = medoid_of(groups[g], similarity);
        grp.members = std::move(groups[g]);
        partition.groups.push_back(std::move(grp));
    }
    std::sort(partition.groups.begin(), partition.groups.end(),
              [](const Group& a, const Group& b) { return a.medoid < b.medoid; });
    return partition;
}

// comp = min intra-group mapped similarity (1 for singletons); indep = 1 - max mapped similarity
// to any sibling group; score = sum of comp * indep.
inline GroupPartition group_scores(GroupPartition partition, const SimilarityMatrix& similarity) {
    std::vector<double> terms;
    for (std::size_t g = 0; g < partition.groups.size(); ++g) {
        Group& grp = partition.groups[g];
        if (grp.members.empty()) throw Error("group_scores: empty group");
        double comp = 1.0;
        for (std::size_t i = 0; i < grp.members.size(); ++i) {
            for (std::size_t j = i + 1; j < grp.members.size(); ++j) {
                comp = std::min(comp, similarity.mapped(grp.members[i], grp.members[j]));
            }
        }
        double max_inter = 0.0;
        for (std::size_t h = 0; h < partition.groups.size(); ++h) {
            if (h == g) continue;
            for (SampleId a : grp.members) {
                for (SampleId b : partition.groups[h].members) max_inter = std::max(max_inter, similarity.mapped(a, b));
            }
        }
        grp.comp  = comp;
        grp.indep = 1.0 - max_inter;
        terms.push_back(grp.comp * grp.indep);
    }
    // Summed in sorted order so the score does not depend on group order.
    std::sort(terms.begin(), terms.end());
    partition.score = 0.0;
    for (double t : terms) partition.score += t;
    return partition;
}

// Best-scoring partition over k in [2, k_max]; ties keep the smaller k. Clusters with fewer than
// four members are not split.
inline std::optional<GroupPartition> select_k_star(const Cluster& cluster, const SimilarityMatrix& similarity) {
    if (cluster.members.size() < kMinSplitClusterSize) return std::nullopt;
    const std::size_t             k_max = split_k_max(cluster.members.size());
    std::optional<GroupPartition> best;
    for (std::size_t k = 2; k <= k_max; ++k) {
        auto candidate = group_scores(kmedoids_partition(cluster, k, similarity), similarity);
        if (!best || candidate.score > best->score) best = std::move(candidate);
    }
    return best;
}

// Medoid pairs of the partition in (a, b) group order, canonical sample order within each pair.
inline std::vector<SamplePair> split_pairs(const GroupPartition& partition) {
    std::vector<SamplePair> out;
    for (std::size_t a = 0; a < partition.groups.size(); ++a) {
        for (std::size_t b = a + 1; b < partition.groups.size(); ++b) {
            out.push_back(SamplePair::of(partition.groups[a].medoid, partition.groups[b].medoid));
        }
    }
    return out;
}

// One SPLIT query per medoid pair the memory cannot already answer. query_id is left at 0 for
// the caller to stamp.
inline std::vector<QueryRequest> propose_split_queries(const GroupPartition& partition, const LabelMemory& memory,
                                                       int epoch = 0) {
    std::vector<QueryRequest> out;
    for (const auto& pair : split_pairs(partition)) {
        if (memory.resolve(pair)) continue;
        QueryRequest q;
        q.pair      = pair;
        q.kind      = QueryKind::Split;
        q.epoch     = epoch;
        q.cluster_a = partition.cluster_id;
        q.cluster_b = partition.cluster_id;
        out.push_back(q);
    }
    return out;
}

// Connected components of the groups under positive answers become the output clusters. The
// component holding the first group keeps the parent id; the others take ids from `next_id`.
inline std::vector<Cluster> apply_split(const Cluster& cluster, const GroupPartition& partition,
                                        const LabelMemory& memory, const FeatureMatrix& features,
                                        const SimilarityMatrix& similarity, ClusterId& next_id) {
    const std::size_t k = partition.groups.size();
    UnionFind         components(k);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            const auto pair    = SamplePair::of(partition.groups[a].medoid, partition.groups[b].medoid);
            const auto verdict = memory.resolve(pair);
            if (!verdict) {
                throw Error("apply_split: pair (" + std::to_string(pair.a) + "," + std::to_string(pair.b) +
                            ") of cluster " + std::to_string(cluster.cluster_id) + " is unresolved");
            }
            if (*verdict == Verdict::Positive) components.unite(a, b);
        }
    }

    std::vector<std::size_t>           root_order;
    std::vector<std::vector<SampleId>> pieces;
    for (std::size_t g = 0; g < k; ++g) {
        const std::size_t root = components.find(g);
        auto              it   = std::find(root_order.begin(), root_order.end(), root);
        std::size_t       slot = static_cast<std::size_t>(it - root_order.begin());
        if (it == root_order.end()) {
            root_order.push_back(root);
            pieces.emplace_back();
        }
        const auto& m = partition.groups[g].members;
        pieces[slot].insert(pieces[slot].end(), m.begin(), m.end());
    }

    std::vector<Cluster> out;
    for (std::size_t p = 0; p < pieces.size(); ++p) {
        const ClusterId id = p == 0 ? cluster.cluster_id : next_id++;
        out.push_back(make_cluster(id, std::move(pieces[p]), features, similarity));
    }
    return out;
}

}  // namespace ucal
