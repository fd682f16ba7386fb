#pragma once

// Shared fixtures and brute-force reference implementations used as test oracles. Nothing here
// calls into the library routine it is checked against.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"

namespace ucal::test {

inline FeatureMatrix rows_of(const std::vector<std::vector<double>>& rows, bool normalized = false) {
    std::vector<double> values;
    const std::size_t   dim = rows.empty() ? 0 : rows.front().size();
    for (const auto& r : rows) values.insert(values.end(), r.begin(), r.end());
    return FeatureMatrix(rows.size(), dim, std::move(values), normalized);
}

inline FeatureMatrix unit_circle(const std::vector<double>& degrees) {
    std::vector<std::vector<double>> rows;
    for (double d : degrees) {
        const double r = d * M_PI / 180.0;
        rows.push_back({std::cos(r), std::sin(r)});
    }
    return l2_normalize(rows_of(rows));
}

inline FeatureMatrix random_unit_rows(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double>              v(n * dim);
    for (double& x : v) x = g(rng);
    return l2_normalize(FeatureMatrix(n, dim, std::move(v)));
}

// Points scattered around a few random directions, so random instances actually form clusters.
inline FeatureMatrix random_blobs(std::size_t n, std::size_t dim, std::size_t centers, double spread, std::mt19937_64& rng) {
    std::normal_distribution<double>           g(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, centers - 1);
    std::vector<double>                        c(centers * dim);
    for (double& x : c) x = g(rng);
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = pick(rng);
        for (std::size_t d = 0; d < dim; ++d) v.push_back(c[k * dim + d] + spread * g(rng));
    }
    return l2_normalize(FeatureMatrix(n, dim, std::move(v)));
}

inline double cosine(const FeatureMatrix& f, std::size_t i, std::size_t j) {
    double s = 0.0, a = 0.0, b = 0.0;
    for (std::size_t d = 0; d < f.dim(); ++d) {
        s += f.row(i)[d] * f.row(j)[d];
        a += f.row(i)[d] * f.row(i)[d];
        b += f.row(j)[d] * f.row(j)[d];
    }
    return std::clamp(s / std::sqrt(a * b), -1.0, 1.0);
}

struct NaiveClustering {
    std::vector<std::vector<std::size_t>> clusters;  // sorted members, sorted list
    std::set<std::size_t>                 outliers;
};

// Textbook DBSCAN: connect core points within eps with a flat label-merging pass, then attach
// each border point to the cluster of its smallest-id core neighbor.
inline NaiveClustering naive_dbscan(const SimilarityMatrix& sim, double eps, std::size_t min_pts) {
    const std::size_t n = sim.size();
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t count = 0;
        for (std::size_t j = 0; j < n; ++j) count += (1.0 - sim(i, j) <= eps) ? 1 : 0;
        core[i] = count >= min_pts;
    }
    std::vector<std::size_t> label(n);
    for (std::size_t i = 0; i < n; ++i) label[i] = i;
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (core[i] && core[j] && 1.0 - sim(i, j) <= eps && label[j] < label[i]) {
                    label[i] = label[j];
                    changed  = true;
                }
            }
        }
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    NaiveClustering                                 out;
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) {
            groups[label[i]].push_back(i);
            continue;
        }
        bool attached = false;
        for (std::size_t j = 0; j < n && !attached; ++j) {
            if (core[j] && 1.0 - sim(i, j) <= eps) {
                groups[label[j]].push_back(i);
                attached = true;
            }
        }
        if (!attached) out.outliers.insert(i);
    }
    for (auto& [k, m] : groups) {
        std::sort(m.begin(), m.end());
        out.clusters.push_back(m);
    }
    std::sort(out.clusters.begin(), out.clusters.end());
    return out;
}

// Sum over groups of (min intra mapped similarity) x (1 - max mapped similarity to other groups),
// evaluated straight from the feature rows.
inline double partition_score(const FeatureMatrix& f, const std::vector<std::vector<std::size_t>>& groups) {
    auto   mapped = [&](std::size_t a, std::size_t b) { return (cosine(f, a, b) + 1.0) / 2.0; };
    double score  = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        double comp = 1.0;
        for (std::size_t a : groups[g]) {
            for (std::size_t b : groups[g]) {
                if (a != b) comp = std::min(comp, mapped(a, b));
            }
        }
        double inter = 0.0;
        for (std::size_t h = 0; h < groups.size(); ++h) {
            if (h == g) continue;
            for (std::size_t a : groups[g]) {
                for (std::size_t b : groups[h]) inter = std::max(inter, mapped(a, b));
            }
        }
        score += comp * (1.0 - inter);
    }
    return score;
}

inline std::size_t brute_k_max(std::size_t n) {
    std::size_t k = 0;
    while ((k + 1) * (k + 1) * 8 <= n) ++k;  // floor(sqrt(n/2)/2) without floating point
    return std::max<std::size_t>(k, 2);
}

// Merge pairs selected by the gap rule, computed from cluster member rows: centroid = normalized
// member mean, rank by cosine (ties by id), min-max normalize adjacent gaps, keep the prefix up to
// the first gap above delta.
inline std::set<std::pair<std::size_t, std::size_t>> brute_merge_pairs(
    const FeatureMatrix& f, const std::vector<std::vector<std::size_t>>& clusters, double delta, std::size_t l_max) {
    const std::size_t                n = clusters.size();
    std::vector<std::vector<double>> cen(n, std::vector<double>(f.dim(), 0.0));
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t s : clusters[c]) {
            for (std::size_t d = 0; d < f.dim(); ++d) cen[c][d] += f.row(s)[d];
        }
        double len = 0.0;
        for (double v : cen[c]) len += v * v;
        for (double& v : cen[c]) v /= std::sqrt(len);
    }
    std::set<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t a = 0; a < n; ++a) {
        std::vector<std::pair<double, std::size_t>> rank;
        for (std::size_t b = 0; b < n; ++b) {
            if (b == a) continue;
            double s = 0.0;
            for (std::size_t d = 0; d < f.dim(); ++d) s += cen[a][d] * cen[b][d];
            rank.push_back({-std::clamp(s, -1.0, 1.0), b});
        }
        std::sort(rank.begin(), rank.end());
        if (rank.size() > l_max) rank.resize(l_max);
        if (rank.size() < 2) continue;
        std::vector<double> gaps;
        for (std::size_t l = 0; l + 1 < rank.size(); ++l) gaps.push_back(rank[l + 1].first - rank[l].first);
        const double lo = *std::min_element(gaps.begin(), gaps.end());
        const double hi = *std::max_element(gaps.begin(), gaps.end());
        if (hi - lo <= 1e-12) continue;
        for (std::size_t l = 0; l < gaps.size(); ++l) {
            if ((gaps[l] - lo) / (hi - lo) > delta) {
                for (std::size_t i = 0; i <= l; ++i) out.insert({std::min(a, rank[i].second), std::max(a, rank[i].second)});
                break;
            }
        }
    }
    return out;
}

// Unique scratch directory removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        std::random_device   rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ucal_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&)            = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

}  // namespace ucal::test
