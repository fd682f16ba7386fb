#pragma once

// Trainable linear embedding head and the centroid contrastive objective
//
//   L(x) = -log( exp(x.c_k / tau) / sum_i exp(x.c_i / tau) )
//
// where x = normalize(W^T f) is the head output for input feature f and c_i are the current
// cluster centroids in head-output space. Centroids are constants within a step.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"

namespace ucal {

struct CentroidBank {
    FeatureMatrix centroids;  // n x D, unit rows

    std::size_t size() const noexcept { return centroids.rows(); }
    std::size_t dim() const noexcept { return centroids.dim(); }
};

class LinearHead {
  public:
    LinearHead() = default;

    // Identity when the dimensions agree, otherwise a seeded random orthonormal map.
    LinearHead(std::size_t input_dim, std::size_t output_dim, double learning_rate, double tau, std::uint64_t seed = 0)
      : input_dim_(input_dim), output_dim_(output_dim), weights_(input_dim * output_dim, 0.0),
        learning_rate_(learning_rate), tau_(tau) {
        if (input_dim == 0 || output_dim == 0) throw Error("head dimensions must be positive");
        if (!(tau > 0.0)) throw Error("temperature must be positive");
        if (!(learning_rate >= 0.0)) throw Error("learning rate must be non-negative");
        if (input_dim == output_dim) {
            for (std::size_t i = 0; i < input_dim; ++i) weights_[i * output_dim + i] = 1.0;
        } else {
            init_orthonormal(seed);
        }
    }

    std::size_t input_dim() const noexcept { return input_dim_; }
    std::size_t output_dim() const noexcept { return output_dim_; }
    double      learning_rate() const noexcept { return learning_rate_; }
    double      tau() const noexcept { return tau_; }

    // Row-major input_dim x output_dim.
    const std::vector<double>& weights() const noexcept { return weights_; }
    std::vector<double>&       weights() noexcept { return weights_; }

    // W^T f before normalization.
    std::vector<double> project(std::span<const double> f) const {
        std::vector<double> z(output_dim_, 0.0);
        for (std::size_t i = 0; i < input_dim_; ++i) {
            const double  fi  = f[i];
            const double* row = weights_.data() + i * output_dim_;
            for (std::size_t j = 0; j < output_dim_; ++j) z[j] += fi * row[j];
        }
        return z;
    }

    std::vector<double> embed(std::span<const double> f) const {
        auto         z = project(f);
        const double n = norm(z);
        if (n == 0.0) throw Error("head output has zero norm");
        for (double& v : z) v /= n;
        return z;
    }

    FeatureMatrix embed_all(const FeatureMatrix& features) const {
        if (features.dim() != input_dim_) throw Error("feature dimension does not match head input");
        std::vector<double> out;
        out.reserve(features.rows() * output_dim_);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            const auto x = embed(features.row(i));
            out.insert(out.end(), x.begin(), x.end());
        }
        return FeatureMatrix(features.rows(), output_dim_, std::move(out), true);
    }

  private:
    void init_orthonormal(std::uint64_t seed) {
        std::mt19937_64                  rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (double& w : weights_) w = gauss(rng);
        // Gram-Schmidt over whichever side is shorter so the map is an isometry or co-isometry.
        const bool        by_column = output_dim_ <= input_dim_;
        const std::size_t count     = by_column ? output_dim_ : input_dim_;
        const std::size_t length    = by_column ? input_dim_ : output_dim_;
        auto at = [&](std::size_t v, std::size_t e) -> double& {
            return by_column ? weights_[e * output_dim_ + v] : weights_[v * output_dim_ + e];
        };
        for (std::size_t v = 0; v < count; ++v) {
            for (std::size_t u = 0; u < v; ++u) {
                double proj = 0.0;
                for (std::size_t e = 0; e < length; ++e) proj += at(v, e) * at(u, e);
                for (std::size_t e = 0; e < length; ++e) at(v, e) -= proj * at(u, e);
            }
            double n = 0.0;
            for (std::size_t e = 0; e < length; ++e) n += at(v, e) * at(v, e);
            n = std::sqrt(n);
            for (std::size_t e = 0; e < length; ++e) at(v, e) /= n;
        }
    }

    std::size_t         input_dim_  = 0;
    std::size_t         output_dim_ = 0;
    std::vector<double> weights_;
    double              learning_rate_ = 0.0;
    double              tau_           = 1.0;
};

namespace detail {

inline void check_loss_args(std::span<const double> x, const CentroidBank& bank, std::size_t k, double tau) {
    if (!(tau > 0.0)) throw Error("temperature must be positive");
    if (k >= bank.size()) throw Error("target centroid index out of range");
    if (x.size() != bank.dim()) throw Error("embedding and centroid dimensions differ");
}

// Softmax over x.c_i / tau with max subtraction.
inline std::vector<double> softmax_logits(std::span<const double> x, const CentroidBank& bank, double tau,
                                          double* log_norm = nullptr) {
    std::vector<double> logits(bank.size());
    double              top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < bank.size(); ++i) {
        logits[i] = dot(x, bank.centroids.row(i)) / tau;
        top       = std::max(top, logits[i]);
    }
    double total = 0.0;
    for (double& l : logits) {
        l = std::exp(l - top);
        total += l;
    }
    for (double& l : logits) l /= total;
    if (log_norm) *log_norm = top + std::log(total);
    return logits;
}

}  // namespace detail

inline double contrastive_loss(std::span<const double> x, const CentroidBank& bank, std::size_t k, double tau) {
    detail::check_loss_args(x, bank, k, tau);
    double log_norm = 0.0;
    detail::softmax_logits(x, bank, tau, &log_norm);
    return std::max(0.0, log_norm - dot(x, bank.centroids.row(k)) / tau);
}

// dL/dx = (sum_i p_i c_i - c_k) / tau.
inline std::vector<double> contrastive_gradient(std::span<const double> x, const CentroidBank& bank, std::size_t k,
                                                double tau) {
    detail::check_loss_args(x, bank, k, tau);
    const auto          p = detail::softmax_logits(x, bank, tau);
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto c = bank.centroids.row(i);
        for (std::size_t d = 0; d < g.size(); ++d) g[d] += p[i] * c[d];
    }
    const auto ck = bank.centroids.row(k);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] = (g[d] - ck[d]) / tau;
    return g;
}

// dL/dW for one input through x = normalize(W^T f), row-major like the weights.
inline std::vector<double> head_gradient(const LinearHead& head, std::span<const double> f, const CentroidBank& bank,
                                         std::size_t k) {
    auto         z  = head.project(f);
    const double zn = norm(z);
    if (zn == 0.0) throw Error("head output has zero norm");
    std::vector<double> x(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) x[j] = z[j] / zn;

    const auto   gx = contrastive_gradient(x, bank, k, head.tau());
    const double xg = dot(x, gx);
    std::vector<double> gz(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) gz[j] = (gx[j] - x[j] * xg) / zn;

    std::vector<double> gw(head.input_dim() * head.output_dim());
    for (std::size_t i = 0; i < head.input_dim(); ++i) {
        for (std::size_t j = 0; j < head.output_dim(); ++j) gw[i * head.output_dim() + j] = f[i] * gz[j];
    }
    return gw;
}

// Centroids of every cluster in head-output space.
inline CentroidBank centroid_bank(const LinearHead& head, const ClusterState& state, const FeatureMatrix& features) {
    std::vector<double> values;
    values.reserve(state.size() * head.output_dim());
    for (const auto& c : state.clusters) {
        std::vector<double> sum(head.output_dim(), 0.0);
        for (SampleId s : c.members) {
            const auto x = head.embed(features.row(s));
            for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += x[d];
        }
        double n = norm(sum);
        if (n < 1e-12) {
            sum = head.embed(features.row(c.members.front()));
            n   = 1.0;
        }
        for (double& v : sum) values.push_back(v / n);
    }
    return CentroidBank{FeatureMatrix(state.size(), head.output_dim(), std::move(values), true)};
}

struct RefineResult {
    LinearHead head;
    double     mean_loss = 0.0;
};

// One gradient-descent step on the mean loss over `batch`. `features` are the head inputs.
inline RefineResult refine_step(const LinearHead& head, std::span<const SampleId> batch, const ClusterState& state,
                                const FeatureMatrix& features) {
    for (SampleId s : batch) {
        if (s >= state.assignment.size() || state.assignment[s] == kOutlier) {
            throw Error("refine_step: sample " + std::to_string(s) + " is an outlier");
        }
    }
    RefineResult result{head, 0.0};
    if (batch.empty()) return result;

    const CentroidBank  bank = centroid_bank(head, state, features);
    std::vector<double> grad(head.weights().size(), 0.0);
    double              loss_sum = 0.0;
    for (SampleId s : batch) {
        const std::size_t k = state.index_of(state.assignment[s]);
        const auto        f = features.row(s);
        loss_sum += contrastive_loss(head.embed(f), bank, k, head.tau());
        const auto g = head_gradient(head, f, bank, k);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
    const double scale = head.learning_rate() / static_cast<double>(batch.size());
    auto&        w     = result.head.weights();
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= scale * grad[i];
        if (!std::isfinite(w[i])) throw Error("head weights became non-finite");
    }
    result.mean_loss = loss_sum / static_cast<double>(batch.size());
    return result;
}

}  // namespace ucal
