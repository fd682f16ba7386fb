#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "support.hpp"
#include "ucal/representation.hpp"

using namespace ucal;

namespace {

CentroidBank bank_of(const std::vector<std::vector<double>>& rows) { return {test::rows_of(rows, true)}; }

CentroidBank random_bank(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
    return {test::random_unit_rows(n, dim, rng)};
}

// Loss evaluated from scratch with long double, no max subtraction.
double reference_loss(std::span<const double> x, const CentroidBank& bank, std::size_t k, double tau) {
    long double total = 0.0L, target = 0.0L;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        long double s = 0.0L;
        for (std::size_t d = 0; d < x.size(); ++d) s += static_cast<long double>(x[d]) * bank.centroids.row(i)[d];
        const long double e = std::exp(s / tau);
        total += e;
        if (i == k) target = e;
    }
    return static_cast<double>(-std::log(target / total));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Loss, TwoCentroidExample) {
    const auto   bank = bank_of({{1, 0}, {0, 1}});
    const double x[]  = {1, 0};
    EXPECT_NEAR(contrastive_loss(x, bank, 0, 1.0), 0.313262, 1e-6);
    EXPECT_NEAR(contrastive_loss(x, bank, 0, 1.0), -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-15);
}

TEST(Loss, EquidistantIsLogN) {
    for (double tau : {0.05, 0.5, 1.0, 3.0}) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < 5; ++i) {
            std::vector<double> r(6, 0.0);
            r[i] = 1.0;
            rows.push_back(r);
        }
        const double x[] = {0, 0, 0, 0, 0, 1};
        EXPECT_NEAR(contrastive_loss(x, bank_of(rows), 2, tau), std::log(5.0), 1e-12);
    }
}

TEST(Loss, SingleCentroidIsZero) {
    const auto   bank = bank_of({{0.6, 0.8}});
    const double x[]  = {1, 0};
    EXPECT_EQ(contrastive_loss(x, bank, 0, 0.05), 0.0);
    const auto g = contrastive_gradient(x, bank, 0, 0.05);
    EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
}

TEST(Loss, StableAtSmallTemperature) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto bank = random_bank(30, 8, rng);
        const auto x    = test::random_unit_rows(1, 8, rng);
        for (double tau : {0.01, 0.05, 0.5}) {
            const double l = contrastive_loss(x.row(0), bank, trial % 30, tau);
            EXPECT_TRUE(std::isfinite(l));
            EXPECT_GE(l, 0.0);
            EXPECT_NEAR(l, reference_loss(x.row(0), bank, trial % 30, tau), 1e-9 * std::max(1.0, l));
        }
    }
}

TEST(Loss, RejectsBadArguments) {
    const auto   bank = bank_of({{1, 0}});
    const double x[]  = {1, 0};
    const double y[]  = {1, 0, 0};
    EXPECT_THROW(contrastive_loss(x, bank, 1, 1.0), Error);
    EXPECT_THROW(contrastive_loss(x, bank, 0, 0.0), Error);
    EXPECT_THROW(contrastive_loss(y, bank, 0, 1.0), Error);
}

TEST(Gradient, SymmetricTwoCentroids) {
    const auto   bank = bank_of({{1, 0}, {0, 1}});
    const double x[]  = {std::sqrt(0.5), std::sqrt(0.5)};
    const auto   g    = contrastive_gradient(x, bank, 0, 0.5);
    EXPECT_NEAR(g[0], (0.5 - 1.0) / 0.5, 1e-12);
    EXPECT_NEAR(g[1], 0.5 / 0.5, 1e-12);
}

TEST(Gradient, EmbeddingMatchesFiniteDifferences) {
    std::mt19937_64 rng(41);
    const double    h = 1e-5;
    int             checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t n   = 2 + rng() % 49;
        const std::size_t dim = 2 + rng() % 10;
        const double      tau = std::array{0.05, 0.5, 1.0}[trial % 3];
        const auto        bank = random_bank(n, dim, rng);
        const auto        xm   = test::random_unit_rows(1, dim, rng);
        const std::size_t k    = rng() % n;
        std::vector<double> x(xm.row(0).begin(), xm.row(0).end());
        const auto          g = contrastive_gradient(x, bank, k, tau);
        for (std::size_t d = 0; d < dim; ++d) {
            auto up = x, dn = x;
            up[d] += h;
            dn[d] -= h;
            const double fd = (contrastive_loss(up, bank, k, tau) - contrastive_loss(dn, bank, k, tau)) / (2 * h);
            if (std::abs(fd) < 1e-7 && std::abs(g[d]) < 1e-7) continue;
            EXPECT_LE(rel_err(g[d], fd), 1e-4) << "trial " << trial << " d " << d;
            ++checked;
        }
    }
    EXPECT_GE(checked, 100);
}

TEST(Gradient, WeightsMatchFiniteDifferences) {
    std::mt19937_64 rng(43);
    const double    h = 1e-5;
    int             instances = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t in  = 2 + rng() % 6;
        const std::size_t out = 2 + rng() % 6;
        const std::size_t n   = 2 + rng() % 49;
        const double      tau = std::array{0.05, 0.5, 1.0}[trial % 3];
        LinearHead        head(in, out, 0.1, tau, rng());
        const auto        bank = random_bank(n, out, rng);
        const auto        f    = test::random_unit_rows(1, in, rng);
        const std::size_t k    = rng() % n;
        const auto        g    = head_gradient(head, f.row(0), bank, k);

        double num = 0.0, den = 0.0;
        for (std::size_t w = 0; w < g.size(); ++w) {
            LinearHead up = head, dn = head;
            up.weights()[w] += h;
            dn.weights()[w] -= h;
            const double fd = (contrastive_loss(up.embed(f.row(0)), bank, k, tau) -
                               contrastive_loss(dn.embed(f.row(0)), bank, k, tau)) /
                              (2 * h);
            num += (g[w] - fd) * (g[w] - fd);
            den += fd * fd;
        }
        if (den < 1e-14) continue;
        EXPECT_LE(std::sqrt(num / den), 1e-4) << "trial " << trial;
        ++instances;
    }
    EXPECT_GE(instances, 90);
}

TEST(Head, IdentityInitPassesUnitFeaturesThrough) {
    std::mt19937_64 rng(3);
    const auto      f    = test::random_unit_rows(20, 7, rng);
    LinearHead      head(7, 7, 0.01, 0.05);
    const auto      out  = head.embed_all(f);
    for (std::size_t i = 0; i < f.values().size(); ++i) EXPECT_NEAR(out.values()[i], f.values()[i], 1e-15);
}

TEST(Head, RectangularInitIsOrthonormal) {
    for (auto [in, out] : {std::pair<std::size_t, std::size_t>{8, 3}, {3, 8}}) {
        LinearHead  head(in, out, 0.01, 0.05, 11);
        const auto& w   = head.weights();
        // the shorter side's vectors are orthonormal
        const bool  cols = out <= in;
        const auto  cnt  = cols ? out : in;
        const auto  len  = cols ? in : out;
        for (std::size_t a = 0; a < cnt; ++a) {
            for (std::size_t b = 0; b < cnt; ++b) {
                double s = 0.0;
                for (std::size_t e = 0; e < len; ++e) {
                    s += cols ? w[e * out + a] * w[e * out + b] : w[a * out + e] * w[b * out + e];
                }
                EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-12);
            }
        }
    }
}

TEST(Head, RejectsBadConfig) {
    EXPECT_THROW(LinearHead(0, 3, 0.1, 1.0), Error);
    EXPECT_THROW(LinearHead(3, 3, 0.1, 0.0), Error);
    EXPECT_THROW(LinearHead(3, 3, -1.0, 1.0), Error);
}

namespace {

struct RefineFixture {
    FeatureMatrix    features;
    SimilarityMatrix sim;
    ClusterState     state;
};

RefineFixture refine_fixture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RefineFixture   fx{test::random_blobs(60, 6, 4, 0.4, rng), {}, {}};
    fx.sim   = similarity_matrix(fx.features);
    fx.state = compute_centroids(dbscan(fx.sim, 0.3, 3), fx.features, fx.sim);
    return fx;
}

std::vector<SampleId> clustered(const ClusterState& s) {
    std::vector<SampleId> out;
    for (std::size_t i = 0; i < s.assignment.size(); ++i) {
        if (s.assignment[i] != kOutlier) out.push_back(i);
    }
    return out;
}

}  // namespace

TEST(Refine, ZeroLearningRateKeepsHead) {
    const auto fx    = refine_fixture(1);
    LinearHead head(6, 6, 0.0, 0.05);
    const auto batch = clustered(fx.state);
    ASSERT_FALSE(batch.empty());
    const auto r = refine_step(head, batch, fx.state, fx.features);
    EXPECT_EQ(r.head.weights(), head.weights());
    EXPECT_GT(r.mean_loss, 0.0);
}

TEST(Refine, SmallStepDescends) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto fx = refine_fixture(seed);
        if (fx.state.size() < 2) continue;
        LinearHead head(6, 4, 1e-3, 0.5, seed);
        const auto batch = clustered(fx.state);
        const auto r1    = refine_step(head, batch, fx.state, fx.features);
        LinearHead frozen(6, 4, 0.0, 0.5, seed);
        frozen.weights() = r1.head.weights();
        const auto r2    = refine_step(frozen, batch, fx.state, fx.features);
        EXPECT_LT(r2.mean_loss, r1.mean_loss) << "seed " << seed;
    }
}

TEST(Refine, BatchOrderDoesNotMatter) {
    const auto fx = refine_fixture(5);
    LinearHead head(6, 6, 0.01, 0.05);
    auto       batch = clustered(fx.state);
    const auto a     = refine_step(head, batch, fx.state, fx.features);
    std::reverse(batch.begin(), batch.end());
    const auto b = refine_step(head, batch, fx.state, fx.features);
    for (std::size_t i = 0; i < a.head.weights().size(); ++i) EXPECT_NEAR(a.head.weights()[i], b.head.weights()[i], 1e-14);
    EXPECT_NEAR(a.mean_loss, b.mean_loss, 1e-12);
}

TEST(Refine, OutliersRejected) {
    const auto   f   = test::unit_circle({0, 5, 90});
    const auto   sim = similarity_matrix(f);
    ClusterState state;
    state.assignment.assign(3, kOutlier);
    state.clusters.push_back(make_cluster(0, {0, 1}, f, sim));
    reindex(state);
    LinearHead     head(2, 2, 0.01, 0.05);
    const SampleId bad[] = {0, 2};
    EXPECT_THROW(refine_step(head, bad, state, f), Error);
}

TEST(Refine, CentroidBankRowsAreUnit) {
    const auto fx = refine_fixture(3);
    LinearHead head(6, 5, 0.01, 0.05, 9);
    const auto bank = centroid_bank(head, fx.state, fx.features);
    ASSERT_EQ(bank.size(), fx.state.size());
    for (std::size_t i = 0; i < bank.size(); ++i) EXPECT_NEAR(norm(bank.centroids.row(i)), 1.0, 1e-12);
}
