#pragma once

// Synthetic identity datasets: per-identity Gaussian means on the unit sphere plus isotropic noise.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ucal/dataset.hpp"

namespace ucal {

struct SynthConfig {
    std::size_t   identities = 50;
    std::size_t   per_id     = 20;
    std::size_t   dim        = 64;
    double        noise      = 0.1;  // per-coordinate standard deviation
    std::uint64_t seed       = 0;
};

// Samples are written identity-major (id0 x per_id, id1 x per_id, ...), identities named "id<k>".
inline DatasetBundle make_synthetic(const SynthConfig& cfg) {
    if (cfg.identities == 0 || cfg.per_id == 0 || cfg.dim == 0) throw Error("synth: sizes must be positive");
    if (!(cfg.noise >= 0.0)) throw Error("synth: noise must be non-negative");

    std::mt19937_64                  rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> means(cfg.identities * cfg.dim);
    for (std::size_t k = 0; k < cfg.identities; ++k) {
        double* m = means.data() + k * cfg.dim;
        double  n = 0.0;
        while (n < 1e-9) {
            n = 0.0;
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                m[d] = gauss(rng);
                n += m[d] * m[d];
            }
            n = std::sqrt(n);
        }
        for (std::size_t d = 0; d < cfg.dim; ++d) m[d] /= n;
    }

    DatasetBundle bundle;
    bundle.name = "synth";
    std::vector<double> values;
    values.reserve(cfg.identities * cfg.per_id * cfg.dim);
    for (std::size_t k = 0; k < cfg.identities; ++k) {
        for (std::size_t i = 0; i < cfg.per_id; ++i) {
            Sample s;
            s.sample_id = bundle.samples.size();
            s.identity  = "id" + std::to_string(k);
            bundle.samples.push_back(std::move(s));
            for (std::size_t d = 0; d < cfg.dim; ++d) values.push_back(means[k * cfg.dim + d] + cfg.noise * gauss(rng));
        }
    }
    bundle.features = FeatureMatrix(bundle.samples.size(), cfg.dim, std::move(values), false);
    return bundle;
}

inline void write_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_embeddings_csv(dir / "embeddings.csv", bundle.features);
    write_meta_jsonl(dir / "meta.jsonl", bundle.samples);
}

}  // namespace ucal
