#pragma once

// The active-learning loop: re-cluster every epoch, and after warmup split clusters on negative
// medoid pairs, merge them on positive ones, then refine the embedding head on the corrected
// pseudo labels. Label memory is the only state carried between epochs besides the head.

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ucal/annotation.hpp"
#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"
#include "ucal/metrics.hpp"
#include "ucal/mpps.hpp"
#include "ucal/representation.hpp"
#include "ucal/snps.hpp"

namespace ucal {

enum class OracleMode { Simulated, Human };

inline const char* to_string(OracleMode m) { return m == OracleMode::Simulated ? "simulated" : "human"; }

inline OracleMode parse_oracle_mode(std::string_view s) {
    if (s == "simulated") return OracleMode::Simulated;
    if (s == "human") return OracleMode::Human;
    throw Error("unknown oracle mode '" + std::string(s) + "'");
}

struct RunConfig {
    // clustering
    double      eps     = 0.5;
    std::size_t min_pts = 4;
    // representation
    double      tau           = 0.05;
    double      learning_rate = 1e-2;
    std::size_t output_dim    = 0;  // 0: same as input
    std::size_t batch_size    = 64;
    // merge proposals
    double      delta              = 0.3;
    double      merge_cap_fraction = 0.2;
    std::size_t l_max              = 10;
    // schedule
    int warmup_epochs = 15;
    int total_epochs  = 50;

    std::uint64_t seed        = 0;
    OracleMode    oracle_mode = OracleMode::Simulated;

    bool enable_snps          = true;
    bool enable_mpps          = true;
    bool negative_propagation = true;

    std::chrono::milliseconds label_timeout{std::chrono::minutes(10)};

    std::filesystem::path data_dir;
    std::filesystem::path out_dir;

    void validate() const {
        if (!(eps > 0.0 && eps <= 2.0)) throw Error("eps must lie in (0, 2]");
        if (min_pts < 2) throw Error("min_pts must be at least 2");
        if (!(tau > 0.0)) throw Error("tau must be positive");
        if (!(learning_rate >= 0.0)) throw Error("learning rate must be non-negative");
        if (batch_size == 0) throw Error("batch size must be positive");
        if (!(delta >= 0.0 && delta < 1.0)) throw Error("delta must lie in [0, 1)");
        if (!(merge_cap_fraction > 0.0 && merge_cap_fraction <= 1.0)) throw Error("merge cap must lie in (0, 1]");
        if (l_max < 1) throw Error("l_max must be at least 1");
        if (warmup_epochs < 0) throw Error("warmup epochs must be non-negative");
        if (warmup_epochs >= total_epochs) throw Error("warmup epochs must be fewer than total epochs");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["eps"]                  = eps;
        j["min_pts"]              = min_pts;
        j["tau"]                  = tau;
        j["learning_rate"]        = learning_rate;
        j["output_dim"]           = output_dim;
        j["batch_size"]           = batch_size;
        j["delta"]                = delta;
        j["merge_cap_fraction"]   = merge_cap_fraction;
        j["l_max"]                = l_max;
        j["warmup_epochs"]        = warmup_epochs;
        j["total_epochs"]         = total_epochs;
        j["seed"]                 = seed;
        j["oracle"]               = to_string(oracle_mode);
        j["enable_snps"]          = enable_snps;
        j["enable_mpps"]          = enable_mpps;
        j["negative_propagation"] = negative_propagation;
        j["data_dir"]             = data_dir.string();
        j["out_dir"]              = out_dir.string();
        return j;
    }
};

struct RunReport {
    RunConfig                 config;
    std::vector<EpochMetrics> epochs;
    std::size_t               final_m    = 0;
    double                    final_cost = 0.0;
    ClusterState              final_state;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["config"] = config.to_json();
        j["epochs"] = nlohmann::ordered_json::array();
        for (const auto& e : epochs) j["epochs"].push_back(e.to_json());
        j["final_M"]            = final_m;
        j["final_cost_percent"] = final_cost;
        return j;
    }
};

// Progress visible to observers (the annotation service).
struct EngineStatus {
    int                         epoch = -1;
    std::string                 phase = "warmup";
    std::optional<EpochMetrics> latest;
};

// Head-space embeddings of the epoch currently being processed.
struct EpochView {
    int           epoch = 0;
    FeatureMatrix embedded;
    ClusterState  state;
};

inline nlohmann::ordered_json state_to_json(const ClusterState& state) {
    nlohmann::ordered_json j;
    j["epoch"]      = state.epoch;
    j["assignment"] = state.assignment;
    j["clusters"]   = nlohmann::ordered_json::array();
    for (const auto& c : state.clusters) {
        nlohmann::ordered_json cj;
        cj["cluster_id"] = c.cluster_id;
        cj["medoid"]     = c.medoid;
        cj["members"]    = c.members;
        j["clusters"].push_back(std::move(cj));
    }
    return j;
}

inline ClusterState state_from_json(const nlohmann::json& j) {
    ClusterState state;
    state.epoch      = j.at("epoch").get<int>();
    state.assignment = j.at("assignment").get<std::vector<ClusterId>>();
    for (const auto& cj : j.at("clusters")) {
        Cluster c;
        c.cluster_id = cj.at("cluster_id").get<ClusterId>();
        c.medoid     = cj.at("medoid").get<SampleId>();
        c.members    = cj.at("members").get<std::vector<SampleId>>();
        state.clusters.push_back(std::move(c));
    }
    reindex(state);
    return state;
}

inline ClusterState load_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open state file " + path.string());
    try {
        return state_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed state file " + path.string() + ": " + e.what());
    }
}

// Quality of a cluster state against the dataset's identities.
inline EpochMetrics evaluate_state(const ClusterState& state, const DatasetBundle& dataset) {
    if (state.assignment.size() != dataset.size()) throw Error("state and dataset sizes differ");
    const auto   truth = identities(dataset);
    const auto   prf   = pairwise_prf(state, truth);
    EpochMetrics m;
    m.epoch              = state.epoch;
    m.n_clusters         = state.size();
    m.n_outliers         = state.outlier_count();
    m.pairwise_precision = prf.precision;
    m.pairwise_recall    = prf.recall;
    m.pairwise_f1        = prf.f1;
    m.nmi                = nmi(state, truth);
    return m;
}

class Engine {
  public:
    Engine(RunConfig config, DatasetBundle dataset)
      : config_(std::move(config)), dataset_(std::move(dataset)), memory_(config_.negative_propagation),
        queue_(memory_) {
        config_.validate();
        if (dataset_.size() < 2) throw Error("dataset needs at least two samples");
        inputs_ = l2_normalize(dataset_.features);
        if (config_.oracle_mode == OracleMode::Simulated) identities(dataset_);
        try {
            truth_ = identities(dataset_);
        } catch (const Error&) {
            truth_.clear();
        }
        const std::size_t out_dim = config_.output_dim ? config_.output_dim : inputs_.dim();
        head_ = LinearHead(inputs_.dim(), out_dim, config_.learning_rate, config_.tau, config_.seed);
    }

    Engine(const Engine&)            = delete;
    Engine& operator=(const Engine&) = delete;

    const RunConfig&     config() const noexcept { return config_; }
    const DatasetBundle& dataset() const noexcept { return dataset_; }
    const ClusterState&  state() const noexcept { return state_; }
    const LinearHead&    head() const noexcept { return head_; }
    LabelMemory&         memory() noexcept { return memory_; }
    const LabelMemory&   memory() const noexcept { return memory_; }
    AnnotationQueue&     queue() noexcept { return queue_; }

    EngineStatus status() const {
        std::lock_guard lock(status_mutex_);
        return status_;
    }

    std::shared_ptr<const EpochView> view() const {
        std::lock_guard lock(status_mutex_);
        return view_;
    }

    std::size_t pending() { return queue_.outstanding(); }

    EpochMetrics run_epoch(int epoch) {
        const bool active = epoch >= config_.warmup_epochs;
        set_phase(epoch, active ? "active" : "warmup");

        const FeatureMatrix    embedded = head_.embed_all(inputs_);
        const SimilarityMatrix sim      = similarity_matrix(embedded);
        ClusterState           state    = compute_centroids(dbscan(sim, config_.eps, config_.min_pts), embedded, sim);
        state.epoch                     = epoch;
        publish_view(epoch, embedded, state);

        const std::size_t clusters_at_start = state.size();
        std::size_t       issued            = 0;
        if (active && config_.enable_snps) issued += split_phase(state, embedded, sim, epoch);
        if (active && config_.enable_mpps && state.size() >= 2) {
            issued += merge_phase(state, embedded, sim, epoch, clusters_at_start);
        }
        if (active) set_phase(epoch, "active");

        const double loss = refine(state, epoch);

        EpochMetrics m;
        if (!truth_.empty()) {
            const auto prf       = pairwise_prf(state, truth_);
            m.pairwise_precision = prf.precision;
            m.pairwise_recall    = prf.recall;
            m.pairwise_f1        = prf.f1;
            m.nmi                = nmi(state, truth_);
        }
        m.epoch          = epoch;
        m.n_clusters     = state.size();
        m.n_outliers     = state.outlier_count();
        m.queries_issued = issued;
        m.cumulative_m   = memory_.consultations();
        m.cost_percent   = labeling_cost(m.cumulative_m, dataset_.size());
        m.mean_loss      = loss;

        state_ = std::move(state);
        {
            std::lock_guard lock(status_mutex_);
            status_.latest = m;
        }
        return m;
    }

    RunReport run() {
        RunReport report;
        report.config = config_;

        std::optional<std::ofstream> metrics_out;
        if (!config_.out_dir.empty()) {
            std::filesystem::create_directories(config_.out_dir);
            memory_.attach_journal(config_.out_dir / "labels.jsonl");
            metrics_out.emplace(config_.out_dir / "metrics.jsonl", std::ios::trunc | std::ios::binary);
            if (!*metrics_out) throw Error("cannot write metrics.jsonl in " + config_.out_dir.string());
        }

        for (int epoch = 0; epoch < config_.total_epochs; ++epoch) {
            const auto m = run_epoch(epoch);
            report.epochs.push_back(m);
            if (metrics_out) {
                *metrics_out << m.to_json().dump() << '\n';
                metrics_out->flush();
            }
        }
        set_phase(config_.total_epochs - 1, "done");

        report.final_m     = memory_.consultations();
        report.final_cost  = labeling_cost(report.final_m, dataset_.size());
        report.final_state = state_;
        if (!config_.out_dir.empty()) {
            std::ofstream(config_.out_dir / "state.json", std::ios::binary) << state_to_json(state_).dump() << '\n';
            std::ofstream(config_.out_dir / "report.json", std::ios::binary) << report.to_json().dump(2) << '\n';
        }
        return report;
    }

  private:
    void set_phase(int epoch, const char* phase) {
        std::lock_guard lock(status_mutex_);
        status_.epoch = epoch;
        status_.phase = phase;
    }

    void publish_view(int epoch, const FeatureMatrix& embedded, const ClusterState& state) {
        auto v = std::make_shared<EpochView>(EpochView{epoch, embedded, state});
        std::lock_guard lock(status_mutex_);
        view_ = std::move(v);
    }

    // Asks for every query the memory cannot answer yet. Returns once all are answered, or, in
    // human mode, when the label timeout passes; unanswered queries stay queued.
    void label_queries(std::vector<QueryRequest>& queries, int epoch) {
        for (auto& q : queries) q.query_id = next_query_id_++;
        if (queries.empty()) return;
        if (config_.oracle_mode == OracleMode::Simulated) {
            auto oracle = [this](SamplePair p) { return oracle_label(dataset_, p); };
            for (const auto& q : queries) memory_.request_label(q, oracle, LabelSource::Oracle);
            return;
        }
        for (const auto& q : queries) queue_.enqueue(q);
        set_phase(epoch, "waiting_labels");
        if (!queue_.wait_drained(AnnotationQueue::Clock::now() + config_.label_timeout)) {
            std::cerr << "ucal: epoch " << epoch << ": label timeout with " << queue_.outstanding()
                      << " queries outstanding; they stay queued\n";
        }
    }

    std::size_t split_phase(ClusterState& state, const FeatureMatrix& embedded, const SimilarityMatrix& sim, int epoch) {
        std::vector<std::optional<GroupPartition>> partitions;
        std::vector<QueryRequest>                  queries;
        for (const auto& c : state.clusters) {
            partitions.push_back(select_k_star(c, sim));
            if (partitions.back()) {
                auto q = propose_split_queries(*partitions.back(), memory_, epoch);
                queries.insert(queries.end(), q.begin(), q.end());
            }
        }
        const std::size_t issued = queries.size();
        label_queries(queries, epoch);

        ClusterId            next_id = state.next_id();
        std::vector<Cluster> out;
        for (std::size_t i = 0; i < state.clusters.size(); ++i) {
            const auto& part     = partitions[i];
            bool        resolved = part.has_value();
            if (part) {
                for (const auto& pair : split_pairs(*part)) resolved = resolved && memory_.resolve(pair).has_value();
            }
            if (!resolved) {
                out.push_back(std::move(state.clusters[i]));
                continue;
            }
            auto pieces = apply_split(state.clusters[i], *part, memory_, embedded, sim, next_id);
            for (auto& p : pieces) out.push_back(std::move(p));
        }
        state.clusters = std::move(out);
        reindex(state);
        return issued;
    }

    std::size_t merge_phase(ClusterState& state, const FeatureMatrix& embedded, const SimilarityMatrix& sim, int epoch,
                            std::size_t clusters_at_start) {
        const auto candidates = merge_candidates(state, config_.delta, config_.l_max);
        auto       queries    = propose_merge_queries(state, config_.delta, config_.l_max, memory_, epoch);
        const std::size_t issued = queries.size();
        label_queries(queries, epoch);

        std::vector<MergePair> positives;
        for (const auto& c : candidates) {
            if (memory_.resolve(c.pair) == Verdict::Positive) positives.push_back({c.anchor, c.neighbor, c.similarity});
        }
        state = apply_merges(std::move(state), std::move(positives), config_.merge_cap_fraction, clusters_at_start,
                             embedded, sim);
        return issued;
    }

    // One pass of mini-batch steps over the clustered samples in a seeded shuffle.
    double refine(const ClusterState& state, int epoch) {
        std::vector<SampleId> order;
        for (std::size_t i = 0; i < state.assignment.size(); ++i) {
            if (state.assignment[i] != kOutlier) order.push_back(i);
        }
        if (order.empty() || state.size() == 0) return 0.0;
        std::seed_seq   seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
            const std::size_t len    = std::min(config_.batch_size, order.size() - start);
            auto              result = refine_step(head_, std::span<const SampleId>(order).subspan(start, len), state, inputs_);
            head_                    = std::move(result.head);
            loss_sum += result.mean_loss * static_cast<double>(len);
        }
        return loss_sum / static_cast<double>(order.size());
    }

    RunConfig                config_;
    DatasetBundle            dataset_;
    FeatureMatrix            inputs_;
    std::vector<std::string> truth_;
    LinearHead               head_;
    LabelMemory              memory_;
    AnnotationQueue          queue_;
    ClusterState             state_;
    std::uint64_t            next_query_id_ = 1;

    mutable std::mutex               status_mutex_;
    EngineStatus                     status_;
    std::shared_ptr<const EpochView> view_;
};

}  // namespace ucal
