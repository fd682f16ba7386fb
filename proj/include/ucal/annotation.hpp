#pragma once

// Pair annotation: label memory with union-find propagation, the simulated oracle, the labeling
// cost counter, and the pending queue drained by human annotators.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ucal/clustering.hpp"
#include "ucal/dataset.hpp"
#include "ucal/union_find.hpp"

namespace ucal {

enum class Verdict { Positive, Negative };
enum class LabelSource { Oracle, Human, Memory };
enum class QueryKind { Split, Merge };

inline const char* to_string(Verdict v) { return v == Verdict::Positive ? "positive" : "negative"; }
inline const char* to_string(QueryKind k) { return k == QueryKind::Split ? "split" : "merge"; }
inline const char* to_string(LabelSource s) {
    switch (s) {
        case LabelSource::Oracle: return "oracle";
        case LabelSource::Human: return "human";
        case LabelSource::Memory: return "memory";
    }
    return "?";
}

inline Verdict parse_verdict(std::string_view s) {
    if (s == "positive") return Verdict::Positive;
    if (s == "negative") return Verdict::Negative;
    throw Error("unknown verdict '" + std::string(s) + "'");
}

inline LabelSource parse_source(std::string_view s) {
    if (s == "oracle") return LabelSource::Oracle;
    if (s == "human") return LabelSource::Human;
    throw Error("unknown label source '" + std::string(s) + "'");
}

// Unordered sample pair, stored canonically with a <= b.
struct SamplePair {
    SampleId a = 0;
    SampleId b = 0;

    static SamplePair of(SampleId x, SampleId y) { return x <= y ? SamplePair{x, y} : SamplePair{y, x}; }

    auto operator<=>(const SamplePair&) const = default;
};

struct QueryRequest {
    std::uint64_t query_id = 0;
    SamplePair    pair;
    QueryKind     kind  = QueryKind::Split;
    int           epoch = 0;
    ClusterId     cluster_a = kOutlier;  // cluster holding pair.a when the query was made
    ClusterId     cluster_b = kOutlier;
};

struct PairLabel {
    SamplePair  pair;
    Verdict     verdict = Verdict::Negative;
    LabelSource source  = LabelSource::Oracle;
    int         epoch   = 0;
};

inline std::string label_line(const PairLabel& l) {
    nlohmann::ordered_json obj;
    obj["a"]       = l.pair.a;
    obj["b"]       = l.pair.b;
    obj["verdict"] = to_string(l.verdict);
    obj["source"]  = to_string(l.source);
    obj["epoch"]   = l.epoch;
    return obj.dump();
}

inline PairLabel parse_label_line(const std::string& line) {
    const auto obj = nlohmann::json::parse(line);
    PairLabel  l;
    l.pair    = SamplePair::of(obj.at("a").get<SampleId>(), obj.at("b").get<SampleId>());
    l.verdict = parse_verdict(obj.at("verdict").get<std::string>());
    l.source  = parse_source(obj.at("source").get<std::string>());
    l.epoch   = obj.at("epoch").get<int>();
    return l;
}

inline std::vector<PairLabel> read_labels_jsonl(const std::filesystem::path& path) {
    std::ifstream          in(path);
    std::vector<PairLabel> out;
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(parse_label_line(line));
    }
    return out;
}

// Answered pairs plus the positive union-find. Readers share; writers are serialized.
class LabelMemory {
  public:
    explicit LabelMemory(bool negative_propagation = true) : negative_propagation_(negative_propagation) {}

    LabelMemory(const LabelMemory&)            = delete;
    LabelMemory& operator=(const LabelMemory&) = delete;

    bool negative_propagation() const noexcept { return negative_propagation_; }

    // Stored verdict, positive transitivity, or (optionally) negative propagation across
    // positive components. Never consults anyone.
    std::optional<Verdict> resolve(SamplePair pair) const {
        std::shared_lock lock(mutex_);
        return resolve_locked(pair, negative_propagation_);
    }

    // M: number of consultations, which equals the number of stored records.
    std::size_t consultations() const {
        std::shared_lock lock(mutex_);
        return records_.size();
    }

    std::vector<PairLabel> records() const {
        std::shared_lock lock(mutex_);
        return records_;
    }

    std::optional<PairLabel> stored(SamplePair pair) const {
        std::shared_lock lock(mutex_);
        auto it = index_.find(pair);
        if (it == index_.end()) return std::nullopt;
        return records_[it->second];
    }

    // Stores the answer of one consultation. An exact duplicate of a stored pair is ignored and
    // the stored record returned. An answer contradicting what the memory already implies is
    // logged and replaced by the implied verdict.
    PairLabel record(PairLabel label) {
        label.pair = SamplePair::of(label.pair.a, label.pair.b);
        std::unique_lock lock(mutex_);
        if (auto it = index_.find(label.pair); it != index_.end()) return records_[it->second];
        if (auto implied = resolve_locked(label.pair, true); implied && *implied != label.verdict) {
            std::cerr << "ucal: " << to_string(label.source) << " answer " << to_string(label.verdict) << " for ("
                      << label.pair.a << "," << label.pair.b << ") contradicts label memory; keeping "
                      << to_string(*implied) << "\n";
            label.verdict = *implied;
        }
        insert_locked(label);
        if (journal_) {
            *journal_ << label_line(label) << '\n';
            journal_->flush();
        }
        return label;
    }

    // Resolves from memory when possible (M unchanged); otherwise asks `provider`, stores the
    // answer and increments M by one.
    template <typename Provider>
    PairLabel request_label(const QueryRequest& query, Provider&& provider, LabelSource source = LabelSource::Oracle) {
        const auto pair = SamplePair::of(query.pair.a, query.pair.b);
        if (auto known = resolve(pair)) return PairLabel{pair, *known, LabelSource::Memory, query.epoch};
        const Verdict answer = provider(pair);
        return record(PairLabel{pair, answer, source, query.epoch});
    }

    // Replays an existing journal (if any) into memory, then appends every new record to it.
    void attach_journal(const std::filesystem::path& path) {
        std::unique_lock lock(mutex_);
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            std::string   line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto l = parse_label_line(line);
                if (!index_.count(l.pair)) insert_locked(l);
            }
        }
        journal_.emplace(path, std::ios::app | std::ios::binary);
        if (!*journal_) throw Error("cannot open label journal " + path.string());
    }

  private:
    static std::pair<std::size_t, std::size_t> ordered(std::size_t x, std::size_t y) {
        return x <= y ? std::pair{x, y} : std::pair{y, x};
    }

    std::optional<Verdict> resolve_locked(SamplePair pair, bool with_negative) const {
        if (auto it = index_.find(pair); it != index_.end()) return records_[it->second].verdict;
        const auto ra = positives_.find(pair.a);
        const auto rb = positives_.find(pair.b);
        if (ra == rb) return Verdict::Positive;
        if (with_negative && negative_roots_.count(ordered(ra, rb))) return Verdict::Negative;
        return std::nullopt;
    }

    void insert_locked(const PairLabel& label) {
        index_.emplace(label.pair, records_.size());
        records_.push_back(label);
        if (label.verdict == Verdict::Positive) {
            if (positives_.unite(label.pair.a, label.pair.b)) rebuild_negative_roots();
        } else {
            negative_roots_.insert(ordered(positives_.find(label.pair.a), positives_.find(label.pair.b)));
        }
    }

    void rebuild_negative_roots() {
        negative_roots_.clear();
        for (const auto& r : records_) {
            if (r.verdict == Verdict::Negative) {
                negative_roots_.insert(ordered(positives_.find(r.pair.a), positives_.find(r.pair.b)));
            }
        }
    }

    bool                                              negative_propagation_;
    mutable std::shared_mutex                         mutex_;
    std::vector<PairLabel>                            records_;
    std::map<SamplePair, std::size_t>                 index_;
    UnionFind                                         positives_;
    std::set<std::pair<std::size_t, std::size_t>>     negative_roots_;
    std::optional<std::ofstream>                      journal_;
};

// Simulated annotator: positive iff ground-truth identities match.
inline Verdict oracle_label(const DatasetBundle& dataset, SamplePair pair) {
    const auto& ia = dataset.samples.at(pair.a).identity;
    const auto& ib = dataset.samples.at(pair.b).identity;
    if (!ia || !ib) {
        throw Error("oracle needs ground-truth identity for samples " + std::to_string(pair.a) + " and " +
                    std::to_string(pair.b));
    }
    return *ia == *ib ? Verdict::Positive : Verdict::Negative;
}

// Percentage of all N(N-1)/2 pairs that were consulted.
inline double labeling_cost(std::size_t consultations, std::size_t n) {
    if (n < 2) throw Error("labeling_cost needs N >= 2");
    const double total_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
    return static_cast<double>(consultations) / total_pairs * 100.0;
}

inline double labeling_cost(const LabelMemory& memory, std::size_t n) { return labeling_cost(memory.consultations(), n); }

// Pending human queries with lease-based, at-most-once assignment to annotator sessions.
class AnnotationQueue {
  public:
    using Clock = std::chrono::steady_clock;

    enum class SubmitStatus { Accepted, Duplicate, UnknownQuery, NotLeased };

    struct SubmitResult {
        SubmitStatus status;
        std::size_t  m;
    };

    AnnotationQueue(LabelMemory& memory, std::chrono::milliseconds lease = std::chrono::seconds(120))
      : memory_(memory), lease_(lease) {}

    // Queues a query unless an outstanding entry already covers the same pair or memory resolves it.
    bool enqueue(const QueryRequest& query) {
        std::lock_guard lock(mutex_);
        if (memory_.resolve(query.pair)) return false;
        for (const auto& [id, e] : entries_) {
            if (e.state != State::Resolved && e.query.pair == query.pair) return false;
        }
        entries_.emplace(query.query_id, Entry{query, State::Pending, {}, {}});
        cv_.notify_all();
        return true;
    }

    std::optional<QueryRequest> lease_next(const std::string& session, Clock::time_point now = Clock::now()) {
        std::lock_guard lock(mutex_);
        sweep_locked(now);
        for (auto& [id, e] : entries_) {
            if (e.state == State::Pending) {
                e.state    = State::Leased;
                e.session  = session;
                e.deadline = now + lease_;
                return e.query;
            }
        }
        return std::nullopt;
    }

    // An empty session matches any lease holder.
    SubmitResult submit(std::uint64_t query_id, const std::string& session, Verdict verdict,
                        Clock::time_point now = Clock::now()) {
        std::lock_guard lock(mutex_);
        auto            it = entries_.find(query_id);
        if (it == entries_.end()) return {SubmitStatus::UnknownQuery, memory_.consultations()};
        Entry& e = it->second;
        if (e.state == State::Resolved) return {SubmitStatus::Duplicate, memory_.consultations()};
        if (e.state != State::Leased || now > e.deadline || (!session.empty() && session != e.session)) {
            if (e.state == State::Leased && now > e.deadline) e.state = State::Pending;
            return {SubmitStatus::NotLeased, memory_.consultations()};
        }
        memory_.record(PairLabel{e.query.pair, verdict, LabelSource::Human, e.query.epoch});
        e.state = State::Resolved;
        cv_.notify_all();
        return {SubmitStatus::Accepted, memory_.consultations()};
    }

    // Entries not yet answered (pending or leased), after dropping ones memory now resolves.
    std::size_t outstanding(Clock::time_point now = Clock::now()) {
        std::lock_guard lock(mutex_);
        sweep_locked(now);
        return outstanding_locked();
    }

    // Blocks until every queued query is answered or the deadline passes. Returns true when drained.
    bool wait_drained(Clock::time_point deadline) {
        std::unique_lock lock(mutex_);
        while (true) {
            sweep_locked(Clock::now());
            if (outstanding_locked() == 0) return true;
            const auto wake = std::min(deadline, Clock::now() + std::chrono::milliseconds(200));
            if (cv_.wait_until(lock, wake) == std::cv_status::timeout && Clock::now() >= deadline) {
                sweep_locked(Clock::now());
                return outstanding_locked() == 0;
            }
        }
    }

    std::optional<QueryRequest> find(std::uint64_t query_id) const {
        std::lock_guard lock(mutex_);
        auto            it = entries_.find(query_id);
        if (it == entries_.end()) return std::nullopt;
        return it->second.query;
    }

  private:
    enum class State { Pending, Leased, Resolved };

    struct Entry {
        QueryRequest      query;
        State             state = State::Pending;
        std::string       session;
        Clock::time_point deadline{};
    };

    void sweep_locked(Clock::time_point now) {
        for (auto& [id, e] : entries_) {
            if (e.state == State::Leased && now > e.deadline) e.state = State::Pending;
            if (e.state == State::Pending && memory_.resolve(e.query.pair)) e.state = State::Resolved;
        }
    }

    std::size_t outstanding_locked() const {
        return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                      [](const auto& kv) { return kv.second.state != State::Resolved; }));
    }

    LabelMemory&                      memory_;
    std::chrono::milliseconds         lease_;
    mutable std::mutex                mutex_;
    std::condition_variable           cv_;
    std::map<std::uint64_t, Entry>    entries_;
};

}  // namespace ucal
