#pragma once

// Embedding datasets: loading, validation, normalization and cosine similarity.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ucal {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using SampleId = std::size_t;

struct Sample {
    SampleId                   sample_id = 0;
    std::optional<std::string> identity;
    std::optional<std::string> camera;
    std::optional<std::string> image_ref;

    bool operator==(const Sample&) const = default;
};

// Dense row-major N x D matrix of finite doubles.
class FeatureMatrix {
  public:
    FeatureMatrix() = default;

    FeatureMatrix(std::size_t rows, std::size_t dim, std::vector<double> values, bool normalized = false)
      : rows_(rows), dim_(dim), values_(std::move(values)), normalized_(normalized) {
        if (values_.size() != rows_ * dim_) {
            throw Error("feature matrix holds " + std::to_string(values_.size()) + " values, expected " +
                        std::to_string(rows_ * dim_));
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i])) {
                throw Error("non-finite feature value in row " + std::to_string(i / (dim_ ? dim_ : 1)));
            }
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    bool        normalized() const noexcept { return normalized_; }

    std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
    const std::vector<double>& values() const noexcept { return values_; }

  private:
    std::size_t         rows_ = 0;
    std::size_t         dim_  = 0;
    std::vector<double> values_;
    bool                normalized_ = false;
};

struct DatasetBundle {
    std::string         name;
    std::vector<Sample> samples;
    FeatureMatrix       features;

    std::size_t size() const noexcept { return samples.size(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) acc += a[d] * b[d];
    return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Symmetric N x N cosine similarity matrix. Each unordered pair is computed once and mirrored.
class SimilarityMatrix {
  public:
    SimilarityMatrix() = default;
    SimilarityMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
        if (values_.size() != n_ * n_) throw Error("similarity matrix size mismatch");
    }

    std::size_t size() const noexcept { return n_; }

    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }

    // Similarity rescaled into [0,1].
    double mapped(std::size_t i, std::size_t j) const { return 0.5 * ((*this)(i, j) + 1.0); }

    // Cosine distance in [0,2].
    double distance(std::size_t i, std::size_t j) const { return 1.0 - (*this)(i, j); }

  private:
    std::size_t         n_ = 0;
    std::vector<double> values_;
};

inline FeatureMatrix l2_normalize(const FeatureMatrix& features) {
    std::vector<double> out(features.values());
    const std::size_t   dim = features.dim();
    for (std::size_t i = 0; i < features.rows(); ++i) {
        const double n = norm(features.row(i));
        if (n == 0.0) throw Error("zero-norm feature row " + std::to_string(i));
        for (std::size_t d = 0; d < dim; ++d) out[i * dim + d] /= n;
    }
    return FeatureMatrix(features.rows(), dim, std::move(out), true);
}

inline SimilarityMatrix similarity_matrix(const FeatureMatrix& features) {
    if (!features.normalized()) throw Error("similarity_matrix requires L2-normalized features");
    const std::size_t   n = features.rows();
    std::vector<double> values(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i * n + i] = 1.0;
        const auto ri     = features.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s    = std::clamp(dot(ri, features.row(j)), -1.0, 1.0);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    return SimilarityMatrix(n, std::move(values));
}

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) {
        throw Error(std::string("field '") + key + "' must be a string or null at line " + std::to_string(line));
    }
    return it->get<std::string>();
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

inline FeatureMatrix read_embeddings_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open embeddings file " + path.string());

    std::vector<double> values;
    std::size_t         dim  = 0;
    std::size_t         rows = 0;
    std::string         line;
    std::size_t         line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = detail::trim(line);
        if (body.empty()) continue;

        std::size_t cols = 0;
        std::size_t pos  = 0;
        while (pos <= body.size()) {
            const auto comma = body.find(',', pos);
            const auto field = detail::trim(body.substr(pos, comma == std::string_view::npos ? body.npos : comma - pos));
            double     v     = 0.0;
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
            if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
                throw Error("malformed number at line " + std::to_string(line_no));
            }
            if (!std::isfinite(v)) throw Error("non-finite value at line " + std::to_string(line_no));
            values.push_back(v);
            ++cols;
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        if (rows == 0) {
            dim = cols;
        } else if (cols != dim) {
            throw Error("dimension mismatch at line " + std::to_string(line_no));
        }
        ++rows;
    }
    return FeatureMatrix(rows, dim, std::move(values), false);
}

inline std::vector<Sample> read_meta_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open metadata file " + path.string());

    std::vector<Sample> samples;
    std::string         line;
    std::size_t         line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw Error("malformed JSON at line " + std::to_string(line_no));
        }
        if (!obj.is_object() || !obj.contains("sample_id") || !obj["sample_id"].is_number_integer()) {
            throw Error("missing integer sample_id at line " + std::to_string(line_no));
        }
        const auto id       = obj["sample_id"].get<long long>();
        const auto expected = static_cast<long long>(samples.size());
        if (id < expected && id >= 0) throw Error("duplicate sample_id at line " + std::to_string(line_no));
        if (id != expected) throw Error("non-contiguous sample_id at line " + std::to_string(line_no));

        Sample s;
        s.sample_id = static_cast<SampleId>(id);
        s.identity  = detail::optional_string(obj, "identity", line_no);
        s.camera    = detail::optional_string(obj, "camera", line_no);
        s.image_ref = detail::optional_string(obj, "image", line_no);
        samples.push_back(std::move(s));
    }
    return samples;
}

inline DatasetBundle load_dataset(const std::filesystem::path& embeddings_path, const std::filesystem::path& meta_path) {
    DatasetBundle bundle;
    bundle.features = read_embeddings_csv(embeddings_path);
    bundle.samples  = read_meta_jsonl(meta_path);
    if (bundle.samples.size() != bundle.features.rows()) {
        throw Error("row count mismatch: " + std::to_string(bundle.features.rows()) + " embedding rows vs " +
                    std::to_string(bundle.samples.size()) + " metadata lines (line " +
                    std::to_string(std::min(bundle.samples.size(), bundle.features.rows()) + 1) + ")");
    }
    bundle.name = embeddings_path.parent_path().filename().string();
    return bundle;
}

// Loads <dir>/embeddings.csv and <dir>/meta.jsonl.
inline DatasetBundle load_dataset_dir(const std::filesystem::path& dir) {
    return load_dataset(dir / "embeddings.csv", dir / "meta.jsonl");
}

inline std::string meta_line(const Sample& s) {
    auto opt = [](const std::optional<std::string>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    nlohmann::ordered_json obj;
    obj["sample_id"] = s.sample_id;
    obj["identity"]  = opt(s.identity);
    obj["camera"]    = opt(s.camera);
    obj["image"]     = opt(s.image_ref);
    return obj.dump();
}

inline void write_meta_jsonl(const std::filesystem::path& path, std::span<const Sample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& s : samples) out << meta_line(s) << '\n';
}

inline void write_embeddings_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    char buf[64];
    for (std::size_t i = 0; i < features.rows(); ++i) {
        const auto r = features.row(i);
        for (std::size_t d = 0; d < r.size(); ++d) {
            const auto res = std::to_chars(buf, buf + sizeof(buf), r[d]);
            if (d) out << ',';
            out.write(buf, res.ptr - buf);
        }
        out << '\n';
    }
}

}  // namespace ucal
