#pragma once

// HTTP/JSON facade for live annotation under /api/v1:
//
//   GET  /queries/next   lease the next pending query (204 when none)
//   POST /labels         {query_id, label: "positive"|"negative"} -> {accepted, m}
//   GET  /state          {epoch, phase, pending}
//   GET  /metrics        latest epoch metrics (204 before the first epoch ends)
//   GET  /static/...     dataset image files
//
// Annotators identify themselves with an X-Session header or a ?session= parameter.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ucal/annotation.hpp"
#include "ucal/engine.hpp"

namespace ucal {

// Projection of the rows onto their first two principal axes (power iteration with deflation).
inline std::vector<std::array<double, 2>> project_2d(const FeatureMatrix& features) {
    const std::size_t n = features.rows();
    const std::size_t d = features.dim();
    std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
    if (n == 0 || d == 0) return out;

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = features.row(i);
        for (std::size_t k = 0; k < d; ++k) mean[k] += r[k] / static_cast<double>(n);
    }
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = features.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double ca = r[a] - mean[a];
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += ca * (r[b] - mean[b]);
        }
    }

    std::vector<std::vector<double>> axes;
    for (int axis = 0; axis < 2 && static_cast<std::size_t>(axis) < d; ++axis) {
        std::vector<double> v(d);
        for (std::size_t k = 0; k < d; ++k) v[k] = 1.0 + 0.01 * static_cast<double>(k);
        for (int iter = 0; iter < 200; ++iter) {
            std::vector<double> w(d, 0.0);
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b < d; ++b) w[a] += cov[a * d + b] * v[b];
            }
            for (const auto& u : axes) {
                const double p = dot(w, u);
                for (std::size_t k = 0; k < d; ++k) w[k] -= p * u[k];
            }
            const double wn = norm(w);
            if (wn < 1e-300) break;
            for (std::size_t k = 0; k < d; ++k) v[k] = w[k] / wn;
        }
        axes.push_back(v);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = features.row(i);
        for (std::size_t a = 0; a < axes.size(); ++a) {
            double p = 0.0;
            for (std::size_t k = 0; k < d; ++k) p += (r[k] - mean[k]) * axes[a][k];
            out[i][a] = p;
        }
    }
    return out;
}

struct ServiceOptions {
    std::string           host = "127.0.0.1";
    int                   port = 8080;  // 0 picks a free port
    std::filesystem::path static_dir;
    std::size_t           neighborhood = 20;
};

class AnnotationService {
  public:
    AnnotationService(Engine& engine, ServiceOptions options) : engine_(engine), options_(std::move(options)) {
        install_routes();
    }

    AnnotationService(const AnnotationService&)            = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    ~AnnotationService() { stop(); }

    // Binds and serves on a background thread; returns the bound port.
    int start() {
        if (options_.port == 0) {
            port_ = server_.bind_to_any_port(options_.host);
        } else {
            port_ = server_.bind_to_port(options_.host, options_.port) ? options_.port : -1;
        }
        if (port_ < 0) throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const noexcept { return port_; }

  private:
    static std::string session_of(const httplib::Request& req) {
        if (req.has_header("X-Session")) return req.get_header_value("X-Session");
        if (req.has_param("session")) return req.get_param_value("session");
        return {};
    }

    static void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message) {
        nlohmann::ordered_json body;
        body["error"] = message;
        send_json(res, status, body);
    }

    using Coords = std::vector<std::array<double, 2>>;

    std::shared_ptr<const Coords> coords_for(const EpochView& view) {
        std::lock_guard lock(coords_mutex_);
        if (!coords_ || coords_epoch_ != view.epoch || coords_->size() != view.embedded.rows()) {
            coords_       = std::make_shared<const Coords>(project_2d(view.embedded));
            coords_epoch_ = view.epoch;
        }
        return coords_;
    }

    nlohmann::ordered_json sample_view(SampleId s, ClusterId cluster) {
        nlohmann::ordered_json j;
        j["sample_id"]  = s;
        j["cluster_id"] = cluster;
        const auto& sample = engine_.dataset().samples.at(s);
        if (sample.image_ref && !options_.static_dir.empty()) {
            j["image_url"] = "/api/v1/static/" + *sample.image_ref;
            return j;
        }
        const auto view = engine_.view();
        if (!view) return j;
        const auto  shared = coords_for(*view);
        const auto& coords = *shared;
        j["coords"]        = {coords[s][0], coords[s][1]};

        std::vector<std::pair<double, SampleId>> near;
        for (std::size_t i = 0; i < view->embedded.rows(); ++i) {
            if (i != s) near.push_back({-dot(view->embedded.row(s), view->embedded.row(i)), i});
        }
        const std::size_t take = std::min(options_.neighborhood, near.size());
        std::partial_sort(near.begin(), near.begin() + static_cast<std::ptrdiff_t>(take), near.end());
        auto hood = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < take; ++i) {
            const SampleId id = near[i].second;
            hood.push_back({{"sample_id", id}, {"coords", {coords[id][0], coords[id][1]}}});
        }
        j["neighborhood"] = std::move(hood);
        return j;
    }

    void install_routes() {
        server_.Get("/api/v1/queries/next", [this](const httplib::Request& req, httplib::Response& res) {
            std::string session = session_of(req);
            if (session.empty()) session = "anonymous";
            const auto query = engine_.queue().lease_next(session);
            if (!query) {
                res.status = 204;
                return;
            }
            nlohmann::ordered_json body;
            body["query_id"] = query->query_id;
            body["kind"]     = to_string(query->kind);
            body["epoch"]    = query->epoch;
            body["a"]        = sample_view(query->pair.a, query->cluster_a);
            body["b"]        = sample_view(query->pair.b, query->cluster_b);
            send_json(res, 200, body);
        });

        server_.Post("/api/v1/labels", [this](const httplib::Request& req, httplib::Response& res) {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::parse_error&) {
                return send_error(res, 400, "malformed JSON");
            }
            if (!body.is_object() || !body.contains("query_id") || !body["query_id"].is_number_unsigned() ||
                !body.contains("label") || !body["label"].is_string()) {
                return send_error(res, 400, "expected {query_id: int, label: \"positive\"|\"negative\"}");
            }
            Verdict verdict;
            try {
                verdict = parse_verdict(body["label"].get<std::string>());
            } catch (const Error& e) {
                return send_error(res, 400, e.what());
            }
            const auto result = engine_.queue().submit(body["query_id"].get<std::uint64_t>(), session_of(req), verdict);
            switch (result.status) {
                case AnnotationQueue::SubmitStatus::UnknownQuery: return send_error(res, 404, "unknown query_id");
                case AnnotationQueue::SubmitStatus::NotLeased:
                    return send_error(res, 409, "query is not leased to this session or its lease expired");
                case AnnotationQueue::SubmitStatus::Accepted:
                case AnnotationQueue::SubmitStatus::Duplicate: {
                    nlohmann::ordered_json ack;
                    ack["accepted"] = result.status == AnnotationQueue::SubmitStatus::Accepted;
                    ack["m"]        = result.m;
                    return send_json(res, 200, ack);
                }
            }
        });

        server_.Get("/api/v1/state", [this](const httplib::Request&, httplib::Response& res) {
            const auto             st = engine_.status();
            nlohmann::ordered_json body;
            body["epoch"]   = st.epoch;
            body["phase"]   = st.phase;
            body["pending"] = engine_.pending();
            send_json(res, 200, body);
        });

        server_.Get("/api/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
            const auto st = engine_.status();
            if (!st.latest) {
                res.status = 204;
                return;
            }
            send_json(res, 200, st.latest->to_json());
        });

        if (!options_.static_dir.empty()) server_.set_mount_point("/api/v1/static", options_.static_dir.string());
    }

    Engine&          engine_;
    ServiceOptions   options_;
    httplib::Server  server_;
    std::thread      thread_;
    int              port_ = -1;

    std::mutex                    coords_mutex_;
    int                           coords_epoch_ = -1;
    std::shared_ptr<const Coords> coords_;
};

}  // namespace ucal
