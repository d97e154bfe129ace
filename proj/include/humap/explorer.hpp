#ifndef HUMAP_EXPLORER_HPP
#define HUMAP_EXPLORER_HPP

#include "common.hpp"
#include "config.hpp"
#include "persistence.hpp"
#include "projection.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

/**
 * @file explorer.hpp
 *
 * @brief Local HTTP service for browsing a persisted hierarchy.
 *
 * Routes:
 *
 *     POST /sessions                 {"hierarchy_dir": ..., "labels": optional path}
 *     GET  /sessions/{id}/meta
 *     GET  /sessions/{id}/levels/{k}
 *     POST /sessions/{id}/drill      {"level": L, "landmark_ids": [...], "parent": optional key}
 *     GET  /jobs/{id}
 *     GET  /ui/...                   static files
 *
 * Level and drill requests answer 200 with the embedding payload when it is
 * cached and 202 with a job id otherwise. Projections run on a single worker
 * thread and are published only once complete.
 */

namespace humap {

struct ExplorerOptions {
    std::string host = "127.0.0.1";
    int port = 0;                    ///< 0 binds any free port.
    std::filesystem::path ui_dir;    ///< Served under /ui when set.
    std::optional<std::size_t> epochs;   ///< Overrides the directory's epoch setting.
};

/**
 * Order-insensitive digest of a landmark selection: FNV-1a over the sorted,
 * de-duplicated ids.
 */
inline std::uint64_t selection_digest(std::span<const std::size_t> ids) {
    std::vector<std::size_t> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::string text;
    for (auto id : sorted) {
        text += std::to_string(id);
        text += ',';
    }
    return fnv1a(text);
}

class ExplorerService {
public:
    explicit ExplorerService(ExplorerOptions opt = {}) : opt_(std::move(opt)) {
        routes();
        worker_ = std::thread([this] { work(); });
    }

    ~ExplorerService() { stop(); }

    ExplorerService(const ExplorerService&) = delete;
    ExplorerService& operator=(const ExplorerService&) = delete;

    /// Binds the listening socket and returns the port.
    int bind() {
        if (opt_.port == 0) {
            port_ = server_.bind_to_any_port(opt_.host);
        } else {
            port_ = server_.bind_to_port(opt_.host, opt_.port) ? opt_.port : -1;
        }
        if (port_ < 0) {
            fail(ErrorKind::io, "cannot bind " + opt_.host + ":" + std::to_string(opt_.port));
        }
        return port_;
    }

    /// Serves requests until stop(); binds first if needed.
    void run() {
        if (port_ < 0) {
            bind();
        }
        server_.listen_after_bind();
    }

    /// Starts serving on a background thread and returns the port.
    int start() {
        int port = bind();
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    void stop() {
        server_.stop();
        if (listener_.joinable()) {
            listener_.join();
        }
        {
            std::lock_guard lock(queue_mutex_);
            stopping_ = true;
        }
        queue_cv_.notify_all();
        if (worker_.joinable()) {
            worker_.join();
        }
    }

    int port() const { return port_; }

    /// Number of projection jobs started so far.
    std::size_t jobs_started() const {
        std::lock_guard lock(state_mutex_);
        return jobs_.size();
    }

private:
    using json = nlohmann::ordered_json;

    struct Entry {
        Embedding embedding;
        std::string payload;
    };

    struct Session {
        std::string id;
        std::filesystem::path dir;
        Hierarchy hierarchy;
        ProjectionParams params;
        std::uint64_t key = 0;
        std::vector<std::string> labels;
        std::unique_ptr<HierarchyProjector> projector;   ///< Touched by the worker only.
        std::map<std::string, std::shared_ptr<const Entry>> cache;
        std::map<std::string, std::string> in_flight;   ///< Cache key to job id.
    };

    struct Job {
        std::string id;
        std::string session;
        std::string key;
        std::string status = "queued";
        std::atomic<double> progress{0};
        std::string error;

        void advance(double p) {
            double cur = progress.load();
            while (p > cur && !progress.compare_exchange_weak(cur, p)) {
            }
        }
    };

    static void reply(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
        reply(res, status, json{{"code", code}, {"message", message}});
    }

    static std::string full_key(std::size_t level) { return "L" + std::to_string(level) + ":full"; }

    static std::optional<std::size_t> parse_index(const std::string& text) {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || ptr != text.data() + text.size()) {
            return std::nullopt;
        }
        return v;
    }

    std::shared_ptr<Session> find_session(const std::string& id) {
        auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    std::string payload(const Session& s, const std::string& key, const Embedding& emb) const {
        const auto& h = s.hierarchy;
        json j;
        j["embedding_key"] = key;
        j["level"] = emb.level;
        j["point_ids"] = emb.point_ids;
        std::vector<std::size_t> data_ids;
        for (auto p : emb.point_ids) {
            data_ids.push_back(h.levels[emb.level].point_ids[p]);
        }
        j["data_ids"] = data_ids;
        auto coords = json::array();
        for (const auto& c : emb.coords) {
            coords.push_back({c[0], c[1]});
        }
        j["coords"] = std::move(coords);
        std::vector<bool> fixed;
        for (std::size_t i = 0; i < emb.size(); ++i) {
            fixed.push_back(i < emb.fixed_mask.size() && emb.fixed_mask[i]);
        }
        j["fixed"] = fixed;
        if (emb.level < h.top()) {
            std::vector<std::size_t> parent;
            for (auto p : emb.point_ids) {
                parent.push_back(h.levels[emb.level + 1].association.parent[p]);
            }
            j["parent_landmark"] = parent;
        } else {
            j["parent_landmark"] = nullptr;
        }
        if (!s.labels.empty()) {
            std::vector<std::string> labels;
            for (auto d : data_ids) {
                labels.push_back(s.labels[d]);
            }
            j["labels"] = labels;
        }
        return j.dump();
    }

    void routes() {
        server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            create_session(req, res);
        });
        server_.Get(R"(/sessions/([^/]+)/meta)", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(state_mutex_);
            auto s = find_session(req.matches[1]);
            if (!s) {
                return reply_error(res, 404, "unknown_session", "no session " + std::string(req.matches[1]));
            }
            json projected = json::array();
            for (std::size_t l = 0; l < s->hierarchy.n_levels(); ++l) {
                if (s->cache.count(full_key(l))) {
                    projected.push_back(l);
                }
            }
            reply(res, 200, json{{"session_id", s->id}, {"hierarchy_dir", s->dir.string()},
                {"level_sizes", s->hierarchy.level_sizes()}, {"params", io::params_to_json(s->hierarchy.params)},
                {"projection", {{"theta", s->params.theta}, {"epochs", s->params.layout.n_epochs},
                    {"seed", s->params.layout.seed}}},
                {"projected_levels", projected}, {"has_labels", !s->labels.empty()}});
        });
        server_.Get(R"(/sessions/([^/]+)/levels/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            get_level(req.matches[1], req.matches[2], res);
        });
        server_.Post(R"(/sessions/([^/]+)/drill)", [this](const httplib::Request& req, httplib::Response& res) {
            drill(req.matches[1], req, res);
        });
        server_.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            get_job(req.matches[1], res);
        });
        if (!opt_.ui_dir.empty()) {
            server_.set_mount_point("/ui", opt_.ui_dir.string());
        } else {
            server_.Get("/ui", [](const httplib::Request&, httplib::Response& res) {
                res.set_content("<!doctype html><title>humap</title><p>No UI bundle configured.</p>", "text/html");
            });
        }
    }

    void create_session(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return reply_error(res, 400, "bad_request", "request body is not JSON");
        }
        if (!body.is_object() || !body.contains("hierarchy_dir") || !body["hierarchy_dir"].is_string()) {
            return reply_error(res, 422, "invalid_request", "hierarchy_dir (string) is required");
        }
        auto s = std::make_shared<Session>();
        s->dir = body["hierarchy_dir"].get<std::string>();
        if (!std::filesystem::exists(s->dir / "hierarchy.json")) {
            return reply_error(res, 404, "unknown_hierarchy", "no hierarchy.json in " + s->dir.string());
        }
        try {
            s->hierarchy = io::load_hierarchy(s->dir);
            s->params = projection_for(s->dir, s->hierarchy);
            if (opt_.epochs) {
                s->params.layout.n_epochs = *opt_.epochs;
            }
            s->key = projection_key(s->params);
            if (body.contains("labels") && body["labels"].is_string()) {
                auto in = io::open_input(body["labels"].get<std::string>());
                std::string line;
                while (std::getline(in, line)) {
                    if (!line.empty() && line.back() == '\r') {
                        line.pop_back();
                    }
                    s->labels.push_back(line);
                }
                if (s->labels.size() != s->hierarchy.levels[0].size()) {
                    return reply_error(res, 422, "invalid_labels", "label count " + std::to_string(s->labels.size()) +
                        " differs from point count " + std::to_string(s->hierarchy.levels[0].size()));
                }
            }
        } catch (const Error& e) {
            return reply_error(res, 422, to_string(e.kind()), e.what());
        }
        s->projector = std::make_unique<HierarchyProjector>(s->hierarchy, s->params);
        json out;
        {
            std::lock_guard lock(state_mutex_);
            s->id = "s" + std::to_string(++session_counter_);
            sessions_[s->id] = s;
            out = {{"session_id", s->id}, {"level_sizes", s->hierarchy.level_sizes()}};
        }
        reply(res, 201, out);
    }

    void get_level(const std::string& sid, const std::string& level_text, httplib::Response& res) {
        std::unique_lock lock(state_mutex_);
        auto s = find_session(sid);
        if (!s) {
            return reply_error(res, 404, "unknown_session", "no session " + sid);
        }
        auto level = parse_index(level_text);
        if (!level || *level >= s->hierarchy.n_levels()) {
            return reply_error(res, 404, "unknown_level", "no level " + level_text + " in session " + sid);
        }
        auto key = full_key(*level);
        if (auto it = s->cache.find(key); it != s->cache.end()) {
            res.status = 200;
            res.set_content(it->second->payload, "application/json");
            return;
        }
        auto lvl = *level;
        auto job = submit(*s, key, [this, s, lvl](Job& j) { project_down_to(*s, lvl, j); });
        reply(res, 202, json{{"job_id", job}, {"embedding_key", key}});
    }

    void drill(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return reply_error(res, 400, "bad_request", "request body is not JSON");
        }
        std::unique_lock lock(state_mutex_);
        auto s = find_session(sid);
        if (!s) {
            return reply_error(res, 404, "unknown_session", "no session " + sid);
        }
        if (!body.is_object() || !body.contains("level") || !body["level"].is_number_unsigned() ||
            !body.contains("landmark_ids") || !body["landmark_ids"].is_array())
        {
            return reply_error(res, 422, "invalid_request", "level (unsigned) and landmark_ids (array) are required");
        }
        auto level = body["level"].get<std::size_t>();
        if (level == 0 || level >= s->hierarchy.n_levels()) {
            return reply_error(res, 422, "invalid_level", "drilling needs a level in [1, " +
                std::to_string(s->hierarchy.n_levels() - 1) + "]");
        }
        std::vector<std::size_t> ids;
        for (const auto& v : body["landmark_ids"]) {
            if (!v.is_number_unsigned()) {
                return reply_error(res, 422, "invalid_ids", "landmark ids must be non-negative integers");
            }
            ids.push_back(v.get<std::size_t>());
        }
        if (ids.empty()) {
            return reply_error(res, 422, "invalid_ids", "landmark selection is empty");
        }
        std::string parent_key = full_key(level);
        if (body.contains("parent") && body["parent"].is_string()) {
            parent_key = body["parent"].get<std::string>();
        }
        auto pit = s->cache.find(parent_key);
        if (pit == s->cache.end()) {
            return reply_error(res, 409, "parent_not_projected", "embedding " + parent_key + " is not available yet");
        }
        auto parent = pit->second;
        if (parent->embedding.level != level) {
            return reply_error(res, 422, "invalid_parent", "embedding " + parent_key + " is not on level " +
                std::to_string(level));
        }
        std::vector<char> member(s->hierarchy.levels[level].size(), 0);
        for (auto p : parent->embedding.point_ids) {
            member[p] = 1;
        }
        for (auto id : ids) {
            if (id >= member.size() || !member[id]) {
                return reply_error(res, 422, "invalid_ids", "id " + std::to_string(id) + " is not a landmark shown in " +
                    parent_key);
            }
        }

        std::string key;
        if (parent_key == full_key(level) && selection_digest(ids) == selection_digest(parent->embedding.point_ids)) {
            key = full_key(level - 1);
        } else {
            char hex[17];
            std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(
                selection_digest(ids) ^ fnv1a(parent_key)));
            key = "L" + std::to_string(level - 1) + ":" + hex;
        }
        if (auto it = s->cache.find(key); it != s->cache.end()) {
            res.status = 200;
            res.set_content(it->second->payload, "application/json");
            return;
        }
        std::string job;
        if (key == full_key(level - 1)) {
            job = submit(*s, key, [this, s, level](Job& j) { project_down_to(*s, level - 1, j); });
        } else {
            job = submit(*s, key, [this, s, level, ids, parent, key](Job& j) {
                auto emb = s->projector->project_subset(level - 1, ids, &parent->embedding,
                    [&](double f) { j.advance(f); });
                publish(*s, key, std::move(emb));
            });
        }
        reply(res, 202, json{{"job_id", job}, {"embedding_key", key}});
    }

    void get_job(const std::string& id, httplib::Response& res) {
        std::lock_guard lock(state_mutex_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) {
            return reply_error(res, 404, "unknown_job", "no job " + id);
        }
        const auto& j = *it->second;
        json out{{"job_id", j.id}, {"status", j.status}, {"progress", j.progress.load()}, {"embedding_key", j.key}};
        if (j.status == "done") {
            auto s = find_session(j.session);
            out["result"] = json::parse(s->cache.at(j.key)->payload);
        } else if (j.status == "failed") {
            out["error"] = j.error;
        }
        reply(res, 200, out);
    }

    /// Queues `task` for `key` unless a job for it is already pending. Requires state_mutex_.
    std::string submit(Session& s, const std::string& key, std::function<void(Job&)> task) {
        if (auto it = s.in_flight.find(key); it != s.in_flight.end()) {
            return it->second;
        }
        auto job = std::make_shared<Job>();
        job->id = "j" + std::to_string(jobs_.size() + 1);
        job->session = s.id;
        job->key = key;
        jobs_[job->id] = job;
        s.in_flight[key] = job->id;
        {
            std::lock_guard q(queue_mutex_);
            queue_.push_back([this, job, task = std::move(task), &s] {
                {
                    std::lock_guard lock(state_mutex_);
                    job->status = "running";
                }
                std::string status = "done", error;
                try {
                    task(*job);
                } catch (const std::exception& e) {
                    status = "failed";
                    error = e.what();
                }
                std::lock_guard lock(state_mutex_);
                if (status == "done") {
                    job->advance(1.0);
                }
                job->status = status;
                job->error = error;
                s.in_flight.erase(job->key);
            });
        }
        queue_cv_.notify_one();
        return job->id;
    }

    void publish(Session& s, const std::string& key, Embedding emb) {
        auto entry = std::make_shared<Entry>();
        entry->payload = payload(s, key, emb);
        entry->embedding = std::move(emb);
        std::lock_guard lock(state_mutex_);
        s.cache.emplace(key, std::move(entry));
    }

    /// Projects every missing full level from the top down to `level`. Worker only.
    void project_down_to(Session& s, std::size_t level, Job& job) {
        auto& proj = *s.projector;
        const std::size_t top = s.hierarchy.top();
        const double steps = static_cast<double>(top - level + 1);
        for (std::size_t l = top + 1; l-- > level;) {
            const double done = static_cast<double>(top - l);
            if (!proj.is_projected(l)) {
                if (auto cached = io::load_cached_embedding(s.dir, l, s.key)) {
                    proj.set_embedding(l, std::move(*cached));
                } else {
                    proj.project_level(l, [&](double f) { job.advance((done + f) / steps); });
                }
            }
            bool published;
            {
                std::lock_guard lock(state_mutex_);
                published = s.cache.count(full_key(l)) > 0;
            }
            if (!published) {
                publish(s, full_key(l), proj.embedding(l));
            }
            job.advance((done + 1) / steps);
        }
    }

    void work() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock lock(queue_mutex_);
                queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (stopping_) {
                    return;
                }
                task = std::move(queue_.front());
                queue_.pop_front();
            }
            task();
        }
    }

    ExplorerOptions opt_;
    httplib::Server server_;
    int port_ = -1;
    std::thread listener_;

    mutable std::mutex state_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::size_t session_counter_ = 0;

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::deque<std::function<void()>> queue_;
    bool stopping_ = false;
    std::thread worker_;
};

}

#endif
