#pragma once

#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "drilldown/scenegen.hpp"
#include "drilldown/trainer.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace dd::serve {

using nlohmann::json;

struct ServiceConfig {
  std::size_t top_k = 5;
  std::size_t max_turns = 5;
  std::size_t capacity = 1024;      // live sessions kept, least recently used evicted
  std::uint64_t target_seed = 0;    // 0 draws from std::random_device
};

// Carries the HTTP status the handler should answer with.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message, std::optional<std::string> session_status = std::nullopt)
      : std::runtime_error(message), status_(status), session_status_(std::move(session_status)) {}
  int status() const { return status_; }
  const std::optional<std::string>& session_status() const { return session_status_; }

 private:
  int status_;
  std::optional<std::string> session_status_;
};

enum class SessionStatus { active, found, exhausted };
const char* status_name(SessionStatus s);

class Service {
 public:
  // A service without a model answers every session call with 503.
  explicit Service(ServiceConfig config = {});
  Service(train::Checkpoint checkpoint, std::vector<scene::Scene> test_scenes, ServiceConfig config = {});
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  bool ready() const { return model_ != nullptr; }
  const ServiceConfig& config() const { return config_; }

  json create_session(const json& request);
  json submit_query(const std::string& session_id, const json& body);
  json get_session(const std::string& session_id);
  const std::string& image_svg(sim::ImageId id) const;

  std::size_t session_count() const;
  // Replaces the sampled target of a live session.
  void set_target(const std::string& session_id, sim::ImageId target);

 private:
  struct TurnRecord {
    std::string text;
    std::vector<sim::RankedImage> top;
    std::size_t target_rank = 0;
  };
  struct Session {
    std::mutex mutex;
    std::string id;
    sim::ImageId target = 0;
    std::unique_ptr<train::EpisodeRunner> runner;
    std::vector<TurnRecord> history;
    SessionStatus status = SessionStatus::active;
  };

  std::shared_ptr<Session> find(const std::string& id);
  json turn_json(const TurnRecord& record, std::size_t turn) const;
  json session_json(const Session& s) const;
  void require_ready() const;

  ServiceConfig config_;
  std::unique_ptr<train::RetrievalModel> model_;
  sim::RetrievalIndex index_;
  std::map<sim::ImageId, std::string> svgs_;

  mutable std::mutex store_mutex_;
  std::list<std::string> recency_;  // front = most recent
  std::unordered_map<std::string, std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>> sessions_;
  grad::Rng rng_;
  std::uint64_t counter_ = 0;
};

// Registers the /api routes and cross-origin headers.
void mount_routes(httplib::Server& server, Service& service);

}  // namespace dd::serve
