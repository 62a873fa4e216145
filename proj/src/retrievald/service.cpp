#include <random>
#include <sstream>

#include "drilldown/retrievald.hpp"

namespace dd::serve {

const char* status_name(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::found: return "found";
    case SessionStatus::exhausted: return "exhausted";
  }
  return "unknown";
}

namespace {

std::uint64_t seed_or_random(std::uint64_t seed) {
  if (seed != 0) return seed;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

Service::Service(ServiceConfig config) : config_(config), rng_(seed_or_random(config.target_seed)) {}

Service::Service(train::Checkpoint checkpoint, std::vector<scene::Scene> test_scenes, ServiceConfig config)
    : Service(config) {
  if (config_.top_k < 1 || config_.max_turns < 1 || config_.capacity < 1) {
    throw std::invalid_argument("service: top_k, max_turns and capacity must be positive");
  }
  if (test_scenes.empty()) throw std::invalid_argument("service: test split is empty");
  model_ = std::make_unique<train::RetrievalModel>(std::move(checkpoint));
  index_ = model_->build_index(train::encode_scenes(test_scenes, model_->checkpoint().vocab));
  for (const auto& s : test_scenes) svgs_[static_cast<sim::ImageId>(s.id)] = scene::render_svg(s);
}

void Service::require_ready() const {
  if (!ready()) throw ServiceError(503, "service has no model loaded");
}

std::size_t Service::session_count() const {
  std::lock_guard lock(store_mutex_);
  return sessions_.size();
}

const std::string& Service::image_svg(sim::ImageId id) const {
  auto it = svgs_.find(id);
  if (it == svgs_.end()) throw ServiceError(404, "unknown image " + std::to_string(id));
  return it->second;
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) {
  std::lock_guard lock(store_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  recency_.splice(recency_.begin(), recency_, it->second.second);
  return it->second.first;
}

json Service::turn_json(const TurnRecord& record, std::size_t turn) const {
  json results = json::array();
  for (std::size_t i = 0; i < record.top.size(); ++i) {
    results.push_back({{"image_id", record.top[i].id},
                       {"svg", image_svg(record.top[i].id)},
                       {"score", record.top[i].score},
                       {"rank", i + 1}});
  }
  return {{"turn", turn}, {"text", record.text}, {"results", results}, {"target_rank", record.target_rank}};
}

json Service::session_json(const Session& s) const {
  json history = json::array();
  for (std::size_t i = 0; i < s.history.size(); ++i) history.push_back(turn_json(s.history[i], i + 1));
  return {{"session_id", s.id},
          {"target_svg", image_svg(s.target)},
          {"turn", s.history.size()},
          {"status", status_name(s.status)},
          {"max_turns", config_.max_turns},
          {"top_k", config_.top_k},
          {"history", history}};
}

json Service::create_session(const json& request) {
  require_ready();
  if (!request.is_null() && !request.is_object()) throw ServiceError(400, "request body must be an object");
  if (request.is_object()) {
    if (request.contains("model")) {
      if (!request["model"].is_string()) throw ServiceError(400, "model must be a string");
      const std::string loaded = train::model_name(model_->config().model);
      if (request["model"].get<std::string>() != loaded)
        throw ServiceError(400, "this service hosts model '" + loaded + "' only");
    }
    if (request.contains("corpus_split") &&
        (!request["corpus_split"].is_string() || request["corpus_split"].get<std::string>() != "test")) {
      throw ServiceError(400, "targets are drawn from the test split only");
    }
  }
  auto session = std::make_shared<Session>();
  session->runner = std::make_unique<train::EpisodeRunner>(*model_, index_);
  std::lock_guard lock(store_mutex_);
  std::uniform_int_distribution<std::size_t> pick(0, index_.size() - 1);
  session->target = index_.ids()[pick(rng_)];
  std::ostringstream id;
  id << std::hex << rng_() << counter_++;
  session->id = id.str();
  recency_.push_front(session->id);
  sessions_[session->id] = {session, recency_.begin()};
  while (sessions_.size() > config_.capacity) {
    sessions_.erase(recency_.back());
    recency_.pop_back();
  }
  json out = session_json(*session);
  return out;
}

void Service::set_target(const std::string& session_id, sim::ImageId target) {
  image_svg(target);
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  s->target = target;
}

json Service::submit_query(const std::string& session_id, const json& body) {
  require_ready();
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  if (s->status != SessionStatus::active) {
    throw ServiceError(409, std::string("session is ") + status_name(s->status), status_name(s->status));
  }
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
    throw ServiceError(400, "body must be an object with a string field 'text'");
  const std::string text = body["text"].get<std::string>();
  const auto ids = text::encode_text(text, model_->checkpoint().vocab);
  if (ids.empty()) throw ServiceError(400, "query has no words");

  const auto ranking = s->runner->observe(ids);
  TurnRecord record;
  record.text = text;
  record.top.assign(ranking.begin(), ranking.begin() + static_cast<long>(std::min(config_.top_k, ranking.size())));
  record.target_rank = sim::rank_of(ranking, s->target);
  s->history.push_back(record);
  if (record.target_rank <= config_.top_k) {
    s->status = SessionStatus::found;
  } else if (s->history.size() >= config_.max_turns) {
    s->status = SessionStatus::exhausted;
  }
  json out = turn_json(record, s->history.size());
  out["session_id"] = s->id;
  out["status"] = status_name(s->status);
  out["max_turns"] = config_.max_turns;
  return out;
}

json Service::get_session(const std::string& session_id) {
  require_ready();
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  return session_json(*s);
}

}  // namespace dd::serve
