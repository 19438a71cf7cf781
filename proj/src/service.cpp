#include "ecorec/service.hpp"

#include <algorithm>

#include <httplib.h>

#include "ecorec/error.hpp"
#include "ecorec/ingest.hpp"

namespace ecorec {

namespace {

std::uint64_t sequence_of(const std::string& recommendation_id) {
  const auto dash = recommendation_id.rfind('-');
  if (dash == std::string::npos || dash + 1 >= recommendation_id.size()) return 0;
  std::uint64_t n = 0;
  for (std::size_t i = dash + 1; i < recommendation_id.size(); ++i) {
    const char c = recommendation_id[i];
    if (c < '0' || c > '9') return 0;
    n = n * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return n;
}

nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

nlohmann::json aggregate_json(const RuleAggregate& a) {
  return {{"recommended", a.recommended}, {"useful", a.useful},   {"not_useful", a.not_useful},
          {"expired", a.expired},         {"streak", a.streak}};
}

nlohmann::json recommendation_view(const Recommendation& r) {
  auto j = recommendation_to_json(r);
  j["feedback"] = {{"href", "/recommendations/" + r.recommendation_id + "/feedback"},
                   {"options", {"useful", "not_useful"}}};
  return j;
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("invalid_argument", "webhook url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::vector<EventRecord> parse_event_body(const std::string& body, const std::string& home_id) {
  std::vector<nlohmann::json> items;
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (!j.is_discarded()) {
    if (j.is_array()) {
      items.assign(j.begin(), j.end());
    } else if (j.is_object() && j.contains("events") && j["events"].is_array()) {
      items.assign(j["events"].begin(), j["events"].end());
    } else {
      items.push_back(j);
    }
  } else {
    // line-delimited records
    std::size_t start = 0;
    while (start < body.size()) {
      auto end = body.find('\n', start);
      if (end == std::string::npos) end = body.size();
      const auto line = body.substr(start, end - start);
      start = end + 1;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto item = nlohmann::json::parse(line, nullptr, false);
      if (item.is_discarded()) throw Error("invalid_argument", "record " + std::to_string(items.size() + 1) + ": malformed json");
      items.push_back(std::move(item));
    }
  }
  if (items.empty()) throw Error("invalid_argument", "no event records in body");

  std::vector<EventRecord> events;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& item = items[i];
    if (item.is_object() && !item.contains("home_id")) item["home_id"] = home_id;
    auto parsed = parse_json_record(item, i + 1);
    if (const auto* err = std::get_if<ParseError>(&parsed)) {
      throw Error("invalid_argument", "record " + std::to_string(i + 1) + ": " + err->reason);
    }
    events.push_back(std::move(std::get<EventRecord>(parsed)));
  }
  return events;
}

}  // namespace

int http_status_for(const std::string& code) {
  if (code == "invalid_argument" || code == "parse_error" || code == "parse") return 400;
  if (code == "unauthorized") return 401;
  if (code == "not_found") return 404;
  if (code == "conflict" || code == "out_of_order") return 409;
  return 500;
}

void ServiceConfig::validate() const {
  if (store_dir.empty()) throw Error("invalid_argument", "store directory is required");
  if (port < 0 || port > 65535) throw Error("invalid_argument", "port out of range");
  if (reorder_tolerance.count() < 0) throw Error("invalid_argument", "reorder tolerance must be >= 0");
  if (webhook_attempts < 1) throw Error("invalid_argument", "webhook attempts must be >= 1");
  matcher.validate();
  for (const auto& [home, url] : webhooks) {
    if (url.rfind("http://", 0) != 0) throw Error("invalid_argument", "webhook for " + home + " must be an http:// url");
  }
}

nlohmann::json EventsResult::to_json() const {
  auto recs = nlohmann::json::array();
  for (const auto& r : recommendations) recs.push_back(recommendation_view(r));
  return {{"received", received}, {"stored", stored},   {"duplicates", duplicates},
          {"matched", matched},   {"late", late},       {"recommendations", recs}};
}

Service::Service(ServiceConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      ledger_(FeedbackLedger::open(cfg_.journal_path.value_or(cfg_.store_dir / "feedback.jsonl"), cfg_.feedback)) {
  std::filesystem::create_directories(cfg_.store_dir);
  store_ = std::make_unique<EventStore>(cfg_.store_dir);

  RuleDB db;
  if (!cfg_.rules_path.empty() && std::filesystem::exists(cfg_.rules_path)) db = RuleDB::load(cfg_.rules_path);
  if (cfg_.threshold) db.threshold = *cfg_.threshold;
  if (cfg_.exclude_absent) db.policy.exclude_absent_actions = *cfg_.exclude_absent;
  db.recompute();
  rules_ = std::make_shared<const RuleDB>(std::move(db));

  for (const auto& id : store_->homes()) {
    auto& state = home(id);
    std::lock_guard lock(state.mutex);
    restore_home(id, state);
  }
  webhook_thread_ = std::thread([this] { webhook_loop(); });
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(webhook_mutex_);
    stopping_ = true;
  }
  webhook_cv_.notify_all();
  if (webhook_thread_.joinable()) webhook_thread_.join();
}

Service::HomeState& Service::home(const std::string& home_id) {
  std::lock_guard lock(homes_mutex_);
  auto& slot = homes_[home_id];
  if (!slot) slot = std::make_unique<HomeState>();
  return *slot;
}

bool Service::known_home(const std::string& home_id) const {
  {
    std::lock_guard lock(homes_mutex_);
    if (homes_.count(home_id)) return true;
  }
  return store_->topology().count(home_id) > 0;
}

std::shared_ptr<const RuleDB> Service::rules() const {
  std::lock_guard lock(rules_mutex_);
  return rules_;
}

void Service::ensure_matcher(const std::string& home_id, HomeState& state) {
  std::shared_ptr<const RuleDB> db;
  std::uint64_t version = 0;
  {
    std::lock_guard lock(rules_mutex_);
    db = rules_;
    version = rules_version_;
  }
  if (!state.matcher) {
    std::shared_ptr<const HomeTopology> topo;
    if (const auto it = store_->topology().find(home_id); it != store_->topology().end()) {
      topo = std::make_shared<const HomeTopology>(it->second);
    }
    state.matcher = std::make_unique<Matcher>(home_id, cfg_.matcher, db, topo);
  } else if (state.rules_version != version) {
    state.matcher->set_rules(db);
  }
  state.rules_version = version;
}

// Rebuilds live instances from the recent tail of stored events, then takes
// cooldowns and the id sequence from the persisted recommendations.
void Service::restore_home(const std::string& home_id, HomeState& state) {
  ensure_matcher(home_id, state);
  const auto events = store_->events(home_id);
  if (!events || events->empty()) return;

  std::size_t longest = 1;
  for (const auto* r : rules()->ranked(home_id)) longest = std::max(longest, r->condition.size());
  const auto watermark = events->back().timestamp;
  const auto horizon = cfg_.matcher.max_gap * static_cast<int>(longest) + cfg_.matcher.action_wait;
  const auto from = std::lower_bound(events->begin(), events->end(), watermark - horizon,
                                     [](const EventRecord& e, Timestamp t) { return e.timestamp < t; });
  for (auto it = from; it != events->end(); ++it) {
    state.matcher->on_event(*it);
    if (it->timestamp == watermark) state.last_second.push_back(*it);
  }

  std::lock_guard lock(ledger_mutex_);
  std::map<std::string, Timestamp> last;
  std::uint64_t seq = 0;
  for (const auto* r : ledger_.recommendations(home_id)) {
    auto& t = last[r->rule_id];
    t = std::max(t, r->created_at);
    seq = std::max(seq, sequence_of(r->recommendation_id));
  }
  for (const auto& [rule, t] : last) state.matcher->restore_cooldown(rule, t);
  state.matcher->set_next_sequence(std::max(seq + 1, std::uint64_t{1}));
}

EventsResult Service::post_events(const std::string& home_id, std::vector<EventRecord> events) {
  if (home_id.empty()) throw Error("invalid_argument", "home id is empty");
  const auto& topology = store_->topology();
  const HomeTopology* topo = nullptr;
  if (!topology.empty()) {
    const auto it = topology.find(home_id);
    if (it == topology.end()) throw Error("not_found", "unknown home " + home_id);
    topo = &it->second;
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const auto where = "record " + std::to_string(i + 1) + ": ";
    if (e.home_id != home_id) throw Error("invalid_argument", where + "home_id " + e.home_id + " does not match the path");
    if (e.zone_id.empty() || e.subject_id.empty() || e.event_name.empty())
      throw Error("invalid_argument", where + "empty field");
    if (topo) {
      const bool zone_known = std::any_of(topo->zones.begin(), topo->zones.end(),
                                          [&](const ZoneInfo& z) { return z.zone_id == e.zone_id; });
      if (!zone_known) throw Error("invalid_argument", where + "unknown zone " + e.zone_id);
    }
  }

  EventsResult result;
  result.received = events.size();
  std::sort(events.begin(), events.end(), event_order_less);
  events.erase(std::unique(events.begin(), events.end()), events.end());

  auto& state = home(home_id);
  std::unique_lock lock(state.mutex);
  ensure_matcher(home_id, state);
  const auto watermark = state.matcher->watermark();
  if (watermark && !events.empty() && events.front().timestamp < *watermark - cfg_.reorder_tolerance) {
    throw Error("out_of_order", "event at " + format_timestamp(events.front().timestamp) + " is more than " +
                                    std::to_string(cfg_.reorder_tolerance.count()) + "s older than " +
                                    format_timestamp(*watermark));
  }

  const auto stored = store_->append(home_id, events);
  result.stored = stored.accepted;
  result.duplicates = stored.duplicates + (result.received - events.size());

  for (const auto& e : events) {
    const auto wm = state.matcher->watermark();
    if (wm && e.timestamp < *wm) {
      ++result.late;
      continue;
    }
    if (wm && e.timestamp == *wm &&
        std::find(state.last_second.begin(), state.last_second.end(), e) != state.last_second.end()) {
      continue;  // already matched in an earlier batch
    }
    auto recs = state.matcher->on_event(e);
    ++result.matched;
    if (!state.last_second.empty() && state.last_second.front().timestamp != e.timestamp) state.last_second.clear();
    state.last_second.push_back(e);
    for (auto& r : recs) result.recommendations.push_back(std::move(r));
  }

  {
    std::lock_guard ledger_lock(ledger_mutex_);
    for (const auto& r : result.recommendations) ledger_.add_recommendation(r);
    if (const auto wm = state.matcher->watermark()) ledger_.expire(*wm, home_id);
  }
  lock.unlock();
  enqueue_webhooks(result.recommendations);
  return result;
}

std::vector<Recommendation> Service::recommendations(const std::string& home_id,
                                                     std::optional<RecommendationStatus> status) {
  if (!known_home(home_id)) throw Error("not_found", "unknown home " + home_id);
  std::lock_guard lock(ledger_mutex_);
  std::vector<Recommendation> out;
  for (const auto* r : ledger_.recommendations(home_id, status)) out.push_back(*r);
  std::stable_sort(out.begin(), out.end(), [](const Recommendation& a, const Recommendation& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    return sequence_of(a.recommendation_id) < sequence_of(b.recommendation_id);
  });
  return out;
}

nlohmann::json Service::submit_feedback(const std::string& recommendation_id, Verdict verdict,
                                        std::optional<Timestamp> received_at) {
  const auto at = received_at.value_or(std::chrono::floor<Seconds>(std::chrono::system_clock::now()));
  RecordOutcome outcome;
  {
    std::lock_guard lock(ledger_mutex_);
    outcome = ledger_.record(recommendation_id, verdict, at);
  }
  if (outcome.reached_exclusion) {
    std::lock_guard lock(rules_mutex_);
    if (rules_->find(outcome.rule_id)) {
      RuleDB db = *rules_;
      db.exclude_by_feedback(outcome.rule_id);
      if (!cfg_.rules_path.empty()) db.save(cfg_.rules_path);
      rules_ = std::make_shared<const RuleDB>(std::move(db));
      ++rules_version_;
    }
  }
  const auto db = rules();
  const auto* rule = db->find(outcome.rule_id);
  return {{"recommendation_id", recommendation_id},
          {"rule_id", outcome.rule_id},
          {"verdict", to_string(verdict)},
          {"streak", outcome.streak},
          {"rule_state", rule ? nlohmann::json(to_string(rule->state)) : nlohmann::json(nullptr)}};
}

nlohmann::json Service::rules_report(const std::string& home_id) const {
  const auto db = rules();
  std::map<std::string, RuleAggregate> aggregates;
  {
    std::lock_guard lock(ledger_mutex_);
    aggregates = ledger_.aggregates();
  }
  std::map<std::string, std::size_t> by_state;
  for (const auto s : {RuleState::active, RuleState::below_threshold, RuleState::excluded_by_feedback,
                       RuleState::excluded_by_policy}) {
    by_state[std::string(to_string(s))] = 0;
  }
  std::size_t with_recs = 0;
  auto list = nlohmann::json::array();
  for (const auto* r : db->ranked(home_id)) {
    ++by_state[std::string(to_string(r->state))];
    auto j = rule_to_json(*r);
    const auto it = aggregates.find(r->rule_id);
    const auto agg = it == aggregates.end() ? RuleAggregate{} : it->second;
    if (agg.recommended > 0) ++with_recs;
    j["feedback"] = aggregate_json(agg);
    list.push_back(std::move(j));
  }
  return {{"census", {{"total", list.size()}, {"by_state", by_state}}},
          {"rules_with_recommendations", with_recs},
          {"weights", {{"confidence", db->weights.confidence}, {"length", db->weights.length}, {"intercept", db->weights.intercept}}},
          {"threshold", db->threshold},
          {"rules", list}};
}

LedgerSummary Service::ledger_summary() const {
  std::lock_guard lock(ledger_mutex_);
  return ledger_.summary();
}

WebhookStats Service::webhook_stats() const {
  std::lock_guard lock(webhook_mutex_);
  return webhook_stats_;
}

void Service::enqueue_webhooks(const std::vector<Recommendation>& recs) {
  if (recs.empty() || cfg_.webhooks.empty()) return;
  {
    std::lock_guard lock(webhook_mutex_);
    for (const auto& r : recs) {
      const auto it = cfg_.webhooks.find(r.home_id);
      if (it == cfg_.webhooks.end()) continue;
      webhook_queue_.push_back({it->second, r.recommendation_id, recommendation_view(r).dump()});
    }
  }
  webhook_cv_.notify_all();
}

bool Service::deliver(const Delivery& d) {
  const auto url = split_url(d.url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(2);
  client.set_read_timeout(5);
  const httplib::Headers headers{{"Idempotency-Key", d.key}};
  const auto res = client.Post(url.path, headers, d.body, "application/json");
  return res && res->status >= 200 && res->status < 300;
}

void Service::webhook_loop() {
  std::unique_lock lock(webhook_mutex_);
  while (true) {
    webhook_cv_.wait(lock, [this] { return stopping_ || !webhook_queue_.empty(); });
    if (stopping_) return;
    const auto d = webhook_queue_.front();
    webhook_queue_.pop_front();
    webhook_busy_ = true;
    bool ok = false;
    for (int attempt = 0; attempt < cfg_.webhook_attempts && !ok && !stopping_; ++attempt) {
      if (attempt > 0) {
        webhook_cv_.wait_for(lock, cfg_.webhook_backoff * (1 << std::min(attempt - 1, 10)), [this] { return stopping_; });
        if (stopping_) break;
      }
      ++webhook_stats_.attempts;
      lock.unlock();
      try {
        ok = deliver(d);
      } catch (const std::exception&) {
        ok = false;
      }
      lock.lock();
    }
    ++(ok ? webhook_stats_.delivered : webhook_stats_.failed);
    webhook_busy_ = false;
    webhook_idle_cv_.notify_all();
  }
}

void Service::drain_webhooks() {
  std::unique_lock lock(webhook_mutex_);
  webhook_idle_cv_.wait(lock, [this] { return stopping_ || (webhook_queue_.empty() && !webhook_busy_); });
}

void Service::install_routes() {
  auto& s = *server_;
  auto send_json = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [send_json](auto fn) {
    return [fn, send_json](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_json(res, http_status_for(e.code()), error_body(e.code(), e.what()));
      } catch (const nlohmann::json::exception& e) {
        send_json(res, 400, error_body("invalid_argument", e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    };
  };

  s.set_pre_routing_handler([this, send_json](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", cfg_.cors_origin);
    res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
    if (!cfg_.token.empty() && req.get_header_value("Authorization") != "Bearer " + cfg_.token) {
      res.set_header("WWW-Authenticate", "Bearer");
      send_json(res, 401, error_body("unauthorized", "missing or invalid bearer token"));
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  if (cfg_.request_log) {
    s.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
      cfg_.request_log(nlohmann::json{{"method", req.method},
                                      {"path", req.path},
                                      {"status", res.status},
                                      {"remote", req.remote_addr},
                                      {"bytes", res.body.size()}}
                           .dump());
    });
  }

  s.Get("/health", [send_json](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  s.Post(R"(/homes/([^/]+)/events)", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
           const auto home_id = req.matches[1].str();
           auto result = post_events(home_id, parse_event_body(req.body, home_id));
           send_json(res, 202, result.to_json());
         }));

  s.Get(R"(/homes/([^/]+)/recommendations)",
        guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
          std::optional<RecommendationStatus> status;
          if (req.has_param("status")) {
            status = parse_recommendation_status(req.get_param_value("status"));
            if (!status) throw Error("invalid_argument", "unknown status " + req.get_param_value("status"));
          }
          auto list = nlohmann::json::array();
          for (const auto& r : recommendations(req.matches[1].str(), status)) list.push_back(recommendation_view(r));
          send_json(res, 200, list);
        }));

  s.Post(R"(/recommendations/([^/]+)/feedback)",
         guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
           const auto body = nlohmann::json::parse(req.body, nullptr, false);
           std::string text;
           std::optional<Timestamp> at;
           if (body.is_discarded()) {
             text = req.body;
             text.erase(text.find_last_not_of(" \t\r\n") + 1);
           } else if (body.is_string()) {
             text = body.get<std::string>();
           } else if (body.is_object() && body.contains("verdict") && body["verdict"].is_string()) {
             text = body["verdict"].get<std::string>();
             if (body.contains("received_at")) {
               at = body["received_at"].is_string() ? parse_timestamp(body["received_at"].get<std::string>())
                                                    : std::nullopt;
               if (!at) throw Error("invalid_argument", "bad received_at");
             }
           }
           const auto verdict = parse_verdict(text);
           if (!verdict) throw Error("invalid_argument", "verdict must be useful or not_useful");
           send_json(res, 200, submit_feedback(req.matches[1].str(), *verdict, at));
         }));

  s.Get("/rules", guarded([this, send_json](const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, rules_report(req.has_param("home") ? req.get_param_value("home") : std::string{}));
        }));

  s.Get("/feedback/summary", guarded([this, send_json](const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, ledger_summary().to_json());
        }));
}

void Service::bind_server() {
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  if (cfg_.port == 0) {
    port_ = server_->bind_to_any_port(cfg_.host);
  } else {
    port_ = server_->bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
  }
  if (port_ <= 0) {
    server_.reset();
    throw Error("io", "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  }
}

int Service::start() {
  if (server_) return port_;
  bind_server();
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void Service::run() {
  if (!server_) bind_server();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
}

}  // namespace ecorec
