#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ecorec/event_store.hpp"
#include "ecorec/feedback.hpp"
#include "ecorec/matcher.hpp"
#include "ecorec/rules.hpp"

namespace httplib {
class Server;
}

namespace ecorec {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path store_dir;
  std::filesystem::path rules_path;                    // missing file means an empty rule set
  std::optional<std::filesystem::path> journal_path;  // defaults to <store_dir>/feedback.jsonl
  std::string token;                                   // bearer token; empty disables auth
  MatcherConfig matcher;
  FeedbackConfig feedback;
  Seconds reorder_tolerance{60};
  std::optional<double> threshold;     // overrides the rule file
  std::optional<bool> exclude_absent;  // overrides the rule file
  std::map<std::string, std::string> webhooks;  // home_id -> http URL
  int webhook_attempts = 5;
  std::chrono::milliseconds webhook_backoff{200};
  std::string cors_origin = "*";
  std::function<void(const std::string&)> request_log;  // one JSON line per request

  void validate() const;
};

struct EventsResult {
  std::uint64_t received = 0;
  std::uint64_t stored = 0;
  std::uint64_t duplicates = 0;
  std::uint64_t matched = 0;
  std::uint64_t late = 0;  // stored but too late to match
  std::vector<Recommendation> recommendations;

  nlohmann::json to_json() const;
};

struct WebhookStats {
  std::uint64_t delivered = 0;
  std::uint64_t attempts = 0;
  std::uint64_t failed = 0;  // gave up after every attempt
};

/// The HTTP service. Each operation is also callable directly; the HTTP
/// handlers translate ecorec::Error codes into status codes.
///
/// Events of one home are applied under that home's lock: stored first, then
/// matched, and new recommendations are journaled before the call returns.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Throws Error("invalid_argument") for bad records or a foreign home_id and
  // Error("out_of_order") when an event is older than the reorder tolerance.
  // Either error leaves every state untouched.
  EventsResult post_events(const std::string& home_id, std::vector<EventRecord> events);

  // Throws Error("not_found") for an unknown home.
  std::vector<Recommendation> recommendations(const std::string& home_id,
                                              std::optional<RecommendationStatus> status = {});

  // Throws Error("not_found") or Error("conflict").
  nlohmann::json submit_feedback(const std::string& recommendation_id, Verdict verdict,
                                 std::optional<Timestamp> received_at = {});

  nlohmann::json rules_report(const std::string& home_id = {}) const;

  std::shared_ptr<const RuleDB> rules() const;
  LedgerSummary ledger_summary() const;
  WebhookStats webhook_stats() const;

  // Blocks until every queued webhook is delivered or given up.
  void drain_webhooks();

  // HTTP. start() binds and serves on a background thread; returns the port.
  int start();
  void stop();
  // Binds and serves on the calling thread until stop().
  void run();
  int port() const { return port_; }

 private:
  struct HomeState {
    std::mutex mutex;
    std::unique_ptr<Matcher> matcher;
    std::uint64_t rules_version = 0;
    std::vector<EventRecord> last_second;  // events already matched at the watermark second
  };
  struct Delivery {
    std::string url;
    std::string key;
    std::string body;
  };

  HomeState& home(const std::string& home_id);
  bool known_home(const std::string& home_id) const;
  void ensure_matcher(const std::string& home_id, HomeState& state);
  void restore_home(const std::string& home_id, HomeState& state);
  void enqueue_webhooks(const std::vector<Recommendation>& recs);
  void webhook_loop();
  bool deliver(const Delivery& d);
  void install_routes();
  void bind_server();

  ServiceConfig cfg_;
  std::unique_ptr<EventStore> store_;

  mutable std::mutex rules_mutex_;
  std::shared_ptr<const RuleDB> rules_;
  std::uint64_t rules_version_ = 1;

  mutable std::mutex ledger_mutex_;
  FeedbackLedger ledger_;

  mutable std::mutex homes_mutex_;
  std::map<std::string, std::unique_ptr<HomeState>> homes_;

  mutable std::mutex webhook_mutex_;
  std::condition_variable webhook_cv_;
  std::condition_variable webhook_idle_cv_;
  std::deque<Delivery> webhook_queue_;
  bool webhook_busy_ = false;
  bool stopping_ = false;
  WebhookStats webhook_stats_;
  std::thread webhook_thread_;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int port_ = 0;
};

// Error code -> HTTP status used by the handlers.
int http_status_for(const std::string& error_code);

}  // namespace ecorec
