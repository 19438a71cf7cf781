#include "ecorec/feedback.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "ecorec/error.hpp"
#include "ecorec/matcher.hpp"

namespace ecorec {

namespace {

nlohmann::json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

nlohmann::json census_json(const RuleCensus& c) {
  nlohmann::json j{{"total", c.total}};
  for (const auto& [state, n] : c.by_state) j[std::string(to_string(state))] = n;
  return j;
}

}  // namespace

double LedgerSummary::response_rate() const {
  const auto asked = useful + not_useful + expired;
  return asked == 0 ? 0.0 : static_cast<double>(useful + not_useful) / static_cast<double>(asked);
}

nlohmann::json LedgerSummary::to_json() const {
  return {{"phase", phase},
          {"recommendations", recommendations},
          {"useful", useful},
          {"not_useful", not_useful},
          {"expired", expired},
          {"pending", pending},
          {"rules_at_streak", rules_at_streak},
          {"response_rate", response_rate()}};
}

FeedbackLedger::FeedbackLedger(FeedbackConfig cfg) : cfg_(cfg) {
  if (cfg_.exclusion_streak == 0) throw Error("invalid_argument", "exclusion streak must be >= 1");
}

FeedbackLedger FeedbackLedger::open(const std::filesystem::path& journal, FeedbackConfig cfg) {
  FeedbackLedger ledger(cfg);
  std::uintmax_t good = 0;
  bool torn = false;
  if (std::filesystem::exists(journal)) {
    std::ifstream in(journal, std::ios::binary);
    if (!in) throw Error("io", "cannot read " + journal.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
      const auto nl = content.find('\n', pos);
      if (nl == std::string::npos) {
        torn = true;  // partial write at the tail
        break;
      }
      ++line_no;
      const auto line = std::string_view(content).substr(pos, nl - pos);
      if (!line.empty()) {
        try {
          ledger.apply(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
          throw Error("parse", journal.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
      pos = nl + 1;
      good = pos;
    }
  }
  if (torn) std::filesystem::resize_file(journal, good);
  if (journal.has_parent_path()) std::filesystem::create_directories(journal.parent_path());
  ledger.journal_ = std::make_shared<std::ofstream>(journal, std::ios::binary | std::ios::app);
  if (!*ledger.journal_) throw Error("io", "cannot write " + journal.string());
  ledger.journal_path_ = journal;
  return ledger;
}

void FeedbackLedger::journal(const nlohmann::json& line) {
  if (!journal_) return;
  *journal_ << line.dump() << '\n';
  journal_->flush();
  if (!*journal_) throw Error("io", "journal write failed");
}

void FeedbackLedger::apply(const nlohmann::json& line) {
  const auto type = line.at("type").get<std::string>();
  if (type == "recommendation") {
    apply_recommendation(recommendation_from_json(line.at("rec")), line.at("phase").get<int>());
  } else if (type == "verdict") {
    apply_verdict(feedback_entry_from_json(line.at("entry")));
  } else if (type == "expired") {
    apply_expired(line.at("recommendation_id").get<std::string>(), phase_);
  } else if (type == "phase") {
    phase_ = line.at("phase").get<int>();
    aggregates_.clear();
  } else {
    throw Error("parse", "unknown journal record " + type);
  }
}

void FeedbackLedger::add_recommendation(const Recommendation& rec) {
  if (index_.count(rec.recommendation_id)) {
    throw Error("conflict", "recommendation " + rec.recommendation_id + " already recorded");
  }
  journal({{"type", "recommendation"}, {"phase", phase_}, {"rec", recommendation_to_json(rec)}});
  apply_recommendation(rec, phase_);
}

void FeedbackLedger::apply_recommendation(const Recommendation& rec, int phase) {
  index_[rec.recommendation_id] = recs_.size();
  recs_.push_back({rec, phase});
  if (phase == phase_) ++aggregates_[rec.rule_id].recommended;
}

RecordOutcome FeedbackLedger::record(const std::string& recommendation_id, Verdict verdict, Timestamp received_at) {
  const auto it = index_.find(recommendation_id);
  if (it == index_.end()) throw Error("not_found", "unknown recommendation " + recommendation_id);
  const auto& rec = recs_[it->second].rec;
  if (rec.status != RecommendationStatus::pending) {
    throw Error("conflict", "recommendation " + recommendation_id + " is already " + std::string(to_string(rec.status)));
  }
  const FeedbackEntry entry{recommendation_id, rec.rule_id, verdict, received_at};
  journal({{"type", "verdict"}, {"entry", feedback_entry_to_json(entry)}});
  return apply_verdict(entry);
}

RecordOutcome FeedbackLedger::apply_verdict(const FeedbackEntry& entry) {
  const auto it = index_.find(entry.recommendation_id);
  if (it == index_.end()) throw Error("parse", "verdict for unknown recommendation " + entry.recommendation_id);
  auto& rec = recs_[it->second].rec;
  rec.status = entry.verdict == Verdict::useful ? RecommendationStatus::useful : RecommendationStatus::not_useful;
  entries_.push_back(entry);
  entry_phase_.push_back(phase_);
  auto& agg = aggregates_[entry.rule_id];
  if (entry.verdict == Verdict::useful) {
    ++agg.useful;
    agg.streak = 0;
  } else {
    ++agg.not_useful;
    ++agg.streak;
  }
  return {entry.rule_id, agg.streak, entry.verdict == Verdict::not_useful && agg.streak == cfg_.exclusion_streak};
}

std::vector<std::string> FeedbackLedger::expire(Timestamp now, const std::string& home_id) {
  std::vector<std::string> ids;
  for (const auto& s : recs_) {
    if (s.rec.status != RecommendationStatus::pending) continue;
    if (!home_id.empty() && s.rec.home_id != home_id) continue;
    if (now - s.rec.created_at > cfg_.expiry) ids.push_back(s.rec.recommendation_id);
  }
  for (const auto& id : ids) {
    journal({{"type", "expired"}, {"recommendation_id", id}, {"at", format_timestamp(now)}});
    apply_expired(id, phase_);
  }
  return ids;
}

void FeedbackLedger::apply_expired(const std::string& id, int phase) {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error("parse", "expiry for unknown recommendation " + id);
  auto& rec = recs_[it->second].rec;
  rec.status = RecommendationStatus::expired;
  expired_.emplace_back(id, phase);
  if (phase == phase_) ++aggregates_[rec.rule_id].expired;
}

void FeedbackLedger::new_phase(Timestamp at) {
  journal({{"type", "phase"}, {"phase", phase_ + 1}, {"at", format_timestamp(at)}});
  ++phase_;
  aggregates_.clear();
}

const Recommendation* FeedbackLedger::find(const std::string& recommendation_id) const {
  const auto it = index_.find(recommendation_id);
  return it == index_.end() ? nullptr : &recs_[it->second].rec;
}

std::vector<const Recommendation*> FeedbackLedger::recommendations(const std::string& home_id,
                                                                   std::optional<RecommendationStatus> status) const {
  std::vector<const Recommendation*> out;
  for (const auto& s : recs_) {
    if (!home_id.empty() && s.rec.home_id != home_id) continue;
    if (status && s.rec.status != *status) continue;
    out.push_back(&s.rec);
  }
  return out;
}

RuleAggregate FeedbackLedger::aggregate(const std::string& rule_id) const {
  const auto it = aggregates_.find(rule_id);
  return it == aggregates_.end() ? RuleAggregate{} : it->second;
}

std::map<std::string, RuleAggregate> FeedbackLedger::recompute_aggregates() const {
  std::map<std::string, RuleAggregate> out;
  for (const auto& s : recs_) {
    if (s.phase == phase_) ++out[s.rec.rule_id].recommended;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entry_phase_[i] != phase_) continue;
    auto& agg = out[entries_[i].rule_id];
    if (entries_[i].verdict == Verdict::useful) {
      ++agg.useful;
      agg.streak = 0;
    } else {
      ++agg.not_useful;
      ++agg.streak;
    }
  }
  for (const auto& [id, phase] : expired_) {
    if (phase == phase_) ++out[find(id)->rule_id].expired;
  }
  return out;
}

std::optional<double> FeedbackLedger::weighted_feedback(const std::string& rule_id) const {
  const auto agg = aggregate(rule_id);
  if (agg.answered() == 0) return std::nullopt;
  return (static_cast<double>(agg.useful) - static_cast<double>(agg.not_useful)) / static_cast<double>(agg.answered());
}

std::vector<std::string> FeedbackLedger::rules_at_streak() const {
  std::vector<std::string> out;
  for (const auto& [id, agg] : aggregates_) {
    if (agg.streak >= cfg_.exclusion_streak) out.push_back(id);
  }
  return out;
}

LedgerSummary FeedbackLedger::summary() const {
  LedgerSummary s;
  s.phase = phase_;
  for (const auto& [id, agg] : aggregates_) {
    s.recommendations += agg.recommended;
    s.useful += agg.useful;
    s.not_useful += agg.not_useful;
    s.expired += agg.expired;
  }
  for (const auto& r : recs_) s.pending += r.rec.status == RecommendationStatus::pending;
  s.rules_at_streak = rules_at_streak().size();
  return s;
}

std::vector<std::string> apply_feedback_exclusions(RuleDB& db, const FeedbackLedger& ledger) {
  std::vector<std::string> changed;
  for (const auto& id : ledger.rules_at_streak()) {
    auto* r = db.find(id);
    if (!r || r->state == RuleState::excluded_by_feedback) continue;
    r->state = RuleState::excluded_by_feedback;
    changed.push_back(id);
  }
  return changed;
}

RegressionWeights RegressionFit::weights() const {
  if (!valid) return {};
  return {beta_confidence, beta_length, intercept};
}

nlohmann::json RegressionFit::to_json() const {
  auto pts = nlohmann::json::array();
  for (const auto& p : points) {
    pts.push_back({{"rule_id", p.rule_id},
                   {"confidence", p.confidence},
                   {"length", p.length},
                   {"support", p.support},
                   {"action_position", p.action_position},
                   {"weighted_feedback", p.weighted_feedback},
                   {"answered", p.answered}});
  }
  return {{"valid", valid},
          {"note", note},
          {"n", n},
          {"intercept", {{"estimate", intercept}, {"se", number_or_null(se_intercept)}}},
          {"confidence", {{"estimate", beta_confidence}, {"se", number_or_null(se_confidence)}}},
          {"length", {{"estimate", beta_length}, {"se", number_or_null(se_length)}}},
          {"r_squared", number_or_null(r_squared)},
          {"points", std::move(pts)}};
}

RegressionFit fit_points(std::span<const RegressionPoint> points) {
  if (points.size() < 3) {
    throw Error("insufficient_data",
                "regression needs at least 3 rules with feedback, got " + std::to_string(points.size()));
  }
  RegressionFit fit;
  fit.n = points.size();
  fit.points.assign(points.begin(), points.end());
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = p.confidence;
    x(i, 2) = p.length;
    y(i) = p.weighted_feedback;
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < 3) {
    fit.note = "rank-deficient design: confidence and length do not vary independently";
    return fit;
  }
  const Eigen::VectorXd beta = qr.solve(y);
  fit.valid = true;
  fit.intercept = beta(0);
  fit.beta_confidence = beta(1);
  fit.beta_length = beta(2);

  const Eigen::VectorXd resid = y - x * beta;
  const double rss = resid.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  fit.r_squared = tss > 0 ? 1.0 - rss / tss : 1.0;
  const auto dof = n - 3;
  if (dof > 0) {
    const Eigen::MatrixXd cov = (rss / static_cast<double>(dof)) * (x.transpose() * x).inverse();
    fit.se_intercept = std::sqrt(cov(0, 0));
    fit.se_confidence = std::sqrt(cov(1, 1));
    fit.se_length = std::sqrt(cov(2, 2));
  } else {
    fit.se_intercept = fit.se_confidence = fit.se_length = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

std::vector<RegressionPoint> regression_points(const FeedbackLedger& ledger, const RuleDB& db) {
  std::vector<RegressionPoint> out;
  for (const auto& [id, agg] : ledger.aggregates()) {
    const auto* rule = db.find(id);
    const auto wf = ledger.weighted_feedback(id);
    if (!rule || !wf) continue;
    out.push_back({id, rule->confidence, static_cast<double>(rule->pattern_length), rule->pattern_support,
                   static_cast<double>(rule->action_position), *wf, agg.answered()});
  }
  return out;
}

RegressionFit fit_regression(const FeedbackLedger& ledger, const RuleDB& db) {
  const auto points = regression_points(ledger, db);
  return fit_points(points);
}

std::string AdaptReport::table() const {
  std::ostringstream os;
  auto row = [&](const std::string& label, std::size_t a, std::size_t b) {
    os << std::left << std::setw(24) << label << std::right << std::setw(8) << a << std::setw(8) << b << '\n';
  };
  os << std::left << std::setw(24) << "" << std::right << std::setw(8) << "before" << std::setw(8) << "after" << '\n';
  row("rules", before.total, after.total);
  for (const auto s : {RuleState::active, RuleState::below_threshold, RuleState::excluded_by_feedback,
                       RuleState::excluded_by_policy}) {
    row(std::string(to_string(s)), before.by_state.at(s), after.by_state.at(s));
  }
  os << "removed by feedback: " << removed_by_feedback << '\n';
  os << "weights: confidence=" << weights.confidence << " length=" << weights.length
     << " intercept=" << weights.intercept << '\n';
  os << "threshold: " << threshold << '\n';
  return os.str();
}

nlohmann::json AdaptReport::to_json() const {
  return {{"before", census_json(before)},
          {"after", census_json(after)},
          {"removed_by_feedback", removed_by_feedback},
          {"weights", {{"confidence", weights.confidence}, {"length", weights.length}, {"intercept", weights.intercept}}},
          {"threshold", number_or_null(threshold)}};
}

AdaptResult adapt_phase2(const RuleDB& db, const RegressionFit& fit, double threshold, FeedbackLedger* ledger,
                         Timestamp at) {
  AdaptResult result{db, {}};
  auto& out = result.db;
  if (ledger) apply_feedback_exclusions(out, *ledger);
  result.report.before = out.census();
  std::vector<std::string> drop;
  for (const auto& [id, r] : out.rules()) {
    if (r.state == RuleState::excluded_by_feedback) drop.push_back(id);
  }
  for (const auto& id : drop) out.erase(id);
  result.report.removed_by_feedback = drop.size();
  out.policy.exclude_absent_actions = true;
  out.weights = fit.weights();
  out.threshold = threshold;
  out.recompute();
  result.report.after = out.census();
  result.report.weights = out.weights;
  result.report.threshold = threshold;
  if (ledger) ledger->new_phase(at);
  return result;
}

nlohmann::json feedback_entry_to_json(const FeedbackEntry& e) {
  return {{"recommendation_id", e.recommendation_id},
          {"rule_id", e.rule_id},
          {"verdict", std::string(to_string(e.verdict))},
          {"received_at", format_timestamp(e.received_at)}};
}

FeedbackEntry feedback_entry_from_json(const nlohmann::json& j) {
  FeedbackEntry e;
  e.recommendation_id = j.at("recommendation_id").get<std::string>();
  e.rule_id = j.at("rule_id").get<std::string>();
  const auto v = parse_verdict(j.at("verdict").get<std::string>());
  if (!v) throw Error("parse", "bad verdict");
  e.verdict = *v;
  const auto ts = parse_timestamp(j.at("received_at").get<std::string>());
  if (!ts) throw Error("parse", "bad received_at");
  e.received_at = *ts;
  return e;
}

}  // namespace ecorec
