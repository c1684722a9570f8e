#pragma once
// Interactive search sessions behind a JSON request interface.
//
// Service::handle() maps (method, path, body) to (status, JSON body); the
// HTTP adapter in http_server.hpp only forwards requests to it. Responses are
// computed from session state alone, so a GET right after a mutation returns
// the same body as the mutation did.
//
// Persistence (when ServiceConfig::data_dir is set), per session:
//   <id>.log.jsonl     one record per operation: {seq, op, payload, timestamp}
//   <id>.snapshot.json session snapshot plus the seq of the last applied op
// A session is restored from its snapshot followed by the later log records.

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "driftfb/corpus.hpp"
#include "driftfb/errors.hpp"
#include "driftfb/inference.hpp"
#include "driftfb/model.hpp"
#include "driftfb/ranking.hpp"
#include "driftfb/session.hpp"
#include "driftfb/simharness.hpp"

namespace driftfb {

struct ServiceConfig {
  Hyperparameters hyper = Hyperparameters::interactive();
  std::size_t recency_window = 1;
  std::size_t slice_size = 400;      // documents the keyword features are built from
  std::size_t keyword_pool = 1000;   // keyword candidates kept per slice
  std::size_t radar_size = 10;
  std::size_t result_size = 10;
  std::size_t snippet_chars = 240;
  std::uint64_t seed = 1;
  std::filesystem::path data_dir;    // empty: nothing is persisted
  double ttl_seconds = 3600.0;
  std::size_t snapshot_every = 25;   // operations between snapshots
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Seconds since an arbitrary epoch.
using Clock = std::function<double()>;

inline double system_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

class Service {
 public:
  explicit Service(std::shared_ptr<const Corpus> corpus, ServiceConfig cfg = {},
                   Clock clock = system_seconds)
      : corpus_(std::move(corpus)), cfg_(std::move(cfg)), clock_(std::move(clock)) {
    if (!corpus_ || corpus_->size() == 0) throw EmptyCorpusError("service needs a corpus");
    cfg_.hyper.validate();
    if (!cfg_.data_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(cfg_.data_dir, ec);
      if (ec) throw IoError("cannot create " + cfg_.data_dir.string());
      next_id_ = first_free_id();
    }
  }

  Response handle(const std::string& method, const std::string& path, const std::string& body) {
    try {
      return route(method, path, body);
    } catch (const NoResultsError& e) {
      return error(404, "no_results", e.what());
    } catch (const NotFound& e) {
      return error(404, "not_found", e.what());
    } catch (const ValidationError& e) {
      return error(422, "invalid", e.what());
    } catch (const nlohmann::json::exception& e) {
      return error(400, "bad_request", e.what());
    } catch (const Error& e) {
      return error(500, "internal", e.what());
    }
  }

  /// Persists and drops sessions idle for longer than the TTL. Without a
  /// data directory nothing is evicted. Returns the number evicted.
  std::size_t evict_idle() {
    if (cfg_.data_dir.empty()) return 0;
    const double now = clock_();
    std::vector<std::pair<std::string, std::shared_ptr<Live>>> idle;
    {
      std::lock_guard lock(map_mutex_);
      for (const auto& [id, live] : sessions_) idle.emplace_back(id, live);
    }
    std::size_t evicted = 0;
    for (auto& [id, live] : idle) {
      std::lock_guard session_lock(live->mutex);
      if (now - live->last_activity < cfg_.ttl_seconds) continue;
      write_snapshot(*live);
      std::lock_guard lock(map_mutex_);
      sessions_.erase(id);
      ++evicted;
    }
    return evicted;
  }

  [[nodiscard]] std::size_t live_sessions() const {
    std::lock_guard lock(map_mutex_);
    return sessions_.size();
  }

  [[nodiscard]] const ServiceConfig& config() const { return cfg_; }
  [[nodiscard]] const Corpus& corpus() const { return *corpus_; }

  /// Rebuilds a session by applying the records of its operation log from
  /// scratch and returns the response each record produced.
  std::vector<nlohmann::json> replay_log(const std::filesystem::path& log_file) const {
    std::vector<nlohmann::json> out;
    std::optional<SessionState> state;
    for (const auto& rec : read_log(log_file)) {
      state = apply_record(std::move(state), rec);
      out.push_back(view(*state));
    }
    return out;
  }

  /// Current response body for a session, as GET /sessions/{id} returns it.
  nlohmann::json snapshot_view(const std::string& session_id) {
    auto live = find_live(session_id);
    std::lock_guard lock(live->mutex);
    return view(live->state);
  }

 private:
  struct Live {
    std::mutex mutex;
    SessionState state;
    double created_at = 0.0;
    std::atomic<double> last_activity{0.0};
    std::uint64_t op_seq = 0;
    std::uint64_t snapshot_seq = 0;
  };

  static Response error(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", code}, {"message", message}}};
  }

  Response route(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex session_re(R"(^/sessions/([^/]+)$)");
    static const std::regex feedback_re(R"(^/sessions/([^/]+)/feedback$)");
    static const std::regex lock_re(R"(^/sessions/([^/]+)/lock$)");
    static const std::regex entry_re(R"(^/sessions/([^/]+)/feedback/([^/]+)$)");
    static const std::regex archive_re(R"(^/sessions/([^/]+)/archive$)");
    static const std::regex archived_re(R"(^/sessions/([^/]+)/archived/([^/]+)$)");
    static const std::regex document_re(R"(^/documents/(.+)$)");
    std::smatch m;

    if (path == "/sessions") {
      if (method != "POST") return error(405, "method_not_allowed", method + " " + path);
      return create(parse_body(body));
    }
    if (std::regex_match(path, m, session_re)) {
      if (method != "GET") return error(405, "method_not_allowed", method + " " + path);
      return {200, snapshot_view(m[1])};
    }
    if (std::regex_match(path, m, feedback_re)) {
      if (method != "POST") return error(405, "method_not_allowed", method + " " + path);
      const auto j = parse_body(body);
      if (!j.contains("term") || !j["term"].is_string()) return error(400, "bad_request", "term is required");
      if (!j.contains("value") || !j["value"].is_number()) return error(400, "bad_request", "value is required");
      nlohmann::json payload = {{"term", j["term"]}, {"value", j["value"]}};
      if (j.contains("source")) payload["source"] = j["source"];
      return mutate(m[1], "feedback", payload);
    }
    if (std::regex_match(path, m, lock_re)) {
      if (method != "POST") return error(405, "method_not_allowed", method + " " + path);
      const auto j = parse_body(body);
      if (!j.contains("entry_id") || !j["entry_id"].is_string()) {
        return error(400, "bad_request", "entry_id is required");
      }
      return mutate(m[1], "lock", {{"entry_id", j["entry_id"]}});
    }
    if (std::regex_match(path, m, entry_re)) {
      if (method != "DELETE") return error(405, "method_not_allowed", method + " " + path);
      return mutate(m[1], "delete", {{"entry_id", m[2].str()}});
    }
    if (std::regex_match(path, m, archive_re)) {
      if (method != "GET") return error(405, "method_not_allowed", method + " " + path);
      auto live = find_live(m[1]);
      std::lock_guard lock(live->mutex);
      const auto a = archive_session(live->state);
      return {200, {{"session_id", live->state.session_id},
                    {"archive", a ? archive_json(*a) : nlohmann::json(nullptr)}}};
    }
    if (std::regex_match(path, m, archived_re)) {
      if (method != "DELETE") return error(405, "method_not_allowed", method + " " + path);
      return mutate(m[1], "remove_archive", {{"archive_id", m[2].str()}});
    }
    if (std::regex_match(path, m, document_re)) {
      if (method != "GET") return error(405, "method_not_allowed", method + " " + path);
      auto idx = corpus_->find(m[1]);
      if (!idx) throw NotFound("unknown document " + m[1].str());
      const auto& d = corpus_->documents()[*idx];
      return {200, {{"doc_id", d.doc_id}, {"label", d.label ? nlohmann::json(*d.label) : nlohmann::json(nullptr)}, {"text", d.text}}};
    }
    return error(404, "not_found", "no route for " + method + " " + path);
  }

  static nlohmann::json parse_body(const std::string& body) {
    auto j = nlohmann::json::parse(body.empty() ? "{}" : body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  }

  // -- session lifecycle ----------------------------------------------------

  Response create(const nlohmann::json& j) {
    if (!j.contains("query") || !j["query"].is_string() || tokenize(j["query"].get<std::string>()).empty()) {
      return error(400, "bad_request", "a non-empty query is required");
    }
    nlohmann::json archives = nlohmann::json::array();
    if (j.contains("import_archive")) {
      if (!j["import_archive"].is_array()) return error(400, "bad_request", "import_archive must be a list");
      for (const auto& id : j["import_archive"]) {
        if (!id.is_string()) return error(400, "bad_request", "import_archive holds session ids");
        auto src = find_live(id.get<std::string>());
        std::lock_guard lock(src->mutex);
        if (auto a = archive_session(src->state)) archives.push_back(archive_json(*a));
      }
    }
    std::string id;
    std::uint64_t seed;
    {
      std::lock_guard lock(map_mutex_);
      const std::uint64_t n = next_id_++;
      id = "s" + std::to_string(n);
      seed = sim::derive_seed(cfg_.seed, n);
    }
    const nlohmann::json rec = {{"seq", 1},
                                {"op", "create"},
                                {"payload", {{"session_id", id}, {"seed", seed}, {"query", j["query"]}, {"archives", archives}}},
                                {"timestamp", clock_()}};
    // fails with NoResults before anything is stored
    SessionState state = *apply_record(std::nullopt, rec);

    auto live = std::make_shared<Live>();
    live->state = std::move(state);
    live->created_at = clock_();
    live->last_activity = live->created_at;
    live->op_seq = 1;
    std::lock_guard session_lock(live->mutex);
    append_log(id, rec);
    {
      std::lock_guard lock(map_mutex_);
      sessions_[id] = live;
    }
    return {201, view(live->state)};
  }

  Response mutate(const std::string& session_id, const std::string& op, nlohmann::json payload) {
    auto live = find_live(session_id);
    std::lock_guard lock(live->mutex);
    const nlohmann::json rec = {
        {"seq", live->op_seq + 1}, {"op", op}, {"payload", std::move(payload)}, {"timestamp", clock_()}};
    live->state = *apply_record(live->state, rec);  // throws before anything changes
    live->op_seq += 1;
    live->last_activity = clock_();
    append_log(session_id, rec);
    if (!cfg_.data_dir.empty() && live->op_seq - live->snapshot_seq >= cfg_.snapshot_every) {
      write_snapshot(*live);
    }
    return {200, view(live->state)};
  }

  std::shared_ptr<Live> find_live(const std::string& session_id) {
    {
      std::lock_guard lock(map_mutex_);
      auto it = sessions_.find(session_id);
      if (it != sessions_.end()) {
        it->second->last_activity = clock_();
        return it->second;
      }
    }
    auto restored = restore(session_id);
    if (!restored) throw NotFound("unknown session " + session_id);
    std::lock_guard lock(map_mutex_);
    auto [it, inserted] = sessions_.emplace(session_id, restored);
    it->second->last_activity = clock_();
    return it->second;
  }

  // -- operations -------------------------------------------------------------

  std::optional<SessionState> apply_record(std::optional<SessionState> state, const nlohmann::json& rec) const {
    const std::string op = rec.at("op").get<std::string>();
    const auto& p = rec.at("payload");
    if (op == "create") {
      return create_state(p.at("session_id").get<std::string>(), p.at("seed").get<std::uint64_t>(),
                          p.at("query").get<std::string>(), p.at("archives"));
    }
    if (!state) throw ValidationError("operation log does not start with create");
    SessionState s = std::move(*state);
    if (op == "feedback") {
      const std::string term = p.at("term").get<std::string>();
      const double value = p.at("value").get<double>();
      FeedbackSource source = FeedbackSource::UserRadar;
      if (p.contains("source")) {
        source = feedback_source_from_string(p["source"].get<std::string>());
      } else if (!s.live_entry_for(term) && s.space->find(term) == nullptr && is_archived_term(s, term)) {
        source = FeedbackSource::ArchivedSession;
      }
      s = apply_feedback(std::move(s), term, value, source);
    } else if (op == "lock") {
      s = lock_feedback(std::move(s), p.at("entry_id").get<std::string>());
    } else if (op == "delete") {
      s = delete_feedback(std::move(s), p.at("entry_id").get<std::string>());
    } else if (op == "remove_archive") {
      s = remove_archive(std::move(s), p.at("archive_id").get<std::string>());
    } else {
      throw ValidationError("unknown operation " + op);
    }
    return refresh(std::move(s));
  }

  SessionState create_state(const std::string& id, std::uint64_t seed, const std::string& query,
                            const nlohmann::json& archives) const {
    const Tokens q = tokenize(query);
    if (q.empty()) throw ValidationError("empty query");
    const auto pseudo = pseudo_feedback_from_query(q, *corpus_, cfg_.slice_size);
    const RankedList slice = retrieve(q, *corpus_, cfg_.slice_size);

    SessionConfig sc;
    sc.hyper = cfg_.hyper;
    sc.seed = seed;
    sc.recency_window = cfg_.recency_window;
    SessionState s;
    s.session_id = id;
    s.config = sc;
    for (const auto& a : archives) s = attach_archive(std::move(s), archive_from_json(a));

    std::vector<std::string> required;
    for (const auto& f : pseudo) required.push_back(f.term);
    s = with_keyword_space(std::move(s), build_space(slice.docs, required_terms(s, required)), slice);
    for (const auto& f : pseudo) s = apply_feedback(std::move(s), f.term, f.value, FeedbackSource::PseudoFeedback);
    return refresh(std::move(s));
  }

  /// Ranks documents with the current model, takes the new top slice and
  /// refits on keyword features built from it.
  SessionState refresh(SessionState s) const {
    const auto kws = keyword_candidates(s);
    if (kws.empty()) return s;
    RankedList slice = rank_documents(kws, *corpus_, cfg_.slice_size);
    auto space = build_space(slice.docs, required_terms(s, {}));
    return with_keyword_space(std::move(s), std::move(space), std::move(slice));
  }

  static std::vector<std::string> required_terms(const SessionState& s, std::vector<std::string> extra) {
    for (const auto& e : s.timeline) {
      if (e.mode != WeightMode::Deleted) extra.push_back(e.term);
    }
    for (const auto& a : s.archived) {
      for (const auto& k : a.keywords) extra.push_back(k.term);
    }
    return extra;
  }

  std::shared_ptr<const KeywordSpace> build_space(const std::vector<std::size_t>& slice,
                                                  const std::vector<std::string>& required) const {
    const auto kws = build_keyword_features(slice, *corpus_, cfg_.keyword_pool, required);
    return std::make_shared<const KeywordSpace>(
        KeywordSpace::from_candidates(kws, static_cast<Eigen::Index>(slice.size())));
  }

  /// Keyword space of a restored snapshot: the stored terms over the stored slice.
  std::shared_ptr<const KeywordSpace> rebuild_space(const std::vector<std::size_t>& slice,
                                                    const std::set<std::string>& terms) const {
    auto all = build_keyword_features(slice, *corpus_, std::numeric_limits<std::size_t>::max());
    std::erase_if(all, [&](const KeywordCandidate& k) { return !terms.count(k.term); });
    return std::make_shared<const KeywordSpace>(
        KeywordSpace::from_candidates(all, static_cast<Eigen::Index>(slice.size())));
  }

  std::vector<KeywordCandidate> keyword_candidates(const SessionState& s) const {
    std::vector<KeywordCandidate> out;
    for (const auto& [term, f] : s.space->features) {
      KeywordCandidate k;
      k.term = term;
      k.vocab_index = *corpus_->vocabulary().find(term);
      k.features = f;
      k.estimated_relevance = predict_relevance(s.posterior, f);
      std::optional<double> fb;
      if (const auto* e = s.live_entry_for(term)) fb = e->value;
      k.displayed_relevance = displayed_keyword_relevance(k.estimated_relevance, fb);
      out.push_back(std::move(k));
    }
    return out;
  }

  // -- views ------------------------------------------------------------------

  static nlohmann::json archive_json(const ArchivedList& a) {
    nlohmann::json kws = nlohmann::json::array();
    for (const auto& k : a.keywords) kws.push_back({{"term", k.term}, {"value", k.value}});
    return {{"archive_id", a.archive_id}, {"keywords", kws}};
  }

  static ArchivedList archive_from_json(const nlohmann::json& j) {
    ArchivedList a;
    a.archive_id = j.at("archive_id").get<std::string>();
    for (const auto& k : j.at("keywords")) a.keywords.push_back({k.at("term"), k.at("value")});
    return a;
  }

  nlohmann::json view(const SessionState& s) const {
    using nlohmann::json;
    const auto kws = keyword_candidates(s);
    json keywords = json::array();
    for (std::size_t i : most_relevant_keywords(kws, cfg_.radar_size)) {
      keywords.push_back({{"term", kws[i].term},
                          {"estimated_relevance", kws[i].estimated_relevance},
                          {"displayed_relevance", kws[i].displayed_relevance}});
    }
    json documents = json::array();
    const RankedList docs = kws.empty() ? top_k(Vector::Zero(static_cast<Eigen::Index>(corpus_->size())),
                                                cfg_.result_size)
                                        : rank_documents(kws, *corpus_, cfg_.result_size);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const auto& d = corpus_->documents()[docs.docs[i]];
      documents.push_back({{"doc_id", d.doc_id}, {"score", docs.scores[i]}, {"snippet", snippet(d.text)}});
    }
    json timeline = json::array();
    json highlights = json::array();
    for (const auto& e : timeline_display_order(s)) {
      json entry = {{"entry_id", e.entry_id},
                    {"term", e.term},
                    {"value", e.value},
                    {"mode", to_string(e.mode)},
                    {"locked", e.mode == WeightMode::Locked},
                    {"highlight", to_string(e.highlight)},
                    {"source", to_string(e.source)},
                    {"created_at", e.created_at},
                    {"updated_at", e.updated_at}};
      if (const FeatureVector* f = s.space->find(e.term)) {
        const double est = predict_relevance(s.posterior, *f);
        entry["estimated_relevance"] = est;
        entry["displayed_relevance"] = displayed_keyword_relevance(est, e.value);
      } else {
        entry["estimated_relevance"] = nullptr;
        entry["displayed_relevance"] = nullptr;
      }
      if (const WeightFactor* w = s.posterior.find_weight(e.obs_id)) {
        entry["expected_weight"] = w->mean();
      } else {
        entry["expected_weight"] = 1.0;
      }
      timeline.push_back(std::move(entry));
      highlights.push_back({{"entry_id", e.entry_id}, {"level", to_string(e.highlight)}});
    }
    json archived = json::array();
    for (const auto& a : s.archived) archived.push_back(archive_json(a));
    return {{"session_id", s.session_id}, {"keywords", keywords}, {"documents", documents},
            {"timeline", timeline}, {"highlights", highlights}, {"archived", archived}};
  }

  std::string snippet(const std::string& text) const {
    std::string out = text.substr(0, cfg_.snippet_chars);
    for (char& c : out) {
      if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    return out;
  }

  // -- persistence ------------------------------------------------------------

  [[nodiscard]] std::filesystem::path log_path(const std::string& id) const {
    return cfg_.data_dir / (id + ".log.jsonl");
  }
  [[nodiscard]] std::filesystem::path snapshot_path(const std::string& id) const {
    return cfg_.data_dir / (id + ".snapshot.json");
  }

  std::uint64_t first_free_id() const {
    std::uint64_t next = 1;
    static const std::regex name_re(R"(^s(\d+)\.log\.jsonl$)");
    for (const auto& entry : std::filesystem::directory_iterator(cfg_.data_dir)) {
      std::smatch m;
      const std::string name = entry.path().filename().string();
      if (std::regex_match(name, m, name_re)) next = std::max<std::uint64_t>(next, std::stoull(m[1]) + 1);
    }
    return next;
  }

  void append_log(const std::string& id, const nlohmann::json& rec) const {
    if (cfg_.data_dir.empty()) return;
    std::ofstream out(log_path(id), std::ios::app);
    if (!out) throw IoError("cannot append to " + log_path(id).string());
    out << rec.dump() << '\n';
  }

  static std::vector<nlohmann::json> read_log(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw NotFound("no operation log " + file.string());
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
  }

  void write_snapshot(Live& live) const {
    nlohmann::json j = session_to_json(live.state);
    std::vector<std::string> terms;
    for (const auto& [t, f] : live.state.space->features) terms.push_back(t);
    j["space_terms"] = terms;
    j["op_seq"] = live.op_seq;
    j["created_at"] = live.created_at;
    const auto target = snapshot_path(live.state.session_id);
    const auto tmp = std::filesystem::path(target.string() + ".tmp");
    {
      std::ofstream out(tmp);
      if (!out) throw IoError("cannot write " + tmp.string());
      out << j.dump();
    }
    std::filesystem::rename(tmp, target);
    live.snapshot_seq = live.op_seq;
  }

  std::shared_ptr<Live> restore(const std::string& id) const {
    if (cfg_.data_dir.empty() || id.find('/') != std::string::npos || id.find("..") != std::string::npos) {
      return nullptr;
    }
    if (!std::filesystem::exists(log_path(id))) return nullptr;
    auto live = std::make_shared<Live>();
    std::optional<SessionState> state;
    std::uint64_t seq = 0;
    if (std::ifstream in(snapshot_path(id)); in) {
      const auto j = nlohmann::json::parse(in);
      SessionState s = session_from_json(j);
      const auto terms = j.at("space_terms").get<std::set<std::string>>();
      auto space = rebuild_space(s.current_slice.docs, terms);
      RankedList slice = s.current_slice;
      state = with_keyword_space(std::move(s), std::move(space), std::move(slice));
      seq = j.at("op_seq").get<std::uint64_t>();
      live->created_at = j.value("created_at", 0.0);
      live->snapshot_seq = seq;
    }
    for (const auto& rec : read_log(log_path(id))) {
      const auto rec_seq = rec.at("seq").get<std::uint64_t>();
      if (rec_seq <= seq) continue;
      state = apply_record(std::move(state), rec);
      seq = rec_seq;
      if (rec.at("op") == "create") live->created_at = rec.at("timestamp").get<double>();
    }
    if (!state) return nullptr;
    live->state = std::move(*state);
    live->op_seq = seq;
    return live;
  }

  std::shared_ptr<const Corpus> corpus_;
  ServiceConfig cfg_;
  Clock clock_;
  mutable std::mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Live>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace driftfb
