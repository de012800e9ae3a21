#include "tibscan/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/parallel.hpp"
#include "tibscan/rng.hpp"
#include "tibscan/text.hpp"

namespace fs = std::filesystem;

namespace tibscan {

// ---------------------------------------------------------------------------
// config

const BackendProfile& RunConfig::profile(std::string_view name) const {
  for (const auto& p : profiles) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown profile '" + std::string(name) + "'");
}

void RunConfig::validate_stages() const {
  if (stages.empty()) throw Error(ErrorCode::InvalidArgument, "no stages configured");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const BackendProfile& p = profile(stages[i].profile);
    const bool last = i + 1 == stages.size();
    if (last && !p.capabilities.chat_json) {
      throw Error(ErrorCode::InvalidArgument, "final stage " + p.name + " must be chat_json capable");
    }
    if (!last && !p.capabilities.completion_logprobs) {
      throw Error(ErrorCode::InvalidArgument, "stage " + p.name + " must be completion_logprobs capable");
    }
    stages[i].consistency.validate();
  }
}

ConsistencyConfig parse_consistency_config(const json& j) {
  ConsistencyConfig c;
  c.prob_thresh = j.value("prob_thresh", c.prob_thresh);
  c.rank_thresh = j.value("rank_thresh", c.rank_thresh);
  c.k = j.value("k", c.k);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.validate();
  return c;
}

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? (base / p).lexically_normal() : p.lexically_normal();
}

template <typename T>
std::vector<T> list_of(const json& j, const char* key) {
  std::vector<T> out;
  if (auto it = j.find(key); it != j.end()) {
    if (it->is_array()) {
      for (const auto& v : *it) out.push_back(v.get<T>());
    } else {
      out.push_back(it->get<T>());
    }
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  try {
    if (j.contains("language")) {
      const auto lang = parse_language(j["language"].get<std::string>());
      if (!lang) throw Error(ErrorCode::UnsupportedLanguage, "unsupported language " + j["language"].dump());
      c.language = *lang;
    }
    for (const auto& p : list_of<std::string>(j, "paths")) c.paths.push_back(resolve(p, base_dir));
    c.exclude = list_of<std::string>(j, "exclude");
    c.exclude_keywords = list_of<std::string>(j, "exclude_keywords");
    c.skip_generated = j.value("skip_generated", c.skip_generated);
    if (j.contains("context_strategy")) {
      const auto s = parse_context_strategy(j["context_strategy"].get<std::string>());
      if (!s) throw Error(ErrorCode::InvalidArgument, "unknown context_strategy " + j["context_strategy"].dump());
      c.context_strategy = *s;
    }
    c.max_context_tokens = j.value("max_context_tokens", c.max_context_tokens);
    c.ast_similarity_gating = j.value("ast_similarity_gating", c.ast_similarity_gating);
    for (const auto& p : j.value("profiles", json::array())) c.profiles.push_back(parse_profile(p, base_dir));
    const ConsistencyConfig shared = parse_consistency_config(j.value("consistency", json::object()));
    for (const auto& s : j.value("stages", json::array())) {
      StageRef ref;
      ref.consistency = shared;
      if (s.is_string()) {
        ref.profile = s.get<std::string>();
      } else {
        ref.profile = s.at("profile").get<std::string>();
        if (s.contains("consistency")) {
          json merged = j.value("consistency", json::object());
          merged.update(s["consistency"]);
          ref.consistency = parse_consistency_config(merged);
        }
      }
      c.stages.push_back(std::move(ref));
    }
    c.template_id = j.value("template", c.template_id);
    find_template(c.template_id);
    c.filter = parse_filter_policy(j.value("filter", json::object()));
    c.highlight_cap = j.value("highlight_cap", c.highlight_cap);
    c.output_dir = resolve(j.value("output_dir", c.output_dir.string()), base_dir);
    c.seed = j.value("seed", c.seed);
    c.workers = std::max(1u, j.value("workers", c.workers));
    if (auto b = j.find("budget"); b != j.end()) {
      if (b->contains("max_api_calls")) c.budget.max_api_calls = (*b)["max_api_calls"].get<std::size_t>();
      if (b->contains("max_wall_seconds")) c.budget.max_wall_seconds = (*b)["max_wall_seconds"].get<double>();
    }
    c.record_timing = j.value("record_timing", c.record_timing);
    c.commit = j.value("commit", c.commit);
    if (auto s = j.find("synthesis"); s != j.end()) {
      if (s->contains("sample_size")) c.sample_size = (*s)["sample_size"].get<std::size_t>();
      const std::string policy = s->value("policy", std::string(to_string(c.selection)));
      if (policy == "embedding_nearest") {
        c.selection = SelectionPolicy::EmbeddingNearest;
      } else if (policy == "deterministic_fallback") {
        c.selection = SelectionPolicy::DeterministicFallback;
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown selection policy '" + policy + "'");
      }
      c.embedding_profile = s->value("embedding_profile", "");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// discovery

bool looks_generated(std::string_view text) {
  std::size_t lines = 0, pos = 0;
  while (pos < text.size() && lines < 5) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = text::to_lower(text.substr(pos, end - pos));
    if (line.find("@generated") != std::string::npos || line.find("do not edit") != std::string::npos ||
        line.find("automatically generated") != std::string::npos ||
        line.find("generated by") != std::string::npos) {
      return true;
    }
    pos = end + 1;
    ++lines;
  }
  return false;
}

namespace {

std::string display_path(const fs::path& file, const fs::path& base) {
  if (!base.empty()) {
    const fs::path rel = file.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return file.generic_string();
}

bool excluded(const RunConfig& config, const std::string& rel) {
  for (const auto& g : config.exclude) {
    if (text::glob_match(g, rel)) return true;
  }
  const std::string lower = text::to_lower(rel);
  for (const auto& k : config.exclude_keywords) {
    if (!k.empty() && lower.find(text::to_lower(k)) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

std::vector<fs::path> discover_files(const RunConfig& config) {
  std::set<fs::path> found;
  for (const auto& root : config.paths) {
    std::error_code ec;
    if (fs::is_regular_file(root, ec)) {
      found.insert(root);
      continue;
    }
    if (!fs::is_directory(root, ec)) {
      log::warn("input path ", root.string(), " does not exist; skipped");
      continue;
    }
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (ec) break;
      if (!it->is_regular_file()) continue;
      const auto lang = language_for_path(it->path());
      if (!lang || *lang != config.language) continue;
      if (excluded(config, it->path().lexically_relative(root).generic_string())) continue;
      found.insert(it->path());
    }
  }
  return {found.begin(), found.end()};
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableFile, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorCode::Io, "cannot write " + path.string());
  }
  void write(const json& j) { out_ << j.dump() << '\n'; }
  ~JsonlWriter() = default;

 private:
  fs::path path_;
  std::ofstream out_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

class CountingCompletion final : public CompletionBackend {
 public:
  explicit CountingCompletion(std::unique_ptr<CompletionBackend> inner) : inner_(std::move(inner)) {}
  PredictionStep next_step(const GenerationSession& s, std::size_t k) override {
    ++calls;
    return inner_->next_step(s, k);
  }
  const BackendProfile& profile() const noexcept override { return inner_->profile(); }
  std::atomic<std::size_t> calls{0};

 private:
  std::unique_ptr<CompletionBackend> inner_;
};

class CountingChat final : public ChatBackend {
 public:
  explicit CountingChat(std::unique_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}
  std::string complete(const std::vector<ChatMessage>& m) override {
    ++calls;
    return inner_->complete(m);
  }
  const BackendProfile& profile() const noexcept override { return inner_->profile(); }
  std::atomic<std::size_t> calls{0};

 private:
  std::unique_ptr<ChatBackend> inner_;
};

json verdict_json(const ConsistencyVerdict& v) {
  json j = {{"consistent", v.consistent},
            {"reason", std::string(to_string(v.reason))},
            {"rank_sum", v.rank_sum},
            {"steps", v.steps_taken}};
  if (v.deviation) {
    j["deviation"] = {{"step", v.deviation->step}, {"token", v.deviation->token}, {"prob", v.deviation->prob}};
  }
  return j;
}

std::size_t exchange_tokens(const ChatExchange& ex) {
  std::size_t n = text::approx_token_count(ex.system);
  for (const auto& r : ex.rounds) {
    n += text::approx_token_count(r.user_prompt) + text::approx_token_count(r.raw_response);
  }
  return n;
}

/// Up to `cap` lines, chosen by a seeded shuffle when there are more.
HighlightSet capped_highlights(const std::set<std::uint32_t>& lines, std::size_t cap, std::uint64_t seed) {
  std::vector<std::uint32_t> v(lines.begin(), lines.end());
  if (v.size() > cap) {
    Rng rng(seed);
    rng.shuffle(v);
    v.resize(cap);
  }
  HighlightSet h;
  for (auto l : v) h.add(l);
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// scan

namespace {

enum class Disposition { Pending, Consistent, ContextTooLong, Failed, BudgetSkipped };

struct TaskState {
  std::shared_ptr<const InfillingTask> task;
  std::size_t file = 0;
  std::string root;  // configured input the file came from
  std::vector<std::pair<std::size_t, ConsistencyVerdict>> verdicts;  // (stage, verdict)
  Disposition disposition = Disposition::Pending;
  std::size_t stopped_at = 0;  // stage index where the task left the cascade
};

struct FileState {
  fs::path path;
  std::string display;
  std::string root;
  SourceUnitPtr unit;
  TaskEnumeration tasks;
  bool generated = false;
  std::string error;
};

struct FunctionGroup {
  std::size_t file = 0;
  std::size_t function_index = 0;
  std::vector<std::size_t> tasks;  // indices into the task table
};

enum class ChatStatus { NotRun, Ok, SchemaFailure, Failed, BudgetSkipped };

struct ChatState {
  ChatStatus status = ChatStatus::NotRun;
  ExchangeResult result;
  std::vector<BugFinding> kept;
  std::size_t calls = 0;
  std::string error;
  HighlightSet highlights;
  double seconds = 0;
};

std::string root_of(const RunConfig& config, const fs::path& file) {
  for (const auto& root : config.paths) {
    const auto rel = file.lexically_relative(root);
    if (file == root || (!rel.empty() && *rel.begin() != "..")) return display_path(root, config.base_dir);
  }
  return {};
}

}  // namespace

ScanResult run_scan(const RunConfig& config) {
  config.validate_stages();
  const auto t0 = Clock::now();
  const PromptTemplate& tmpl = find_template(config.template_id);
  fs::create_directories(config.output_dir);

  auto out_of_time = [&] {
    return config.budget.max_wall_seconds && seconds_since(t0) > *config.budget.max_wall_seconds;
  };
  std::atomic<bool> partial{false};

  // 1. parse and enumerate
  const auto paths = discover_files(config);
  std::vector<FileState> files(paths.size());
  TaskLimits limits;
  limits.max_context_tokens = config.max_context_tokens;
  limits.ast_similarity_gating = config.ast_similarity_gating;
  parallel_for(paths.size(), config.workers, [&](std::size_t i) {
    FileState& f = files[i];
    f.path = paths[i];
    f.display = display_path(paths[i], config.base_dir);
    f.root = root_of(config, paths[i]);
    try {
      std::string text = read_text(paths[i]);
      if (config.skip_generated && looks_generated(text)) {
        f.generated = true;
        return;
      }
      f.unit = parse_unit(f.display, config.language, std::move(text));
      f.tasks = enumerate_tasks(f.unit, config.context_strategy, limits);
    } catch (const Error& e) {
      f.error = e.what();
    }
  });

  std::vector<TaskState> tasks;
  std::size_t dropped_too_long = 0, gated_out = 0, files_failed = 0, files_generated = 0, functions = 0;
  json file_errors = json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    FileState& f = files[i];
    if (f.generated) {
      ++files_generated;
      log::info("skipping generated file ", f.display);
      continue;
    }
    if (!f.error.empty()) {
      ++files_failed;
      log::warn("skipping ", f.display, ": ", f.error);
      file_errors.push_back({{"file", f.display}, {"error", f.error}});
      continue;
    }
    for (const auto& skipped : f.unit->skipped_functions) {
      log::info(f.display, ": function ", skipped, " has parse errors; skipped");
    }
    functions += f.unit->functions.size();
    dropped_too_long += f.tasks.dropped_too_long;
    gated_out += f.tasks.gated_out;
    for (auto& t : f.tasks.tasks) {
      TaskState s;
      s.task = std::make_shared<const InfillingTask>(std::move(t));
      s.file = i;
      s.root = f.root;
      tasks.push_back(std::move(s));
    }
    f.tasks.tasks.clear();
  }
  const std::size_t enumerated = tasks.size();

  // 2. local stages
  const std::size_t n_local = config.stages.size() - 1;
  json stage_summaries = json::array();
  std::vector<std::size_t> alive(tasks.size());
  for (std::size_t i = 0; i < alive.size(); ++i) alive[i] = i;
  double local_cost = 0;
  for (std::size_t s = 0; s < n_local; ++s) {
    const StageRef& ref = config.stages[s];
    CountingCompletion backend(make_completion_backend(config.profile(ref.profile)));
    const auto stage_t0 = Clock::now();
    parallel_for(alive.size(), config.workers, [&](std::size_t a) {
      TaskState& t = tasks[alive[a]];
      if (out_of_time()) {
        partial = true;
        t.disposition = Disposition::BudgetSkipped;
        t.stopped_at = s;
        return;
      }
      try {
        auto v = check_consistency(t.task, backend, ref.consistency);
        if (v.consistent) {
          t.disposition = Disposition::Consistent;
          t.stopped_at = s;
        }
        t.verdicts.emplace_back(s, std::move(v));
      } catch (const Error& e) {
        t.stopped_at = s;
        if (e.code() == ErrorCode::ContextTooLong) {
          t.disposition = Disposition::ContextTooLong;
        } else {
          t.disposition = Disposition::Failed;
          log::warn("stage ", ref.profile, ", task ", t.task->task_id, ": ", e.what());
        }
      }
    });
    std::size_t consistent = 0, too_long = 0, failed = 0, skipped = 0;
    std::vector<std::size_t> next;
    for (auto idx : alive) {
      switch (tasks[idx].disposition) {
        case Disposition::Pending: next.push_back(idx); break;
        case Disposition::Consistent: ++consistent; break;
        case Disposition::ContextTooLong: ++too_long; break;
        case Disposition::Failed: ++failed; break;
        case Disposition::BudgetSkipped: ++skipped; break;
      }
    }
    const double cost = static_cast<double>(backend.calls) * backend.profile().price_per_call;
    local_cost += cost;
    json st = {{"stage", ref.profile},
               {"in", alive.size()},
               {"dropped_consistent", consistent},
               {"dropped_context_too_long", too_long},
               {"failed", failed},
               {"budget_skipped", skipped},
               {"out", next.size()},
               {"backend_calls", backend.calls.load()},
               {"cost_estimate", cost}};
    if (config.record_timing) st["seconds"] = seconds_since(stage_t0);
    stage_summaries.push_back(std::move(st));
    log::info("stage ", ref.profile, ": ", alive.size(), " in, ", next.size(), " inconsistent");
    alive = std::move(next);
  }

  // 3. chat stage over functions with surviving tasks
  std::vector<FunctionGroup> groups;
  {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> where;
    for (auto idx : alive) {
      const auto key = std::make_pair(tasks[idx].file, tasks[idx].task->function_index);
      auto [it, inserted] = where.emplace(key, groups.size());
      if (inserted) groups.push_back({key.first, key.second, {}});
      groups[it->second].tasks.push_back(idx);
    }
  }
  const StageRef& chat_ref = config.stages.back();
  CountingChat chat(make_chat_backend(config.profile(chat_ref.profile)));
  std::vector<ChatState> chats(groups.size());
  const std::size_t reserve_per_exchange = 2 * tmpl.rounds.size();
  const auto chat_t0 = Clock::now();
  parallel_for(groups.size(), config.workers, [&](std::size_t g) {
    ChatState& c = chats[g];
    const FunctionGroup& group = groups[g];
    const FileState& f = files[group.file];
    if (config.budget.max_api_calls && (g + 1) * reserve_per_exchange > *config.budget.max_api_calls) {
      c.status = ChatStatus::BudgetSkipped;
      partial = true;
      return;
    }
    if (out_of_time()) {
      c.status = ChatStatus::BudgetSkipped;
      partial = true;
      return;
    }
    const FunctionSpan& fn = f.unit->functions.at(group.function_index);
    Snippet snippet{std::string(f.unit->snippet(fn)), fn.line_range.first, f.unit->language};
    std::set<std::uint32_t> lines;
    for (auto idx : group.tasks) lines.insert(tasks[idx].task->line_no);
    c.highlights = capped_highlights(
        lines, config.highlight_cap,
        derive_seed(config.seed, text::fnv1a(f.display + ':' + std::to_string(fn.line_range.first))));
    const auto ex_t0 = Clock::now();
    // Count this exchange's calls by diffing a private counter.
    CountingChat* counter = &chat;
    struct Local final : ChatBackend {
      ChatBackend& inner;
      std::size_t calls = 0;
      explicit Local(ChatBackend& b) : inner(b) {}
      std::string complete(const std::vector<ChatMessage>& m) override {
        ++calls;
        return inner.complete(m);
      }
      const BackendProfile& profile() const noexcept override { return inner.profile(); }
    } local(*counter);
    try {
      c.result = run_exchange(tmpl, snippet, tmpl.supports_highlights() ? &c.highlights : nullptr, local);
      c.kept = filter_findings(c.result.findings, config.filter);
      c.status = ChatStatus::Ok;
    } catch (const Error& e) {
      c.status = e.code() == ErrorCode::SchemaViolation ? ChatStatus::SchemaFailure : ChatStatus::Failed;
      c.error = e.what();
      log::warn("chat on ", f.display, ":", fn.line_range.first, ": ", e.what());
    }
    c.calls = local.calls;
    c.seconds = seconds_since(ex_t0);
  });
  const double chat_price = chat.profile().price_per_call;

  // 4. outputs
  std::size_t reports = 0, tasks_reported = 0, tasks_no_report = 0, tasks_chat_failed = 0, tasks_chat_skipped = 0;
  std::size_t raw_findings = 0, kept_findings = 0, schema_failures = 0;
  {
    JsonlWriter task_out(config.output_dir / "tasks.jsonl");
    for (const auto& t : tasks) {
      const auto& task = *t.task;
      task_out.write({{"task_id", task.task_id},
                      {"file", task.unit->path},
                      {"function", task.function().name},
                      {"line_no", task.line_no},
                      {"kind", std::string(to_string(task.kind))},
                      {"original", task.original},
                      {"mask", {task.mask.begin, task.mask.end}},
                      {"context", std::string(to_string(task.context))}});
    }
    JsonlWriter verdict_out(config.output_dir / "verdicts.jsonl");
    for (std::size_t s = 0; s < n_local; ++s) {
      for (const auto& t : tasks) {
        for (const auto& [stage, v] : t.verdicts) {
          if (stage != s) continue;
          json j = verdict_json(v);
          j["task_id"] = t.task->task_id;
          j["stage"] = config.stages[s].profile;
          verdict_out.write(j);
        }
      }
    }
  }
  JsonlWriter finding_out(config.output_dir / "findings.jsonl");
  JsonlWriter report_out(config.output_dir / "reports.jsonl");
  std::vector<std::string> local_names;
  for (std::size_t s = 0; s < n_local; ++s) local_names.push_back(config.stages[s].profile);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const FunctionGroup& group = groups[g];
    const ChatState& c = chats[g];
    const FileState& f = files[group.file];
    const FunctionSpan& fn = f.unit->functions.at(group.function_index);
    const std::string snippet_id =
        text::hex64(text::fnv1a(f.display + '\0' + std::to_string(fn.byte_range.begin)));
    switch (c.status) {
      case ChatStatus::BudgetSkipped: tasks_chat_skipped += group.tasks.size(); break;
      case ChatStatus::SchemaFailure:
        ++schema_failures;
        tasks_chat_failed += group.tasks.size();
        break;
      case ChatStatus::Failed: tasks_chat_failed += group.tasks.size(); break;
      case ChatStatus::Ok:
        (c.kept.empty() ? tasks_no_report : tasks_reported) += group.tasks.size();
        break;
      case ChatStatus::NotRun: break;
    }
    if (c.status == ChatStatus::BudgetSkipped) continue;

    json fj = {{"snippet_id", snippet_id},
               {"file", f.display},
               {"function", fn.name},
               {"first_line", fn.line_range.first},
               {"template_id", tmpl.id},
               {"highlights", c.highlights.lines},
               {"api_calls", c.calls},
               {"status", c.status == ChatStatus::Ok ? "ok" : c.status == ChatStatus::SchemaFailure ? "schema_failure" : "failed"}};
    if (c.status == ChatStatus::Ok) {
      json all = json::array(), kept = json::array();
      for (const auto& x : c.result.findings) all.push_back(x.to_json());
      for (const auto& x : c.kept) kept.push_back(x.to_json());
      fj["findings"] = std::move(all);
      fj["kept"] = std::move(kept);
      fj["rounds_used"] = c.result.rounds_used;
      fj["token_cost"] = exchange_tokens(c.result.exchange);
      raw_findings += c.result.findings.size();
      kept_findings += c.kept.size();
    } else {
      fj["error"] = c.error;
    }
    finding_out.write(fj);

    for (const auto& finding : c.kept) {
      std::optional<std::uint32_t> line = finding.resolved_line_no;
      std::string resolution = "exact";
      if (!line && finding.approximate_line_no) {
        line = finding.approximate_line_no;
        resolution = "approximate";
      } else if (!line) {
        resolution = "unresolved";
      }
      std::vector<std::size_t> trace_tasks;
      for (auto idx : group.tasks) {
        if (line && tasks[idx].task->line_no == *line) trace_tasks.push_back(idx);
      }
      const bool on_flagged_line = !trace_tasks.empty();
      if (trace_tasks.empty()) trace_tasks = group.tasks;
      json trace = json::array(), originals = json::array();
      for (auto idx : trace_tasks) {
        const TaskState& t = tasks[idx];
        json verdicts = json::array();
        for (const auto& [s, v] : t.verdicts) {
          json vj = verdict_json(v);
          vj["stage"] = config.stages[s].profile;
          verdicts.push_back(std::move(vj));
        }
        trace.push_back({{"task_id", t.task->task_id},
                         {"line_no", t.task->line_no},
                         {"original", t.task->original},
                         {"kind", std::string(to_string(t.task->kind))},
                         {"verdicts", std::move(verdicts)}});
        if (on_flagged_line) originals.push_back(t.task->original);
      }
      json stages = local_names;
      stages.push_back(chat_ref.profile);
      json r = {{"repo", f.root},
                {"file", f.display},
                {"function", fn.name},
                {"line_no", line ? json(*line) : json(nullptr)},
                {"line_resolution", resolution},
                {"on_flagged_line", on_flagged_line},
                {"original_tokens", std::move(originals)},
                {"finding", finding.to_json()},
                {"template_id", tmpl.id},
                {"stages", std::move(stages)},
                {"trace", std::move(trace)},
                {"snippet_id", snippet_id},
                {"cost_estimate", static_cast<double>(c.calls) * chat_price}};
      if (config.record_timing) r["elapsed_seconds"] = c.seconds;
      report_out.write(r);
      ++reports;
    }
  }

  // 5. summary; every initial task lands in exactly one funnel bucket
  std::size_t stage_dropped = 0;
  json funnel = json::array();
  funnel.push_back({{"step", "context_limit"}, {"tasks", dropped_too_long}});
  funnel.push_back({{"step", "ast_gating"}, {"tasks", gated_out}});
  for (const auto& st : stage_summaries) {
    const std::size_t d = st["dropped_consistent"].get<std::size_t>() +
                          st["dropped_context_too_long"].get<std::size_t>() + st["failed"].get<std::size_t>() +
                          st["budget_skipped"].get<std::size_t>();
    stage_dropped += d;
    funnel.push_back({{"step", st["stage"]}, {"tasks", d}});
  }
  funnel.push_back({{"step", chat_ref.profile + ":no_report"}, {"tasks", tasks_no_report}});
  funnel.push_back({{"step", chat_ref.profile + ":failed"}, {"tasks", tasks_chat_failed}});
  funnel.push_back({{"step", chat_ref.profile + ":budget_skipped"}, {"tasks", tasks_chat_skipped}});
  funnel.push_back({{"step", "reported"}, {"tasks", tasks_reported}});
  const std::size_t initial = enumerated + dropped_too_long + gated_out;
  std::size_t accounted = 0;
  for (const auto& step : funnel) accounted += step["tasks"].get<std::size_t>();
  if (accounted != initial) {
    log::error("funnel accounting mismatch: ", accounted, " of ", initial);
  }

  json summary = {
      {"files", {{"scanned", files.size() - files_failed - files_generated},
                 {"failed", files_failed},
                 {"generated_skipped", files_generated},
                 {"errors", file_errors}}},
      {"functions", functions},
      {"tasks", {{"initial", initial}, {"enumerated", enumerated}}},
      {"stages", stage_summaries},
      {"chat",
       {{"stage", chat_ref.profile},
        {"functions", groups.size()},
        {"api_calls", chat.calls.load()},
        {"schema_failures", schema_failures},
        {"findings", raw_findings},
        {"kept", kept_findings},
        {"cost_estimate", static_cast<double>(chat.calls) * chat_price}}},
      {"funnel", funnel},
      {"reports", reports},
      {"template_id", tmpl.id},
      {"partial", partial.load()},
      {"cost_estimate", local_cost + static_cast<double>(chat.calls) * chat_price},
  };
  if (config.record_timing) {
    summary["elapsed_seconds"] = seconds_since(t0);
    summary["chat"]["seconds"] = seconds_since(chat_t0);
  }
  write_json(config.output_dir / "summary.json", summary);
  if (partial) log::warn("budget exhausted; results are partial");
  return {summary, reports, partial.load()};
}

// ---------------------------------------------------------------------------
// synthesize

json run_synthesize(const RunConfig& config) {
  const auto paths = discover_files(config);
  std::vector<SourceUnitPtr> units(paths.size());
  std::vector<std::string> errors(paths.size());
  parallel_for(paths.size(), config.workers, [&](std::size_t i) {
    try {
      std::string text = read_text(paths[i]);
      if (config.skip_generated && looks_generated(text)) return;
      units[i] = parse_unit(display_path(paths[i], config.base_dir), config.language, std::move(text));
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  std::vector<FunctionRef> refs;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      log::warn("skipping ", paths[i].string(), ": ", errors[i]);
    }
    if (!units[i]) continue;
    for (std::size_t f = 0; f < units[i]->functions.size(); ++f) refs.push_back({units[i], f});
  }
  std::unique_ptr<EmbeddingProvider> embeddings;
  if (!config.embedding_profile.empty()) {
    embeddings = make_embedding_provider(config.profile(config.embedding_profile));
  }
  SynthesisOptions opts;
  opts.seed = config.seed;
  opts.sample_size = config.sample_size;
  opts.policy = config.selection;
  opts.embeddings = embeddings.get();
  opts.workers = config.workers;
  opts.commit = config.commit;
  const Dataset d = build_dataset(refs, opts);

  fs::create_directories(config.output_dir);
  write_dataset_jsonl(config.output_dir / "dataset.jsonl", d);
  json summary = {{"files", paths.size()},
                  {"files_failed", failed},
                  {"functions", refs.size()},
                  {"clean", d.clean.size()},
                  {"mutated", d.mutated.size()},
                  {"insufficient_candidates", d.insufficient},
                  {"policy", std::string(to_string(opts.policy))},
                  {"seed", config.seed}};
  write_json(config.output_dir / "summary.json", summary);
  return summary;
}

// ---------------------------------------------------------------------------
// measure

namespace {

/// The sample's function as a standalone unit: the first line's indentation
/// is stripped from every line carrying it. `offset` is mapped along.
struct Standalone {
  SourceUnitPtr unit;
  std::size_t offset = 0;
};

Standalone standalone_unit(const LabeledSample& s, std::size_t offset) {
  const std::string& text = s.function_text;
  std::size_t indent = 0;
  while (indent < text.size() && (text[indent] == ' ' || text[indent] == '\t')) ++indent;
  const std::string prefix = text.substr(0, indent);
  std::string out;
  std::size_t mapped = offset;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    end = end == std::string::npos ? text.size() : end + 1;
    std::string_view line(text.data() + pos, end - pos);
    if (indent && line.starts_with(prefix)) {
      if (pos + indent <= offset) mapped -= indent;
      line.remove_prefix(indent);
    }
    out += line;
    pos = end;
  }
  return {parse_unit(s.id, s.language, std::move(out)), mapped};
}

std::string pair_key(const LabeledSample& s) {
  return s.source_ref.path + '\0' + std::to_string(s.source_ref.first_line) + '\0' + s.source_ref.function;
}

std::uint64_t sample_seed(std::uint64_t seed, const LabeledSample& s) { return derive_seed(seed, text::fnv1a(s.id)); }

/// Infilling task for a sample: the mutated token for mutated samples, the
/// counterpart's original token for clean ones, else a seeded random token.
std::shared_ptr<const InfillingTask> measure_task(const LabeledSample& s, const LabeledSample* counterpart,
                                                  std::uint64_t seed, std::size_t max_tokens) {
  std::optional<std::pair<std::size_t, std::size_t>> span;  // offset, length in function_text
  if (s.mutation) {
    span = {s.mutation->offset, s.mutation->substitute.size()};
  } else if (counterpart && counterpart->mutation) {
    span = {counterpart->mutation->offset, counterpart->mutation->original.size()};
  }
  const Standalone st = standalone_unit(s, span ? span->first : 0);
  if (st.unit->functions.empty()) return nullptr;
  TaskLimits limits;
  limits.max_context_tokens = max_tokens;
  auto all = enumerate_tasks(st.unit, ContextStrategy::Function, limits).tasks;
  if (all.empty()) return nullptr;
  if (!span) {
    Rng rng(seed);
    return std::make_shared<const InfillingTask>(std::move(all[rng.below(all.size())]));
  }
  const ByteRange want{st.offset, st.offset + span->second};
  for (auto& t : all) {
    if (t.mask == want) return std::make_shared<const InfillingTask>(std::move(t));
  }
  return nullptr;
}

HighlightSet measure_highlights(const LabeledSample& s, std::size_t cap, std::uint64_t seed) {
  HighlightSet h;
  const auto n_lines = static_cast<std::uint32_t>(text::split_lines(s.function_text).size());
  std::vector<std::uint32_t> others;
  for (std::uint32_t i = 0; i < n_lines; ++i) {
    const std::uint32_t line = s.source_ref.first_line + i;
    if (s.mutation && s.mutation->line_no == line) continue;
    if (text::trim(text::split_lines(s.function_text)[i]).empty()) continue;
    others.push_back(line);
  }
  if (s.mutation) h.add(s.mutation->line_no);
  Rng rng(seed);
  rng.shuffle(others);
  const std::size_t extra = std::min<std::size_t>(others.size(), rng.below(cap + 1));
  for (std::size_t i = 0; i < extra; ++i) h.add(others[i]);
  return h;
}

}  // namespace

json run_measure(const RunConfig& config, const MeasureOptions& options) {
  std::vector<LabeledSample> samples;
  for (const auto& p : options.datasets) {
    auto part = read_dataset_jsonl(p);
    samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (samples.empty()) throw Error(ErrorCode::EmptyInput, "no samples in the given datasets");
  fs::create_directories(config.output_dir);

  std::map<std::string, const LabeledSample*> mutated_by_key;
  for (const auto& s : samples) {
    if (s.label == SampleLabel::Mutated) mutated_by_key.emplace(pair_key(s), &s);
  }

  json metrics;
  JsonlWriter outcomes_out(config.output_dir / "outcomes.jsonl");
  if (options.stage) {
    const BackendProfile& profile = config.profile(*options.stage);
    ConsistencyConfig cc;
    for (const auto& ref : config.stages) {
      if (ref.profile == *options.stage) cc = ref.consistency;
    }
    auto backend = make_completion_backend(profile);
    std::vector<std::optional<LabeledVerdict>> verdicts(samples.size());
    std::vector<json> lines(samples.size());
    parallel_for(samples.size(), config.workers, [&](std::size_t i) {
      const LabeledSample& s = samples[i];
      const LabeledSample* counterpart = nullptr;
      if (s.label == SampleLabel::Clean) {
        if (auto it = mutated_by_key.find(pair_key(s)); it != mutated_by_key.end()) counterpart = it->second;
      }
      json line = {{"id", s.id}, {"label", std::string(to_string(s.label))}};
      try {
        auto task = measure_task(s, counterpart, sample_seed(config.seed, s), config.max_context_tokens);
        if (!task) {
          line["status"] = "unscorable";
        } else {
          const auto v = check_consistency(task, *backend, cc);
          verdicts[i] = LabeledVerdict{s.label, v.consistent};
          line["status"] = "ok";
          line["task_id"] = task->task_id;
          line["verdict"] = verdict_json(v);
        }
      } catch (const Error& e) {
        line["status"] = "failed";
        line["error"] = e.what();
      }
      lines[i] = std::move(line);
    });
    std::vector<LabeledVerdict> scored;
    std::size_t unscored = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      outcomes_out.write(lines[i]);
      if (verdicts[i]) {
        scored.push_back(*verdicts[i]);
      } else {
        ++unscored;
      }
    }
    if (unscored) log::warn(unscored, " sample(s) could not be scored");
    metrics = {{"mode", "stage"}, {"stage", *options.stage}, {"infilling", score_infilling(scored).to_json()},
               {"unscored", unscored}};
  } else {
    const PromptTemplate& tmpl = find_template(config.template_id);
    if (config.stages.empty()) throw Error(ErrorCode::InvalidArgument, "no chat stage configured");
    auto chat = make_chat_backend(config.profile(config.stages.back().profile));
    std::vector<SampleOutcome> outcomes(samples.size());
    std::vector<json> lines(samples.size());
    parallel_for(samples.size(), config.workers, [&](std::size_t i) {
      const LabeledSample& s = samples[i];
      Snippet snippet{s.function_text, s.source_ref.first_line, s.language};
      HighlightSet hl;
      if (tmpl.supports_highlights()) hl = measure_highlights(s, config.highlight_cap, sample_seed(config.seed, s));
      json line = {{"id", s.id}, {"label", std::string(to_string(s.label))}, {"highlights", hl.lines}};
      try {
        auto r = run_exchange(tmpl, snippet, tmpl.supports_highlights() ? &hl : nullptr, *chat);
        outcomes[i].raw = r.findings;
        outcomes[i].kept = filter_findings(r.findings, config.filter);
        json raw = json::array(), kept = json::array();
        for (const auto& f : outcomes[i].raw) raw.push_back(f.to_json());
        for (const auto& f : outcomes[i].kept) kept.push_back(f.to_json());
        line["status"] = "ok";
        line["findings"] = std::move(raw);
        line["kept"] = std::move(kept);
        line["rounds_used"] = r.rounds_used;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SchemaViolation) throw;
        outcomes[i].schema_failure = true;
        line["status"] = "schema_failure";
        line["error"] = e.what();
      }
      lines[i] = std::move(line);
    });
    std::unordered_map<std::string, SampleOutcome> by_id;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      outcomes_out.write(lines[i]);
      by_id[samples[i].id] = std::move(outcomes[i]);
    }
    metrics = {{"mode", "template"}, {"template_id", tmpl.id}, {"summary", score_run(samples, by_id).to_json()}};
  }
  metrics["samples"] = samples.size();
  metrics["seed"] = config.seed;
  write_json(config.output_dir / "metrics.json", metrics);
  return metrics;
}

// ---------------------------------------------------------------------------
// simulate-cost

json run_simulate_cost(const json& request, unsigned workers) {
  try {
    std::vector<StageProfile> pool;
    for (const auto& s : request.at("stages")) pool.push_back(parse_stage_profile(s));
    if (pool.empty()) throw Error(ErrorCode::InvalidArgument, "simulate-cost: no stages");
    const CostParams params = parse_cost_params(request.value("cost", json::object()));
    const double n0 = request.value("n0", 1000.0);

    std::vector<StageProfile> chosen;
    if (request.contains("order")) {
      for (const auto& name : request["order"]) {
        auto it = std::find_if(pool.begin(), pool.end(), [&](const StageProfile& s) { return s.name == name; });
        if (it == pool.end()) throw Error(ErrorCode::InvalidArgument, "simulate-cost: unknown stage " + name.dump());
        chosen.push_back(*it);
      }
    } else {
      chosen = pool;
    }
    json out = {{"analytic", evaluate_pipeline(chosen, n0, params).to_json()}};
    json names = json::array();
    for (const auto& s : chosen) names.push_back(s.name);
    out["order"] = names;

    if (auto sw = request.find("sweep"); sw != request.end()) {
      const auto range = sw->value("n_range", std::vector<std::size_t>{1, pool.size()});
      if (range.size() != 2 || range[0] > range[1]) {
        throw Error(ErrorCode::InvalidArgument, "simulate-cost: n_range must be [lo, hi]");
      }
      std::vector<std::size_t> ns;
      for (std::size_t n = range[0]; n <= range[1]; ++n) ns.push_back(n);
      const auto ranked = sweep_configurations(pool, ns, n0, params);
      const std::size_t top = sw->value("top", std::size_t{10});
      json list = json::array();
      for (std::size_t i = 0; i < ranked.size() && i < top; ++i) {
        list.push_back({{"stages", ranked[i].stage_names}, {"outcome", ranked[i].outcome.to_json()}});
      }
      out["sweep"] = {{"configurations", ranked.size()}, {"ranked", list}};
    }
    if (auto mc = request.find("monte_carlo"); mc != request.end()) {
      const auto cases = static_cast<std::uint64_t>(mc->value("n0", n0));
      const std::uint64_t seed = mc->value("seed", std::uint64_t{0});
      out["monte_carlo"] = simulate_pipeline(chosen, cases, params, seed, workers).to_json();
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("simulate-cost request: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string render_scan_dir(const fs::path& dir) {
  std::ostringstream os;
  const fs::path summary_path = dir / "summary.json";
  if (fs::exists(summary_path)) {
    const json s = json::parse(read_text(summary_path));
    os << "# Scan of " << dir.generic_string() << "\n\n";
    os << "Tasks: " << s["tasks"]["initial"].get<std::size_t>() << ", reports: " << s["reports"].get<std::size_t>();
    if (s.value("partial", false)) os << " (partial: budget exhausted)";
    os << "\n\nFunnel:\n";
    for (const auto& step : s["funnel"]) {
      os << "  " << step["step"].get<std::string>() << ": " << step["tasks"].get<std::size_t>() << "\n";
    }
    os << "\n";
  }
  std::ifstream in(dir / "reports.jsonl");
  if (!in) throw Error(ErrorCode::Io, "no reports.jsonl in " + dir.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const json r = json::parse(line);
    const json& f = r["finding"];
    ++n;
    os << "## " << n << ". " << r["file"].get<std::string>();
    if (!r["line_no"].is_null()) os << ":" << r["line_no"].get<std::uint32_t>();
    os << " in " << r["function"].get<std::string>() << "\n";
    os << "    " << f["code_line"].get<std::string>() << "\n";
    if (f.contains("fixed_line")) os << "fix " << f["fixed_line"].get<std::string>() << "\n";
    if (f.contains("category")) os << "category: " << f["category"].get<std::string>() << "\n";
    if (r["line_resolution"] != "exact") os << "line match: " << r["line_resolution"].get<std::string>() << "\n";
    os << "\n" << f["explanation"].get<std::string>() << "\n\n";
  }
  if (n == 0) os << "No reports.\n";
  return os.str();
}

}  // namespace

std::string render_report(const std::vector<fs::path>& inputs) {
  std::ostringstream os;
  std::vector<std::pair<std::string, MetricsSummary>> rows;
  auto counts = [](const json& j, MetricsSummary& m) {
    const json& a = j.at("mutated");
    const json& b = j.at("clean");
    m.mutated_samples = a.at("samples");
    m.tp_l = a.at("tp_l");
    m.fp_l_mutated = a.at("fp_l");
    m.fn_l = a.at("fn_l");
    m.tp_f = a.at("tp_f");
    m.fp_f_mutated = a.at("fp_f");
    m.fn_f = a.at("fn_f");
    m.schema_failures = a.at("schema_failures");
    m.clean_samples = b.at("samples");
    m.fp_l = b.at("fp_l");
    m.excluded_fp_l = b.at("excluded_fp_l");
    m.fp_f = b.at("fp_f");
    m.excluded_fp_f = b.at("excluded_fp_f");
    m.tn_f = b.at("tn_f");
    m.clean_schema_failures = b.at("schema_failures");
    m.derive();
  };
  std::vector<std::string> infilling;
  for (const auto& input : inputs) {
    try {
      if (fs::is_directory(input) && !fs::exists(input / "metrics.json")) {
        os << render_scan_dir(input);
        continue;
      }
      const fs::path file = fs::is_directory(input) ? input / "metrics.json" : input;
      const json j = json::parse(read_text(file));
      if (j.value("mode", "") == "template") {
        MetricsSummary m;
        counts(j.at("summary"), m);
        rows.emplace_back(j.value("template_id", file.generic_string()), m);
      } else if (j.value("mode", "") == "stage") {
        const json& s = j.at("infilling");
        std::ostringstream line;
        line << j.value("stage", "?") << ": recall "
             << (s["recall"].is_null() ? std::string("-") : s["recall"].dump()) << ", specificity "
             << (s["specificity"].is_null() ? std::string("-") : s["specificity"].dump()) << " ("
             << s["mutated"] << " mutated, " << s["clean"] << " clean)";
        infilling.push_back(line.str());
      } else {
        throw Error(ErrorCode::InvalidArgument, file.string() + " is not a metrics file");
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, input.string() + ": " + e.what());
    }
  }
  if (!rows.empty()) os << format_metrics_table(rows);
  for (const auto& l : infilling) os << l << "\n";
  return os.str();
}

}  // namespace tibscan
