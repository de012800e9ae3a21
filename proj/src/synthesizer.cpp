#include "tibscan/synthesizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "http_client.hpp"
#include "tibscan/error.hpp"
#include "tibscan/lexicon.hpp"
#include "tibscan/log.hpp"
#include "tibscan/parallel.hpp"
#include "tibscan/rng.hpp"
#include "tibscan/text.hpp"

namespace tibscan {

// ---------------------------------------------------------------------------
// embeddings

FixtureEmbeddingProvider::FixtureEmbeddingProvider(const json& fixture)
    : scores_(fixture.value("scores", json::object())) {
  if (!scores_.is_object()) throw Error(ErrorCode::InvalidArgument, "embedding fixture: scores must be an object");
}

std::vector<double> FixtureEmbeddingProvider::similarities(const std::string& original,
                                                           const std::vector<std::string>& candidates) {
  std::vector<double> out;
  out.reserve(candidates.size());
  const auto row = scores_.find(original);
  for (const auto& c : candidates) {
    double s = 0.0;
    if (row != scores_.end()) {
      const auto cell = row->find(c);
      if (cell != row->end()) s = cell->get<double>();
    }
    out.push_back(s);
  }
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::InvalidArgument, "embedding vectors differ in length");
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(BackendProfile profile, std::string path)
    : profile_(std::move(profile)), path_(std::move(path)), limiter_(profile_.max_concurrency) {}

std::vector<double> HttpEmbeddingProvider::vector_for(const std::string& text) {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
  }
  json body = {{"model", profile_.model}, {"input", json::array({text})}};
  json reply;
  {
    RateLimiter::Permit permit(limiter_);
    reply = detail::post_json(profile_, path_, body, false);
  }
  std::vector<double> v;
  try {
    v = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, profile_.name + ": reply lacks an embedding: " + e.what());
  }
  std::lock_guard lock(mutex_);
  cache_.emplace(text, v);
  return v;
}

std::vector<double> HttpEmbeddingProvider::similarities(const std::string& original,
                                                        const std::vector<std::string>& candidates) {
  const auto base = vector_for(original);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(cosine_similarity(base, vector_for(c)));
  return out;
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const BackendProfile& profile) {
  if (profile.kind == "scripted") {
    std::ifstream in(profile.fixture);
    if (!in) throw Error(ErrorCode::Io, "cannot read embedding fixture " + profile.fixture.string());
    try {
      return std::make_unique<FixtureEmbeddingProvider>(json::parse(in));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, profile.fixture.string() + ": " + e.what());
    }
  }
  return std::make_unique<HttpEmbeddingProvider>(profile);
}

// ---------------------------------------------------------------------------
// mutations

namespace {

bool is_identifier_kind(CodeTokenKind k) {
  return k == CodeTokenKind::VariableUse || k == CodeTokenKind::FunctionCall;
}

}  // namespace

std::vector<MutationCandidate> enumerate_mutations(const std::shared_ptr<const InfillingTask>& task,
                                                   const std::vector<ScopeToken>& scope,
                                                   EmbeddingProvider* embeddings) {
  const InfillingTask& t = *task;
  const SourceUnit& unit = *t.unit;

  // Literal grammar type of the masked token.
  std::string literal_type;
  if (t.kind == CodeTokenKind::Literal) {
    for (const auto& tok : maskable_tokens(unit, t.function_index)) {
      if (tok.range == t.mask) literal_type = tok.node_type;
    }
  }

  struct Pick {
    std::string text;
    bool same_kind;
  };
  auto gather = [&](bool same_function) {
    std::vector<Pick> picks;
    std::set<std::string> seen;
    for (const auto& s : scope) {
      if (s.same_function != same_function || s.text == t.original || seen.count(s.text)) continue;
      bool ok = false;
      if (is_identifier_kind(t.kind)) {
        ok = is_identifier_kind(s.kind);
      } else if (t.kind == CodeTokenKind::Literal) {
        ok = s.kind == CodeTokenKind::Literal && s.node_type == literal_type;
      }
      if (!ok) continue;
      seen.insert(s.text);
      picks.push_back({s.text, s.kind == t.kind});
    }
    return picks;
  };

  std::vector<Pick> picks;
  if (t.kind == CodeTokenKind::Operator) {
    for (auto op : lexicon::operator_substitutes(unit.language, t.original)) {
      picks.push_back({std::string(op), true});
    }
  }

  std::vector<MutationCandidate> out;
  auto admit = [&](const std::vector<Pick>& from) {
    for (const auto& p : from) {
      if (!substitution_parses(unit, t.mask, p.text, t.kind)) continue;
      out.push_back({task, p.text, 0.0, p.same_kind});
    }
  };
  if (t.kind == CodeTokenKind::Operator) {
    admit(picks);
  } else {
    admit(gather(true));
    if (out.empty()) admit(gather(false));
  }
  if (out.empty()) {
    throw Error(ErrorCode::NoCandidates, "no substitute for '" + t.original + "' at line " + std::to_string(t.line_no));
  }

  if (embeddings) {
    std::vector<std::string> texts;
    for (const auto& c : out) texts.push_back(c.substitute);
    const auto sims = embeddings->similarities(t.original, texts);
    if (sims.size() != out.size()) throw Error(ErrorCode::BackendUnavailable, "embedding provider returned a short list");
    for (std::size_t i = 0; i < out.size(); ++i) out[i].similarity = sims[i];
  }
  std::sort(out.begin(), out.end(), [](const MutationCandidate& a, const MutationCandidate& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.substitute < b.substitute;
  });
  return out;
}

std::string_view to_string(SelectionPolicy policy) noexcept {
  return policy == SelectionPolicy::EmbeddingNearest ? "embedding_nearest" : "deterministic_fallback";
}

const MutationCandidate& select_mutation(const std::vector<MutationCandidate>& candidates,
                                         SelectionPolicy policy) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "select_mutation: no candidates");
  const bool any_same = std::any_of(candidates.begin(), candidates.end(),
                                    [](const MutationCandidate& c) { return c.same_kind; });
  const MutationCandidate* best = nullptr;
  if (policy == SelectionPolicy::EmbeddingNearest) {
    // Highest below identity; if every score is 1, the first of them.
    for (const auto& c : candidates) {
      if (any_same && !c.same_kind) continue;
      if (c.similarity >= 1.0) continue;
      if (!best || c.similarity > best->similarity ||
          (c.similarity == best->similarity && c.substitute < best->substitute)) {
        best = &c;
      }
    }
    if (!best) {
      for (const auto& c : candidates) {
        if (any_same && !c.same_kind) continue;
        if (!best || c.substitute < best->substitute) best = &c;
      }
    }
    return *best;
  }
  double best_d = 0;
  for (const auto& c : candidates) {
    if (any_same && !c.same_kind) continue;
    const std::string& o = c.task->original;
    const double longest = static_cast<double>(std::max(o.size(), c.substitute.size()));
    const double d = longest ? static_cast<double>(text::levenshtein(o, c.substitute)) / longest : 0.0;
    if (!best || d < best_d || (d == best_d && c.substitute < best->substitute)) {
      best = &c;
      best_d = d;
    }
  }
  return *best;
}

// ---------------------------------------------------------------------------
// dataset

std::string_view to_string(SampleLabel label) noexcept {
  return label == SampleLabel::Clean ? "clean" : "mutated";
}

json LabeledSample::to_json() const {
  json j = {{"id", id},
            {"label", std::string(tibscan::to_string(label))},
            {"language", std::string(tibscan::to_string(language))},
            {"function_text", function_text}};
  if (mutation) {
    j["mutation"] = {{"line_no", mutation->line_no},
                     {"original", mutation->original},
                     {"substitute", mutation->substitute},
                     {"kind", std::string(tibscan::to_string(mutation->kind))},
                     {"offset", mutation->offset}};
  }
  json ref = {{"path", source_ref.path}, {"first_line", source_ref.first_line}, {"function", source_ref.function}};
  if (!source_ref.commit.empty()) ref["commit"] = source_ref.commit;
  j["source_ref"] = std::move(ref);
  return j;
}

LabeledSample LabeledSample::from_json(const json& j) {
  LabeledSample s;
  try {
    s.id = j.at("id").get<std::string>();
    const auto label = j.at("label").get<std::string>();
    if (label == "clean") {
      s.label = SampleLabel::Clean;
    } else if (label == "mutated") {
      s.label = SampleLabel::Mutated;
    } else {
      throw Error(ErrorCode::InvalidArgument, "sample " + s.id + ": unknown label '" + label + "'");
    }
    const auto lang = parse_language(j.at("language").get<std::string>());
    if (!lang) throw Error(ErrorCode::UnsupportedLanguage, "sample " + s.id + ": unknown language");
    s.language = *lang;
    s.function_text = j.at("function_text").get<std::string>();
    if (j.contains("mutation") && !j["mutation"].is_null()) {
      const json& m = j["mutation"];
      Mutation mut;
      mut.line_no = m.at("line_no").get<std::uint32_t>();
      mut.original = m.at("original").get<std::string>();
      mut.substitute = m.at("substitute").get<std::string>();
      const auto kind = parse_token_kind(m.at("kind").get<std::string>());
      if (!kind) throw Error(ErrorCode::InvalidArgument, "sample " + s.id + ": unknown token kind");
      mut.kind = *kind;
      mut.offset = m.value("offset", std::size_t{0});
      s.mutation = std::move(mut);
    }
    if (j.contains("source_ref")) {
      const json& r = j["source_ref"];
      s.source_ref.path = r.value("path", "");
      s.source_ref.first_line = r.value("first_line", 1u);
      s.source_ref.function = r.value("function", "");
      s.source_ref.commit = r.value("commit", "");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed sample: ") + e.what());
  }
  if ((s.label == SampleLabel::Mutated) != s.mutation.has_value()) {
    throw Error(ErrorCode::InvalidArgument, "sample " + s.id + ": label and mutation disagree");
  }
  return s;
}

std::vector<std::size_t> sample_by_length_decile(const std::vector<std::size_t>& lengths, std::size_t n,
                                                 std::uint64_t seed) {
  const std::size_t total = lengths.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  if (n >= total) return order;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });

  constexpr std::size_t kGroups = 10;
  std::vector<std::vector<std::size_t>> groups(kGroups);
  for (std::size_t i = 0; i < total; ++i) groups[i * kGroups / total].push_back(order[i]);

  // Largest-remainder apportionment of n over group sizes.
  std::vector<std::size_t> quota(kGroups);
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, group)
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < kGroups; ++g) {
    const std::size_t num = n * groups[g].size();
    quota[g] = num / total;
    assigned += quota[g];
    remainders.emplace_back(num % total, g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++quota[remainders[i].second];

  std::vector<std::size_t> picked;
  for (std::size_t g = 0; g < kGroups; ++g) {
    auto members = groups[g];
    std::sort(members.begin(), members.end());
    Rng rng(derive_seed(seed, g));
    rng.shuffle(members);
    picked.insert(picked.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[g]));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

namespace {

struct Built {
  LabeledSample clean;
  std::optional<LabeledSample> mutated;
};

Built build_one(const FunctionRef& ref, const SynthesisOptions& options) {
  const SourceUnit& unit = *ref.unit;
  const FunctionSpan& fn = unit.functions.at(ref.index);
  const std::size_t begin = unit.snippet_begin(fn);
  const std::string base_id =
      text::hex64(text::fnv1a(unit.path + '\0' + std::to_string(fn.byte_range.begin) + ':' +
                              std::to_string(fn.byte_range.end)));

  Built out;
  LabeledSample& clean = out.clean;
  clean.id = base_id + "-clean";
  clean.label = SampleLabel::Clean;
  clean.language = unit.language;
  clean.function_text = std::string(unit.snippet(fn));
  clean.source_ref = {unit.path, fn.line_range.first, fn.name, options.commit};

  auto tokens = maskable_tokens(unit, ref.index);
  Rng rng(derive_seed(options.seed, text::fnv1a(base_id)));
  rng.shuffle(tokens);
  const auto scope = scope_tokens(unit, ref.index);
  const text::LineIndex lines(unit.text);

  for (const auto& tok : tokens) {
    auto task = std::make_shared<InfillingTask>();
    task->task_id = make_task_id(unit.path, tok.range, tok.text);
    task->unit = ref.unit;
    task->function_index = ref.index;
    task->mask = tok.range;
    task->original = tok.text;
    task->kind = tok.kind;
    task->line_no = lines.line_of(tok.range.begin);
    std::vector<MutationCandidate> candidates;
    try {
      candidates = enumerate_mutations(task, scope, options.embeddings);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoCandidates) throw;
      continue;
    }
    const MutationCandidate& chosen = select_mutation(candidates, options.policy);
    LabeledSample m = clean;
    m.id = base_id + "-mutated";
    m.label = SampleLabel::Mutated;
    const std::size_t offset = tok.range.begin - begin;
    m.function_text.replace(offset, tok.range.size(), chosen.substitute);
    m.mutation = Mutation{task->line_no, tok.text, chosen.substitute, tok.kind, offset};
    out.mutated = std::move(m);
    break;
  }
  return out;
}

}  // namespace

Dataset build_dataset(const std::vector<FunctionRef>& functions, const SynthesisOptions& options) {
  if (options.policy == SelectionPolicy::EmbeddingNearest && !options.embeddings) {
    throw Error(ErrorCode::InvalidArgument, "embedding_nearest selection needs an embedding provider");
  }
  // Canonical order so sampling ignores input order.
  std::vector<FunctionRef> ordered = functions;
  std::sort(ordered.begin(), ordered.end(), [](const FunctionRef& a, const FunctionRef& b) {
    if (a.unit->path != b.unit->path) return a.unit->path < b.unit->path;
    return a.index < b.index;
  });
  std::vector<std::size_t> picked;
  if (options.sample_size) {
    std::vector<std::size_t> lengths;
    for (const auto& f : ordered) {
      const auto& span = f.unit->functions.at(f.index);
      lengths.push_back(span.line_range.last - span.line_range.first + 1);
    }
    picked = sample_by_length_decile(lengths, *options.sample_size, options.seed);
  } else {
    picked.resize(ordered.size());
    std::iota(picked.begin(), picked.end(), 0);
  }

  std::vector<Built> built(picked.size());
  parallel_for(picked.size(), options.workers,
               [&](std::size_t i) { built[i] = build_one(ordered[picked[i]], options); });

  Dataset d;
  for (auto& b : built) {
    if (b.mutated) {
      d.mutated.push_back(std::move(*b.mutated));
    } else {
      ++d.insufficient;
      log::info("no mutable position in ", b.clean.source_ref.path, ":", b.clean.source_ref.first_line, " (",
                b.clean.source_ref.function, "); kept in the clean set only");
    }
    d.clean.push_back(std::move(b.clean));
  }
  if (d.insufficient) log::warn(d.insufficient, " function(s) had no mutation candidates");
  return d;
}

std::string dataset_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto* part : {&dataset.clean, &dataset.mutated}) {
    for (const auto& s : *part) {
      out += s.to_json().dump();
      out.push_back('\n');
    }
  }
  return out;
}

void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << dataset_jsonl(dataset);
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<LabeledSample> read_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(LabeledSample::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tibscan
