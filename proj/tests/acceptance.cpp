// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.

#include <tree_sitter/api.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tibscan/cascade.hpp"
#include "tibscan/consistency.hpp"
#include "tibscan/error.hpp"
#include "tibscan/log.hpp"
#include "tibscan/metrics.hpp"
#include "tibscan/pipeline.hpp"
#include "tibscan/prompt.hpp"
#include "tibscan/synthesizer.hpp"
#include "tibscan/text.hpp"

extern "C" const TSLanguage* tree_sitter_python(void);
extern "C" const TSLanguage* tree_sitter_c(void);

using namespace tibscan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

struct Scratch {
  fs::path path;
  explicit Scratch(const std::string& name) {
    path = fs::temp_directory_path() / ("tibscan-acceptance-" + std::to_string(::getpid()) + "-" + name);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
};

unsigned hw_workers() { return std::max(2u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// 1. consistency check against a reference interpreter

struct RefCandidate {
  std::string text;
  double prob;
  bool valid;
};

struct RefResult {
  bool consistent;
  std::string reason;
};

// Direct transcription of the decoding loop: top-k by probability, invalid
// candidates skipped, a valid prefix of the remaining original is accepted,
// a valid confident deviation ends the check, other valid deviations add one
// rank each; no valid candidate or the step cap also end it.
RefResult reference_check(const std::string& original, const std::map<std::string, std::vector<RefCandidate>>& table,
                          double prob_thresh, std::size_t rank_thresh, std::size_t k, std::size_t max_steps) {
  std::string left = original, generated;
  std::size_t rank_sum = 0, steps = 0;
  while (!left.empty()) {
    if (steps >= max_steps) return {false, "step_cap"};
    std::vector<RefCandidate> top = table.at(generated);
    std::sort(top.begin(), top.end(), [](const RefCandidate& a, const RefCandidate& b) {
      return a.prob != b.prob ? a.prob > b.prob : a.text < b.text;
    });
    if (top.size() > k) top.resize(k);
    ++steps;
    bool any_valid = false;
    for (const auto& c : top) {
      if (!c.valid) continue;
      any_valid = true;
      if (left.compare(0, c.text.size(), c.text) == 0) {
        left.erase(0, c.text.size());
        generated += c.text;
        break;
      }
      if (c.prob > prob_thresh) return {false, "confident_deviation"};
      ++rank_sum;
    }
    if (!any_valid) return {false, "exhausted"};
    if (rank_sum > rank_thresh) return {false, "rank_exceeded"};
  }
  return {true, "matched"};
}

Outcome check_consistency_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(20240601);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(gen); };
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen); };
  const std::string letters = "abcdefghijklmnopqrstuvwxyz_";
  const std::vector<std::string> invalid = {"(", ")", "\"\"\"", "#", ",", ":", "[", "=", "\n", ".", "{"};
  auto word = [&](std::size_t lo, std::size_t hi) {
    std::string w;
    const std::size_t n = lo + pick(hi - lo + 1);
    for (std::size_t i = 0; i < n; ++i) w += letters[pick(letters.size())];
    return w;
  };

  const std::size_t cases = 2000;
  std::size_t mismatches = 0, flag_errors = 0, consistent = 0;
  std::map<std::string, std::size_t> reasons;
  std::string first_mismatch;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::string original = word(1, 10);
    const CodeTokenKind kind = pick(2) ? CodeTokenKind::VariableUse : CodeTokenKind::FunctionCall;
    const double prob_thresh = uni(0.3, 0.99);
    const std::size_t rank_thresh = pick(5);
    const std::size_t k = 1 + pick(10);
    const std::size_t max_steps = 4 + pick(13);
    const double p_match = uni(0.2, 0.95);

    // Rows for every forced prefix of the original, generated up front.
    std::map<std::string, std::vector<RefCandidate>> table;
    for (std::size_t pos = 0; pos < original.size(); ++pos) {
      std::vector<RefCandidate> row;
      const std::size_t n = 1 + pick(10);
      for (std::size_t i = 0; i < n; ++i) {
        RefCandidate cand;
        cand.prob = uni(0.001, 1.0);
        const double r = uni(0, 1);
        if (r < 0.3) {
          cand.text = invalid[pick(invalid.size())];
          cand.valid = false;
        } else if (r < 0.3 + 0.7 * p_match && i < 3) {
          cand.text = original.substr(pos, 1 + pick(original.size() - pos));
          cand.valid = true;
        } else {
          cand.text = word(1, 4);
          cand.valid = true;
        }
        row.push_back(cand);
      }
      table[original.substr(0, pos)] = std::move(row);
    }

    // The generated flags must agree with the token validator.
    for (const auto& [forced, row] : table) {
      for (const auto& cand : row) {
        if (validate_token(cand.text, kind, Language::Python, forced) != cand.valid) ++flag_errors;
      }
    }

    json tables = json::array();
    for (const auto& [forced, row] : table) {
      json cands = json::array();
      for (const auto& cand : row) cands.push_back(json::array({cand.text, cand.prob}));
      tables.push_back({{"forced", forced}, {"candidates", cands}});
    }
    auto task = std::make_shared<InfillingTask>();
    task->task_id = "case-" + std::to_string(c);
    task->original = original;
    task->kind = kind;
    BackendProfile profile;
    profile.name = "ref";
    profile.kind = "scripted";
    ScriptedCompletionBackend backend(profile, json{{"tables", {{task->task_id, tables}}}, {"default", "error"}});
    ConsistencyConfig cfg;
    cfg.prob_thresh = prob_thresh;
    cfg.rank_thresh = rank_thresh;
    cfg.k = k;
    cfg.max_steps = max_steps;

    const RefResult want = reference_check(original, table, prob_thresh, rank_thresh, k, max_steps);
    const ConsistencyVerdict got = check_consistency(task, backend, cfg);
    ++reasons[want.reason];
    consistent += want.consistent;
    if (got.consistent != want.consistent || std::string(to_string(got.reason)) != want.reason) {
      if (mismatches++ == 0) {
        first_mismatch = fmt(" first mismatch case %zu: want %s got %s", c, want.reason.c_str(),
                             std::string(to_string(got.reason)).c_str());
      }
    }
  }
  const double secs = since(t0);
  std::string mix;
  for (const auto& [r, n] : reasons) mix += fmt(" %s=%zu", r.c_str(), n);
  return {mismatches == 0 && flag_errors == 0 && secs < 10.0,
          fmt("%zu cases, %zu mismatches, %zu flag errors, %zu consistent;", cases, mismatches, flag_errors,
              consistent) +
              mix + fmt("; %.2f s", secs) + first_mismatch};
}

// ---------------------------------------------------------------------------
// 2. analytic cascade against Monte-Carlo

// True when x successes out of n lie inside the central 99.73% (3 sigma)
// region of Binomial(n, p), from the exact tail on x's side of the mean.
bool within_binomial_bounds(std::uint64_t x, std::uint64_t n, double p) {
  constexpr double alpha = 0.0026997961 / 2;
  if (p <= 0.0) return x == 0;
  if (p >= 1.0) return x == n;
  const double lp = std::log(p), lq = std::log1p(-p), ln = std::lgamma(static_cast<double>(n) + 1);
  auto log_pmf = [&](std::uint64_t k) {
    const double kd = static_cast<double>(k), nk = static_cast<double>(n - k);
    return ln - std::lgamma(kd + 1) - std::lgamma(nk + 1) + kd * lp + nk * lq;
  };
  const bool lower = static_cast<double>(x) <= static_cast<double>(n) * p;
  double tail = 0;
  for (std::uint64_t k = x;; lower ? --k : ++k) {
    const double term = std::exp(log_pmf(k));
    tail += term;
    if (tail >= alpha) return true;
    if (term < 1e-30 || (lower && k == 0) || (!lower && k == n)) return false;
  }
}

Outcome check_cascade_montecarlo() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(777);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(gen); };
  const double eps_choices[] = {1e-2, 1e-3, 1e-4};
  const std::uint64_t n0 = 1000000;
  std::size_t checks = 0, outside = 0, outside_normal = 0;
  double worst = 0, z2 = 0;
  std::string worst_where, first_outside;
  for (int config = 0; config < 50; ++config) {
    const std::size_t n = 2 + gen() % 4;
    std::vector<StageProfile> stages;
    for (std::size_t i = 0; i < n; ++i) {
      StageProfile s;
      s.name = "s" + std::to_string(i);
      s.p = uni(0.5, 1.0);
      s.q = uni(0.5, 1.0);
      s.t = uni(0.1, 10.0);
      s.chat = i + 1 == n;
      stages.push_back(s);
    }
    CostParams params;
    params.epsilon0 = eps_choices[gen() % 3];
    const PipelineOutcome a = evaluate_pipeline(stages, static_cast<double>(n0), params);
    const PipelineOutcome m = simulate_pipeline(stages, n0, params, 1000 + config, hw_workers());

    // x successes of n trials against rate p; z uses the normal approximation.
    auto test = [&](double x, double trials, double p, const std::string& what) {
      ++checks;
      const double sigma = std::sqrt(trials * p * (1 - p));
      const double z = sigma > 0 ? std::fabs(x - trials * p) / sigma : (x == trials * p ? 0 : INFINITY);
      if (z > 3.0) ++outside_normal;
      z2 += z * z;
      const std::string where = fmt("config %d ", config) + what;
      if (z > worst) {
        worst = z;
        worst_where = where;
      }
      if (!within_binomial_bounds(static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(trials), p)) {
        if (outside++ == 0) first_outside = "; first outside: " + where;
      }
    };
    double survive = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double passed = m.stages[i].n_tp + m.stages[i].n_fp;
      const double e = a.stages[i].epsilon_after;
      test(m.stages[i].n_tp, passed, e,
           fmt("eps_%zu, %.0f passed, expected %.4f observed %.4f", i + 1, passed, e, m.stages[i].epsilon_after));
      survive *= stages[i].q;
    }
    test(m.missed, static_cast<double>(n0), params.epsilon0 * (1 - survive),
         fmt("M, expected %.1f observed %.0f", a.missed, m.missed));
  }
  const double secs = since(t0);
  return {outside == 0 && secs < 60.0,
          fmt("%zu comparisons, %zu outside exact binomial 3-sigma bounds (%zu by normal approximation), "
              "mean z^2 %.2f, max |z| %.2f at ",
              checks, outside, outside_normal, z2 / static_cast<double>(checks), worst) +
              worst_where + first_outside + fmt("; %.1f s", secs)};
}

// ---------------------------------------------------------------------------
// 3. density recurrence fixed points

Outcome check_fixed_points() {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t zero_bad = 0, one_bad = 0, n = 0;
  for (int i = 0; i < 10000; ++i) {
    const double p = u(gen), q = std::max(1e-12, u(gen)), eps = std::max(1e-300, u(gen));
    ++n;
    if (density_after(0.0, p, q) != 0.0) ++zero_bad;
    if (density_after(eps, 1.0, q) != 1.0) ++one_bad;
  }
  if (density_after(0.0, 1.0, 1.0) != 0.0) ++zero_bad;
  return {zero_bad == 0 && one_bad == 0,
          fmt("%zu random (p, q, eps): eps=0 gave non-zero %zu times, p=1 gave non-one %zu times", n, zero_bad, one_bad)};
}

// ---------------------------------------------------------------------------
// 4. cost sweep orderings

Outcome check_cost_trends() {
  const double eps_values[] = {1e-4, 1e-3, 1e-2};
  std::map<double, std::map<double, std::map<std::size_t, double>>> cost;  // p -> eps -> n -> C
  std::map<double, std::map<double, std::size_t>> best;
  for (double p : {0.8, 0.6}) {
    std::vector<StageProfile> pool;
    for (int i = 0; i < 4; ++i) pool.push_back({"local" + std::to_string(i), p, 0.98, 5.0, "", false});
    pool.push_back({"chat", 0.442, 0.84, 10.0, "", true});
    for (double eps : eps_values) {
      CostParams params;
      params.epsilon0 = eps;
      double lowest = INFINITY;
      for (const auto& r : sweep_configurations(pool, {2, 3, 4, 5}, 1000.0, params)) {
        const std::size_t n = r.stage_names.size();
        if (!cost[p][eps].count(n)) cost[p][eps][n] = r.outcome.cost;
        cost[p][eps][n] = std::min(cost[p][eps][n], r.outcome.cost);
        if (r.outcome.cost < lowest) {
          lowest = r.outcome.cost;
          best[p][eps] = n;
        }
      }
    }
  }
  bool ordering = true;
  std::string detail;
  for (double p : {0.8, 0.6}) {
    detail += fmt("p=%.1f optimal n", p);
    for (std::size_t i = 0; i < 3; ++i) {
      detail += fmt(" %zu", best[p][eps_values[i]]);
      if (i > 0 && best[p][eps_values[i]] > best[p][eps_values[i - 1]]) ordering = false;
    }
    if (best[p][eps_values[2]] >= best[p][eps_values[0]]) ordering = false;
    detail += "; ";
  }
  std::size_t cheaper = 0, cells = 0;
  for (double eps : eps_values) {
    for (std::size_t n = 2; n <= 5; ++n) {
      ++cells;
      if (cost[0.8][eps][n] < cost[0.6][eps][n]) ++cheaper;
    }
  }
  detail += fmt("p=0.8 cheaper in %zu/%zu cells; at eps=1e-3 C(n=2..5) = %.1f %.1f %.1f %.1f", cheaper, cells,
                cost[0.8][1e-3][2], cost[0.8][1e-3][3], cost[0.8][1e-3][4], cost[0.8][1e-3][5]);
  return {ordering && cheaper == cells, detail};
}

// ---------------------------------------------------------------------------
// 5. metric arithmetic

Outcome check_metric_arithmetic() {
  struct Row {
    const char* name;
    std::size_t tp_f, fn_f, fp_l, excluded;
    double recall, specificity;
  };
  const Row rows[] = {{"1", 72, 28, 404, 0, 72.0, 0.0},
                      {"1/2FTCa", 72, 28, 294, 92, 72.0, 23.8},
                      {"1/2FTCa+HL", 84, 16, 174, 138, 84.0, 44.2}};
  std::size_t ok = 0, total = 0;
  std::string detail;
  for (const auto& r : rows) {
    MetricsSummary m;
    m.mutated_samples = r.tp_f + r.fn_f;
    m.clean_samples = 100;
    m.tp_f = r.tp_f;
    m.fn_f = r.fn_f;
    m.fp_l = r.fp_l;
    m.excluded_fp_l = r.excluded;
    m.derive();
    total += 2;
    ok += (m.recall_f && *m.recall_f == r.recall) + (m.specificity_l && *m.specificity_l == r.specificity);
    detail += fmt("%s %.1f/%.1f; ", r.name, m.recall_f.value_or(-1), m.specificity_l.value_or(-1));
  }
  const auto p1 = precision(314, 74), p2 = precision(77, 28);
  total += 2;
  ok += (p1 && std::fabs(*p1 - 23.57) < 1e-9) + (p2 && std::fabs(*p2 - 36.36) < 1e-9);
  detail += fmt("precision %.2f%% %.2f%%", p1.value_or(-1), p2.value_or(-1));
  return {ok == total, fmt("%zu/%zu values; ", ok, total) + detail};
}

// ---------------------------------------------------------------------------
// 6. prompt goldens

Outcome check_goldens() {
  const fs::path data = TIBSCAN_TEST_DATA;
  const Snippet snippet{slurp(data / "fixtures" / "buggy_snippet.py"), 987, Language::Python};
  HighlightSet hl;
  hl.add(991);
  std::size_t ok = 0;
  std::string bad;
  const auto ids = template_ids();
  for (const auto& id : ids) {
    std::string slug = id;
    std::replace(slug.begin(), slug.end(), '/', '_');
    std::replace(slug.begin(), slug.end(), '+', '_');
    const auto& t = find_template(id);
    std::string out;
    for (std::size_t r = 0; r < t.rounds.size(); ++r) {
      const auto rendered = render_round(t, r, snippet, t.supports_highlights() ? &hl : nullptr);
      if (r == 0) out = "=== system ===\n" + rendered.system + "\n";
      out += "=== round " + std::to_string(r + 1) + " ===\n" + rendered.user + "\n";
    }
    const fs::path golden = data / "golden" / (slug + ".txt");
    if (fs::exists(golden) && out == slurp(golden)) {
      ++ok;
    } else {
      bad += " " + id;
    }
  }
  return {ok == 7 && ids.size() == 7, fmt("%zu/%zu templates byte-identical", ok, ids.size()) +
                                          (bad.empty() ? "" : "; differing:" + bad)};
}

// ---------------------------------------------------------------------------
// corpus generation shared by 7 and 9

std::string py_function(std::size_t i) {
  const std::string n = std::to_string(i);
  const std::string k = std::to_string(i % 9 + 2);
  switch (i % 10) {
    case 0:
      return "def total_" + n + "(items, start):\n    acc = start\n    for item in items:\n        acc = acc + item * " +
             k + "\n    return acc\n";
    case 1:
      return "def clamp_" + n +
             "(value, low, high):\n    if value < low:\n        return low\n    if value > high:\n        return high\n"
             "    return value\n";
    case 2:
      return "def find_" + n +
             "(names, target):\n    for index, name in enumerate(names):\n        if name == target:\n"
             "            return index\n    return -1\n";
    case 3:
      return "def merge_" + n +
             "(left, right):\n    result = dict(left)\n    for key, val in right.items():\n        if key not in result:\n"
             "            result[key] = val\n    return result\n";
    case 4:
      return "def ratio_" + n + "(count, total):\n    if total == 0:\n        return 0.0\n    return round(count / total, " +
             k + ")\n";
    case 5:
      return "def window_" + n +
             "(data, size):\n    out = []\n    for start in range(0, len(data) - size + 1):\n"
             "        out.append(sum(data[start:start + size]) / size)\n    return out\n";
    case 6:
      return "def parse_" + n +
             "(line, sep=\",\"):\n    fields = line.strip().split(sep)\n    if len(fields) < " + k +
             ":\n        raise ValueError(\"short line\")\n    return [f.strip() for f in fields]\n";
    case 7:
      return "def retry_" + n +
             "(func, attempts, delay):\n    last = None\n    for attempt in range(attempts):\n        try:\n"
             "            return func()\n        except OSError as err:\n            last = err\n"
             "            time.sleep(delay * (attempt + 1))\n    raise last\n";
    case 8:
      return "def bucket_" + n +
             "(scores, width):\n    counts = {}\n    for score in scores:\n        slot = score // width\n"
             "        counts[slot] = counts.get(slot, 0) + 1\n    return counts\n";
    default:
      return "def scale_" + n +
             "(matrix, factor, offset):\n    rows = []\n    for row in matrix:\n"
             "        rows.append([cell * factor + offset for cell in row])\n    return rows\n";
  }
}

std::string c_function(std::size_t i) {
  const std::string n = std::to_string(i);
  const std::string k = std::to_string(i % 7 + 1);
  switch (i % 4) {
    case 0:
      return "int sum_" + n +
             "(const int *values, int count) {\n    int total = 0;\n    for (int i = 0; i < count; i++) {\n"
             "        total += values[i];\n    }\n    return total;\n}\n";
    case 1:
      return "static int max_" + n +
             "(int a, int b) {\n    if (a > b)\n        return a;\n    return b;\n}\n";
    case 2:
      return "size_t copy_" + n +
             "(char *dst, const char *src, size_t cap) {\n    size_t len = strlen(src);\n    if (len >= cap)\n"
             "        len = cap - " + k + ";\n    memcpy(dst, src, len);\n    dst[len] = '\\0';\n    return len;\n}\n";
    default:
      return "double mean_" + n +
             "(const double *xs, int n) {\n    double acc = 0.0;\n    if (n <= 0)\n        return 0.0;\n"
             "    for (int j = 0; j < n; j++)\n        acc += xs[j] * " + k + ";\n    return acc / n;\n}\n";
  }
}

/// 500 functions: 400 Python in 40 files, 100 C in 10 files.
void write_corpus(const fs::path& root) {
  for (std::size_t f = 0; f < 40; ++f) {
    std::string text = "import time\n\n\n";
    for (std::size_t j = 0; j < 10; ++j) text += py_function(f * 10 + j) + (j + 1 < 10 ? "\n\n" : "");
    write_file(root / "py" / ("mod_" + std::to_string(f) + ".py"), text);
  }
  for (std::size_t f = 0; f < 10; ++f) {
    std::string text = "#include <string.h>\n\n";
    for (std::size_t j = 0; j < 10; ++j) text += c_function(f * 10 + j) + (j + 1 < 10 ? "\n" : "");
    write_file(root / "c" / ("unit_" + std::to_string(f) + ".c"), text);
  }
}

// ---------------------------------------------------------------------------
// 7. one-edit dataset property

struct Leaf {
  std::uint32_t begin, end;
};

void collect_leaves(TSNode node, std::vector<Leaf>& out) {
  const std::string_view type = ts_node_type(node);
  const std::uint32_t count = ts_node_child_count(node);
  if (count == 0 || type == "string" || type == "string_literal" || type == "char_literal") {
    const std::uint32_t b = ts_node_start_byte(node), e = ts_node_end_byte(node);
    if (e > b) out.push_back({b, e});
    return;
  }
  for (std::uint32_t i = 0; i < count; ++i) collect_leaves(ts_node_child(node, i), out);
}

struct Parsed {
  bool error = true;
  std::vector<Leaf> leaves;
};

Parsed parse_leaves(const std::string& text, Language lang) {
  TSParser* parser = ts_parser_new();
  ts_parser_set_language(parser, lang == Language::C ? tree_sitter_c() : tree_sitter_python());
  TSTree* tree = ts_parser_parse_string(parser, nullptr, text.data(), static_cast<std::uint32_t>(text.size()));
  Parsed p;
  TSNode root = ts_tree_root_node(tree);
  p.error = ts_node_has_error(root);
  collect_leaves(root, p.leaves);
  ts_tree_delete(tree);
  ts_parser_delete(parser);
  return p;
}

std::string one_edit_problem(const LabeledSample& clean, const LabeledSample& mut) {
  const Mutation& m = *mut.mutation;
  if (m.original == m.substitute) return "substitute equals original";
  if (clean.function_text.compare(m.offset, m.original.size(), m.original) != 0) return "original not at offset";
  std::string spliced = clean.function_text;
  spliced.replace(m.offset, m.original.size(), m.substitute);
  if (spliced != mut.function_text) return "texts differ outside the span";
  const auto line_of_offset =
      static_cast<std::uint32_t>(std::count(clean.function_text.begin(), clean.function_text.begin() + m.offset, '\n'));
  if (mut.source_ref.first_line + line_of_offset != m.line_no) return "line number mismatch";
  const Parsed a = parse_leaves(clean.function_text, clean.language);
  const Parsed b = parse_leaves(mut.function_text, mut.language);
  if (b.error) return "mutated text does not parse";
  if (a.leaves.size() != b.leaves.size()) return "token count changed";
  std::size_t diffs = 0, where = 0;
  for (std::size_t i = 0; i < a.leaves.size(); ++i) {
    const auto ta = std::string_view(clean.function_text).substr(a.leaves[i].begin, a.leaves[i].end - a.leaves[i].begin);
    const auto tb = std::string_view(mut.function_text).substr(b.leaves[i].begin, b.leaves[i].end - b.leaves[i].begin);
    if (ta != tb) {
      ++diffs;
      where = i;
    }
  }
  if (diffs != 1) return fmt("%zu tokens differ", diffs);
  if (a.leaves[where].begin != m.offset || b.leaves[where].begin != m.offset) return "differing token not at span";
  return {};
}

std::vector<FunctionRef> corpus_refs(const fs::path& root) {
  std::vector<FunctionRef> refs;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto unit = load_unit(f);
    for (std::size_t i = 0; i < unit->functions.size(); ++i) refs.push_back({unit, i});
  }
  return refs;
}

Outcome check_one_edit() {
  const auto t0 = Clock::now();
  Scratch dir("corpus");
  write_corpus(dir.path);
  const auto refs = corpus_refs(dir.path);
  SynthesisOptions opts;
  opts.seed = 11;
  opts.workers = hw_workers();
  const Dataset d = build_dataset(refs, opts);
  std::map<std::string, const LabeledSample*> clean_by_key;
  for (const auto& s : d.clean) {
    clean_by_key[s.source_ref.path + ":" + std::to_string(s.source_ref.first_line)] = &s;
  }
  std::size_t good = 0;
  std::string first_bad;
  for (const auto& m : d.mutated) {
    const auto it = clean_by_key.find(m.source_ref.path + ":" + std::to_string(m.source_ref.first_line));
    const std::string problem = it == clean_by_key.end() ? "no clean counterpart" : one_edit_problem(*it->second, m);
    if (problem.empty()) {
      ++good;
    } else if (first_bad.empty()) {
      first_bad = "; first failure " + m.id + ": " + problem;
    }
  }
  const double secs = since(t0);
  const bool pass = refs.size() == 500 && !d.mutated.empty() && good == d.mutated.size() && secs < 30.0;
  return {pass, fmt("%zu functions, %zu mutated samples, %zu one-token edits that parse, %zu without candidates; %.1f s",
                    refs.size(), d.mutated.size(), good, d.insufficient, secs) +
                    first_bad};
}

// ---------------------------------------------------------------------------
// 8. end-to-end funnel

struct Plant {
  std::string file;     // display path
  std::uint32_t line;   // file line
  std::size_t offset;   // byte offset in the file
  std::string function;
  std::string code_line;
};

struct PlantedRepo {
  std::vector<Plant> plants;
};

// 50 functions in 5 files with one planted substitution per file.
PlantedRepo write_planted_repo(const fs::path& base) {
  struct Spec {
    std::size_t index;       // function index
    std::string original;    // token to replace
    std::string substitute;
    std::size_t line;        // 0-based line within the function
    std::size_t occurrence;  // which occurrence on that line
  };
  const std::map<std::size_t, Spec> plants = {
      {3, {3, "val", "key", 4, 0}},     {11, {11, "low", "high", 1, 0}}, {24, {24, "count", "total", 3, 0}},
      {32, {32, "name", "names", 2, 0}}, {40, {40, "item", "items", 3, 0}},
  };
  PlantedRepo repo;
  for (std::size_t f = 0; f < 5; ++f) {
    std::string text;
    const std::string display = "repo/pkg/mod_" + std::to_string(f) + ".py";
    for (std::size_t j = 0; j < 10; ++j) {
      const std::size_t g = f * 10 + j;
      std::string fn = py_function(g);
      if (auto it = plants.find(g); it != plants.end()) {
        const Spec& s = it->second;
        const auto lines = text::split_lines(fn);
        std::size_t line_start = 0;
        for (std::size_t l = 0; l < s.line; ++l) line_start += lines[l].size() + 1;
        const std::string line(lines[s.line]);
        // Token boundaries: the occurrence must not sit inside a longer name.
        std::size_t col = std::string::npos, seen = 0;
        for (std::size_t pos = line.find(s.original); pos != std::string::npos; pos = line.find(s.original, pos + 1)) {
          auto ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
          const bool left_ok = pos == 0 || !ident(line[pos - 1]);
          const bool right_ok = pos + s.original.size() >= line.size() || !ident(line[pos + s.original.size()]);
          if (left_ok && right_ok && seen++ == s.occurrence) {
            col = pos;
            break;
          }
        }
        if (col == std::string::npos) throw Error(ErrorCode::InvalidArgument, "plant site not found");
        fn.replace(line_start + col, s.original.size(), s.substitute);
        std::string new_line = line;
        new_line.replace(col, s.original.size(), s.substitute);
        const auto file_line = static_cast<std::uint32_t>(std::count(text.begin(), text.end(), '\n') + s.line + 1);
        const std::string name = fn.substr(4, fn.find('(') - 4);
        repo.plants.push_back({display, file_line, text.size() + line_start + col, name,
                               std::string(text::trim(new_line))});
      }
      text += fn + (j + 1 < 10 ? "\n\n" : "");
    }
    write_file(base / display, text);
  }
  return repo;
}

std::string deviation_for(const InfillingTask& t) {
  for (const char* tok : {"zq", "%", "9", "+", "-", "7", "True", "<"}) {
    if (t.original.rfind(tok, 0) == 0) continue;
    if (validate_token(tok, t.kind, Language::Python, "")) return tok;
  }
  throw Error(ErrorCode::InvalidArgument, "no deviation token for " + t.original);
}

struct FunnelSetup {
  PlantedRepo repo;
  json config;
  std::size_t clean_tasks = 0;
};

FunnelSetup setup_funnel(const fs::path& base) {
  FunnelSetup s;
  s.repo = write_planted_repo(base);
  std::set<std::pair<std::string, std::size_t>> planted_sites;
  for (const auto& p : s.repo.plants) planted_sites.insert({p.file, p.offset});

  std::vector<json> stage_tables(3, json::object());
  for (std::size_t f = 0; f < 5; ++f) {
    const std::string display = "repo/pkg/mod_" + std::to_string(f) + ".py";
    auto unit = parse_unit(display, Language::Python, slurp(base / display));
    for (const auto& t : enumerate_tasks(unit, ContextStrategy::Function, {}).tasks) {
      const bool planted = planted_sites.count({display, t.mask.begin}) > 0;
      s.clean_tasks += planted ? 0 : 1;
      const json row = json::array(
          {{{"forced", ""}, {"candidates", json::array({json::array({deviation_for(t), 0.95})})}}});
      for (std::size_t stage = 0; stage < 3; ++stage) {
        // q = 1 on planted sites, p = 0.8 elsewhere via a fixed hash.
        const bool flag = planted || text::fnv1a(t.task_id + "#" + std::to_string(stage)) % 5 == 0;
        if (flag) stage_tables[stage][t.task_id] = row;
      }
    }
  }
  json profiles = json::array();
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::string name = "local" + std::to_string(stage + 1);
    write_file(base / (name + ".json"), json{{"tables", stage_tables[stage]}, {"default", "echo"}}.dump());
    profiles.push_back({{"name", name},
                        {"kind", "scripted"},
                        {"fixture", name + ".json"},
                        {"capabilities", {{"completion_logprobs", true}}},
                        {"price_per_call", 0.0}});
  }
  json rules = json::array();
  for (const auto& p : s.repo.plants) {
    rules.push_back({{"contains", "def " + p.function + "("},
                     {"response",
                      {{"bugs",
                        {{{"code_line", p.code_line},
                          {"explanation", "the wrong variable is used here"},
                          {"fixed_line", p.code_line},
                          {"token_level", true},
                          {"category", "Logic Bug"}}}}}}});
  }
  write_file(base / "chat.json", json{{"rules", rules}, {"default", {{"bugs", json::array()}}}}.dump());
  profiles.push_back({{"name", "chat"},
                      {"kind", "scripted"},
                      {"fixture", "chat.json"},
                      {"capabilities", {{"chat_json", true}}},
                      {"price_per_call", 0.025}});
  s.config = {{"language", "python"},
              {"paths", {"repo"}},
              {"profiles", profiles},
              {"stages", {"local1", "local2", "local3", "chat"}},
              {"output_dir", "out"},
              {"seed", 5}};
  return s;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

Outcome check_funnel() {
  Scratch dir("funnel");
  const FunnelSetup s = setup_funnel(dir.path);
  const RunConfig config = parse_run_config(s.config, dir.path);
  const ScanResult res = run_scan(config);
  const auto reports = read_jsonl(dir.path / "out" / "reports.jsonl");

  std::set<std::pair<std::string, std::uint32_t>> expected, got;
  for (const auto& p : s.repo.plants) expected.insert({p.file, p.line});
  std::size_t exact = 0;
  for (const auto& r : reports) {
    if (!r["line_no"].is_null()) got.insert({r["file"].get<std::string>(), r["line_no"].get<std::uint32_t>()});
    exact += r["line_resolution"] == "exact";
  }
  std::size_t funnel = 0;
  for (const auto& step : res.summary["funnel"]) funnel += step["tasks"].get<std::size_t>();
  const std::size_t initial = res.summary["tasks"]["initial"];

  std::size_t ledger = 0;
  for (const auto& f : read_jsonl(dir.path / "out" / "findings.jsonl")) ledger += f["api_calls"].get<std::size_t>();
  const std::size_t api_calls = res.summary["chat"]["api_calls"];

  std::string stages;
  for (const auto& st : res.summary["stages"]) {
    stages += fmt(" %s %zu->%zu", st["stage"].get<std::string>().c_str(), st["in"].get<std::size_t>(),
                  st["out"].get<std::size_t>());
  }
  const bool pass = reports.size() == 5 && got == expected && exact == 5 && funnel == initial &&
                    ledger == api_calls && !res.partial;
  return {pass, fmt("%zu reports (%zu exact, %zu on planted lines); funnel %zu/%zu tasks;", reports.size(), exact,
                    [&] {
                      std::size_t n = 0;
                      for (const auto& g : got) n += expected.count(g);
                      return n;
                    }(),
                    funnel, initial) +
                    stages + fmt("; %zu chat calls, ledger %zu", api_calls, ledger)};
}

// ---------------------------------------------------------------------------
// 9. determinism

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

Outcome check_determinism() {
  Scratch dir("determinism");
  const FunnelSetup s = setup_funnel(dir.path / "scan");
  write_corpus(dir.path / "synth" / "corpus");

  std::vector<std::map<std::string, std::string>> scans, synths;
  for (unsigned workers : {1u, 1u, 8u}) {
    json cfg = s.config;
    cfg["workers"] = workers;
    cfg["output_dir"] = "out-" + std::to_string(scans.size());
    const RunConfig c = parse_run_config(cfg, dir.path / "scan");
    run_scan(c);
    scans.push_back(snapshot(c.output_dir));

    const json synth_cfg = {{"paths", {"corpus"}}, {"language", "python"}, {"workers", workers}, {"seed", 3},
                            {"output_dir", "out-" + std::to_string(synths.size())}};
    const RunConfig sc = parse_run_config(synth_cfg, dir.path / "synth");
    run_synthesize(sc);
    synths.push_back(snapshot(sc.output_dir));
  }
  auto jsonl_count = [](const std::map<std::string, std::string>& m) {
    std::size_t n = 0;
    for (const auto& [name, body] : m) n += name.size() > 6 && name.substr(name.size() - 6) == ".jsonl";
    return n;
  };
  const bool scan_same = scans[0] == scans[1] && scans[0] == scans[2];
  const bool synth_same = synths[0] == synths[1] && synths[0] == synths[2];
  const std::size_t dataset_bytes = synths[0].count("dataset.jsonl") ? synths[0]["dataset.jsonl"].size() : 0;
  return {scan_same && synth_same && jsonl_count(scans[0]) == 4 && dataset_bytes > 0,
          fmt("scan: %zu files %s across runs and 1/8 workers; synthesize: %zu files (%zu-byte dataset) %s", scans[0].size(),
              scan_same ? "identical" : "DIFFER", synths[0].size(), dataset_bytes,
              synth_same ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  log::set_level(log::Level::Error);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"consistency check agrees with a reference interpreter on random step tables", check_consistency_oracle},
      {"analytic cascade counts lie within 3 sigma of Monte-Carlo runs", check_cascade_montecarlo},
      {"density recurrence fixed points are exact", check_fixed_points},
      {"cost sweep orderings over eps0 and stage specificity", check_cost_trends},
      {"metric arithmetic on reference confusion counts", check_metric_arithmetic},
      {"rendered prompts match the golden transcripts", check_goldens},
      {"synthesized mutations are single-token edits that parse", check_one_edit},
      {"end-to-end funnel reports exactly the planted bugs", check_funnel},
      {"scan and synthesize outputs are byte-identical across runs and workers", check_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
