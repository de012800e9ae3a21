#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tibscan/gateway.hpp"
#include "tibscan/source.hpp"

namespace tibscan {

// ---------------------------------------------------------------------------
// embeddings

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// Similarity in [0, 1] of each candidate to `original`. Must be safe to
  /// call concurrently.
  virtual std::vector<double> similarities(const std::string& original,
                                           const std::vector<std::string>& candidates) = 0;
};

/// Frozen scores: {"scores": {"<original>": {"<candidate>": 0.81, ...}}}.
/// Pairs missing from the table score 0.
class FixtureEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit FixtureEmbeddingProvider(const json& fixture);
  std::vector<double> similarities(const std::string& original,
                                   const std::vector<std::string>& candidates) override;

 private:
  json scores_;
};

/// OpenAI-compatible /v1/embeddings client; similarity is cosine, clamped
/// at 0. Vectors are cached per token text.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(BackendProfile profile, std::string path = "/v1/embeddings");
  std::vector<double> similarities(const std::string& original,
                                   const std::vector<std::string>& candidates) override;

 private:
  std::vector<double> vector_for(const std::string& text);

  BackendProfile profile_;
  std::string path_;
  RateLimiter limiter_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

/// kind "scripted" loads profile.fixture as a score table.
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const BackendProfile& profile);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// mutations

struct MutationCandidate {
  std::shared_ptr<const InfillingTask> task;
  std::string substitute;
  double similarity = 0.0;
  bool same_kind = true;
};

/// Substitutes for the masked token. Identifiers draw on the variable and
/// call names in `scope`, preferring same-function tokens and falling back
/// to file-level ones only when the function offers none. Operators come
/// from the operator table, literals from scope literals of the same grammar
/// type. Every candidate re-parses in place. Sorted by similarity (when a
/// provider is given) descending, then text. Throws NoCandidates when empty.
std::vector<MutationCandidate> enumerate_mutations(const std::shared_ptr<const InfillingTask>& task,
                                                   const std::vector<ScopeToken>& scope,
                                                   EmbeddingProvider* embeddings = nullptr);

enum class SelectionPolicy { EmbeddingNearest, DeterministicFallback };

std::string_view to_string(SelectionPolicy policy) noexcept;

/// Same-kind candidates are preferred when any exist. EmbeddingNearest picks
/// the highest similarity strictly below 1; DeterministicFallback the
/// smallest edit distance relative to the longer text, ties by text.
const MutationCandidate& select_mutation(const std::vector<MutationCandidate>& candidates,
                                         SelectionPolicy policy);

// ---------------------------------------------------------------------------
// dataset

enum class SampleLabel { Clean, Mutated };

std::string_view to_string(SampleLabel label) noexcept;

struct Mutation {
  std::uint32_t line_no = 0;  // file line
  std::string original;
  std::string substitute;
  CodeTokenKind kind = CodeTokenKind::VariableUse;
  std::size_t offset = 0;  // byte offset into function_text
};

struct SourceRef {
  std::string path;
  std::uint32_t first_line = 1;  // file line of function_text's first line
  std::string function;
  std::string commit;
};

struct LabeledSample {
  std::string id;
  SampleLabel label = SampleLabel::Clean;
  Language language = Language::Python;
  std::string function_text;
  std::optional<Mutation> mutation;
  SourceRef source_ref;

  json to_json() const;
  /// Checks the label/mutation invariants; throws InvalidArgument.
  static LabeledSample from_json(const json& j);
};

struct SynthesisOptions {
  std::uint64_t seed = 0;
  /// Functions to draw, proportionally by length decile. Unset takes all.
  std::optional<std::size_t> sample_size;
  SelectionPolicy policy = SelectionPolicy::DeterministicFallback;
  EmbeddingProvider* embeddings = nullptr;  // required by EmbeddingNearest
  unsigned workers = 1;
  std::string commit;
};

struct Dataset {
  std::vector<LabeledSample> clean;    // D
  std::vector<LabeledSample> mutated;  // D'
  /// Functions with no mutable position; they appear in `clean` only.
  std::size_t insufficient = 0;
};

struct FunctionRef {
  SourceUnitPtr unit;
  std::size_t index = 0;
};

/// Indices of `lengths` to draw: items are ordered by length (then index),
/// cut into ten equal-count groups, and each group gets a share of `n` by
/// largest remainder. Result is sorted.
std::vector<std::size_t> sample_by_length_decile(const std::vector<std::size_t>& lengths, std::size_t n,
                                                 std::uint64_t seed);

Dataset build_dataset(const std::vector<FunctionRef>& functions, const SynthesisOptions& options);

/// One sample per line, D before D'.
void write_dataset_jsonl(const std::filesystem::path& path, const Dataset& dataset);
std::string dataset_jsonl(const Dataset& dataset);
std::vector<LabeledSample> read_dataset_jsonl(const std::filesystem::path& path);

}  // namespace tibscan
