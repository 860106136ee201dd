#pragma once

#include <functional>

#include "mmt/model.hpp"

namespace mmt {

// The per-clip evaluation pool: exactly one ground truth, up to 20 popular
// comments, uniform random fill without replacement, no duplicates.
struct CandidateSet {
  enum class Provenance { ground_truth, popular, random };

  std::string clip_id;
  std::vector<std::vector<std::string>> candidates;  // token lists
  std::vector<Provenance> provenance;
  std::int64_t ground_truth_index = -1;
};

struct RankingResult {
  std::string clip_id;
  std::vector<double> scores;
  std::vector<std::int64_t> order;  // descending score, ascending index on ties
  std::int64_t gt_rank = 0;         // 1-based
};

struct MetricReport {
  double recall_at_1 = 0.0;
  double recall_at_5 = 0.0;
  double recall_at_10 = 0.0;
  double mean_rank = 0.0;
  double mrr = 0.0;
  std::int64_t n_clips = 0;
};

// The k most frequent candidate strings (ties lexicographic ascending).
std::vector<std::string> popular_comments(const std::vector<ClipRecord>& records,
                                          std::int64_t k = 20);

// Unique candidate strings of a split, sorted: the random-fill pool for that
// split's candidate sets.
std::vector<std::string> candidate_pool(const std::vector<ClipRecord>& records);

CandidateSet build_candidate_set(const ClipRecord& clip, const std::vector<std::string>& popular,
                                 const std::vector<std::string>& pool, std::int64_t size,
                                 Rng& rng);

// Deterministic ordering of raw scores; shared by rank() and metric tests.
RankingResult rank_scores(std::string clip_id, std::vector<double> scores,
                          std::int64_t gt_index);

RankingResult rank(const ClipContext& context, const CandidateSet& set,
                   const MatchingModel& model, const Vocabulary& vocab);

double recall_at_k(const std::vector<RankingResult>& results, std::int64_t k);
double mean_rank(const std::vector<RankingResult>& results);
double mrr(const std::vector<RankingResult>& results);
MetricReport aggregate(const std::vector<RankingResult>& results);

struct EvaluateOptions {
  std::int64_t set_size = 100;
  std::uint64_t seed = 0;
  int threads = 2;
};

struct EvaluateOutput {
  MetricReport report;
  std::vector<RankingResult> results;
  std::vector<CandidateSet> sets;
};

using Scorer = std::function<double(std::int64_t clip_index, std::int64_t candidate_index,
                                    const ClipContext&, const CandidateTokens&)>;

// Builds candidate sets, ranks every clip (in parallel, deterministically),
// and aggregates the metrics.
EvaluateOutput evaluate(const std::vector<ClipRecord>& split, const Scorer& scorer,
                        const Vocabulary& vocab, const std::vector<std::string>& popular,
                        const std::vector<std::string>& pool, const EvaluateOptions& options);

EvaluateOutput evaluate(const std::vector<ClipRecord>& split, const MatchingModel& model,
                        const Vocabulary& vocab, const std::vector<std::string>& popular,
                        const std::vector<std::string>& pool, const EvaluateOptions& options);

}  // namespace mmt
