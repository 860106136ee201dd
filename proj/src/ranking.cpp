#include "mmt/ranking.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <thread>

namespace mmt {

std::vector<std::string> popular_comments(const std::vector<ClipRecord>& records,
                                          std::int64_t k) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& r : records) ++counts[r.candidate_text()];
  std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> top;
  for (const auto& [text, n] : items) {
    if (static_cast<std::int64_t>(top.size()) >= k) break;
    top.push_back(text);
  }
  return top;
}

std::vector<std::string> candidate_pool(const std::vector<ClipRecord>& records) {
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.candidate_text());
  return std::vector<std::string>(unique.begin(), unique.end());
}

CandidateSet build_candidate_set(const ClipRecord& clip, const std::vector<std::string>& popular,
                                 const std::vector<std::string>& pool, std::int64_t size,
                                 Rng& rng) {
  if (size < 1) throw ConfigError("build_candidate_set: size must be >= 1");
  const std::string gt_text = clip.candidate_text();

  std::vector<std::pair<std::string, CandidateSet::Provenance>> chosen;
  std::set<std::string> seen;
  chosen.emplace_back(gt_text, CandidateSet::Provenance::ground_truth);
  seen.insert(gt_text);

  // Up to 20 popular comments, deduplicated against the ground truth; any
  // collision is backfilled by one extra random draw below.
  std::int64_t popular_budget = std::min<std::int64_t>(
      {20, static_cast<std::int64_t>(popular.size()), size - 1});
  for (const auto& p : popular) {
    if (popular_budget <= 0) break;
    if (static_cast<std::int64_t>(chosen.size()) >= size) break;
    if (!seen.insert(p).second) continue;
    chosen.emplace_back(p, CandidateSet::Provenance::popular);
    --popular_budget;
  }

  // Uniform fill without replacement.
  std::vector<const std::string*> available;
  available.reserve(pool.size());
  for (const auto& c : pool) {
    if (seen.find(c) == seen.end()) available.push_back(&c);
  }
  while (static_cast<std::int64_t>(chosen.size()) < size) {
    if (available.empty()) {
      throw DataError("build_candidate_set: pool exhausted at " +
                      std::to_string(chosen.size()) + " of " + std::to_string(size) +
                      " candidates for clip " + clip.clip_id);
    }
    const std::size_t pick = rng.below(available.size());
    chosen.emplace_back(*available[pick], CandidateSet::Provenance::random);
    available[pick] = available.back();
    available.pop_back();
  }

  // Shuffle so the ground truth lands at an arbitrary deterministic index.
  rng.shuffle(chosen);

  CandidateSet set;
  set.clip_id = clip.clip_id;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    set.candidates.push_back(tokenize(chosen[i].first));
    set.provenance.push_back(chosen[i].second);
    if (chosen[i].second == CandidateSet::Provenance::ground_truth) {
      set.ground_truth_index = static_cast<std::int64_t>(i);
    }
  }
  return set;
}

RankingResult rank_scores(std::string clip_id, std::vector<double> scores,
                          std::int64_t gt_index) {
  if (scores.empty()) throw DataError("rank_scores: no scores");
  if (gt_index < 0 || gt_index >= static_cast<std::int64_t>(scores.size())) {
    throw IndexError("rank_scores: ground truth index out of range");
  }
  RankingResult result;
  result.clip_id = std::move(clip_id);
  result.order.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) result.order[i] = static_cast<std::int64_t>(i);
  std::sort(result.order.begin(), result.order.end(), [&scores](std::int64_t a, std::int64_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  for (std::size_t pos = 0; pos < result.order.size(); ++pos) {
    if (result.order[pos] == gt_index) {
      result.gt_rank = static_cast<std::int64_t>(pos) + 1;
      break;
    }
  }
  result.scores = std::move(scores);
  return result;
}

RankingResult rank(const ClipContext& context, const CandidateSet& set,
                   const MatchingModel& model, const Vocabulary& vocab) {
  std::vector<double> scores;
  scores.reserve(set.candidates.size());
  for (const auto& tokens : set.candidates) {
    scores.push_back(score_value(model, context, candidate_from_tokens(tokens, vocab)));
  }
  return rank_scores(set.clip_id, std::move(scores), set.ground_truth_index);
}

double recall_at_k(const std::vector<RankingResult>& results, std::int64_t k) {
  if (results.empty()) throw DataError("recall_at_k: no results");
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  std::int64_t hits = 0;
  for (const auto& r : results) {
    if (r.gt_rank <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mean_rank(const std::vector<RankingResult>& results) {
  if (results.empty()) throw DataError("mean_rank: no results");
  double total = 0.0;
  for (const auto& r : results) total += static_cast<double>(r.gt_rank);
  return total / static_cast<double>(results.size());
}

double mrr(const std::vector<RankingResult>& results) {
  if (results.empty()) throw DataError("mrr: no results");
  double total = 0.0;
  for (const auto& r : results) total += 1.0 / static_cast<double>(r.gt_rank);
  return total / static_cast<double>(results.size());
}

MetricReport aggregate(const std::vector<RankingResult>& results) {
  MetricReport report;
  report.recall_at_1 = recall_at_k(results, 1);
  report.recall_at_5 = recall_at_k(results, 5);
  report.recall_at_10 = recall_at_k(results, 10);
  report.mean_rank = mean_rank(results);
  report.mrr = mrr(results);
  report.n_clips = static_cast<std::int64_t>(results.size());
  return report;
}

EvaluateOutput evaluate(const std::vector<ClipRecord>& split, const Scorer& scorer,
                        const Vocabulary& vocab, const std::vector<std::string>& popular,
                        const std::vector<std::string>& pool, const EvaluateOptions& opt) {
  if (split.empty()) throw DataError("evaluate: empty split");
  const std::int64_t n = static_cast<std::int64_t>(split.size());

  EvaluateOutput out;
  out.sets.reserve(split.size());
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(i), 0xC5));
    out.sets.push_back(build_candidate_set(split[static_cast<std::size_t>(i)], popular, pool,
                                           opt.set_size, rng));
  }

  out.results.resize(split.size());
  const int n_threads = std::max(1, std::min<int>(opt.threads, static_cast<int>(n)));
  auto worker = [&](int tid) {
    for (std::int64_t i = tid; i < n; i += n_threads) {
      const auto& set = out.sets[static_cast<std::size_t>(i)];
      ClipContext context = context_from_record(split[static_cast<std::size_t>(i)], vocab);
      std::vector<double> scores;
      scores.reserve(set.candidates.size());
      for (std::size_t c = 0; c < set.candidates.size(); ++c) {
        scores.push_back(scorer(i, static_cast<std::int64_t>(c), context,
                                candidate_from_tokens(set.candidates[c], vocab)));
      }
      out.results[static_cast<std::size_t>(i)] =
          rank_scores(set.clip_id, std::move(scores), set.ground_truth_index);
    }
  };
  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker, t);
    for (auto& t : threads) t.join();
  }

  out.report = aggregate(out.results);
  return out;
}

EvaluateOutput evaluate(const std::vector<ClipRecord>& split, const MatchingModel& model,
                        const Vocabulary& vocab, const std::vector<std::string>& popular,
                        const std::vector<std::string>& pool, const EvaluateOptions& opt) {
  Scorer scorer = [&model](std::int64_t, std::int64_t, const ClipContext& ctx,
                           const CandidateTokens& cand) {
    return score_value(model, ctx, cand);
  };
  return evaluate(split, scorer, vocab, popular, pool, opt);
}

}  // namespace mmt
