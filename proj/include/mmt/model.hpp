#pragma once

#include <string>

#include "mmt/corpus.hpp"
#include "mmt/encoders.hpp"
#include "mmt/matching.hpp"
#include "mmt/prediction.hpp"

namespace mmt {

// Stream layout: candidate first, then the enabled context modalities in
// canonical order c (comments), f (vision), a (audio).
struct ModelConfig {
  std::int64_t dim = 512;
  std::int64_t heads = 8;
  std::int64_t blocks = 6;
  std::int64_t ffn_dim = 2048;
  std::int64_t vocab_size = 0;
  std::int64_t vision_dim = 512;
  std::int64_t audio_dim = 64;
  std::string modalities = "cfa";
  double dropout = 0.2;
  double embed_init_range = 0.1;  // uniform(-r, r) word-embedding init

  void validate() const;
  std::string context_streams() const { return modalities; }
  std::size_t n_streams() const { return modalities.size() + 1; }
  bool uses(char m) const { return modalities.find(m) != std::string::npos; }
};

struct NamedParam {
  std::string name;
  std::string group;
  Tensor tensor;
};

struct PredictionParams {
  std::vector<PoolParams> pools;  // one per stream, candidate first
  GateParams context_gate;        // over the context streams' pooled vectors
};

class MatchingModel {
 public:
  MatchingModel() = default;
  explicit MatchingModel(ModelConfig cfg);  // allocates zero-filled parameters

  void init(std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  EncoderParams& encoder() { return enc_; }
  const EncoderParams& encoder() const { return enc_; }
  std::vector<MatchingBlockParams>& blocks() { return blocks_; }
  const std::vector<MatchingBlockParams>& blocks() const { return blocks_; }
  PredictionParams& head() { return head_; }
  const PredictionParams& head() const { return head_; }

  // Stable declaration order; checkpoints and the optimizer rely on it.
  std::vector<NamedParam> parameters() const;
  void zero_grad() const;
  MatchingModel clone() const;

 private:
  ModelConfig cfg_;
  EncoderParams enc_;
  std::vector<MatchingBlockParams> blocks_;
  PredictionParams head_;
};

struct ScoreOptions {
  bool training = false;
  Rng* rng = nullptr;
  std::vector<AttentionProbe>* attention_probes = nullptr;
  std::vector<Tensor>* gate_probes = nullptr;
};

// Full pipeline: encoders -> matching stack -> per-stream weighted pooling ->
// context fusion -> cosine. Returns the 1x1 score tensor.
Tensor score(Tape* tape, const MatchingModel& model, const ClipContext& context,
             const CandidateTokens& candidate, const ScoreOptions& options = {});

// Tape-free convenience (dropout off).
double score_value(const MatchingModel& model, const ClipContext& context,
                   const CandidateTokens& candidate);

}  // namespace mmt
