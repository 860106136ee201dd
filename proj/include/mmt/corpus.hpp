#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// One training/evaluation instance: the clip context (surrounding comments,
// vision feature rows, audio frames) plus one candidate comment.
struct ClipRecord {
  std::string clip_id;
  std::int64_t timestamp_s = 0;
  std::vector<std::vector<std::string>> surrounding;  // token lists, one per comment
  std::vector<std::vector<double>> vision;            // N_f rows of D_v
  std::vector<std::vector<double>> audio;             // N_a rows of D_a
  std::vector<std::string> candidate;                 // token list
  bool is_ground_truth = false;

  std::string candidate_text() const;
};

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  std::int64_t size() const { return static_cast<std::int64_t>(id_to_token_.size()) + 2; }

  std::vector<std::int32_t> encode(const std::vector<std::string>& tokens) const;

  std::uint64_t checksum() const;
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;  // excludes PAD/UNK; index = id - 2
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

// Lowercases, splits on whitespace, and detaches every punctuation character
// as its own token.
std::vector<std::string> tokenize(const std::string& text);

// Frequency-ordered vocabulary over surrounding + candidate tokens; ties
// break lexicographically so rebuilds are deterministic.
Vocabulary build_vocab(const std::vector<ClipRecord>& records, std::int64_t min_count = 1);

// Line-delimited clip file (one JSON object per line, keys: clip_id,
// timestamp_s, surrounding, vision, audio, candidate, is_ground_truth).
std::vector<ClipRecord> load_clips(const std::string& path, std::int64_t expected_audio_dim = 64);
void save_clips(const std::string& path, const std::vector<ClipRecord>& records);

// Splits n_frames into 5 contiguous near-equal index ranges (sizes differ by
// at most one, larger slices first). Requires n_frames >= 5.
std::array<std::pair<std::int32_t, std::int32_t>, 5> audio_slice_bounds(std::int64_t n_frames);

// Model-facing view of one clip context; sequences may carry masked padding.
struct ClipContext {
  std::vector<std::int32_t> comment_ids;
  Mask comment_mask;
  Tensor vision;  // L_f x D_v, padded rows zero
  Mask vision_mask;
  Tensor audio;  // true frames only, N_a x D_a
  std::array<std::pair<std::int32_t, std::int32_t>, 5> audio_slices;
  Mask audio_mask;  // over the 5 pooled audio positions (plus any padding)
};

struct CandidateTokens {
  std::vector<std::int32_t> ids;
  Mask mask;
};

struct Batch {
  std::int64_t size = 0;
  std::int64_t comment_width = 0;
  std::int64_t candidate_width = 0;
  std::int64_t vision_width = 0;
  std::int64_t audio_width = 0;
  std::int64_t vision_dim = 0;
  std::int64_t audio_dim = 0;

  std::vector<std::int32_t> comment_ids;  // size x comment_width
  Mask comment_mask;
  std::vector<std::int32_t> candidate_ids;  // size x candidate_width
  Mask candidate_mask;
  std::vector<double> vision;  // size x vision_width x vision_dim
  Mask vision_mask;            // size x vision_width
  std::vector<double> audio;   // size x audio_width x audio_dim
  std::vector<std::int64_t> audio_len;
  std::vector<std::array<std::pair<std::int32_t, std::int32_t>, 5>> audio_slices;
  std::vector<std::uint8_t> is_ground_truth;
  std::vector<std::string> clip_ids;

  ClipContext context(std::int64_t i) const;
  CandidateTokens candidate(std::int64_t i) const;
};

// Pads every sequence to the per-batch maximum and sets validity masks.
// Surrounding comments of one clip are concatenated into a single sequence.
Batch make_batch(const std::vector<ClipRecord>& records, const Vocabulary& vocab);

ClipContext context_from_record(const ClipRecord& record, const Vocabulary& vocab);
CandidateTokens candidate_from_tokens(const std::vector<std::string>& tokens,
                                      const Vocabulary& vocab);

// --- synthetic corpus -------------------------------------------------------

struct SynthConfig {
  std::int64_t n_train = 100;
  std::int64_t n_dev = 20;
  std::int64_t n_test = 20;
  std::int64_t n_comments = 5;  // surrounding comments per clip
  std::int64_t n_frames = 5;    // vision feature rows per clip
  std::int64_t vision_dim = 32;
  std::int64_t audio_dim = 64;
  std::int64_t min_audio_frames = 10;
  std::int64_t max_audio_frames = 25;
  std::int64_t attr_values = 6;      // values per modality attribute
  std::int64_t words_per_value = 8;  // vocabulary slice per attribute value
  std::int64_t n_popular = 25;       // designated high-frequency comments
  double popular_rate = 0.15;        // clips whose ground truth is popular
  double feature_scale = 1.2;
  double feature_noise = 0.35;
};

// The latent clip label: one attribute value per modality. The candidate
// wording encodes all three; each context modality reveals only its own.
struct SynthTopic {
  std::int32_t vision_attr = -1;
  std::int32_t audio_attr = -1;
  std::int32_t text_attr = -1;
  bool operator==(const SynthTopic&) const = default;
};

struct SynthCorpus {
  std::vector<ClipRecord> train, dev, test;
  std::vector<std::string> pool;     // unique candidate strings across splits
  std::vector<std::string> popular;  // designated popular comments
  // Generator internals, used by oracle tests only.
  std::unordered_map<std::string, SynthTopic> clip_topic;       // clip_id -> topic
  std::unordered_map<std::string, SynthTopic> candidate_topic;  // text -> topic
};

// Deterministic under seed; ground-truth candidates correlate with the
// planted per-modality attributes so a correct model can beat chance.
SynthCorpus synth_generate(std::uint64_t seed, const SynthConfig& cfg);

}  // namespace mmt
