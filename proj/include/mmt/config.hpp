#pragma once

#include <string>

#include "mmt/corpus.hpp"
#include "mmt/model.hpp"

namespace mmt {

// Merged view of config-file keys and command-line overrides. Defaults match
// the reference training settings (512 dims, 8 heads, 6 blocks, 2048 FFN,
// margin 0.1, lr 9e-5, dropout 0.2, batch 64, 1 negative); the desk profile
// swaps in CI-sized dimensions.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;  // eval/rank input
  std::string resume;      // train warm start
  std::string split = "test";
  std::string profile;  // "", "paper", or "desk"

  std::int64_t dim = 512;
  std::int64_t heads = 8;
  std::int64_t blocks = 6;
  std::int64_t ffn_dim = 2048;
  std::string modalities = "cfa";
  std::int64_t vision_dim = -1;  // -1: same as dim
  std::int64_t audio_dim = 64;

  double margin = 0.1;
  double lr = 9e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double dropout = 0.2;
  double embed_init = 0.1;
  double min_lr = 1e-7;
  std::int64_t batch_size = 64;
  std::int64_t negatives = 1;
  std::int64_t max_epochs = 20;
  std::int64_t candidates = 100;      // evaluation candidate-set size
  std::int64_t dev_candidates = 0;    // 0: same as candidates
  std::int64_t gradcheck_stride = 1;  // finite-difference subsampling (1 = every entry)

  std::int64_t n_clips = 0;  // synth
  std::int64_t synth_dev = -1;
  std::int64_t synth_test = -1;
  std::int64_t n_comments = 5;
  std::int64_t n_frames = 5;
  std::int64_t min_count = 1;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_text(const std::string& text, const std::string& origin = "<text>");

  // "desk" or "paper". Applied in place; later overrides still win.
  void apply_profile(const std::string& name);
  void apply_override(const std::string& key, const std::string& value);

  // Collects every problem before throwing.
  void validate() const;

  // Deterministic sorted key=value dump; parseable by from_text.
  std::string to_text() const;

  std::int64_t resolved_vision_dim() const { return vision_dim < 0 ? dim : vision_dim; }
  std::int64_t resolved_dev_candidates() const {
    return dev_candidates <= 0 ? candidates : dev_candidates;
  }

  ModelConfig model_config(std::int64_t vocab_size) const;
  SynthConfig synth_config() const;
};

}  // namespace mmt
