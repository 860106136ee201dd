#pragma once

#include <functional>

#include "mmt/config.hpp"
#include "mmt/ranking.hpp"

namespace mmt {

// max(0, margin + s_neg - s_pos)
double margin_loss(double s_pos, double s_neg, double margin);
Tensor margin_loss_op(Tape* tape, const Tensor& s_pos, const Tensor& s_neg, double margin);

// Uniform draw from the pool excluding the clip's own ground truth.
std::string sample_negative(const ClipRecord& clip, const std::vector<std::string>& pool,
                            Rng& rng);

struct OptimizerState {
  std::vector<std::vector<double>> first_moment, second_moment;
  std::int64_t step = 0;

  static OptimizerState for_model(const MatchingModel& model);
};

struct AdamConfig {
  double lr = 9e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over the model's parameter list (declaration order
// must match the optimizer state).
void adam_step(const std::vector<NamedParam>& params, OptimizerState& state,
               const AdamConfig& cfg);

// Halves the rate when the latest dev metric dropped below the previous one.
double lr_schedule(const std::vector<double>& dev_history, double lr);

struct EpochStats {
  double mean_loss = 0.0;
  std::int64_t instances = 0;
};

// One pass over the training split: per batch, score the positive pair and a
// freshly sampled negative pair, take the mean hinge loss, backpropagate,
// and apply one Adam step. All randomness derives from (seed, epoch) so an
// interrupted run resumes bit-exactly.
EpochStats train_epoch(MatchingModel& model, const std::vector<ClipRecord>& train,
                       const Vocabulary& vocab, const std::vector<std::string>& pool,
                       const RunConfig& cfg, OptimizerState& opt, std::int64_t epoch,
                       double lr);

struct EpochReport {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double dev_recall1 = 0.0;
  double lr = 0.0;
};

struct TrainingData {
  std::vector<ClipRecord> train, dev;
  Vocabulary vocab;
  std::vector<std::string> pool;
  std::vector<std::string> popular;
};

struct TrainOutcome {
  std::vector<EpochReport> reports;
  std::int64_t best_epoch = 0;
  double best_dev = -1.0;
};

// Full loop: train_epoch, dev Recall@1, lr halving, until max_epochs or
// lr < min_lr. on_epoch fires after each epoch (logging, checkpoints).
TrainOutcome run_training(const RunConfig& cfg, const TrainingData& data, MatchingModel& model,
                          OptimizerState& opt, std::int64_t start_epoch, double start_lr,
                          std::vector<double> dev_history,
                          const std::function<void(const EpochReport&)>& on_epoch = {});

// --- checkpointing ---------------------------------------------------------

struct CheckpointData {
  std::uint32_t version = 1;
  std::uint64_t vocab_checksum = 0;
  std::int64_t vocab_size = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  std::string config_text;
  std::vector<double> dev_history;
};

// Single binary file, versioned header, parameters in declaration order,
// 64-bit little-endian values. Save/load round-trips bit-exactly.
void save_checkpoint(const std::string& path, const MatchingModel& model,
                     const OptimizerState& opt, const CheckpointData& meta);

struct LoadedCheckpoint {
  MatchingModel model;
  OptimizerState opt;
  CheckpointData meta;
  RunConfig config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mmt
