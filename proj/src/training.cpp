#include "mmt/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace mmt {

double margin_loss(double s_pos, double s_neg, double margin) {
  if (margin <= 0) throw ConfigError("margin_loss: margin must be > 0");
  return std::max(0.0, margin + s_neg - s_pos);
}

Tensor margin_loss_op(Tape* tape, const Tensor& s_pos, const Tensor& s_neg, double margin) {
  if (margin <= 0) throw ConfigError("margin_loss: margin must be > 0");
  return relu(tape, add_const(tape, sub(tape, s_neg, s_pos), margin));
}

std::string sample_negative(const ClipRecord& clip, const std::vector<std::string>& pool,
                            Rng& rng) {
  const std::string gt = clip.candidate_text();
  bool has_other = false;
  for (const auto& c : pool) {
    if (c != gt) {
      has_other = true;
      break;
    }
  }
  if (!has_other) {
    throw DataError("sample_negative: pool holds no comment besides the ground truth of " +
                    clip.clip_id);
  }
  while (true) {
    const auto& pick = pool[rng.below(pool.size())];
    if (pick != gt) return pick;
  }
}

OptimizerState OptimizerState::for_model(const MatchingModel& model) {
  OptimizerState state;
  for (const auto& p : model.parameters()) {
    state.first_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    state.second_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
  return state;
}

void adam_step(const std::vector<NamedParam>& params, OptimizerState& state,
               const AdamConfig& cfg) {
  if (params.size() != state.first_moment.size()) {
    throw ConfigError("adam_step: optimizer state does not match parameter list");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    auto& m = state.first_moment[pi];
    auto& v = state.second_moment[pi];
    const bool has_grad = t.grad_allocated();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double g = has_grad ? t.grad_view()[static_cast<std::size_t>(i)] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      t.at(i) -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double lr_schedule(const std::vector<double>& dev_history, double lr) {
  if (dev_history.empty()) throw ConfigError("lr_schedule: needs at least one epoch of history");
  if (dev_history.size() < 2) return lr;
  const double latest = dev_history.back();
  const double previous = dev_history[dev_history.size() - 2];
  return latest < previous ? lr / 2.0 : lr;
}

namespace {

std::string param_norm_digest(const MatchingModel& model) {
  std::string digest;
  double total = 0.0;
  for (const auto& p : model.parameters()) {
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) total += p.tensor.at(i) * p.tensor.at(i);
  }
  digest = "total param L2 " + std::to_string(std::sqrt(total));
  return digest;
}

}  // namespace

EpochStats train_epoch(MatchingModel& model, const std::vector<ClipRecord>& train,
                       const Vocabulary& vocab, const std::vector<std::string>& pool,
                       const RunConfig& cfg, OptimizerState& opt, std::int64_t epoch,
                       double lr) {
  if (train.empty()) throw DataError("train_epoch: empty training split");
  const std::int64_t n = static_cast<std::int64_t>(train.size());

  // All epoch randomness is a pure function of (seed, epoch): negatives are
  // resampled per epoch in clip-index order, then the visit order is
  // shuffled, then dropout draws follow visit order.
  Rng rng_negative(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 101));
  Rng rng_order(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 102));
  Rng rng_dropout(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 103));

  std::vector<std::vector<CandidateTokens>> negatives(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = 0; k < cfg.negatives; ++k) {
      const std::string text =
          sample_negative(train[static_cast<std::size_t>(i)], pool, rng_negative);
      negatives[static_cast<std::size_t>(i)].push_back(
          candidate_from_tokens(tokenize(text), vocab));
    }
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng_order.shuffle(order);

  ScoreOptions score_opt;
  score_opt.training = true;
  score_opt.rng = &rng_dropout;

  auto params = model.parameters();
  AdamConfig adam{lr, cfg.beta1, cfg.beta2, cfg.adam_eps};

  double loss_sum = 0.0;
  std::int64_t instances = 0;
  std::int64_t batch_id = 0;
  for (std::int64_t start = 0; start < n; start += cfg.batch_size, ++batch_id) {
    const std::int64_t end = std::min(n, start + cfg.batch_size);
    Tape tape;
    model.zero_grad();
    Tensor batch_total;
    std::int64_t batch_count = 0;
    for (std::int64_t bi = start; bi < end; ++bi) {
      const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(bi)]);
      const auto& record = train[idx];
      ClipContext context = context_from_record(record, vocab);
      CandidateTokens positive = candidate_from_tokens(record.candidate, vocab);
      Tensor s_pos = score(&tape, model, context, positive, score_opt);
      for (const auto& negative : negatives[idx]) {
        Tensor s_neg = score(&tape, model, context, negative, score_opt);
        Tensor inst = margin_loss_op(&tape, s_pos, s_neg, cfg.margin);
        batch_total = batch_total.defined() ? add(&tape, batch_total, inst) : inst;
        ++batch_count;
      }
    }
    Tensor batch_loss = scale(&tape, batch_total, 1.0 / static_cast<double>(batch_count));
    const double loss_value = batch_loss.at(0);
    if (!std::isfinite(loss_value)) {
      throw NumericError("train_epoch: non-finite loss in epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch_id) + " (" +
                         param_norm_digest(model) + ")");
    }
    tape.backward(batch_loss);
    adam_step(params, opt, adam);
    loss_sum += loss_value * static_cast<double>(batch_count);
    instances += batch_count;
  }

  EpochStats stats;
  stats.instances = instances;
  stats.mean_loss = loss_sum / static_cast<double>(instances);
  return stats;
}

TrainOutcome run_training(const RunConfig& cfg, const TrainingData& data, MatchingModel& model,
                          OptimizerState& opt, std::int64_t start_epoch, double start_lr,
                          std::vector<double> dev_history,
                          const std::function<void(const EpochReport&)>& on_epoch) {
  TrainOutcome outcome;
  const std::vector<ClipRecord>& dev_split = data.dev.empty() ? data.train : data.dev;
  // Candidate sets for the dev metric draw their random fill from the dev
  // split's own comments, so unseen ground truths compete with exchangeable
  // distractors.
  const std::vector<std::string> dev_pool = candidate_pool(dev_split);

  double lr = start_lr;
  for (std::size_t i = 0; i < dev_history.size(); ++i) {
    if (dev_history[i] > outcome.best_dev) {
      outcome.best_dev = dev_history[i];
      outcome.best_epoch = static_cast<std::int64_t>(i) + 1;
    }
  }

  for (std::int64_t epoch = start_epoch; epoch <= cfg.max_epochs; ++epoch) {
    if (lr < cfg.min_lr) break;
    EpochStats stats = train_epoch(model, data.train, data.vocab, data.pool, cfg, opt, epoch, lr);

    EvaluateOptions eval_opt;
    eval_opt.set_size = cfg.resolved_dev_candidates();
    eval_opt.seed = mix_seed(cfg.seed, 0xDE, 0);
    auto dev_eval = evaluate(dev_split, model, data.vocab, data.popular, dev_pool, eval_opt);

    dev_history.push_back(dev_eval.report.recall_at_1);
    EpochReport report{epoch, stats.mean_loss, dev_eval.report.recall_at_1, lr};
    outcome.reports.push_back(report);
    if (report.dev_recall1 > outcome.best_dev) {
      outcome.best_dev = report.dev_recall1;
      outcome.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(report);
    lr = lr_schedule(dev_history, lr);
  }
  return outcome;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'M', 'T', 'C', 'K', 'P', 'T', '1'};

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(out, b, 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(out, b, 8);
}

void write_i64(std::ofstream& out, std::int64_t v) {
  write_u64(out, static_cast<std::uint64_t>(v));
}

void write_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

void write_string(std::ofstream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const std::string& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw DataError("checkpoint: truncated file " + path);
  }
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  read_bytes(in, b, 4, path);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  read_bytes(in, b, 8, path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t read_i64(std::ifstream& in, const std::string& path) {
  return static_cast<std::int64_t>(read_u64(in, path));
}

double read_f64(std::ifstream& in, const std::string& path) {
  const std::uint64_t bits = read_u64(in, path);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_string(std::ifstream& in, const std::string& path) {
  const std::uint32_t n = read_u32(in, path);
  std::string s(n, '\0');
  if (n) read_bytes(in, s.data(), n, path);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const MatchingModel& model,
                     const OptimizerState& opt, const CheckpointData& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write " + path);

  write_bytes(out, kMagic, 8);
  write_u32(out, meta.version);
  write_u64(out, meta.vocab_checksum);
  write_i64(out, meta.vocab_size);
  write_i64(out, meta.epoch);
  write_f64(out, meta.lr);
  write_i64(out, opt.step);
  write_string(out, meta.config_text);
  write_u32(out, static_cast<std::uint32_t>(meta.dev_history.size()));
  for (double v : meta.dev_history) write_f64(out, v);

  const auto params = model.parameters();
  if (params.size() != opt.first_moment.size()) {
    throw ConfigError("checkpoint: optimizer state does not match parameters");
  }
  write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& t = params[pi].tensor;
    write_string(out, params[pi].name);
    write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) write_i64(out, d);
    for (std::int64_t i = 0; i < t.numel(); ++i) write_f64(out, t.at(i));
    for (double v : opt.first_moment[pi]) write_f64(out, v);
    for (double v : opt.second_moment[pi]) write_f64(out, v);
  }
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot read " + path);

  char magic[8];
  read_bytes(in, magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic in " + path);
  }
  CheckpointData meta;
  meta.version = read_u32(in, path);
  if (meta.version != 1) {
    throw DataError("checkpoint: unsupported version " + std::to_string(meta.version));
  }
  meta.vocab_checksum = read_u64(in, path);
  meta.vocab_size = read_i64(in, path);
  meta.epoch = read_i64(in, path);
  meta.lr = read_f64(in, path);
  const std::int64_t opt_step = read_i64(in, path);
  meta.config_text = read_string(in, path);
  const std::uint32_t hist = read_u32(in, path);
  for (std::uint32_t i = 0; i < hist; ++i) meta.dev_history.push_back(read_f64(in, path));

  RunConfig config = RunConfig::from_text(meta.config_text, path + "#config");
  MatchingModel model(config.model_config(meta.vocab_size));
  OptimizerState opt = OptimizerState::for_model(model);
  opt.step = opt_step;

  const std::uint32_t n_params = read_u32(in, path);
  auto params = model.parameters();
  if (n_params != params.size()) {
    throw DataError("checkpoint: parameter count mismatch in " + path + " (file " +
                    std::to_string(n_params) + ", model " + std::to_string(params.size()) + ")");
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::string name = read_string(in, path);
    if (name != params[pi].name) {
      throw DataError("checkpoint: parameter order mismatch at '" + name + "' (expected '" +
                      params[pi].name + "')");
    }
    const std::uint32_t rank = read_u32(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(read_i64(in, path));
    if (shape != params[pi].tensor.shape()) {
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    }
    Tensor t = params[pi].tensor;
    for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = read_f64(in, path);
    for (auto& v : opt.first_moment[pi]) v = read_f64(in, path);
    for (auto& v : opt.second_moment[pi]) v = read_f64(in, path);
  }

  return LoadedCheckpoint{std::move(model), std::move(opt), std::move(meta), std::move(config)};
}

}  // namespace mmt
