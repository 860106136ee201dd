#include "mmt/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <thread>

#include <json.hpp>

namespace mmt {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

void dump_resolved_config(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  fs::create_directories(cfg.out_dir);
  write_text_file(fs::path(cfg.out_dir) / "config_resolved.txt", cfg.to_text());
}

std::vector<std::string> load_pool_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read pool file " + path.string());
  std::vector<std::string> pool;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) pool.push_back(line);
  }
  if (pool.empty()) throw DataError("pool file " + path.string() + " is empty");
  return pool;
}

json report_to_json(const MetricReport& r) {
  return json{{"recall_at_1", r.recall_at_1}, {"recall_at_5", r.recall_at_5},
              {"recall_at_10", r.recall_at_10}, {"mean_rank", r.mean_rank},
              {"mrr", r.mrr},                   {"n_clips", r.n_clips}};
}

}  // namespace

TrainingData load_training_data(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("data_dir is required");
  const fs::path dir(cfg.data_dir);
  TrainingData data;
  data.train = load_clips((dir / "train.jsonl").string(), cfg.audio_dim);
  if (fs::exists(dir / "dev.jsonl")) {
    data.dev = load_clips((dir / "dev.jsonl").string(), cfg.audio_dim);
  }
  data.vocab = Vocabulary::load((dir / "vocab.txt").string());
  data.pool = load_pool_file(dir / "pool.txt");
  data.popular = popular_comments(data.train, 20);
  return data;
}

// --- synth ---------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  if (cfg.n_clips < 1) throw ConfigError("synth: n_clips must be >= 1");
  if (cfg.out_dir.empty()) throw ConfigError("synth: out_dir is required");

  SynthConfig scfg = cfg.synth_config();
  SynthCorpus corpus = synth_generate(cfg.seed, scfg);
  Vocabulary vocab = build_vocab(corpus.train, cfg.min_count);

  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);
  save_clips((dir / "train.jsonl").string(), corpus.train);
  save_clips((dir / "dev.jsonl").string(), corpus.dev);
  save_clips((dir / "test.jsonl").string(), corpus.test);
  vocab.save((dir / "vocab.txt").string());
  {
    std::string pool_text;
    for (const auto& c : corpus.pool) pool_text += c + "\n";
    write_text_file(dir / "pool.txt", pool_text);
  }
  dump_resolved_config(cfg);

  out << "synth: wrote " << corpus.train.size() << " train / " << corpus.dev.size() << " dev / "
      << corpus.test.size() << " test clips, pool of " << corpus.pool.size() << ", vocab "
      << vocab.size() << " to " << cfg.out_dir << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is required");
  TrainingData data = load_training_data(cfg);
  dump_resolved_config(cfg);
  const fs::path dir(cfg.out_dir);

  MatchingModel model;
  OptimizerState opt;
  std::int64_t start_epoch = 1;
  double lr = cfg.lr;
  std::vector<double> dev_history;

  if (!cfg.resume.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(cfg.resume);
    if (loaded.meta.vocab_checksum != data.vocab.checksum()) {
      throw DataError("train: vocab checksum mismatch between resume checkpoint and corpus");
    }
    model = std::move(loaded.model);
    opt = std::move(loaded.opt);
    start_epoch = loaded.meta.epoch + 1;
    lr = loaded.meta.lr;
    dev_history = loaded.meta.dev_history;
    out << "train: resumed from " << cfg.resume << " at epoch " << loaded.meta.epoch << "\n";
  } else {
    model = MatchingModel(cfg.model_config(data.vocab.size()));
    model.init(cfg.seed);
    opt = OptimizerState::for_model(model);
  }

  auto checkpoint_meta = [&](std::int64_t epoch, double next_lr,
                             const std::vector<double>& history) {
    CheckpointData meta;
    meta.vocab_checksum = data.vocab.checksum();
    meta.vocab_size = data.vocab.size();
    meta.epoch = epoch;
    meta.lr = next_lr;
    meta.config_text = cfg.to_text();
    meta.dev_history = history;
    return meta;
  };

  // Initial checkpoint: supports --max-epochs 0 (untrained model) and crash
  // recovery from epoch zero.
  save_checkpoint((dir / "last.ckpt").string(), model, opt,
                  checkpoint_meta(start_epoch - 1, lr, dev_history));
  if (cfg.max_epochs < start_epoch) {
    save_checkpoint((dir / "best.ckpt").string(), model, opt,
                    checkpoint_meta(start_epoch - 1, lr, dev_history));
    out << "train: max_epochs " << cfg.max_epochs << " reached before epoch " << start_epoch
        << "; wrote untrained checkpoint\n";
    return 0;
  }

  std::ofstream log(dir / "train_log.jsonl",
                    cfg.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("train: cannot write epoch log in " + cfg.out_dir);

  double best_dev = -1.0;
  for (double v : dev_history) best_dev = std::max(best_dev, v);
  std::vector<double> history = dev_history;

  auto on_epoch = [&](const EpochReport& report) {
    json line{{"epoch", report.epoch},
              {"mean_loss", report.mean_loss},
              {"dev_recall1", report.dev_recall1},
              {"lr", report.lr}};
    log << line.dump() << "\n";
    log.flush();
    out << "epoch " << report.epoch << ": loss " << report.mean_loss << ", dev R@1 "
        << report.dev_recall1 << ", lr " << report.lr << "\n";

    history.push_back(report.dev_recall1);
    const double next_lr = lr_schedule(history, report.lr);
    save_checkpoint((dir / "last.ckpt").string(), model, opt,
                    checkpoint_meta(report.epoch, next_lr, history));
    if (report.dev_recall1 > best_dev) {
      best_dev = report.dev_recall1;
      save_checkpoint((dir / "best.ckpt").string(), model, opt,
                      checkpoint_meta(report.epoch, next_lr, history));
    }
  };

  TrainOutcome outcome =
      run_training(cfg, data, model, opt, start_epoch, lr, dev_history, on_epoch);
  out << "train: finished after " << outcome.reports.size() << " epoch(s); best dev R@1 "
      << outcome.best_dev << " at epoch " << outcome.best_epoch << "\n";
  return 0;
}

// --- eval ----------------------------------------------------------------------

namespace {

struct EvalData {
  std::vector<ClipRecord> split;
  Vocabulary vocab;
  std::vector<std::string> pool;
  std::vector<std::string> popular;
};

EvalData load_eval_data(const RunConfig& cfg, std::int64_t audio_dim) {
  if (cfg.data_dir.empty()) throw ConfigError("data_dir is required");
  const fs::path dir(cfg.data_dir);
  const fs::path split_file = dir / (cfg.split + ".jsonl");
  if (!fs::exists(split_file)) {
    throw IoError("eval: split file " + split_file.string() + " does not exist");
  }
  EvalData data;
  data.split = load_clips(split_file.string(), audio_dim);
  data.vocab = Vocabulary::load((dir / "vocab.txt").string());
  // Random fill comes from the evaluated split's own comment pool; popular
  // comments always come from the training split.
  data.pool = candidate_pool(data.split);
  data.popular = popular_comments(load_clips((dir / "train.jsonl").string(), audio_dim), 20);
  return data;
}

}  // namespace

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval: checkpoint is required");
  LoadedCheckpoint loaded = load_checkpoint(cfg.checkpoint);
  // Record validation follows the checkpoint's own dimensions.
  EvalData data = load_eval_data(cfg, loaded.config.audio_dim);
  if (loaded.meta.vocab_checksum != data.vocab.checksum()) {
    throw DataError("eval: vocab checksum mismatch between checkpoint and corpus");
  }

  EvaluateOptions opt;
  opt.set_size = cfg.candidates;
  opt.seed = cfg.seed;
  auto result = evaluate(data.split, loaded.model, data.vocab, data.popular, data.pool, opt);

  const auto& r = result.report;
  out << std::fixed << std::setprecision(4);
  out << "metric        value\n";
  out << "recall@1      " << r.recall_at_1 << "\n";
  out << "recall@5      " << r.recall_at_5 << "\n";
  out << "recall@10     " << r.recall_at_10 << "\n";
  out << "mean rank     " << r.mean_rank << "\n";
  out << "mrr           " << r.mrr << "\n";
  out << "clips         " << r.n_clips << "\n";
  out.unsetf(std::ios::fixed);

  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    dump_resolved_config(cfg);
    {
      std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
      metrics << report_to_json(r).dump() << "\n";
    }
    std::ofstream audit(dir / "audit.jsonl", std::ios::trunc);
    for (std::size_t i = 0; i < result.results.size(); ++i) {
      const auto& rr = result.results[i];
      const auto& set = result.sets[i];
      json top5 = json::array();
      for (std::size_t p = 0; p < rr.order.size() && p < 5; ++p) {
        const auto idx = static_cast<std::size_t>(rr.order[p]);
        std::string text;
        for (std::size_t w = 0; w < set.candidates[idx].size(); ++w) {
          if (w) text += ' ';
          text += set.candidates[idx][w];
        }
        top5.push_back(json{{"text", text}, {"score", rr.scores[idx]}});
      }
      audit << json{{"clip_id", rr.clip_id}, {"gt_rank", rr.gt_rank}, {"top5", top5}}.dump()
            << "\n";
    }
  }
  return 0;
}

// --- rank ----------------------------------------------------------------------

int cmd_rank(const RunConfig& cfg, const std::string& clip_file,
             const std::string& candidates_file, std::ostream& out) {
  if (cfg.checkpoint.empty()) throw ConfigError("rank: checkpoint is required");
  if (cfg.data_dir.empty()) throw ConfigError("rank: data_dir is required for the vocabulary");
  LoadedCheckpoint loaded = load_checkpoint(cfg.checkpoint);
  Vocabulary vocab = Vocabulary::load((fs::path(cfg.data_dir) / "vocab.txt").string());
  if (loaded.meta.vocab_checksum != vocab.checksum()) {
    throw DataError("rank: vocab checksum mismatch between checkpoint and corpus");
  }

  auto records = load_clips(clip_file, loaded.config.audio_dim);
  if (records.empty()) throw DataError("rank: clip file " + clip_file + " holds no records");
  const ClipRecord& clip = records.front();

  std::ifstream cand_in(candidates_file, std::ios::binary);
  if (!cand_in) throw IoError("rank: cannot read " + candidates_file);
  std::vector<std::string> candidates;
  std::string line;
  while (std::getline(cand_in, line)) {
    if (!line.empty()) candidates.push_back(line);
  }
  if (candidates.empty()) throw DataError("rank: no candidates in " + candidates_file);

  ClipContext context = context_from_record(clip, vocab);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& text : candidates) {
    scores.push_back(
        score_value(loaded.model, context, candidate_from_tokens(tokenize(text), vocab)));
  }

  std::int64_t gt_index = -1;
  if (clip.is_ground_truth) {
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (tokenize(candidates[i]) == clip.candidate) {
        gt_index = static_cast<std::int64_t>(i);
        break;
      }
    }
  }
  auto result = rank_scores(clip.clip_id, scores, gt_index >= 0 ? gt_index : 0);

  out << std::fixed << std::setprecision(6);
  for (std::size_t pos = 0; pos < result.order.size(); ++pos) {
    const auto idx = result.order[pos];
    out << (pos + 1) << "\t" << result.scores[static_cast<std::size_t>(idx)] << "\t"
        << candidates[static_cast<std::size_t>(idx)];
    if (idx == gt_index) out << "\t[ground truth]";
    out << "\n";
  }
  out.unsetf(std::ios::fixed);
  return 0;
}

// --- gradcheck -------------------------------------------------------------------

GradCheckOutcome run_gradcheck(const RunConfig& cfg, double h, double tol, int threads) {
  const auto start_time = std::chrono::steady_clock::now();

  // Tiny corpus; vision width differs from the model width so the trainable
  // projection path is exercised.
  SynthConfig scfg;
  scfg.n_train = 2;
  scfg.n_dev = 0;
  scfg.n_test = 0;
  scfg.n_comments = 2;
  scfg.n_frames = 3;
  scfg.vision_dim = cfg.resolved_vision_dim();
  scfg.audio_dim = cfg.audio_dim;
  scfg.min_audio_frames = 6;
  scfg.max_audio_frames = 8;
  SynthCorpus corpus = synth_generate(cfg.seed, scfg);
  Vocabulary vocab = build_vocab(corpus.train, 1);

  ModelConfig mc = cfg.model_config(vocab.size());
  MatchingModel model(mc);
  model.init(cfg.seed);

  ClipContext context = context_from_record(corpus.train[0], vocab);
  CandidateTokens positive = candidate_from_tokens(corpus.train[0].candidate, vocab);
  CandidateTokens negative = candidate_from_tokens(corpus.train[1].candidate, vocab);

  auto loss_for = [&](const MatchingModel& m) {
    return [&m, &context, &positive, &negative, margin = cfg.margin](Tape* tape) {
      Tensor s_pos = score(tape, m, context, positive);
      Tensor s_neg = score(tape, m, context, negative);
      return margin_loss_op(tape, s_pos, s_neg, margin);
    };
  };

  // The hinge must be active and away from its kink at the operating point,
  // otherwise finite differences straddle the non-smooth point.
  {
    const double operating = cfg.margin + score_value(model, context, negative) -
                             score_value(model, context, positive);
    if (std::abs(operating) < 16.0 * h) {
      throw NumericError("gradcheck: operating point too close to the hinge kink; "
                         "choose a different seed");
    }
  }

  const auto reference = model.parameters();
  const int n_threads = std::max(1, threads);

  std::vector<std::map<std::string, GradCheckGroupReport>> partials(
      static_cast<std::size_t>(n_threads));
  std::vector<std::thread> workers;
  for (int t = 0; t < n_threads; ++t) {
    workers.emplace_back([&, t] {
      MatchingModel replica = model.clone();
      auto loss_fn = loss_for(replica);
      auto params = replica.parameters();
      auto& mine = partials[static_cast<std::size_t>(t)];
      for (std::size_t pi = static_cast<std::size_t>(t); pi < params.size();
           pi += static_cast<std::size_t>(n_threads)) {
        auto report = grad_check_params(loss_fn, {params[pi].tensor}, h, tol, 1e-3,
                                        static_cast<int>(cfg.gradcheck_stride));
        auto& slot = mine[params[pi].group];
        slot.group = params[pi].group;
        slot.max_rel_error = std::max(slot.max_rel_error, report.max_rel_error);
        slot.entries += (params[pi].tensor.numel() + cfg.gradcheck_stride - 1) /
                        cfg.gradcheck_stride;
      }
    });
  }
  for (auto& w : workers) w.join();

  GradCheckOutcome outcome;
  std::vector<std::string> group_order;
  for (const auto& p : reference) {
    if (std::find(group_order.begin(), group_order.end(), p.group) == group_order.end()) {
      group_order.push_back(p.group);
    }
  }
  for (const auto& group : group_order) {
    GradCheckGroupReport merged;
    merged.group = group;
    for (const auto& partial : partials) {
      auto it = partial.find(group);
      if (it == partial.end()) continue;
      merged.max_rel_error = std::max(merged.max_rel_error, it->second.max_rel_error);
      merged.entries += it->second.entries;
    }
    merged.pass = merged.max_rel_error <= tol;
    outcome.max_rel_error = std::max(outcome.max_rel_error, merged.max_rel_error);
    outcome.groups.push_back(merged);
  }
  outcome.pass = outcome.max_rel_error <= tol;
  outcome.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return outcome;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  GradCheckOutcome outcome = run_gradcheck(cfg);
  for (const auto& g : outcome.groups) {
    out << "group " << std::left << std::setw(12) << g.group << " max rel err " << std::scientific
        << std::setprecision(2) << g.max_rel_error << std::defaultfloat << " over "
        << g.entries << " entries " << (g.pass ? "[PASS]" : "[FAIL]") << "\n";
  }
  out << "gradcheck " << (outcome.pass ? "PASS" : "FAIL") << ": max rel err " << std::scientific
      << std::setprecision(2) << outcome.max_rel_error << std::defaultfloat << " in "
      << std::setprecision(1) << std::fixed << outcome.seconds << "s\n";
  out.unsetf(std::ios::fixed);
  if (!outcome.pass) throw NumericError("gradcheck failed");
  return 0;
}

}  // namespace mmt
