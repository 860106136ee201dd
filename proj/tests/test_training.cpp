#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mmt/training.hpp"

using namespace mmt;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "mmt_training_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

RunConfig tiny_config(std::uint64_t seed = 3) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.ffn_dim = 32;
  cfg.vision_dim = 8;
  cfg.audio_dim = 8;
  cfg.dropout = 0.1;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.candidates = 8;
  return cfg;
}

TrainingData tiny_data(std::uint64_t seed = 5, std::int64_t n = 16, std::int64_t n_dev = 4) {
  SynthConfig scfg;
  scfg.n_train = n;
  scfg.n_dev = n_dev;
  scfg.n_test = 0;
  scfg.vision_dim = 8;
  scfg.audio_dim = 8;
  scfg.min_audio_frames = 6;
  scfg.max_audio_frames = 10;
  scfg.n_comments = 2;
  auto corpus = synth_generate(seed, scfg);
  TrainingData data;
  data.train = corpus.train;
  data.dev = corpus.dev;
  data.vocab = build_vocab(corpus.train, 1);
  data.pool = corpus.pool;
  data.popular = popular_comments(corpus.train, 5);
  return data;
}

std::vector<double> snapshot(const MatchingModel& model) {
  std::vector<double> values;
  for (const auto& p : model.parameters()) {
    values.insert(values.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return values;
}

}  // namespace

TEST_CASE("margin loss hand values") {
  CHECK(margin_loss(1.0, -1.0, 0.1) == 0.0);
  CHECK(margin_loss(0.5, 0.5, 0.1) == doctest::Approx(0.1));
  CHECK(margin_loss(0.2, 0.4, 0.1) == doctest::Approx(0.3));
  CHECK_THROWS_AS(margin_loss(0, 0, 0.0), ConfigError);

  Tensor pos({1, 1}, {0.2});
  Tensor neg({1, 1}, {0.4});
  CHECK(margin_loss_op(nullptr, pos, neg, 0.1).at(0) == doctest::Approx(0.3));
}

TEST_CASE("satisfied hinge has exactly zero loss and zero gradient") {
  Tensor pos({1, 1}, {0.9}, true);
  Tensor neg({1, 1}, {0.1}, true);
  Tape tape;
  Tensor loss = margin_loss_op(&tape, pos, neg, 0.1);
  CHECK(loss.at(0) == 0.0);
  tape.backward(loss);
  CHECK(pos.grad()[0] == 0.0);
  CHECK(neg.grad()[0] == 0.0);
}

TEST_CASE("sample_negative excludes the ground truth and is uniform") {
  ClipRecord clip;
  clip.clip_id = "c";
  clip.candidate = {"the", "truth"};

  std::vector<std::string> two = {"the truth", "other one"};
  Rng rng(3);
  for (int i = 0; i < 20; ++i) CHECK(sample_negative(clip, two, rng) == "other one");

  std::vector<std::string> pool = {"the truth"};
  for (int i = 0; i < 9; ++i) pool.push_back("comment " + std::to_string(i));
  std::map<std::string, int> freq;
  Rng rng2(7);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++freq[sample_negative(clip, pool, rng2)];
  CHECK(freq.count("the truth") == 0);
  for (int i = 0; i < 9; ++i) {
    const double f = static_cast<double>(freq["comment " + std::to_string(i)]) / draws;
    CHECK(std::abs(f - 1.0 / 9.0) <= 0.02);
  }

  Rng ra(11), rb(11);
  for (int i = 0; i < 50; ++i) CHECK(sample_negative(clip, pool, ra) == sample_negative(clip, pool, rb));

  std::vector<std::string> only_gt = {"the truth"};
  Rng rc(1);
  CHECK_THROWS_AS(sample_negative(clip, only_gt, rc), DataError);
}

TEST_CASE("adam first step, zero gradient, and quadratic convergence") {
  // Single scalar parameter, g = 1: bias correction gives a step of ~lr.
  MatchingModel unused;  // adam works on plain NamedParam lists
  Tensor theta({1, 1}, {1.0}, true);
  std::vector<NamedParam> params = {{"theta", "test", theta}};
  OptimizerState state;
  state.first_moment.push_back({0.0});
  state.second_moment.push_back({0.0});

  theta.grad()[0] = 1.0;
  adam_step(params, state, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  CHECK(theta.at(0) == doctest::Approx(0.9).epsilon(1e-6));

  // Zero gradient into zero moments moves nothing.
  Tensor still({1, 1}, {0.7}, true);
  std::vector<NamedParam> sp = {{"still", "test", still}};
  OptimizerState ss;
  ss.first_moment.push_back({0.0});
  ss.second_moment.push_back({0.0});
  still.zero_grad();
  adam_step(sp, ss, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  CHECK(still.at(0) == 0.7);

  // Minimizing theta^2.
  Tensor w({1, 1}, {1.0}, true);
  std::vector<NamedParam> wp = {{"w", "test", w}};
  OptimizerState ws;
  ws.first_moment.push_back({0.0});
  ws.second_moment.push_back({0.0});
  for (int step = 0; step < 500; ++step) {
    w.zero_grad();
    w.grad()[0] = 2.0 * w.at(0);
    adam_step(wp, ws, AdamConfig{0.01, 0.9, 0.999, 1e-8});
  }
  CHECK(std::abs(w.at(0)) < 0.05);
}

TEST_CASE("learning rate halves when the dev metric drops") {
  CHECK(lr_schedule({0.2, 0.3}, 1e-4) == 1e-4);
  CHECK(lr_schedule({0.3, 0.2}, 1e-4) == doctest::Approx(5e-5));
  CHECK(lr_schedule({0.5}, 1e-4) == 1e-4);

  double lr = 8e-4;
  std::vector<double> history = {0.5};
  for (double metric : {0.4, 0.3, 0.2}) {
    history.push_back(metric);
    lr = lr_schedule(history, lr);
  }
  CHECK(lr == doctest::Approx(1e-4));  // three halvings
  CHECK_THROWS_AS(lr_schedule({}, 1e-4), ConfigError);
}

TEST_CASE("train_epoch keeps the loss non-negative and respects lr=0") {
  auto data = tiny_data();
  auto cfg = tiny_config();
  MatchingModel model(cfg.model_config(data.vocab.size()));
  model.init(cfg.seed);
  OptimizerState opt = OptimizerState::for_model(model);

  auto stats = train_epoch(model, data.train, data.vocab, data.pool, cfg, opt, 1, cfg.lr);
  CHECK(stats.mean_loss >= 0.0);
  CHECK(stats.instances == static_cast<std::int64_t>(data.train.size()));

  // lr = 0: bitwise-unchanged parameters.
  MatchingModel frozen(cfg.model_config(data.vocab.size()));
  frozen.init(cfg.seed);
  OptimizerState fopt = OptimizerState::for_model(frozen);
  auto before = snapshot(frozen);
  train_epoch(frozen, data.train, data.vocab, data.pool, cfg, fopt, 1, 0.0);
  auto after = snapshot(frozen);
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("mean loss decreases over the first epochs on a learnable corpus") {
  auto data = tiny_data(9, 48, 0);  // train-only pool
  auto cfg = tiny_config(9);
  cfg.dropout = 0.0;
  cfg.lr = 5e-4;
  MatchingModel model(cfg.model_config(data.vocab.size()));
  model.init(cfg.seed);
  OptimizerState opt = OptimizerState::for_model(model);

  std::vector<double> losses;
  for (std::int64_t epoch = 1; epoch <= 5; ++epoch) {
    losses.push_back(
        train_epoch(model, data.train, data.vocab, data.pool, cfg, opt, epoch, cfg.lr).mean_loss);
  }
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
  auto data = tiny_data();
  auto cfg = tiny_config();
  MatchingModel model(cfg.model_config(data.vocab.size()));
  model.init(cfg.seed);
  OptimizerState opt = OptimizerState::for_model(model);
  train_epoch(model, data.train, data.vocab, data.pool, cfg, opt, 1, cfg.lr);

  CheckpointData meta;
  meta.vocab_checksum = data.vocab.checksum();
  meta.vocab_size = data.vocab.size();
  meta.epoch = 1;
  meta.lr = cfg.lr;
  meta.config_text = cfg.to_text();
  meta.dev_history = {0.25};

  auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path.string(), model, opt, meta);
  auto loaded = load_checkpoint(path.string());

  CHECK(loaded.meta.vocab_checksum == meta.vocab_checksum);
  CHECK(loaded.meta.epoch == 1);
  CHECK(loaded.meta.lr == cfg.lr);
  CHECK(loaded.opt.step == opt.step);
  REQUIRE(loaded.meta.dev_history.size() == 1);
  CHECK(loaded.meta.dev_history[0] == 0.25);

  auto a = snapshot(model);
  auto b = snapshot(loaded.model);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (std::size_t pi = 0; pi < opt.first_moment.size(); ++pi) {
    for (std::size_t i = 0; i < opt.first_moment[pi].size(); ++i) {
      CHECK(loaded.opt.first_moment[pi][i] == opt.first_moment[pi][i]);
      CHECK(loaded.opt.second_moment[pi][i] == opt.second_moment[pi][i]);
    }
  }
}

TEST_CASE("resuming mid-training reproduces the loss trajectory bit-exactly") {
  auto data = tiny_data(21);
  auto cfg = tiny_config(21);

  // Uninterrupted: epochs 1..4.
  MatchingModel full(cfg.model_config(data.vocab.size()));
  full.init(cfg.seed);
  OptimizerState full_opt = OptimizerState::for_model(full);
  std::vector<double> full_losses;
  for (std::int64_t e = 1; e <= 4; ++e) {
    full_losses.push_back(
        train_epoch(full, data.train, data.vocab, data.pool, cfg, full_opt, e, cfg.lr).mean_loss);
  }

  // Interrupted: epochs 1..2, checkpoint, reload, epochs 3..4.
  MatchingModel half(cfg.model_config(data.vocab.size()));
  half.init(cfg.seed);
  OptimizerState half_opt = OptimizerState::for_model(half);
  std::vector<double> half_losses;
  for (std::int64_t e = 1; e <= 2; ++e) {
    half_losses.push_back(
        train_epoch(half, data.train, data.vocab, data.pool, cfg, half_opt, e, cfg.lr).mean_loss);
  }
  CheckpointData meta;
  meta.vocab_checksum = data.vocab.checksum();
  meta.vocab_size = data.vocab.size();
  meta.epoch = 2;
  meta.lr = cfg.lr;
  meta.config_text = cfg.to_text();
  auto path = temp_path("resume.ckpt");
  save_checkpoint(path.string(), half, half_opt, meta);

  auto resumed = load_checkpoint(path.string());
  for (std::int64_t e = 3; e <= 4; ++e) {
    half_losses.push_back(train_epoch(resumed.model, data.train, data.vocab, data.pool,
                                      resumed.config, resumed.opt, e, resumed.meta.lr)
                              .mean_loss);
  }

  REQUIRE(half_losses.size() == full_losses.size());
  for (std::size_t i = 0; i < full_losses.size(); ++i) CHECK(half_losses[i] == full_losses[i]);
}

TEST_CASE("run_training reports follow the schedule and are reproducible") {
  auto data = tiny_data(31);
  auto cfg = tiny_config(31);
  cfg.max_epochs = 3;
  cfg.dev_candidates = 6;

  auto run_once = [&] {
    MatchingModel model(cfg.model_config(data.vocab.size()));
    model.init(cfg.seed);
    OptimizerState opt = OptimizerState::for_model(model);
    return run_training(cfg, data, model, opt, 1, cfg.lr, {});
  };
  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.reports.size() == 3);
  REQUIRE(b.reports.size() == 3);
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].epoch == b.reports[i].epoch);
    CHECK(a.reports[i].mean_loss == b.reports[i].mean_loss);
    CHECK(a.reports[i].dev_recall1 == b.reports[i].dev_recall1);
    CHECK(a.reports[i].lr == b.reports[i].lr);
  }
  CHECK(a.reports[0].lr == cfg.lr);
  for (const auto& r : a.reports) CHECK(r.mean_loss >= 0.0);
}
