#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmt/commands.hpp"

using namespace mmt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mmt_command_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

RunConfig synth_config(std::uint64_t seed, const fs::path& out, std::int64_t n_clips = 16) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.n_clips = n_clips;
  cfg.out_dir = out.string();
  cfg.vision_dim = 16;
  cfg.audio_dim = 8;
  cfg.n_comments = 2;
  return cfg;
}

RunConfig train_config(std::uint64_t seed, const fs::path& data, const fs::path& out) {
  RunConfig cfg;
  cfg.apply_profile("desk");
  cfg.seed = seed;
  cfg.data_dir = data.string();
  cfg.out_dir = out.string();
  cfg.vision_dim = 16;
  cfg.audio_dim = 8;
  cfg.dim = 16;
  cfg.ffn_dim = 32;
  cfg.blocks = 1;
  cfg.batch_size = 8;
  cfg.lr = 1e-3;
  cfg.max_epochs = 2;
  cfg.candidates = 8;
  return cfg;
}

}  // namespace

TEST_CASE("cmd_synth writes splits that round-trip and are byte-stable") {
  auto out_a = fresh_dir("synth_a");
  std::ostringstream sink;
  CHECK(cmd_synth(synth_config(7, out_a), sink) == 0);
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "pool.txt", "vocab.txt",
                           "config_resolved.txt"}) {
    CHECK(fs::exists(out_a / name));
  }
  auto records = load_clips((out_a / "train.jsonl").string(), 8);
  CHECK(records.size() == 16);

  // Same seed, different directory: byte-identical files.
  auto out_b = fresh_dir("synth_b");
  cmd_synth(synth_config(7, out_b), sink);
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "pool.txt", "vocab.txt"}) {
    CHECK(file_bytes(out_a / name) == file_bytes(out_b / name));
  }

  RunConfig bad = synth_config(7, out_a, 0);
  CHECK_THROWS_AS(cmd_synth(bad, sink), ConfigError);
}

TEST_CASE("run config defaults match the reference training settings") {
  RunConfig cfg;
  CHECK(cfg.margin == 0.1);
  CHECK(cfg.lr == 9e-5);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.dropout == 0.2);
  CHECK(cfg.negatives == 1);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.dim == 512);
  CHECK(cfg.heads == 8);
  CHECK(cfg.blocks == 6);
  CHECK(cfg.ffn_dim == 2048);
  CHECK(cfg.candidates == 100);

  RunConfig desk;
  desk.apply_profile("desk");
  CHECK(desk.dim == 32);
  CHECK(desk.heads == 2);
  CHECK(desk.blocks == 2);
  CHECK(desk.ffn_dim == 64);
  CHECK(desk.margin == 0.1);  // profile only swaps dimensions

  CHECK_THROWS_AS(desk.apply_profile("huge"), ConfigError);
}

TEST_CASE("config file parsing, overrides, and error listing") {
  auto dir = fresh_dir("config");
  {
    std::ofstream out(dir / "run.cfg");
    out << "# comment line\n";
    out << "seed = 42\n";
    out << "profile = desk\n";
    out << "dim = 16\n";  // later keys override profile dimensions
    out << "margin=0.25\n";
  }
  RunConfig cfg = RunConfig::from_file((dir / "run.cfg").string());
  CHECK(cfg.seed == 42);
  CHECK(cfg.dim == 16);
  CHECK(cfg.heads == 2);
  CHECK(cfg.margin == 0.25);

  cfg.apply_override("margin", "0.5");
  CHECK(cfg.margin == 0.5);

  // Round trip.
  RunConfig back = RunConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());

  {
    std::ofstream out(dir / "bad.cfg");
    out << "unknown_key = 1\n";
    out << "lr = not_a_number\n";
    out << "margin\n";
  }
  try {
    RunConfig::from_file((dir / "bad.cfg").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    // All three problems reported at once, each with its line.
    CHECK(msg.find(":1:") != std::string::npos);
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find(":3:") != std::string::npos);
  }
}

TEST_CASE("cmd_train with max_epochs 0 writes an untrained checkpoint") {
  auto data = fresh_dir("train0_data");
  std::ostringstream sink;
  cmd_synth(synth_config(11, data), sink);

  auto out = fresh_dir("train0_out");
  RunConfig cfg = train_config(11, data, out);
  cfg.max_epochs = 0;
  CHECK(cmd_train(cfg, sink) == 0);
  CHECK(fs::exists(out / "last.ckpt"));
  CHECK(fs::exists(out / "config_resolved.txt"));

  auto loaded = load_checkpoint((out / "last.ckpt").string());
  CHECK(loaded.meta.epoch == 0);
  CHECK(loaded.meta.lr == cfg.lr);
  CHECK(loaded.opt.step == 0);
}

TEST_CASE("training, evaluation, and ranking work end to end") {
  auto data = fresh_dir("e2e_data");
  std::ostringstream sink;
  cmd_synth(synth_config(13, data), sink);

  auto out = fresh_dir("e2e_out");
  RunConfig tcfg = train_config(13, data, out);
  CHECK(cmd_train(tcfg, sink) == 0);
  CHECK(fs::exists(out / "best.ckpt"));
  CHECK(fs::exists(out / "train_log.jsonl"));

  // eval twice with the same seed: identical metric files.
  const fs::path eval_a = fresh_dir("e2e_eval_a");
  const fs::path eval_b = fresh_dir("e2e_eval_b");
  RunConfig ecfg = tcfg;
  ecfg.checkpoint = (out / "best.ckpt").string();
  ecfg.split = "test";
  ecfg.candidates = 8;
  ecfg.out_dir = eval_a.string();
  std::ostringstream eval_out_a;
  CHECK(cmd_eval(ecfg, eval_out_a) == 0);
  ecfg.out_dir = eval_b.string();
  std::ostringstream eval_out_b;
  CHECK(cmd_eval(ecfg, eval_out_b) == 0);
  CHECK(eval_out_a.str() == eval_out_b.str());
  CHECK(file_bytes(eval_a / "metrics.jsonl") == file_bytes(eval_b / "metrics.jsonl"));
  CHECK(file_bytes(eval_a / "audit.jsonl") == file_bytes(eval_b / "audit.jsonl"));

  // missing checkpoint is a hard error
  RunConfig missing = ecfg;
  missing.checkpoint = (out / "nope.ckpt").string();
  CHECK_THROWS_AS(cmd_eval(missing, sink), IoError);

  // vocab checksum mismatch is a hard error
  auto other_data = fresh_dir("e2e_other_data");
  cmd_synth(synth_config(99, other_data, 20), sink);
  RunConfig mismatch = ecfg;
  mismatch.data_dir = other_data.string();
  CHECK_THROWS_AS(cmd_eval(mismatch, sink), DataError);

  // rank: single candidate is trivially rank 1 and scores stay in [-1, 1].
  auto test_records = load_clips((data / "test.jsonl").string(), 8);
  auto rank_dir = fresh_dir("e2e_rank");
  save_clips((rank_dir / "clip.jsonl").string(), {test_records[0]});
  {
    std::ofstream cands(rank_dir / "single.txt");
    cands << test_records[0].candidate_text() << "\n";
  }
  RunConfig rcfg = ecfg;
  rcfg.out_dir.clear();
  std::ostringstream rank_out;
  CHECK(cmd_rank(rcfg, (rank_dir / "clip.jsonl").string(), (rank_dir / "single.txt").string(),
                 rank_out) == 0);
  CHECK(rank_out.str().find("1\t") == 0);
  CHECK(rank_out.str().find("[ground truth]") != std::string::npos);

  // rank ordering agrees with the evaluation pipeline on the same set.
  auto vocab = Vocabulary::load((data / "vocab.txt").string());
  auto pool = std::vector<std::string>{};
  {
    std::ifstream in(data / "pool.txt");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) pool.push_back(line);
    }
  }
  auto train_records = load_clips((data / "train.jsonl").string(), 8);
  auto popular = popular_comments(train_records, 5);
  Rng rng(3);
  auto set = build_candidate_set(test_records[0], popular, pool, 8, rng);
  {
    std::ofstream cands(rank_dir / "set.txt");
    for (const auto& tokens : set.candidates) {
      std::string text;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) text += ' ';
        text += tokens[i];
      }
      cands << text << "\n";
    }
  }
  std::ostringstream set_out;
  cmd_rank(rcfg, (rank_dir / "clip.jsonl").string(), (rank_dir / "set.txt").string(), set_out);

  auto loaded = load_checkpoint(ecfg.checkpoint);
  auto direct = rank(context_from_record(test_records[0], vocab), set, loaded.model, vocab);
  // First line of cmd_rank output names the top candidate by the same order.
  std::istringstream lines(set_out.str());
  std::string first_line;
  std::getline(lines, first_line);
  std::string top_text;
  for (std::size_t i = 0; i < set.candidates[direct.order[0]].size(); ++i) {
    if (i) top_text += ' ';
    top_text += set.candidates[direct.order[0]][i];
  }
  CHECK(first_line.find(top_text) != std::string::npos);
}

TEST_CASE("resumed training appends a bit-identical epoch log") {
  auto data = fresh_dir("resume_data");
  std::ostringstream sink;
  cmd_synth(synth_config(17, data), sink);

  auto full_dir = fresh_dir("resume_full");
  RunConfig full = train_config(17, data, full_dir);
  full.max_epochs = 4;
  cmd_train(full, sink);

  auto part_dir = fresh_dir("resume_part");
  RunConfig part = train_config(17, data, part_dir);
  part.max_epochs = 2;
  cmd_train(part, sink);
  RunConfig cont = part;
  cont.max_epochs = 4;
  cont.resume = (part_dir / "last.ckpt").string();
  cmd_train(cont, sink);

  CHECK(file_bytes(full_dir / "train_log.jsonl") == file_bytes(part_dir / "train_log.jsonl"));
}

TEST_CASE("gradcheck passes at a coarse stride and rejects corrupted rules") {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = 1;
  cfg.ffn_dim = 16;
  cfg.vision_dim = 12;
  cfg.audio_dim = 8;
  cfg.gradcheck_stride = 5;

  auto outcome = run_gradcheck(cfg, 1e-4, 1e-4, 2);
  CHECK(outcome.pass);
  CHECK(outcome.groups.size() >= 6);

  // Corrupt the embedding scatter: only the embeddings group may fail.
  testhooks::set_backward_fault(testhooks::BackwardFault::embedding_lookup);
  RunConfig dense = cfg;
  dense.gradcheck_stride = 1;
  auto corrupted = run_gradcheck(dense, 1e-4, 1e-4, 2);
  testhooks::set_backward_fault(testhooks::BackwardFault::none);
  CHECK_FALSE(corrupted.pass);
  for (const auto& g : corrupted.groups) {
    if (g.group == "embeddings") {
      CHECK_FALSE(g.pass);
    } else {
      CHECK(g.pass);
    }
  }

  // Corrupt the sigmoid derivative: only the recurrent cell may fail.
  testhooks::set_backward_fault(testhooks::BackwardFault::sigmoid);
  auto gru_fault = run_gradcheck(dense, 1e-4, 1e-4, 2);
  testhooks::set_backward_fault(testhooks::BackwardFault::none);
  CHECK_FALSE(gru_fault.pass);
  for (const auto& g : gru_fault.groups) {
    if (g.group == "recurrent") {
      CHECK_FALSE(g.pass);
    } else {
      CHECK(g.pass);
    }
  }
}
