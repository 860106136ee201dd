#include <CLI11.hpp>
#include <iostream>

#include "mmt/commands.hpp"

namespace {

// Flags are collected as strings and replayed through the same key=value
// parser the config file uses, so precedence is simply: profile defaults,
// then config file, then command line.
struct FlagSet {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;  // key, value

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    cmd->add_option_function<std::string>(
           flag, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help)
        ->expected(1);
  }

  mmt::RunConfig resolve() const {
    mmt::RunConfig cfg;
    if (!config_path.empty()) cfg = mmt::RunConfig::from_file(config_path);
    for (const auto& [key, value] : overrides) cfg.apply_override(key, value);
    return cfg;
  }
};

void add_common_flags(CLI::App* cmd, FlagSet& flags) {
  cmd->add_option("--config", flags.config_path, "key=value config file");
  flags.add(cmd, "--seed", "seed", "random seed");
  flags.add(cmd, "--data-dir", "data_dir", "corpus directory");
  flags.add(cmd, "--out-dir", "out_dir", "output directory");
  flags.add(cmd, "--max-epochs", "max_epochs", "training epoch limit");
  flags.add(cmd, "--lr", "lr", "initial learning rate");
  flags.add(cmd, "--margin", "margin", "hinge margin");
  flags.add(cmd, "--batch-size", "batch_size", "training batch size");
  flags.add(cmd, "--dim", "dim", "model width");
  flags.add(cmd, "--heads", "heads", "attention heads");
  flags.add(cmd, "--blocks", "blocks", "matching blocks");
  flags.add(cmd, "--ffn-dim", "ffn_dim", "position-wise FFN width");
  flags.add(cmd, "--dropout", "dropout", "dropout rate");
  flags.add(cmd, "--candidates", "candidates", "candidate set size");
  flags.add(cmd, "--profile", "profile", "dimension profile: paper or desk");
  flags.add(cmd, "--modalities", "modalities", "context modalities, subset of cfa");
  flags.add(cmd, "--vision-dim", "vision_dim", "vision feature width");
  flags.add(cmd, "--audio-dim", "audio_dim", "audio feature width");
}

int dispatch(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const mmt::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mmt::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mmt::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mmt::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mmt::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal matching transformer for live-comment ranking"};
  app.require_subcommand(1);

  FlagSet synth_flags, train_flags, eval_flags, rank_flags, grad_flags;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common_flags(synth, synth_flags);
  synth_flags.add(synth, "--n-clips", "n_clips", "training clips to generate");
  synth_flags.add(synth, "--n-comments", "n_comments", "surrounding comments per clip");
  synth_flags.add(synth, "--n-frames", "n_frames", "vision rows per clip");
  synth_flags.add(synth, "--min-count", "min_count", "vocabulary frequency threshold");
  synth_flags.add(synth, "--synth-dev", "synth_dev", "dev clips to generate");
  synth_flags.add(synth, "--synth-test", "synth_test", "test clips to generate");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common_flags(train, train_flags);
  train_flags.add(train, "--resume", "resume", "checkpoint to resume from");
  train_flags.add(train, "--negatives", "negatives", "negative samples per clip");
  train_flags.add(train, "--dev-candidates", "dev_candidates", "dev candidate set size");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common_flags(eval, eval_flags);
  eval_flags.add(eval, "--checkpoint", "checkpoint", "checkpoint file");
  eval_flags.add(eval, "--split", "split", "train, dev, or test");

  CLI::App* rank = app.add_subcommand("rank", "rank candidates for one clip");
  add_common_flags(rank, rank_flags);
  rank_flags.add(rank, "--checkpoint", "checkpoint", "checkpoint file");
  std::string clip_file, candidates_file;
  rank->add_option("--clip", clip_file, "clip record file (first record used)")->required();
  rank->add_option("--candidates-file", candidates_file, "one candidate comment per line")
      ->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common_flags(gradcheck, grad_flags);
  grad_flags.add(gradcheck, "--stride", "gradcheck_stride", "check every n-th entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (synth->parsed()) {
    return dispatch([&] { return mmt::cmd_synth(synth_flags.resolve(), std::cout); });
  }
  if (train->parsed()) {
    return dispatch([&] { return mmt::cmd_train(train_flags.resolve(), std::cout); });
  }
  if (eval->parsed()) {
    return dispatch([&] { return mmt::cmd_eval(eval_flags.resolve(), std::cout); });
  }
  if (rank->parsed()) {
    return dispatch(
        [&] { return mmt::cmd_rank(rank_flags.resolve(), clip_file, candidates_file, std::cout); });
  }
  if (gradcheck->parsed()) {
    return dispatch([&] {
      mmt::RunConfig cfg = grad_flags.resolve();
      // Tiny-model defaults unless the user overrode the dimensions.
      bool dims_given = false;
      for (const auto& [key, value] : grad_flags.overrides) {
        if (key == "dim" || key == "heads" || key == "blocks" || key == "ffn_dim" ||
            key == "profile") {
          dims_given = true;
        }
      }
      if (!dims_given) {
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.blocks = 2;
        cfg.ffn_dim = 16;
        if (cfg.vision_dim < 0) cfg.vision_dim = 12;
      }
      return mmt::cmd_gradcheck(cfg, std::cout);
    });
  }
  return 1;
}
