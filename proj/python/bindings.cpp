#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmt/commands.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

mmt::RunConfig config_from_dict(const py::dict& options) {
  mmt::RunConfig cfg;
  // profile first: it resets the dimension keys it covers.
  if (options.contains("profile")) {
    cfg.apply_profile(options["profile"].cast<std::string>());
  }
  for (auto item : options) {
    const std::string key = py::str(item.first);
    if (key == "profile") continue;
    cfg.apply_override(key, py::str(item.second));
  }
  return cfg;
}

py::dict report_dict(const mmt::MetricReport& r) {
  py::dict d;
  d["recall_at_1"] = r.recall_at_1;
  d["recall_at_5"] = r.recall_at_5;
  d["recall_at_10"] = r.recall_at_10;
  d["mean_rank"] = r.mean_rank;
  d["mrr"] = r.mrr;
  d["n_clips"] = r.n_clips;
  return d;
}

std::vector<mmt::RankingResult> results_from_ranks(const std::vector<std::int64_t>& ranks) {
  std::vector<mmt::RankingResult> results;
  for (auto r : ranks) {
    mmt::RankingResult result;
    result.gt_rank = r;
    results.push_back(result);
  }
  return results;
}

py::list synth(const py::dict& options) {
  mmt::RunConfig cfg = config_from_dict(options);
  std::ostringstream sink;
  mmt::cmd_synth(cfg, sink);
  py::list written;
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "pool.txt", "vocab.txt"}) {
    written.append((fs::path(cfg.out_dir) / name).string());
  }
  return written;
}

py::list train(const py::dict& options) {
  mmt::RunConfig cfg = config_from_dict(options);
  std::ostringstream sink;
  mmt::cmd_train(cfg, sink);
  py::list reports;
  std::ifstream log(fs::path(cfg.out_dir) / "train_log.jsonl");
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    py::dict d;
    d["epoch"] = j.at("epoch").get<std::int64_t>();
    d["mean_loss"] = j.at("mean_loss").get<double>();
    d["dev_recall1"] = j.at("dev_recall1").get<double>();
    d["lr"] = j.at("lr").get<double>();
    reports.append(d);
  }
  return reports;
}

py::dict evaluate_checkpoint(const std::string& checkpoint, const std::string& data_dir,
                             const std::string& split, std::uint64_t seed,
                             std::int64_t candidates) {
  py::gil_scoped_release release;
  mmt::LoadedCheckpoint loaded = mmt::load_checkpoint(checkpoint);
  const fs::path dir(data_dir);
  auto records = mmt::load_clips((dir / (split + ".jsonl")).string(), loaded.config.audio_dim);
  auto vocab = mmt::Vocabulary::load((dir / "vocab.txt").string());
  if (vocab.checksum() != loaded.meta.vocab_checksum) {
    throw mmt::DataError("evaluate: vocab checksum mismatch between checkpoint and corpus");
  }
  auto train_records =
      mmt::load_clips((dir / "train.jsonl").string(), loaded.config.audio_dim);
  auto popular = mmt::popular_comments(train_records, 20);
  auto pool = mmt::candidate_pool(records);

  mmt::EvaluateOptions opt;
  opt.set_size = candidates;
  opt.seed = seed;
  auto out = mmt::evaluate(records, loaded.model, vocab, popular, pool, opt);
  py::gil_scoped_acquire acquire;
  return report_dict(out.report);
}

py::list rank_candidates(const std::string& checkpoint, const std::string& data_dir,
                         const std::string& clip_file,
                         const std::vector<std::string>& candidates) {
  py::gil_scoped_release release;
  mmt::LoadedCheckpoint loaded = mmt::load_checkpoint(checkpoint);
  auto vocab = mmt::Vocabulary::load((fs::path(data_dir) / "vocab.txt").string());
  if (vocab.checksum() != loaded.meta.vocab_checksum) {
    throw mmt::DataError("rank: vocab checksum mismatch between checkpoint and corpus");
  }
  auto records = mmt::load_clips(clip_file, loaded.config.audio_dim);
  if (records.empty()) throw mmt::DataError("rank: no clip records in " + clip_file);
  mmt::ClipContext context = mmt::context_from_record(records.front(), vocab);

  std::vector<std::pair<std::string, double>> scored;
  for (const auto& text : candidates) {
    const double s = mmt::score_value(
        loaded.model, context, mmt::candidate_from_tokens(mmt::tokenize(text), vocab));
    scored.emplace_back(text, s);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  py::gil_scoped_acquire acquire;
  py::list out;
  for (const auto& [text, s] : scored) out.append(py::make_tuple(text, s));
  return out;
}

py::dict grad_check(const py::dict& options) {
  mmt::RunConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.ffn_dim = 16;
  cfg.vision_dim = 12;
  cfg.audio_dim = 16;
  cfg.seed = 3;
  cfg.gradcheck_stride = 1;
  for (auto item : options) {
    cfg.apply_override(py::str(item.first), py::str(item.second));
  }
  auto outcome = mmt::run_gradcheck(cfg);
  py::dict groups;
  for (const auto& g : outcome.groups) groups[py::str(g.group)] = g.max_rel_error;
  py::dict d;
  d["groups"] = groups;
  d["max_rel_error"] = outcome.max_rel_error;
  d["pass"] = outcome.pass;
  d["seconds"] = outcome.seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mmt, m) {
  m.doc() = "multimodal matching transformer for live-comment ranking";

  m.def("tokenize", &mmt::tokenize, py::arg("text"),
        "Lowercase, split on whitespace, detach punctuation.");
  m.def("positional_embedding", &mmt::positional_embedding, py::arg("pos"), py::arg("d_model"),
        "Sinusoidal positional embedding vector.");
  m.def("margin_loss", &mmt::margin_loss, py::arg("s_pos"), py::arg("s_neg"), py::arg("margin"),
        "max(0, margin + s_neg - s_pos)");
  m.def(
      "cosine",
      [](const std::vector<double>& u, const std::vector<double>& v) {
        mmt::Tensor tu({1, static_cast<std::int64_t>(u.size())}, std::vector<double>(u));
        mmt::Tensor tv({1, static_cast<std::int64_t>(v.size())}, std::vector<double>(v));
        return mmt::cosine_score(nullptr, tu, tv).at(0);
      },
      py::arg("u"), py::arg("v"));

  m.def(
      "recall_at_k",
      [](const std::vector<std::int64_t>& ranks, std::int64_t k) {
        return mmt::recall_at_k(results_from_ranks(ranks), k);
      },
      py::arg("gt_ranks"), py::arg("k"));
  m.def(
      "mean_rank",
      [](const std::vector<std::int64_t>& ranks) {
        return mmt::mean_rank(results_from_ranks(ranks));
      },
      py::arg("gt_ranks"));
  m.def(
      "mrr",
      [](const std::vector<std::int64_t>& ranks) { return mmt::mrr(results_from_ranks(ranks)); },
      py::arg("gt_ranks"));

  m.def("synth", &synth, py::arg("options"),
        "Generate a synthetic corpus; options mirror the CLI config keys "
        "(seed, n_clips, out_dir, ...). Returns the written files.");
  m.def("train", &train, py::arg("options"),
        "Train a model; options mirror the CLI config keys. Returns epoch reports.");
  m.def("evaluate", &evaluate_checkpoint, py::arg("checkpoint"), py::arg("data_dir"),
        py::arg("split") = "test", py::arg("seed") = 1, py::arg("candidates") = 100,
        "Rank candidate sets for every clip of a split; returns the metric report.");
  m.def("rank_candidates", &rank_candidates, py::arg("checkpoint"), py::arg("data_dir"),
        py::arg("clip_file"), py::arg("candidates"),
        "Score candidates against one clip; returns (text, score) sorted by score.");
  m.def("grad_check", &grad_check, py::arg("options") = py::dict(),
        "Finite-difference check of the full loss gradient on a tiny model.");

  py::register_exception<mmt::ConfigError>(m, "ConfigError");
  py::register_exception<mmt::DataError>(m, "DataError");
  py::register_exception<mmt::ParseError>(m, "ParseError");
  py::register_exception<mmt::NumericError>(m, "NumericError");

  m.attr("__version__") = "0.1.0";
}
