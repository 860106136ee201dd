#pragma once

#include <iosfwd>

#include "mmt/training.hpp"

namespace mmt {

// Loads train/dev splits, vocabulary, distractor pool, and the top-20
// popular comments from data_dir.
TrainingData load_training_data(const RunConfig& cfg);

int cmd_synth(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_rank(const RunConfig& cfg, const std::string& clip_file,
             const std::string& candidates_file, std::ostream& out);

struct GradCheckGroupReport {
  std::string group;
  double max_rel_error = 0.0;
  std::int64_t entries = 0;
  bool pass = false;
};

struct GradCheckOutcome {
  std::vector<GradCheckGroupReport> groups;
  double max_rel_error = 0.0;
  bool pass = false;
  double seconds = 0.0;
};

// Checks the tape gradient of the full max-margin loss against central
// finite differences for every parameter group of a tiny model.
GradCheckOutcome run_gradcheck(const RunConfig& cfg, double h = 1e-4, double tol = 1e-4,
                               int threads = 2);

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

}  // namespace mmt
