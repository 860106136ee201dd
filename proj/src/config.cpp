#include "mmt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace mmt {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::int64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + value +
                      "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
}

}  // namespace

void RunConfig::apply_profile(const std::string& name) {
  if (name.empty()) return;
  if (name == "paper") {
    dim = 512;
    heads = 8;
    blocks = 6;
    ffn_dim = 2048;
  } else if (name == "desk") {
    dim = 32;
    heads = 2;
    blocks = 2;
    ffn_dim = 64;
  } else {
    throw ConfigError("config: unknown profile '" + name + "' (expected paper or desk)");
  }
  profile = name;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  if (key == "seed") seed = parse_uint(key, value);
  else if (key == "data_dir") data_dir = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "resume") resume = value;
  else if (key == "split") split = value;
  else if (key == "profile") apply_profile(value);
  else if (key == "dim") dim = parse_int(key, value);
  else if (key == "heads") heads = parse_int(key, value);
  else if (key == "blocks") blocks = parse_int(key, value);
  else if (key == "ffn_dim") ffn_dim = parse_int(key, value);
  else if (key == "modalities") modalities = value;
  else if (key == "vision_dim") vision_dim = parse_int(key, value);
  else if (key == "audio_dim") audio_dim = parse_int(key, value);
  else if (key == "margin") margin = parse_double(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "embed_init") embed_init = parse_double(key, value);
  else if (key == "min_lr") min_lr = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "negatives") negatives = parse_int(key, value);
  else if (key == "max_epochs") max_epochs = parse_int(key, value);
  else if (key == "candidates") candidates = parse_int(key, value);
  else if (key == "dev_candidates") dev_candidates = parse_int(key, value);
  else if (key == "gradcheck_stride") gradcheck_stride = parse_int(key, value);
  else if (key == "n_clips") n_clips = parse_int(key, value);
  else if (key == "synth_dev") synth_dev = parse_int(key, value);
  else if (key == "synth_test") synth_test = parse_int(key, value);
  else if (key == "n_comments") n_comments = parse_int(key, value);
  else if (key == "n_frames") n_frames = parse_int(key, value);
  else if (key == "min_count") min_count = parse_int(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::int64_t line_no = 0;
  std::string problems;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    std::string issue;
    if (eq == std::string::npos) {
      issue = "expected key=value, got '" + stripped + "'";
    } else {
      try {
        cfg.apply_override(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
      } catch (const ConfigError& e) {
        issue = e.what();
      }
    }
    if (!issue.empty()) {
      if (!problems.empty()) problems += "\n";
      problems += origin + ":" + std::to_string(line_no) + ": " + issue;
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str(), path);
}

void RunConfig::validate() const {
  std::string problems;
  auto flag = [&problems](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (margin <= 0) flag("margin must be > 0");
  if (lr <= 0) flag("lr must be > 0");
  if (dropout < 0 || dropout >= 1) flag("dropout must lie in [0,1)");
  if (batch_size < 1) flag("batch_size must be >= 1");
  if (negatives < 1) flag("negatives must be >= 1");
  if (max_epochs < 0) flag("max_epochs must be >= 0");
  if (candidates < 2) flag("candidates must be >= 2");
  if (beta1 <= 0 || beta1 >= 1) flag("beta1 must lie in (0,1)");
  if (beta2 <= 0 || beta2 >= 1) flag("beta2 must lie in (0,1)");
  if (adam_eps <= 0) flag("adam_eps must be > 0");
  if (gradcheck_stride < 1) flag("gradcheck_stride must be >= 1");
  try {
    model_config(16).validate();
  } catch (const ConfigError& e) {
    flag(e.what());
  }
  if (!problems.empty()) throw ConfigError(problems);
}

std::string RunConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(seed);
  // profile is emitted first: parsing is order-sensitive and the profile
  // resets the dimension keys it covers.
  kv["data_dir"] = data_dir;
  kv["out_dir"] = out_dir;
  kv["checkpoint"] = checkpoint;
  kv["resume"] = resume;
  kv["split"] = split;
  kv["profile"] = profile;
  kv["dim"] = std::to_string(dim);
  kv["heads"] = std::to_string(heads);
  kv["blocks"] = std::to_string(blocks);
  kv["ffn_dim"] = std::to_string(ffn_dim);
  kv["modalities"] = modalities;
  kv["vision_dim"] = std::to_string(vision_dim);
  kv["audio_dim"] = std::to_string(audio_dim);
  kv["margin"] = format_double(margin);
  kv["lr"] = format_double(lr);
  kv["beta1"] = format_double(beta1);
  kv["beta2"] = format_double(beta2);
  kv["adam_eps"] = format_double(adam_eps);
  kv["dropout"] = format_double(dropout);
  kv["embed_init"] = format_double(embed_init);
  kv["min_lr"] = format_double(min_lr);
  kv["batch_size"] = std::to_string(batch_size);
  kv["negatives"] = std::to_string(negatives);
  kv["max_epochs"] = std::to_string(max_epochs);
  kv["candidates"] = std::to_string(candidates);
  kv["dev_candidates"] = std::to_string(dev_candidates);
  kv["gradcheck_stride"] = std::to_string(gradcheck_stride);
  kv["n_clips"] = std::to_string(n_clips);
  kv["synth_dev"] = std::to_string(synth_dev);
  kv["synth_test"] = std::to_string(synth_test);
  kv["n_comments"] = std::to_string(n_comments);
  kv["n_frames"] = std::to_string(n_frames);
  kv["min_count"] = std::to_string(min_count);

  std::string out = "profile=" + profile + "\n";
  kv.erase("profile");
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

ModelConfig RunConfig::model_config(std::int64_t vocab_size) const {
  ModelConfig m;
  m.dim = dim;
  m.heads = heads;
  m.blocks = blocks;
  m.ffn_dim = ffn_dim;
  m.vocab_size = vocab_size;
  m.vision_dim = resolved_vision_dim();
  m.audio_dim = audio_dim;
  m.modalities = modalities;
  m.dropout = dropout;
  m.embed_init_range = embed_init;
  return m;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.n_train = n_clips;
  s.n_dev = synth_dev >= 0 ? synth_dev : std::max<std::int64_t>(4, n_clips / 5);
  s.n_test = synth_test >= 0 ? synth_test : std::max<std::int64_t>(4, n_clips / 5);
  s.n_comments = n_comments;
  s.n_frames = n_frames;
  s.vision_dim = resolved_vision_dim();
  s.audio_dim = audio_dim;
  return s;
}

}  // namespace mmt
