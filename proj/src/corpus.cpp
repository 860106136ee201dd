#include "mmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mmt {

using json = nlohmann::json;

std::string ClipRecord::candidate_text() const {
  std::string out;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (i) out += ' ';
    out += candidate[i];
  }
  return out;
}

// --- tokenizer ---------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return tokens;
}

// --- vocabulary ----------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens) : id_to_token_(std::move(tokens)) {
  token_to_id_.reserve(id_to_token_.size());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    token_to_id_.emplace(id_to_token_[i], static_cast<std::int32_t>(i) + 2);
  }
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  static const std::string pad = "<pad>";
  static const std::string unk = "<unk>";
  if (id == kPad) return pad;
  if (id == kUnk) return unk;
  const auto idx = static_cast<std::size_t>(id - 2);
  if (idx >= id_to_token_.size()) {
    throw IndexError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[idx];
}

std::vector<std::int32_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::uint64_t Vocabulary::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  };
  for (const auto& t : id_to_token_) mix(t);
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("vocabulary: cannot write " + path);
  for (const auto& t : id_to_token_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("vocabulary: cannot read " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const std::vector<ClipRecord>& records, std::int64_t min_count) {
  if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
  if (records.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::int64_t> counts;  // ordered map: lexicographic tie-break for free
  for (const auto& r : records) {
    for (const auto& comment : r.surrounding) {
      for (const auto& t : comment) ++counts[t];
    }
    for (const auto& t : r.candidate) ++counts[t];
  }
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [tok, n] : kept) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens));
}

// --- clip record io ---------------------------------------------------------------

namespace {

std::vector<std::vector<double>> parse_matrix(const json& j, const char* key,
                                              std::int64_t line_no) {
  if (!j.is_array() || j.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": '" + key +
                     "' must be a nonempty list of vectors");
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(j.size());
  for (const auto& row : j) {
    if (!row.is_array() || row.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": '" + key +
                       "' rows must be nonempty number lists");
    }
    rows.emplace_back();
    rows.back().reserve(row.size());
    for (const auto& v : row) {
      if (!v.is_number()) {
        throw ParseError("line " + std::to_string(line_no) + ": '" + key +
                         "' contains a non-number");
      }
      rows.back().push_back(v.get<double>());
    }
  }
  for (const auto& row : rows) {
    if (row.size() != rows.front().size()) {
      throw ParseError("line " + std::to_string(line_no) + ": '" + key +
                       "' rows have inconsistent dimensions");
    }
  }
  return rows;
}

}  // namespace

std::vector<ClipRecord> load_clips(const std::string& path, std::int64_t expected_audio_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_clips: cannot read " + path);
  std::vector<ClipRecord> records;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ClipRecord r;
    try {
      r.clip_id = j.at("clip_id").get<std::string>();
      r.timestamp_s = j.at("timestamp_s").get<std::int64_t>();
      for (const auto& s : j.at("surrounding")) {
        r.surrounding.push_back(tokenize(s.get<std::string>()));
      }
      r.candidate = tokenize(j.at("candidate").get<std::string>());
      r.is_ground_truth = j.at("is_ground_truth").get<bool>();
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    r.vision = parse_matrix(j.at("vision"), "vision", line_no);
    r.audio = parse_matrix(j.at("audio"), "audio", line_no);

    if (r.surrounding.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": no surrounding comments");
    }
    if (r.candidate.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty candidate");
    }
    if (static_cast<std::int64_t>(r.audio.size()) < 5) {
      throw ParseError("line " + std::to_string(line_no) + ": need at least 5 audio frames, got " +
                       std::to_string(r.audio.size()));
    }
    if (expected_audio_dim > 0 &&
        static_cast<std::int64_t>(r.audio.front().size()) != expected_audio_dim) {
      throw ParseError("line " + std::to_string(line_no) + ": audio dimension " +
                       std::to_string(r.audio.front().size()) + " does not match configured " +
                       std::to_string(expected_audio_dim));
    }
    records.push_back(std::move(r));
  }
  return records;
}

void save_clips(const std::string& path, const std::vector<ClipRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_clips: cannot write " + path);
  for (const auto& r : records) {
    json j;
    j["clip_id"] = r.clip_id;
    j["timestamp_s"] = r.timestamp_s;
    json surrounding = json::array();
    for (const auto& comment : r.surrounding) {
      std::string text;
      for (std::size_t i = 0; i < comment.size(); ++i) {
        if (i) text += ' ';
        text += comment[i];
      }
      surrounding.push_back(text);
    }
    j["surrounding"] = surrounding;
    j["vision"] = r.vision;
    j["audio"] = r.audio;
    j["candidate"] = r.candidate_text();
    j["is_ground_truth"] = r.is_ground_truth;
    out << j.dump() << '\n';
  }
}

// --- batching --------------------------------------------------------------------

std::array<std::pair<std::int32_t, std::int32_t>, 5> audio_slice_bounds(std::int64_t n_frames) {
  if (n_frames < 5) {
    throw DataError("audio_slice_bounds: need >= 5 frames, got " + std::to_string(n_frames));
  }
  std::array<std::pair<std::int32_t, std::int32_t>, 5> bounds;
  const std::int64_t q = n_frames / 5, r = n_frames % 5;
  std::int32_t start = 0;
  for (int t = 0; t < 5; ++t) {
    const std::int32_t len = static_cast<std::int32_t>(q + (t < r ? 1 : 0));
    bounds[t] = {start, start + len};
    start += len;
  }
  return bounds;
}

Batch make_batch(const std::vector<ClipRecord>& records, const Vocabulary& vocab) {
  if (records.empty()) throw DataError("make_batch: empty record list");
  Batch b;
  b.size = static_cast<std::int64_t>(records.size());
  b.vision_dim = static_cast<std::int64_t>(records.front().vision.front().size());
  b.audio_dim = static_cast<std::int64_t>(records.front().audio.front().size());

  std::vector<std::vector<std::int32_t>> comment_rows, candidate_rows;
  for (const auto& r : records) {
    std::vector<std::int32_t> flat;
    for (const auto& comment : r.surrounding) {
      auto ids = vocab.encode(comment);
      flat.insert(flat.end(), ids.begin(), ids.end());
    }
    comment_rows.push_back(std::move(flat));
    candidate_rows.push_back(vocab.encode(r.candidate));
    b.comment_width = std::max(b.comment_width,
                               static_cast<std::int64_t>(comment_rows.back().size()));
    b.candidate_width = std::max(b.candidate_width,
                                 static_cast<std::int64_t>(candidate_rows.back().size()));
    b.vision_width = std::max(b.vision_width, static_cast<std::int64_t>(r.vision.size()));
    b.audio_width = std::max(b.audio_width, static_cast<std::int64_t>(r.audio.size()));
  }

  b.comment_ids.assign(b.size * b.comment_width, Vocabulary::kPad);
  b.comment_mask.assign(b.size * b.comment_width, 0);
  b.candidate_ids.assign(b.size * b.candidate_width, Vocabulary::kPad);
  b.candidate_mask.assign(b.size * b.candidate_width, 0);
  b.vision.assign(b.size * b.vision_width * b.vision_dim, 0.0);
  b.vision_mask.assign(b.size * b.vision_width, 0);
  b.audio.assign(b.size * b.audio_width * b.audio_dim, 0.0);

  for (std::int64_t i = 0; i < b.size; ++i) {
    const auto& r = records[i];
    if (static_cast<std::int64_t>(r.vision.front().size()) != b.vision_dim) {
      throw DataError("make_batch: vision dimension mismatch in clip " + r.clip_id);
    }
    if (static_cast<std::int64_t>(r.audio.front().size()) != b.audio_dim) {
      throw DataError("make_batch: audio dimension mismatch in clip " + r.clip_id);
    }
    for (std::size_t t = 0; t < comment_rows[i].size(); ++t) {
      b.comment_ids[i * b.comment_width + t] = comment_rows[i][t];
      b.comment_mask[i * b.comment_width + t] = 1;
    }
    for (std::size_t t = 0; t < candidate_rows[i].size(); ++t) {
      b.candidate_ids[i * b.candidate_width + t] = candidate_rows[i][t];
      b.candidate_mask[i * b.candidate_width + t] = 1;
    }
    for (std::size_t f = 0; f < r.vision.size(); ++f) {
      b.vision_mask[i * b.vision_width + static_cast<std::int64_t>(f)] = 1;
      for (std::int64_t j = 0; j < b.vision_dim; ++j) {
        b.vision[(i * b.vision_width + static_cast<std::int64_t>(f)) * b.vision_dim + j] =
            r.vision[f][static_cast<std::size_t>(j)];
      }
    }
    for (std::size_t f = 0; f < r.audio.size(); ++f) {
      for (std::int64_t j = 0; j < b.audio_dim; ++j) {
        b.audio[(i * b.audio_width + static_cast<std::int64_t>(f)) * b.audio_dim + j] =
            r.audio[f][static_cast<std::size_t>(j)];
      }
    }
    b.audio_len.push_back(static_cast<std::int64_t>(r.audio.size()));
    b.audio_slices.push_back(audio_slice_bounds(static_cast<std::int64_t>(r.audio.size())));
    b.is_ground_truth.push_back(r.is_ground_truth);
    b.clip_ids.push_back(r.clip_id);
  }
  return b;
}

ClipContext Batch::context(std::int64_t i) const {
  ClipContext ctx;
  ctx.comment_ids.assign(comment_ids.begin() + i * comment_width,
                         comment_ids.begin() + (i + 1) * comment_width);
  ctx.comment_mask.assign(comment_mask.begin() + i * comment_width,
                          comment_mask.begin() + (i + 1) * comment_width);
  ctx.vision = Tensor({vision_width, vision_dim},
                      std::vector<double>(vision.begin() + i * vision_width * vision_dim,
                                          vision.begin() + (i + 1) * vision_width * vision_dim));
  ctx.vision_mask.assign(vision_mask.begin() + i * vision_width,
                         vision_mask.begin() + (i + 1) * vision_width);
  const std::int64_t n_audio = audio_len[i];
  ctx.audio = Tensor({n_audio, audio_dim},
                     std::vector<double>(audio.begin() + i * audio_width * audio_dim,
                                         audio.begin() + (i * audio_width + n_audio) * audio_dim));
  ctx.audio_slices = audio_slices[i];
  ctx.audio_mask.assign(5, 1);
  return ctx;
}

CandidateTokens Batch::candidate(std::int64_t i) const {
  CandidateTokens c;
  c.ids.assign(candidate_ids.begin() + i * candidate_width,
               candidate_ids.begin() + (i + 1) * candidate_width);
  c.mask.assign(candidate_mask.begin() + i * candidate_width,
                candidate_mask.begin() + (i + 1) * candidate_width);
  return c;
}

ClipContext context_from_record(const ClipRecord& record, const Vocabulary& vocab) {
  return make_batch({record}, vocab).context(0);
}

CandidateTokens candidate_from_tokens(const std::vector<std::string>& tokens,
                                      const Vocabulary& vocab) {
  CandidateTokens c;
  c.ids = vocab.encode(tokens);
  c.mask.assign(c.ids.size(), 1);
  return c;
}

// --- synthetic corpus ---------------------------------------------------------------

namespace {

// Pronounceable unique pseudo-words ("kufosa", "betira", ...).
std::string pseudo_word(std::int64_t index) {
  static const char* syllables[] = {
      "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi",
      "fo", "fu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma",
      "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu", "pa", "pe", "pi", "po",
      "pu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te",
      "ti", "to", "tu", "za", "ze", "zi", "zo", "zu"};
  constexpr std::int64_t n = static_cast<std::int64_t>(std::size(syllables));
  std::string w;
  std::int64_t x = index;
  for (int s = 0; s < 3; ++s) {
    w += syllables[x % n];
    x /= n;
  }
  return w;
}

const std::vector<std::string> kFiller = {"the", "a",    "is",  "it",  "so", "and",
                                          "very", "wow", "nice", "haha", "oh", "my"};

std::vector<std::string> make_filler_tail(Rng& rng, std::int64_t count) {
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(kFiller[rng.below(kFiller.size())]);
  }
  return out;
}

}  // namespace

SynthCorpus synth_generate(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.n_train < 1) throw ConfigError("synth_generate: n_train must be >= 1");
  if (cfg.attr_values < 1 || cfg.words_per_value < 2) {
    throw ConfigError("synth_generate: need attr_values >= 1 and words_per_value >= 2");
  }
  if (cfg.min_audio_frames < 5) throw ConfigError("synth_generate: min_audio_frames must be >= 5");

  Rng rng(seed);
  SynthCorpus corpus;

  // Word inventories: one disjoint slice per (modality, attribute value).
  auto words_for = [&](int modality, std::int64_t value) {
    std::vector<std::string> ws;
    for (std::int64_t j = 0; j < cfg.words_per_value; ++j) {
      ws.push_back(pseudo_word((modality * cfg.attr_values + value) * cfg.words_per_value + j +
                               1000));
    }
    return ws;
  };
  std::vector<std::vector<std::string>> vision_words, audio_words, text_words;
  for (std::int64_t v = 0; v < cfg.attr_values; ++v) {
    vision_words.push_back(words_for(0, v));
    audio_words.push_back(words_for(1, v));
    text_words.push_back(words_for(2, v));
  }

  // Designated popular comments: short, generic, occasionally exclamatory.
  for (std::int64_t p = 0; p < cfg.n_popular; ++p) {
    std::vector<std::string> toks = make_filler_tail(rng, 2 + static_cast<std::int64_t>(rng.below(3)));
    const std::int64_t bangs = rng.below(3);
    for (std::int64_t i = 0; i < bangs; ++i) toks.push_back("!");
    toks.push_back(pseudo_word(500 + p));  // keeps popular strings distinct
    std::string text;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (i) text += ' ';
      text += toks[i];
    }
    corpus.popular.push_back(text);
  }

  // Per-attribute feature directions.
  auto make_means = [&](std::int64_t dim) {
    std::vector<std::vector<double>> means;
    for (std::int64_t v = 0; v < cfg.attr_values; ++v) {
      std::vector<double> mu(static_cast<std::size_t>(dim));
      for (auto& x : mu) x = cfg.feature_scale * rng.gaussian();
      means.push_back(std::move(mu));
    }
    return means;
  };
  const auto vision_means = make_means(cfg.vision_dim);
  const auto audio_means = make_means(cfg.audio_dim);

  std::set<std::string> pool_set;
  std::int64_t clip_counter = 0;

  auto gen_split = [&](std::int64_t n, std::vector<ClipRecord>& out) {
    for (std::int64_t i = 0; i < n; ++i) {
      SynthTopic topic;
      topic.vision_attr = static_cast<std::int32_t>(rng.below(cfg.attr_values));
      topic.audio_attr = static_cast<std::int32_t>(rng.below(cfg.attr_values));
      topic.text_attr = static_cast<std::int32_t>(rng.below(cfg.attr_values));

      ClipRecord r;
      {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip%06lld", static_cast<long long>(clip_counter++));
        r.clip_id = buf;
      }
      r.timestamp_s = 5 * clip_counter + static_cast<std::int64_t>(rng.below(5));
      r.is_ground_truth = true;

      // Surrounding comments reveal the text attribute only.
      for (std::int64_t cidx = 0; cidx < cfg.n_comments; ++cidx) {
        if (rng.uniform() < 0.1) {
          r.surrounding.push_back(tokenize(corpus.popular[rng.below(corpus.popular.size())]));
          continue;
        }
        std::vector<std::string> toks;
        const std::int64_t n_topic = 2 + static_cast<std::int64_t>(rng.below(3));
        const auto& tw = text_words[static_cast<std::size_t>(topic.text_attr)];
        for (std::int64_t w = 0; w < n_topic; ++w) toks.push_back(tw[rng.below(tw.size())]);
        auto tail = make_filler_tail(rng, 1 + static_cast<std::int64_t>(rng.below(3)));
        toks.insert(toks.end(), tail.begin(), tail.end());
        rng.shuffle(toks);
        r.surrounding.push_back(std::move(toks));
      }

      // Vision rows and audio frames carry their attribute's mean plus noise.
      for (std::int64_t f = 0; f < cfg.n_frames; ++f) {
        std::vector<double> row(static_cast<std::size_t>(cfg.vision_dim));
        const auto& mu = vision_means[static_cast<std::size_t>(topic.vision_attr)];
        for (std::size_t j = 0; j < row.size(); ++j) {
          row[j] = mu[j] + cfg.feature_noise * rng.gaussian();
        }
        r.vision.push_back(std::move(row));
      }
      const std::int64_t n_audio =
          cfg.min_audio_frames +
          static_cast<std::int64_t>(rng.below(cfg.max_audio_frames - cfg.min_audio_frames + 1));
      for (std::int64_t f = 0; f < n_audio; ++f) {
        std::vector<double> row(static_cast<std::size_t>(cfg.audio_dim));
        const auto& mu = audio_means[static_cast<std::size_t>(topic.audio_attr)];
        for (std::size_t j = 0; j < row.size(); ++j) {
          row[j] = mu[j] + cfg.feature_noise * rng.gaussian();
        }
        r.audio.push_back(std::move(row));
      }

      // Ground truth: popular (generic) with small probability, topical otherwise.
      if (rng.uniform() < cfg.popular_rate) {
        r.candidate = tokenize(corpus.popular[rng.below(corpus.popular.size())]);
      } else {
        std::vector<std::string> toks;
        auto push_from = [&](const std::vector<std::string>& ws) {
          const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(2));
          for (std::int64_t w = 0; w < k; ++w) toks.push_back(ws[rng.below(ws.size())]);
        };
        push_from(vision_words[static_cast<std::size_t>(topic.vision_attr)]);
        push_from(audio_words[static_cast<std::size_t>(topic.audio_attr)]);
        push_from(text_words[static_cast<std::size_t>(topic.text_attr)]);
        auto tail = make_filler_tail(rng, rng.below(3));
        toks.insert(toks.end(), tail.begin(), tail.end());
        rng.shuffle(toks);
        r.candidate = toks;
        corpus.candidate_topic[r.candidate_text()] = topic;
      }

      corpus.clip_topic[r.clip_id] = topic;
      out.push_back(std::move(r));
    }
  };

  gen_split(cfg.n_train, corpus.train);
  gen_split(cfg.n_dev, corpus.dev);
  gen_split(cfg.n_test, corpus.test);

  // The distractor pool is the training comment pool: training-split
  // candidates plus the designated popular comments.
  for (const auto& r : corpus.train) pool_set.insert(r.candidate_text());
  for (const auto& p : corpus.popular) pool_set.insert(p);
  corpus.pool.assign(pool_set.begin(), pool_set.end());
  return corpus;
}

}  // namespace mmt
