#include "mmt/model.hpp"

#include <cmath>

namespace mmt {

void ModelConfig::validate() const {
  std::string problems;
  auto flag = [&problems](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  if (dim < 2 || dim % 2 != 0) flag("dim must be even and >= 2");
  if (heads < 1 || (dim > 0 && dim % heads != 0)) flag("heads must divide dim");
  if (blocks < 1) flag("blocks must be >= 1");
  if (ffn_dim < 1) flag("ffn_dim must be >= 1");
  if (vocab_size < 2) flag("vocab_size must include PAD and UNK");
  if (vision_dim < 1) flag("vision_dim must be >= 1");
  if (audio_dim < 1) flag("audio_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) flag("dropout must lie in [0,1)");
  if (embed_init_range <= 0.0) flag("embed_init_range must be > 0");
  if (modalities.empty()) flag("at least one context modality required");
  std::string seen;
  for (char m : modalities) {
    if (m != 'c' && m != 'f' && m != 'a') flag(std::string("unknown modality '") + m + "'");
    if (seen.find(m) != std::string::npos) flag(std::string("duplicate modality '") + m + "'");
    seen += m;
  }
  const std::string canonical = "cfa";
  std::size_t last = 0;
  for (char m : modalities) {
    const auto pos = canonical.find(m);
    if (pos != std::string::npos && pos + 1 < last) flag("modalities must keep c,f,a order");
    last = pos + 1;
  }
  if (!problems.empty()) throw ConfigError("model config: " + problems);
}

namespace {

std::string stream_name(const ModelConfig& cfg, std::size_t index) {
  if (index == 0) return "y";
  return std::string(1, cfg.modalities[index - 1]);
}

}  // namespace

MatchingModel::MatchingModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::int64_t d = cfg_.dim;
  const std::int64_t d_k = d / cfg_.heads;

  enc_.embedding = Tensor({cfg_.vocab_size, d});
  if (cfg_.vision_dim != d && cfg_.uses('f')) {
    enc_.vision_proj_w = Tensor({cfg_.vision_dim, d});
    enc_.vision_proj_b = Tensor({1, d});
  }
  if (cfg_.uses('a')) {
    auto mat = [&](std::int64_t r, std::int64_t c) { return Tensor({r, c}); };
    enc_.gru.w_update = mat(cfg_.audio_dim, d);
    enc_.gru.u_update = mat(d, d);
    enc_.gru.b_update = mat(1, d);
    enc_.gru.w_reset = mat(cfg_.audio_dim, d);
    enc_.gru.u_reset = mat(d, d);
    enc_.gru.b_reset = mat(1, d);
    enc_.gru.w_cand = mat(cfg_.audio_dim, d);
    enc_.gru.u_cand = mat(d, d);
    enc_.gru.b_cand = mat(1, d);
  }

  const std::size_t n_streams = cfg_.n_streams();
  const std::int64_t k_other = static_cast<std::int64_t>(n_streams) - 1;
  auto make_attention = [&] {
    AttentionParams a;
    for (std::int64_t i = 0; i < cfg_.heads; ++i) {
      a.query_proj.push_back(Tensor({d, d_k}));
      a.key_proj.push_back(Tensor({d, d_k}));
      a.value_proj.push_back(Tensor({d, d_k}));
    }
    a.output_proj = Tensor({d, d});
    return a;
  };
  auto make_ffn = [&] {
    FfnParams f;
    f.w_inner = Tensor({d, cfg_.ffn_dim});
    f.b_inner = Tensor({1, cfg_.ffn_dim});
    f.w_outer = Tensor({cfg_.ffn_dim, d});
    f.b_outer = Tensor({1, d});
    return f;
  };
  auto make_ln = [&] { return LayerNormParams{Tensor({1, d}, 1.0), Tensor({1, d}, 0.0)}; };

  for (std::int64_t b = 0; b < cfg_.blocks; ++b) {
    MatchingBlockParams block;
    for (std::size_t s = 0; s < n_streams; ++s) {
      auto sp = std::make_shared<StreamBlockParams>();
      sp->self_attn = make_attention();
      sp->ffn_inner = make_ffn();
      for (std::int64_t o = 0; o < k_other; ++o) sp->cross.push_back(make_attention());
      sp->gate.weight = Tensor({k_other * d, k_other * d});
      sp->gate.bias = Tensor({1, k_other * d});
      sp->ffn_out = make_ffn();
      sp->ln_self = make_ln();
      sp->ln_inner = make_ln();
      sp->ln_cross = make_ln();
      sp->ln_out = make_ln();
      block.streams.push_back(std::move(sp));
    }
    blocks_.push_back(std::move(block));
  }

  for (std::size_t s = 0; s < n_streams; ++s) {
    PoolParams pool;
    pool.w_hidden = Tensor({d, d});
    pool.b_hidden = Tensor({1, d});
    pool.w_score = Tensor({d, 1});
    pool.b_score = Tensor({1, 1});
    head_.pools.push_back(std::move(pool));
  }
  const std::int64_t k_ctx = k_other;
  head_.context_gate.weight = Tensor({k_ctx * d, k_ctx * d});
  head_.context_gate.bias = Tensor({1, k_ctx * d});

  for (auto& p : parameters()) p.tensor.set_requires_grad(true);
}

void MatchingModel::init(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417));
  // Embeddings uniform(-0.1, 0.1) with the PAD row frozen at zero; weight
  // matrices scaled-uniform with bound sqrt(6/(fan_in+fan_out)); biases and
  // layer-norm offsets zero, layer-norm gains one.
  for (auto& p : parameters()) {
    Tensor t = p.tensor;
    if (p.name == "embedding") {
      const double r = cfg_.embed_init_range;
      for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-r, r);
      for (std::int64_t j = 0; j < t.cols(); ++j) t.at(0, j) = 0.0;  // PAD
      continue;
    }
    if (p.group == "layer_norm") {
      const double v = p.name.ends_with(".gain") ? 1.0 : 0.0;
      for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = v;
      continue;
    }
    if (t.rank() == 2 && t.rows() > 1) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-bound, bound);
    } else {
      for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0;  // biases
    }
  }
}

std::vector<NamedParam> MatchingModel::parameters() const {
  std::vector<NamedParam> out;
  auto push = [&out](std::string name, std::string group, const Tensor& t) {
    if (t.defined()) out.push_back({std::move(name), std::move(group), t});
  };

  push("embedding", "embeddings", enc_.embedding);
  push("vision_proj.w", "vision_proj", enc_.vision_proj_w);
  push("vision_proj.b", "vision_proj", enc_.vision_proj_b);
  if (cfg_.uses('a')) {
    push("gru.w_update", "recurrent", enc_.gru.w_update);
    push("gru.u_update", "recurrent", enc_.gru.u_update);
    push("gru.b_update", "recurrent", enc_.gru.b_update);
    push("gru.w_reset", "recurrent", enc_.gru.w_reset);
    push("gru.u_reset", "recurrent", enc_.gru.u_reset);
    push("gru.b_reset", "recurrent", enc_.gru.b_reset);
    push("gru.w_cand", "recurrent", enc_.gru.w_cand);
    push("gru.u_cand", "recurrent", enc_.gru.u_cand);
    push("gru.b_cand", "recurrent", enc_.gru.b_cand);
  }

  auto push_attention = [&](const std::string& prefix, const AttentionParams& a) {
    for (std::size_t i = 0; i < a.query_proj.size(); ++i) {
      push(prefix + ".wq" + std::to_string(i), "attention", a.query_proj[i]);
      push(prefix + ".wk" + std::to_string(i), "attention", a.key_proj[i]);
      push(prefix + ".wv" + std::to_string(i), "attention", a.value_proj[i]);
    }
    push(prefix + ".wo", "attention", a.output_proj);
  };
  auto push_ffn = [&](const std::string& prefix, const FfnParams& f) {
    push(prefix + ".w_inner", "ffn", f.w_inner);
    push(prefix + ".b_inner", "ffn", f.b_inner);
    push(prefix + ".w_outer", "ffn", f.w_outer);
    push(prefix + ".b_outer", "ffn", f.b_outer);
  };
  auto push_ln = [&](const std::string& prefix, const LayerNormParams& ln) {
    push(prefix + ".gain", "layer_norm", ln.gain);
    push(prefix + ".bias", "layer_norm", ln.bias);
  };

  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t s = 0; s < blocks_[b].streams.size(); ++s) {
      const auto& sp = *blocks_[b].streams[s];
      const std::string prefix =
          "block" + std::to_string(b) + "." + stream_name(cfg_, s);
      push_attention(prefix + ".self", sp.self_attn);
      push_ffn(prefix + ".ffn_inner", sp.ffn_inner);
      for (std::size_t o = 0; o < sp.cross.size(); ++o) {
        push_attention(prefix + ".cross" + std::to_string(o), sp.cross[o]);
      }
      push(prefix + ".gate.w", "gate", sp.gate.weight);
      push(prefix + ".gate.b", "gate", sp.gate.bias);
      push_ffn(prefix + ".ffn_out", sp.ffn_out);
      push_ln(prefix + ".ln_self", sp.ln_self);
      push_ln(prefix + ".ln_inner", sp.ln_inner);
      push_ln(prefix + ".ln_cross", sp.ln_cross);
      push_ln(prefix + ".ln_out", sp.ln_out);
    }
  }

  for (std::size_t s = 0; s < head_.pools.size(); ++s) {
    const std::string prefix = "pool." + stream_name(cfg_, s);
    push(prefix + ".w_hidden", "pooling", head_.pools[s].w_hidden);
    push(prefix + ".b_hidden", "pooling", head_.pools[s].b_hidden);
    push(prefix + ".w_score", "pooling", head_.pools[s].w_score);
    push(prefix + ".b_score", "pooling", head_.pools[s].b_score);
  }
  push("context_gate.w", "gate", head_.context_gate.weight);
  push("context_gate.b", "gate", head_.context_gate.bias);
  return out;
}

void MatchingModel::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

MatchingModel MatchingModel::clone() const {
  MatchingModel copy(cfg_);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].tensor.values() = src[i].tensor.values();
  }
  return copy;
}

Tensor score(Tape* tape, const MatchingModel& model, const ClipContext& context,
             const CandidateTokens& candidate, const ScoreOptions& opt) {
  const auto& cfg = model.config();
  const auto& enc = model.encoder();

  BlockRunOptions run;
  run.dropout_rate = cfg.dropout;
  run.training = opt.training;
  run.rng = opt.rng;
  run.attention_probes = opt.attention_probes;
  run.gate_probes = opt.gate_probes;

  auto encoder_dropout = [&](Tensor h) {
    return dropout(tape, h, cfg.dropout, opt.training, opt.rng);
  };

  StreamState state;
  state.h.push_back(encoder_dropout(encode_comment(tape, candidate.ids, enc)));
  state.mask.push_back(candidate.mask);
  if (cfg.uses('c')) {
    state.h.push_back(encoder_dropout(encode_comment(tape, context.comment_ids, enc)));
    state.mask.push_back(context.comment_mask);
  }
  if (cfg.uses('f')) {
    state.h.push_back(encoder_dropout(encode_vision(tape, context.vision, enc)));
    state.mask.push_back(context.vision_mask);
  }
  if (cfg.uses('a')) {
    state.h.push_back(
        encoder_dropout(encode_audio(tape, context.audio, context.audio_slices, enc)));
    state.mask.push_back(context.audio_mask);
  }

  StreamState final_state = matching_stack(tape, state, model.blocks(), run);

  std::vector<Tensor> pooled;
  pooled.reserve(final_state.h.size());
  for (std::size_t s = 0; s < final_state.h.size(); ++s) {
    pooled.push_back(weighted_pool(tape, final_state.h[s], final_state.mask[s],
                                   model.head().pools[s]));
  }

  std::vector<Tensor> context_vectors(pooled.begin() + 1, pooled.end());
  Tensor gate_weights;
  Tensor fused = fuse_context(tape, context_vectors, model.head().context_gate,
                              opt.gate_probes ? &gate_weights : nullptr);
  if (opt.gate_probes) opt.gate_probes->push_back(gate_weights);
  return cosine_score(tape, fused, pooled.front());
}

double score_value(const MatchingModel& model, const ClipContext& context,
                   const CandidateTokens& candidate) {
  return score(nullptr, model, context, candidate).at(0);
}

}  // namespace mmt
