#include "flowcast/model.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "flowcast/common.hpp"
#include "flowcast/rng.hpp"

namespace flowcast {

using ad::Var;

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "Full";
    case Ablation::EncoderOnly: return "EncoderOnly";
    case Ablation::DecoderOnly: return "DecoderOnly";
    case Ablation::NoPatch: return "NoPatch";
    case Ablation::NoCrossAttn: return "NoCrossAttn";
  }
  return "Full";
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "Full") return Ablation::Full;
  if (name == "EncoderOnly") return Ablation::EncoderOnly;
  if (name == "DecoderOnly") return Ablation::DecoderOnly;
  if (name == "NoPatch") return Ablation::NoPatch;
  if (name == "NoCrossAttn") return Ablation::NoCrossAttn;
  throw ConfigError("unknown ablation '" + name + "'");
}

void ModelConfig::validate() const {
  if (patch_len < 1) throw ConfigError("model: patch_len must be >= 1");
  if (window_len < effective_patch())
    throw ConfigError("model: window_len " + std::to_string(window_len) +
                      " shorter than patch length " +
                      std::to_string(effective_patch()));
  if (horizon < 1) throw ConfigError("model: horizon must be >= 1");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("model: embed_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("model: dropout must be in [0,1)");
  if (ffn_mult == 0) throw ConfigError("model: ffn_mult must be >= 1");
}

ad::Tensor positional_encoding(std::size_t positions, std::size_t dim) {
  ad::Tensor pe({positions, dim});
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent =
          static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace {

ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, ad::Shape shape,
                  rng::Engine& eng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ad::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = eng.uniform(-limit, limit);
  return t;
}

}  // namespace

Var ModelState::reg(const std::string& name, ad::Tensor t) {
  Var v = ad::param(std::move(t));
  params_.emplace_back(name, v);
  return v;
}

ModelState::ModelState(const ModelConfig& cfg, std::size_t n_stations,
                       std::uint64_t seed)
    : cfg_(cfg), n_stations_(n_stations) {
  cfg_.validate();
  if (n_stations_ < 1) throw ConfigError("model: needs at least one station");

  const std::size_t d = cfg_.embed_dim;
  const std::size_t h = cfg_.horizon;
  const std::size_t p = cfg_.effective_patch();
  const std::size_t ffn = cfg_.ffn_mult * d;
  std::uint64_t counter = 0;
  const auto next_eng = [&] {
    return rng::Engine(rng::stream_seed(seed, {0x706d, counter++}));
  };

  const auto make_attention = [&](const std::string& prefix) {
    AttentionParams a;
    rng::Engine e1 = next_eng();
    a.wq = reg(prefix + ".wq", xavier(d, d, {d, d}, e1));
    rng::Engine e2 = next_eng();
    a.wk = reg(prefix + ".wk", xavier(d, d, {d, d}, e2));
    rng::Engine e3 = next_eng();
    a.wv = reg(prefix + ".wv", xavier(d, d, {d, d}, e3));
    rng::Engine e4 = next_eng();
    a.wo = reg(prefix + ".wo", xavier(d, d, {d, d}, e4));
    a.bo = reg(prefix + ".bo", ad::Tensor({d}));
    return a;
  };

  const auto make_encoder_block = [&](const std::string& prefix) {
    EncoderBlockParams b;
    b.attn = make_attention(prefix + ".attn");
    b.ln1_g = reg(prefix + ".ln1.g", ad::Tensor({d}, 1.0));
    b.ln1_b = reg(prefix + ".ln1.b", ad::Tensor({d}));
    rng::Engine e1 = next_eng();
    b.ffn_w1 = reg(prefix + ".ffn.w1", xavier(d, ffn, {d, ffn}, e1));
    b.ffn_b1 = reg(prefix + ".ffn.b1", ad::Tensor({ffn}));
    rng::Engine e2 = next_eng();
    b.ffn_w2 = reg(prefix + ".ffn.w2", xavier(ffn, d, {ffn, d}, e2));
    b.ffn_b2 = reg(prefix + ".ffn.b2", ad::Tensor({d}));
    b.ln2_g = reg(prefix + ".ln2.g", ad::Tensor({d}, 1.0));
    b.ln2_b = reg(prefix + ".ln2.b", ad::Tensor({d}));
    return b;
  };

  const auto make_decoder_block = [&](const std::string& prefix,
                                      bool with_cross) {
    DecoderBlockParams b;
    b.self_attn = make_attention(prefix + ".self");
    b.ln_self_g = reg(prefix + ".ln_self.g", ad::Tensor({d}, 1.0));
    b.ln_self_b = reg(prefix + ".ln_self.b", ad::Tensor({d}));
    b.has_cross = with_cross;
    if (with_cross) {
      b.cross_attn = make_attention(prefix + ".cross");
      b.ln_cross_g = reg(prefix + ".ln_cross.g", ad::Tensor({d}, 1.0));
      b.ln_cross_b = reg(prefix + ".ln_cross.b", ad::Tensor({d}));
    }
    rng::Engine e1 = next_eng();
    b.ffn_w1 = reg(prefix + ".ffn.w1", xavier(d, ffn, {d, ffn}, e1));
    b.ffn_b1 = reg(prefix + ".ffn.b1", ad::Tensor({ffn}));
    rng::Engine e2 = next_eng();
    b.ffn_w2 = reg(prefix + ".ffn.w2", xavier(ffn, d, {ffn, d}, e2));
    b.ffn_b2 = reg(prefix + ".ffn.b2", ad::Tensor({d}));
    b.ln_ffn_g = reg(prefix + ".ln_ffn.g", ad::Tensor({d}, 1.0));
    b.ln_ffn_b = reg(prefix + ".ln_ffn.b", ad::Tensor({d}));
    return b;
  };

  const Ablation ab = cfg_.ablation;
  const bool has_temporal = ab != Ablation::DecoderOnly;
  const bool has_spatial = ab != Ablation::DecoderOnly;
  const bool has_decoder = ab != Ablation::EncoderOnly;
  const bool has_cross = ab != Ablation::NoCrossAttn;

  {
    rng::Engine e = next_eng();
    patch_w = reg("patch.w", xavier(p, d, {p, d}, e));
    patch_b = reg("patch.b", ad::Tensor({d}));
  }
  if (has_temporal)
    for (std::size_t i = 0; i < cfg_.temporal_depth; ++i)
      temporal.push_back(make_encoder_block("temporal." + std::to_string(i)));
  {
    rng::Engine e = next_eng();
    node_emb = reg("node_emb", xavier(n_stations_, d, {n_stations_, d}, e));
  }
  if (has_spatial)
    for (std::size_t i = 0; i < cfg_.spatial_depth; ++i)
      spatial.push_back(make_encoder_block("spatial." + std::to_string(i)));
  if (has_decoder) {
    rng::Engine e = next_eng();
    q0 = reg("q0", xavier(h, d, {h, d}, e));
    // Decoder depth follows the temporal depth.
    for (std::size_t i = 0; i < cfg_.temporal_depth; ++i)
      decoder.push_back(
          make_decoder_block("decoder." + std::to_string(i), has_cross));
    rng::Engine eh = next_eng();
    head_w = reg("head.w", xavier(d, 1, {d, 1}, eh));
    head_b = reg("head.b", ad::Tensor({1}));
  } else {
    rng::Engine e = next_eng();
    enc_head_w = reg("enc_head.w", xavier(d, h, {d, h}, e));
    enc_head_b = reg("enc_head.b", ad::Tensor({h}));
  }
}

std::size_t ModelState::parameter_count() const {
  return std::accumulate(params_.begin(), params_.end(), std::size_t{0},
                         [](std::size_t acc, const auto& p) {
                           return acc + p.second.value().size();
                         });
}

std::vector<ad::Tensor> ModelState::snapshot() const {
  std::vector<ad::Tensor> values;
  values.reserve(params_.size());
  for (const auto& [name, var] : params_) values.push_back(var.value());
  return values;
}

void ModelState::restore(const std::vector<ad::Tensor>& values) {
  if (values.size() != params_.size())
    throw ContractError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i].same_shape(params_[i].second.value()))
      throw ContractError("restore: shape mismatch at " + params_[i].first);
    params_[i].second.node()->value = values[i];
  }
}

void ModelState::save(const std::string& path) const {
  std::vector<std::pair<std::string, ad::Tensor>> entries;
  entries.reserve(params_.size());
  for (const auto& [name, var] : params_) entries.emplace_back(name, var.value());
  ad::save_tensors(path, entries);
}

void ModelState::load(const std::string& path) {
  auto entries = ad::load_tensors(path);
  std::map<std::string, ad::Tensor*> by_name;
  for (auto& [name, tensor] : entries) by_name[name] = &tensor;
  if (entries.size() != params_.size())
    throw ValidationError(path + ": checkpoint has " +
                          std::to_string(entries.size()) + " tensors, model needs " +
                          std::to_string(params_.size()));
  for (auto& [name, var] : params_) {
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw ValidationError(path + ": checkpoint missing tensor '" + name + "'");
    if (!it->second->same_shape(var.value()))
      throw ValidationError(path + ": shape mismatch for '" + name + "'");
    var.node()->value = std::move(*it->second);
  }
}

Var multihead_attention(const ad::Var& q_in, const ad::Var& kv_in,
                        const AttentionParams& p, std::size_t heads) {
  const std::size_t d = q_in.shape().back();
  if (d % heads != 0)
    throw ShapeError("attention: dim " + std::to_string(d) +
                     " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dk = d / heads;
  const Var q = ad::matmul(q_in, p.wq);
  const Var k = ad::matmul(kv_in, p.wk);
  const Var v = ad::matmul(kv_in, p.wv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t lo = hd * dk, hi = (hd + 1) * dk;
    const std::size_t axis = q.shape().size() - 1;
    const Var qh = ad::slice(q, axis, lo, hi);
    const Var kh = ad::slice(k, axis, lo, hi);
    const Var vh = ad::slice(v, axis, lo, hi);
    const Var scores =
        ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
    contexts.push_back(ad::matmul(ad::softmax_lastaxis(scores), vh));
  }
  const Var ctx = heads == 1 ? contexts[0]
                             : ad::concat_many(contexts, q.shape().size() - 1);
  return ad::add_rowvec(ad::matmul(ctx, p.wo), p.bo);
}

namespace {

struct DropoutStream {
  std::uint64_t base;
  std::uint64_t counter = 0;
  bool train;
  double p;

  Var apply(const Var& x) {
    return ad::dropout(x, p, rng::stream_seed(base, {counter++}), train);
  }
};

Var ln_affine(const Var& x, const Var& g, const Var& b) {
  return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm(x), g), b);
}

Var ffn(const Var& x, const ad::Var& w1, const ad::Var& b1, const ad::Var& w2,
        const ad::Var& b2) {
  const Var hidden = ad::relu(ad::add_rowvec(ad::matmul(x, w1), b1));
  return ad::add_rowvec(ad::matmul(hidden, w2), b2);
}

// Post-LN encoder block: x = LN(x + Drop(MHSA(x))); x = LN(x + FFN(x)).
Var encoder_block(const Var& x_in, const EncoderBlockParams& blk,
                  std::size_t heads, DropoutStream& drop) {
  Var x = x_in;
  const Var att = drop.apply(multihead_attention(x, x, blk.attn, heads));
  x = ln_affine(ad::add(x, att), blk.ln1_g, blk.ln1_b);
  const Var ff = ffn(x, blk.ffn_w1, blk.ffn_b1, blk.ffn_w2, blk.ffn_b2);
  return ln_affine(ad::add(x, ff), blk.ln2_g, blk.ln2_b);
}

Var decoder_block(const Var& q_in, const Var* memory,
                  const DecoderBlockParams& blk, std::size_t heads,
                  DropoutStream& drop) {
  Var q = q_in;
  const Var self_att = drop.apply(multihead_attention(q, q, blk.self_attn, heads));
  q = ln_affine(ad::add(q, self_att), blk.ln_self_g, blk.ln_self_b);
  if (blk.has_cross && memory) {
    const Var cross =
        drop.apply(multihead_attention(q, *memory, blk.cross_attn, heads));
    q = ln_affine(ad::add(q, cross), blk.ln_cross_g, blk.ln_cross_b);
  }
  const Var ff = ffn(q, blk.ffn_w1, blk.ffn_b1, blk.ffn_w2, blk.ffn_b2);
  return ln_affine(ad::add(q, ff), blk.ln_ffn_g, blk.ln_ffn_b);
}

}  // namespace

Var forward_graph(const ad::Tensor& window, const Matrix& a_norm,
                  ModelState& state, bool train_mode,
                  std::uint64_t dropout_seed) {
  const ModelConfig& cfg = state.config();
  const std::size_t n = state.n_stations();
  const std::size_t L = cfg.window_len;
  if (window.rank() != 2 || window.dim(0) != L || window.dim(1) != n)
    throw ShapeError("forward: window " + ad::shape_str(window.shape()) +
                     ", expected (" + std::to_string(L) + "," +
                     std::to_string(n) + ")");
  if (a_norm.rows() != n || a_norm.cols() != n)
    throw ShapeError("forward: adjacency " + std::to_string(a_norm.rows()) +
                     "x" + std::to_string(a_norm.cols()) + ", expected " +
                     std::to_string(n) + "x" + std::to_string(n));

  DropoutStream drop{dropout_seed, 0, train_mode, cfg.dropout};
  const Ablation ab = cfg.ablation;
  const std::size_t p = cfg.effective_patch();
  const std::size_t lp = cfg.token_count();

  Var memory;  // (N, rows, d); left undefined when the decoder ignores it
  if (ab != Ablation::NoCrossAttn) {
    // Node-major history (N, L).
    ad::Tensor hist({n, L});
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t i = 0; i < n; ++i) hist.at(i, t) = window.at(t, i);

    // Patch tokens (N, L_p, d) with sinusoidal positions.
    Var tokens = ad::conv1d(ad::constant(std::move(hist)), state.patch_w,
                            state.patch_b, p);
    if (ab != Ablation::DecoderOnly)
      tokens = ad::add(tokens, ad::broadcast_batch(
                                   ad::constant(positional_encoding(
                                       lp, cfg.embed_dim)),
                                   n));

    // Temporal encoder.
    Var m_time = tokens;
    for (const auto& blk : state.temporal)
      m_time = encoder_block(m_time, blk, cfg.heads, drop);

    // Pool + node identity.
    const Var pooled = ad::mean_pool_axis(m_time, 1);  // (N, d)
    std::vector<std::size_t> all_nodes(n);
    for (std::size_t i = 0; i < n; ++i) all_nodes[i] = i;
    Var h0 = ad::add(pooled, ad::embedding_lookup(state.node_emb, all_nodes));

    if (ab == Ablation::DecoderOnly) {
      // Lightweight memory: the pooled+embedded node vector alone.
      memory = ad::reshape(h0, {n, 1, cfg.embed_dim});
    } else {
      // Graph mixing with the hour-selected adjacency, then spatial encoder.
      ad::Tensor a({n, n});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a.at(i, j) = a_norm(i, j);
      const Var h_mix = ad::matmul(ad::constant(std::move(a)), h0);

      Var s = ad::reshape(h_mix, {1, n, cfg.embed_dim});
      for (const auto& blk : state.spatial)
        s = encoder_block(s, blk, cfg.heads, drop);
      const Var s_tokens = ad::reshape(s, {n, 1, cfg.embed_dim});

      if (ab == Ablation::EncoderOnly) {
        const Var mem = ad::concat(m_time, s_tokens, 1);
        const Var head_in = ad::mean_pool_axis(mem, 1);  // (N, d)
        const Var out = ad::add_rowvec(ad::matmul(head_in, state.enc_head_w),
                                       state.enc_head_b);  // (N, H)
        return ad::transpose(out);
      }
      memory = ad::concat(m_time, s_tokens, 1);  // (N, L_p + 1, d)
    }
  }

  // Decoder: H learned queries tiled per node, self- then cross-attention.
  const Var q_seed =
      ad::add(state.q0, ad::constant(positional_encoding(cfg.horizon,
                                                         cfg.embed_dim)));
  Var queries = ad::broadcast_batch(q_seed, n);  // (N, H, d)
  for (const auto& blk : state.decoder)
    queries = decoder_block(queries, memory.defined() ? &memory : nullptr,
                            blk, cfg.heads, drop);

  const Var out = ad::add_rowvec(ad::matmul(queries, state.head_w),
                                 state.head_b);  // (N, H, 1)
  return ad::transpose(ad::reshape(out, {n, cfg.horizon}));  // (H, N)
}

Var forward(const ad::Tensor& window, int hour, const AdjacencyBank& bank,
            ModelState& state, bool train_mode, std::uint64_t dropout_seed) {
  if (hour < 0 || hour > 23)
    throw DomainError("forward: hour must be in 0..23, got " +
                      std::to_string(hour));
  const Matrix a_norm = row_normalize(bank.a_adaptive[hour]);
  return forward_graph(window, a_norm, state, train_mode, dropout_seed);
}

ad::Tensor predict(const ad::Tensor& window, int hour,
                   const AdjacencyBank& bank, ModelState& state) {
  return forward(window, hour, bank, state, /*train_mode=*/false, 0).value();
}

}  // namespace flowcast
