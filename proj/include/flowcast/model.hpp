#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowcast/adjacency.hpp"
#include "flowcast/autodiff.hpp"
#include "flowcast/matrix.hpp"

namespace flowcast {

// Architecture variants used by the ablation study.
enum class Ablation {
  Full,         // encoder-decoder with cross-attention
  EncoderOnly,  // pooled memory through a d->H linear head, no decoder
  DecoderOnly,  // learned horizon queries over a pooled single-vector memory
  NoPatch,      // step-wise tokenization (patch length forced to 1)
  NoCrossAttn,  // decoder keeps self-attention, drops the cross sublayer
};

std::string ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

struct ModelConfig {
  std::size_t window_len = 24;   // L, input steps
  std::size_t horizon = 4;       // H, forecast steps
  std::size_t patch_len = 6;     // p, temporal patch length
  std::size_t embed_dim = 64;    // d
  std::size_t heads = 4;
  std::size_t temporal_depth = 2;  // D_t (decoder depth matches)
  std::size_t spatial_depth = 2;   // D_s
  std::size_t ffn_mult = 2;        // feed-forward hidden = ffn_mult * d
  double dropout = 0.1;
  Ablation ablation = Ablation::Full;

  // NoPatch forces step-wise tokens.
  std::size_t effective_patch() const {
    return ablation == Ablation::NoPatch ? 1 : patch_len;
  }
  std::size_t token_count() const { return window_len / effective_patch(); }

  void validate() const;
};

// One attention projection set: query/key/value, output projection + bias.
struct AttentionParams {
  ad::Var wq, wk, wv, wo, bo;
};

struct EncoderBlockParams {
  AttentionParams attn;
  ad::Var ln1_g, ln1_b;
  ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ad::Var ln2_g, ln2_b;
};

struct DecoderBlockParams {
  AttentionParams self_attn;
  ad::Var ln_self_g, ln_self_b;
  bool has_cross = true;
  AttentionParams cross_attn;
  ad::Var ln_cross_g, ln_cross_b;
  ad::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ad::Var ln_ffn_g, ln_ffn_b;
};

// All learnable parameters, seeded deterministically. Parameter presence
// depends on the ablation; every tensor is registered under a stable name
// for checkpointing.
class ModelState {
 public:
  ModelState(const ModelConfig& cfg, std::size_t n_stations,
             std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t n_stations() const { return n_stations_; }

  std::vector<std::pair<std::string, ad::Var>>& parameters() {
    return params_;
  }
  const std::vector<std::pair<std::string, ad::Var>>& parameters() const {
    return params_;
  }
  std::size_t parameter_count() const;

  // Deep copies of current values (best-checkpoint bookkeeping).
  std::vector<ad::Tensor> snapshot() const;
  void restore(const std::vector<ad::Tensor>& values);

  void save(const std::string& path) const;
  void load(const std::string& path);  // names and shapes must match

  // Structured views used by the forward pass.
  ad::Var patch_w, patch_b;
  std::vector<EncoderBlockParams> temporal;
  ad::Var node_emb;  // N x d
  std::vector<EncoderBlockParams> spatial;
  ad::Var q0;        // H x d query seed
  std::vector<DecoderBlockParams> decoder;
  ad::Var head_w, head_b;          // d -> 1 per-horizon head
  ad::Var enc_head_w, enc_head_b;  // d -> H head (EncoderOnly)

 private:
  ModelConfig cfg_;
  std::size_t n_stations_;
  std::vector<std::pair<std::string, ad::Var>> params_;

  ad::Var reg(const std::string& name, ad::Tensor t);
};

// Sinusoidal positional encoding table, (positions x dim).
ad::Tensor positional_encoding(std::size_t positions, std::size_t dim);

// Multi-head attention with queries from `q_in` and keys/values from
// `kv_in`, both (B, T, d). Exposed for direct testing.
ad::Var multihead_attention(const ad::Var& q_in, const ad::Var& kv_in,
                            const AttentionParams& p, std::size_t heads);

// Full forward pass. `window` is L x N (raw or normalized flows), `a_norm`
// the row-normalized hour-selected adjacency. Returns an H x N graph var.
ad::Var forward_graph(const ad::Tensor& window, const Matrix& a_norm,
                      ModelState& state, bool train_mode,
                      std::uint64_t dropout_seed);

// Hour-tagged entry point: selects the hour's adaptive adjacency from the
// bank and row-normalizes it before running the graph.
ad::Var forward(const ad::Tensor& window, int hour, const AdjacencyBank& bank,
                ModelState& state, bool train_mode,
                std::uint64_t dropout_seed);

// Eval-mode convenience returning a plain tensor.
ad::Tensor predict(const ad::Tensor& window, int hour,
                   const AdjacencyBank& bank, ModelState& state);

}  // namespace flowcast
