#include "doctest.h"

#include <cmath>

#include "flowcast/model.hpp"
#include "flowcast/rng.hpp"
#include "test_util.hpp"

using namespace flowcast;
using ad::Tensor;
using ad::Var;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.window_len = 8;
  cfg.horizon = 2;
  cfg.patch_len = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.temporal_depth = 1;
  cfg.spatial_depth = 1;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  return cfg;
}

AdjacencyBank uniform_bank(std::size_t n) {
  AdjacencyBank bank;
  bank.rho = Matrix(n, n);
  for (int h = 0; h < 24; ++h) {
    bank.t_eff[h] = Matrix(n, n, 10.0);
    bank.a_raw[h] = Matrix(n, n, 0.5);
    bank.a_adaptive[h] = Matrix(n, n, 0.5);
  }
  return bank;
}

Tensor random_window(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  rng::Engine eng(seed);
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = eng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("token count follows floor division") {
  ModelConfig cfg = tiny_config();
  cfg.window_len = 24;
  cfg.patch_len = 6;
  CHECK(cfg.token_count() == 4);
  cfg.patch_len = 1;
  CHECK(cfg.token_count() == 24);
  cfg.patch_len = 5;
  CHECK(cfg.token_count() == 4);  // trailing steps dropped
  cfg.ablation = Ablation::NoPatch;
  cfg.patch_len = 6;
  CHECK(cfg.token_count() == 24);  // NoPatch forces step-wise tokens
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.window_len = 3;
  cfg.patch_len = 6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.embed_dim = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.horizon = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("positional encoding at position zero") {
  const Tensor pe = positional_encoding(4, 6);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(pe.at(0, i) == doctest::Approx(i % 2 == 0 ? 0.0 : 1.0));
  // Positions differ down the table.
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
}

TEST_CASE("single-token attention reduces to the value path") {
  // One key: softmax weight is 1, so output = x Wv Wo + bo.
  const std::size_t d = 4;
  rng::Engine eng(3);
  AttentionParams p;
  const auto rnd = [&](ad::Shape s) {
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = eng.uniform(-1, 1);
    return ad::param(t);
  };
  p.wq = rnd({d, d});
  p.wk = rnd({d, d});
  p.wv = rnd({d, d});
  p.wo = rnd({d, d});
  p.bo = rnd({d});
  Var x = rnd({1, 1, d});
  const Tensor out = multihead_attention(x, x, p, 2).value();
  const Tensor expect =
      ad::add_rowvec(ad::matmul(ad::matmul(x, p.wv), p.wo), p.bo).value();
  for (std::size_t i = 0; i < d; ++i)
    CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("self-attention is permutation equivariant") {
  const std::size_t d = 6, t = 4;
  rng::Engine eng(4);
  AttentionParams p;
  const auto rnd = [&](ad::Shape s) {
    Tensor tt(std::move(s));
    for (std::size_t i = 0; i < tt.size(); ++i) tt[i] = eng.uniform(-1, 1);
    return ad::param(tt);
  };
  p.wq = rnd({d, d});
  p.wk = rnd({d, d});
  p.wv = rnd({d, d});
  p.wo = rnd({d, d});
  p.bo = rnd({d});

  Tensor tokens({1, t, d});
  rng::Engine teng(9);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    tokens[i] = teng.uniform(-1, 1);
  Tensor swapped = tokens;  // swap token rows 1 and 2
  for (std::size_t c = 0; c < d; ++c)
    std::swap(swapped.at(0, 1, c), swapped.at(0, 2, c));

  const Tensor out = multihead_attention(ad::constant(tokens),
                                         ad::constant(tokens), p, 3).value();
  const Tensor out_swapped =
      multihead_attention(ad::constant(swapped), ad::constant(swapped), p, 3)
          .value();
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(out.at(0, 1, c) == doctest::Approx(out_swapped.at(0, 2, c)));
    CHECK(out.at(0, 2, c) == doctest::Approx(out_swapped.at(0, 1, c)));
    CHECK(out.at(0, 0, c) == doctest::Approx(out_swapped.at(0, 0, c)));
  }
}

TEST_CASE("row-stochastic mixing is a per-coordinate contraction") {
  // The max-norm of A H0 never exceeds the max-norm of H0 column-wise.
  rng::Engine eng(5);
  const std::size_t n = 5, d = 3;
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a.at(i, j) = eng.uniform(0.0, 1.0);
      sum += a.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= sum;
  }
  Tensor h0({n, d});
  for (std::size_t i = 0; i < h0.size(); ++i) h0[i] = eng.uniform(-2, 2);
  const Tensor mixed = ad::matmul(ad::constant(a), ad::constant(h0)).value();
  for (std::size_t c = 0; c < d; ++c) {
    double max_in = 0.0, max_out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      max_in = std::max(max_in, std::abs(h0.at(i, c)));
      max_out = std::max(max_out, std::abs(mixed.at(i, c)));
    }
    CHECK(max_out <= max_in + 1e-12);
  }
}

TEST_CASE("identity and one-hot mixing rows") {
  Tensor h0({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor same = ad::matmul(ad::constant(eye), ad::constant(h0)).value();
  for (std::size_t i = 0; i < 4; ++i) CHECK(same[i] == h0[i]);

  // Row (1, 0): node copies neighbor 0 exactly; row (0.5, 0.5) averages.
  Tensor mix({2, 2}, {1.0, 0.0, 0.5, 0.5});
  const Tensor mixed = ad::matmul(ad::constant(mix), ad::constant(h0)).value();
  CHECK(mixed.at(0, 0) == 1.0);
  CHECK(mixed.at(0, 1) == 2.0);
  CHECK(mixed.at(1, 0) == doctest::Approx(2.0));
  CHECK(mixed.at(1, 1) == doctest::Approx(3.0));
}

TEST_CASE("forecast shape is horizon by stations for every ablation") {
  const std::size_t n = 3;
  const auto bank = uniform_bank(n);
  const Tensor window = random_window(8, n, 1);
  for (Ablation ab :
       {Ablation::Full, Ablation::EncoderOnly, Ablation::DecoderOnly,
        Ablation::NoPatch, Ablation::NoCrossAttn}) {
    ModelConfig cfg = tiny_config();
    cfg.ablation = ab;
    ModelState state(cfg, n, 11);
    const Tensor out = predict(window, 9, bank, state);
    REQUIRE(out.rank() == 2);
    CHECK(out.dim(0) == cfg.horizon);
    CHECK(out.dim(1) == n);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(std::isfinite(out[i]));
  }
}

TEST_CASE("horizon of one runs through the decoder") {
  ModelConfig cfg = tiny_config();
  cfg.horizon = 1;
  const std::size_t n = 2;
  ModelState state(cfg, n, 3);
  const Tensor out = predict(random_window(8, n, 2), 0, uniform_bank(n), state);
  CHECK(out.dim(0) == 1);
}

TEST_CASE("no-cross-attention forecasts ignore the window") {
  ModelConfig cfg = tiny_config();
  cfg.ablation = Ablation::NoCrossAttn;
  const std::size_t n = 3;
  ModelState state(cfg, n, 17);
  const auto bank = uniform_bank(n);
  const Tensor a = predict(random_window(8, n, 100), 4, bank, state);
  const Tensor b = predict(random_window(8, n, 200), 4, bank, state);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("full model responds to the window") {
  ModelConfig cfg = tiny_config();
  const std::size_t n = 3;
  ModelState state(cfg, n, 17);
  const auto bank = uniform_bank(n);
  const Tensor a = predict(random_window(8, n, 100), 4, bank, state);
  const Tensor b = predict(random_window(8, n, 200), 4, bank, state);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i] != b[i];
  CHECK(any_diff);
}

TEST_CASE("zeroed parameters forward the head bias") {
  ModelConfig cfg = tiny_config();
  const std::size_t n = 2;
  ModelState state(cfg, n, 1);
  for (auto& [name, var] : state.parameters()) {
    Tensor& v = var.node()->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.0;
  }
  state.head_b.node()->value[0] = 0.7;
  const Tensor window({cfg.window_len, n}, 0.0);
  const Tensor out = predict(window, 0, uniform_bank(n), state);
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == doctest::Approx(0.7));
}

TEST_CASE("hour selection changes the forecast when matrices differ") {
  ModelConfig cfg = tiny_config();
  const std::size_t n = 3;
  ModelState state(cfg, n, 23);
  AdjacencyBank bank = uniform_bank(n);
  // Hour 5: near-identity coupling; hour 6: uniform strong coupling.
  bank.a_adaptive[5] = Matrix(n, n, 0.01);
  bank.a_adaptive[6] = Matrix(n, n, 0.9);
  const Tensor window = random_window(8, n, 31);
  const Tensor a = predict(window, 5, bank, state);
  const Tensor b = predict(window, 6, bank, state);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i] != b[i];
  CHECK(any_diff);
  CHECK_THROWS_AS(predict(window, 24, bank, state), DomainError);
}

TEST_CASE("eval mode forward is deterministic") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.2;  // must be inert outside training
  const std::size_t n = 3;
  ModelState state(cfg, n, 29);
  const auto bank = uniform_bank(n);
  const Tensor window = random_window(8, n, 7);
  const Tensor a = predict(window, 12, bank, state);
  const Tensor b = predict(window, 12, bank, state);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("identical nodes with identical coupling forecast identically") {
  ModelConfig cfg = tiny_config();
  const std::size_t n = 2;
  ModelState state(cfg, n, 37);
  // Make the two node embeddings equal; everything else is symmetric.
  Tensor& emb = state.node_emb.node()->value;
  for (std::size_t c = 0; c < cfg.embed_dim; ++c) emb.at(1, c) = emb.at(0, c);
  AdjacencyBank bank = uniform_bank(n);
  Tensor window({cfg.window_len, n});
  for (std::size_t t = 0; t < cfg.window_len; ++t) {
    const double v = std::sin(0.3 * static_cast<double>(t));
    window.at(t, 0) = v;
    window.at(t, 1) = v;
  }
  const Tensor out = predict(window, 8, bank, state);
  for (std::size_t k = 0; k < cfg.horizon; ++k)
    CHECK(out.at(k, 0) == doctest::Approx(out.at(k, 1)).epsilon(1e-12));
}

TEST_CASE("ablations change parameter counts in the documented direction") {
  const std::size_t n = 4;
  ModelConfig cfg = tiny_config();
  ModelState full(cfg, n, 1);
  cfg.ablation = Ablation::NoCrossAttn;
  ModelState no_cross(cfg, n, 1);
  cfg.ablation = Ablation::EncoderOnly;
  ModelState enc_only(cfg, n, 1);

  CHECK(no_cross.parameter_count() < full.parameter_count());
  CHECK(enc_only.parameter_count() < full.parameter_count());
  for (const auto& [name, var] : enc_only.parameters())
    CHECK(name.rfind("decoder.", 0) != 0);  // no decoder stack at all
}

TEST_CASE("checkpoint save and load restore every parameter") {
  TempDir dir("model_ckpt");
  ModelConfig cfg = tiny_config();
  const std::size_t n = 3;
  ModelState state(cfg, n, 41);
  const auto before = state.snapshot();
  state.save(dir.file("model.ckpt"));

  // Perturb, then load back.
  for (auto& [name, var] : state.parameters())
    for (std::size_t i = 0; i < var.node()->value.size(); ++i)
      var.node()->value[i] += 1.0;
  state.load(dir.file("model.ckpt"));
  const auto after = state.snapshot();
  REQUIRE(after.size() == before.size());
  for (std::size_t p = 0; p < before.size(); ++p)
    for (std::size_t i = 0; i < before[p].size(); ++i)
      CHECK(after[p][i] == before[p][i]);

  // A different architecture must refuse the checkpoint.
  ModelConfig other = cfg;
  other.ablation = Ablation::EncoderOnly;
  ModelState mismatch(other, n, 41);
  CHECK_THROWS_AS(mismatch.load(dir.file("model.ckpt")), ValidationError);
}

TEST_CASE("end-to-end gradients match finite differences") {
  ModelConfig cfg = tiny_config();  // N=3, L=8, p=2, d=8, heads=2, H=2
  const std::size_t n = 3;
  ModelState state(cfg, n, 53);
  const auto bank = uniform_bank(n);
  const Tensor window = random_window(8, n, 61);
  rng::Engine teng(67);
  Tensor target({cfg.horizon, n});
  for (std::size_t i = 0; i < target.size(); ++i)
    target[i] = teng.uniform(-1, 1);

  const auto loss_value = [&]() {
    const Var pred = forward(window, 10, bank, state, false, 0);
    return ad::mse_loss(pred, ad::constant(target));
  };

  Var loss = loss_value();
  ad::backward(loss);
  std::vector<Tensor> grads;
  for (const auto& [name, var] : state.parameters())
    grads.push_back(var.grad());

  const double step = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t p = 0; p < state.parameters().size(); ++p) {
    auto& var = state.parameters()[p].second;
    Tensor& v = var.node()->value;
    for (std::size_t c = 0; c < v.size(); ++c) {
      const double saved = v[c];
      v[c] = saved + step;
      const double up = loss_value().value()[0];
      v[c] = saved - step;
      const double down = loss_value().value()[0];
      v[c] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double g = grads[p][c];
      const double rel =
          std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = state.parameters()[p].first;
      }
    }
  }
  INFO("worst parameter: ", worst_name);
  CHECK(worst < 1e-3);
}

TEST_SUITE_END();
