#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dtfit/checkpoint.hpp"
#include "dtfit/model.hpp"
#include "testutil.hpp"

using namespace dtfit;
using dtfit::test::grad_check_full;
using dtfit::test::rel_err;

namespace {

DiTConfig tiny_config() {
  DiTConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 4;  // 2x2 token grid
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 1;
  cfg.num_source_classes = 4;
  cfg.horizon = 10;
  return cfg;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

TEST_CASE("timestep embedding boundary and distinctness") {
  auto e0 = timestep_embedding<double>(0, 16);
  for (int k = 0; k < 8; ++k) {
    CHECK(e0.values()[k] == 0.0);        // sines
    CHECK(e0.values()[8 + k] == 1.0);    // cosines
  }
  // all components bounded
  for (int t : {1, 17, 500, 1000}) {
    auto emb = timestep_embedding<double>(t, 16);
    for (double v : emb.values()) {
      CHECK(v <= 1.0);
      CHECK(v >= -1.0);
    }
  }
  // pairwise distinct over the full horizon
  const int T = 1000, d = 16;
  std::vector<std::vector<double>> all;
  for (int t = 0; t <= T; ++t)
    all.push_back(timestep_embedding<double>(t, d).values());
  double min_gap = 1e30;
  for (int a = 0; a <= T; ++a)
    for (int b = a + 1; b <= T; ++b) {
      double gap = 0;
      for (int k = 0; k < d; ++k)
        gap = std::max(gap, std::abs(all[a][k] - all[b][k]));
      min_gap = std::min(min_gap, gap);
    }
  CHECK(min_gap > 1e-9);
}

TEST_CASE("rope preserves norms at every grid position") {
  const int hd = 32;
  auto grid = make_rope_grid(8, 8, hd);
  Rng rng(3);
  auto v = Tensor<double>::randn({64, hd}, rng);
  auto r = rope_apply(v, grid);
  for (int i = 0; i < 64; ++i) {
    double nv = 0, nr = 0;
    for (int c = 0; c < hd; ++c) {
      nv += v.values()[i * hd + c] * v.values()[i * hd + c];
      nr += r.values()[i * hd + c] * r.values()[i * hd + c];
    }
    CHECK(std::abs(std::sqrt(nv) - std::sqrt(nr)) <= 1e-5);
  }
}

TEST_CASE("rope zero relative offset reduces to the plain dot product") {
  const int hd = 16;
  auto grid = make_rope_grid(4, 4, hd);
  Rng rng(4);
  for (int pos = 0; pos < 16; ++pos) {
    auto q = Tensor<double>::randn({16, hd}, rng);
    auto k = Tensor<double>::randn({16, hd}, rng);
    auto rq = rope_apply(q, grid);
    auto rk = rope_apply(k, grid);
    std::vector<double> qrow(q.values().begin() + pos * hd,
                             q.values().begin() + (pos + 1) * hd);
    std::vector<double> krow(k.values().begin() + pos * hd,
                             k.values().begin() + (pos + 1) * hd);
    std::vector<double> rqrow(rq.values().begin() + pos * hd,
                              rq.values().begin() + (pos + 1) * hd);
    std::vector<double> rkrow(rk.values().begin() + pos * hd,
                              rk.values().begin() + (pos + 1) * hd);
    CHECK(std::abs(dot(rqrow, rkrow) - dot(qrow, krow)) <= 1e-5);
  }
}

TEST_CASE("rope relative-position identity") {
  // (P_a q)^T (P_b k) equals q^T P_{b-a} k for every pair of grid positions
  const int hd = 8;
  Rng rng(5);
  auto q1 = Tensor<double>::randn({1, hd}, rng);
  auto k1 = Tensor<double>::randn({1, hd}, rng);
  for (int ia : {0, 1, 3})
    for (int ja : {0, 2})
      for (int ib : {0, 2, 3})
        for (int jb : {1, 3}) {
          auto ga = make_rope_grid(1, 1, hd, kRopeBase, ia, ja);
          auto gb = make_rope_grid(1, 1, hd, kRopeBase, ib, jb);
          auto grel = make_rope_grid(1, 1, hd, kRopeBase, ib - ia, jb - ja);
          double lhs = dot(rope_apply(q1, ga).values(),
                           rope_apply(k1, gb).values());
          double rhs = dot(q1.values(), rope_apply(k1, grel).values());
          CHECK(std::abs(lhs - rhs) <= 1e-5);
        }
}

TEST_CASE("rope logits are invariant to a global grid shift") {
  const int hd = 16;
  Rng rng(6);
  auto q = Tensor<double>::randn({16, hd}, rng);
  auto k = Tensor<double>::randn({16, hd}, rng);
  auto base_grid = make_rope_grid(4, 4, hd);
  auto shifted = make_rope_grid(4, 4, hd, kRopeBase, 5, -3);
  auto logits = [&](const RoPEGrid& g) {
    return matmul(rope_apply(q, g), transpose(rope_apply(k, g)));
  };
  auto a = logits(base_grid);
  auto b = logits(shifted);
  for (int i = 0; i < 16 * 16; ++i)
    CHECK(std::abs(a.values()[i] - b.values()[i]) <= 1e-5);
}

TEST_CASE("single-token attention is the value projection") {
  DiTConfig cfg = tiny_config();
  cfg.image_size = 4;  // one token
  DiT<double> model(cfg, 11);
  Rng rng(12);
  auto x = Tensor<double>::randn({1, cfg.dim}, rng);
  auto got = model.attention(model.blocks[0], x,
                             make_rope_grid(1, 1, cfg.head_dim()));
  auto qkv = model.blocks[0].qkv.forward(x);
  auto v = slice_cols(qkv, 2 * cfg.dim, 3 * cfg.dim);
  auto expect = model.blocks[0].attn_out.forward(v);
  for (int i = 0; i < cfg.dim; ++i)
    CHECK(got.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
}

TEST_CASE("attention is equivariant to a joint token/grid permutation") {
  DiTConfig cfg = tiny_config();  // 2x2 grid, 4 tokens
  DiT<double> model(cfg, 13);
  Rng rng(14);
  const int n = cfg.tokens(), d = cfg.dim;
  auto x = Tensor<double>::randn({n, d}, rng);
  auto grid = model.grid;

  std::vector<int> perm{2, 0, 3, 1};
  std::vector<double> px(n * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) px[i * d + j] = x.values()[perm[i] * d + j];
  auto xp = Tensor<double>::from_data({n, d}, std::move(px));

  RoPEGrid pgrid = grid;
  const int pairs = grid.head_dim / 2;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < pairs; ++k)
      pgrid.angles[i * pairs + k] = grid.angles[perm[i] * pairs + k];

  auto out = model.attention(model.blocks[0], x, grid);
  auto outp = model.attention(model.blocks[0], xp, pgrid);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(std::abs(outp.values()[i * d + j] -
                     out.values()[perm[i] * d + j]) <= 1e-5);
}

TEST_CASE("modulated linear hand-computed case") {
  ModulatedLinear<double> layer;
  layer.weight = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  layer.bias = Tensor<double>::zeros({2}, true);
  layer.rank = 1;
  layer.g_out = Tensor<double>::from_data({2, 1}, {1, 2}, true);
  layer.g_in = Tensor<double>::from_data({1, 2}, {3, 4}, true);
  layer.b_out = Tensor<double>::from_data({2, 1}, {1, 0}, true);
  layer.b_in = Tensor<double>::from_data({1, 2}, {0.5, 0.5}, true);

  auto w = layer.effective_weight();
  CHECK(w.values() == std::vector<double>{3.5, 8.5, 18, 32});

  // y = W~ x for x = (1, 1)
  auto x = Tensor<double>::from_data({1, 2}, {1, 1});
  auto y = layer.forward(x);
  CHECK(y.values()[0] == doctest::Approx(12.0));
  CHECK(y.values()[1] == doctest::Approx(50.0));
}

TEST_CASE("modulated linear factor gradients match finite differences") {
  Rng rng(21);
  ModulatedLinear<double> layer = ModulatedLinear<double>::init(4, 3, rng);
  layer.wrap(2, rng);
  // move factors off the identity point so every path is active
  for (auto* t : {&layer.g_out, &layer.g_in, &layer.b_out, &layer.b_in})
    for (auto& v : t->mutable_values()) v += rng.normal() * 0.3;

  auto x = Tensor<double>::randn({2, 4}, rng);
  auto res = grad_check_full(
      [&]() { return sum(gelu(layer.forward(x))); },
      {&layer.g_out, &layer.g_in, &layer.b_out, &layer.b_in});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("modulated linear rejects oversized rank") {
  Rng rng(22);
  auto layer = ModulatedLinear<double>::init(4, 3, rng);
  CHECK_THROWS_AS(layer.wrap(5, rng), ParamError);
  CHECK_THROWS_AS(layer.wrap(0, rng), ParamError);
}

TEST_CASE("identity initialization reconstructs all-ones gamma exactly") {
  Rng rng(23);
  auto layer = ModulatedLinear<double>::init(6, 5, rng);
  layer.wrap(3, rng);
  auto gamma = matmul(layer.g_out, layer.g_in);
  for (double v : gamma.values()) CHECK(v == 1.0);
  auto b = matmul(layer.b_out, layer.b_in);
  for (double v : b.values()) CHECK(v == 0.0);
  // effective weight is the base weight, bit for bit
  CHECK(layer.effective_weight().values() == layer.weight.values());
}

TEST_CASE("wrapping and table expansion leave model outputs bitwise unchanged") {
  DiTConfig cfg = tiny_config();
  DiT<float> model(cfg, 31);
  Rng rng(32);
  std::vector<Tensor<float>> inputs;
  for (int i = 0; i < 8; ++i)
    inputs.push_back(Tensor<float>::randn({3, 8, 8}, rng));

  std::vector<std::vector<float>> before;
  for (int i = 0; i < 8; ++i)
    before.push_back(model.forward(inputs[i], (i % cfg.horizon) + 1,
                                   i % cfg.num_source_classes)
                         .values());

  model.wrap_adapters(2, 33);
  Rng rexp(34);
  model.embed.append_rows(5, rexp);

  for (int i = 0; i < 8; ++i) {
    auto after = model.forward(inputs[i], (i % cfg.horizon) + 1,
                               i % cfg.num_source_classes);
    CHECK(after.values() == before[i]);
  }
}

TEST_CASE("adapter parameter accounting is exact and under five percent") {
  DiTConfig cfg;  // default 32/4/128/4/4
  DiT<float> model(cfg, 41);
  model.wrap_adapters(4, 42);
  Rng rng(43);
  model.embed.append_rows(5, rng);

  int64_t adapters = 0, new_rows = 0, total = 0;
  for (auto& p : model.parameters()) {
    total += p.tensor.size();
    if (p.kind == ParamKind::adapter_gamma || p.kind == ParamKind::adapter_b)
      adapters += p.tensor.size();
    if (p.kind == ParamKind::embed_row_new) new_rows += p.tensor.size();
  }
  // 2r(d_out + d_in) per wrapped layer: qkv + attn_out per block, cond fc1/fc2
  const int r = 4, d = cfg.dim;
  int64_t expect = 0;
  expect += int64_t(cfg.depth) * 2 * r * (3 * d + d);  // qkv
  expect += int64_t(cfg.depth) * 2 * r * (d + d);      // attn_out
  expect += 2 * 2 * r * (d + d);                       // cond mlp
  CHECK(adapters == expect);
  CHECK(new_rows == 5 * d);
  CHECK(double(adapters + new_rows) / double(total) < 0.05);
}

TEST_CASE("model forward shape, determinism, and input validation") {
  for (auto cfg : {tiny_config(), [] {
         DiTConfig c;
         c.image_size = 16;
         c.patch = 4;
         c.dim = 32;
         c.depth = 2;
         c.heads = 2;
         c.num_source_classes = 3;
         c.horizon = 20;
         return c;
       }()}) {
    DiT<float> model(cfg, 51);
    Rng rng(52);
    auto x = Tensor<float>::randn({cfg.channels, cfg.image_size,
                                   cfg.image_size},
                                  rng);
    auto e1 = model.forward(x, 3, 1);
    auto e2 = model.forward(x, 3, 1);
    CHECK(e1.shape() == x.shape());
    CHECK(e1.values() == e2.values());  // bitwise determinism
    for (float v : e1.values()) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(model.forward(x, 3, cfg.num_source_classes + 99),
                    ParamError);
    CHECK_THROWS_AS(model.forward(x, cfg.horizon + 1, 0), ParamError);
  }
}

TEST_CASE("gradient flows only to the selected embedding row") {
  DiTConfig cfg = tiny_config();
  DiT<double> model(cfg, 61);
  Rng rng(62);
  auto x = Tensor<double>::randn({3, 8, 8}, rng);
  auto loss = mean(model.forward(x, 2, /*y=*/1));
  backward(loss);
  for (int i = 0; i < model.embed.size(); ++i) {
    if (i == 1) {
      REQUIRE(model.embed.rows[i].has_grad());
      double mag = 0;
      for (double g : model.embed.rows[i].grad()) mag += std::abs(g);
      CHECK(mag > 0.0);
    } else {
      CHECK_FALSE(model.embed.rows[i].has_grad());
    }
  }
}

TEST_CASE("zero gate turns a block into the identity") {
  DiTConfig cfg = tiny_config();
  DiT<double> model(cfg, 71);
  Rng rng(72);
  auto tokens = Tensor<double>::randn({cfg.tokens(), cfg.dim}, rng);
  BlockSignals<double> sig;
  sig.attn_shift = Tensor<double>::randn({1, cfg.dim}, rng);
  sig.attn_scale = Tensor<double>::randn({1, cfg.dim}, rng);
  sig.attn_gate = Tensor<double>::zeros({1, cfg.dim});
  sig.mlp_shift = Tensor<double>::randn({1, cfg.dim}, rng);
  sig.mlp_scale = Tensor<double>::randn({1, cfg.dim}, rng);
  sig.mlp_gate = Tensor<double>::zeros({1, cfg.dim});
  auto out = model.block_forward(model.blocks[0], tokens, sig);
  CHECK(out.values() == tokens.values());
}

TEST_CASE("condition signals react to the condition id") {
  DiTConfig cfg = tiny_config();
  DiT<double> model(cfg, 81);
  const int t = 5;
  bool any_changed = false;
  auto base = model.block_signals(model.blocks[0],
                                  model.condition_trunk(t, 0));
  for (int y = 1; y < cfg.num_source_classes; ++y) {
    auto sig = model.block_signals(model.blocks[0],
                                   model.condition_trunk(t, y));
    for (size_t i = 0; i < sig.attn_shift.values().size(); ++i)
      if (sig.attn_shift.values()[i] != base.attn_shift.values()[i])
        any_changed = true;
  }
  CHECK(any_changed);
}

TEST_CASE("embedding table expansion appends without altering rows") {
  Rng rng(91);
  auto table = ConditionEmbeddingTable<double>::init(4, 8, rng);
  auto row2_before = table.row(2).values();
  table.append_rows(3, rng);
  CHECK(table.size() == 7);
  CHECK(table.row(2).values() == row2_before);
  CHECK_THROWS_AS(table.row(7), ParamError);

  table.assign_row_from(5, 2);
  CHECK(table.row(5).values() == table.row(2).values());
  CHECK(table.row(2).values() == row2_before);
}

TEST_CASE("checkpoint round-trip restores the model bit for bit") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "dtfit_test_model.ckpt";

  DiTConfig cfg = tiny_config();
  DiT<float> model(cfg, 95);
  model.wrap_adapters(2, 96);
  Rng rng(97);
  model.embed.append_rows(5, rng);
  save_checkpoint(path.string(), model.to_checkpoint());

  auto restored = DiT<float>::from_checkpoint(load_checkpoint(path.string()));
  CHECK(restored.cfg.dim == cfg.dim);
  CHECK(restored.embed.size() == model.embed.size());
  CHECK(restored.adapter_rank() == 2);
  auto a = model.parameters();
  auto b = restored.parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].tensor.values() == b[i].tensor.values());
  }

  auto x = Tensor<float>::randn({3, 8, 8}, rng);
  CHECK(model.forward(x, 1, 5).values() ==
        restored.forward(x, 1, 5).values());
  fs::remove(path);
}

TEST_CASE("checkpoint loader rejects unknown magic and truncation") {
  namespace fs = std::filesystem;
  auto path = fs::temp_directory_path() / "dtfit_test_bad.ckpt";
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("NOPE garbage", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);

  // valid magic, truncated record
  {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    std::fputs("DFT1", f);
    uint32_t len = 100;
    std::fwrite(&len, 4, 1, f);
    std::fputs("abc", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
  fs::remove(path);
}

TEST_CASE("config validation rejects bad geometry") {
  DiTConfig cfg;
  cfg.image_size = 30;  // not divisible by patch 4
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  cfg = DiTConfig{};
  cfg.dim = 130;  // not divisible by 4*heads
  CHECK_THROWS_AS(cfg.validate(), ParamError);
}
