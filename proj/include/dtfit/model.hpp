#pragma once

// A small diffusion transformer: patchify -> adaLN-conditioned blocks with
// 2D-RoPE attention -> unpatchify eps-prediction head. Fine-tuning wraps the
// attention projections and the condition MLP with low-rank weight-modulation
// adapters (elementwise scale Gamma and additive term B, both factored).

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "dtfit/checkpoint.hpp"
#include "dtfit/common.hpp"
#include "dtfit/rng.hpp"
#include "dtfit/tensor.hpp"

namespace dtfit {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;

struct DiTConfig {
  int image_size = 32;
  int channels = 3;
  int patch = 4;
  int dim = 128;
  int depth = 4;
  int heads = 4;
  int num_source_classes = 10;
  int horizon = 1000;

  int grid_h() const { return image_size / patch; }
  int grid_w() const { return image_size / patch; }
  int tokens() const { return grid_h() * grid_w(); }
  int token_dim() const { return patch * patch * channels; }
  int head_dim() const { return dim / heads; }

  void validate() const {
    DTFIT_CHECK(image_size > 0 && patch > 0 && image_size % patch == 0,
                ParamError, "config: image_size must be divisible by patch");
    // each head dim splits into two even RoPE axis halves
    DTFIT_CHECK(dim > 0 && heads > 0 && dim % (heads * 4) == 0, ParamError,
                "config: dim must be divisible by 4*heads, got dim=", dim,
                " heads=", heads);
    DTFIT_CHECK(depth >= 1 && channels >= 1 && horizon >= 1 &&
                    num_source_classes >= 1,
                ParamError, "config: bad extents");
  }

  std::map<std::string, std::string> to_kv() const;
  static DiTConfig from_kv(const std::map<std::string, std::string>& kv);
};

enum class ParamKind {
  base_weight,
  bias,
  gain,
  adapter_gamma,
  adapter_b,
  embed_row_source,
  embed_row_new,
};

template <class S>
struct ParamRef {
  std::string name;
  ParamKind kind;
  Tensor<S> tensor;
};

// ---------------------------------------------------------------------------
// 2D rotary position parameters

// Per-token rotation angles over a grid: the first half of each head's pair
// slots turns with the row index, the second half with the column index.
struct RoPEGrid {
  int grid_h = 0, grid_w = 0, head_dim = 0;
  std::vector<double> angles;  // [tokens x head_dim/2]
};

inline RoPEGrid make_rope_grid(int grid_h, int grid_w, int head_dim,
                               double base = kRopeBase, int row_offset = 0,
                               int col_offset = 0) {
  DTFIT_CHECK(head_dim % 4 == 0, ParamError,
              "rope grid: head_dim must be divisible by 4, got ", head_dim);
  RoPEGrid g;
  g.grid_h = grid_h;
  g.grid_w = grid_w;
  g.head_dim = head_dim;
  const int pairs = head_dim / 2;
  const int axis_pairs = pairs / 2;  // rotation pairs per spatial axis
  const int axis_dim = head_dim / 2;
  g.angles.resize(static_cast<size_t>(grid_h) * grid_w * pairs);
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      double* row = g.angles.data() + (static_cast<size_t>(i) * grid_w + j) * pairs;
      for (int k = 0; k < axis_pairs; ++k) {
        double inv_freq = std::pow(base, -2.0 * k / axis_dim);
        row[k] = (i + row_offset) * inv_freq;
        row[axis_pairs + k] = (j + col_offset) * inv_freq;
      }
    }
  return g;
}

template <class S>
Tensor<S> rope_apply(const Tensor<S>& qk, const RoPEGrid& grid) {
  DTFIT_CHECK(qk.shape().size() == 2 && qk.cols() == grid.head_dim, ShapeError,
              "rope_apply: expected [tokens x ", grid.head_dim, "], got ",
              shape_str(qk.shape()));
  DTFIT_CHECK(qk.rows() == int64_t(grid.grid_h) * grid.grid_w, ShapeError,
              "rope_apply: token count does not match the grid");
  std::vector<S> angles(grid.angles.size());
  for (size_t i = 0; i < angles.size(); ++i)
    angles[i] = static_cast<S>(grid.angles[i]);
  return rotate_pairs(qk, std::move(angles));
}

// sinusoidal timestep embedding: first half sines, second half cosines
template <class S>
Tensor<S> timestep_embedding(int t, int dim) {
  DTFIT_CHECK(t >= 0, ParamError, "timestep_embedding: t must be >= 0");
  DTFIT_CHECK(dim >= 2 && dim % 2 == 0, ParamError,
              "timestep_embedding: dim must be even, got ", dim);
  std::vector<S> v(dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double freq = std::pow(kRopeBase, -double(k) / half);
    v[k] = static_cast<S>(std::sin(t * freq));
    v[half + k] = static_cast<S>(std::cos(t * freq));
  }
  return Tensor<S>::from_data({1, dim}, std::move(v));
}

// ---------------------------------------------------------------------------
// Layers

template <class S>
struct Linear {
  Tensor<S> weight;  // [out x in]
  Tensor<S> bias;    // [out]

  static Linear init(int in, int out, Rng& rng, double weight_scale = 1.0) {
    Linear l;
    l.weight = Tensor<S>::randn({out, in}, rng,
                                weight_scale / std::sqrt(double(in)), true);
    l.bias = Tensor<S>::zeros({out}, true);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return add_rowvec(matmul(x, transpose(weight)), bias);
  }
};

// Frozen base weight with trainable factored modulation:
//   W~ = W (.) (g_out . g_in) + (b_out . b_in)
// Identity init reproduces the base layer bit-for-bit.
template <class S>
struct ModulatedLinear {
  Tensor<S> weight;  // [out x in]
  Tensor<S> bias;    // [out]
  int rank = 0;      // 0 = plain layer
  Tensor<S> g_out, g_in, b_out, b_in;

  static ModulatedLinear init(int in, int out, Rng& rng,
                              double weight_scale = 1.0) {
    ModulatedLinear l;
    l.weight = Tensor<S>::randn({out, in}, rng,
                                weight_scale / std::sqrt(double(in)), true);
    l.bias = Tensor<S>::zeros({out}, true);
    return l;
  }

  bool wrapped() const { return rank > 0; }

  void wrap(int r, Rng& rng) {
    const int64_t out = weight.rows(), in = weight.cols();
    DTFIT_CHECK(r >= 1 && r <= std::min(out, in), ParamError,
                "modulated linear: rank ", r, " exceeds min(", out, ",", in,
                ")");
    rank = r;
    g_out = Tensor<S>::zeros({out, r}, true);
    g_in = Tensor<S>::zeros({r, in}, true);
    b_out = Tensor<S>::zeros({out, r}, true);
    b_in = Tensor<S>::zeros({r, in}, true);
    init_identity(rng);
  }

  // Gamma factors reconstruct the all-ones matrix; B collapses to zero via
  // its zeroed out-factor, keeping the in-factor non-degenerate.
  void init_identity(Rng& rng) {
    DTFIT_CHECK(wrapped(), ContractError, "init_identity: layer not wrapped");
    auto& go = g_out.mutable_values();
    std::fill(go.begin(), go.end(), S(0));
    for (int64_t i = 0; i < g_out.rows(); ++i) go[i * rank] = S(1);
    auto& gi = g_in.mutable_values();
    std::fill(gi.begin(), gi.end(), S(0));
    for (int64_t j = 0; j < g_in.cols(); ++j) gi[j] = S(1);
    auto& bo = b_out.mutable_values();
    std::fill(bo.begin(), bo.end(), S(0));
    auto& bi = b_in.mutable_values();
    for (auto& v : bi) v = static_cast<S>(rng.normal() * 0.02);
  }

  Tensor<S> effective_weight() const {
    DTFIT_CHECK(wrapped(), ContractError,
                "effective_weight: layer not wrapped");
    return add(mul(weight, matmul(g_out, g_in)), matmul(b_out, b_in));
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    const Tensor<S>& w = weight;
    if (!wrapped()) return add_rowvec(matmul(x, transpose(w)), bias);
    return add_rowvec(matmul(x, transpose(effective_weight())), bias);
  }
};

// Learnable rows addressed by class / condition id. Expansion appends rows
// and never alters existing ones.
template <class S>
struct ConditionEmbeddingTable {
  int dim = 0;
  int num_source = 0;
  std::vector<Tensor<S>> rows;  // each [1 x dim]

  static ConditionEmbeddingTable init(int num, int dim_, Rng& rng) {
    ConditionEmbeddingTable t;
    t.dim = dim_;
    t.num_source = num;
    for (int i = 0; i < num; ++i)
      t.rows.push_back(Tensor<S>::randn({1, dim_}, rng, 0.1, true));
    return t;
  }

  int size() const { return static_cast<int>(rows.size()); }

  const Tensor<S>& row(int idx) const {
    DTFIT_CHECK(idx >= 0 && idx < size(), ParamError,
                "embedding table: row ", idx, " outside [0,", size() - 1, "]");
    return rows[idx];
  }

  void append_rows(int count, Rng& rng) {
    for (int i = 0; i < count; ++i)
      rows.push_back(Tensor<S>::randn({1, dim}, rng, 0.1, true));
  }

  // copy an existing row's values into a target row (the SSEI primitive)
  void assign_row_from(int dst, int src) {
    DTFIT_CHECK(dst >= 0 && dst < size() && src >= 0 && src < size(),
                ParamError, "embedding table: assignment index out of range");
    rows[dst].mutable_values() = rows[src].values();
  }
};

template <class S>
struct BlockSignals {
  Tensor<S> attn_shift, attn_scale, attn_gate;
  Tensor<S> mlp_shift, mlp_scale, mlp_gate;
};

template <class S>
struct DiTBlock {
  Tensor<S> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  ModulatedLinear<S> qkv;       // dim -> 3*dim
  ModulatedLinear<S> attn_out;  // dim -> dim
  Linear<S> mlp_fc1, mlp_fc2;   // dim -> 4*dim -> dim
  Linear<S> ada;                // dim -> 6*dim conditioning signals
};

// x * (1 + scale) + shift, signals broadcast across token rows
template <class S>
Tensor<S> modulate(const Tensor<S>& x, const Tensor<S>& shift,
                   const Tensor<S>& scl) {
  const int64_t n = x.rows();
  auto scaled = mul(x, broadcast_row(add_scalar(scl, 1.0), n));
  return add(scaled, broadcast_row(shift, n));
}

template <class S>
class DiT {
 public:
  DiTConfig cfg;
  ConditionEmbeddingTable<S> embed;
  Linear<S> patch_embed;                  // token_dim -> dim
  ModulatedLinear<S> cond_fc1, cond_fc2;  // the condition MLP trunk
  std::vector<DiTBlock<S>> blocks;
  Linear<S> ada_final;  // dim -> 2*dim
  Tensor<S> lnf_gain, lnf_bias;
  Linear<S> head;  // dim -> token_dim
  RoPEGrid grid;

  DiT(DiTConfig config, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.dim;
    embed = ConditionEmbeddingTable<S>::init(cfg.num_source_classes, d, rng);
    patch_embed = Linear<S>::init(cfg.token_dim(), d, rng);
    cond_fc1 = ModulatedLinear<S>::init(d, d, rng);
    cond_fc2 = ModulatedLinear<S>::init(d, d, rng);
    for (int b = 0; b < cfg.depth; ++b) {
      DiTBlock<S> blk;
      blk.ln1_gain = Tensor<S>(Shape{d}, S(1), true);
      blk.ln1_bias = Tensor<S>::zeros({d}, true);
      blk.ln2_gain = Tensor<S>(Shape{d}, S(1), true);
      blk.ln2_bias = Tensor<S>::zeros({d}, true);
      blk.qkv = ModulatedLinear<S>::init(d, 3 * d, rng);
      blk.attn_out = ModulatedLinear<S>::init(d, d, rng);
      blk.mlp_fc1 = Linear<S>::init(d, 4 * d, rng);
      blk.mlp_fc2 = Linear<S>::init(4 * d, d, rng);
      blk.ada = Linear<S>::init(d, 6 * d, rng, 0.5);
      blocks.push_back(std::move(blk));
    }
    ada_final = Linear<S>::init(d, 2 * d, rng, 0.5);
    lnf_gain = Tensor<S>(Shape{d}, S(1), true);
    lnf_bias = Tensor<S>::zeros({d}, true);
    head = Linear<S>::init(d, cfg.token_dim(), rng);
    grid = make_rope_grid(cfg.grid_h(), cfg.grid_w(), cfg.head_dim());
  }

  Tensor<S> condition_trunk(int t, int y) const {
    auto t_emb = timestep_embedding<S>(t, cfg.dim);
    auto sum_emb = add(t_emb, embed.row(y));
    return cond_fc2.forward(gelu(cond_fc1.forward(sum_emb)));
  }

  BlockSignals<S> block_signals(const DiTBlock<S>& blk,
                                const Tensor<S>& c) const {
    auto sig = blk.ada.forward(gelu(c));  // [1 x 6d]
    const int d = cfg.dim;
    BlockSignals<S> out;
    out.attn_shift = slice_cols(sig, 0, d);
    out.attn_scale = slice_cols(sig, d, 2 * d);
    out.attn_gate = slice_cols(sig, 2 * d, 3 * d);
    out.mlp_shift = slice_cols(sig, 3 * d, 4 * d);
    out.mlp_scale = slice_cols(sig, 4 * d, 5 * d);
    out.mlp_gate = slice_cols(sig, 5 * d, 6 * d);
    return out;
  }

  // scaled dot-product attention with RoPE on queries and keys only
  Tensor<S> attention(const DiTBlock<S>& blk, const Tensor<S>& x,
                      const RoPEGrid& g) const {
    const int d = cfg.dim, hd = cfg.head_dim();
    auto qkv = blk.qkv.forward(x);  // [N x 3d]
    std::vector<Tensor<S>> heads;
    for (int h = 0; h < cfg.heads; ++h) {
      auto q = slice_cols(qkv, int64_t(h) * hd, int64_t(h + 1) * hd);
      auto k = slice_cols(qkv, d + int64_t(h) * hd, d + int64_t(h + 1) * hd);
      auto v = slice_cols(qkv, 2 * d + int64_t(h) * hd,
                          2 * d + int64_t(h + 1) * hd);
      auto logits =
          scale(matmul(rope_apply(q, g), transpose(rope_apply(k, g))),
                1.0 / std::sqrt(double(hd)));
      heads.push_back(matmul(softmax(logits, 1), v));
    }
    return blk.attn_out.forward(concat_cols(heads));
  }

  Tensor<S> block_forward(const DiTBlock<S>& blk, const Tensor<S>& tokens,
                          const BlockSignals<S>& sig) const {
    const int64_t n = tokens.rows();
    auto h = layernorm(tokens, blk.ln1_gain, blk.ln1_bias, kLayerNormEps);
    h = modulate(h, sig.attn_shift, sig.attn_scale);
    auto a = attention(blk, h, grid);
    auto x1 = add(tokens, mul(a, broadcast_row(sig.attn_gate, n)));
    auto h2 = layernorm(x1, blk.ln2_gain, blk.ln2_bias, kLayerNormEps);
    h2 = modulate(h2, sig.mlp_shift, sig.mlp_scale);
    auto m = blk.mlp_fc2.forward(gelu(blk.mlp_fc1.forward(h2)));
    return add(x1, mul(m, broadcast_row(sig.mlp_gate, n)));
  }

  // x_t [c,h,w] -> predicted noise, same shape
  Tensor<S> forward(const Tensor<S>& x_t, int t, int y) const {
    DTFIT_CHECK(x_t.shape() ==
                    Shape({cfg.channels, cfg.image_size, cfg.image_size}),
                ShapeError, "forward: input must be [", cfg.channels, ",",
                cfg.image_size, ",", cfg.image_size, "], got ",
                shape_str(x_t.shape()));
    DTFIT_CHECK(t >= 0 && t <= cfg.horizon, ParamError, "forward: t=", t,
                " outside [0,", cfg.horizon, "]");
    auto tokens = patch_embed.forward(patchify(x_t, cfg.patch));
    auto c = condition_trunk(t, y);
    for (const auto& blk : blocks)
      tokens = block_forward(blk, tokens, block_signals(blk, c));
    auto h = layernorm(tokens, lnf_gain, lnf_bias, kLayerNormEps);
    auto fsig = ada_final.forward(gelu(c));
    h = modulate(h, slice_cols(fsig, 0, cfg.dim),
                 slice_cols(fsig, cfg.dim, 2 * cfg.dim));
    return unpatchify(head.forward(h), cfg.channels, cfg.image_size,
                      cfg.image_size, cfg.patch);
  }

  // wrap attention projections and the condition MLP with identity-init
  // adapters; everything else stays a plain layer
  void wrap_adapters(int rank, uint64_t seed) {
    Rng rng(seed);
    cond_fc1.wrap(rank, rng);
    cond_fc2.wrap(rank, rng);
    for (auto& blk : blocks) {
      blk.qkv.wrap(rank, rng);
      blk.attn_out.wrap(rank, rng);
    }
  }

  bool adapters_wrapped() const { return cond_fc1.wrapped(); }
  int adapter_rank() const { return cond_fc1.rank; }

  std::vector<ParamRef<S>> parameters() {
    std::vector<ParamRef<S>> out;
    auto lin = [&](const std::string& name, Linear<S>& l) {
      out.push_back({name + ".weight", ParamKind::base_weight, l.weight});
      out.push_back({name + ".bias", ParamKind::bias, l.bias});
    };
    auto mod = [&](const std::string& name, ModulatedLinear<S>& l) {
      out.push_back({name + ".weight", ParamKind::base_weight, l.weight});
      out.push_back({name + ".bias", ParamKind::bias, l.bias});
      if (l.wrapped()) {
        out.push_back({name + ".g_out", ParamKind::adapter_gamma, l.g_out});
        out.push_back({name + ".g_in", ParamKind::adapter_gamma, l.g_in});
        out.push_back({name + ".b_out", ParamKind::adapter_b, l.b_out});
        out.push_back({name + ".b_in", ParamKind::adapter_b, l.b_in});
      }
    };
    for (int i = 0; i < embed.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "embed.row%03d", i);
      out.push_back({buf,
                     i < embed.num_source ? ParamKind::embed_row_source
                                          : ParamKind::embed_row_new,
                     embed.rows[i]});
    }
    lin("patch_embed", patch_embed);
    mod("cond.fc1", cond_fc1);
    mod("cond.fc2", cond_fc2);
    for (size_t b = 0; b < blocks.size(); ++b) {
      std::string p = "blocks." + std::to_string(b);
      out.push_back({p + ".ln1.gain", ParamKind::gain, blocks[b].ln1_gain});
      out.push_back({p + ".ln1.bias", ParamKind::bias, blocks[b].ln1_bias});
      out.push_back({p + ".ln2.gain", ParamKind::gain, blocks[b].ln2_gain});
      out.push_back({p + ".ln2.bias", ParamKind::bias, blocks[b].ln2_bias});
      mod(p + ".qkv", blocks[b].qkv);
      mod(p + ".attn_out", blocks[b].attn_out);
      lin(p + ".mlp.fc1", blocks[b].mlp_fc1);
      lin(p + ".mlp.fc2", blocks[b].mlp_fc2);
      lin(p + ".ada", blocks[b].ada);
    }
    lin("final.ada", ada_final);
    out.push_back({"final.ln.gain", ParamKind::gain, lnf_gain});
    out.push_back({"final.ln.bias", ParamKind::bias, lnf_bias});
    lin("final.head", head);
    return out;
  }

  int64_t total_param_count() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  Checkpoint to_checkpoint() {
    Checkpoint ck;
    auto kv = cfg.to_kv();
    kv["num_rows"] = std::to_string(embed.size());
    kv["adapter_rank"] = std::to_string(adapter_rank());
    ck.config_text = encode_kv(kv);
    for (auto& p : parameters()) {
      TensorBlob blob;
      blob.shape = p.tensor.shape();
      blob.data.reserve(p.tensor.size());
      for (S v : p.tensor.values()) blob.data.push_back(static_cast<float>(v));
      ck.tensors.emplace_back(p.name, std::move(blob));
    }
    return ck;
  }

  static DiT from_checkpoint(const Checkpoint& ck) {
    auto kv = decode_kv(ck.config_text);
    DiTConfig cfg = DiTConfig::from_kv(kv);
    DiT model(cfg, /*seed=*/0);
    auto it_rows = kv.find("num_rows");
    if (it_rows != kv.end()) {
      int rows = std::stoi(it_rows->second);
      if (rows > cfg.num_source_classes) {
        Rng rng(0);
        model.embed.append_rows(rows - cfg.num_source_classes, rng);
      }
    }
    auto it_rank = kv.find("adapter_rank");
    if (it_rank != kv.end() && std::stoi(it_rank->second) > 0)
      model.wrap_adapters(std::stoi(it_rank->second), /*seed=*/0);
    for (auto& p : model.parameters()) {
      const TensorBlob* blob = ck.find(p.name);
      DTFIT_CHECK(blob != nullptr, IoError, "checkpoint: missing tensor '",
                  p.name, "'");
      DTFIT_CHECK(blob->shape == p.tensor.shape(), IoError,
                  "checkpoint: shape mismatch for '", p.name, "'");
      auto& dst = p.tensor.mutable_values();
      for (size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<S>(blob->data[i]);
    }
    return model;
  }
};

inline std::map<std::string, std::string> DiTConfig::to_kv() const {
  return {
      {"image_size", std::to_string(image_size)},
      {"channels", std::to_string(channels)},
      {"patch", std::to_string(patch)},
      {"dim", std::to_string(dim)},
      {"depth", std::to_string(depth)},
      {"heads", std::to_string(heads)},
      {"num_source_classes", std::to_string(num_source_classes)},
      {"horizon", std::to_string(horizon)},
  };
}

inline DiTConfig DiTConfig::from_kv(
    const std::map<std::string, std::string>& kv) {
  DiTConfig cfg;
  auto get = [&](const char* key, int& out) {
    auto it = kv.find(key);
    DTFIT_CHECK(it != kv.end(), IoError, "config block: missing key '", key,
                "'");
    out = std::stoi(it->second);
  };
  get("image_size", cfg.image_size);
  get("channels", cfg.channels);
  get("patch", cfg.patch);
  get("dim", cfg.dim);
  get("depth", cfg.depth);
  get("heads", cfg.heads);
  get("num_source_classes", cfg.num_source_classes);
  get("horizon", cfg.horizon);
  cfg.validate();
  return cfg;
}

}  // namespace dtfit
