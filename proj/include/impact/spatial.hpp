#pragma once

// Dual-level spatial transformer: sensor->road attention against a
// learnable road embedding bank, road->road attention with one adjacency
// level per head, and unmasked road->sensor attention, followed by a
// residual connection, layer norm, and dropout. A vanilla sensor-to-sensor
// variant backs the road-free ablation and the complexity benchmark.
// Attention is applied independently per timestamp.

#include <random>

#include "impact/attention.hpp"
#include "impact/graph.hpp"
#include "impact/tensor.hpp"

namespace impact {

// DualLevel is the full sr/rr/rs stack; Vanilla swaps in plain sensor
// self-attention (road-free variant); ProjectionOnly reduces the stage to
// the input projection (spatial-free variant).
enum class SpatialMode { DualLevel, Vanilla, ProjectionOnly };

struct SpatialParams {
  int c_in = 0, c = 0, n_head = 0, t = 0;
  SpatialMode mode = SpatialMode::DualLevel;

  Tensor w_in, b_in;        // C_in -> C input projection
  Tensor ln_gain, ln_bias;  // layer norm on the output

  // dual-level stack
  Tensor road_bank;  // [|R| x T x C], case-independent, learnable
  AttentionParams sr, rr, rs;

  // vanilla |S| x |S| self-attention (road-free variant)
  AttentionParams ss;

  static SpatialParams init(int c_in, int c, int n_head, int t, int n_roads,
                            SpatialMode mode, std::mt19937_64& rng) {
    SpatialParams p;
    p.c_in = c_in;
    p.c = c;
    p.n_head = n_head;
    p.t = t;
    p.mode = mode;
    p.w_in = Tensor::randn({c_in, c}, rng, 1.0 / std::sqrt(c_in), true);
    p.b_in = Tensor::zeros({c}, true);
    if (mode == SpatialMode::ProjectionOnly) return p;
    p.ln_gain = Tensor::filled({c}, 1.0, true);
    p.ln_bias = Tensor::zeros({c}, true);
    if (mode == SpatialMode::DualLevel) {
      p.road_bank = Tensor::randn({n_roads, t, c}, rng, 0.02, true);
      p.sr = AttentionParams::init(c, n_head, rng);
      p.rr = AttentionParams::init(c, n_head, rng);
      p.rs = AttentionParams::init(c, n_head, rng);
    } else {
      p.ss = AttentionParams::init(c, n_head, rng);
    }
    return p;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w_in", w_in);
    fn(prefix + ".b_in", b_in);
    if (mode == SpatialMode::ProjectionOnly) return;
    fn(prefix + ".ln_gain", ln_gain);
    fn(prefix + ".ln_bias", ln_bias);
    if (mode == SpatialMode::DualLevel) {
      fn(prefix + ".road_bank", road_bank);
      sr.visit(prefix + ".sr", fn);
      rr.visit(prefix + ".rr", fn);
      rs.visit(prefix + ".rs", fn);
    } else {
      ss.visit(prefix + ".ss", fn);
    }
  }
};

struct SpatialProbe {
  Tensor x_emb, h_sr, h_rr, h_rs;
  AttentionProbe sr_attn, rr_attn, rs_attn;
};

inline Tensor project_input(const Tensor& x, const SpatialParams& p) {
  return add_bias(matmul(x, p.w_in), p.b_in);
}

// Roads query the sensors on them. x_emb: [|S| x T x C] -> [|R| x T x C].
// A road with no sensors keeps only the bias path (fully masked row).
inline Tensor sensor_to_road(const Tensor& x_emb, const Tensor& road_bank,
                             const Tensor& m_sr, const SpatialParams& p,
                             AttentionProbe* probe = nullptr) {
  if (x_emb.dim(1) != road_bank.dim(1))
    throw std::invalid_argument(
        "sensor_to_road: timestamp counts differ between input and bank");
  const int s = m_sr.dim(0), r = m_sr.dim(1);
  std::vector<double> t(static_cast<std::size_t>(s) * r);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < r; ++j)
      t[static_cast<std::size_t>(j) * s + i] = m_sr.at({i, j});
  Tensor mask_rs = Tensor::from({r, s}, std::move(t));
  Tensor out = multi_head_attention(swap01(road_bank), swap01(x_emb),
                                    swap01(x_emb), {mask_rs}, p.sr, probe);
  return swap01(out);
}

// Self-attention among roads; head k sees adjacency level k.
inline Tensor road_to_road(const Tensor& h_sr,
                           const std::vector<Tensor>& m_rr_levels,
                           const SpatialParams& p,
                           AttentionProbe* probe = nullptr) {
  if (p.rr.n_head != static_cast<int>(m_rr_levels.size()))
    throw std::invalid_argument(
        "road_to_road: needs one adjacency level per head (" +
        std::to_string(p.rr.n_head) + " heads, " +
        std::to_string(m_rr_levels.size()) + " levels)");
  Tensor h = swap01(h_sr);
  return swap01(multi_head_attention(h, h, h, m_rr_levels, p.rr, probe));
}

// Sensors query the aggregated road features; no mask in this stage.
inline Tensor road_to_sensor(const Tensor& h_rr, const Tensor& x_emb,
                             const SpatialParams& p,
                             AttentionProbe* probe = nullptr) {
  Tensor roads = swap01(h_rr);
  return swap01(
      multi_head_attention(swap01(x_emb), roads, roads, {}, p.rs, probe));
}

// Full stage: input projection -> sr -> rr -> rs -> residual -> layer norm
// -> dropout. Returns H_ST: [|S| x T x C].
inline Tensor spatial_forward(const Tensor& x, const MaskSet& masks,
                              const SpatialParams& p, double dropout_p,
                              bool training, std::mt19937_64& rng,
                              SpatialProbe* probe = nullptr) {
  Tensor x_emb = project_input(x, p);
  if (p.mode == SpatialMode::ProjectionOnly) {
    if (probe) probe->x_emb = x_emb;
    return x_emb;
  }
  Tensor h_rs;
  if (p.mode == SpatialMode::DualLevel) {
    Tensor h_sr = sensor_to_road(x_emb, p.road_bank, masks.m_sr, p,
                                 probe ? &probe->sr_attn : nullptr);
    Tensor h_rr = road_to_road(h_sr, masks.m_rr_levels, p,
                               probe ? &probe->rr_attn : nullptr);
    h_rs = road_to_sensor(h_rr, x_emb, p, probe ? &probe->rs_attn : nullptr);
    if (probe) {
      probe->h_sr = h_sr;
      probe->h_rr = h_rr;
    }
  } else {
    Tensor xt = swap01(x_emb);
    h_rs = swap01(multi_head_attention(xt, xt, xt, {}, p.ss,
                                       probe ? &probe->rs_attn : nullptr));
  }
  if (probe) {
    probe->x_emb = x_emb;
    probe->h_rs = h_rs;
  }
  Tensor normed = layer_norm(add(x_emb, h_rs), p.ln_gain, p.ln_bias);
  return dropout(normed, dropout_p, training, rng);
}

}  // namespace impact
