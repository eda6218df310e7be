#pragma once

// Importance-score temporal transformer. The temporal encoder runs twice:
// first with a zero score, then with the score computed from the first
// decoder's reconstruction gap. Each decoder chains a self-attention over
// the after-validation window into a mutual attention whose keys and
// values come from the encoded full sequence. Both decoders feed one
// shared two-layer FFN that maps back to the input channels.

#include <random>

#include "impact/attention.hpp"
#include "impact/tensor.hpp"

namespace impact {

struct TemporalParams {
  int c = 0;
  int c_in = 0;
  double leaky_slope = 0.2;

  Tensor proj_w, proj_b;  // 2C -> C ahead of the temporal attention
  AttentionParams tt;     // shared by both encoder passes
  AttentionParams dec1_self, dec1_mu;
  AttentionParams dec2_self, dec2_mu;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // shared reconstruction FFN

  static TemporalParams init(int c, int c_in, int n_head, double leaky_slope,
                             std::mt19937_64& rng) {
    TemporalParams p;
    p.c = c;
    p.c_in = c_in;
    p.leaky_slope = leaky_slope;
    p.proj_w = Tensor::randn({2 * c, c}, rng, 1.0 / std::sqrt(2.0 * c), true);
    p.proj_b = Tensor::zeros({c}, true);
    p.tt = AttentionParams::init(c, n_head, rng);
    p.dec1_self = AttentionParams::init(c, n_head, rng);
    p.dec1_mu = AttentionParams::init(c, n_head, rng);
    p.dec2_self = AttentionParams::init(c, n_head, rng);
    p.dec2_mu = AttentionParams::init(c, n_head, rng);
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    p.ffn_w1 = Tensor::randn({c, c}, rng, s, true);
    p.ffn_b1 = Tensor::zeros({c}, true);
    p.ffn_w2 = Tensor::randn({c, c_in}, rng, s, true);
    p.ffn_b2 = Tensor::zeros({c_in}, true);
    return p;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".proj_w", proj_w);
    fn(prefix + ".proj_b", proj_b);
    tt.visit(prefix + ".tt", fn);
    dec1_self.visit(prefix + ".dec1_self", fn);
    dec1_mu.visit(prefix + ".dec1_mu", fn);
    dec2_self.visit(prefix + ".dec2_self", fn);
    dec2_mu.visit(prefix + ".dec2_mu", fn);
    fn(prefix + ".ffn_w1", ffn_w1);
    fn(prefix + ".ffn_b1", ffn_b1);
    fn(prefix + ".ffn_w2", ffn_w2);
    fn(prefix + ".ffn_b2", ffn_b2);
  }
};

// One encoder pass: concatenate the score onto the channels, project back
// to C, run per-sensor self-attention along the time axis, and add the
// projected input as the skip connection.
inline Tensor t_trans(const Tensor& h_st, const Tensor& score,
                      const TemporalParams& p,
                      AttentionProbe* probe = nullptr) {
  if (score.shape() != h_st.shape())
    throw std::invalid_argument("t_trans: score shape " +
                                shape_str(score.shape()) +
                                " must match input " +
                                shape_str(h_st.shape()));
  Tensor z = add_bias(matmul(concat(h_st, score, 2), p.proj_w), p.proj_b);
  Tensor attn = multi_head_attention(z, z, z, {}, p.tt, probe);
  return add(z, attn);
}

namespace detail {

// self-attn over the after-validation slice provides queries; the encoded
// full sequence provides keys and values.
inline Tensor decoder_pass(const Tensor& h_full, const Tensor& h_av,
                           const AttentionParams& self_attn,
                           const AttentionParams& mu_attn,
                           AttentionProbe* self_probe,
                           AttentionProbe* mu_probe) {
  Tensor q = multi_head_attention(h_av, h_av, h_av, {}, self_attn, self_probe);
  return multi_head_attention(q, h_full, h_full, {}, mu_attn, mu_probe);
}

}  // namespace detail

inline Tensor decoder1(const Tensor& h, const Tensor& h_av,
                       const TemporalParams& p,
                       AttentionProbe* self_probe = nullptr,
                       AttentionProbe* mu_probe = nullptr) {
  if (h_av.dim(1) <= 0)
    throw std::invalid_argument("decoder1: empty after-validation window");
  return detail::decoder_pass(h, h_av, p.dec1_self, p.dec1_mu, self_probe,
                              mu_probe);
}

inline Tensor decoder2(const Tensor& h_prime, const Tensor& h_av,
                       const TemporalParams& p,
                       AttentionProbe* self_probe = nullptr,
                       AttentionProbe* mu_probe = nullptr) {
  if (h_av.dim(1) <= 0)
    throw std::invalid_argument("decoder2: empty after-validation window");
  return detail::decoder_pass(h_prime, h_av, p.dec2_self, p.dec2_mu,
                              self_probe, mu_probe);
}

// I = H_ST minus the time-mean of the reconstruction window, broadcast
// over all T timestamps. The mean resolves the T vs T_av length mismatch.
inline Tensor compute_importance(const Tensor& h_st,
                                 const Tensor& h_prime_av) {
  if (h_st.dim(0) != h_prime_av.dim(0) || h_st.dim(2) != h_prime_av.dim(2))
    throw std::invalid_argument("compute_importance: incompatible shapes " +
                                shape_str(h_st.shape()) + " vs " +
                                shape_str(h_prime_av.shape()));
  Tensor mean_av = reduce_mean(h_prime_av, 1);        // [|S| x C]
  return sub(h_st, expand(mean_av, 1, h_st.dim(1)));  // [|S| x T x C]
}

// Shared two-layer FFN with LeakyReLU, mapping decoder output back to the
// input channels, position-wise.
inline Tensor reconstruct(const Tensor& h_dec_av, const TemporalParams& p) {
  Tensor hidden =
      leaky_relu(add_bias(matmul(h_dec_av, p.ffn_w1), p.ffn_b1),
                 p.leaky_slope);
  return add_bias(matmul(hidden, p.ffn_w2), p.ffn_b2);
}

struct ImportanceOut {
  Tensor h;        // encoder pass 1
  Tensor h_prime;  // encoder pass 2
  Tensor score;    // [|S| x T x C]
  Tensor x1_av;    // reconstruction via decoder 1
  Tensor x2_av;    // reconstruction via decoder 2
};

// Full pipeline. `skip_score_concat` disables the score concatenation in
// both encoder passes (the score-free ablation); the score itself is still
// computed for the pooling stage.
inline ImportanceOut importance_forward(const Tensor& h_st, int t_bv,
                                        const TemporalParams& p,
                                        bool skip_score_concat = false) {
  const int t_total = h_st.dim(1);
  const int t_av = t_total - t_bv;
  if (t_bv <= 0 || t_av <= 0)
    throw std::invalid_argument(
        "importance_forward: t_bv must split T into non-empty segments");
  Tensor zero_score = Tensor::zeros(h_st.shape());

  ImportanceOut out;
  out.h = t_trans(h_st, zero_score, p);
  Tensor h_av = slice(h_st, 1, t_bv, t_av);
  Tensor h1_av = decoder1(out.h, h_av, p);
  out.x1_av = reconstruct(h1_av, p);
  out.score = compute_importance(h_st, h1_av);

  out.h_prime = t_trans(h_st, skip_score_concat ? zero_score : out.score, p);
  Tensor h2_av = decoder2(out.h_prime, h_av, p);
  out.x2_av = reconstruct(h2_av, p);
  return out;
}

}  // namespace impact
