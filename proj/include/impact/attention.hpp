#pragma once

// Multi-head attention over batched sequences. One routine serves every
// attention site in the model: sensor->road and road->road (masked),
// road->sensor, temporal, and the decoder self/mutual attentions
// (unmasked). Masks may be shared across heads or given per head.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "impact/tensor.hpp"

namespace impact {

struct AttentionParams {
  int n_head = 0;
  int d_model = 0;
  int d_head = 0;
  std::vector<Tensor> wq, wk, wv;  // per head, [d_model x d_head]
  Tensor wo;                       // [d_model x d_model]
  Tensor bo;                       // [d_model]

  static AttentionParams init(int d_model, int n_head, std::mt19937_64& rng) {
    if (n_head <= 0 || d_model % n_head != 0)
      throw std::invalid_argument(
          "attention: channel count " + std::to_string(d_model) +
          " is not divisible by n_head " + std::to_string(n_head));
    AttentionParams p;
    p.n_head = n_head;
    p.d_model = d_model;
    p.d_head = d_model / n_head;
    const double std_qkv = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (int h = 0; h < n_head; ++h) {
      p.wq.push_back(Tensor::randn({d_model, p.d_head}, rng, std_qkv, true));
      p.wk.push_back(Tensor::randn({d_model, p.d_head}, rng, std_qkv, true));
      p.wv.push_back(Tensor::randn({d_model, p.d_head}, rng, std_qkv, true));
    }
    p.wo = Tensor::randn({d_model, d_model}, rng, std_qkv, true);
    p.bo = Tensor::zeros({d_model}, true);
    return p;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (int h = 0; h < n_head; ++h) {
      const std::string hs = std::to_string(h);
      fn(prefix + ".wq" + hs, wq[h]);
      fn(prefix + ".wk" + hs, wk[h]);
      fn(prefix + ".wv" + hs, wv[h]);
    }
    fn(prefix + ".wo", wo);
    fn(prefix + ".bo", bo);
  }
};

// Captures per-head attention weights ([B x Lq x Lk] each) for tests and
// the importance-score report.
struct AttentionProbe {
  std::vector<Tensor> head_weights;
};

namespace detail {

inline Tensor lift3(const Tensor& t) {
  return t.ndim() == 2 ? expand(t, 0, 1) : t;
}

}  // namespace detail

// q_in: [B x Lq x C] (or [Lq x C]); k_in/v_in: [B x Lk x C]. `masks` is
// empty (no mask), one tensor shared by all heads, or one per head; each
// mask is [Lq x Lk]. Scaled dot-product per head at 1/sqrt(d_head),
// concatenated and projected back to C.
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in,
                                   const Tensor& v_in,
                                   const std::vector<Tensor>& masks,
                                   const AttentionParams& p,
                                   AttentionProbe* probe = nullptr) {
  const bool was_2d = q_in.ndim() == 2;
  Tensor q = detail::lift3(q_in);
  Tensor k = detail::lift3(k_in);
  Tensor v = detail::lift3(v_in);
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
    throw std::invalid_argument("attention: inputs must be 2-D or 3-D");
  if (q.dim(2) != p.d_model || k.dim(2) != p.d_model || v.dim(2) != p.d_model)
    throw std::invalid_argument(
        "attention: channel dim must be " + std::to_string(p.d_model) +
        ", got q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()));
  if (k.dim(0) != q.dim(0) || v.dim(0) != q.dim(0) || k.dim(1) != v.dim(1))
    throw std::invalid_argument("attention: batch/key shapes inconsistent: q " +
                                shape_str(q.shape()) + ", k " +
                                shape_str(k.shape()) + ", v " +
                                shape_str(v.shape()));
  if (!masks.empty() && masks.size() != 1 &&
      masks.size() != static_cast<std::size_t>(p.n_head))
    throw std::invalid_argument(
        "attention: expected 0, 1, or n_head masks, got " +
        std::to_string(masks.size()));

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d_head));
  Tensor heads;
  for (int h = 0; h < p.n_head; ++h) {
    Tensor qh = matmul(q, p.wq[h]);  // [B x Lq x d]
    Tensor kh = matmul(k, p.wk[h]);
    Tensor vh = matmul(v, p.wv[h]);
    Tensor logits = scale(bmm(qh, kh, /*transpose_b=*/true), inv_sqrt_d);
    const Tensor* mask = nullptr;
    if (!masks.empty()) mask = masks.size() == 1 ? &masks[0] : &masks[h];
    Tensor attn = masked_softmax(logits, mask ? *mask : Tensor());
    if (probe) probe->head_weights.push_back(attn);
    Tensor oh = bmm(attn, vh);  // [B x Lq x d]
    heads = h == 0 ? oh : concat(heads, oh, 2);
  }
  Tensor out = add_bias(matmul(heads, p.wo), p.bo);
  if (was_2d) out = reshape(out, {out.dim(1), out.dim(2)});
  return out;
}

}  // namespace impact
