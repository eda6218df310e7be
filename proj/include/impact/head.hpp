#pragma once

// Prediction head and training loss. The encoded sequence is weighted
// elementwise by the importance score, collapsed over time by a learned
// per-channel kernel spanning the full T axis, sum-pooled over sensors,
// and projected through three linear layers to (duration, length). The
// loss mixes the L1 prediction term with the two reconstruction terms
// under the decreasing omega schedule.

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "impact/tensor.hpp"

namespace impact {

struct HeadParams {
  int c = 0, t = 0;
  double leaky_slope = 0.2;
  Tensor pool_kernel;  // [T x C] temporal collapse weights
  Tensor pool_bias;    // [C]
  Tensor w1, b1, w2, b2, w3, b3;

  static HeadParams init(int c, int t, double leaky_slope,
                         std::mt19937_64& rng) {
    HeadParams p;
    p.c = c;
    p.t = t;
    p.leaky_slope = leaky_slope;
    p.pool_kernel = Tensor::filled({t, c}, 1.0 / t, true);
    p.pool_bias = Tensor::zeros({c}, true);
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    p.w1 = Tensor::randn({c, c}, rng, s, true);
    p.b1 = Tensor::zeros({c}, true);
    p.w2 = Tensor::randn({c, c}, rng, s, true);
    p.b2 = Tensor::zeros({c}, true);
    p.w3 = Tensor::randn({c, 2}, rng, s, true);
    p.b3 = Tensor::zeros({2}, true);
    return p;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".pool_kernel", pool_kernel);
    fn(prefix + ".pool_bias", pool_bias);
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
    fn(prefix + ".w3", w3);
    fn(prefix + ".b3", b3);
  }
};

struct PoolProbe {
  Tensor weighted;  // H' (.) I
  Tensor h_t;       // after temporal collapse, [|S| x C]
  Tensor h_s;       // after sum pooling, [C]
};

// h_prime, score: [|S| x T x C] -> prediction [2] = (duration, length).
inline Tensor pool_predict(const Tensor& h_prime, const Tensor& score,
                           const HeadParams& p, PoolProbe* probe = nullptr) {
  if (h_prime.shape() != score.shape())
    throw std::invalid_argument("pool_predict: score shape " +
                                shape_str(score.shape()) +
                                " must match h' " +
                                shape_str(h_prime.shape()));
  if (h_prime.dim(1) != p.t || h_prime.dim(2) != p.c)
    throw std::invalid_argument("pool_predict: input " +
                                shape_str(h_prime.shape()) +
                                " does not match head [T=" +
                                std::to_string(p.t) + ", C=" +
                                std::to_string(p.c) + "]");
  const int n_sensors = h_prime.dim(0);
  Tensor weighted = mul(h_prime, score);
  Tensor h_t = add_bias(
      reduce_sum(mul(weighted, expand(p.pool_kernel, 0, n_sensors)), 1),
      p.pool_bias);                     // [|S| x C]
  Tensor h_s = reduce_sum(h_t, 0);      // [C]
  if (probe) {
    probe->weighted = weighted;
    probe->h_t = h_t;
    probe->h_s = h_s;
  }
  Tensor a1 = leaky_relu(add_bias(matmul(h_s, p.w1), p.b1), p.leaky_slope);
  Tensor a2 = leaky_relu(add_bias(matmul(a1, p.w2), p.b2), p.leaky_slope);
  return add_bias(matmul(a2, p.w3), p.b3);
}

struct LossWeights {
  double psi = 1.0;
  double omega = 1.0;
};

struct LossParts {
  Tensor total;
  double prediction = 0.0;      // Loss 1
  double reconstruction1 = 0.0; // Loss 2
  double reconstruction2 = 0.0; // Loss 3
};

// total = psi * Loss1 + omega * Loss2 + (1 - omega) * Loss3 where Loss1 is
// |dur_hat - dur| + |len_hat - len| and the reconstruction terms are mean
// L1. Undefined reconstructions (score-free / temporal-free ablations)
// contribute zero.
inline LossParts combined_loss(const Tensor& pred, double y_dur, double y_len,
                               const Tensor& x1_av, const Tensor& x2_av,
                               const Tensor& x_av, const LossWeights& w) {
  if (w.omega <= 0.0 || w.omega > 1.0)
    throw std::invalid_argument("combined_loss: omega must be in (0,1], got " +
                                std::to_string(w.omega));
  if (w.psi <= 0.0)
    throw std::invalid_argument("combined_loss: psi must be positive");
  if (pred.numel() != 2)
    throw std::invalid_argument("combined_loss: prediction must have 2 values");
  Tensor target = Tensor::from({2}, {y_dur, y_len});
  LossParts parts;
  Tensor loss1 = l1_loss(pred, target, Reduction::Sum);
  parts.prediction = loss1.item();
  Tensor total = scale(loss1, w.psi);
  if (x1_av.defined()) {
    Tensor loss2 = l1_loss(x1_av, x_av);
    parts.reconstruction1 = loss2.item();
    total = add(total, scale(loss2, w.omega));
  }
  if (x2_av.defined()) {
    Tensor loss3 = l1_loss(x2_av, x_av);
    parts.reconstruction2 = loss3.item();
    total = add(total, scale(loss3, 1.0 - w.omega));
  }
  parts.total = total;
  return parts;
}

// omega = 1/epoch: starts at 1 and decreases strictly, staying in (0,1].
inline double omega_schedule(int epoch) {
  if (epoch < 1)
    throw std::invalid_argument("omega_schedule: epoch is 1-based, got " +
                                std::to_string(epoch));
  return 1.0 / epoch;
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

namespace detail {

inline void check_metric_input(const std::vector<double>& pred,
                               const std::vector<double>& truth) {
  if (pred.empty() || pred.size() != truth.size())
    throw std::invalid_argument("metric: inputs must be non-empty and equal "
                                "length");
}

}  // namespace detail

inline double rmse(const std::vector<double>& pred,
                   const std::vector<double>& truth) {
  detail::check_metric_input(pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(acc / pred.size());
}

inline double mae(const std::vector<double>& pred,
                  const std::vector<double>& truth) {
  detail::check_metric_input(pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(pred[i] - truth[i]);
  return acc / pred.size();
}

// Symmetric MAPE, mean of 2|y - y_hat| / (|y| + |y_hat|); a 0/0 term
// counts as 0 (zero-length labels with perfect predictions).
inline double smape(const std::vector<double>& pred,
                    const std::vector<double>& truth) {
  detail::check_metric_input(pred, truth);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double denom = std::abs(truth[i]) + std::abs(pred[i]);
    if (denom > 0.0) acc += 2.0 * std::abs(truth[i] - pred[i]) / denom;
  }
  return acc / pred.size();
}

}  // namespace impact
