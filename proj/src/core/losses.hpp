// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 the weightgen authors

#ifndef WEIGHTGEN_CORE_LOSSES_HPP
#define WEIGHTGEN_CORE_LOSSES_HPP

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "core/error.hpp"

namespace weightgen {

// Loss-side treatment of padding when standardizing tokens:
//   none             raw masked MSE
//   per_token        stats over the full token width (padding counts as zero)
//   masked_per_token stats over signal entries only
enum class NormalizationMode { none, per_token, masked_per_token };

const char* normalization_mode_name(NormalizationMode m);
NormalizationMode normalization_mode_from_name(const std::string& s);

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct TokenStats {
  S mu = S(0);
  S sigma = S(0);
};

namespace detail {

template <typename S, typename DT, typename DM>
void check_same_shape(const Eigen::MatrixBase<DT>& a, const Eigen::MatrixBase<DM>& b,
                      const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    raise(ErrorCode::validation, std::string(what) + ": shape mismatch");
}

}  // namespace detail

// Masked mean and standard deviation of one token: only signal entries
// contribute; sigma is the population std plus eps (added outside the root).
template <typename S, typename DT, typename DM>
TokenStats<S> masked_token_stats(const Eigen::MatrixBase<DT>& token,
                                 const Eigen::MatrixBase<DM>& mask, S eps) {
  detail::check_same_shape<S>(token, mask, "masked_token_stats");
  S sum = S(0);
  S count = S(0);
  for (Eigen::Index i = 0; i < token.size(); ++i) {
    if (mask(i) != S(0)) {
      sum += token(i);
      count += S(1);
    }
  }
  if (count == S(0))
    raise(ErrorCode::validation, "degenerate token: mask has no signal entries");
  S mu = sum / count;
  S acc = S(0);
  for (Eigen::Index i = 0; i < token.size(); ++i) {
    if (mask(i) != S(0)) {
      S d = token(i) - mu;
      acc += d * d;
    }
  }
  return {mu, std::sqrt(acc / count) + eps};
}

// Unmasked variant used by per_token mode: padding participates as zero
// (token values are defined to be zero there), so the denominators are the
// full token width and the result never depends on values under mask 0.
template <typename S, typename DT, typename DM>
TokenStats<S> per_token_stats(const Eigen::MatrixBase<DT>& token,
                              const Eigen::MatrixBase<DM>& mask, S eps) {
  detail::check_same_shape<S>(token, mask, "per_token_stats");
  S n = S(token.size());
  S sum = S(0);
  S signal = S(0);
  for (Eigen::Index i = 0; i < token.size(); ++i) {
    if (mask(i) != S(0)) {
      sum += token(i);
      signal += S(1);
    }
  }
  S mu = sum / n;
  S acc = S(0);
  for (Eigen::Index i = 0; i < token.size(); ++i) {
    if (mask(i) != S(0)) {
      S d = token(i) - mu;
      acc += d * d;
    }
  }
  acc += (n - signal) * mu * mu;  // padded entries contribute (0 - mu)^2
  return {mu, std::sqrt(acc / n) + eps};
}

// Per-token standard deviations used to standardize row r of the target
// (and prediction) under the given mode; sigma == 1 for mode none.
template <typename S>
TokenStats<S> token_stats_for_mode(const MatX<S>& target, const MatX<S>& mask, Eigen::Index row,
                                   NormalizationMode mode, S eps) {
  switch (mode) {
    case NormalizationMode::none:
      return {S(0), S(1)};
    case NormalizationMode::per_token:
      return per_token_stats<S>(target.row(row), mask.row(row), eps);
    case NormalizationMode::masked_per_token:
      return masked_token_stats<S>(target.row(row), mask.row(row), eps);
  }
  return {S(0), S(1)};
}

// Masked MSE of (optionally standardized) tokens, averaged over signal
// entries. Standardization uses the target's stats for both operands, so
// the difference simplifies to (T - That) / sigma and entries under mask 0
// contribute exactly zero in every mode.
template <typename S>
S normalized_reconstruction_loss(const MatX<S>& target, const MatX<S>& pred, const MatX<S>& mask,
                                 NormalizationMode mode, S eps) {
  detail::check_same_shape<S>(target, pred, "reconstruction_loss");
  detail::check_same_shape<S>(target, mask, "reconstruction_loss");
  S acc = S(0);
  S signal = S(0);
  for (Eigen::Index r = 0; r < target.rows(); ++r) {
    TokenStats<S> st = token_stats_for_mode(target, mask, r, mode, eps);
    for (Eigen::Index c = 0; c < target.cols(); ++c) {
      if (mask(r, c) != S(0)) {
        S d = (target(r, c) - pred(r, c)) / st.sigma;
        acc += d * d;
        signal += S(1);
      }
    }
  }
  if (signal == S(0))
    raise(ErrorCode::validation, "reconstruction loss: no signal entries");
  return acc / signal;
}

// d loss / d pred. Target stats are constants with respect to the prediction.
template <typename S>
MatX<S> reconstruction_loss_grad(const MatX<S>& target, const MatX<S>& pred, const MatX<S>& mask,
                                 NormalizationMode mode, S eps) {
  detail::check_same_shape<S>(target, pred, "reconstruction_loss_grad");
  detail::check_same_shape<S>(target, mask, "reconstruction_loss_grad");
  S signal = S(0);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    if (mask(i) != S(0)) signal += S(1);
  if (signal == S(0))
    raise(ErrorCode::validation, "reconstruction loss: no signal entries");
  MatX<S> grad = MatX<S>::Zero(target.rows(), target.cols());
  for (Eigen::Index r = 0; r < target.rows(); ++r) {
    TokenStats<S> st = token_stats_for_mode(target, mask, r, mode, eps);
    S inv_var = S(1) / (st.sigma * st.sigma);
    for (Eigen::Index c = 0; c < target.cols(); ++c) {
      if (mask(r, c) != S(0))
        grad(r, c) = S(-2) * (target(r, c) - pred(r, c)) * inv_var / signal;
    }
  }
  return grad;
}

// Normalized-temperature cross entropy over cosine similarities of two
// batches of projected embeddings (rows are paired views of the same
// windows), averaged over the 2B anchors. Accumulation order is canonical
// per pair, making the value bitwise symmetric under swapping the views.
template <typename S>
S ntxent_loss(const MatX<S>& zi, const MatX<S>& zj, S tau) {
  if (tau <= S(0)) raise(ErrorCode::invalid_argument, "ntxent: temperature must be positive");
  detail::check_same_shape<S>(zi, zj, "ntxent");
  const Eigen::Index b = zi.rows();
  if (b < 2) raise(ErrorCode::validation, "ntxent: batch must contain at least 2 pairs");

  MatX<S> u(2 * b, zi.cols());
  for (Eigen::Index r = 0; r < b; ++r) {
    u.row(2 * r) = zi.row(r);
    u.row(2 * r + 1) = zj.row(r);
  }
  for (Eigen::Index r = 0; r < 2 * b; ++r) {
    S n = u.row(r).norm();
    u.row(r) /= std::max(n, S(1e-12));
  }
  MatX<S> sim = u * u.transpose();

  S total = S(0);
  for (Eigen::Index p = 0; p < b; ++p) {
    S pair_sum = S(0);
    for (int leg = 0; leg < 2; ++leg) {
      Eigen::Index a = 2 * p + leg;
      Eigen::Index partner = 2 * p + (1 - leg);
      S denom = S(0);
      for (Eigen::Index q = 0; q < b; ++q) {
        if (q == p) continue;
        denom += std::exp(sim(a, 2 * q) / tau) + std::exp(sim(a, 2 * q + 1) / tau);
      }
      denom += std::exp(sim(a, partner) / tau);
      S anchor_loss = std::log(denom) - sim(a, partner) / tau;
      pair_sum = leg == 0 ? anchor_loss : pair_sum + anchor_loss;
    }
    total += pair_sum;
  }
  return total / S(2 * b);
}

// Gradients of ntxent_loss with respect to both batches.
template <typename S>
std::pair<MatX<S>, MatX<S>> ntxent_loss_grad(const MatX<S>& zi, const MatX<S>& zj, S tau) {
  if (tau <= S(0)) raise(ErrorCode::invalid_argument, "ntxent: temperature must be positive");
  detail::check_same_shape<S>(zi, zj, "ntxent_grad");
  const Eigen::Index b = zi.rows();
  if (b < 2) raise(ErrorCode::validation, "ntxent: batch must contain at least 2 pairs");
  const Eigen::Index n = 2 * b;
  const Eigen::Index d = zi.cols();

  MatX<S> z(n, d);
  for (Eigen::Index r = 0; r < b; ++r) {
    z.row(2 * r) = zi.row(r);
    z.row(2 * r + 1) = zj.row(r);
  }
  MatX<S> u(n, d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    norms(r) = std::max(z.row(r).norm(), S(1e-12));
    u.row(r) = z.row(r) / norms(r);
  }
  MatX<S> sim = u * u.transpose();

  // dL/dsim, accumulated over all 2B anchor rows.
  MatX<S> dsim = MatX<S>::Zero(n, n);
  const S scale = S(1) / (S(n) * tau);
  for (Eigen::Index a = 0; a < n; ++a) {
    Eigen::Index partner = (a % 2 == 0) ? a + 1 : a - 1;
    S denom = S(0);
    for (Eigen::Index q = 0; q < n; ++q)
      if (q != a && q / 2 != a / 2) denom += std::exp(sim(a, q) / tau);
    denom += std::exp(sim(a, partner) / tau);
    for (Eigen::Index q = 0; q < n; ++q) {
      if (q == a) continue;
      if (q / 2 == a / 2 && q != partner) continue;
      dsim(a, q) += scale * std::exp(sim(a, q) / tau) / denom;
    }
    dsim(a, partner) -= scale;
  }

  // sim(a, q) = u_a . u_q
  MatX<S> du = MatX<S>::Zero(n, d);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index q = 0; q < n; ++q) {
      if (dsim(a, q) == S(0)) continue;
      du.row(a) += dsim(a, q) * u.row(q);
      du.row(q) += dsim(a, q) * u.row(a);
    }

  // u = z / max(||z||, tiny)
  MatX<S> dz(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    S dot = du.row(r).dot(u.row(r));
    dz.row(r) = (du.row(r) - dot * u.row(r)) / norms(r);
  }

  MatX<S> dzi(b, d), dzj(b, d);
  for (Eigen::Index r = 0; r < b; ++r) {
    dzi.row(r) = dz.row(2 * r);
    dzj.row(r) = dz.row(2 * r + 1);
  }
  return {std::move(dzi), std::move(dzj)};
}

// L = (1 - gamma) * L_rec + gamma * L_c
template <typename S>
S total_loss(S l_rec, S l_contrastive, S gamma) {
  if (gamma < S(0) || gamma > S(1))
    raise(ErrorCode::invalid_argument, "gamma must lie in [0,1]");
  return (S(1) - gamma) * l_rec + gamma * l_contrastive;
}

}  // namespace weightgen

#endif
