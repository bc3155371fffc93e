#pragma once

// Differentiable operations over Tape/Var. Every op computes its value
// eagerly and records a closure that maps the output gradient to input
// gradients.

#include <cmath>
#include <memory>
#include <vector>

#include "neurosem/autodiff.hpp"
#include "neurosem/rng.hpp"

namespace neurosem {

namespace detail {

inline std::string dims(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes " + dims(a.rows(), a.cols()) + " and " +
                         dims(b.rows(), b.cols()) + " differ");
  }
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

// d softmax: dx = y * (g - <g, y>) row-wise
template <typename Scalar>
Mat<Scalar> softmax_rows_backward(const Mat<Scalar>& y, const Mat<Scalar>& g) {
  Mat<Scalar> dx = g;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Scalar inner = g.row(i).dot(y.row(i));
    dx.row(i) = y.row(i).array() * (g.row(i).array() - inner);
  }
  return dx;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions of " + detail::dims(a.rows(), a.cols()) +
                         " and " + detail::dims(b.rows(), b.cols()) + " disagree");
  }
  auto* t = a.tape();
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value() * b.value();
  return t->record("matmul", {a, b}, std::move(out), [ia, ib](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const auto ia = a.id();
  Mat<Scalar> out = a.value().transpose();
  return a.tape()->record("transpose", {a}, std::move(out), [ia](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ia, g.transpose());
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value() + b.value();
  return a.tape()->record("add", {a, b}, std::move(out), [ia, ib](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value() - b.value();
  return a.tape()->record("sub", {a, b}, std::move(out), [ia, ib](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_shape("hadamard", a, b);
  const auto ia = a.id(), ib = b.id();
  Mat<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape()->record("hadamard", {a, b}, std::move(out), [ia, ib](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const auto ia = a.id();
  Mat<Scalar> out = a.value() * s;
  return a.tape()->record("scale", {a}, std::move(out), [ia, s](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ia, g * s);
  });
}

/// x * s where s is a 1 x 1 node.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& x, const Var<Scalar>& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scale_by: factor must be [1x1], got " + detail::dims(s.rows(), s.cols()));
  const auto ix = x.id(), is = s.id();
  Mat<Scalar> out = x.value() * s.value()(0, 0);
  return x.tape()->record("scale_by", {x, s}, std::move(out), [ix, is](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    if (tp.requires_grad(ix)) tp.accumulate(ix, g * tp.value(is)(0, 0));
    if (tp.requires_grad(is)) tp.accumulate(is, Mat<Scalar>::Constant(1, 1, g.cwiseProduct(tp.value(ix)).sum()));
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  const auto ix = x.id();
  Mat<Scalar> out = x.value().array().exp().matrix();
  const auto iy = x.tape()->size();
  return x.tape()->record("exp", {x}, std::move(out), [ix, iy](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ix, g.cwiseProduct(tp.value(iy)));
  });
}

/// x + bias, bias is 1 x cols broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& x, const Var<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + detail::dims(bias.rows(), bias.cols()) +
                         " does not broadcast over " + detail::dims(x.rows(), x.cols()));
  }
  const auto ix = x.id(), ib = bias.id();
  Mat<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return x.tape()->record("add_row", {x, bias}, std::move(out), [ix, ib](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
  });
}

/// Row r of x receives row (r mod table.rows()) of table.
template <typename Scalar>
Var<Scalar> add_tiled(const Var<Scalar>& x, const Var<Scalar>& table) {
  const Eigen::Index period = table.rows();
  if (table.cols() != x.cols() || period == 0 || x.rows() % period != 0) {
    throw DimensionError("add_tiled: table " + detail::dims(table.rows(), table.cols()) +
                         " does not tile " + detail::dims(x.rows(), x.cols()));
  }
  const auto ix = x.id(), it = table.id();
  Mat<Scalar> out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += table.value().row(r % period);
  return x.tape()->record("add_tiled", {x, table}, std::move(out),
                          [ix, it, period](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            tp.accumulate(ix, g);
                            if (tp.requires_grad(it)) {
                              Mat<Scalar> dt = Mat<Scalar>::Zero(period, g.cols());
                              for (Eigen::Index r = 0; r < g.rows(); ++r) dt.row(r % period) += g.row(r);
                              tp.accumulate(it, dt);
                            }
                          });
}

/// GELU, tanh approximation.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  static constexpr Scalar kC = Scalar(0.7978845608);
  static constexpr Scalar kA = Scalar(0.044715);
  const auto ix = x.id();
  const auto& xv = x.value();
  Mat<Scalar> th = (kC * (xv.array() + kA * xv.array().cube())).tanh().matrix();
  Mat<Scalar> out = (Scalar(0.5) * xv.array() * (Scalar(1) + th.array())).matrix();
  return x.tape()->record("gelu", {x}, std::move(out),
                          [ix, th = std::move(th)](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            const auto xa = tp.value(ix).array();
                            const auto ta = th.array();
                            auto d = Scalar(0.5) * (Scalar(1) + ta) +
                                     Scalar(0.5) * xa * (Scalar(1) - ta.square()) * kC *
                                         (Scalar(1) + Scalar(3) * kA * xa.square());
                            tp.accumulate(ix, (g.array() * d).matrix());
                          });
}

/// Softmax along `axis` (0 = down columns, 1 = along rows), max-subtracted.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x, int axis) {
  if (axis != 0 && axis != 1) throw ContractError("softmax: axis must be 0 or 1");
  const auto ix = x.id();
  Mat<Scalar> y = axis == 1 ? detail::softmax_rows<Scalar>(x.value())
                            : Mat<Scalar>(detail::softmax_rows<Scalar>(x.value().transpose()).transpose());
  Mat<Scalar> saved = y;
  return x.tape()->record("softmax", {x}, std::move(y),
                          [ix, axis, saved = std::move(saved)](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            if (axis == 1) {
                              tp.accumulate(ix, detail::softmax_rows_backward<Scalar>(saved, g));
                            } else {
                              Mat<Scalar> yt = saved.transpose();
                              Mat<Scalar> gt = g.transpose();
                              tp.accumulate(ix, detail::softmax_rows_backward<Scalar>(yt, gt).transpose());
                            }
                          });
}

namespace detail {

template <typename Scalar>
struct RowNormCache {
  Mat<Scalar> xhat;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd;
};

template <typename Scalar>
RowNormCache<Scalar> normalize_rows(const Mat<Scalar>& x, Scalar eps) {
  RowNormCache<Scalar> c;
  const Eigen::Index n = x.cols();
  c.xhat.resize(x.rows(), n);
  c.rstd.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mu).square().sum() / Scalar(n);
    c.rstd(i) = Scalar(1) / std::sqrt(var + eps);
    c.xhat.row(i) = (x.row(i).array() - mu) * c.rstd(i);
  }
  return c;
}

// Backward through (x - mean) * rstd given dL/dxhat.
template <typename Scalar>
Mat<Scalar> normalize_rows_backward(const RowNormCache<Scalar>& c, const Mat<Scalar>& dxhat) {
  Mat<Scalar> dx(dxhat.rows(), dxhat.cols());
  for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
    const Scalar m1 = dxhat.row(i).mean();
    const Scalar m2 = dxhat.row(i).dot(c.xhat.row(i)) / Scalar(dxhat.cols());
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

}  // namespace detail

/// Row-wise layer normalization with affine gamma/beta (each 1 x cols).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  if (gamma.rows() != 1 || beta.rows() != 1 || gamma.cols() != x.cols() || beta.cols() != x.cols()) {
    throw DimensionError("layer_norm: gamma/beta must be [1x" + std::to_string(x.cols()) + "]");
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  auto cache = std::make_shared<detail::RowNormCache<Scalar>>(detail::normalize_rows<Scalar>(x.value(), eps));
  Mat<Scalar> out = (cache->xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return x.tape()->record("layer_norm", {x, gamma, beta}, std::move(out),
                          [ix, ig, ib, cache](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            if (tp.requires_grad(ig)) tp.accumulate(ig, g.cwiseProduct(cache->xhat).colwise().sum());
                            if (tp.requires_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                            if (tp.requires_grad(ix)) {
                              Mat<Scalar> dxhat = (g.array().rowwise() * tp.value(ig).row(0).array()).matrix();
                              tp.accumulate(ix, detail::normalize_rows_backward<Scalar>(*cache, dxhat));
                            }
                          });
}

/// Row-wise standardization to zero mean and unit (population) variance.
template <typename Scalar>
Var<Scalar> standardize_rows(const Var<Scalar>& x, Scalar eps) {
  const auto ix = x.id();
  auto cache = std::make_shared<detail::RowNormCache<Scalar>>(detail::normalize_rows<Scalar>(x.value(), eps));
  Mat<Scalar> out = cache->xhat;
  return x.tape()->record("standardize_rows", {x}, std::move(out),
                          [ix, cache](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            tp.accumulate(ix, detail::normalize_rows_backward<Scalar>(*cache, g));
                          });
}

/// Scales each slice along `axis` to unit Euclidean norm; slices with norm
/// below eps are divided by eps instead, so zero maps to zero.
template <typename Scalar>
Var<Scalar> l2_normalize(const Var<Scalar>& x, int axis, Scalar eps = Scalar(1e-12)) {
  if (axis != 0 && axis != 1) throw ContractError("l2_normalize: axis must be 0 or 1");
  const auto ix = x.id();
  Mat<Scalar> xv = axis == 1 ? x.value() : Mat<Scalar>(x.value().transpose());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = xv.rowwise().norm();
  Mat<Scalar> y(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) y.row(i) = xv.row(i) / std::max(norms(i), eps);
  Mat<Scalar> out = axis == 1 ? y : Mat<Scalar>(y.transpose());
  return x.tape()->record(
      "l2_normalize", {x}, std::move(out),
      [ix, axis, eps, y = std::move(y), norms = std::move(norms)](const Mat<Scalar>& g, Tape<Scalar>& tp) {
        Mat<Scalar> gr = axis == 1 ? g : Mat<Scalar>(g.transpose());
        Mat<Scalar> dx(gr.rows(), gr.cols());
        for (Eigen::Index i = 0; i < gr.rows(); ++i) {
          if (norms(i) > eps) {
            dx.row(i) = (gr.row(i) - y.row(i) * y.row(i).dot(gr.row(i))) / norms(i);
          } else {
            dx.row(i) = gr.row(i) / eps;
          }
        }
        if (axis == 1) {
          tp.accumulate(ix, dx);
        } else {
          tp.accumulate(ix, dx.transpose());
        }
      });
}

/// Inverted dropout; identity when p == 0.
template <typename Scalar>
Var<Scalar> dropout(const Var<Scalar>& x, double p, RngStream& stream) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be < 1");
  const auto ix = x.id();
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  Mat<Scalar> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = stream.uniform() < p ? Scalar(0) : keep_scale;
  }
  Mat<Scalar> out = x.value().cwiseProduct(mask);
  return x.tape()->record("dropout", {x}, std::move(out),
                          [ix, mask = std::move(mask)](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            tp.accumulate(ix, g.cwiseProduct(mask));
                          });
}

/// Mean over consecutive groups of `group` rows.
template <typename Scalar>
Var<Scalar> group_mean_rows(const Var<Scalar>& x, Eigen::Index group) {
  if (group <= 0 || x.rows() % group != 0) {
    throw DimensionError("group_mean_rows: " + std::to_string(x.rows()) + " rows not divisible by " +
                         std::to_string(group));
  }
  const auto ix = x.id();
  const Eigen::Index n_out = x.rows() / group;
  Mat<Scalar> out(n_out, x.cols());
  for (Eigen::Index r = 0; r < n_out; ++r) out.row(r) = x.value().middleRows(r * group, group).colwise().mean();
  return x.tape()->record("group_mean_rows", {x}, std::move(out),
                          [ix, group](const Mat<Scalar>& g, Tape<Scalar>& tp) {
                            Mat<Scalar> dx(g.rows() * group, g.cols());
                            for (Eigen::Index r = 0; r < dx.rows(); ++r) dx.row(r) = g.row(r / group) / Scalar(group);
                            tp.accumulate(ix, dx);
                          });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  const auto ix = x.id();
  Mat<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record("sum", {x}, std::move(out), [ix](const Mat<Scalar>& g, Tape<Scalar>& tp) {
    const auto& xv = tp.value(ix);
    tp.accumulate(ix, Mat<Scalar>::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / Scalar(x.value().size()));
}

/// Mean over rows of -log softmax(logits)[i, targets[i]].
template <typename Scalar>
Var<Scalar> cross_entropy_rows(const Var<Scalar>& logits, std::vector<Eigen::Index> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " rows");
  }
  const auto il = logits.id();
  const auto& l = logits.value();
  Mat<Scalar> prob = detail::softmax_rows<Scalar>(l);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const Scalar m = l.row(i).maxCoeff();
    const Scalar lse = m + std::log((l.row(i).array() - m).exp().sum());
    total += lse - l(i, targets[i]);
  }
  Mat<Scalar> out(1, 1);
  out(0, 0) = total / Scalar(l.rows());
  return logits.tape()->record(
      "cross_entropy_rows", {logits}, std::move(out),
      [il, prob = std::move(prob), targets = std::move(targets)](const Mat<Scalar>& g, Tape<Scalar>& tp) {
        Mat<Scalar> d = prob;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, targets[i]) -= Scalar(1);
        tp.accumulate(il, d * (g(0, 0) / Scalar(d.rows())));
      });
}

/// Per-channel temporal patch projection.
///
/// `z` holds one row per (example, channel) of length samples; `weight`
/// stacks one patch_len x d block per channel. The output has one row per
/// (example, patch, channel), ordered with channel fastest, so consecutive
/// groups of `channels` rows are the channel tokens of one patch.
template <typename Scalar>
Var<Scalar> channel_patch_embed(const Var<Scalar>& z, const Var<Scalar>& weight, Eigen::Index channels,
                                Eigen::Index patch_len) {
  const Eigen::Index samples = z.cols();
  if (channels <= 0 || z.rows() % channels != 0 || patch_len <= 0 || samples % patch_len != 0 ||
      weight.rows() != channels * patch_len) {
    throw DimensionError("channel_patch_embed: input " + detail::dims(z.rows(), z.cols()) + " and weight " +
                         detail::dims(weight.rows(), weight.cols()) + " do not match channels=" +
                         std::to_string(channels) + " patch_len=" + std::to_string(patch_len));
  }
  using Strided = Eigen::Map<Mat<Scalar>, 0, Eigen::OuterStride<>>;
  using CStrided = Eigen::Map<const Mat<Scalar>, 0, Eigen::OuterStride<>>;
  using CMap = Eigen::Map<const Mat<Scalar>>;
  const Eigen::Index batch = z.rows() / channels;
  const Eigen::Index patches = samples / patch_len;
  const Eigen::Index d = weight.cols();
  const auto iz = z.id(), iw = weight.id();

  Mat<Scalar> out(batch * patches * channels, d);
  const auto& zv = z.value();
  const auto& wv = weight.value();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      CMap zp(zv.row(b * channels + c).data(), patches, patch_len);
      Strided dst(out.data() + (b * patches * channels + c) * d, patches, d, Eigen::OuterStride<>(channels * d));
      dst.noalias() = zp * wv.middleRows(c * patch_len, patch_len);
    }
  }
  return z.tape()->record(
      "channel_patch_embed", {z, weight}, std::move(out),
      [iz, iw, batch, channels, patches, patch_len, d](const Mat<Scalar>& g, Tape<Scalar>& tp) {
        const auto& zval = tp.value(iz);
        const auto& wval = tp.value(iw);
        const bool need_z = tp.requires_grad(iz);
        const bool need_w = tp.requires_grad(iw);
        Mat<Scalar> dz, dw;
        if (need_z) dz.resize(zval.rows(), zval.cols());
        if (need_w) dw = Mat<Scalar>::Zero(wval.rows(), wval.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
          for (Eigen::Index c = 0; c < channels; ++c) {
            CStrided gp(g.data() + (b * patches * channels + c) * d, patches, d, Eigen::OuterStride<>(channels * d));
            if (need_w) {
              CMap zp(zval.row(b * channels + c).data(), patches, patch_len);
              dw.middleRows(c * patch_len, patch_len).noalias() += zp.transpose() * gp;
            }
            if (need_z) {
              Eigen::Map<Mat<Scalar>> dzp(dz.row(b * channels + c).data(), patches, patch_len);
              dzp.noalias() = gp * wval.middleRows(c * patch_len, patch_len).transpose();
            }
          }
        }
        if (need_z) tp.accumulate(iz, dz);
        if (need_w) tp.accumulate(iw, dw);
      });
}

/// Multi-head scaled dot-product attention restricted to consecutive groups
/// of `group` rows: tokens attend only within their own group.
template <typename Scalar>
Var<Scalar> grouped_attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                              Eigen::Index group, Eigen::Index heads) {
  detail::require_same_shape("grouped_attention", q, k);
  detail::require_same_shape("grouped_attention", q, v);
  const Eigen::Index n = q.rows(), d = q.cols();
  if (group <= 0 || n % group != 0 || heads <= 0 || d % heads != 0) {
    throw DimensionError("grouped_attention: " + detail::dims(n, d) + " incompatible with group=" +
                         std::to_string(group) + " heads=" + std::to_string(heads));
  }
  const Eigen::Index dk = d / heads;
  const Eigen::Index groups = n / group;
  const Scalar s = Scalar(1) / std::sqrt(Scalar(dk));
  const auto iq = q.id(), ik = k.id(), iv = v.id();
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();

  auto probs = std::make_shared<std::vector<Mat<Scalar>>>(groups * heads);
  Mat<Scalar> out(n, d);
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    for (Eigen::Index h = 0; h < heads; ++h) {
      auto qb = qv.block(gi * group, h * dk, group, dk);
      auto kb = kv.block(gi * group, h * dk, group, dk);
      auto vb = vv.block(gi * group, h * dk, group, dk);
      Mat<Scalar> scores = (qb * kb.transpose()) * s;
      Mat<Scalar> p = detail::softmax_rows<Scalar>(scores);
      out.block(gi * group, h * dk, group, dk).noalias() = p * vb;
      (*probs)[gi * heads + h] = std::move(p);
    }
  }
  return q.tape()->record(
      "grouped_attention", {q, k, v}, std::move(out),
      [iq, ik, iv, group, heads, groups, dk, s, probs](const Mat<Scalar>& g, Tape<Scalar>& tp) {
        const auto& qval = tp.value(iq);
        const auto& kval = tp.value(ik);
        const auto& vval = tp.value(iv);
        Mat<Scalar> dq(qval.rows(), qval.cols()), dkm(kval.rows(), kval.cols()), dv(vval.rows(), vval.cols());
        for (Eigen::Index gi = 0; gi < groups; ++gi) {
          for (Eigen::Index h = 0; h < heads; ++h) {
            const auto& p = (*probs)[gi * heads + h];
            auto go = g.block(gi * group, h * dk, group, dk);
            auto qb = qval.block(gi * group, h * dk, group, dk);
            auto kb = kval.block(gi * group, h * dk, group, dk);
            auto vb = vval.block(gi * group, h * dk, group, dk);
            dv.block(gi * group, h * dk, group, dk).noalias() = p.transpose() * go;
            Mat<Scalar> dp = go * vb.transpose();
            Mat<Scalar> ds = detail::softmax_rows_backward<Scalar>(p, dp) * s;
            dq.block(gi * group, h * dk, group, dk).noalias() = ds * kb;
            dkm.block(gi * group, h * dk, group, dk).noalias() = ds.transpose() * qb;
          }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dkm);
        tp.accumulate(iv, dv);
      });
}

}  // namespace neurosem
