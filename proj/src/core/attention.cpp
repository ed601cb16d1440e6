#include "tcd/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tcd {

BinaryMask::BinaryMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

BinaryMask BinaryMask::from_tensor(const Tensor& mask) {
  if (mask.rank() != 2) {
    throw ShapeError("mask must be a matrix, got shape " + shape_string(mask.shape()));
  }
  BinaryMask out(mask.dim(0), mask.dim(1), false);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double v = mask[i];
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("mask entries must be 0 or 1");
    }
    out.bits_[i] = v == 1.0 ? 1 : 0;
  }
  return out;
}

bool BinaryMask::row_empty(std::size_t r) const {
  for (std::size_t c = 0; c < cols_; ++c) {
    if (bits_[r * cols_ + c]) return false;
  }
  return true;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor BinaryMask::to_tensor() const {
  Tensor t({rows_, cols_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i];
  return t;
}

namespace kernels {

void attention_forward(const double* q, const double* k, const double* v, std::size_t ld,
                       std::size_t nq, std::size_t nk, std::size_t d, const BinaryMask& mask,
                       double scale, double* w, double* out, std::size_t ld_out) {
  for (std::size_t i = 0; i < nq; ++i) {
    double* wi = w + i * nk;
    const double* qi = q + i * ld;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nk; ++j) {
      if (!mask(i, j)) {
        wi[j] = 0.0;
        continue;
      }
      const double* kj = k + j * ld;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
      s *= scale;
      wi[j] = s;
      best = std::max(best, s);
    }
    double* oi = out + i * ld_out;
    std::fill(oi, oi + d, 0.0);
    if (best == -std::numeric_limits<double>::infinity()) {
      // fully masked row: zero weights, zero output
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      if (!mask(i, j)) continue;
      wi[j] = std::exp(wi[j] - best);
      total += wi[j];
    }
    for (std::size_t j = 0; j < nk; ++j) {
      if (!mask(i, j)) continue;
      wi[j] /= total;
      const double* vj = v + j * ld;
      const double a = wi[j];
      for (std::size_t c = 0; c < d; ++c) oi[c] += a * vj[c];
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, std::size_t ld,
                        std::size_t nq, std::size_t nk, std::size_t d, const double* w,
                        const double* dout, std::size_t ld_out, double scale, double* dq,
                        double* dk, double* dv, double* scratch) {
  // scratch holds dLogits (nq x nk)
  for (std::size_t i = 0; i < nq; ++i) {
    const double* wi = w + i * nk;
    const double* gi = dout + i * ld_out;
    double* si = scratch + i * nk;
    double dot = 0.0;
    for (std::size_t j = 0; j < nk; ++j) {
      if (wi[j] == 0.0) {
        si[j] = 0.0;
        continue;
      }
      const double* vj = v + j * ld;
      double* dvj = dv + j * ld;
      double g = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        g += gi[c] * vj[c];
        dvj[c] += wi[j] * gi[c];
      }
      si[j] = g;
      dot += g * wi[j];
    }
    for (std::size_t j = 0; j < nk; ++j) {
      if (wi[j] != 0.0) si[j] = wi[j] * (si[j] - dot) * scale;
    }
  }
  for (std::size_t i = 0; i < nq; ++i) {
    const double* si = scratch + i * nk;
    const double* qi = q + i * ld;
    double* dqi = dq + i * ld;
    for (std::size_t j = 0; j < nk; ++j) {
      const double s = si[j];
      if (s == 0.0) continue;
      const double* kj = k + j * ld;
      double* dkj = dk + j * ld;
      for (std::size_t c = 0; c < d; ++c) {
        dqi[c] += s * kj[c];
        dkj[c] += s * qi[c];
      }
    }
  }
}

}  // namespace kernels

AttentionResult masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const Tensor& mask) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("masked_attention expects [h, T, d] tensors");
  }
  const std::size_t h = q.dim(0), tq = q.dim(1), d = q.dim(2);
  const std::size_t tk = k.dim(1);
  if (k.dim(0) != h || v.dim(0) != h || k.dim(2) != d || v.dim(2) != d || v.dim(1) != tk) {
    throw ShapeError("masked_attention shape mismatch: q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (mask.rank() != 2 || mask.dim(0) != tq || mask.dim(1) != tk) {
    throw ShapeError("mask shape " + shape_string(mask.shape()) + " does not match " +
                     std::to_string(tq) + "x" + std::to_string(tk));
  }
  const BinaryMask bits = BinaryMask::from_tensor(mask);
  AttentionResult result{Tensor({h, tq, d}), Tensor({h, tq, tk})};
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t head = 0; head < h; ++head) {
    kernels::attention_forward(q.data().data() + head * tq * d, k.data().data() + head * tk * d,
                               v.data().data() + head * tk * d, d, tq, tk, d, bits, scale,
                               result.weights.data().data() + head * tq * tk,
                               result.output.data().data() + head * tq * d, d);
  }
  return result;
}

}  // namespace tcd
