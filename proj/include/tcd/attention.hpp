#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tcd/tensor.hpp"

namespace tcd {

/// Row-major binary matrix. Rows are queries (attendees), columns are keys
/// (candidate causes). A zero entry forbids the query from attending the key.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t rows, std::size_t cols, bool fill = true);

  /// Validates that every entry is exactly 0 or 1.
  static BinaryMask from_tensor(const Tensor& mask);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool allowed) { bits_[r * cols_ + c] = allowed ? 1 : 0; }

  bool row_empty(std::size_t r) const;
  std::size_t count() const;

  Tensor to_tensor() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct AttentionResult {
  Tensor output;   // [h, Tq, d]
  Tensor weights;  // [h, Tq, Tk]
};

/// Multi-head scaled dot-product attention with a hard mask.
///
/// Masked logits are removed before the softmax (not multiplied by zero), so
/// masked weights are exactly zero. A query row with no permitted key yields
/// an all-zero weight row and a zero output vector.
AttentionResult masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 const Tensor& mask);

namespace kernels {

// Single-head block kernels over raw row-major buffers. `q` is nq x d with
// row stride `ld`, likewise for k/v. Weights are written to `w` (nq x nk).
void attention_forward(const double* q, const double* k, const double* v, std::size_t ld,
                       std::size_t nq, std::size_t nk, std::size_t d, const BinaryMask& mask,
                       double scale, double* w, double* out, std::size_t ld_out);

// Accumulates into dq/dk/dv (row stride `ld`). `scratch` must hold nq*nk values.
void attention_backward(const double* q, const double* k, const double* v, std::size_t ld,
                        std::size_t nq, std::size_t nk, std::size_t d, const double* w,
                        const double* dout, std::size_t ld_out, double scale, double* dq,
                        double* dk, double* dv, double* scratch);

}  // namespace kernels

}  // namespace tcd
