#pragma once

#include "mbqn/bitplane.hpp"
#include "mbqn/codec.hpp"
#include "mbqn/types.hpp"

#include <span>
#include <vector>

namespace mbqn {

// ===== encoded tensors =====

/// A matrix encoded row-wise into sign planes: each of the `rows` vector
/// groups spans the contraction dimension `cols` and carries `bits` packed
/// planes, low bit first. Weight matrices are encoded column-wise by
/// passing their transpose (see encode_cols).
struct EncodedMatrix {
    Index rows = 0;
    Index cols = 0;
    int bits = 1;
    std::vector<PackedPlane> planes; // rows * bits, group-major

    const PackedPlane& plane(Index group, int bit) const { return planes[std::size_t(group) * bits + bit]; }

    std::span<const PackedPlane> group(Index g) const {
        return {planes.data() + std::size_t(g) * bits, std::size_t(bits)};
    }
};

/// Quantize each element of `values` to `bits` and pack the resulting sign
/// planes per row.
EncodedMatrix encode_rows(const Eigen::Ref<const Matrix>& values, int bits);

/// Column-wise encoding of a weight matrix (rows of the result are the
/// columns of `values`).
EncodedMatrix encode_cols(const Eigen::Ref<const Matrix>& values, int bits);

/// Pack rows of already-quantized odd integers n with |n| <= 2^bits - 1.
/// Even entries are an integrity error.
EncodedMatrix encode_rows_quantized(const Eigen::Ref<const IntMatrix>& n, int bits);

/// Odd fixed-point integers represented by each element.
IntMatrix integer_rows(const EncodedMatrix& enc);

/// Real values represented by each element: integer_rows / (2^bits - 1).
Matrix decode_rows(const EncodedMatrix& enc);

// ===== multi-branch dot / GEMM =====

/// Integer accumulator of the multi-branch dot product:
/// S = sum_{m,k} 2^(m-1) 2^(k-1) bitdot(c_m, d_k) = sum_n n_x(n) * n_w(n).
/// Branch order is m-outer, k-inner.
std::int64_t mb_dot_raw(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes);

/// Scaled multi-branch dot product S / ((2^M-1)(2^K-1)); equals the dot
/// product of the quantized real values.
Real mb_dot(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes);

/// Integer accumulators of X * W^T over encoded rows: entry (b, o) is
/// mb_dot_raw(group b of x, group o of w). Output rows may be computed
/// concurrently; every entry is accumulated by a single thread, so results
/// are identical for any thread count.
Int64Matrix mb_gemm_raw(const EncodedMatrix& x, const EncodedMatrix& w, int threads = 1);

/// Scaled multi-branch GEMM: mb_gemm_raw / ((2^M-1)(2^K-1)).
Matrix mb_gemm(const EncodedMatrix& x, const EncodedMatrix& w, int threads = 1);

// ===== convolution =====

struct ConvGeometry {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 1;
    int kernel_w = 1;
    int stride = 1;
    int padding = 0;

    Index patch_size() const { return Index(in_channels) * kernel_h * kernel_w; }
    int out_h(int h) const { return (h + 2 * padding - kernel_h) / stride + 1; }
    int out_w(int w) const { return (w + 2 * padding - kernel_w) / stride + 1; }
    void validate(int h, int w) const;
};

/// Unroll conv patches into a (C*kh*kw) x (out_h*out_w) matrix; positions
/// outside the input read `pad_value`.
Matrix im2col(const Tensor3& input, const ConvGeometry& geom, Real pad_value);

/// The quantization level closest to zero; exact zero is not representable,
/// so padded positions take +1/(2^bits - 1) (sign(0) = +1 applied level-wise).
Real zero_padding_value(int bits);

/// Multi-branch convolution: im2col with level-closest-to-zero padding,
/// encode the patches at bits_act, then mb_gemm against the encoded kernels.
/// Integer accumulators, out_channels x (out_h*out_w).
Int64Matrix mb_conv2d_raw(const Tensor3& input, int bits_act, const EncodedMatrix& kernels,
                          const ConvGeometry& geom, int threads = 1);

/// Scaled multi-branch convolution as a feature map.
Tensor3 mb_conv2d(const Tensor3& input, int bits_act, const EncodedMatrix& kernels,
                  const ConvGeometry& geom, int threads = 1);

// ===== {0,1} reference path =====

/// Numerator of the four-term {0,1} product expansion over the common
/// denominator (2^M-1)(2^K-1):
///   4*Sxw - 2*(2^K-1)*Sx - 2*(2^M-1)*Sw + N*(2^M-1)(2^K-1)
/// with Sxw/Sx/Sw popcounts over AND of the {0,1} planes. The packed words
/// of a sign plane double as the {0,1} planes of the level index r.
std::int64_t dot_zero_one_raw(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes);

/// The {0,1}-encoded dot product; equals mb_dot on the same quantized values.
Real dot_zero_one(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes);

// ===== dense reference =====

/// Plain dense GEMM with deterministic row-major sequential accumulation;
/// baseline for oracles and benchmarks.
Matrix gemm_reference(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

} // namespace mbqn
