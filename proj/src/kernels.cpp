#include "mbqn/kernels.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <stdexcept>
#include <thread>

namespace mbqn {

namespace {

void check_same_length(std::span<const PackedPlane> planes) {
    for (std::size_t i = 1; i < planes.size(); ++i)
        if (planes[i].size() != planes[0].size())
            throw std::invalid_argument("encoded planes have unequal lengths");
}

std::int64_t and_count(const PackedPlane& a, const PackedPlane& b) {
    const auto aw = a.words();
    const auto bw = b.words();
    if (aw.empty())
        return 0;
    std::int64_t count = 0;
    const std::size_t last = aw.size() - 1;
    for (std::size_t i = 0; i < last; ++i)
        count += std::popcount(aw[i] & bw[i]);
    count += std::popcount(aw[last] & bw[last] & tail_mask(a.size()));
    return count;
}

std::int64_t pop_count(const PackedPlane& a) {
    const auto aw = a.words();
    if (aw.empty())
        return 0;
    std::int64_t count = 0;
    const std::size_t last = aw.size() - 1;
    for (std::size_t i = 0; i < last; ++i)
        count += std::popcount(aw[i]);
    count += std::popcount(aw[last] & tail_mask(a.size()));
    return count;
}

// Splits [0, n) into contiguous blocks, one per worker. Each output element
// is written by exactly one worker, so the result does not depend on the
// thread count.
void parallel_rows(Index n, int threads, const std::function<void(Index, Index)>& body) {
    if (threads <= 1 || n < 2) {
        body(0, n);
        return;
    }
    const int workers = int(std::min<Index>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const Index chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const Index begin = Index(t) * chunk;
        const Index end = std::min(n, begin + chunk);
        if (begin >= end)
            break;
        pool.emplace_back(body, begin, end);
    }
    for (auto& th : pool)
        th.join();
}

EncodedMatrix pack_level_indices(const std::vector<int>& levels, Index rows, Index cols, int bits) {
    EncodedMatrix out;
    out.rows = rows;
    out.cols = cols;
    out.bits = bits;
    out.planes.reserve(std::size_t(rows) * bits);
    const std::uint64_t nwords = words_for(std::uint64_t(cols));
    for (Index g = 0; g < rows; ++g) {
        std::vector<std::vector<std::uint64_t>> words(bits, std::vector<std::uint64_t>(nwords, 0));
        for (Index j = 0; j < cols; ++j) {
            const int r = levels[std::size_t(g) * cols + j];
            for (int m = 0; m < bits; ++m)
                if ((r >> m) & 1)
                    words[m][j >> 6] |= std::uint64_t(1) << (j & 63);
        }
        for (int m = 0; m < bits; ++m)
            out.planes.push_back(PackedPlane::from_words(std::move(words[m]), std::uint64_t(cols)));
    }
    return out;
}

} // namespace

EncodedMatrix encode_rows(const Eigen::Ref<const Matrix>& values, int bits) {
    check_bits(bits);
    std::vector<int> levels(std::size_t(values.rows()) * values.cols());
    for (Index g = 0; g < values.rows(); ++g)
        for (Index j = 0; j < values.cols(); ++j)
            levels[std::size_t(g) * values.cols() + j] = quantize_level_index(values(g, j), bits);
    return pack_level_indices(levels, values.rows(), values.cols(), bits);
}

EncodedMatrix encode_cols(const Eigen::Ref<const Matrix>& values, int bits) {
    return encode_rows(values.transpose(), bits);
}

EncodedMatrix encode_rows_quantized(const Eigen::Ref<const IntMatrix>& n, int bits) {
    check_bits(bits);
    const int denom = level_denominator(bits);
    std::vector<int> levels(std::size_t(n.rows()) * n.cols());
    for (Index g = 0; g < n.rows(); ++g)
        for (Index j = 0; j < n.cols(); ++j) {
            const int v = n(g, j);
            if ((v & 1) == 0 || v < -denom || v > denom)
                throw std::invalid_argument("quantized value " + std::to_string(v) +
                                            " is not an odd integer within " + std::to_string(bits) + " bits");
            levels[std::size_t(g) * n.cols() + j] = (v + denom) / 2;
        }
    return pack_level_indices(levels, n.rows(), n.cols(), bits);
}

IntMatrix integer_rows(const EncodedMatrix& enc) {
    const int denom = level_denominator(enc.bits);
    IntMatrix n(enc.rows, enc.cols);
    for (Index g = 0; g < enc.rows; ++g)
        for (Index j = 0; j < enc.cols; ++j) {
            int r = 0;
            for (int m = 0; m < enc.bits; ++m)
                if (enc.plane(g, m).sign_at(std::uint64_t(j)) > 0)
                    r |= 1 << m;
            n(g, j) = 2 * r - denom;
        }
    return n;
}

Matrix decode_rows(const EncodedMatrix& enc) {
    return integer_rows(enc).cast<Real>() / level_denominator(enc.bits);
}

std::int64_t mb_dot_raw(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes) {
    if (x_planes.empty() || w_planes.empty() || x_planes.size() > std::size_t(kMaxBits) ||
        w_planes.size() > std::size_t(kMaxBits))
        throw std::invalid_argument("mb_dot: plane counts must be in [1,8]");
    check_same_length(x_planes);
    check_same_length(w_planes);
    if (x_planes[0].size() != w_planes[0].size())
        throw std::invalid_argument("mb_dot: length mismatch");
    std::int64_t acc = 0;
    for (std::size_t m = 0; m < x_planes.size(); ++m)
        for (std::size_t k = 0; k < w_planes.size(); ++k)
            acc += bitdot(x_planes[m], w_planes[k]) << (m + k);
    return acc;
}

Real mb_dot(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes) {
    const Real scale = Real(level_denominator(int(x_planes.size()))) * level_denominator(int(w_planes.size()));
    return Real(mb_dot_raw(x_planes, w_planes)) / scale;
}

Int64Matrix mb_gemm_raw(const EncodedMatrix& x, const EncodedMatrix& w, int threads) {
    if (x.cols != w.cols)
        throw std::invalid_argument("mb_gemm: contraction dimensions differ (" + std::to_string(x.cols) +
                                    " vs " + std::to_string(w.cols) + ")");
    Int64Matrix out(x.rows, w.rows);
    parallel_rows(x.rows, threads, [&](Index begin, Index end) {
        for (Index b = begin; b < end; ++b)
            for (Index o = 0; o < w.rows; ++o)
                out(b, o) = mb_dot_raw(x.group(b), w.group(o));
    });
    return out;
}

Matrix mb_gemm(const EncodedMatrix& x, const EncodedMatrix& w, int threads) {
    const Real scale = Real(level_denominator(x.bits)) * level_denominator(w.bits);
    return mb_gemm_raw(x, w, threads).cast<Real>() / scale;
}

void ConvGeometry::validate(int h, int w) const {
    if (in_channels <= 0 || out_channels <= 0 || kernel_h <= 0 || kernel_w <= 0 || stride <= 0 || padding < 0)
        throw std::invalid_argument("conv2d: non-positive geometry");
    if (kernel_h > h + 2 * padding || kernel_w > w + 2 * padding)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
}

Matrix im2col(const Tensor3& input, const ConvGeometry& geom, Real pad_value) {
    geom.validate(input.height, input.width);
    if (input.channels != geom.in_channels)
        throw std::invalid_argument("im2col: channel count mismatch");
    const int oh = geom.out_h(input.height);
    const int ow = geom.out_w(input.width);
    Matrix patches(geom.patch_size(), Index(oh) * ow);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const Index col = Index(oy) * ow + ox;
            Index row = 0;
            for (int c = 0; c < geom.in_channels; ++c)
                for (int ky = 0; ky < geom.kernel_h; ++ky)
                    for (int kx = 0; kx < geom.kernel_w; ++kx, ++row) {
                        const int y = oy * geom.stride + ky - geom.padding;
                        const int x = ox * geom.stride + kx - geom.padding;
                        const bool inside = y >= 0 && y < input.height && x >= 0 && x < input.width;
                        patches(row, col) = inside ? input.at(c, y, x) : pad_value;
                    }
        }
    return patches;
}

Real zero_padding_value(int bits) {
    return Real(1) / level_denominator(bits);
}

Int64Matrix mb_conv2d_raw(const Tensor3& input, int bits_act, const EncodedMatrix& kernels,
                          const ConvGeometry& geom, int threads) {
    if (kernels.rows != geom.out_channels || kernels.cols != geom.patch_size())
        throw std::invalid_argument("mb_conv2d: kernel tensor does not match geometry");
    const Matrix patches = im2col(input, geom, zero_padding_value(bits_act));
    const EncodedMatrix enc_patches = encode_cols(patches, bits_act);
    return mb_gemm_raw(kernels, enc_patches, threads);
}

Tensor3 mb_conv2d(const Tensor3& input, int bits_act, const EncodedMatrix& kernels,
                  const ConvGeometry& geom, int threads) {
    const Int64Matrix raw = mb_conv2d_raw(input, bits_act, kernels, geom, threads);
    const Real scale = Real(level_denominator(bits_act)) * level_denominator(kernels.bits);
    Tensor3 out(geom.out_channels, geom.out_h(input.height), geom.out_w(input.width));
    for (int c = 0; c < out.channels; ++c)
        for (Index p = 0; p < Index(out.height) * out.width; ++p)
            out.data[Index(c) * out.height * out.width + p] = Real(raw(c, p)) / scale;
    return out;
}

std::int64_t dot_zero_one_raw(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes) {
    if (x_planes.empty() || w_planes.empty() || x_planes.size() > std::size_t(kMaxBits) ||
        w_planes.size() > std::size_t(kMaxBits))
        throw std::invalid_argument("dot_zero_one: plane counts must be in [1,8]");
    check_same_length(x_planes);
    check_same_length(w_planes);
    if (x_planes[0].size() != w_planes[0].size())
        throw std::invalid_argument("dot_zero_one: length mismatch");
    const std::int64_t n = std::int64_t(x_planes[0].size());
    const std::int64_t denom_x = level_denominator(int(x_planes.size()));
    const std::int64_t denom_w = level_denominator(int(w_planes.size()));

    std::int64_t cross = 0;
    for (std::size_t m = 0; m < x_planes.size(); ++m)
        for (std::size_t k = 0; k < w_planes.size(); ++k)
            cross += and_count(x_planes[m], w_planes[k]) << (m + k + 2); // 4 * 2^(m-1) 2^(k-1)
    std::int64_t sum_x = 0;
    for (std::size_t m = 0; m < x_planes.size(); ++m)
        sum_x += pop_count(x_planes[m]) << (m + 1); // 2 * 2^(m-1)
    std::int64_t sum_w = 0;
    for (std::size_t k = 0; k < w_planes.size(); ++k)
        sum_w += pop_count(w_planes[k]) << (k + 1);
    return cross - denom_w * sum_x - denom_x * sum_w + n * denom_x * denom_w;
}

Real dot_zero_one(std::span<const PackedPlane> x_planes, std::span<const PackedPlane> w_planes) {
    const Real scale = Real(level_denominator(int(x_planes.size()))) * level_denominator(int(w_planes.size()));
    return Real(dot_zero_one_raw(x_planes, w_planes)) / scale;
}

Matrix gemm_reference(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("gemm_reference: inner dimensions differ");
    Matrix out = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            Real acc = 0;
            for (Index k = 0; k < a.cols(); ++k)
                acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

} // namespace mbqn
