#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace mbqn {

/// One {-1,+1} bit-plane packed into 64-bit words, little-endian word order:
/// bit i of word j holds element 64*j + i, bit 1 encodes +1 and bit 0 encodes -1.
/// All bits beyond size() in the last word are zero. Immutable after construction.
class PackedPlane {
public:
    PackedPlane() = default;

    /// Takes ownership of words; rejects non-canonical padding.
    static PackedPlane from_words(std::vector<std::uint64_t> words, std::uint64_t length);

    std::uint64_t size() const { return length_; }
    std::span<const std::uint64_t> words() const { return words_; }
    std::uint64_t word_count() const { return words_.size(); }

    int sign_at(std::uint64_t i) const {
        return ((words_[i >> 6] >> (i & 63)) & 1u) ? +1 : -1;
    }

    bool operator==(const PackedPlane&) const = default;

private:
    std::vector<std::uint64_t> words_;
    std::uint64_t length_ = 0;
};

/// Number of 64-bit words needed for n elements.
inline std::uint64_t words_for(std::uint64_t n) { return (n + 63) / 64; }

/// Mask selecting the valid bits of the final word (all ones when length % 64 == 0).
std::uint64_t tail_mask(std::uint64_t length);

PackedPlane pack(std::span<const int> signs);
std::vector<int> unpack(const PackedPlane& plane);

/// Sum of elementwise products of two sign vectors, computed as
/// N - 2*popcount(a XOR b) with the tail word masked. Exact, in [-N, N].
std::int64_t bitdot(const PackedPlane& a, const PackedPlane& b);

/// On-disk layout: length as u64 LE, then ceil(length/64) u64 LE words.
void write_plane(std::ostream& out, const PackedPlane& plane);
PackedPlane read_plane(std::istream& in);

} // namespace mbqn
