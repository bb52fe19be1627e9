#include "mbqn/bitplane.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mbqn {

std::uint64_t tail_mask(std::uint64_t length) {
    const std::uint64_t rem = length & 63;
    return rem == 0 ? ~std::uint64_t(0) : (std::uint64_t(1) << rem) - 1;
}

PackedPlane PackedPlane::from_words(std::vector<std::uint64_t> words, std::uint64_t length) {
    if (words.size() != words_for(length))
        throw std::invalid_argument("PackedPlane: word count does not match length");
    if (length > 0 && (words.back() & ~tail_mask(length)) != 0)
        throw std::invalid_argument("PackedPlane: non-zero padding bits");
    PackedPlane p;
    p.words_ = std::move(words);
    p.length_ = length;
    return p;
}

PackedPlane pack(std::span<const int> signs) {
    std::vector<std::uint64_t> words(words_for(signs.size()), 0);
    for (std::size_t i = 0; i < signs.size(); ++i) {
        const int s = signs[i];
        if (s != 1 && s != -1)
            throw std::invalid_argument("pack: element is not -1 or +1");
        if (s == 1)
            words[i >> 6] |= std::uint64_t(1) << (i & 63);
    }
    return PackedPlane::from_words(std::move(words), signs.size());
}

std::vector<int> unpack(const PackedPlane& plane) {
    std::vector<int> signs(plane.size());
    for (std::uint64_t i = 0; i < plane.size(); ++i)
        signs[i] = plane.sign_at(i);
    return signs;
}

std::int64_t bitdot(const PackedPlane& a, const PackedPlane& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("bitdot: length mismatch");
    const std::uint64_t n = a.size();
    if (n == 0)
        return 0;
    const auto aw = a.words();
    const auto bw = b.words();
    std::int64_t mismatches = 0;
    const std::size_t last = aw.size() - 1;
    for (std::size_t i = 0; i < last; ++i)
        mismatches += std::popcount(aw[i] ^ bw[i]);
    mismatches += std::popcount((aw[last] ^ bw[last]) & tail_mask(n));
    return std::int64_t(n) - 2 * mismatches;
}

void write_plane(std::ostream& out, const PackedPlane& plane) {
    const std::uint64_t len = plane.size();
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
    for (std::uint64_t w : plane.words()) {
        for (int i = 0; i < 8; ++i)
            buf[i] = static_cast<unsigned char>(w >> (8 * i));
        out.write(reinterpret_cast<const char*>(buf), 8);
    }
}

PackedPlane read_plane(std::istream& in) {
    auto read_u64 = [&in]() {
        unsigned char buf[8];
        if (!in.read(reinterpret_cast<char*>(buf), 8))
            throw std::runtime_error("read_plane: truncated input");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(buf[i]) << (8 * i);
        return v;
    };
    const std::uint64_t len = read_u64();
    std::vector<std::uint64_t> words(words_for(len));
    for (auto& w : words)
        w = read_u64();
    return PackedPlane::from_words(std::move(words), len);
}

} // namespace mbqn
