#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbqn/bitplane.hpp"

#include "oracles.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>

using namespace mbqn;

TEST_CASE("word bookkeeping") {
    CHECK(words_for(0) == 0);
    CHECK(words_for(1) == 1);
    CHECK(words_for(64) == 1);
    CHECK(words_for(65) == 2);
    CHECK(words_for(128) == 2);
    CHECK(tail_mask(64) == ~0ULL);
    CHECK(tail_mask(1) == 1ULL);
    CHECK(tail_mask(3) == 7ULL);
}

TEST_CASE("pack maps +1 to a set bit") {
    const std::vector<int> signs{1, -1, 1};
    const PackedPlane plane = pack(signs);
    CHECK(plane.size() == 3);
    REQUIRE(plane.words().size() == 1);
    CHECK(plane.words()[0] == 0b101ULL); // worked by hand
    CHECK(plane.sign_at(0) == 1);
    CHECK(plane.sign_at(1) == -1);
    CHECK(plane.sign_at(2) == 1);
    CHECK(unpack(plane) == signs);
}

TEST_CASE("pack rejects values outside {-1,+1}") {
    CHECK_THROWS_AS(pack(std::vector<int>{1, 0, 1}), std::invalid_argument);
    CHECK_THROWS_AS(pack(std::vector<int>{2}), std::invalid_argument);
}

TEST_CASE("bitdot on a hand case") {
    const PackedPlane a = pack(std::vector<int>{1, -1, 1});
    const PackedPlane b = pack(std::vector<int>{1, 1, -1});
    CHECK(bitdot(a, b) == -1); // +1 -1 -1
    CHECK(bitdot(a, a) == 3);
}

TEST_CASE("bitdot requires equal lengths") {
    const PackedPlane a = pack(std::vector<int>{1, -1});
    const PackedPlane b = pack(std::vector<int>{1, -1, 1});
    CHECK_THROWS_AS(bitdot(a, b), std::invalid_argument);
}

TEST_CASE("bitdot matches the naive sign dot across word boundaries") {
    std::mt19937_64 rng(7);
    for (int len : {1, 5, 63, 64, 65, 127, 128, 129, 300, 1024, 1000}) {
        std::vector<int> sa(static_cast<std::size_t>(len)), sb(static_cast<std::size_t>(len));
        for (auto& s : sa) s = (rng() & 1) ? 1 : -1;
        for (auto& s : sb) s = (rng() & 1) ? 1 : -1;
        CAPTURE(len);
        CHECK(bitdot(pack(sa), pack(sb)) == oracle::sign_dot(sa, sb));
    }
}

TEST_CASE("tail bits never leak into the dot") {
    // all-ones planes of off-boundary length; any stray tail bit would shift the result
    for (int len : {1, 62, 63, 65, 66, 130}) {
        const std::vector<int> ones(std::size_t(len), 1);
        const std::vector<int> alt = [&] {
            std::vector<int> v(static_cast<std::size_t>(len));
            for (int i = 0; i < len; ++i) v[std::size_t(i)] = (i % 2) ? -1 : 1;
            return v;
        }();
        CHECK(bitdot(pack(ones), pack(ones)) == len);
        CHECK(bitdot(pack(ones), pack(alt)) == oracle::sign_dot(ones, alt));
    }
}

TEST_CASE("bitdot is symmetric, bounded, and matches the xnor form") {
    std::mt19937_64 rng(13);
    for (int len : {1, 3, 64, 65, 127, 200, 1024}) {
        std::vector<int> sa(static_cast<std::size_t>(len)), sb(static_cast<std::size_t>(len));
        for (auto& s : sa) s = (rng() & 1) ? 1 : -1;
        for (auto& s : sb) s = (rng() & 1) ? 1 : -1;
        const PackedPlane a = pack(sa);
        const PackedPlane b = pack(sb);
        const std::int64_t d = bitdot(a, b);
        CAPTURE(len);
        CHECK(bitdot(b, a) == d);
        CHECK(std::abs(d) <= len);
        CHECK((d - len) % 2 == 0);
        CHECK(bitdot(a, a) == len);

        std::vector<int> flipped = sb;
        for (auto& s : flipped) s = -s;
        CHECK(bitdot(a, pack(flipped)) == -d);

        // the xnor route (matches minus mismatches) lands on the same value
        std::int64_t match = 0;
        for (std::size_t w = 0; w < a.words().size(); ++w) {
            const std::uint64_t mask = (w + 1 == a.words().size()) ? tail_mask(len) : ~0ULL;
            match += std::popcount(~(a.words()[w] ^ b.words()[w]) & mask);
        }
        CHECK(2 * match - len == d);
    }
}

TEST_CASE("from_words validates shape and padding") {
    CHECK_THROWS_AS(PackedPlane::from_words({0, 0}, 64), std::invalid_argument);
    CHECK_THROWS_AS(PackedPlane::from_words({1ULL << 3}, 3), std::invalid_argument); // pad bit set
    const PackedPlane plane = PackedPlane::from_words({0b101ULL}, 3);
    CHECK(plane == pack(std::vector<int>{1, -1, 1}));
}

TEST_CASE("planes round trip through a stream") {
    std::mt19937_64 rng(11);
    std::vector<int> signs(777);
    for (auto& s : signs) s = (rng() & 1) ? 1 : -1;
    const PackedPlane plane = pack(signs);
    std::stringstream buffer;
    write_plane(buffer, plane);
    const PackedPlane back = read_plane(buffer);
    CHECK(back == plane);
    CHECK(unpack(back) == signs);
}

TEST_CASE("empty plane is valid and inert") {
    const PackedPlane plane = pack(std::vector<int>{});
    CHECK(plane.size() == 0);
    CHECK(bitdot(plane, plane) == 0);
}
