#include "mbqn/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mbqn {

namespace {

// sign(0) := +1, the tie-break used everywhere in the codec.
int sign_plus(Real v) { return v >= 0 ? +1 : -1; }

} // namespace

std::string limiter_name(Limiter f) {
    switch (f) {
    case Limiter::HTanh: return "htanh";
    case Limiter::HReLU: return "hrelu";
    case Limiter::Tanh: return "tanh";
    case Limiter::Sigmoid: return "sigmoid";
    }
    throw std::invalid_argument("limiter_name: unknown limiter");
}

Limiter limiter_from_name(std::string_view name) {
    if (name == "htanh") return Limiter::HTanh;
    if (name == "hrelu") return Limiter::HReLU;
    if (name == "tanh") return Limiter::Tanh;
    if (name == "sigmoid") return Limiter::Sigmoid;
    throw std::invalid_argument("unknown limiter name: " + std::string(name));
}

Real limit(Real x, Limiter f) {
    if (std::isnan(x))
        throw std::domain_error("limit: NaN input");
    switch (f) {
    case Limiter::HTanh: return std::clamp(x, Real(-1), Real(1));
    case Limiter::HReLU: return std::clamp(x, Real(0), Real(1));
    case Limiter::Tanh: return std::tanh(x);
    case Limiter::Sigmoid: return Real(1) / (Real(1) + std::exp(-x));
    }
    throw std::invalid_argument("limit: unknown limiter");
}

Real limiter_grad(Real x, Limiter f) {
    if (std::isnan(x))
        throw std::domain_error("limiter_grad: NaN input");
    switch (f) {
    case Limiter::HTanh: return (x >= -1 && x <= 1) ? Real(1) : Real(0);
    case Limiter::HReLU: return (x >= 0 && x <= 1) ? Real(1) : Real(0);
    case Limiter::Tanh: {
        const Real t = std::tanh(x);
        return 1 - t * t;
    }
    case Limiter::Sigmoid: {
        const Real s = Real(1) / (Real(1) + std::exp(-x));
        return s * (1 - s);
    }
    }
    throw std::invalid_argument("limiter_grad: unknown limiter");
}

void check_bits(int bits) {
    if (bits < kMinBits || bits > kMaxBits)
        throw std::invalid_argument("bit count must be in [1,8], got " + std::to_string(bits));
}

void PrecisionConfig::validate() const {
    check_bits(bits_act);
    check_bits(bits_weight);
    if (bits_act == 1 && limiter == Limiter::HReLU)
        throw std::invalid_argument(
            "1-bit activations with hrelu collapse every activation to +1; use htanh");
}

int quantize_level_index(Real x, int bits) {
    check_bits(bits);
    if (std::isnan(x))
        throw std::domain_error("quantize: NaN input");
    const Real xc = std::clamp(x, Real(-1), Real(1));
    const int denom = level_denominator(bits);
    // llround rounds half away from zero; the argument is non-negative here.
    const long long r = std::llround(Real(denom) * (xc + 1) / 2);
    return int(std::clamp(r, 0LL, (long long)denom));
}

int quantize_linear(Real x, int bits) {
    return 2 * quantize_level_index(x, bits) - level_denominator(bits);
}

Real quantize_value(Real x, int bits) {
    return Real(quantize_linear(x, bits)) / level_denominator(bits);
}

std::vector<int> encode_bits(Real x, int bits) {
    const int r = quantize_level_index(x, bits);
    std::vector<int> signs(bits);
    for (int m = 0; m < bits; ++m)
        signs[m] = ((r >> m) & 1) ? +1 : -1;
    return signs;
}

std::pair<int, int> encode_trig2(Real x) {
    constexpr Real pi = std::numbers::pi_v<Real>;
    const int low = sign_plus(-std::sin(Real(1.5) * pi * x));
    const int high = sign_plus(std::sin(Real(0.75) * pi * x));
    return {low, high};
}

int signs_to_int(std::span<const int> signs) {
    if (signs.empty() || signs.size() > std::size_t(kMaxBits))
        throw std::invalid_argument("signs_to_int: need 1..8 planes");
    int n = 0;
    for (std::size_t m = 0; m < signs.size(); ++m) {
        if (signs[m] != 1 && signs[m] != -1)
            throw std::invalid_argument("signs_to_int: element is not -1 or +1");
        n += (1 << m) * signs[m];
    }
    return n;
}

Real decode_bits(std::span<const int> signs) {
    return Real(signs_to_int(signs)) / level_denominator(int(signs.size()));
}

std::vector<int> encode_zero_one(unsigned x, int bits) {
    check_bits(bits);
    if (x > unsigned(level_denominator(bits)))
        throw std::out_of_range("encode_zero_one: value does not fit in " + std::to_string(bits) + " bits");
    std::vector<int> planes(bits);
    for (int m = 0; m < bits; ++m)
        planes[m] = int((x >> m) & 1u);
    return planes;
}

} // namespace mbqn
