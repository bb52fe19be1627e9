#pragma once

#include "mbqn/types.hpp"

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mbqn {

// ===== range limiters =====

enum class Limiter { HTanh, HReLU, Tanh, Sigmoid };

std::string limiter_name(Limiter f);
Limiter limiter_from_name(std::string_view name);

/// Constrain x to the limiter's range (HTanh -> [-1,1], HReLU -> [0,1],
/// Tanh/Sigmoid per their closed forms). NaN input is a domain error.
Real limit(Real x, Limiter f);

/// Derivative of the limiter (1 inside the linear region of the hard
/// limiters, 0 outside); used by the training backward pass.
Real limiter_grad(Real x, Limiter f);

// ===== precision configuration =====

constexpr int kMinBits = 1;
constexpr int kMaxBits = 8;

/// Per-layer encoding precision: M bits for activations, K bits for weights.
struct PrecisionConfig {
    int bits_act = 1;
    int bits_weight = 1;
    Limiter limiter = Limiter::HTanh;

    /// Bits must lie in [1,8]; 1-bit activations require HTanh, since HReLU
    /// output in [0,1] would encode every activation to +1.
    void validate() const;
};

// ===== linear quantizer =====

void check_bits(int bits);

/// Number of representable levels minus one: the scale denominator 2^bits - 1.
inline int level_denominator(int bits) { return (1 << bits) - 1; }

/// Index of the quantization level for x in [-1,1] (inputs clamped first):
/// r = round((2^bits-1)(x+1)/2) in [0, 2^bits-1], rounding half away from zero.
int quantize_level_index(Real x, int bits);

/// Odd fixed-point integer n = 2r - (2^bits-1) with |n| <= 2^bits-1;
/// the represented value is n / (2^bits-1).
int quantize_linear(Real x, int bits);

/// Value form of the quantizer: quantize_linear(x, bits) / (2^bits-1).
Real quantize_value(Real x, int bits);

// ===== sign-plane encoding =====

/// Encode x to `bits` signs, low bit first, such that
/// sum_i 2^(i-1) c_i = quantize_linear(x, bits).
std::vector<int> encode_bits(Real x, int bits);

/// Closed-form 2-bit encoder (low, high) built from trigonometric
/// comparators; agrees with encode_bits(x, 2) away from the level
/// boundaries {-2/3, 0, 2/3}, where sign(0) := +1 breaks the tie.
std::pair<int, int> encode_trig2(Real x);

/// Odd integer represented by a low-first sign sequence.
int signs_to_int(std::span<const int> signs);

/// Real value represented by a low-first sign sequence: signs_to_int / (2^m-1).
Real decode_bits(std::span<const int> signs);

/// Plain binary decomposition of a non-negative integer into {0,1} bits,
/// low bit first. x must satisfy 0 <= x <= 2^bits - 1.
std::vector<int> encode_zero_one(unsigned x, int bits);

} // namespace mbqn
