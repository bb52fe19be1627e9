#include "mbqn/verify.hpp"

#include "mbqn/codec.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>

namespace mbqn {
namespace {

class Draw {
public:
    explicit Draw(unsigned long long seed) : rng_(seed) {}

    Real uniform(Real lo, Real hi) {
        const Real u = (Real(rng_() >> 11) + Real(0.5)) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    int range(int lo, int hi) { // inclusive
        return lo + int(rng_() % (unsigned long long)(hi - lo + 1));
    }

private:
    std::mt19937_64 rng_;
};

struct SuiteRecorder {
    SuiteResult result;

    explicit SuiteRecorder(std::string name) { result.name = std::move(name); }

    template <typename Fn>
    void trial(Fn&& body) {
        ++result.trials;
        std::ostringstream what;
        if (!body(what)) {
            ++result.failures;
            if (result.first_failure.empty()) result.first_failure = what.str();
        }
    }
};

SuiteResult codec_suite(Draw& draw, long trials) {
    SuiteRecorder suite("codec");
    for (long t = 0; t < trials; ++t) {
        suite.trial([&](std::ostream& what) {
            const int bits = draw.range(kMinBits, kMaxBits);
            const Real x = draw.uniform(-1.5, 1.5);
            const int denom = level_denominator(bits);
            const int n = quantize_linear(x, bits);
            if (n % 2 == 0 || n < -denom || n > denom) {
                what << "quantize_linear(" << x << ", " << bits << ") = " << n;
                return false;
            }
            if (n != 2 * quantize_level_index(x, bits) - denom) {
                what << "level index mismatch at x=" << x << " bits=" << bits;
                return false;
            }
            const std::vector<int> signs = encode_bits(x, bits);
            if (signs_to_int(signs) != n) {
                what << "encode_bits disagrees with quantize_linear at x=" << x << " bits=" << bits;
                return false;
            }
            if (decode_bits(signs) != Real(n) / Real(denom)) {
                what << "decode_bits mismatch at x=" << x << " bits=" << bits;
                return false;
            }
            if (quantize_linear(Real(n) / Real(denom), bits) != n) {
                what << "quantizer is not idempotent at x=" << x << " bits=" << bits;
                return false;
            }
            return true;
        });
    }
    return suite.result;
}

SuiteResult trig_suite(Draw& draw, long trials) {
    SuiteRecorder suite("trig");
    const Real boundaries[] = {-Real(2) / 3, 0, Real(2) / 3};
    long t = 0;
    while (t < trials) {
        Real x = draw.uniform(-1, 1);
        if (t % 4 == 1) x = boundaries[std::size_t(t / 4) % 3] + draw.uniform(-1e-6, 1e-6);
        bool excluded = false;
        for (Real b : boundaries)
            if (std::fabs(x - b) <= 1e-9) excluded = true;
        if (excluded) continue;
        ++t;
        suite.trial([&](std::ostream& what) {
            const auto [low, high] = encode_trig2(x);
            const std::vector<int> general = encode_bits(x, 2);
            if (low != general[0] || high != general[1]) {
                what << "trig encoder disagrees at x=" << x;
                return false;
            }
            return true;
        });
    }
    return suite.result;
}

SuiteResult decompose_suite(Draw& draw, long trials, int max_len, const VerifyOptions& options) {
    SuiteRecorder suite("decompose");
    for (long t = 0; t < trials; ++t) {
        suite.trial([&](std::ostream& what) {
            const int bits_x = draw.range(kMinBits, kMaxBits);
            const int bits_w = draw.range(kMinBits, kMaxBits);
            const int len = draw.range(1, max_len);
            IntMatrix nx(1, len), nw(1, len);
            long long expected = 0;
            for (int i = 0; i < len; ++i) {
                nx(0, i) = quantize_linear(draw.uniform(-1.2, 1.2), bits_x);
                nw(0, i) = quantize_linear(draw.uniform(-1.2, 1.2), bits_w);
                expected += (long long)(nx(0, i)) * nw(0, i);
            }
            EncodedMatrix ex = encode_rows_quantized(nx, bits_x);
            const EncodedMatrix ew = encode_rows_quantized(nw, bits_w);
            if (options.tamper_planes) ex.planes = options.tamper_planes(std::move(ex.planes));
            const long long got = mb_dot_raw(ex.group(0), ew.group(0));
            if (got != expected) {
                what << "mb_dot_raw=" << got << " expected=" << expected << " len=" << len
                     << " bits=(" << bits_x << "," << bits_w << ")";
                return false;
            }
            return true;
        });
    }
    return suite.result;
}

SuiteResult gemm_suite(Draw& draw, long trials, const VerifyOptions& options) {
    SuiteRecorder suite("gemm");
    for (long t = 0; t < trials; ++t) {
        suite.trial([&](std::ostream& what) {
            const int bits_x = draw.range(kMinBits, kMaxBits);
            const int bits_w = draw.range(kMinBits, kMaxBits);
            const int rows = draw.range(1, 16);
            const int cols = draw.range(1, 16);
            const int inner = draw.range(1, 96);
            Matrix x(rows, inner), w(cols, inner);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.reshaped()[i] = draw.uniform(-1, 1);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.reshaped()[i] = draw.uniform(-1, 1);
            const EncodedMatrix ex = encode_rows(x, bits_x);
            const EncodedMatrix ew = encode_rows(w, bits_w);
            const Int64Matrix seq = mb_gemm_raw(ex, ew, 1);
            const Int64Matrix par = mb_gemm_raw(ex, ew, options.threads);
            if (seq != par) {
                what << "threaded product differs from sequential at " << rows << "x" << cols;
                return false;
            }
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) {
                    long long expected = 0;
                    for (int i = 0; i < inner; ++i)
                        expected += (long long)(quantize_linear(x(r, i), bits_x)) *
                                    quantize_linear(w(c, i), bits_w);
                    if (seq(r, c) != expected) {
                        what << "entry (" << r << "," << c << ") = " << seq(r, c)
                             << " expected " << expected;
                        return false;
                    }
                }
            return true;
        });
    }
    return suite.result;
}

SuiteResult zero_one_suite(Draw& draw, long trials) {
    SuiteRecorder suite("zero-one");
    for (long t = 0; t < trials; ++t) {
        suite.trial([&](std::ostream& what) {
            const int bits_x = draw.range(kMinBits, kMaxBits);
            const int bits_w = draw.range(kMinBits, kMaxBits);
            const int len = draw.range(1, 256);
            Matrix x(1, len), w(1, len);
            for (int i = 0; i < len; ++i) {
                x(0, i) = draw.uniform(-1, 1);
                w(0, i) = draw.uniform(-1, 1);
            }
            const EncodedMatrix ex = encode_rows(x, bits_x);
            const EncodedMatrix ew = encode_rows(w, bits_w);
            const long long via_and = dot_zero_one_raw(ex.group(0), ew.group(0));
            const long long via_xnor = mb_dot_raw(ex.group(0), ew.group(0));
            if (via_and != via_xnor) {
                what << "zero-one path=" << via_and << " sign path=" << via_xnor << " len=" << len;
                return false;
            }
            if (std::fabs(dot_zero_one(ex.group(0), ew.group(0)) - mb_dot(ex.group(0), ew.group(0))) > 1e-9) {
                what << "scaled zero-one path drifts at len=" << len;
                return false;
            }
            return true;
        });
    }
    return suite.result;
}

} // namespace

bool VerifyReport::passed() const {
    for (const SuiteResult& suite : suites)
        if (!suite.passed()) return false;
    return !suites.empty();
}

VerifyReport run_verify(const VerifyOptions& options) {
    Draw draw(options.seed);
    const bool full = options.full;
    VerifyReport report;
    report.suites.push_back(codec_suite(draw, full ? 20000 : 2000));
    report.suites.push_back(trig_suite(draw, full ? 1000000 : 50000));
    report.suites.push_back(decompose_suite(draw, full ? 2000 : 300, full ? 1024 : 256, options));
    report.suites.push_back(gemm_suite(draw, full ? 40 : 8, options));
    report.suites.push_back(zero_one_suite(draw, full ? 2000 : 300));
    return report;
}

} // namespace mbqn
