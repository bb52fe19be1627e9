#include "mbqn/bench.hpp"

#include "mbqn/bitplane.hpp"
#include "mbqn/codec.hpp"
#include "mbqn/kernels.hpp"
#include "mbqn/model_io.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <random>
#include <stdexcept>

namespace mbqn {
namespace {

using Clock = std::chrono::steady_clock;

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm parts{};
    gmtime_r(&now, &parts);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &parts);
    return buffer;
}

template <typename Fn>
BenchResult time_kernel(std::string kernel, long long n, int repetitions, Fn&& body) {
    BenchResult result;
    result.kernel = std::move(kernel);
    result.n = n;
    result.repetitions = repetitions;
    result.checksum = body(); // warmup, and the checksum the report keeps
    result.best_ns = -1;
    for (int rep = 0; rep < repetitions; ++rep) {
        const auto start = Clock::now();
        const unsigned long long check = body();
        const auto stop = Clock::now();
        if (check != result.checksum) throw std::runtime_error("benchmark result drifted between runs");
        const long long ns = std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count();
        if (result.best_ns < 0 || ns < result.best_ns) result.best_ns = ns;
    }
    if (result.best_ns < 1) result.best_ns = 1;
    result.ops_per_second = double(n) / (double(result.best_ns) * 1e-9);
    return result;
}

unsigned long long checksum_bytes(const void* data, std::size_t size) {
    return fnv1a64({static_cast<const unsigned char*>(data), size});
}

} // namespace

const BenchResult* BenchReport::find(const std::string& kernel) const {
    for (const BenchResult& result : results)
        if (result.kernel == kernel) return &result;
    return nullptr;
}

const BenchResult* BenchReport::find(const std::string& kernel, int bits) const {
    for (const BenchResult& result : results)
        if (result.kernel == kernel && result.bits_x == bits && result.bits_w == bits) return &result;
    return nullptr;
}

double BenchReport::bitdot_speedup() const {
    const BenchResult* base = nullptr;
    const BenchResult* packed = nullptr;
    for (const BenchResult& result : results) {
        if (result.kernel == "float_dot" && (!base || result.n > base->n)) base = &result;
        if (result.kernel == "bitdot" && (!packed || result.n > packed->n)) packed = &result;
    }
    if (!base || !packed || base->n != packed->n || packed->best_ns == 0) return 0;
    return double(base->best_ns) / double(packed->best_ns);
}

double BenchReport::gemm_speedup(int bits) const {
    const BenchResult* base = find("gemm_reference", bits);
    const BenchResult* packed = find("mb_gemm", bits);
    if (!base || !packed || packed->best_ns == 0) return 0;
    return double(base->best_ns) / double(packed->best_ns);
}

BenchReport run_bench(const BenchOptions& options) {
    if (options.repetitions < 3) throw std::invalid_argument("benchmark needs at least 3 repetitions");
    if (options.dot_lengths.empty() && options.gemm_bits.empty())
        throw std::invalid_argument("nothing to benchmark");
    for (long long len : options.dot_lengths)
        if (len < 1) throw std::invalid_argument("dot length must be positive");
    for (int bits : options.gemm_bits) check_bits(bits);
    if (options.gemm_rows < 1 || options.gemm_cols < 1 || options.gemm_inner < 1)
        throw std::invalid_argument("gemm extents must be positive");

    BenchReport report;
    report.threads = options.threads;
    report.repetitions = options.repetitions;
    report.timestamp = utc_timestamp();
    std::mt19937_64 rng(options.seed);

    for (long long dot_length : options.dot_lengths) {
        const std::size_t len = std::size_t(dot_length);
        std::vector<int> sa(len), sb(len);
        std::vector<double> fa(len), fb(len);
        for (std::size_t i = 0; i < len; ++i) {
            sa[i] = (rng() & 1) ? 1 : -1;
            sb[i] = (rng() & 1) ? 1 : -1;
            fa[i] = sa[i];
            fb[i] = sb[i];
        }
        const PackedPlane pa = pack(sa);
        const PackedPlane pb = pack(sb);

        report.results.push_back(time_kernel("float_dot", dot_length, options.repetitions, [&] {
            double acc = 0; // single dependency chain, kept scalar on purpose
            for (std::size_t i = 0; i < len; ++i) acc += fa[i] * fb[i];
            return checksum_bytes(&acc, sizeof(acc));
        }));
        report.results.push_back(time_kernel("bitdot", dot_length, options.repetitions, [&] {
            const double value = double(bitdot(pa, pb));
            return checksum_bytes(&value, sizeof(value));
        }));

        // sanity: both paths computed the same dot product
        double acc = 0;
        for (std::size_t i = 0; i < len; ++i) acc += fa[i] * fb[i];
        if (std::llround(acc) != bitdot(pa, pb)) throw std::runtime_error("benchmark kernels disagree");
    }

    const long long gemm_ops = 2LL * options.gemm_rows * options.gemm_cols * options.gemm_inner;
    for (int bits : options.gemm_bits) {
        Matrix x(options.gemm_rows, options.gemm_inner), w(options.gemm_cols, options.gemm_inner);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x.reshaped()[i] = double(rng() >> 11) * 0x1.0p-52 - 1;
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.reshaped()[i] = double(rng() >> 11) * 0x1.0p-52 - 1;
        const EncodedMatrix ex = encode_rows(x, bits);
        const EncodedMatrix ew = encode_rows(w, bits);

        BenchResult gemm = time_kernel("mb_gemm", gemm_ops, options.repetitions, [&] {
            const Matrix out = mb_gemm(ex, ew, options.threads);
            return checksum_bytes(out.data(), std::size_t(out.size()) * sizeof(Real));
        });
        gemm.bits_x = bits;
        gemm.bits_w = bits;
        report.results.push_back(gemm);

        // the reference contracts the integer numerators and divides once,
        // which lands on the identical doubles the bit-plane path produces
        const Matrix xn = integer_rows(ex).cast<Real>();
        const Matrix wnt = integer_rows(ew).cast<Real>().transpose();
        const Real scale = Real(level_denominator(bits)) * level_denominator(bits);
        BenchResult reference = time_kernel("gemm_reference", gemm_ops, options.repetitions, [&] {
            const Matrix out = gemm_reference(xn, wnt) / scale;
            return checksum_bytes(out.data(), std::size_t(out.size()) * sizeof(Real));
        });
        reference.bits_x = bits;
        reference.bits_w = bits;
        if (reference.checksum != gemm.checksum)
            throw std::runtime_error("benchmark kernels disagree at " + std::to_string(bits) + " bits");
        report.results.push_back(reference);
    }
    return report;
}

nlohmann::json bench_report_json(const BenchReport& report) {
    nlohmann::json results = nlohmann::json::array();
    for (const BenchResult& result : report.results) {
        char hex[24];
        std::snprintf(hex, sizeof(hex), "%016llx", result.checksum);
        results.push_back({{"kernel", result.kernel},
                           {"bits_x", result.bits_x},
                           {"bits_w", result.bits_w},
                           {"n", result.n},
                           {"repetitions", result.repetitions},
                           {"best_ns", result.best_ns},
                           {"ops_per_second", result.ops_per_second},
                           {"checksum", hex}});
    }
    nlohmann::json gemm_speedups = nlohmann::json::array();
    for (const BenchResult& result : report.results)
        if (result.kernel == "mb_gemm")
            gemm_speedups.push_back({{"bits", result.bits_x},
                                     {"ratio", report.gemm_speedup(result.bits_x)}});
    return {{"env", {{"threads", report.threads},
                     {"repetitions", report.repetitions},
                     {"timestamp", report.timestamp}}},
            {"results", results},
            {"bitdot_speedup", report.bitdot_speedup()},
            {"gemm_speedups", gemm_speedups}};
}

} // namespace mbqn
