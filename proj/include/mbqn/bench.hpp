#pragma once

#include "mbqn/types.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mbqn {

struct BenchOptions {
    std::vector<long long> dot_lengths = {1LL << 20};
    int gemm_rows = 96;
    int gemm_cols = 96;
    int gemm_inner = 256;
    std::vector<int> gemm_bits = {1, 2, 3, 4, 5, 6, 7, 8}; // M = K per entry
    int repetitions = 5;                                   // best-of-N wall time, minimum 3
    int threads = 1;
    unsigned long long seed = 99;
};

struct BenchResult {
    std::string kernel;
    int bits_x = 1;
    int bits_w = 1;
    long long n = 0; // element count of the problem
    int repetitions = 0;
    long long best_ns = 0;
    double ops_per_second = 0;
    unsigned long long checksum = 0; // guards against dead-code elimination
};

struct BenchReport {
    int threads = 1;
    int repetitions = 0;
    std::string timestamp; // UTC, ISO 8601
    std::vector<BenchResult> results;

    const BenchResult* find(const std::string& kernel) const;
    const BenchResult* find(const std::string& kernel, int bits) const;
    /// float-dot time over bitdot time at the largest measured length;
    /// 0 when either side is missing.
    double bitdot_speedup() const;
    /// scalar reference gemm time over bit-plane gemm time at M = K = bits.
    double gemm_speedup(int bits) const;
};

/// Times the packed dot against a scalar float dot at every requested
/// length, and the bit-plane matrix product against the scalar reference
/// at every requested M = K. Benchmarked and reference outputs must hash
/// identically or the run aborts.
BenchReport run_bench(const BenchOptions& options = {});

nlohmann::json bench_report_json(const BenchReport& report);

} // namespace mbqn
