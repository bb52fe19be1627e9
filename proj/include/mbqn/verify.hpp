#pragma once

#include "mbqn/kernels.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mbqn {

struct VerifyOptions {
    bool full = false; // full mode raises every trial count
    unsigned long long seed = 0x5eed;
    int threads = 3;
    // Test hook: lets a caller tamper with freshly encoded planes so the
    // checker itself can be shown to catch seeded faults.
    std::function<std::vector<PackedPlane>(std::vector<PackedPlane>)> tamper_planes;
};

struct SuiteResult {
    std::string name;
    long trials = 0;
    long failures = 0;
    std::string first_failure; // empty when clean
    bool passed() const { return failures == 0; }
};

struct VerifyReport {
    std::vector<SuiteResult> suites;
    bool passed() const;
};

/// Run the built-in consistency suites: codec round trips, trig encoder
/// agreement, bit-plane dot products against scalar integer arithmetic,
/// threaded matrix products, and the {0,1} rewrite of the dot product.
VerifyReport run_verify(const VerifyOptions& options = {});

} // namespace mbqn
