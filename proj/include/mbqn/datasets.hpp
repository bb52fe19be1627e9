#pragma once

#include "mbqn/types.hpp"

#include <string>
#include <vector>

namespace mbqn {

struct Dataset {
    Matrix inputs; // samples x features
    std::vector<int> labels;
    int classes = 0;

    Index size() const { return inputs.rows(); }
};

/// Deterministic 2-D Gaussian blobs, three classes centered on a circle of
/// radius 0.7 inside [-1,1]^2. Sampling uses a seeded generator with an
/// explicit Box-Muller transform so the data is identical everywhere.
Dataset make_blobs(int per_class, unsigned long long seed, Real stddev = 0.12);

/// Load an IDX image/label pair (the common digit format). Pixels are
/// scaled from [0,255] to [-1,1]; images are flattened row-major.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

} // namespace mbqn
