#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mbqn {

using Real = double;
using Index = Eigen::Index;

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;
using Int64Matrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Channel-major 3-D feature map; element (c, y, x) at data[(c*height + y)*width + x].
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    Vector data;

    Tensor3() = default;
    Tensor3(int c, int h, int w) : channels(c), height(h), width(w) { data = Vector::Zero(Index(c) * h * w); }

    Index size() const { return Index(channels) * height * width; }

    Real& at(int c, int y, int x) { return data[(Index(c) * height + y) * width + x]; }
    Real at(int c, int y, int x) const { return data[(Index(c) * height + y) * width + x]; }
};

} // namespace mbqn
