#include "mbqn/datasets.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mbqn {

namespace {

// Box-Muller on top of the engine's uniform output; std::normal_distribution
// is implementation-defined, this is not.
class GaussianSource {
public:
    explicit GaussianSource(unsigned long long seed) : rng_(seed) {}

    Real next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const Real u1 = uniform01();
        const Real u2 = uniform01();
        const Real radius = std::sqrt(Real(-2) * std::log(u1));
        const Real angle = 2 * std::numbers::pi_v<Real> * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    Real uniform01() {
        // (0,1]: never zero, so the log above is finite.
        return (Real(rng_() >> 11) + 1) * 0x1.0p-53;
    }

    std::mt19937_64 rng_;
    Real spare_ = 0;
    bool have_spare_ = false;
};

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw std::runtime_error("truncated IDX file '" + path + "'");
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) | (std::uint32_t(buf[2]) << 8) |
           std::uint32_t(buf[3]);
}

} // namespace

Dataset make_blobs(int per_class, unsigned long long seed, Real stddev) {
    if (per_class <= 0)
        throw std::invalid_argument("make_blobs: per_class must be positive");
    constexpr int classes = 3;
    constexpr Real radius = 0.7;
    GaussianSource gauss(seed);

    Dataset d;
    d.classes = classes;
    d.inputs.resize(Index(per_class) * classes, 2);
    d.labels.resize(std::size_t(per_class) * classes);

    // Interleave classes so sequential mini-batches stay mixed.
    for (int s = 0; s < per_class; ++s)
        for (int c = 0; c < classes; ++c) {
            const Index row = Index(s) * classes + c;
            const Real angle = std::numbers::pi_v<Real> * (Real(0.5) + Real(2 * c) / classes);
            d.inputs(row, 0) = radius * std::cos(angle) + stddev * gauss.next();
            d.inputs(row, 1) = radius * std::sin(angle) + stddev * gauss.next();
            d.labels[std::size_t(row)] = c;
        }
    return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img)
        throw std::runtime_error("cannot open IDX image file '" + images_path + "'");
    if (read_be32(img, images_path) != 0x00000803)
        throw std::runtime_error("'" + images_path + "' is not an IDX image file");
    const std::uint32_t count = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab)
        throw std::runtime_error("cannot open IDX label file '" + labels_path + "'");
    if (read_be32(lab, labels_path) != 0x00000801)
        throw std::runtime_error("'" + labels_path + "' is not an IDX label file");
    if (read_be32(lab, labels_path) != count)
        throw std::runtime_error("IDX image/label counts differ");

    Dataset d;
    d.inputs.resize(Index(count), Index(rows) * cols);
    d.labels.resize(count);
    std::vector<unsigned char> pixel_row(std::size_t(rows) * cols);
    int max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(pixel_row.data()), std::streamsize(pixel_row.size())))
            throw std::runtime_error("truncated IDX file '" + images_path + "'");
        for (std::size_t p = 0; p < pixel_row.size(); ++p)
            d.inputs(Index(i), Index(p)) = Real(pixel_row[p]) / Real(127.5) - 1;
        char label;
        if (!lab.get(label))
            throw std::runtime_error("truncated IDX file '" + labels_path + "'");
        d.labels[i] = int(static_cast<unsigned char>(label));
        max_label = std::max(max_label, d.labels[i]);
    }
    d.classes = max_label + 1;
    return d;
}

} // namespace mbqn
