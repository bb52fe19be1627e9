#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbqn/datasets.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>

using namespace mbqn;

namespace {

namespace fs = std::filesystem;

void write_be32(std::ostream& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.put(char((v >> (8 * i)) & 0xff));
}

} // namespace

TEST_CASE("blobs are deterministic, bounded and interleaved") {
    const Dataset a = make_blobs(50, 123);
    const Dataset b = make_blobs(50, 123);
    const Dataset c = make_blobs(50, 124);
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.inputs != c.inputs);
    REQUIRE(a.size() == 150);
    CHECK(a.classes == 3);
    CHECK(a.inputs.cols() == 2);
    // class labels cycle sample-major
    CHECK(a.labels[0] == 0);
    CHECK(a.labels[1] == 1);
    CHECK(a.labels[2] == 2);
    CHECK(a.labels[3] == 0);
    // centers sit at radius 0.7; five sigma of 0.12 stays inside [-1.5, 1.5]
    CHECK(a.inputs.cwiseAbs().maxCoeff() < 1.5);
    CHECK_THROWS_AS(make_blobs(0, 1), std::invalid_argument);
}

TEST_CASE("idx pairs load and rescale") {
    const fs::path dir = fs::temp_directory_path() / "mbqn_idx_test";
    fs::create_directories(dir);
    const std::string images = (dir / "img.idx").string();
    const std::string labels = (dir / "lab.idx").string();

    {
        std::ofstream out(images, std::ios::binary);
        write_be32(out, 0x00000803); // images magic
        write_be32(out, 2);          // count
        write_be32(out, 2);          // rows
        write_be32(out, 2);          // cols
        for (unsigned char px : {0, 255, 127, 128, 255, 0, 64, 191}) out.put(char(px));
    }
    {
        std::ofstream out(labels, std::ios::binary);
        write_be32(out, 0x00000801); // labels magic
        write_be32(out, 2);
        out.put(char(1));
        out.put(char(0));
    }

    const Dataset data = load_idx(images, labels);
    REQUIRE(data.size() == 2);
    CHECK(data.inputs.cols() == 4);
    CHECK(data.classes == 2);
    CHECK(data.labels == std::vector<int>{1, 0});
    CHECK(data.inputs(0, 0) == doctest::Approx(-1.0));
    CHECK(data.inputs(0, 1) == doctest::Approx(1.0));
    CHECK(data.inputs(1, 1) == doctest::Approx(-1.0));
    CHECK(data.inputs(0, 2) == doctest::Approx(127.0 / 127.5 - 1.0));

    {
        std::ofstream out(labels, std::ios::binary);
        write_be32(out, 0x00000801);
        write_be32(out, 3); // count disagrees with the images
        out.put(char(0));
        out.put(char(1));
        out.put(char(2));
    }
    CHECK_THROWS_AS(load_idx(images, labels), std::runtime_error);
    fs::remove_all(dir);
}
