#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbqn/network.hpp"

#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace mbqn;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, Real span = 1.0) {
    Matrix out(rows, cols);
    for (Index i = 0; i < out.size(); ++i)
        out.reshaped()[i] = (double(rng() >> 11) * 0x1.0p-52 - 1) * span;
    return out;
}

FloatModel random_mlp3(std::mt19937_64& rng, int bits_act, int bits_weight, Limiter limiter) {
    const PrecisionConfig p{bits_act, bits_weight, limiter};
    FloatModel net;
    net.spec.input_shape = {6};
    net.spec.layers = {LayerSpec::fully_connected(6, 9, p), LayerSpec::fully_connected(9, 7, p),
                       LayerSpec::fully_connected(7, 4, p)};
    for (const LayerSpec& layer : net.spec.layers) {
        net.weights.push_back(random_matrix(rng, layer.weight_rows(), layer.weight_cols()));
        net.biases.emplace_back();
    }
    return net;
}

} // namespace

TEST_CASE("one-bit quantization is the sign binarizer") {
    FloatModel net;
    net.spec.input_shape = {3};
    net.spec.layers = {LayerSpec::fully_connected(3, 2, PrecisionConfig{1, 1, Limiter::HTanh})};
    Matrix w(2, 3);
    w << 0.4, -0.2, 0.0, -1.7, 0.9, -0.5;
    net.weights = {w};
    net.biases = {Vector{}};
    const QuantizedModel q = quantize_model(net);
    IntMatrix expected(2, 3);
    expected << 1, -1, 1, -1, 1, -1; // sign with sign(0) = +1, clipped first
    CHECK(q.weights[0] == expected);
}

TEST_CASE("quantization error stays within half a level") {
    std::mt19937_64 rng(41);
    FloatModel net = random_mlp3(rng, 2, 2, Limiter::HTanh);
    QuantizeReport report;
    const QuantizedModel q = quantize_model(net, &report);
    REQUIRE(report.max_error.size() == 3);
    for (Real err : report.max_error) {
        CHECK(err >= 0);
        CHECK(err <= 1.0 / 3 + 1e-12);
    }
    for (std::size_t l = 0; l < q.weights.size(); ++l)
        for (Index i = 0; i < q.weights[l].size(); ++i) {
            const int n = q.weights[l].reshaped()[i];
            CHECK(n % 2 != 0);
            CHECK(std::abs(n) <= 3);
            CHECK(n == oracle::quantize(net.weights[l].reshaped()[i], 2));
        }
}

TEST_CASE("NaN weights are rejected") {
    FloatModel net;
    net.spec.input_shape = {2};
    net.spec.layers = {LayerSpec::fully_connected(2, 1, PrecisionConfig{2, 2, Limiter::HTanh})};
    Matrix w(1, 2);
    w << 0.5, std::numeric_limits<Real>::quiet_NaN();
    net.weights = {w};
    net.biases = {Vector{}};
    CHECK_THROWS_AS(quantize_model(net), std::domain_error);
}

TEST_CASE("decompose and recompose are inverses") {
    std::mt19937_64 rng(43);
    for (int bits : {1, 2, 3, 5, 8}) {
        FloatModel net = random_mlp3(rng, 2, bits, Limiter::HTanh);
        const QuantizedModel q = quantize_model(net);
        const MbnPlan plan = decompose_model(q);
        const QuantizedModel back = recompose_model(plan);
        REQUIRE(back.weights.size() == q.weights.size());
        for (std::size_t l = 0; l < q.weights.size(); ++l) CHECK(back.weights[l] == q.weights[l]);
    }
}

TEST_CASE("plan carries power-of-two branch weights and the single scale") {
    std::mt19937_64 rng(47);
    FloatModel net = random_mlp3(rng, 2, 2, Limiter::HTanh);
    const MbnPlan plan = decompose_model(quantize_model(net));
    REQUIRE(plan.layers.size() == 3);
    const PlanLayer& layer = plan.layers[0];
    CHECK(layer.branch_weights == std::vector<std::int64_t>{1, 2, 2, 4}); // m-outer 2^(m+k)
    CHECK(layer.output_scale == doctest::Approx(1.0 / 9).epsilon(1e-15));
    CHECK(layer.weight_planes.bits == 2);
    CHECK(layer.weight_planes.rows == 9);
}

TEST_CASE("bitwise inference matches the float reference on fc stacks") {
    std::mt19937_64 rng(53);
    for (const auto& [ma, kw] : std::vector<std::pair<int, int>>{{1, 1}, {2, 2}, {3, 5}, {8, 8}}) {
        for (Limiter limiter : {Limiter::HTanh, Limiter::Tanh}) {
            FloatModel net = random_mlp3(rng, ma, kw, limiter);
            const QuantizedModel q = quantize_model(net);
            const MbnPlan plan = decompose_model(q);
            const Matrix inputs = random_matrix(rng, 5, 6, 1.4); // exercise the limiter
            const Matrix got = infer(plan, inputs, 3);
            const Matrix want = infer_reference(q, inputs);
            REQUIRE(got.rows() == want.rows());
            REQUIRE(got.cols() == want.cols());
            for (Index i = 0; i < got.size(); ++i)
                REQUIRE(got.reshaped()[i] == doctest::Approx(want.reshaped()[i]).epsilon(1e-10));
        }
    }
}

TEST_CASE("bitwise inference matches the float reference on a conv net") {
    std::mt19937_64 rng(59);
    const PrecisionConfig p{2, 2, Limiter::HTanh};
    ConvGeometry geom{.in_channels = 2, .out_channels = 3, .kernel_h = 3, .kernel_w = 3,
                      .stride = 1, .padding = 1};
    FloatModel net;
    net.spec.input_shape = {2, 5, 5};
    net.spec.layers = {LayerSpec::conv2d(geom, p, true),
                       LayerSpec::fully_connected(3 * 5 * 5, 4, p, true)};
    net.weights = {random_matrix(rng, 3, geom.patch_size()), random_matrix(rng, 4, 75)};
    net.biases = {random_matrix(rng, 3, 1), random_matrix(rng, 4, 1)};
    net.spec.validate();

    const QuantizedModel q = quantize_model(net);
    const MbnPlan plan = decompose_model(q);
    const Matrix inputs = random_matrix(rng, 3, 50, 1.2);
    const Matrix got = infer(plan, inputs, 2);
    const Matrix want = infer_reference(q, inputs);
    REQUIRE(got.rows() == 3);
    REQUIRE(got.cols() == 4);
    for (Index i = 0; i < got.size(); ++i)
        REQUIRE(got.reshaped()[i] == doctest::Approx(want.reshaped()[i]).epsilon(1e-10));
}

TEST_CASE("bias shifts the output after the scale") {
    const PrecisionConfig p{2, 2, Limiter::HTanh};
    FloatModel net;
    net.spec.input_shape = {2};
    net.spec.layers = {LayerSpec::fully_connected(2, 1, p, true)};
    Matrix w(1, 2);
    w << 1.0, 1.0;
    net.weights = {w};
    Vector b(1);
    b << 0.25;
    net.biases = {b};
    const MbnPlan plan = decompose_model(quantize_model(net));
    Matrix input(1, 2);
    input << 1.0, 1.0;
    const Matrix out = infer(plan, input);
    CHECK(out(0, 0) == doctest::Approx(2.0 + 0.25).epsilon(1e-12));
}

TEST_CASE("one-bit all-ones layer counts its inputs") {
    const Index n = 37;
    const PrecisionConfig p{1, 1, Limiter::HTanh};
    FloatModel net;
    net.spec.input_shape = {n};
    net.spec.layers = {LayerSpec::fully_connected(int(n), int(n), p)};
    net.weights = {Matrix::Ones(n, n)};
    net.biases = {Vector{}};
    const MbnPlan plan = decompose_model(quantize_model(net));
    const Matrix out = infer(plan, Matrix::Ones(2, n));
    for (Index i = 0; i < out.size(); ++i) CHECK(out.reshaped()[i] == Real(n));
}

TEST_CASE("a zero-layer model is the identity") {
    std::mt19937_64 rng(67);
    FloatModel net;
    net.spec.input_shape = {5};
    net.spec.validate();
    const MbnPlan plan = decompose_model(quantize_model(net));
    CHECK(plan.layers.empty());
    const Matrix inputs = random_matrix(rng, 4, 5, 2.0);
    const Matrix out = infer(plan, inputs);
    CHECK(out == inputs);
}

TEST_CASE("spec validation catches broken chains") {
    const PrecisionConfig p{2, 2, Limiter::HTanh};
    ModelSpec spec;
    spec.input_shape = {4};
    spec.layers = {LayerSpec::fully_connected(4, 3, p), LayerSpec::fully_connected(5, 2, p)};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    ModelSpec degenerate;
    degenerate.input_shape = {4};
    degenerate.layers = {LayerSpec::fully_connected(4, 3, PrecisionConfig{1, 1, Limiter::HReLU})};
    CHECK_THROWS_AS(degenerate.validate(), std::invalid_argument);
}

TEST_CASE("inference validates the batch width") {
    std::mt19937_64 rng(61);
    FloatModel net = random_mlp3(rng, 2, 2, Limiter::HTanh);
    const MbnPlan plan = decompose_model(quantize_model(net));
    const Matrix bad = random_matrix(rng, 2, 5);
    CHECK_THROWS_AS(infer(plan, bad), std::invalid_argument);
}
