#pragma once

#include "mbqn/kernels.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mbqn {

// ===== model description =====

enum class LayerKind { FullyConnected, Conv2d };

struct LayerSpec {
    LayerKind kind = LayerKind::FullyConnected;

    // fully connected
    int in_features = 0;
    int out_features = 0;

    // conv2d
    ConvGeometry conv;

    PrecisionConfig precision;
    bool has_bias = false; // full-precision bias added after the output scale

    static LayerSpec fully_connected(int in, int out, PrecisionConfig p, bool bias = false);
    static LayerSpec conv2d(ConvGeometry geom, PrecisionConfig p, bool bias = false);

    /// Fan-out of the stored weight matrix (output neurons / channels).
    Index weight_rows() const;
    /// Fan-in of the stored weight matrix (contraction dimension).
    Index weight_cols() const;

    void validate() const;
};

struct ModelSpec {
    std::string name = "model";
    std::uint32_t version = 1;
    std::vector<Index> input_shape; // [features] or [channels, height, width]
    std::vector<LayerSpec> layers;

    /// Checks per-layer invariants and that consecutive shapes chain
    /// (conv output flattens automatically into a following fc layer).
    void validate() const;

    /// Flattened element count of the model input.
    Index input_size() const;
    /// Flattened element count of the model output.
    Index output_size() const;
};

// ===== model forms =====

/// Full-precision weights (also the latent weights during training).
struct FloatModel {
    ModelSpec spec;
    std::vector<Matrix> weights; // per layer, weight_rows x weight_cols
    std::vector<Vector> biases;  // empty vector when the layer has no bias
};

/// Weights as odd fixed-point integers n with |n| <= 2^K - 1, value n/(2^K-1).
struct QuantizedModel {
    ModelSpec spec;
    std::vector<IntMatrix> weights;
    std::vector<Vector> biases;
};

/// One decomposed layer: K packed weight planes per output neuron plus the
/// power-of-two branch weights and the single final scale.
struct PlanLayer {
    LayerSpec spec;
    EncodedMatrix weight_planes; // weight_rows groups along the fan-in
    Vector bias;
    std::vector<std::int64_t> branch_weights; // M*K entries 2^(m+k-2), m-outer
    Real output_scale = 1;                    // 1 / ((2^M-1)(2^K-1))
};

/// The multi-branch binary execution form of a quantized model.
struct MbnPlan {
    ModelSpec spec;
    std::vector<PlanLayer> layers;
};

// ===== quantization / decomposition =====

struct QuantizeReport {
    std::vector<Real> max_error; // per layer, max |decoded - clipped weight|
};

/// Replace every weight by its K-bit odd-integer quantization. Weights are
/// clipped to [-1,1] first; NaN weights are a domain error.
QuantizedModel quantize_model(const FloatModel& model, QuantizeReport* report = nullptr);

/// Bit-decompose the quantized weights into packed planes. Rejects even
/// integers (corrupt quantized values).
MbnPlan decompose_model(const QuantizedModel& model);

/// Exact inverse of decompose_model.
QuantizedModel recompose_model(const MbnPlan& plan);

// ===== inference =====

/// Run the multi-branch plan on a batch of flattened inputs (one row per
/// sample, input_size() columns). Per layer: limiter, encode at M bits,
/// integer multi-branch GEMM/conv, single final scale, optional bias.
/// Bit-reproducible for any thread count.
Matrix infer(const MbnPlan& plan, const Eigen::Ref<const Matrix>& inputs, int threads = 1);

/// Reference forward pass over the integer numerators of the quantized
/// weights and activations with one final scale per layer; oracle for the
/// bitwise path and bit-identical to it.
Matrix infer_reference(const QuantizedModel& model, const Eigen::Ref<const Matrix>& inputs);

} // namespace mbqn
