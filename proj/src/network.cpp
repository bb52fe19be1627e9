#include "mbqn/network.hpp"

#include <cmath>
#include <stdexcept>

namespace mbqn {

namespace {

std::string layer_tag(std::size_t index) {
    return "layer " + std::to_string(index);
}

void check_weight_shape(const LayerSpec& spec, Index rows, Index cols, std::size_t index) {
    if (rows != spec.weight_rows() || cols != spec.weight_cols())
        throw std::invalid_argument(layer_tag(index) + ": weight shape " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " does not match spec " +
                                    std::to_string(spec.weight_rows()) + "x" +
                                    std::to_string(spec.weight_cols()));
}

} // namespace

LayerSpec LayerSpec::fully_connected(int in, int out, PrecisionConfig p, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::FullyConnected;
    s.in_features = in;
    s.out_features = out;
    s.precision = p;
    s.has_bias = bias;
    return s;
}

LayerSpec LayerSpec::conv2d(ConvGeometry geom, PrecisionConfig p, bool bias) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.conv = geom;
    s.precision = p;
    s.has_bias = bias;
    return s;
}

Index LayerSpec::weight_rows() const {
    return kind == LayerKind::FullyConnected ? out_features : conv.out_channels;
}

Index LayerSpec::weight_cols() const {
    return kind == LayerKind::FullyConnected ? in_features : conv.patch_size();
}

void LayerSpec::validate() const {
    precision.validate();
    if (kind == LayerKind::FullyConnected) {
        if (in_features <= 0 || out_features <= 0)
            throw std::invalid_argument("fully_connected layer: non-positive dimensions");
    } else {
        if (conv.in_channels <= 0 || conv.out_channels <= 0 || conv.kernel_h <= 0 || conv.kernel_w <= 0 ||
            conv.stride <= 0 || conv.padding < 0)
            throw std::invalid_argument("conv2d layer: non-positive geometry");
    }
}

Index ModelSpec::input_size() const {
    Index n = 1;
    for (Index d : input_shape)
        n *= d;
    return input_shape.empty() ? 0 : n;
}

void ModelSpec::validate() const {
    if (input_shape.empty() || (input_shape.size() != 1 && input_shape.size() != 3))
        throw std::invalid_argument("model input shape must be [features] or [channels, height, width]");
    for (Index d : input_shape)
        if (d <= 0)
            throw std::invalid_argument("model input shape has non-positive dimension");
    // A zero-layer model is legal: it validates trivially and infers as identity.

    // Chain shapes through the layers. Conv layers need spatial extents;
    // an fc layer consumes the flattened element count.
    std::vector<Index> shape = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& layer = layers[i];
        layer.validate();
        if (layer.kind == LayerKind::FullyConnected) {
            Index flat = 1;
            for (Index d : shape)
                flat *= d;
            if (flat != layer.in_features)
                throw std::invalid_argument(layer_tag(i) + ": expects " + std::to_string(layer.in_features) +
                                            " inputs but receives " + std::to_string(flat));
            shape = {layer.out_features};
        } else {
            if (shape.size() != 3)
                throw std::invalid_argument(layer_tag(i) + ": conv2d needs a [c,h,w] input");
            if (shape[0] != layer.conv.in_channels)
                throw std::invalid_argument(layer_tag(i) + ": channel count mismatch");
            layer.conv.validate(int(shape[1]), int(shape[2]));
            shape = {layer.conv.out_channels, layer.conv.out_h(int(shape[1])), layer.conv.out_w(int(shape[2]))};
        }
    }
}

Index ModelSpec::output_size() const {
    std::vector<Index> shape = input_shape;
    for (const LayerSpec& layer : layers) {
        if (layer.kind == LayerKind::FullyConnected) {
            shape = {layer.out_features};
        } else {
            shape = {layer.conv.out_channels, layer.conv.out_h(int(shape[1])), layer.conv.out_w(int(shape[2]))};
        }
    }
    Index n = 1;
    for (Index d : shape)
        n *= d;
    return shape.empty() ? 0 : n;
}

QuantizedModel quantize_model(const FloatModel& model, QuantizeReport* report) {
    model.spec.validate();
    if (model.weights.size() != model.spec.layers.size())
        throw std::invalid_argument("quantize_model: weight tensor count does not match layer count");
    QuantizedModel out;
    out.spec = model.spec;
    out.weights.reserve(model.weights.size());
    out.biases = model.biases.empty() ? std::vector<Vector>(model.weights.size()) : model.biases;
    if (report)
        report->max_error.assign(model.weights.size(), 0);
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
        const LayerSpec& spec = model.spec.layers[i];
        const Matrix& w = model.weights[i];
        check_weight_shape(spec, w.rows(), w.cols(), i);
        const int bits = spec.precision.bits_weight;
        IntMatrix q(w.rows(), w.cols());
        Real max_err = 0;
        for (Index r = 0; r < w.rows(); ++r)
            for (Index c = 0; c < w.cols(); ++c) {
                if (std::isnan(w(r, c)))
                    throw std::domain_error(layer_tag(i) + ": NaN weight");
                const Real clipped = std::clamp(w(r, c), Real(-1), Real(1));
                q(r, c) = quantize_linear(clipped, bits);
                max_err = std::max(max_err, std::abs(Real(q(r, c)) / level_denominator(bits) - clipped));
            }
        if (report)
            report->max_error[i] = max_err;
        out.weights.push_back(std::move(q));
    }
    return out;
}

MbnPlan decompose_model(const QuantizedModel& model) {
    model.spec.validate();
    if (model.weights.size() != model.spec.layers.size())
        throw std::invalid_argument("decompose_model: weight tensor count does not match layer count");
    MbnPlan plan;
    plan.spec = model.spec;
    plan.layers.reserve(model.weights.size());
    for (std::size_t i = 0; i < model.weights.size(); ++i) {
        const LayerSpec& spec = model.spec.layers[i];
        check_weight_shape(spec, model.weights[i].rows(), model.weights[i].cols(), i);
        PlanLayer layer;
        layer.spec = spec;
        layer.weight_planes = encode_rows_quantized(model.weights[i], spec.precision.bits_weight);
        if (!model.biases.empty() && model.biases[i].size() > 0) {
            if (!spec.has_bias || model.biases[i].size() != spec.weight_rows())
                throw std::invalid_argument(layer_tag(i) + ": bias does not match spec");
            layer.bias = model.biases[i];
        }
        const int m_bits = spec.precision.bits_act;
        const int k_bits = spec.precision.bits_weight;
        for (int m = 0; m < m_bits; ++m)
            for (int k = 0; k < k_bits; ++k)
                layer.branch_weights.push_back(std::int64_t(1) << (m + k));
        layer.output_scale = Real(1) / (Real(level_denominator(m_bits)) * level_denominator(k_bits));
        plan.layers.push_back(std::move(layer));
    }
    return plan;
}

QuantizedModel recompose_model(const MbnPlan& plan) {
    QuantizedModel model;
    model.spec = plan.spec;
    model.weights.reserve(plan.layers.size());
    model.biases.resize(plan.layers.size());
    for (std::size_t i = 0; i < plan.layers.size(); ++i) {
        model.weights.push_back(integer_rows(plan.layers[i].weight_planes));
        model.biases[i] = plan.layers[i].bias;
    }
    return model;
}

namespace {

// Applies one plan layer to a batch, flattened row-major per sample.
// `shape` tracks the per-sample tensor shape across layers.
Matrix apply_plan_layer(const PlanLayer& layer, const Matrix& batch, std::vector<Index>& shape, int threads) {
    const int m_bits = layer.spec.precision.bits_act;
    if (layer.spec.kind == LayerKind::FullyConnected) {
        Matrix limited(batch.rows(), batch.cols());
        for (Index r = 0; r < batch.rows(); ++r)
            for (Index c = 0; c < batch.cols(); ++c)
                limited(r, c) = limit(batch(r, c), layer.spec.precision.limiter);
        const EncodedMatrix enc = encode_rows(limited, m_bits);
        Matrix out = mb_gemm_raw(enc, layer.weight_planes, threads).cast<Real>() * layer.output_scale;
        if (layer.bias.size() > 0)
            out.rowwise() += layer.bias.transpose();
        shape = {layer.spec.out_features};
        return out;
    }

    const ConvGeometry& geom = layer.spec.conv;
    const int h = int(shape[1]);
    const int w = int(shape[2]);
    const int oh = geom.out_h(h);
    const int ow = geom.out_w(w);
    Matrix out(batch.rows(), Index(geom.out_channels) * oh * ow);
    for (Index s = 0; s < batch.rows(); ++s) {
        Tensor3 t(geom.in_channels, h, w);
        for (Index j = 0; j < t.size(); ++j)
            t.data[j] = limit(batch(s, j), layer.spec.precision.limiter);
        const Int64Matrix raw = mb_conv2d_raw(t, m_bits, layer.weight_planes, geom, threads);
        for (int c = 0; c < geom.out_channels; ++c) {
            const Real bias = layer.bias.size() > 0 ? layer.bias[c] : Real(0);
            for (Index p = 0; p < Index(oh) * ow; ++p)
                out(s, Index(c) * oh * ow + p) = Real(raw(c, p)) * layer.output_scale + bias;
        }
    }
    shape = {geom.out_channels, oh, ow};
    return out;
}

} // namespace

Matrix infer(const MbnPlan& plan, const Eigen::Ref<const Matrix>& inputs, int threads) {
    plan.spec.validate();
    if (inputs.cols() != plan.spec.input_size())
        throw std::invalid_argument("infer: input has " + std::to_string(inputs.cols()) +
                                    " features, model expects " + std::to_string(plan.spec.input_size()));
    Matrix x = inputs;
    std::vector<Index> shape = plan.spec.input_shape;
    for (const PlanLayer& layer : plan.layers)
        x = apply_plan_layer(layer, x, shape, threads);
    return x;
}

Matrix infer_reference(const QuantizedModel& model, const Eigen::Ref<const Matrix>& inputs) {
    model.spec.validate();
    if (inputs.cols() != model.spec.input_size())
        throw std::invalid_argument("infer_reference: input feature count mismatch");
    Matrix x = inputs;
    std::vector<Index> shape = model.spec.input_shape;
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const LayerSpec& spec = model.spec.layers[i];
        const int m_bits = spec.precision.bits_act;
        const int k_bits = spec.precision.bits_weight;
        // Work on the integer numerators and apply the single scale last.
        // The sums stay far below 2^53, so the matmul is exact and the layer
        // output is the identical double the bit-plane path produces; the two
        // paths must agree on which side of a quantizer boundary it falls.
        const Real scale = Real(1) / (Real(level_denominator(m_bits)) * level_denominator(k_bits));
        const Matrix wn = model.weights[i].cast<Real>();
        const Vector* bias = (!model.biases.empty() && model.biases[i].size() > 0) ? &model.biases[i] : nullptr;
        if (spec.kind == LayerKind::FullyConnected) {
            Matrix an(x.rows(), x.cols());
            for (Index r = 0; r < x.rows(); ++r)
                for (Index c = 0; c < x.cols(); ++c)
                    an(r, c) = Real(quantize_linear(limit(x(r, c), spec.precision.limiter), m_bits));
            x = (an * wn.transpose()) * scale;
            if (bias)
                x.rowwise() += bias->transpose();
            shape = {spec.out_features};
        } else {
            const ConvGeometry& geom = spec.conv;
            const int h = int(shape[1]);
            const int w = int(shape[2]);
            const int oh = geom.out_h(h);
            const int ow = geom.out_w(w);
            Matrix out(x.rows(), Index(geom.out_channels) * oh * ow);
            for (Index s = 0; s < x.rows(); ++s) {
                Tensor3 t(geom.in_channels, h, w);
                for (Index j = 0; j < t.size(); ++j)
                    t.data[j] = Real(quantize_linear(limit(x(s, j), spec.precision.limiter), m_bits));
                const Matrix patches = im2col(t, geom, Real(1)); // pad with the +1 numerator
                const Matrix conv = wn * patches;                // out_channels x positions
                for (int c = 0; c < geom.out_channels; ++c) {
                    const Real b = bias ? (*bias)[c] : Real(0);
                    for (Index p = 0; p < Index(oh) * ow; ++p)
                        out(s, Index(c) * oh * ow + p) = conv(c, p) * scale + b;
                }
            }
            x = out;
            shape = {geom.out_channels, oh, ow};
        }
    }
    return x;
}

} // namespace mbqn
