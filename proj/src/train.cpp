#include "mbqn/train.hpp"

#include "mbqn/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mbqn {
namespace {

constexpr Real kPi = std::numbers::pi_v<Real>;

// Training drives fully-connected stacks without bias terms; convolution and
// bias stay inference-side features.
void check_trainable(const ModelSpec& spec) {
    spec.validate();
    for (const LayerSpec& layer : spec.layers) {
        if (layer.kind != LayerKind::FullyConnected)
            throw std::invalid_argument("training supports fully-connected layers only");
        if (layer.has_bias)
            throw std::invalid_argument("training supports bias-free layers only");
    }
}

Matrix quantize_batch(const Matrix& values, int bits) {
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index i = 0; i < values.size(); ++i)
        out.reshaped()[i] = quantize_value(values.reshaped()[i], bits);
    return out;
}

// integer numerators n of the quantized values n/(2^bits - 1)
Matrix numerator_batch(const Matrix& values, int bits) {
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index i = 0; i < values.size(); ++i)
        out.reshaped()[i] = Real(quantize_linear(values.reshaped()[i], bits));
    return out;
}

Matrix limit_batch(const Matrix& values, Limiter limiter) {
    Matrix out(values.rows(), values.cols());
    for (Eigen::Index i = 0; i < values.size(); ++i)
        out.reshaped()[i] = limit(values.reshaped()[i], limiter);
    return out;
}

Matrix forward_impl(const FloatModel& net, const Eigen::Ref<const Matrix>& batch, bool quantize,
                    ForwardCache* cache) {
    check_trainable(net.spec);
    if (batch.cols() != net.spec.input_size())
        throw std::invalid_argument("batch width does not match the model input size");
    if (cache) {
        cache->quantized = quantize;
        cache->inputs.clear();
        cache->act_q.clear();
    }
    Matrix current = batch;
    for (std::size_t l = 0; l < net.spec.layers.size(); ++l) {
        const LayerSpec& layer = net.spec.layers[l];
        if (cache) cache->inputs.push_back(current);
        const Matrix act = limit_batch(current, layer.precision.limiter);
        if (quantize) {
            // propagate the exact integer numerators and scale once so the
            // layer output is the identical double the bit-plane engine emits
            const Matrix an = numerator_batch(act, layer.precision.bits_act);
            const Matrix wn = numerator_batch(net.weights[l], layer.precision.bits_weight);
            const Real scale = Real(1) / (Real(level_denominator(layer.precision.bits_act)) *
                                          level_denominator(layer.precision.bits_weight));
            if (cache) cache->act_q.push_back(an / Real(level_denominator(layer.precision.bits_act)));
            current = (an * wn.transpose()) * scale;
        } else {
            if (cache) cache->act_q.push_back(act);
            current = act * net.weights[l].transpose();
        }
    }
    if (cache) cache->logits = current;
    return current;
}

Real uniform_signed(std::mt19937_64& rng) {
    const Real u = (Real(rng() >> 11) + Real(0.5)) * 0x1.0p-53;
    return 2 * u - 1;
}

LowerRun finetune_run(FloatModel net, const Dataset& data, const LowerOptions& options, Real threshold) {
    LowerRun run;
    OptimizerState opt = make_optimizer(net, options.optimizer);
    TrainOptions train_options{.batch_size = options.batch_size, .quantize = true};
    Metrics eval = evaluate(net, data, true);
    run.history.push_back(eval);
    if (eval.loss <= threshold) run.epochs_to_target = 0;
    for (int epoch = 1; epoch <= options.finetune_epochs; ++epoch) {
        train_epoch(net, opt, data, train_options);
        eval = evaluate(net, data, true);
        run.history.push_back(eval);
        if (run.epochs_to_target < 0 && eval.loss <= threshold) run.epochs_to_target = epoch;
    }
    run.final = run.history.back();
    return run;
}

} // namespace

int binarize(Real x) {
    return limit(x, Limiter::HTanh) >= 0 ? 1 : -1;
}

Real encoder_grad_high(Real x) {
    if (x < -1 || x > 1) return 0;
    return Real(0.75) * kPi * std::cos(Real(0.75) * kPi * x);
}

Real encoder_grad_low(Real x) {
    if (x < -1 || x > 1) return 0;
    return Real(-1.5) * kPi * std::cos(Real(1.5) * kPi * x);
}

std::pair<Real, Real> encoder_grad_2bit(Real x) {
    return {encoder_grad_high(x), encoder_grad_low(x)};
}

Real ste_grad_quantizer(Real x) {
    return (x >= -1 && x <= 1) ? 1 : 0;
}

OptimizerKind select_optimizer(const ModelSpec& spec) {
    int min_bits = kMaxBits;
    for (const LayerSpec& layer : spec.layers)
        min_bits = std::min({min_bits, layer.precision.bits_act, layer.precision.bits_weight});
    return min_bits <= 2 ? OptimizerKind::Adam : OptimizerKind::Sgd;
}

OptimizerState make_optimizer(const FloatModel& net, const OptimizerConfig& config) {
    check_trainable(net.spec);
    OptimizerState opt;
    opt.kind = config.kind.value_or(select_optimizer(net.spec));
    opt.lr = config.learning_rate.value_or(opt.kind == OptimizerKind::Adam ? Real(1e-3) : Real(0.1));
    if (opt.lr < 0) throw std::invalid_argument("learning rate must be non-negative");
    for (const Matrix& w : net.weights) {
        opt.m1.push_back(Matrix::Zero(w.rows(), w.cols()));
        opt.m2.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    return opt;
}

void step(OptimizerState& opt, FloatModel& net, const std::vector<Matrix>& grads) {
    if (grads.size() != net.weights.size())
        throw std::invalid_argument("gradient count does not match the layer count");
    for (std::size_t l = 0; l < grads.size(); ++l) {
        if (grads[l].rows() != net.weights[l].rows() || grads[l].cols() != net.weights[l].cols())
            throw std::invalid_argument("gradient shape does not match the weights");
        if (!grads[l].allFinite())
            throw std::domain_error("non-finite gradient");
    }
    ++opt.step_count;
    for (std::size_t l = 0; l < grads.size(); ++l) {
        Matrix& w = net.weights[l];
        if (opt.kind == OptimizerKind::Adam) {
            Matrix& m1 = opt.m1[l];
            Matrix& m2 = opt.m2[l];
            m1 = OptimizerState::kBeta1 * m1 + (1 - OptimizerState::kBeta1) * grads[l];
            m2 = OptimizerState::kBeta2 * m2.array().matrix() +
                 (1 - OptimizerState::kBeta2) * grads[l].array().square().matrix();
            const Real c1 = 1 - std::pow(OptimizerState::kBeta1, Real(opt.step_count));
            const Real c2 = 1 - std::pow(OptimizerState::kBeta2, Real(opt.step_count));
            w.array() -= opt.lr * (m1.array() / c1) /
                         ((m2.array() / c2).sqrt() + OptimizerState::kEpsilon);
        } else {
            w -= opt.lr * grads[l];
        }
        w = w.array().min(Real(1)).max(Real(-1)).matrix();
    }
}

Matrix forward_quantized(const FloatModel& net, const Eigen::Ref<const Matrix>& batch, ForwardCache* cache) {
    return forward_impl(net, batch, true, cache);
}

Matrix forward_float(const FloatModel& net, const Eigen::Ref<const Matrix>& batch, ForwardCache* cache) {
    return forward_impl(net, batch, false, cache);
}

std::vector<Matrix> backward_ste(const FloatModel& net, const ForwardCache& cache,
                                 const Eigen::Ref<const Matrix>& logits_grad) {
    const std::size_t layer_count = net.spec.layers.size();
    if (cache.inputs.size() != layer_count || cache.act_q.size() != layer_count)
        throw std::invalid_argument("forward cache does not match the model");
    std::vector<Matrix> grads(layer_count);
    Matrix upstream = logits_grad;
    for (std::size_t l = layer_count; l-- > 0;) {
        const LayerSpec& layer = net.spec.layers[l];
        grads[l] = upstream.transpose() * cache.act_q[l];
        if (cache.quantized) {
            // straight-through mask of the weight quantizer
            for (Eigen::Index i = 0; i < grads[l].size(); ++i)
                grads[l].reshaped()[i] *= ste_grad_quantizer(net.weights[l].reshaped()[i]);
        }
        if (l == 0) break;
        const Matrix w = cache.quantized
                             ? quantize_batch(net.weights[l], layer.precision.bits_weight)
                             : net.weights[l];
        Matrix down = upstream * w;
        const Matrix& u = cache.inputs[l];
        for (Eigen::Index i = 0; i < down.size(); ++i) {
            Real g = limiter_grad(u.reshaped()[i], layer.precision.limiter);
            if (cache.quantized) g *= ste_grad_quantizer(limit(u.reshaped()[i], layer.precision.limiter));
            down.reshaped()[i] *= g;
        }
        upstream = std::move(down);
    }
    return grads;
}

Real softmax_cross_entropy(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels,
                           Matrix* grad) {
    if (logits.rows() != Eigen::Index(labels.size()))
        throw std::invalid_argument("label count does not match the batch");
    if (logits.rows() == 0) throw std::invalid_argument("empty batch");
    const Eigen::Index batch = logits.rows();
    const Eigen::Index classes = logits.cols();
    if (grad) grad->resize(batch, classes);
    Real loss = 0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        if (labels[std::size_t(i)] < 0 || labels[std::size_t(i)] >= classes)
            throw std::out_of_range("label outside the class range");
        const Real peak = logits.row(i).maxCoeff();
        const Eigen::ArrayXd shifted = logits.row(i).array() - peak;
        const Real norm = shifted.exp().sum();
        loss += std::log(norm) - shifted[labels[std::size_t(i)]];
        if (grad) {
            grad->row(i) = (shifted.exp() / norm).matrix().transpose() / Real(batch);
            (*grad)(i, labels[std::size_t(i)]) -= Real(1) / Real(batch);
        }
    }
    return loss / Real(batch);
}

Real accuracy(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels) {
    if (logits.rows() != Eigen::Index(labels.size()))
        throw std::invalid_argument("label count does not match the batch");
    if (logits.rows() == 0) return 0;
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);
        if (best == labels[std::size_t(i)]) ++correct;
    }
    return Real(correct) / Real(logits.rows());
}

Metrics train_epoch(FloatModel& net, OptimizerState& opt, const Dataset& data, const TrainOptions& options) {
    if (data.size() == 0) throw std::invalid_argument("empty dataset");
    if (options.batch_size <= 0) throw std::invalid_argument("batch size must be positive");
    const Eigen::Index total = data.size();
    Real loss_sum = 0;
    Real hit_sum = 0;
    for (Eigen::Index begin = 0; begin < total; begin += options.batch_size) {
        const Eigen::Index count = std::min<Eigen::Index>(options.batch_size, total - begin);
        const auto batch = data.inputs.middleRows(begin, count);
        const std::span<const int> labels(data.labels.data() + begin, std::size_t(count));
        ForwardCache cache;
        const Matrix logits = options.quantize ? forward_quantized(net, batch, &cache)
                                               : forward_float(net, batch, &cache);
        Matrix logits_grad;
        loss_sum += softmax_cross_entropy(logits, labels, &logits_grad) * Real(count);
        hit_sum += accuracy(logits, labels) * Real(count);
        step(opt, net, backward_ste(net, cache, logits_grad));
    }
    return {loss_sum / Real(total), hit_sum / Real(total)};
}

Metrics evaluate(const FloatModel& net, const Dataset& data, bool quantize) {
    if (data.size() == 0) throw std::invalid_argument("empty dataset");
    const Matrix logits = quantize ? forward_quantized(net, data.inputs) : forward_float(net, data.inputs);
    return {softmax_cross_entropy(logits, data.labels), accuracy(logits, data.labels)};
}

FloatModel random_mlp(const ModelSpec& spec, unsigned long long seed) {
    check_trainable(spec);
    FloatModel net;
    net.spec = spec;
    std::mt19937_64 rng(seed);
    for (const LayerSpec& layer : spec.layers) {
        Matrix w(layer.weight_rows(), layer.weight_cols());
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.reshaped()[i] = Real(0.7) * uniform_signed(rng);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back();
    }
    return net;
}

ModelSpec lowered_spec(const ModelSpec& spec, int target_bits) {
    check_bits(target_bits);
    ModelSpec out = spec;
    for (LayerSpec& layer : out.layers) {
        layer.precision.bits_act = target_bits;
        layer.precision.bits_weight = target_bits;
        if (target_bits == 1 && layer.precision.limiter == Limiter::HReLU)
            layer.precision.limiter = Limiter::HTanh;
    }
    out.validate();
    return out;
}

FloatModel init_from_higher_precision(const FloatModel& donor, const ModelSpec& target) {
    donor.spec.validate();
    target.validate();
    if (donor.spec.layers.size() != target.layers.size())
        throw std::invalid_argument("architecture mismatch: layer counts differ");
    for (std::size_t l = 0; l < target.layers.size(); ++l) {
        const LayerSpec& a = donor.spec.layers[l];
        const LayerSpec& b = target.layers[l];
        if (a.kind != b.kind || a.weight_rows() != b.weight_rows() ||
            a.weight_cols() != b.weight_cols() || a.has_bias != b.has_bias)
            throw std::invalid_argument("architecture mismatch: layer shapes differ");
    }
    FloatModel out;
    out.spec = target;
    out.weights = donor.weights;
    out.biases = donor.biases;
    return out;
}

LowerReport lower_and_finetune(const FloatModel& donor, const Dataset& data, const LowerOptions& options) {
    check_trainable(donor.spec);
    if (data.size() == 0) throw std::invalid_argument("empty dataset");
    LowerReport report;
    report.donor_bits = donor.spec.layers.front().precision.bits_weight;
    report.target_bits = options.target_bits;
    report.donor_loss = evaluate(donor, data, true).loss;
    report.loss_threshold = report.donor_loss * (1 + options.loss_margin);

    const ModelSpec target = lowered_spec(donor.spec, options.target_bits);
    report.warm = finetune_run(init_from_higher_precision(donor, target), data, options, report.loss_threshold);
    report.random = finetune_run(random_mlp(target, options.random_seed), data, options, report.loss_threshold);
    report.warm_reached = report.warm.epochs_to_target >= 0;
    report.warm_faster = report.warm_reached &&
                         (report.random.epochs_to_target < 0 ||
                          report.warm.epochs_to_target < report.random.epochs_to_target);
    return report;
}

} // namespace mbqn
