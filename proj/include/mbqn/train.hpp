#pragma once

#include "mbqn/datasets.hpp"
#include "mbqn/network.hpp"

#include <optional>
#include <utility>

namespace mbqn {

// ===== binarizer and surrogate derivatives =====

/// sign(HTanh(x)) with sign(0) := +1; the 1-bit weight binarizer.
int binarize(Real x);

/// Surrogate derivative of the high-bit comparator of the 2-bit encoder:
/// (3/4)pi * cos((3/4)pi x) inside [-1,1], 0 outside.
Real encoder_grad_high(Real x);

/// Surrogate derivative of the low-bit comparator:
/// -(3/2)pi * cos((3/2)pi x) inside [-1,1], 0 outside.
Real encoder_grad_low(Real x);

/// (d_high, d_low) of the 2-bit encoder at x.
std::pair<Real, Real> encoder_grad_2bit(Real x);

/// Straight-through gradient of the linear quantizer: 1 inside the clipped
/// region |x| <= 1 (boundary inclusive), 0 outside.
Real ste_grad_quantizer(Real x);

// ===== optimizers =====

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    std::optional<OptimizerKind> kind; // auto-selected from layer bits when empty
    std::optional<Real> learning_rate; // defaults: Adam 1e-3, SGD 0.1
};

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    Real lr = 1e-3;
    long step_count = 0;
    std::vector<Matrix> m1, m2; // Adam moments, shaped like the weights

    static constexpr Real kBeta1 = 0.9;
    static constexpr Real kBeta2 = 0.999;
    static constexpr Real kEpsilon = 1e-8;
};

/// Adam for low-precision models (min layer bits <= 2), SGD otherwise.
OptimizerKind select_optimizer(const ModelSpec& spec);

OptimizerState make_optimizer(const FloatModel& net, const OptimizerConfig& config = {});

/// Apply one optimizer step, then clip every latent weight to [-1,1].
/// Non-finite gradients are rejected.
void step(OptimizerState& opt, FloatModel& net, const std::vector<Matrix>& grads);

// ===== quantized forward / STE backward (fully-connected stacks) =====

struct ForwardCache {
    bool quantized = true;
    std::vector<Matrix> inputs; // pre-limiter input of each layer
    std::vector<Matrix> act_q;  // activations as fed to the layer weights
    Matrix logits;
};

/// Forward pass through the quantized shadows: per layer, limiter, M-bit
/// activation quantization, and K-bit quantized weights. The cache keeps
/// pre-quantization activations for the STE backward pass.
Matrix forward_quantized(const FloatModel& net, const Eigen::Ref<const Matrix>& batch,
                         ForwardCache* cache = nullptr);

/// Full-precision forward (limiters only); the float baseline.
Matrix forward_float(const FloatModel& net, const Eigen::Ref<const Matrix>& batch,
                     ForwardCache* cache = nullptr);

/// Backpropagate through the cached forward, passing quantizers with the
/// straight-through rule. Returns gradients w.r.t. the latent weights; the
/// STE mask is applied symmetrically at weights and activations.
std::vector<Matrix> backward_ste(const FloatModel& net, const ForwardCache& cache,
                                 const Eigen::Ref<const Matrix>& logits_grad);

// ===== loss head =====

/// Mean softmax cross-entropy in full precision; optional gradient w.r.t.
/// the logits (already divided by the batch size).
Real softmax_cross_entropy(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels,
                           Matrix* grad = nullptr);

Real accuracy(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels);

// ===== training loop =====

struct TrainOptions {
    int batch_size = 32;
    bool quantize = true;
};

struct Metrics {
    Real loss = 0;
    Real accuracy = 0;
};

/// One full pass over the dataset in fixed batch order; returns running
/// loss/accuracy over the pass.
Metrics train_epoch(FloatModel& net, OptimizerState& opt, const Dataset& data, const TrainOptions& options);

Metrics evaluate(const FloatModel& net, const Dataset& data, bool quantize = true);

/// Fully-connected model with seeded uniform(-0.7, 0.7) latent weights.
FloatModel random_mlp(const ModelSpec& spec, unsigned long long seed);

// ===== progressive precision lowering =====

/// Copy of `spec` with every layer's activation and weight bits set to
/// `target_bits`; 1-bit layers fall back from hrelu to htanh.
ModelSpec lowered_spec(const ModelSpec& spec, int target_bits);

/// Verbatim latent-weight copy into a target spec with identical layer
/// shapes; optimizer state does not carry over.
FloatModel init_from_higher_precision(const FloatModel& donor, const ModelSpec& target);

struct LowerOptions {
    int target_bits = 1;
    int finetune_epochs = 20;
    int batch_size = 32;
    unsigned long long random_seed = 12345; // init seed of the paired from-scratch run
    OptimizerConfig optimizer;
    Real loss_margin = 0.10; // "reached" means eval loss <= donor loss * (1 + margin)
};

struct LowerRun {
    std::vector<Metrics> history; // eval metrics after each fine-tune epoch
    int epochs_to_target = -1;    // first epoch meeting the threshold, -1 if never
    Metrics final;
};

struct LowerReport {
    int donor_bits = 0;
    int target_bits = 0;
    Real donor_loss = 0;
    Real loss_threshold = 0;
    LowerRun warm;   // initialized from the donor
    LowerRun random; // paired from-scratch run
    bool warm_reached = false;
    bool warm_faster = false; // warm reached the threshold in strictly fewer epochs
};

/// Lower a trained model to `target_bits`, fine-tune it, and run the paired
/// random-initialization baseline on the same data.
LowerReport lower_and_finetune(const FloatModel& donor, const Dataset& data, const LowerOptions& options);

} // namespace mbqn
