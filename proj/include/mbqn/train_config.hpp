#pragma once

#include "mbqn/train.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mbqn {

struct DatasetConfig {
    std::string kind = "blobs"; // "blobs" or "idx"
    int per_class = 100;
    unsigned long long seed = 7;
    Real stddev = 0.12;
    std::string images; // idx pixel file
    std::string labels; // idx label file
};

struct LayerConfig {
    int out = 0;
    PrecisionConfig precision;
};

struct TrainConfig {
    unsigned long long seed = 1;
    int epochs = 50;
    int batch_size = 32;
    bool quantize = true;
    OptimizerConfig optimizer;
    std::vector<LayerConfig> layers;
    DatasetConfig dataset;
    std::string metrics_csv; // per-epoch CSV, empty to skip
    std::string model_out;   // trained latent weights, empty to skip
};

/// Parse and validate a training config document. Missing or ill-typed
/// fields raise std::invalid_argument naming the field.
TrainConfig parse_train_config(const nlohmann::json& doc);

TrainConfig load_train_config(const std::string& path);

Dataset load_config_dataset(const DatasetConfig& config);

/// Fully-connected stack from the config; the final layer width must match
/// the dataset's class count.
ModelSpec model_spec_from_config(const TrainConfig& config, int input_dim, int classes);

struct FitResult {
    std::vector<Metrics> history; // per-epoch training metrics
    Metrics final_eval;
};

/// Train for the configured number of epochs and write the metrics CSV if a
/// path is configured. The model is updated in place.
FitResult fit(FloatModel& net, const Dataset& data, const TrainConfig& config);

void write_metrics_csv(const std::string& path, std::span<const Metrics> history);

nlohmann::json lower_report_json(const LowerReport& report);

} // namespace mbqn
