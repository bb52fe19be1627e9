#include "mbqn/train_config.hpp"

#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mbqn {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
    throw std::invalid_argument("train config: " + message);
}

const json& require(const json& doc, const char* key) {
    auto it = doc.find(key);
    if (it == doc.end()) fail(std::string("missing required field \"") + key + "\"");
    return *it;
}

long long get_integer(const json& doc, const char* key, long long fallback) {
    auto it = doc.find(key);
    if (it == doc.end()) return fallback;
    if (!it->is_number_integer()) fail(std::string("field \"") + key + "\" must be an integer");
    return it->get<long long>();
}

Real get_number(const json& doc, const char* key, Real fallback) {
    auto it = doc.find(key);
    if (it == doc.end()) return fallback;
    if (!it->is_number()) fail(std::string("field \"") + key + "\" must be a number");
    return it->get<Real>();
}

std::string get_string(const json& doc, const char* key, const std::string& fallback) {
    auto it = doc.find(key);
    if (it == doc.end()) return fallback;
    if (!it->is_string()) fail(std::string("field \"") + key + "\" must be a string");
    return it->get<std::string>();
}

bool get_bool(const json& doc, const char* key, bool fallback) {
    auto it = doc.find(key);
    if (it == doc.end()) return fallback;
    if (!it->is_boolean()) fail(std::string("field \"") + key + "\" must be a boolean");
    return it->get<bool>();
}

PrecisionConfig parse_precision(const json& doc, const PrecisionConfig& defaults) {
    PrecisionConfig precision = defaults;
    precision.bits_act = int(get_integer(doc, "bits_act", defaults.bits_act));
    precision.bits_weight = int(get_integer(doc, "bits_weight", defaults.bits_weight));
    const std::string limiter = get_string(doc, "limiter", limiter_name(defaults.limiter));
    precision.limiter = limiter_from_name(limiter);
    return precision;
}

} // namespace

TrainConfig parse_train_config(const json& doc) {
    if (!doc.is_object()) fail("document must be a JSON object");
    TrainConfig config;
    config.seed = (unsigned long long)(get_integer(doc, "seed", (long long)(config.seed)));
    config.epochs = int(get_integer(doc, "epochs", config.epochs));
    if (config.epochs < 0) fail("field \"epochs\" must be non-negative");
    config.batch_size = int(get_integer(doc, "batch_size", config.batch_size));
    if (config.batch_size <= 0) fail("field \"batch_size\" must be positive");
    config.quantize = get_bool(doc, "quantize", config.quantize);

    const std::string optimizer = get_string(doc, "optimizer", "auto");
    if (optimizer == "adam")
        config.optimizer.kind = OptimizerKind::Adam;
    else if (optimizer == "sgd")
        config.optimizer.kind = OptimizerKind::Sgd;
    else if (optimizer != "auto")
        fail("field \"optimizer\" must be one of \"auto\", \"adam\", \"sgd\"");
    if (doc.contains("learning_rate")) {
        const Real lr = get_number(doc, "learning_rate", 0);
        if (lr < 0) fail("field \"learning_rate\" must be non-negative");
        config.optimizer.learning_rate = lr;
    }

    PrecisionConfig defaults;
    defaults.bits_act = int(get_integer(doc, "bits_act", 2));
    defaults.bits_weight = int(get_integer(doc, "bits_weight", 2));
    defaults.limiter = limiter_from_name(get_string(doc, "limiter", "htanh"));

    const json& layers = require(doc, "layers");
    if (!layers.is_array() || layers.empty()) fail("field \"layers\" must be a non-empty array");
    for (const json& entry : layers) {
        if (!entry.is_object()) fail("field \"layers\" entries must be objects");
        LayerConfig layer;
        layer.out = int(require(entry, "out").get<long long>());
        if (layer.out <= 0) fail("layer field \"out\" must be positive");
        layer.precision = parse_precision(entry, defaults);
        layer.precision.validate();
        config.layers.push_back(layer);
    }

    if (doc.contains("dataset")) {
        const json& ds = doc.at("dataset");
        if (!ds.is_object()) fail("field \"dataset\" must be an object");
        config.dataset.kind = get_string(ds, "kind", config.dataset.kind);
        if (config.dataset.kind == "blobs") {
            config.dataset.per_class = int(get_integer(ds, "per_class", config.dataset.per_class));
            if (config.dataset.per_class <= 0) fail("dataset field \"per_class\" must be positive");
            config.dataset.seed = (unsigned long long)(get_integer(ds, "seed", (long long)(config.dataset.seed)));
            config.dataset.stddev = get_number(ds, "stddev", config.dataset.stddev);
            if (!(config.dataset.stddev > 0)) fail("dataset field \"stddev\" must be positive");
        } else if (config.dataset.kind == "idx") {
            config.dataset.images = get_string(ds, "images", "");
            config.dataset.labels = get_string(ds, "labels", "");
            if (config.dataset.images.empty()) fail("dataset field \"images\" is required for kind \"idx\"");
            if (config.dataset.labels.empty()) fail("dataset field \"labels\" is required for kind \"idx\"");
        } else {
            fail("dataset field \"kind\" must be \"blobs\" or \"idx\"");
        }
    }

    config.metrics_csv = get_string(doc, "metrics_csv", "");
    config.model_out = get_string(doc, "model_out", "");
    return config;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open train config: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& err) {
        fail(std::string("invalid JSON: ") + err.what());
    }
    return parse_train_config(doc);
}

Dataset load_config_dataset(const DatasetConfig& config) {
    if (config.kind == "blobs") return make_blobs(config.per_class, config.seed, config.stddev);
    return load_idx(config.images, config.labels);
}

ModelSpec model_spec_from_config(const TrainConfig& config, int input_dim, int classes) {
    if (config.layers.back().out != classes)
        fail("last layer width " + std::to_string(config.layers.back().out) +
             " does not match the dataset class count " + std::to_string(classes));
    ModelSpec spec;
    spec.name = "trained";
    spec.input_shape = {input_dim};
    int width = input_dim;
    for (const LayerConfig& layer : config.layers) {
        spec.layers.push_back(LayerSpec::fully_connected(width, layer.out, layer.precision, false));
        width = layer.out;
    }
    spec.validate();
    return spec;
}

FitResult fit(FloatModel& net, const Dataset& data, const TrainConfig& config) {
    OptimizerState opt = make_optimizer(net, config.optimizer);
    const TrainOptions options{.batch_size = config.batch_size, .quantize = config.quantize};
    FitResult result;
    for (int epoch = 1; epoch <= config.epochs; ++epoch)
        result.history.push_back(train_epoch(net, opt, data, options));
    result.final_eval = evaluate(net, data, config.quantize);
    if (!config.metrics_csv.empty()) write_metrics_csv(config.metrics_csv, result.history);
    return result;
}

void write_metrics_csv(const std::string& path, std::span<const Metrics> history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics csv: " + path);
    out << "epoch,loss,accuracy\n";
    out.precision(std::numeric_limits<Real>::max_digits10);
    for (std::size_t i = 0; i < history.size(); ++i)
        out << (i + 1) << ',' << history[i].loss << ',' << history[i].accuracy << '\n';
    if (!out) throw std::runtime_error("cannot write metrics csv: " + path);
}

nlohmann::json lower_report_json(const LowerReport& report) {
    auto run_json = [](const LowerRun& run) {
        json history = json::array();
        for (const Metrics& m : run.history)
            history.push_back({{"loss", m.loss}, {"accuracy", m.accuracy}});
        return json{{"history", history},
                    {"epochs_to_target", run.epochs_to_target},
                    {"final_loss", run.final.loss},
                    {"final_accuracy", run.final.accuracy}};
    };
    return json{{"donor_bits", report.donor_bits},
                {"target_bits", report.target_bits},
                {"donor_loss", report.donor_loss},
                {"loss_threshold", report.loss_threshold},
                {"warm", run_json(report.warm)},
                {"random", run_json(report.random)},
                {"warm_reached", report.warm_reached},
                {"warm_faster", report.warm_faster}};
}

} // namespace mbqn
