#include "mbqn/bench.hpp"
#include "mbqn/codec.hpp"
#include "mbqn/model_io.hpp"
#include "mbqn/network.hpp"
#include "mbqn/train_config.hpp"
#include "mbqn/verify.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

namespace {

using namespace mbqn;

int default_threads() {
    if (const char* env = std::getenv("MBQN_THREADS")) {
        const int value = std::atoi(env);
        if (value > 0) return value;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text << '\n';
    if (!out) throw std::runtime_error("cannot write " + path);
}

struct LayerOverride {
    std::size_t index = 0;
    int bits_act = 0;
    int bits_weight = 0;
    std::string limiter;
};

// INDEX:M,K or INDEX:M,K,LIMITER
std::optional<LayerOverride> parse_layer_override(const std::string& text) {
    const std::size_t colon = text.find(':');
    if (colon == std::string::npos || colon == 0) return std::nullopt;
    LayerOverride result;
    std::size_t consumed = 0;
    try {
        result.index = std::stoul(text.substr(0, colon), &consumed);
    } catch (const std::exception&) {
        return std::nullopt;
    }
    if (consumed != colon) return std::nullopt;

    std::vector<std::string> parts;
    std::size_t begin = colon + 1;
    while (begin <= text.size()) {
        const std::size_t comma = text.find(',', begin);
        parts.push_back(text.substr(begin, comma == std::string::npos ? comma : comma - begin));
        if (comma == std::string::npos) break;
        begin = comma + 1;
    }
    if (parts.size() < 2 || parts.size() > 3) return std::nullopt;
    try {
        result.bits_act = std::stoi(parts[0], &consumed);
        if (consumed != parts[0].size()) return std::nullopt;
        result.bits_weight = std::stoi(parts[1], &consumed);
        if (consumed != parts[1].size()) return std::nullopt;
        if (parts.size() == 3) {
            limiter_from_name(parts[2]); // name check only
            result.limiter = parts[2];
        }
    } catch (const std::exception&) {
        return std::nullopt;
    }
    if (result.bits_act < kMinBits || result.bits_act > kMaxBits) return std::nullopt;
    if (result.bits_weight < kMinBits || result.bits_weight > kMaxBits) return std::nullopt;
    return result;
}

struct QuantizeFlags {
    int bits_act = 0;   // 0 keeps the stored spec
    int bits_weight = 0;
    std::string limiter;
    std::vector<std::string> layer_overrides;
};

int run_quantize(const std::string& in_path, const std::string& out_path, const std::string& storage,
                 const QuantizeFlags& flags) {
    const Model model = load_model(in_path);
    if (model.storage() != Storage::Float32)
        throw std::runtime_error("quantize expects a float32-storage model; got " +
                                 std::string(storage_name(model.storage())));
    FloatModel net = model.as_float();
    for (LayerSpec& layer : net.spec.layers) {
        if (flags.bits_act > 0) layer.precision.bits_act = flags.bits_act;
        if (flags.bits_weight > 0) layer.precision.bits_weight = flags.bits_weight;
        if (!flags.limiter.empty()) layer.precision.limiter = limiter_from_name(flags.limiter);
    }
    for (const std::string& text : flags.layer_overrides) {
        const std::optional<LayerOverride> over = parse_layer_override(text);
        if (!over) throw std::runtime_error("bad layer override \"" + text + "\"");
        if (over->index >= net.spec.layers.size())
            throw std::runtime_error("layer override index " + std::to_string(over->index) +
                                     " out of range (model has " +
                                     std::to_string(net.spec.layers.size()) + " layers)");
        LayerSpec& layer = net.spec.layers[over->index];
        layer.precision.bits_act = over->bits_act;
        layer.precision.bits_weight = over->bits_weight;
        if (!over->limiter.empty()) layer.precision.limiter = limiter_from_name(over->limiter);
    }
    net.spec.validate();
    QuantizeReport report;
    const QuantizedModel quantized = quantize_model(net, &report);
    if (storage == "quantized") {
        save_model(quantized, out_path);
    } else if (storage == "planes") {
        save_model(decompose_model(quantized), out_path);
    } else {
        throw std::runtime_error("unknown storage \"" + storage + "\" (expected planes or quantized)");
    }
    Real worst = 0;
    for (Real err : report.max_error) worst = std::max(worst, err);
    std::cout << "quantized " << model.spec().layers.size() << " layers to " << storage
              << " storage, max quantization error " << worst << '\n';
    return 0;
}

int run_infer(const std::string& model_path, const std::string& input_path,
              const std::string& output_path, int threads) {
    const Model model = load_model(model_path);
    MbnPlan plan;
    switch (model.storage()) {
    case Storage::Float32:
        throw std::runtime_error("model stores float weights; run quantize first");
    case Storage::Quantized:
        plan = decompose_model(model.as_quantized());
        break;
    case Storage::Planes:
        plan = model.as_plan();
        break;
    }
    const TensorFile tensor = read_tensor(input_path);
    const Matrix batch = tensor_as_batch(tensor);
    if (batch.cols() != plan.spec.input_size())
        throw std::runtime_error("input tensor width " + std::to_string(batch.cols()) +
                                 " does not match the model input size " +
                                 std::to_string(plan.spec.input_size()));
    const Matrix out = infer(plan, batch, threads);
    write_tensor(output_path, batch_as_tensor(out));
    std::cout << "inferred " << out.rows() << " samples, " << out.cols()
              << " outputs each, " << threads << " threads\n";
    return 0;
}

int run_verify_cmd(bool full, unsigned long long seed, int threads) {
    VerifyOptions options;
    options.full = full;
    options.seed = seed;
    options.threads = threads;
    const VerifyReport report = run_verify(options);
    for (const SuiteResult& suite : report.suites) {
        std::cout << "suite " << suite.name << ": " << suite.trials << " trials, "
                  << suite.failures << " failures";
        if (!suite.first_failure.empty()) std::cout << " (first: " << suite.first_failure << ")";
        std::cout << '\n';
    }
    std::cout << (report.passed() ? "verify passed" : "verify FAILED") << '\n';
    return report.passed() ? 0 : 1;
}

int run_bench_cmd(const BenchOptions& options, const std::string& out_path) {
    const BenchReport report = run_bench(options);
    const std::string text = bench_report_json(report).dump(2);
    std::cout << text << '\n';
    if (!out_path.empty()) write_text(out_path, text);
    return 0;
}

int run_train(const std::string& config_path, const std::string& metrics_csv,
              const std::string& model_out, long long seed_override) {
    TrainConfig config = load_train_config(config_path);
    if (!metrics_csv.empty()) config.metrics_csv = metrics_csv;
    if (!model_out.empty()) config.model_out = model_out;
    if (seed_override >= 0) config.seed = (unsigned long long)(seed_override);
    const Dataset data = load_config_dataset(config.dataset);
    const ModelSpec spec = model_spec_from_config(config, int(data.inputs.cols()), data.classes);
    FloatModel net = random_mlp(spec, config.seed);
    const FitResult result = fit(net, data, config);
    std::cout << "trained " << config.epochs << " epochs: loss " << result.final_eval.loss
              << ", accuracy " << result.final_eval.accuracy << '\n';
    if (!config.model_out.empty()) {
        save_model(net, config.model_out);
        std::cout << "saved latent weights to " << config.model_out << '\n';
    }
    return 0;
}

int run_lower(const std::string& model_path, const std::string& config_path, int target_bits,
              int epochs, long long seed, const std::string& out_path) {
    const Model donor_file = load_model(model_path);
    if (donor_file.storage() != Storage::Float32)
        throw std::runtime_error("lower expects a float32-storage donor model (latent weights)");
    const TrainConfig config = load_train_config(config_path);
    const Dataset data = load_config_dataset(config.dataset);

    LowerOptions options;
    options.target_bits = target_bits;
    options.finetune_epochs = epochs;
    options.batch_size = config.batch_size;
    options.optimizer = config.optimizer;
    if (seed >= 0) options.random_seed = (unsigned long long)(seed);
    const LowerReport report = lower_and_finetune(donor_file.as_float(), data, options);
    const std::string text = lower_report_json(report).dump(2);
    std::cout << text << '\n';
    if (!out_path.empty()) write_text(out_path, text);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-branch binary network toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mbqn 1.0.0");

    std::string in_path, out_path, storage = "planes";
    QuantizeFlags quantize_flags;
    CLI::App* quantize = app.add_subcommand("quantize", "Quantize a float model file");
    quantize->add_option("--in", in_path, "float32-storage model file")->required();
    quantize->add_option("--out", out_path, "output model file")->required();
    quantize->add_option("--storage", storage, "planes or quantized")->capture_default_str();
    quantize->add_option("--bits-act", quantize_flags.bits_act, "activation bits for every layer")
        ->check(CLI::Range(kMinBits, kMaxBits));
    quantize->add_option("--bits-weight", quantize_flags.bits_weight, "weight bits for every layer")
        ->check(CLI::Range(kMinBits, kMaxBits));
    quantize->add_option("--limiter", quantize_flags.limiter, "limiter for every layer")
        ->check(CLI::IsMember({"htanh", "hrelu", "tanh", "sigmoid"}));
    quantize
        ->add_option("--layer", quantize_flags.layer_overrides,
                     "per-layer precision override, INDEX:M,K[,LIMITER]")
        ->check(CLI::Validator(
            [](std::string& value) -> std::string {
                return parse_layer_override(value) ? "" : "expected INDEX:M,K[,LIMITER] with bits in 1..8";
            },
            "LAYERSPEC"));

    std::string model_path, input_path, output_path;
    int threads = default_threads();
    CLI::App* infer_cmd = app.add_subcommand("infer", "Run a quantized model on a tensor file");
    infer_cmd->add_option("--model", model_path, "model file")->required();
    infer_cmd->add_option("--input", input_path, "input tensor file")->required();
    infer_cmd->add_option("--output", output_path, "output tensor file")->required();
    infer_cmd->add_option("--threads", threads, "worker threads")->capture_default_str();

    bool quick = false, full = false;
    unsigned long long verify_seed = 0x5eed;
    CLI::App* verify_cmd = app.add_subcommand("verify", "Run the built-in consistency suites");
    CLI::Option* quick_opt = verify_cmd->add_flag("--quick", quick, "reduced trial counts (default)");
    verify_cmd->add_flag("--full", full, "full trial counts")->excludes(quick_opt);
    verify_cmd->add_option("--seed", verify_seed, "suite seed")->capture_default_str();
    verify_cmd->add_option("--threads", threads, "worker threads")->capture_default_str();

    BenchOptions bench_options;
    bench_options.threads = default_threads();
    std::string bench_out;
    CLI::App* bench_cmd = app.add_subcommand("bench", "Time the kernels and emit a JSON report");
    bench_cmd->add_option("--sizes", bench_options.dot_lengths, "dot-product lengths")
        ->delimiter(',')
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bench_cmd->add_option("--bits", bench_options.gemm_bits, "M = K widths for the gemm comparison")
        ->delimiter(',')
        ->check(CLI::Range(kMinBits, kMaxBits))
        ->capture_default_str();
    bench_cmd->add_option("--reps", bench_options.repetitions, "repetitions, best-of")->capture_default_str();
    bench_cmd->add_option("--threads", bench_options.threads, "worker threads")->capture_default_str();
    bench_cmd->add_option("--out", bench_out, "also write the report here");

    std::string config_path, metrics_csv, train_model_out;
    long long train_seed = -1;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "training config JSON")->required();
    train_cmd->add_option("--metrics-csv", metrics_csv, "per-epoch metrics CSV");
    train_cmd->add_option("--model-out", train_model_out, "save trained latent weights here");
    train_cmd->add_option("--seed", train_seed, "override the config seed");

    int target_bits = 0, lower_epochs = 20;
    long long lower_seed = -1;
    std::string lower_out;
    CLI::App* lower_cmd = app.add_subcommand("lower", "Lower a trained model to fewer bits and fine-tune");
    lower_cmd->add_option("--model", model_path, "donor model file (float32 storage)")->required();
    lower_cmd->add_option("--config", config_path, "training config JSON (dataset, optimizer)")->required();
    lower_cmd->add_option("--to", target_bits, "target bit width")->required();
    lower_cmd->add_option("--epochs", lower_epochs, "fine-tune epochs")->capture_default_str();
    lower_cmd->add_option("--seed", lower_seed, "seed of the paired random-init run");
    lower_cmd->add_option("--out", lower_out, "also write the JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*quantize) return run_quantize(in_path, out_path, storage, quantize_flags);
        if (*infer_cmd) return run_infer(model_path, input_path, output_path, threads);
        if (*verify_cmd) return run_verify_cmd(full, verify_seed, threads);
        if (*bench_cmd) return run_bench_cmd(bench_options, bench_out);
        if (*train_cmd) return run_train(config_path, metrics_csv, train_model_out, train_seed);
        if (*lower_cmd) return run_lower(model_path, config_path, target_bits, lower_epochs, lower_seed, lower_out);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 0;
}
