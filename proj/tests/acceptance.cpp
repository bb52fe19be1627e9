// Release gate: every shipped guarantee checked end to end, one line each.

#include "mbqn/bench.hpp"
#include "mbqn/model_io.hpp"
#include "mbqn/train.hpp"
#include "mbqn/train_config.hpp"

#include "oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace mbqn;
namespace fs = std::filesystem;

namespace {

struct Gate {
    int failures = 0;

    void run(int id, const std::string& name, double budget_seconds,
             const std::function<void(std::ostream&)>& body) {
        const auto start = std::chrono::steady_clock::now();
        std::ostringstream note;
        bool ok = true;
        try {
            body(note);
        } catch (const std::exception& err) {
            ok = false;
            note << (note.str().empty() ? "" : "; ") << "exception: " << err.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (ok && note.str().rfind("ok", 0) != 0) ok = false;
        if (budget_seconds > 0 && elapsed > budget_seconds) {
            ok = false;
            note << (note.str().empty() ? "" : "; ") << "over time budget " << budget_seconds << "s";
        }
        std::printf("%s  %2d  %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", id, name.c_str(), elapsed,
                    note.str().empty() ? "" : " -- ", note.str().c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

double uniform_signed(std::mt19937_64& rng) {
    return double(rng() >> 11) * 0x1.0p-52 - 1;
}

Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols, Real span = 1.0) {
    Matrix out(rows, cols);
    for (Index i = 0; i < out.size(); ++i) out.reshaped()[i] = uniform_signed(rng) * span;
    return out;
}

FloatModel mlp3(int bits, unsigned long long seed) {
    const PrecisionConfig p{bits, bits, Limiter::HTanh};
    ModelSpec spec;
    spec.input_shape = {8};
    spec.layers = {LayerSpec::fully_connected(8, 12, p), LayerSpec::fully_connected(12, 10, p),
                   LayerSpec::fully_connected(10, 5, p)};
    return random_mlp(spec, seed);
}

struct Scratch {
    fs::path dir;
    Scratch() {
        dir = fs::temp_directory_path() / ("mbqn_gate_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string file(const std::string& name) const { return (dir / name).string(); }
};

int run_cli(const std::string& args, const std::string& out_path, const std::string& err_path) {
    const std::string cmd = std::string(MBQN_CLI_PATH) + " " + args + " >" + out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ----- criteria -----

void table_codes(std::ostream& note) {
    if (level_denominator(2) != 3) {
        note << "two-bit scale denominator is " << level_denominator(2);
        return;
    }
    struct Row {
        Real x;
        int n;
        int low, high;
    };
    // the four two-bit codes and their fixed-point values
    const Row rows[] = {{-1.0, -3, -1, -1}, {-1.0 / 3, -1, 1, -1}, {1.0 / 3, 1, -1, 1}, {1.0, 3, 1, 1}};
    for (const Row& row : rows) {
        if (quantize_linear(row.x, 2) != row.n) {
            note << "quantize_linear(" << row.x << ") = " << quantize_linear(row.x, 2);
            return;
        }
        const std::vector<int> signs = encode_bits(row.x, 2);
        if (signs[0] != row.low || signs[1] != row.high) {
            note << "encode_bits(" << row.x << ") = {" << signs[0] << "," << signs[1] << "}";
            return;
        }
        if (signs_to_int(signs) != row.n || decode_bits(signs) != Real(row.n) / 3) {
            note << "round trip broke at x = " << row.x;
            return;
        }
    }
    // mid-band representatives land on the same codes
    const Row bands[] = {{-0.9, -3, -1, -1}, {-0.2, -1, 1, -1}, {0.2, 1, -1, 1}, {0.9, 3, 1, 1}};
    for (const Row& row : bands)
        if (quantize_linear(row.x, 2) != row.n) {
            note << "band representative " << row.x << " mapped to " << quantize_linear(row.x, 2);
            return;
        }
    note << "ok: 4 codes, denominator 3";
}

void dot_exactness(std::ostream& note) {
    std::mt19937_64 rng(0xACCE55);
    long long trials = 0;
    for (int t = 0; t < 10000; ++t) {
        const int bits_x = 1 + int(rng() % 8);
        const int bits_w = 1 + int(rng() % 8);
        const int len = 1 + int(rng() % 4096);
        std::vector<double> x(static_cast<std::size_t>(len)), w(static_cast<std::size_t>(len));
        Matrix mx(1, len), mw(1, len);
        for (int i = 0; i < len; ++i) {
            x[std::size_t(i)] = uniform_signed(rng);
            w[std::size_t(i)] = uniform_signed(rng);
            mx(0, i) = x[std::size_t(i)];
            mw(0, i) = w[std::size_t(i)];
        }
        const EncodedMatrix ex = encode_rows(mx, bits_x);
        const EncodedMatrix ew = encode_rows(mw, bits_w);
        const long long got = mb_dot_raw(ex.group(0), ew.group(0));
        const long long want = oracle::quantized_dot(x, w, bits_x, bits_w);
        if (got != want) {
            note << "trial " << t << ": got " << got << " want " << want << " (M=" << bits_x
                 << " K=" << bits_w << " N=" << len << ")";
            return;
        }
        ++trials;
    }
    note << "ok: " << trials << " integer-exact trials";
}

void zero_one_path(std::ostream& note) {
    std::mt19937_64 rng(0x0101);
    for (int t = 0; t < 1000; ++t) {
        const int bits_x = 1 + int(rng() % 8);
        const int bits_w = 1 + int(rng() % 8);
        const int len = 1 + int(rng() % 1024);
        Matrix mx(1, len), mw(1, len);
        for (int i = 0; i < len; ++i) {
            mx(0, i) = uniform_signed(rng);
            mw(0, i) = uniform_signed(rng);
        }
        const EncodedMatrix ex = encode_rows(mx, bits_x);
        const EncodedMatrix ew = encode_rows(mw, bits_w);
        const Real a = dot_zero_one(ex.group(0), ew.group(0));
        const Real b = mb_dot(ex.group(0), ew.group(0));
        if (std::fabs(a - b) > 1e-9) {
            note << "trial " << t << ": |" << a << " - " << b << "| > 1e-9";
            return;
        }
    }
    note << "ok: 1000 instances within 1e-9";
}

void trig_agreement(std::ostream& note) {
    std::mt19937_64 rng(0x7416);
    long matched = 0;
    long tested = 0;
    while (tested < 1000000) {
        double x = uniform_signed(rng);
        if (tested % 5 == 1) {
            // concentrate samples around the band edges
            const double centers[] = {-2.0 / 3, 0.0, 2.0 / 3};
            x = centers[std::size_t(tested) % 3] + uniform_signed(rng) * 1e-5;
            if (x < -1 || x > 1) continue;
        }
        bool excluded = false;
        for (double b : {-2.0 / 3, 0.0, 2.0 / 3})
            if (std::fabs(x - b) <= 1e-9) excluded = true;
        if (excluded) continue;
        ++tested;
        const auto [low, high] = encode_trig2(x);
        const std::vector<int> general = encode_bits(x, 2);
        if (low == general[0] && high == general[1]) {
            ++matched;
        } else {
            note << "disagreement at x = " << x;
            return;
        }
    }
    note << "ok: " << matched << "/" << tested << " samples agree";
}

void encoder_gradients(std::ostream& note) {
    const auto high_surrogate = [](double x) { return std::sin(0.75 * std::numbers::pi * x); };
    const auto low_surrogate = [](double x) { return -std::sin(1.5 * std::numbers::pi * x); };
    std::mt19937_64 rng(0x64AD);
    for (int t = 0; t < 1000; ++t) {
        const double x = uniform_signed(rng) * 0.999999;
        const double fd_high = oracle::central_diff(high_surrogate, x, 1e-6);
        const double fd_low = oracle::central_diff(low_surrogate, x, 1e-6);
        if (std::fabs(encoder_grad_high(x) - fd_high) > 1e-5) {
            note << "high grad off at x = " << x;
            return;
        }
        if (std::fabs(encoder_grad_low(x) - fd_low) > 1e-5) {
            note << "low grad off at x = " << x;
            return;
        }
    }
    for (double x : {1.0 + 1e-9, -1.0 - 1e-9, 2.0, -5.0})
        if (encoder_grad_high(x) != 0.0 || encoder_grad_low(x) != 0.0) {
            note << "gradient leaks outside the clip region at x = " << x;
            return;
        }
    note << "ok: 1000 interior points within 1e-5, hard zero outside";
}

void forward_equivalence(std::ostream& note) {
    std::mt19937_64 rng(0xF0CA);
    for (int bits : {1, 2, 3, 8}) {
        const FloatModel net = mlp3(bits, 400 + unsigned(bits));
        const MbnPlan plan = decompose_model(quantize_model(net));
        const Matrix batch = random_matrix(rng, 16, 8, 1.25);
        const Matrix direct = forward_quantized(net, batch);
        const Matrix bitwise = infer(plan, batch, 3);
        for (Index i = 0; i < direct.size(); ++i)
            if (std::fabs(direct.reshaped()[i] - bitwise.reshaped()[i]) > 1e-5) {
                note << "bits " << bits << ": element " << i << " drifts "
                     << std::fabs(direct.reshaped()[i] - bitwise.reshaped()[i]);
                return;
            }
    }
    note << "ok: (1,1) (2,2) (3,3) (8,8) within 1e-5";
}

void blob_training(std::ostream& note) {
    const Dataset data = make_blobs(100, 7);
    const PrecisionConfig p{2, 2, Limiter::HTanh};
    ModelSpec spec;
    spec.input_shape = {2};
    spec.layers = {LayerSpec::fully_connected(2, 16, p), LayerSpec::fully_connected(16, 3, p)};

    const TrainOptions options{.batch_size = 32, .quantize = true};
    FloatModel quant = random_mlp(spec, 7);
    OptimizerState qopt = make_optimizer(quant, {.learning_rate = 0.01});
    int epochs_used = 0;
    Real quant_acc = 0;
    for (int epoch = 1; epoch <= 200; ++epoch) {
        train_epoch(quant, qopt, data, options);
        epochs_used = epoch;
        quant_acc = evaluate(quant, data, true).accuracy;
        if (quant_acc >= 0.95) break;
    }

    FloatModel base = random_mlp(spec, 7);
    OptimizerState bopt = make_optimizer(base, {.learning_rate = 0.01});
    const TrainOptions float_options{.batch_size = 32, .quantize = false};
    Real float_acc = 0;
    for (int epoch = 1; epoch <= 200; ++epoch) {
        train_epoch(base, bopt, data, float_options);
        float_acc = evaluate(base, data, false).accuracy;
        if (float_acc >= 1.0) break;
    }

    if (quant_acc < 0.95) {
        note << "quantized accuracy " << quant_acc << " after 200 epochs";
        return;
    }
    if (float_acc - quant_acc > 0.03) {
        note << "float gap " << (float_acc - quant_acc) << " exceeds 3 points";
        return;
    }
    note << "ok: " << quant_acc * 100 << "% in " << epochs_used << " epochs, float at "
         << float_acc * 100 << "%";
}

void progressive_lowering(std::ostream& note) {
    Scratch scratch;
    // 4-bit donor trained on the shared dataset
    const Dataset data = make_blobs(60, 21);
    const PrecisionConfig p{4, 4, Limiter::HTanh};
    ModelSpec spec;
    spec.input_shape = {2};
    spec.layers = {LayerSpec::fully_connected(2, 16, p), LayerSpec::fully_connected(16, 3, p)};
    FloatModel donor = random_mlp(spec, 17);
    OptimizerState opt = make_optimizer(donor);
    for (int epoch = 0; epoch < 40; ++epoch) train_epoch(donor, opt, data, {.batch_size = 32});
    const std::string donor_path = scratch.file("donor.mbqn");
    save_model(donor, donor_path);

    const std::string config_path = scratch.file("lower.json");
    {
        std::ofstream out(config_path);
        out << R"({
            "batch_size": 32, "optimizer": "auto",
            "bits_act": 4, "bits_weight": 4,
            "layers": [ {"out": 16}, {"out": 3} ],
            "dataset": {"kind": "blobs", "per_class": 60, "seed": 21}
        })";
    }
    const std::string report_path = scratch.file("report.json");
    const int code = run_cli("lower --model " + donor_path + " --config " + config_path +
                                 " --to 3 --epochs 20 --out " + report_path,
                             scratch.file("out.txt"), scratch.file("err.txt"));
    if (code != 0) {
        std::ifstream err(scratch.file("err.txt"));
        std::ostringstream buf;
        buf << err.rdbuf();
        note << "lower command exited " << code << ": " << buf.str();
        return;
    }
    std::ifstream report_in(report_path);
    const nlohmann::json report = nlohmann::json::parse(report_in);
    const int warm_epochs = report.at("warm").at("epochs_to_target").get<int>();
    const int random_epochs = report.at("random").at("epochs_to_target").get<int>();
    if (!report.at("warm_reached").get<bool>() || warm_epochs < 0 || warm_epochs > 20) {
        note << "warm start missed the donor loss band: epochs_to_target = " << warm_epochs;
        return;
    }
    if (!report.at("warm_faster").get<bool>()) {
        note << "warm start was not faster: warm " << warm_epochs << " vs random " << random_epochs;
        return;
    }
    note << "ok: warm " << warm_epochs << " epochs, random "
         << (random_epochs < 0 ? std::string("never") : std::to_string(random_epochs))
         << ", donor loss " << report.at("donor_loss").get<double>();
}

void plane_footprint(std::ostream& note) {
    const PrecisionConfig p{1, 1, Limiter::HTanh};
    FloatModel net;
    net.spec.input_shape = {1024};
    net.spec.layers = {LayerSpec::fully_connected(1024, 1024, p)};
    net.weights = {Matrix::Constant(1024, 1024, -0.25)};
    net.biases = {Vector{}};
    if (plane_payload_bytes(net.spec.layers[0]) != 131072) {
        note << "computed payload " << plane_payload_bytes(net.spec.layers[0]);
        return;
    }
    Scratch scratch;
    const std::string path = scratch.file("planes.mbqn");
    save_model(decompose_model(quantize_model(net)), path);
    std::ifstream in(path, std::ios::binary);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    std::uint64_t json_len = 0;
    for (int i = 0; i < 8; ++i) json_len |= std::uint64_t(bytes.at(8 + std::size_t(i))) << (8 * i);
    std::size_t offset = 16 + json_len;
    offset += (8 - offset % 8) % 8;
    const std::size_t payload = bytes.size() - offset - 8 /*plane length*/ - 8 /*checksum*/;
    if (payload != 131072) {
        note << "file payload " << payload << " bytes";
        return;
    }
    note << "ok: 131072 payload bytes in a " << bytes.size() << "-byte file";
}

void packed_speedup(std::ostream& note) {
    BenchOptions options;
    options.dot_lengths = {1 << 20};
    options.repetitions = 5;
    options.gemm_rows = 32; // the gemm legs are not under test here
    options.gemm_cols = 32;
    options.gemm_inner = 64;
    options.gemm_bits = {2};
    const BenchReport report = run_bench(options);
    const double speedup = report.bitdot_speedup();
    if (speedup < 4.0) {
        note << "speedup " << speedup << "x below 4x";
        return;
    }
    note << "ok: " << speedup << "x over the scalar float dot";
}

void model_round_trips(std::ostream& note) {
    Scratch scratch;
    std::mt19937_64 rng(0x10AD);
    const auto slurp = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    };
    for (int bits = 1; bits <= 8; ++bits) {
        for (bool bias : {false, true}) {
            const PrecisionConfig p{bits, bits, Limiter::HTanh};
            ConvGeometry geom{.in_channels = 2, .out_channels = 3, .kernel_h = 3, .kernel_w = 3,
                              .stride = 1, .padding = 1};
            FloatModel net;
            net.spec.input_shape = {2, 4, 4};
            net.spec.layers = {LayerSpec::conv2d(geom, p, bias),
                               LayerSpec::fully_connected(3 * 4 * 4, 5, p, bias)};
            for (const LayerSpec& layer : net.spec.layers) {
                Matrix w(layer.weight_rows(), layer.weight_cols());
                for (Index i = 0; i < w.size(); ++i) w.reshaped()[i] = Real(float(uniform_signed(rng)));
                net.weights.push_back(std::move(w));
                if (bias) {
                    Vector b(layer.weight_rows());
                    for (Index i = 0; i < b.size(); ++i) b[i] = Real(float(uniform_signed(rng) / 4));
                    net.biases.push_back(std::move(b));
                } else {
                    net.biases.emplace_back();
                }
            }
            const QuantizedModel qm = quantize_model(net);
            const std::vector<Model> forms = {Model{net}, Model{qm}, Model{decompose_model(qm)}};
            for (const Model& form : forms) {
                const std::string f1 = scratch.file("a.mbqn"), f2 = scratch.file("b.mbqn");
                save_model(form, f1);
                save_model(load_model(f1), f2);
                if (slurp(f1) != slurp(f2)) {
                    note << "re-save differs: bits " << bits << " bias " << bias << " storage "
                         << storage_name(form.storage());
                    return;
                }
            }
            // corrupt one payload byte; the checksum must catch it
            const std::string victim = scratch.file("victim.mbqn");
            save_model(decompose_model(qm), victim);
            std::vector<unsigned char> bytes = slurp(victim);
            bytes[bytes.size() / 2] ^= 0x10;
            std::ofstream out(victim, std::ios::binary | std::ios::trunc);
            out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
            out.close();
            bool rejected = false;
            try {
                load_model(victim);
            } catch (const std::runtime_error&) {
                rejected = true;
            }
            if (!rejected) {
                note << "corrupted file loaded at bits " << bits;
                return;
            }
        }
    }
    note << "ok: 8 widths x 2 kinds x 3 storages, corruption rejected";
}

} // namespace

int main() {
    Gate gate;
    gate.run(1, "two-bit code table and scale denominator", 1.0, table_codes);
    gate.run(2, "bit-plane dot exact against integer oracle (10k trials)", 60.0, dot_exactness);
    gate.run(3, "{0,1} rewrite matches the sign path (1k instances)", 0, zero_one_path);
    gate.run(4, "trig encoder agrees with the general encoder (1M samples)", 0, trig_agreement);
    gate.run(5, "encoder gradients match central differences", 0, encoder_gradients);
    gate.run(6, "training forward equals decomposed inference", 0, forward_equivalence);
    gate.run(7, "two-bit blob training reaches 95% within 200 epochs", 120.0, blob_training);
    gate.run(8, "warm 3-bit start recovers the 4-bit donor loss faster", 0, progressive_lowering);
    gate.run(9, "one-bit 1024x1024 planes store 131072 payload bytes", 0, plane_footprint);
    gate.run(10, "packed dot is at least 4x the scalar float dot", 0, packed_speedup);
    gate.run(11, "model files round trip byte-identically, corruption rejected", 0, model_round_trips);

    if (gate.failures == 0) {
        std::printf("all acceptance checks passed\n");
        return 0;
    }
    std::printf("%d acceptance check(s) failed\n", gate.failures);
    return 1;
}
