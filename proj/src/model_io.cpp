#include "mbqn/model_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mbqn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'B', 'Q', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

// ---- little-endian buffer writer / reader ----

struct Writer {
    std::vector<unsigned char> bytes;

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i)
            bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void i16(std::int16_t v) {
        const auto u = static_cast<std::uint16_t>(v);
        bytes.push_back(static_cast<unsigned char>(u & 0xff));
        bytes.push_back(static_cast<unsigned char>(u >> 8));
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void pad_to8() {
        while (bytes.size() % 8 != 0)
            bytes.push_back(0);
    }
};

struct Reader {
    std::span<const unsigned char> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size())
            throw std::runtime_error("model file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::int16_t i16() {
        need(2);
        const auto u = std::uint16_t(bytes[pos] | (std::uint16_t(bytes[pos + 1]) << 8));
        pos += 2;
        return static_cast<std::int16_t>(u);
    }
    float f32() {
        const std::uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    void skip_pad8() {
        while (pos % 8 != 0) {
            need(1);
            ++pos;
        }
    }
};

// ---- spec <-> json ----

json layer_to_json(const LayerSpec& layer) {
    json j;
    j["bits_act"] = layer.precision.bits_act;
    j["bits_weight"] = layer.precision.bits_weight;
    j["limiter"] = limiter_name(layer.precision.limiter);
    j["bias"] = layer.has_bias;
    if (layer.kind == LayerKind::FullyConnected) {
        j["kind"] = "fully_connected";
        j["in"] = layer.in_features;
        j["out"] = layer.out_features;
    } else {
        j["kind"] = "conv2d";
        j["in_channels"] = layer.conv.in_channels;
        j["out_channels"] = layer.conv.out_channels;
        j["kernel_h"] = layer.conv.kernel_h;
        j["kernel_w"] = layer.conv.kernel_w;
        j["stride"] = layer.conv.stride;
        j["padding"] = layer.conv.padding;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec layer;
    PrecisionConfig p;
    p.bits_act = j.at("bits_act").get<int>();
    p.bits_weight = j.at("bits_weight").get<int>();
    p.limiter = limiter_from_name(j.at("limiter").get<std::string>());
    const bool bias = j.at("bias").get<bool>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fully_connected")
        return LayerSpec::fully_connected(j.at("in").get<int>(), j.at("out").get<int>(), p, bias);
    if (kind == "conv2d") {
        ConvGeometry geom;
        geom.in_channels = j.at("in_channels").get<int>();
        geom.out_channels = j.at("out_channels").get<int>();
        geom.kernel_h = j.at("kernel_h").get<int>();
        geom.kernel_w = j.at("kernel_w").get<int>();
        geom.stride = j.at("stride").get<int>();
        geom.padding = j.at("padding").get<int>();
        return LayerSpec::conv2d(geom, p, bias);
    }
    throw std::runtime_error("model header: unknown layer kind '" + kind + "'");
}

json header_json(const ModelSpec& spec, Storage storage) {
    json j;
    j["name"] = spec.name;
    j["version"] = spec.version;
    j["storage"] = storage_name(storage);
    j["input_shape"] = json::array();
    for (Index d : spec.input_shape)
        j["input_shape"].push_back(d);
    j["layers"] = json::array();
    for (const LayerSpec& layer : spec.layers)
        j["layers"].push_back(layer_to_json(layer));
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.version = j.at("version").get<std::uint32_t>();
    for (const auto& d : j.at("input_shape"))
        spec.input_shape.push_back(d.get<Index>());
    for (const auto& l : j.at("layers"))
        spec.layers.push_back(layer_from_json(l));
    return spec;
}

// ---- payloads ----

void write_bias(Writer& w, const LayerSpec& spec, const Vector& bias) {
    if (!spec.has_bias)
        return;
    if (bias.size() != spec.weight_rows())
        throw std::invalid_argument("save_model: bias size does not match layer");
    w.u64(std::uint64_t(bias.size()));
    for (Index i = 0; i < bias.size(); ++i)
        w.f32(float(bias[i]));
}

Vector read_bias(Reader& r, const LayerSpec& spec) {
    if (!spec.has_bias)
        return {};
    const std::uint64_t count = r.u64();
    if (count != std::uint64_t(spec.weight_rows()))
        throw std::runtime_error("model file: bias count mismatch");
    auto b = Vector(Index(count));
    for (Index i = 0; i < b.size(); ++i)
        b[i] = r.f32();
    return b;
}

void write_float_layer(Writer& w, const LayerSpec& spec, const Matrix& weights, const Vector& bias) {
    w.u64(std::uint64_t(weights.size()));
    for (Index r = 0; r < weights.rows(); ++r)
        for (Index c = 0; c < weights.cols(); ++c)
            w.f32(float(weights(r, c)));
    write_bias(w, spec, bias);
    w.pad_to8();
}

void write_quantized_layer(Writer& w, const LayerSpec& spec, const IntMatrix& weights, const Vector& bias) {
    w.u64(std::uint64_t(weights.size()));
    for (Index r = 0; r < weights.rows(); ++r)
        for (Index c = 0; c < weights.cols(); ++c)
            w.i16(std::int16_t(weights(r, c)));
    write_bias(w, spec, bias);
    w.pad_to8();
}

void write_plane_layer(Writer& w, const PlanLayer& layer) {
    const EncodedMatrix& enc = layer.weight_planes;
    w.u64(std::uint64_t(enc.cols)); // shared plane length
    for (const PackedPlane& plane : enc.planes)
        for (std::uint64_t word : plane.words())
            w.u64(word);
    write_bias(w, layer.spec, layer.bias);
    w.pad_to8();
}

Matrix read_float_layer(Reader& r, const LayerSpec& spec) {
    const std::uint64_t count = r.u64();
    if (count != std::uint64_t(spec.weight_rows() * spec.weight_cols()))
        throw std::runtime_error("model file: weight count mismatch");
    Matrix w(spec.weight_rows(), spec.weight_cols());
    for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j)
            w(i, j) = r.f32();
    return w;
}

IntMatrix read_quantized_layer(Reader& r, const LayerSpec& spec) {
    const std::uint64_t count = r.u64();
    if (count != std::uint64_t(spec.weight_rows() * spec.weight_cols()))
        throw std::runtime_error("model file: weight count mismatch");
    IntMatrix w(spec.weight_rows(), spec.weight_cols());
    for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j)
            w(i, j) = r.i16();
    return w;
}

EncodedMatrix read_plane_layer(Reader& r, const LayerSpec& spec) {
    const std::uint64_t plane_len = r.u64();
    if (plane_len != std::uint64_t(spec.weight_cols()))
        throw std::runtime_error("model file: plane length does not match layer fan-in");
    EncodedMatrix enc;
    enc.rows = spec.weight_rows();
    enc.cols = spec.weight_cols();
    enc.bits = spec.precision.bits_weight;
    const std::uint64_t nwords = words_for(plane_len);
    for (Index g = 0; g < enc.rows; ++g)
        for (int k = 0; k < enc.bits; ++k) {
            std::vector<std::uint64_t> words(nwords);
            for (auto& word : words)
                word = r.u64();
            enc.planes.push_back(PackedPlane::from_words(std::move(words), plane_len));
        }
    return enc;
}

std::vector<unsigned char> serialize(const Model& model) {
    const ModelSpec& spec = model.spec();
    spec.validate();
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kFormatVersion);
    const std::string header = header_json(spec, model.storage()).dump();
    w.u64(header.size());
    w.raw(header.data(), header.size());
    w.pad_to8();

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        switch (model.storage()) {
        case Storage::Float32: {
            const FloatModel& fm = model.as_float();
            write_float_layer(w, spec.layers[i], fm.weights.at(i),
                              fm.biases.empty() ? Vector() : fm.biases.at(i));
            break;
        }
        case Storage::Quantized: {
            const QuantizedModel& qm = model.as_quantized();
            write_quantized_layer(w, spec.layers[i], qm.weights.at(i),
                                  qm.biases.empty() ? Vector() : qm.biases.at(i));
            break;
        }
        case Storage::Planes:
            write_plane_layer(w, model.as_plan().layers.at(i));
            break;
        }
    }
    w.u64(fnv1a64(w.bytes));
    return std::move(w.bytes);
}

Model deserialize(std::span<const unsigned char> bytes) {
    if (bytes.size() < 24)
        throw std::runtime_error("model file truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("model file: bad magic bytes");

    // Verify the trailing checksum before trusting anything else.
    Reader trailer{bytes, bytes.size() - 8};
    const std::uint64_t stored = trailer.u64();
    const std::uint64_t computed = fnv1a64(bytes.subspan(0, bytes.size() - 8));
    if (stored != computed)
        throw std::runtime_error("model file: checksum mismatch");

    Reader r{bytes.subspan(0, bytes.size() - 8)};
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion)
        throw std::runtime_error("model file: unsupported format version " + std::to_string(version));
    const std::uint64_t header_len = r.u64();
    r.need(header_len);
    const json header = json::parse(r.bytes.subspan(r.pos, header_len), nullptr, /*allow_exceptions=*/true);
    r.pos += header_len;
    r.skip_pad8();

    ModelSpec spec = spec_from_json(header);
    spec.validate();
    const Storage storage = storage_from_name(header.at("storage").get<std::string>());

    switch (storage) {
    case Storage::Float32: {
        FloatModel fm;
        fm.spec = spec;
        for (const LayerSpec& layer : spec.layers) {
            fm.weights.push_back(read_float_layer(r, layer));
            fm.biases.push_back(read_bias(r, layer));
            r.skip_pad8();
        }
        return Model{std::move(fm)};
    }
    case Storage::Quantized: {
        QuantizedModel qm;
        qm.spec = spec;
        for (const LayerSpec& layer : spec.layers) {
            qm.weights.push_back(read_quantized_layer(r, layer));
            qm.biases.push_back(read_bias(r, layer));
            r.skip_pad8();
        }
        return Model{std::move(qm)};
    }
    case Storage::Planes: {
        MbnPlan plan;
        plan.spec = spec;
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            PlanLayer layer;
            layer.spec = spec.layers[i];
            layer.weight_planes = read_plane_layer(r, spec.layers[i]);
            layer.bias = read_bias(r, spec.layers[i]);
            const int m_bits = layer.spec.precision.bits_act;
            const int k_bits = layer.spec.precision.bits_weight;
            for (int m = 0; m < m_bits; ++m)
                for (int k = 0; k < k_bits; ++k)
                    layer.branch_weights.push_back(std::int64_t(1) << (m + k));
            layer.output_scale = Real(1) / (Real(level_denominator(m_bits)) * level_denominator(k_bits));
            plan.layers.push_back(std::move(layer));
            r.skip_pad8();
        }
        return Model{std::move(plan)};
    }
    }
    throw std::runtime_error("model file: unknown storage");
}

} // namespace

std::string storage_name(Storage s) {
    switch (s) {
    case Storage::Float32: return "float32";
    case Storage::Quantized: return "quantized";
    case Storage::Planes: return "planes";
    }
    throw std::invalid_argument("storage_name: unknown storage");
}

Storage storage_from_name(std::string_view name) {
    if (name == "float32") return Storage::Float32;
    if (name == "quantized") return Storage::Quantized;
    if (name == "planes") return Storage::Planes;
    throw std::runtime_error("unknown storage '" + std::string(name) + "'");
}

const ModelSpec& Model::spec() const {
    return std::visit([](const auto& m) -> const ModelSpec& { return m.spec; }, value);
}

const FloatModel& Model::as_float() const {
    if (storage() != Storage::Float32)
        throw std::runtime_error("model does not hold float32 weights");
    return std::get<FloatModel>(value);
}

const QuantizedModel& Model::as_quantized() const {
    if (storage() != Storage::Quantized)
        throw std::runtime_error("model does not hold quantized weights");
    return std::get<QuantizedModel>(value);
}

const MbnPlan& Model::as_plan() const {
    if (storage() != Storage::Planes)
        throw std::runtime_error("model does not hold packed planes");
    return std::get<MbnPlan>(value);
}

void save_model(const Model& model, const std::string& path) {
    const std::vector<unsigned char> bytes = serialize(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out)
        throw std::runtime_error("short write to '" + path + "'");
}

void save_model(const FloatModel& model, const std::string& path) { save_model(Model{model}, path); }
void save_model(const QuantizedModel& model, const std::string& path) { save_model(Model{model}, path); }
void save_model(const MbnPlan& plan, const std::string& path) { save_model(Model{plan}, path); }

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open model file '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::size_t plane_payload_bytes(const LayerSpec& spec) {
    return std::size_t(spec.weight_rows()) * spec.precision.bits_weight *
           words_for(std::uint64_t(spec.weight_cols())) * 8;
}

std::uint64_t TensorFile::element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims)
        n *= d;
    return dims.empty() ? 0 : n;
}

void write_tensor(const std::string& path, const TensorFile& tensor) {
    if (tensor.values.size() != tensor.element_count())
        throw std::invalid_argument("write_tensor: value count does not match dims");
    Writer w;
    w.u64(tensor.dims.size());
    for (std::uint64_t d : tensor.dims)
        w.u64(d);
    for (float v : tensor.values)
        w.f32(v);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(w.bytes.data()), std::streamsize(w.bytes.size()));
    if (!out)
        throw std::runtime_error("short write to '" + path + "'");
}

TensorFile read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open tensor file '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{bytes};
    TensorFile t;
    const std::uint64_t rank = r.u64();
    if (rank == 0 || rank > 8)
        throw std::runtime_error("tensor file: rank must be in [1,8]");
    t.dims.resize(rank);
    for (auto& d : t.dims)
        d = r.u64();
    t.values.resize(t.element_count());
    for (auto& v : t.values)
        v = r.f32();
    if (r.pos != bytes.size())
        throw std::runtime_error("tensor file: trailing bytes");
    return t;
}

Matrix tensor_as_batch(const TensorFile& tensor) {
    std::uint64_t batch = 1;
    std::uint64_t features = tensor.element_count();
    if (tensor.dims.size() == 2 || tensor.dims.size() == 4) {
        batch = tensor.dims[0];
        features = batch == 0 ? 0 : features / batch;
    }
    auto m = Matrix(Index(batch), Index(features));
    for (std::uint64_t b = 0; b < batch; ++b)
        for (std::uint64_t f = 0; f < features; ++f)
            m(Index(b), Index(f)) = tensor.values[b * features + f];
    return m;
}

TensorFile batch_as_tensor(const Eigen::Ref<const Matrix>& batch) {
    TensorFile t;
    t.dims = {std::uint64_t(batch.rows()), std::uint64_t(batch.cols())};
    t.values.reserve(std::size_t(batch.size()));
    for (Index r = 0; r < batch.rows(); ++r)
        for (Index c = 0; c < batch.cols(); ++c)
            t.values.push_back(float(batch(r, c)));
    return t;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace mbqn
