#include "oraclead/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace oraclead {

namespace {

constexpr char kMagic[8] = {'O', 'R', 'A', 'C', 'L', 'E', 'A', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}
void put_u32(std::ostream& out, std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 4);
}
void put_u16(std::ostream& out, std::uint16_t v) {
    char buf[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(buf, 2);
}
void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }
void put_f64(std::ostream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    put_u64(out, bits);
}
void put_f64_array(std::ostream& out, const double* xs, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) put_f64(out, xs[i]);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}
std::uint32_t get_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}
std::uint16_t get_u16(std::istream& in) {
    unsigned char buf[2];
    in.read(reinterpret_cast<char*>(buf), 2);
    return static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
}
std::uint8_t get_u8(std::istream& in) {
    char c = 0;
    in.get(c);
    return static_cast<std::uint8_t>(c);
}
double get_f64(std::istream& in) {
    const std::uint64_t bits = get_u64(in);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

void write_manifest(const std::string& path, const TrainedModel& tm) {
    nlohmann::json j;
    j["format"] = "oraclead-checkpoint";
    j["version"] = kVersion;
    const ModelConfig& cfg = tm.model.config();
    j["config"] = {{"n_vars", cfg.n_vars},
                   {"window", cfg.window},
                   {"hidden_dim", cfg.hidden_dim},
                   {"n_heads", cfg.n_heads},
                   {"n_layers", cfg.n_layers},
                   {"per_variable_pooling", cfg.per_variable_pooling},
                   {"seed", cfg.seed}};
    j["metric"] = metric_name(tm.metric);
    j["standardizer"] = {{"n_vars", tm.standardizer.mean.size()}};
    j["sls"] = {{"n_vars", tm.sls.values.rows}, {"n_windows", tm.sls.n_windows}, {"epoch", tm.sls.epoch}};
    j["optimizer"] = {{"type", "adamw"}, {"betas", {0.9, 0.999}}, {"eps", 1e-8}, {"weight_decay", 0.01}};
    nlohmann::json tensors = nlohmann::json::array();
    for (const TensorInfo& t : tm.model.tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    j["tensors"] = tensors;

    std::ofstream out(path);
    if (!out) throw std::invalid_argument("checkpoint: cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainedModel& tm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::invalid_argument("checkpoint: cannot write " + path);

    out.write(kMagic, 8);
    put_u32(out, kVersion);
    const ModelConfig& cfg = tm.model.config();
    put_u32(out, static_cast<std::uint32_t>(cfg.n_vars));
    put_u32(out, static_cast<std::uint32_t>(cfg.window));
    put_u32(out, static_cast<std::uint32_t>(cfg.hidden_dim));
    put_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
    put_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
    put_u8(out, cfg.per_variable_pooling ? 1 : 0);
    put_u64(out, cfg.seed);
    put_u8(out, static_cast<std::uint8_t>(tm.metric));

    put_u32(out, static_cast<std::uint32_t>(tm.standardizer.mean.size()));
    put_f64_array(out, tm.standardizer.mean.data(), tm.standardizer.mean.size());
    put_f64_array(out, tm.standardizer.std.data(), tm.standardizer.std.size());

    put_u32(out, static_cast<std::uint32_t>(tm.sls.values.rows));
    put_u64(out, tm.sls.n_windows);
    put_u32(out, static_cast<std::uint32_t>(tm.sls.epoch));
    put_f64_array(out, tm.sls.values.v.data(), tm.sls.values.v.size());

    const auto tensors = tm.model.tensors();
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const TensorInfo& t : tensors) {
        put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
        for (const std::size_t dim : t.shape) put_u64(out, dim);
        put_f64_array(out, tm.model.params().data() + t.offset, t.size);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
    out.close();

    write_manifest(path + ".manifest.json", tm);
}

TrainedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("checkpoint: cannot open " + path);

    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::invalid_argument("checkpoint: bad magic in " + path);
    const std::uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));

    const auto check_stream = [&]() {
        if (!in) throw std::invalid_argument("checkpoint: truncated file " + path);
    };

    ModelConfig cfg;
    cfg.n_vars = get_u32(in);
    cfg.window = get_u32(in);
    cfg.hidden_dim = get_u32(in);
    cfg.n_heads = get_u32(in);
    cfg.n_layers = get_u32(in);
    cfg.per_variable_pooling = get_u8(in) != 0;
    cfg.seed = get_u64(in);
    check_stream();

    TrainedModel tm;
    tm.metric = static_cast<DistanceMetric>(get_u8(in));
    tm.model = OracleModel(cfg);

    const std::uint32_t n_std = get_u32(in);
    check_stream();
    if (n_std != cfg.n_vars) throw std::invalid_argument("checkpoint: standardizer size mismatch in " + path);
    tm.standardizer.mean.resize(n_std);
    tm.standardizer.std.resize(n_std);
    for (auto& x : tm.standardizer.mean) x = get_f64(in);
    for (auto& x : tm.standardizer.std) x = get_f64(in);

    const std::uint32_t n_sls = get_u32(in);
    check_stream();
    if (n_sls != cfg.n_vars) throw std::invalid_argument("checkpoint: SLS size mismatch in " + path);
    tm.sls.n_windows = get_u64(in);
    tm.sls.epoch = get_u32(in);
    tm.sls.values = Mat(n_sls, n_sls);
    for (auto& x : tm.sls.values.v) x = get_f64(in);

    const std::uint32_t n_tensors = get_u32(in);
    check_stream();
    const auto tensors = tm.model.tensors();
    if (n_tensors != tensors.size())
        throw std::invalid_argument("checkpoint: tensor count mismatch in " + path);
    for (const TensorInfo& t : tensors) {
        const std::uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != t.name)
            throw std::invalid_argument("checkpoint: tensor '" + name + "' does not match expected '" +
                                        t.name + "'");
        const std::uint8_t ndim = get_u8(in);
        if (ndim != t.shape.size()) throw std::invalid_argument("checkpoint: rank mismatch for " + name);
        for (const std::size_t dim : t.shape)
            if (get_u64(in) != dim) throw std::invalid_argument("checkpoint: shape mismatch for " + name);
        for (std::size_t k = 0; k < t.size; ++k) tm.model.params()[t.offset + k] = get_f64(in);
    }
    if (!in) throw std::invalid_argument("checkpoint: truncated file " + path);
    return tm;
}

}  // namespace oraclead
