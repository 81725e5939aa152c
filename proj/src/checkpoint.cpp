#include "mvprior/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace mvprior {

namespace {

constexpr const char* kFormatTag = "mvprior-checkpoint-1";

void write_f32_le(std::ostream& os, const std::vector<double>& values) {
    std::vector<unsigned char> buf(values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        buf[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(std::istream& is, std::vector<double>& values) {
    std::vector<unsigned char> buf(values.size() * 4);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(is.gcount()) != buf.size()) {
        throw DataError("checkpoint payload truncated");
    }
    for (size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = static_cast<double>(f);
    }
}

void check_same_layout(const ParamSet& a, const ParamSet& b, const char* what) {
    if (a.tensors.size() != b.tensors.size()) {
        throw DataError(std::string("checkpoint ") + what + " tensor count mismatch");
    }
    for (size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].name != b.tensors[i].name ||
            a.tensors[i].shape != b.tensors[i].shape) {
            throw DataError(std::string("checkpoint ") + what +
                            " tensor layout mismatch at " + a.tensors[i].name);
        }
    }
}

}  // namespace

void quantize_f32(ParamSet& p) {
    for (Tensor& t : p.tensors) {
        for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
    }
}

void save_checkpoint(const std::string& path, Checkpoint& ck) {
    check_same_layout(ck.params, ck.opt_m, "optimizer m");
    check_same_layout(ck.params, ck.opt_v, "optimizer v");

    nlohmann::json header;
    header["format"] = kFormatTag;
    header["variant"] = variant_name(ck.config.variant);
    header["patch"] = ck.config.patch;
    header["in_channels"] = ck.config.in_channels;
    header["seed"] = ck.seed;
    header["step"] = ck.step;
    nlohmann::json tensors = nlohmann::json::array();
    for (const Tensor& t : ck.params.tensors) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    }
    header["tensors"] = std::move(tensors);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint file for writing: " + path);
    os << header.dump() << '\n';
    for (ParamSet* set : {&ck.params, &ck.opt_m, &ck.opt_v}) {
        for (const Tensor& t : set->tensors) write_f32_le(os, t.data);
    }
    if (!os) throw DataError("failed writing checkpoint: " + path);
    os.close();

    quantize_f32(ck.params);
    quantize_f32(ck.opt_m);
    quantize_f32(ck.opt_v);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("checkpoint missing header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    Checkpoint ck;
    try {
        if (header.at("format").get<std::string>() != kFormatTag) {
            throw DataError("unrecognized checkpoint format tag");
        }
        ck.config.variant = variant_from_name(header.at("variant").get<std::string>());
        ck.config.patch = header.at("patch").get<int>();
        ck.config.in_channels = header.at("in_channels").get<int>();
        ck.seed = header.at("seed").get<std::uint64_t>();
        ck.step = header.at("step").get<int>();

        for (const auto& tj : header.at("tensors")) {
            Tensor t;
            t.name = tj.at("name").get<std::string>();
            t.shape = tj.at("shape").get<std::vector<int>>();
            std::int64_t n = 1;
            for (int d : t.shape) {
                if (d < 1) throw DataError("checkpoint tensor with non-positive dim");
                n *= d;
            }
            t.data.assign(static_cast<size_t>(n), 0.0);
            ck.params.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header missing field: " + std::string(e.what()));
    }
    if (ck.params.tensors.empty()) throw DataError("checkpoint lists no tensors");

    validate_config(ck.config);
    ck.opt_m = ck.params.zeros_like();
    ck.opt_v = ck.params.zeros_like();
    for (ParamSet* set : {&ck.params, &ck.opt_m, &ck.opt_v}) {
        for (Tensor& t : set->tensors) read_f32_le(is, t.data);
    }
    char extra;
    if (is.read(&extra, 1)) throw DataError("checkpoint has trailing bytes: " + path);
    return ck;
}

}  // namespace mvprior
