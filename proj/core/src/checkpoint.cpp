#include "muscl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace muscl::harness {

namespace {

constexpr char kMagic[] = "MUSCLCKPT";
constexpr std::size_t kMagicLen = 9;
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_named_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
}

std::string config_value(const std::string& text, const std::string& key) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string k = line.substr(0, eq);
        while (!k.empty() && (k.back() == ' ' || k.back() == '\t')) k.pop_back();
        if (k != key) continue;
        std::string v = line.substr(eq + 1);
        std::size_t s = v.find_first_not_of(" \t");
        return s == std::string::npos ? "" : v.substr(s);
    }
    throw std::runtime_error("checkpoint: config blob has no '" + key + "' entry");
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    os.write(kMagic, kMagicLen);
    put_u32(os, ckpt.version);
    put_u64(os, ckpt.step);
    put_u32(os, static_cast<std::uint32_t>(ckpt.config_text.size()));
    os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));

    std::uint64_t n = ckpt.model.params.count() +
                      (ckpt.weight_net ? ckpt.weight_net->params.count() : 0);
    put_u64(os, n);
    for (std::size_t i = 0; i < ckpt.model.params.count(); ++i)
        put_named_tensor(os, "model." + ckpt.model.params.names[i], ckpt.model.params.values[i]);
    if (ckpt.weight_net)
        for (std::size_t i = 0; i < ckpt.weight_net->params.count(); ++i)
            put_named_tensor(os, "weightnet." + ckpt.weight_net->params.names[i],
                             ckpt.weight_net->params.values[i]);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    char magic[kMagicLen];
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint (bad magic)");
    Checkpoint ckpt;
    ckpt.version = get_u32(is);
    if (ckpt.version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(ckpt.version) + " in '" + path + "'");
    ckpt.step = get_u64(is);
    std::uint32_t clen = get_u32(is);
    ckpt.config_text.resize(clen);
    is.read(ckpt.config_text.data(), clen);
    if (!is) throw std::runtime_error("load_checkpoint: truncated config in '" + path + "'");

    ckpt.model.arch = nets::ArchConfig::deserialize(config_value(ckpt.config_text, "arch"));

    std::uint64_t n = get_u64(is);
    nets::ParamSet wn_params;
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t nlen = get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        if (!is) throw std::runtime_error("load_checkpoint: truncated tensor name in '" + path + "'");
        Tensor t = read_tensor(is);
        if (name.rfind("model.", 0) == 0) {
            ckpt.model.params.add(name.substr(6), std::move(t));
        } else if (name.rfind("weightnet.", 0) == 0) {
            wn_params.add(name.substr(10), std::move(t));
        } else {
            throw std::runtime_error("load_checkpoint: unexpected tensor '" + name + "'");
        }
    }
    if (wn_params.count() > 0) {
        nets::WeightNetParams wn;
        wn.repr_dim = ckpt.model.arch.repr_dim;
        wn.hidden = ckpt.model.arch.weightnet_hidden;
        wn.params = std::move(wn_params);
        ckpt.weight_net = std::move(wn);
    }
    return ckpt;
}

}  // namespace muscl::harness
