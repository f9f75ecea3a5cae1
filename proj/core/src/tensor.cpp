#include "muscl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace muscl {

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    for (std::size_t d : shape_) {
        if (d == 0) throw std::invalid_argument("Tensor: zero dimension in shape " + shape_str(shape_));
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::item() const {
    if (size() != 1) throw std::runtime_error("Tensor::item: tensor of shape " + shape_str(shape_) + " is not scalar");
    return data_[0];
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
        throw std::runtime_error(std::string("non-finite output in op '") + op + "'");
}

namespace {

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
    if (!is) throw std::runtime_error("read_tensor: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("read_tensor: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write("MUT0", 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(os, d);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits;
        double v = t[i];
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MUT0", 4) != 0)
        throw std::runtime_error("read_tensor: bad magic (expected MUT0)");
    std::uint32_t rank = get_u32(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is));
    std::vector<double> data(shape_product(shape));
    for (auto& v : data) {
        std::uint64_t bits = get_u64(is);
        std::memcpy(&v, &bits, 8);
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace muscl
