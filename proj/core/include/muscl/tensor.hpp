#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace muscl {

/// Dense row-major f64 tensor. Rank 0 (empty shape) is a scalar with one
/// element. All public operations keep elements finite; anything that could
/// produce NaN/Inf checks and throws.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);  // zero-filled
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty() && shape_.empty(); }
    bool is_scalar() const { return size() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// 2-D accessors (row-major).
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    double item() const;  // scalar value; throws if size != 1

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Throws std::runtime_error naming `op` if any element of t is NaN/Inf.
void require_finite(const Tensor& t, const char* op);

/// Binary tensor serialization: magic "MUT0", u32 rank, u64 dims, then
/// little-endian f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace muscl
