#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "leansplat/common.hpp"

namespace leansplat {

enum class DType : uint8_t { F64 = 0, F32 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::F64 ? "f64" : "f32"; }
inline size_t dtype_size(DType dt) { return dt == DType::F64 ? 8 : 4; }
DType dtype_from_name(const std::string& name);

// Dense row-major multidimensional array. Immutable once it has been handed
// to an op or published as a parameter; kernels fill freshly created arrays
// through raw() before that point.
class Array {
public:
    Array() = default;
    Array(std::vector<int64_t> shape, DType dtype);

    static Array zeros(std::vector<int64_t> shape, DType dtype = DType::F64);
    static Array full(std::vector<int64_t> shape, double value, DType dtype = DType::F64);
    static Array from(std::vector<int64_t> shape, const std::vector<double>& values,
                      DType dtype = DType::F64);
    static Array scalar_like(double value, DType dtype = DType::F64);

    bool defined() const { return storage_ != nullptr; }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(int i) const;
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return numel_; }
    DType dtype() const { return dtype_; }

    template <typename T>
    const T* data() const;
    template <typename T>
    T* raw();  // mutable access; for kernels constructing this array

    // Read element i (flattened index) as double regardless of dtype.
    double value_at(int64_t i) const;
    void set_value(int64_t i, double v);  // test/builder convenience
    double scalar() const;

    // Deep copy (fresh storage, fresh id, requires_grad cleared).
    Array clone() const;
    // Same storage, new shape, fresh id (graph ops give clones instead).
    Array as_dtype(DType dt) const;
    std::vector<double> to_vector() const;

    uint64_t id() const { return id_; }
    bool requires_grad() const { return requires_grad_; }
    Array& set_requires_grad(bool rg) {
        requires_grad_ = rg;
        return *this;
    }

    std::string shape_str() const;

private:
    struct Storage {
        std::vector<double> f64;
        std::vector<float> f32;
    };
    friend Array reshape_internal(const Array& a, std::vector<int64_t> shape, uint64_t new_id);

    std::shared_ptr<Storage> storage_;
    std::vector<int64_t> shape_;
    int64_t numel_ = 0;
    DType dtype_ = DType::F64;
    uint64_t id_ = 0;
    bool requires_grad_ = false;
};

uint64_t next_array_id();

// Throws NumericError naming `where` if any element is NaN/Inf.
void check_finite(const Array& a, const char* where);
bool finite_checks_enabled();
void set_finite_checks(bool on);

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Calls fn with a value of the scalar type matching dt (double or float).
template <typename F>
decltype(auto) dispatch_dtype(DType dt, F&& fn) {
    if (dt == DType::F64) return fn(double{});
    return fn(float{});
}

}  // namespace leansplat
