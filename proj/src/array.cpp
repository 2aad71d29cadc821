#include "leansplat/array.hpp"

#include <atomic>
#include <cmath>

#include "leansplat/threading.hpp"

namespace leansplat {

namespace {
std::atomic<uint64_t> g_next_id{1};
bool g_finite_checks = true;
}  // namespace

uint64_t next_array_id() { return g_next_id.fetch_add(1); }

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

DType dtype_from_name(const std::string& name) {
    if (name == "f64" || name == "float64" || name == "double") return DType::F64;
    if (name == "f32" || name == "float32" || name == "float") return DType::F32;
    throw DataError("unknown precision '" + name + "' (expected f64 or f32)");
}

int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Array::Array(std::vector<int64_t> shape, DType dtype)
    : storage_(std::make_shared<Storage>()),
      shape_(std::move(shape)),
      dtype_(dtype),
      id_(next_array_id()) {
    for (int64_t d : shape_) {
        LS_CHECK(d >= 0, "negative dimension in shape ", shape_to_string(shape_));
    }
    numel_ = numel_of(shape_);
    if (dtype_ == DType::F64) {
        storage_->f64.assign(static_cast<size_t>(numel_), 0.0);
    } else {
        storage_->f32.assign(static_cast<size_t>(numel_), 0.0f);
    }
}

Array Array::zeros(std::vector<int64_t> shape, DType dtype) {
    return Array(std::move(shape), dtype);
}

Array Array::full(std::vector<int64_t> shape, double value, DType dtype) {
    Array a(std::move(shape), dtype);
    if (dtype == DType::F64) {
        std::fill(a.storage_->f64.begin(), a.storage_->f64.end(), value);
    } else {
        std::fill(a.storage_->f32.begin(), a.storage_->f32.end(), static_cast<float>(value));
    }
    return a;
}

Array Array::from(std::vector<int64_t> shape, const std::vector<double>& values, DType dtype) {
    Array a(std::move(shape), dtype);
    LS_CHECK(a.numel() == static_cast<int64_t>(values.size()), "Array::from size mismatch: shape ",
             a.shape_str(), " vs ", values.size(), " values");
    for (int64_t i = 0; i < a.numel(); ++i) a.set_value(i, values[static_cast<size_t>(i)]);
    return a;
}

Array Array::scalar_like(double value, DType dtype) { return full({}, value, dtype); }

int64_t Array::dim(int i) const {
    if (i < 0) i += ndim();
    LS_CHECK(i >= 0 && i < ndim(), "dim index ", i, " out of range for ", shape_str());
    return shape_[static_cast<size_t>(i)];
}

template <>
const double* Array::data<double>() const {
    LS_CHECK(dtype_ == DType::F64, "dtype mismatch: array is ", dtype_name(dtype_));
    return storage_->f64.data();
}

template <>
const float* Array::data<float>() const {
    LS_CHECK(dtype_ == DType::F32, "dtype mismatch: array is ", dtype_name(dtype_));
    return storage_->f32.data();
}

template <>
double* Array::raw<double>() {
    LS_CHECK(dtype_ == DType::F64, "dtype mismatch: array is ", dtype_name(dtype_));
    return storage_->f64.data();
}

template <>
float* Array::raw<float>() {
    LS_CHECK(dtype_ == DType::F32, "dtype mismatch: array is ", dtype_name(dtype_));
    return storage_->f32.data();
}

double Array::value_at(int64_t i) const {
    return dtype_ == DType::F64 ? storage_->f64[static_cast<size_t>(i)]
                                : static_cast<double>(storage_->f32[static_cast<size_t>(i)]);
}

void Array::set_value(int64_t i, double v) {
    if (dtype_ == DType::F64) {
        storage_->f64[static_cast<size_t>(i)] = v;
    } else {
        storage_->f32[static_cast<size_t>(i)] = static_cast<float>(v);
    }
}

double Array::scalar() const {
    LS_CHECK(numel_ == 1, "scalar() on array of shape ", shape_str());
    return value_at(0);
}

Array Array::clone() const {
    Array out(shape_, dtype_);
    if (dtype_ == DType::F64) {
        out.storage_->f64 = storage_->f64;
    } else {
        out.storage_->f32 = storage_->f32;
    }
    return out;
}

Array Array::as_dtype(DType dt) const {
    if (dt == dtype_) return clone();
    Array out(shape_, dt);
    for (int64_t i = 0; i < numel_; ++i) out.set_value(i, value_at(i));
    return out;
}

std::vector<double> Array::to_vector() const {
    std::vector<double> v(static_cast<size_t>(numel_));
    for (int64_t i = 0; i < numel_; ++i) v[static_cast<size_t>(i)] = value_at(i);
    return v;
}

std::string Array::shape_str() const { return shape_to_string(shape_); }

Array reshape_internal(const Array& a, std::vector<int64_t> shape, uint64_t new_id) {
    Array out;
    out.storage_ = a.storage_;
    out.shape_ = std::move(shape);
    out.numel_ = numel_of(out.shape_);
    out.dtype_ = a.dtype_;
    out.id_ = new_id;
    LS_CHECK(out.numel_ == a.numel_, "reshape numel mismatch: ", a.shape_str(), " -> ",
             out.shape_str());
    return out;
}

void check_finite(const Array& a, const char* where) {
    if (!g_finite_checks || !a.defined()) return;
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* p = a.data<T>();
        const int64_t n = a.numel();
        std::atomic<int64_t> bad{-1};
        parallel_for(n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                if (!std::isfinite(p[i])) {
                    bad.store(i);
                    return;
                }
            }
        });
        int64_t b = bad.load();
        if (b >= 0) {
            throw NumericError(detail::format_msg("non-finite value ", a.value_at(b), " at flat index ",
                                                  b, " produced by '", where, "' (shape ",
                                                  a.shape_str(), ")"));
        }
    });
}

}  // namespace leansplat
