#define EIGEN_DONT_PARALLELIZE
#include "leansplat/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "leansplat/threading.hpp"

namespace leansplat::ops {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

std::vector<int64_t> contiguous_strides(const std::vector<int64_t>& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        s[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return s;
}

std::vector<int64_t> pad_shape(const std::vector<int64_t>& shape, size_t ndim) {
    std::vector<int64_t> out(ndim, 1);
    std::copy(shape.begin(), shape.end(), out.begin() + static_cast<int64_t>(ndim - shape.size()));
    return out;
}

void require_same_dtype(const Array& a, const Array& b, const char* op) {
    LS_CHECK(a.dtype() == b.dtype(), "op '", op, "': dtype mismatch (", dtype_name(a.dtype()), " vs ",
             dtype_name(b.dtype()), ")");
}

// Odometer walk over `out_shape`, feeding broadcast offsets of a and b.
template <typename T, typename F>
void broadcast_binary_kernel(const Array& a, const Array& b, Array& out, F&& f) {
    const size_t R = out.shape().size();
    const std::vector<int64_t> osh = out.shape();
    const std::vector<int64_t> ash = pad_shape(a.shape(), R);
    const std::vector<int64_t> bsh = pad_shape(b.shape(), R);
    std::vector<int64_t> astr = contiguous_strides(ash);
    std::vector<int64_t> bstr = contiguous_strides(bsh);
    for (size_t d = 0; d < R; ++d) {
        if (ash[d] == 1 && osh[d] != 1) astr[d] = 0;
        if (bsh[d] == 1 && osh[d] != 1) bstr[d] = 0;
    }
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.raw<T>();
    if (a.shape() == out.shape() && b.shape() == out.shape()) {
        const int64_t n = out.numel();
        parallel_for(n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) po[i] = f(pa[i], pb[i]);
        });
        return;
    }
    std::vector<int64_t> idx(R, 0);
    int64_t aoff = 0, boff = 0;
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        po[i] = f(pa[aoff], pb[boff]);
        for (int d = static_cast<int>(R) - 1; d >= 0; --d) {
            size_t du = static_cast<size_t>(d);
            ++idx[du];
            aoff += astr[du];
            boff += bstr[du];
            if (idx[du] < osh[du]) break;
            idx[du] = 0;
            aoff -= astr[du] * osh[du];
            boff -= bstr[du] * osh[du];
        }
    }
}

template <typename FFwd>
Array binary_op(const char* name, const Array& a, const Array& b, FFwd&& fwd) {
    require_same_dtype(a, b, name);
    Array out(broadcast_shape(a.shape(), b.shape()), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        broadcast_binary_kernel<T>(a, b, out, [&](T x, T y) { return static_cast<T>(fwd(x, y)); });
    });
    check_finite(out, name);
    return out;
}

// Forward map plus derivative in terms of (x, y=f(x)).
template <typename FFwd, typename FBwd>
Array unary_op(const char* name, const Array& a, FFwd&& fwd, FBwd&& dfdx) {
    Array out(a.shape(), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.raw<T>();
        parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) po[i] = static_cast<T>(fwd(static_cast<double>(pa[i])));
        });
    });
    check_finite(out, name);
    if (should_record({&a})) {
        Array saved_in = a, saved_out = out;
        auto bwd = dfdx;
        record_op(name, {a}, {&out}, [saved_in, saved_out, bwd](const std::vector<Array>& gs) {
            const Array& g = gs[0];
            Array gx(saved_in.shape(), saved_in.dtype());
            dispatch_dtype(gx.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pg = g.data<T>();
                const T* px = saved_in.data<T>();
                const T* py = saved_out.data<T>();
                T* po = gx.raw<T>();
                for (int64_t i = 0; i < gx.numel(); ++i) {
                    po[i] = static_cast<T>(static_cast<double>(pg[i]) *
                                           bwd(static_cast<double>(px[i]), static_cast<double>(py[i])));
                }
            });
            return std::vector<Array>{gx};
        });
    }
    return out;
}

}  // namespace

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    const size_t R = std::max(a.size(), b.size());
    std::vector<int64_t> ap = pad_shape(a, R), bp = pad_shape(b, R), out(R);
    for (size_t d = 0; d < R; ++d) {
        if (ap[d] == bp[d]) {
            out[d] = ap[d];
        } else if (ap[d] == 1) {
            out[d] = bp[d];
        } else if (bp[d] == 1) {
            out[d] = ap[d];
        } else {
            throw NumericError(detail::format_msg("shapes not broadcast-compatible: ",
                                                  shape_to_string(a), " vs ", shape_to_string(b)));
        }
    }
    return out;
}

Array reduce_to_shape(const Array& g, const std::vector<int64_t>& shape) {
    if (g.shape() == shape) return g;
    const size_t R = g.shape().size();
    const std::vector<int64_t> tsh = pad_shape(shape, R);
    Array out = Array::zeros(tsh, g.dtype());
    std::vector<int64_t> ostr = contiguous_strides(tsh);
    const std::vector<int64_t>& gsh = g.shape();
    for (size_t d = 0; d < R; ++d) {
        if (tsh[d] == 1 && gsh[d] != 1) ostr[d] = 0;
        LS_CHECK(tsh[d] == gsh[d] || tsh[d] == 1, "reduce_to_shape: ", shape_to_string(gsh), " -> ",
                 shape_to_string(shape));
    }
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        T* po = out.raw<T>();
        std::vector<int64_t> idx(R, 0);
        int64_t ooff = 0;
        const int64_t n = g.numel();
        for (int64_t i = 0; i < n; ++i) {
            po[ooff] += pg[i];
            for (int d = static_cast<int>(R) - 1; d >= 0; --d) {
                size_t du = static_cast<size_t>(d);
                ++idx[du];
                ooff += ostr[du];
                if (idx[du] < gsh[du]) break;
                idx[du] = 0;
                ooff -= ostr[du] * gsh[du];
            }
        }
    });
    Array reshaped = reshape_internal(out, shape, next_array_id());
    return reshaped;
}

Array add(const Array& a, const Array& b) {
    Array out = binary_op("add", a, b, [](double x, double y) { return x + y; });
    if (should_record({&a, &b})) {
        auto as = a.shape(), bs = b.shape();
        record_op("add", {a, b}, {&out}, [as, bs](const std::vector<Array>& gs) {
            return std::vector<Array>{reduce_to_shape(gs[0], as), reduce_to_shape(gs[0], bs)};
        });
    }
    return out;
}

Array sub(const Array& a, const Array& b) {
    Array out = binary_op("sub", a, b, [](double x, double y) { return x - y; });
    if (should_record({&a, &b})) {
        auto as = a.shape(), bs = b.shape();
        record_op("sub", {a, b}, {&out}, [as, bs](const std::vector<Array>& gs) {
            Array gneg = mul_scalar(gs[0], -1.0);
            return std::vector<Array>{reduce_to_shape(gs[0], as), reduce_to_shape(gneg, bs)};
        });
    }
    return out;
}

Array mul(const Array& a, const Array& b) {
    Array out = binary_op("mul", a, b, [](double x, double y) { return x * y; });
    if (should_record({&a, &b})) {
        Array sa = a, sb = b;
        record_op("mul", {a, b}, {&out}, [sa, sb](const std::vector<Array>& gs) {
            Array ga = reduce_to_shape(mul(gs[0], sb), sa.shape());
            Array gb = reduce_to_shape(mul(gs[0], sa), sb.shape());
            return std::vector<Array>{ga, gb};
        });
    }
    return out;
}

Array div(const Array& a, const Array& b) {
    Array out = binary_op("div", a, b, [](double x, double y) { return x / y; });
    if (should_record({&a, &b})) {
        Array sa = a, sb = b, so = out;
        record_op("div", {a, b}, {&out}, [sa, sb, so](const std::vector<Array>& gs) {
            Array ga = reduce_to_shape(div(gs[0], sb), sa.shape());
            // d(a/b)/db = -a/b^2 = -out/b
            Array gb = reduce_to_shape(mul_scalar(mul(gs[0], div(so, sb)), -1.0), sb.shape());
            return std::vector<Array>{ga, gb};
        });
    }
    return out;
}

Array add_scalar(const Array& a, double c) {
    return unary_op("add_scalar", a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Array mul_scalar(const Array& a, double c) {
    return unary_op("mul_scalar", a, [c](double x) { return x * c; },
                    [c](double, double) { return c; });
}

Array div_scalar(const Array& a, double c) {
    return unary_op("div_scalar", a, [c](double x) { return x / c; },
                    [c](double, double) { return 1.0 / c; });
}

Array neg(const Array& a) { return mul_scalar(a, -1.0); }

Array exp(const Array& a) {
    return unary_op("exp", a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Array log(const Array& a) {
    return unary_op("log", a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Array sqrt(const Array& a) {
    return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Array sigmoid(const Array& a) {
    return unary_op("sigmoid", a,
                    [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                 : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Array softplus(const Array& a) {
    return unary_op("softplus", a,
                    [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                    [](double x, double) {
                        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                    });
}

Array tanh(const Array& a) {
    return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Array clamp_min(const Array& a, double lo) {
    return unary_op("clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
                    [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Array sum_all(const Array& a) {
    Array out({}, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        double acc = 0.0;  // fixed serial order
        for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(pa[i]);
        out.raw<T>()[0] = static_cast<T>(acc);
    });
    check_finite(out, "sum_all");
    if (should_record({&a})) {
        auto sh = a.shape();
        auto dt = a.dtype();
        record_op("sum_all", {a}, {&out}, [sh, dt](const std::vector<Array>& gs) {
            return std::vector<Array>{Array::full(sh, gs[0].scalar(), dt)};
        });
    }
    return out;
}

Array mean_all(const Array& a) {
    LS_CHECK(a.numel() > 0, "mean of empty array");
    return div_scalar(sum_all(a), static_cast<double>(a.numel()));
}

Array sum_axis(const Array& a, int axis, bool keepdim) {
    if (axis < 0) axis += a.ndim();
    LS_CHECK(axis >= 0 && axis < a.ndim(), "sum_axis: bad axis");
    const auto& sh = a.shape();
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sh[static_cast<size_t>(d)];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= sh[static_cast<size_t>(d)];
    const int64_t n = sh[static_cast<size_t>(axis)];

    std::vector<int64_t> osh;
    for (int d = 0; d < a.ndim(); ++d) {
        if (d == axis) {
            if (keepdim) osh.push_back(1);
        } else {
            osh.push_back(sh[static_cast<size_t>(d)]);
        }
    }
    Array out(osh, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.raw<T>();
        parallel_for(outer * inner, [&](int64_t lo, int64_t hi) {
            for (int64_t oi = lo; oi < hi; ++oi) {
                int64_t o = oi / inner, in = oi % inner;
                double acc = 0.0;
                const T* base = pa + (o * n) * inner + in;
                for (int64_t k = 0; k < n; ++k) acc += static_cast<double>(base[k * inner]);
                po[oi] = static_cast<T>(acc);
            }
        });
    });
    check_finite(out, "sum_axis");
    if (should_record({&a})) {
        auto ash = a.shape();
        record_op("sum_axis", {a}, {&out}, [ash, axis, n, outer, inner](const std::vector<Array>& gs) {
            const Array& g = gs[0];
            Array gx(ash, g.dtype());
            dispatch_dtype(g.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pg = g.data<T>();
                T* px = gx.raw<T>();
                for (int64_t o = 0; o < outer; ++o) {
                    for (int64_t k = 0; k < n; ++k) {
                        for (int64_t in = 0; in < inner; ++in) {
                            px[(o * n + k) * inner + in] = pg[o * inner + in];
                        }
                    }
                }
            });
            return std::vector<Array>{gx};
        });
    }
    return out;
}

Array reshape(const Array& a, std::vector<int64_t> shape) {
    // -1 wildcard for one dimension
    int64_t known = 1, wild = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            LS_CHECK(wild == -1, "reshape: multiple -1 dims");
            wild = static_cast<int64_t>(i);
        } else {
            known *= shape[i];
        }
    }
    if (wild >= 0) shape[static_cast<size_t>(wild)] = a.numel() / known;
    Array out = reshape_internal(a, shape, next_array_id());
    if (should_record({&a})) {
        auto ash = a.shape();
        record_op("reshape", {a}, {&out}, [ash](const std::vector<Array>& gs) {
            return std::vector<Array>{reshape_internal(gs[0], ash, next_array_id())};
        });
    }
    return out;
}

Array transpose(const Array& a) {
    LS_CHECK(a.ndim() == 2, "transpose expects 2-D, got ", a.shape_str());
    const int64_t M = a.dim(0), N = a.dim(1);
    Array out({N, M}, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.raw<T>();
        parallel_for(N, [&](int64_t lo, int64_t hi) {
            for (int64_t j = lo; j < hi; ++j)
                for (int64_t i = 0; i < M; ++i) po[j * M + i] = pa[i * N + j];
        });
    });
    if (should_record({&a})) {
        record_op("transpose", {a}, {&out}, [](const std::vector<Array>& gs) {
            return std::vector<Array>{transpose(gs[0])};
        });
    }
    return out;
}

Array slice(const Array& a, int axis, int64_t start, int64_t len) {
    if (axis < 0) axis += a.ndim();
    LS_CHECK(axis >= 0 && axis < a.ndim(), "slice: bad axis");
    const auto& sh = a.shape();
    LS_CHECK(start >= 0 && len >= 0 && start + len <= sh[static_cast<size_t>(axis)],
             "slice out of range: axis ", axis, " [", start, ",", start + len, ") of ", a.shape_str());
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sh[static_cast<size_t>(d)];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= sh[static_cast<size_t>(d)];
    const int64_t n = sh[static_cast<size_t>(axis)];
    std::vector<int64_t> osh = sh;
    osh[static_cast<size_t>(axis)] = len;
    Array out(osh, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.raw<T>();
        for (int64_t o = 0; o < outer; ++o) {
            std::copy(pa + (o * n + start) * inner, pa + (o * n + start + len) * inner,
                      po + o * len * inner);
        }
    });
    if (should_record({&a})) {
        auto ash = a.shape();
        auto dt = a.dtype();
        record_op("slice", {a}, {&out},
                  [ash, dt, axis, start, len, outer, inner, n](const std::vector<Array>& gs) {
                      Array gx = Array::zeros(ash, dt);
                      dispatch_dtype(dt, [&](auto tag) {
                          using T = decltype(tag);
                          const T* pg = gs[0].data<T>();
                          T* px = gx.raw<T>();
                          for (int64_t o = 0; o < outer; ++o) {
                              std::copy(pg + o * len * inner, pg + (o + 1) * len * inner,
                                        px + (o * n + start) * inner);
                          }
                      });
                      return std::vector<Array>{gx};
                  });
    }
    return out;
}

Array concat(const std::vector<Array>& parts, int axis) {
    LS_CHECK(!parts.empty(), "concat of zero arrays");
    const Array& first = parts[0];
    if (axis < 0) axis += first.ndim();
    int64_t total = 0;
    for (const Array& p : parts) {
        LS_CHECK(p.ndim() == first.ndim(), "concat rank mismatch");
        for (int d = 0; d < first.ndim(); ++d) {
            if (d != axis)
                LS_CHECK(p.dim(d) == first.dim(d), "concat shape mismatch on axis ", d);
        }
        total += p.dim(axis);
    }
    std::vector<int64_t> osh = first.shape();
    osh[static_cast<size_t>(axis)] = total;
    Array out(osh, first.dtype());
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first.dim(d);
    for (int d = axis + 1; d < first.ndim(); ++d) inner *= first.dim(d);
    dispatch_dtype(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T* po = out.raw<T>();
        int64_t off = 0;
        for (const Array& p : parts) {
            const T* pp = p.data<T>();
            const int64_t n = p.dim(axis);
            for (int64_t o = 0; o < outer; ++o) {
                std::copy(pp + o * n * inner, pp + (o + 1) * n * inner,
                          po + (o * total + off) * inner);
            }
            off += n;
        }
    });
    bool rec = false;
    for (const Array& p : parts) {
        if (should_record({&p})) rec = true;
    }
    if (rec) {
        std::vector<int64_t> sizes;
        for (const Array& p : parts) sizes.push_back(p.dim(axis));
        record_op("concat", parts, {&out}, [sizes, axis](const std::vector<Array>& gs) {
            std::vector<Array> out_grads;
            int64_t off = 0;
            for (int64_t s : sizes) {
                out_grads.push_back(slice(gs[0], axis, off, s));
                off += s;
            }
            return out_grads;
        });
    }
    return out;
}

namespace {

enum class MMKind { NN, NT, TN };

// C = A*B, A*B^T, or A^T*B with a thread-count-invariant row blocking.
template <typename T>
void mm_kernel(MMKind kind, const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t P) {
    constexpr int64_t kRowGrain = 64;
    parallel_for_grain(M, kRowGrain, [&](int64_t lo, int64_t hi) {
        MapRM<T> C(c + lo * P, hi - lo, P);
        switch (kind) {
            case MMKind::NN: {
                CMapRM<T> A(a + lo * K, hi - lo, K);
                CMapRM<T> B(b, K, P);
                C.noalias() = A * B;
                break;
            }
            case MMKind::NT: {
                CMapRM<T> A(a + lo * K, hi - lo, K);
                CMapRM<T> B(b, P, K);
                C.noalias() = A * B.transpose();
                break;
            }
            case MMKind::TN: {
                CMapRM<T> A(a, K, M);
                CMapRM<T> B(b, K, P);
                C.noalias() = A.middleCols(lo, hi - lo).transpose() * B;
                break;
            }
        }
    });
}

Array mm(MMKind kind, const Array& a, const Array& b, int64_t M, int64_t K, int64_t P,
         const char* name) {
    Array out({M, P}, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        mm_kernel<T>(kind, a.data<T>(), b.data<T>(), out.raw<T>(), M, K, P);
    });
    check_finite(out, name);
    return out;
}

}  // namespace

Array matmul(const Array& a, const Array& b) {
    require_same_dtype(a, b, "matmul");
    LS_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul expects 2-D inputs, got ", a.shape_str(), " and ",
             b.shape_str());
    LS_CHECK(a.dim(1) == b.dim(0), "matmul inner dims differ: ", a.shape_str(), " vs ", b.shape_str());
    const int64_t M = a.dim(0), K = a.dim(1), P = b.dim(1);
    Array out = mm(MMKind::NN, a, b, M, K, P, "matmul");
    if (should_record({&a, &b})) {
        Array sa = a, sb = b;
        record_op("matmul", {a, b}, {&out}, [sa, sb, M, K, P](const std::vector<Array>& gs) {
            const Array& g = gs[0];
            Array ga = mm(MMKind::NT, g, sb, M, P, K, "matmul_bwd_a");  // g * b^T
            Array gb = mm(MMKind::TN, sa, g, K, M, P, "matmul_bwd_b");  // a^T * g
            return std::vector<Array>{ga, gb};
        });
    }
    return out;
}

Array softmax(const Array& a, int axis) {
    if (axis < 0) axis += a.ndim();
    LS_CHECK(axis >= 0 && axis < a.ndim(), "softmax: bad axis");
    const auto& sh = a.shape();
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= sh[static_cast<size_t>(d)];
    for (int d = axis + 1; d < a.ndim(); ++d) inner *= sh[static_cast<size_t>(d)];
    const int64_t n = sh[static_cast<size_t>(axis)];
    Array out(sh, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        T* po = out.raw<T>();
        parallel_for(outer * inner, [&](int64_t lo, int64_t hi) {
            for (int64_t oi = lo; oi < hi; ++oi) {
                const int64_t o = oi / inner, in = oi % inner;
                const T* base = pa + o * n * inner + in;
                T* obase = po + o * n * inner + in;
                double m = -std::numeric_limits<double>::infinity();
                for (int64_t k = 0; k < n; ++k) m = std::max(m, static_cast<double>(base[k * inner]));
                double s = 0.0;
                for (int64_t k = 0; k < n; ++k) {
                    double e = std::exp(static_cast<double>(base[k * inner]) - m);
                    obase[k * inner] = static_cast<T>(e);
                    s += e;
                }
                const double inv = 1.0 / s;
                for (int64_t k = 0; k < n; ++k)
                    obase[k * inner] = static_cast<T>(static_cast<double>(obase[k * inner]) * inv);
            }
        });
    });
    check_finite(out, "softmax");
    if (should_record({&a})) {
        Array so = out;
        record_op("softmax", {a}, {&out}, [so, outer, inner, n](const std::vector<Array>& gs) {
            const Array& g = gs[0];
            Array gx(so.shape(), so.dtype());
            dispatch_dtype(so.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* py = so.data<T>();
                const T* pg = g.data<T>();
                T* px = gx.raw<T>();
                parallel_for(outer * inner, [&](int64_t lo, int64_t hi) {
                    for (int64_t oi = lo; oi < hi; ++oi) {
                        const int64_t o = oi / inner, in = oi % inner;
                        const int64_t base = o * n * inner + in;
                        double dot = 0.0;
                        for (int64_t k = 0; k < n; ++k)
                            dot += static_cast<double>(pg[base + k * inner]) *
                                   static_cast<double>(py[base + k * inner]);
                        for (int64_t k = 0; k < n; ++k) {
                            const double y = static_cast<double>(py[base + k * inner]);
                            const double gg = static_cast<double>(pg[base + k * inner]);
                            px[base + k * inner] = static_cast<T>(y * (gg - dot));
                        }
                    }
                });
            });
            return std::vector<Array>{gx};
        });
    }
    return out;
}

namespace {

struct ConvDims {
    int64_t cin, h, w, cout, k, oh, ow;
    int stride, pad;
};

ConvDims conv_dims(const Array& x, const Array& w, int stride, int padding) {
    LS_CHECK(x.ndim() == 3, "conv2d input must be [C,H,W], got ", x.shape_str());
    LS_CHECK(w.ndim() == 4, "conv2d weight must be [Cout,Cin,k,k], got ", w.shape_str());
    LS_CHECK(w.dim(2) == w.dim(3), "conv2d kernel must be square");
    LS_CHECK(x.dim(0) == w.dim(1), "conv2d channel mismatch: input ", x.shape_str(), " weight ",
             w.shape_str());
    LS_CHECK(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    ConvDims d;
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = w.dim(0);
    d.k = w.dim(2);
    d.stride = stride;
    d.pad = padding;
    d.oh = (d.h + 2 * padding - d.k) / stride + 1;
    d.ow = (d.w + 2 * padding - d.k) / stride + 1;
    LS_CHECK(d.h + 2 * padding >= d.k && d.w + 2 * padding >= d.k && d.oh >= 1 && d.ow >= 1,
             "conv2d output would be empty: input ", x.shape_str(), " k=", d.k, " stride=", stride,
             " pad=", padding);
    return d;
}

template <typename T>
Array make_im2col(const Array& x, const ConvDims& d) {
    Array col({d.cin * d.k * d.k, d.oh * d.ow}, x.dtype());
    const T* px = x.data<T>();
    T* pc = col.raw<T>();
    parallel_for(d.cin * d.k * d.k, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r) {
            const int64_t ci = r / (d.k * d.k);
            const int64_t ky = (r / d.k) % d.k;
            const int64_t kx = r % d.k;
            T* row = pc + r * d.oh * d.ow;
            for (int64_t oy = 0; oy < d.oh; ++oy) {
                const int64_t iy = oy * d.stride + ky - d.pad;
                T* dst = row + oy * d.ow;
                if (iy < 0 || iy >= d.h) {
                    std::fill(dst, dst + d.ow, T(0));
                    continue;
                }
                const T* src = px + (ci * d.h + iy) * d.w;
                for (int64_t ox = 0; ox < d.ow; ++ox) {
                    const int64_t ix = ox * d.stride + kx - d.pad;
                    dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
                }
            }
        }
    });
    return col;
}

}  // namespace

Array conv2d(const Array& x, const Array& w, int stride, int padding) {
    require_same_dtype(x, w, "conv2d");
    const ConvDims d = conv_dims(x, w, stride, padding);
    Array col, out;
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        col = make_im2col<T>(x, d);
    });
    Array w2d = reshape_internal(w, {d.cout, d.cin * d.k * d.k}, next_array_id());
    Array out2d = mm(MMKind::NN, w2d, col, d.cout, d.cin * d.k * d.k, d.oh * d.ow, "conv2d");
    out = reshape_internal(out2d, {d.cout, d.oh, d.ow}, next_array_id());
    if (should_record({&x, &w})) {
        Array scol = col, sw = w;
        auto xsh = x.shape();
        record_op("conv2d", {x, w}, {&out}, [scol, sw, xsh, d](const std::vector<Array>& gs) {
            Array g2d = reshape_internal(gs[0], {d.cout, d.oh * d.ow}, next_array_id());
            // dW = g * col^T
            Array gw2d =
                mm(MMKind::NT, g2d, scol, d.cout, d.oh * d.ow, d.cin * d.k * d.k, "conv2d_bwd_w");
            Array gw = reshape_internal(gw2d, sw.shape(), next_array_id());
            // dX = col2im(W^T * g)
            Array sw2d = reshape_internal(sw, {d.cout, d.cin * d.k * d.k}, next_array_id());
            Array gcol =
                mm(MMKind::TN, sw2d, g2d, d.cin * d.k * d.k, d.cout, d.oh * d.ow, "conv2d_bwd_x");
            Array gx = Array::zeros(xsh, sw.dtype());
            dispatch_dtype(sw.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pc = gcol.data<T>();
                T* px = gx.raw<T>();
                parallel_for_grain(d.cin, 1, [&](int64_t lo, int64_t hi) {
                    for (int64_t ci = lo; ci < hi; ++ci) {
                        for (int64_t ky = 0; ky < d.k; ++ky) {
                            for (int64_t kx = 0; kx < d.k; ++kx) {
                                const int64_t r = (ci * d.k + ky) * d.k + kx;
                                const T* row = pc + r * d.oh * d.ow;
                                for (int64_t oy = 0; oy < d.oh; ++oy) {
                                    const int64_t iy = oy * d.stride + ky - d.pad;
                                    if (iy < 0 || iy >= d.h) continue;
                                    T* dst = px + (ci * d.h + iy) * d.w;
                                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                                        const int64_t ix = ox * d.stride + kx - d.pad;
                                        if (ix >= 0 && ix < d.w) dst[ix] += row[oy * d.ow + ox];
                                    }
                                }
                            }
                        }
                    }
                });
            });
            return std::vector<Array>{gx, gw};
        });
    }
    return out;
}

Array bilinear_sample(const Array& feat, const Array& pts) {
    require_same_dtype(feat, pts, "bilinear_sample");
    LS_CHECK(feat.ndim() == 3, "bilinear_sample: feature map must be [C,H,W], got ", feat.shape_str());
    LS_CHECK(pts.ndim() == 2 && pts.dim(1) == 2, "bilinear_sample: pts must be [P,2], got ",
             pts.shape_str());
    const int64_t C = feat.dim(0), H = feat.dim(1), W = feat.dim(2), P = pts.dim(0);
    Array out({P, C}, feat.dtype());
    dispatch_dtype(feat.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pf = feat.data<T>();
        const T* pp = pts.data<T>();
        T* po = out.raw<T>();
        parallel_for(P, [&](int64_t lo, int64_t hi) {
            for (int64_t p = lo; p < hi; ++p) {
                const double x = static_cast<double>(pp[p * 2 + 0]);
                const double y = static_cast<double>(pp[p * 2 + 1]);
                const int64_t x0 = static_cast<int64_t>(std::floor(x));
                const int64_t y0 = static_cast<int64_t>(std::floor(y));
                const double wx = x - static_cast<double>(x0);
                const double wy = y - static_cast<double>(y0);
                const double cw[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
                const int64_t cx[4] = {x0, x0 + 1, x0, x0 + 1};
                const int64_t cy[4] = {y0, y0, y0 + 1, y0 + 1};
                for (int64_t c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (int q = 0; q < 4; ++q) {
                        if (cx[q] < 0 || cx[q] >= W || cy[q] < 0 || cy[q] >= H) continue;
                        acc += cw[q] * static_cast<double>(pf[(c * H + cy[q]) * W + cx[q]]);
                    }
                    po[p * C + c] = static_cast<T>(acc);
                }
            }
        });
    });
    check_finite(out, "bilinear_sample");
    if (should_record({&feat, &pts})) {
        Array sf = feat, sp = pts;
        record_op("bilinear_sample", {feat, pts}, {&out}, [sf, sp, C, H, W, P](
                                                              const std::vector<Array>& gs) {
            const Array& g = gs[0];
            Array gf = Array::zeros(sf.shape(), sf.dtype());
            Array gp = Array::zeros(sp.shape(), sp.dtype());
            dispatch_dtype(sf.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pf = sf.data<T>();
                const T* pp = sp.data<T>();
                const T* pg = g.data<T>();
                T* pgf = gf.raw<T>();
                T* pgp = gp.raw<T>();
                // Serial over points: many points may scatter into one cell.
                for (int64_t p = 0; p < P; ++p) {
                    const double x = static_cast<double>(pp[p * 2 + 0]);
                    const double y = static_cast<double>(pp[p * 2 + 1]);
                    const int64_t x0 = static_cast<int64_t>(std::floor(x));
                    const int64_t y0 = static_cast<int64_t>(std::floor(y));
                    const double wx = x - static_cast<double>(x0);
                    const double wy = y - static_cast<double>(y0);
                    const double cw[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
                    // d(weight)/dx, d(weight)/dy per corner
                    const double dwx[4] = {-(1 - wy), (1 - wy), -wy, wy};
                    const double dwy[4] = {-(1 - wx), -wx, (1 - wx), wx};
                    const int64_t cx[4] = {x0, x0 + 1, x0, x0 + 1};
                    const int64_t cy[4] = {y0, y0, y0 + 1, y0 + 1};
                    double gx = 0.0, gy = 0.0;
                    for (int64_t c = 0; c < C; ++c) {
                        const double gc = static_cast<double>(pg[p * C + c]);
                        for (int q = 0; q < 4; ++q) {
                            if (cx[q] < 0 || cx[q] >= W || cy[q] < 0 || cy[q] >= H) continue;
                            const int64_t fi = (c * H + cy[q]) * W + cx[q];
                            pgf[fi] += static_cast<T>(gc * cw[q]);
                            const double fval = static_cast<double>(pf[fi]);
                            gx += gc * dwx[q] * fval;
                            gy += gc * dwy[q] * fval;
                        }
                    }
                    pgp[p * 2 + 0] = static_cast<T>(gx);
                    pgp[p * 2 + 1] = static_cast<T>(gy);
                }
            });
            return std::vector<Array>{gf, gp};
        });
    }
    return out;
}

namespace {

struct LerpCoef {
    int64_t i0, i1;
    double w1;  // value = (1-w1)*src[i0] + w1*src[i1]
};

std::vector<LerpCoef> upsample_coeffs(int64_t n_out, int64_t n_in, int factor) {
    std::vector<LerpCoef> cs(static_cast<size_t>(n_out));
    for (int64_t i = 0; i < n_out; ++i) {
        double src = (static_cast<double>(i) + 0.5) / factor - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(n_in - 1)));
        int64_t i0 = static_cast<int64_t>(std::floor(src));
        int64_t i1 = std::min(i0 + 1, n_in - 1);
        cs[static_cast<size_t>(i)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return cs;
}

}  // namespace

Array upsample_bilinear(const Array& x, int factor) {
    LS_CHECK(x.ndim() == 3, "upsample_bilinear expects [C,H,W], got ", x.shape_str());
    LS_CHECK(factor >= 1, "upsample factor must be >= 1");
    const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t OH = H * factor, OW = W * factor;
    const auto ys = upsample_coeffs(OH, H, factor);
    const auto xs = upsample_coeffs(OW, W, factor);
    Array out({C, OH, OW}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        T* po = out.raw<T>();
        parallel_for_grain(C, 1, [&](int64_t lo, int64_t hi) {
            for (int64_t c = lo; c < hi; ++c) {
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const auto& cy = ys[static_cast<size_t>(oy)];
                    const T* r0 = px + (c * H + cy.i0) * W;
                    const T* r1 = px + (c * H + cy.i1) * W;
                    T* dst = po + (c * OH + oy) * OW;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const auto& cxx = xs[static_cast<size_t>(ox)];
                        const double top = (1 - cxx.w1) * r0[cxx.i0] + cxx.w1 * r0[cxx.i1];
                        const double bot = (1 - cxx.w1) * r1[cxx.i0] + cxx.w1 * r1[cxx.i1];
                        dst[ox] = static_cast<T>((1 - cy.w1) * top + cy.w1 * bot);
                    }
                }
            }
        });
    });
    if (should_record({&x})) {
        auto xsh = x.shape();
        auto dt = x.dtype();
        record_op("upsample_bilinear", {x}, {&out},
                  [xsh, dt, C, H, W, OH, OW, ys, xs](const std::vector<Array>& gs) {
                      Array gx = Array::zeros(xsh, dt);
                      dispatch_dtype(dt, [&](auto tag) {
                          using T = decltype(tag);
                          const T* pg = gs[0].data<T>();
                          T* px = gx.raw<T>();
                          parallel_for_grain(C, 1, [&](int64_t lo, int64_t hi) {
                              for (int64_t c = lo; c < hi; ++c) {
                                  for (int64_t oy = 0; oy < OH; ++oy) {
                                      const auto& cy = ys[static_cast<size_t>(oy)];
                                      T* r0 = px + (c * H + cy.i0) * W;
                                      T* r1 = px + (c * H + cy.i1) * W;
                                      const T* src = pg + (c * OH + oy) * OW;
                                      for (int64_t ox = 0; ox < OW; ++ox) {
                                          const auto& cxx = xs[static_cast<size_t>(ox)];
                                          const double g = static_cast<double>(src[ox]);
                                          r0[cxx.i0] += static_cast<T>((1 - cy.w1) * (1 - cxx.w1) * g);
                                          r0[cxx.i1] += static_cast<T>((1 - cy.w1) * cxx.w1 * g);
                                          r1[cxx.i0] += static_cast<T>(cy.w1 * (1 - cxx.w1) * g);
                                          r1[cxx.i1] += static_cast<T>(cy.w1 * cxx.w1 * g);
                                      }
                                  }
                              }
                          });
                      });
                      return std::vector<Array>{gx};
                  });
    }
    return out;
}

Array layer_norm(const Array& x, const Array& gamma, const Array& beta, double eps) {
    require_same_dtype(x, gamma, "layer_norm");
    const int64_t D = x.dim(-1);
    LS_CHECK(gamma.numel() == D && beta.numel() == D, "layer_norm: gamma/beta must have ", D,
             " elements");
    const int64_t rows = x.numel() / D;
    Array out(x.shape(), x.dtype());
    Array xhat(x.shape(), x.dtype());
    Array inv_std({rows}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        const T* pgm = gamma.data<T>();
        const T* pbt = beta.data<T>();
        T* po = out.raw<T>();
        T* ph = xhat.raw<T>();
        T* pis = inv_std.raw<T>();
        parallel_for(rows, [&](int64_t lo, int64_t hi) {
            for (int64_t r = lo; r < hi; ++r) {
                const T* row = px + r * D;
                double mean = 0.0;
                for (int64_t j = 0; j < D; ++j) mean += static_cast<double>(row[j]);
                mean /= static_cast<double>(D);
                double var = 0.0;
                for (int64_t j = 0; j < D; ++j) {
                    const double d = static_cast<double>(row[j]) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(D);
                const double is = 1.0 / std::sqrt(var + eps);
                pis[r] = static_cast<T>(is);
                for (int64_t j = 0; j < D; ++j) {
                    const double h = (static_cast<double>(row[j]) - mean) * is;
                    ph[r * D + j] = static_cast<T>(h);
                    po[r * D + j] =
                        static_cast<T>(h * static_cast<double>(pgm[j]) + static_cast<double>(pbt[j]));
                }
            }
        });
    });
    check_finite(out, "layer_norm");
    if (should_record({&x, &gamma, &beta})) {
        Array sh = xhat, sis = inv_std, sg = gamma;
        auto gm_shape = gamma.shape();
        auto bt_shape = beta.shape();
        record_op("layer_norm", {x, gamma, beta}, {&out},
                  [sh, sis, sg, rows, D, gm_shape, bt_shape](const std::vector<Array>& gs) {
                      const Array& g = gs[0];
                      Array gx(sh.shape(), sh.dtype());
                      Array ggm = Array::zeros(gm_shape, sh.dtype());
                      Array gbt = Array::zeros(bt_shape, sh.dtype());
                      dispatch_dtype(sh.dtype(), [&](auto tag) {
                          using T = decltype(tag);
                          const T* ph = sh.data<T>();
                          const T* pis = sis.data<T>();
                          const T* pgm = sg.data<T>();
                          const T* pg = g.data<T>();
                          T* pgx = gx.raw<T>();
                          T* pggm = ggm.raw<T>();
                          T* pgbt = gbt.raw<T>();
                          parallel_for(rows, [&](int64_t lo, int64_t hi) {
                              for (int64_t r = lo; r < hi; ++r) {
                                  double m1 = 0.0, m2 = 0.0;
                                  for (int64_t j = 0; j < D; ++j) {
                                      const double gy = static_cast<double>(pg[r * D + j]) *
                                                        static_cast<double>(pgm[j]);
                                      m1 += gy;
                                      m2 += gy * static_cast<double>(ph[r * D + j]);
                                  }
                                  m1 /= static_cast<double>(D);
                                  m2 /= static_cast<double>(D);
                                  const double is = static_cast<double>(pis[r]);
                                  for (int64_t j = 0; j < D; ++j) {
                                      const double gy = static_cast<double>(pg[r * D + j]) *
                                                        static_cast<double>(pgm[j]);
                                      const double h = static_cast<double>(ph[r * D + j]);
                                      pgx[r * D + j] = static_cast<T>(is * (gy - m1 - h * m2));
                                  }
                              }
                          });
                          // Per-column reductions over rows, each column serial.
                          parallel_for(D, [&](int64_t lo, int64_t hi) {
                              for (int64_t j = lo; j < hi; ++j) {
                                  double sg_acc = 0.0, sb_acc = 0.0;
                                  for (int64_t r = 0; r < rows; ++r) {
                                      const double gy = static_cast<double>(pg[r * D + j]);
                                      sg_acc += gy * static_cast<double>(ph[r * D + j]);
                                      sb_acc += gy;
                                  }
                                  pggm[j] = static_cast<T>(sg_acc);
                                  pgbt[j] = static_cast<T>(sb_acc);
                              }
                          });
                      });
                      return std::vector<Array>{gx, ggm, gbt};
                  });
    }
    return out;
}

}  // namespace leansplat::ops
