#include "leansplat/nn.hpp"

#include <cmath>

#include "leansplat/ops.hpp"

namespace leansplat {

Array& ParamStore::add(const std::string& name, Array value) {
    LS_CHECK(!has(name), "duplicate parameter '", name, "'");
    value.set_requires_grad(true);
    names_.push_back(name);
    auto [it, ok] = index_.emplace(name, std::move(value));
    return it->second;
}

Array& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    LS_CHECK(it != index_.end(), "unknown parameter '", name, "'");
    return it->second;
}

const Array& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    LS_CHECK(it != index_.end(), "unknown parameter '", name, "'");
    return it->second;
}

void ParamStore::assign(const std::string& name, const Array& value) {
    Array& dst = get(name);
    LS_CHECK(dst.shape() == value.shape() && dst.dtype() == value.dtype(),
             "parameter '", name, "': shape/dtype mismatch on assign");
    dispatch_dtype(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = value.data<T>();
        T* d = dst.raw<T>();
        std::copy(src, src + dst.numel(), d);
    });
}

uint64_t param_init_stream(uint64_t seed, const std::string& name) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    return h ^ (seed * 0x9e3779b97f4a7c15ull);
}

namespace {
Array xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng,
                     DType dt) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Array a(std::move(shape), dt);
    for (int64_t i = 0; i < a.numel(); ++i) a.set_value(i, rng.uniform(-limit, limit));
    return a;
}
}  // namespace

Linear Linear::create(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                      uint64_t seed, Init init, DType dt) {
    Linear l;
    Rng rng(param_init_stream(seed, prefix));
    Array w = init == Init::Zero ? Array::zeros({in, out}, dt)
                                 : xavier_uniform({in, out}, in, out, rng, dt);
    l.w = ps.add(prefix + ".w", std::move(w));
    l.b = ps.add(prefix + ".b", Array::zeros({out}, dt));
    return l;
}

Array Linear::apply(const Array& x) const { return ops::add(ops::matmul(x, w), b); }

Conv Conv::create(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, int k,
                  uint64_t seed, DType dt) {
    Conv c;
    Rng rng(param_init_stream(seed, prefix));
    c.w = ps.add(prefix + ".w", xavier_uniform({out, in, k, k}, in * k * k, out * k * k, rng, dt));
    c.b = ps.add(prefix + ".b", Array::zeros({out, 1, 1}, dt));
    return c;
}

Array Conv::apply(const Array& x, int stride, int padding) const {
    return ops::add(ops::conv2d(x, w, stride, padding), b);
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& prefix, int64_t dim, DType dt) {
    LayerNorm n;
    n.gamma = ps.add(prefix + ".gamma", Array::full({dim}, 1.0, dt));
    n.beta = ps.add(prefix + ".beta", Array::zeros({dim}, dt));
    return n;
}

Array LayerNorm::apply(const Array& x) const { return ops::layer_norm(x, gamma, beta); }

}  // namespace leansplat
