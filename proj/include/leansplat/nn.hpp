#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "leansplat/array.hpp"
#include "leansplat/rng.hpp"

namespace leansplat {

// Named trainable arrays with a stable registration order; the optimizer and
// the checkpoint format both iterate in that order.
class ParamStore {
public:
    Array& add(const std::string& name, Array value);
    Array& get(const std::string& name);
    const Array& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::string>& names() const { return names_; }
    size_t size() const { return names_.size(); }

    // In-place overwrite (same shape/dtype); used by the optimizer and the
    // checkpoint loader between training steps.
    void assign(const std::string& name, const Array& value);

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, Array> index_;
};

enum class Init { Xavier, Zero };

// Weight init draws from an RNG derived from (seed, parameter name), so a
// module's initial values do not depend on construction order and ablation
// variants share identical weights for their common modules.
uint64_t param_init_stream(uint64_t seed, const std::string& name);

struct Linear {
    Array w;  // [in, out]
    Array b;  // [out]
    static Linear create(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                         uint64_t seed, Init init, DType dt);
    Array apply(const Array& x) const;
};

struct Conv {
    Array w;  // [out, in, k, k]
    Array b;  // [out]
    static Conv create(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out, int k,
                       uint64_t seed, DType dt);
    Array apply(const Array& x, int stride, int padding) const;
};

struct LayerNorm {
    Array gamma, beta;  // [dim]
    static LayerNorm create(ParamStore& ps, const std::string& prefix, int64_t dim, DType dt);
    Array apply(const Array& x) const;
};

}  // namespace leansplat
