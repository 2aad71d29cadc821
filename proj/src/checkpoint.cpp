#include "leansplat/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace leansplat {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'S', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    LS_CHECK_DATA(f.good(), "checkpoint '", path, "' is truncated");
    return v;
}

void write_blob(std::ofstream& f, const std::string& s) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_blob(std::ifstream& f, const std::string& path) {
    const uint32_t n = read_pod<uint32_t>(f, path);
    LS_CHECK_DATA(n < (1u << 26), "checkpoint '", path, "' has an implausible blob length");
    std::string s(n, '\0');
    f.read(s.data(), n);
    LS_CHECK_DATA(f.good(), "checkpoint '", path, "' is truncated");
    return s;
}

}  // namespace

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
    std::ofstream f(path, std::ios::binary);
    LS_CHECK_DATA(f.good(), "cannot write checkpoint '", path, "'");
    f.write(kMagic, 4);
    write_pod<uint32_t>(f, kVersion);
    write_pod<uint64_t>(f, data.iteration);
    write_blob(f, data.config_text);
    write_blob(f, data.rng_state);
    write_pod<uint64_t>(f, data.tensors.size());
    for (const auto& [name, a] : data.tensors) {
        write_blob(f, name);
        write_pod<uint8_t>(f, static_cast<uint8_t>(a.dtype()));
        write_pod<uint32_t>(f, static_cast<uint32_t>(a.ndim()));
        for (int64_t d : a.shape()) write_pod<int64_t>(f, d);
        dispatch_dtype(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const int64_t bytes = a.numel() * static_cast<int64_t>(sizeof(T));
            write_pod<uint64_t>(f, static_cast<uint64_t>(bytes));
            f.write(reinterpret_cast<const char*>(a.data<T>()), bytes);
        });
    }
    LS_CHECK_DATA(f.good(), "write to checkpoint '", path, "' failed");
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    LS_CHECK_DATA(f.good(), "cannot open checkpoint '", path, "'");
    char magic[4];
    f.read(magic, 4);
    LS_CHECK_DATA(f.good() && std::memcmp(magic, kMagic, 4) == 0, "'", path,
                  "' is not a checkpoint (bad magic)");
    const uint32_t version = read_pod<uint32_t>(f, path);
    LS_CHECK_DATA(version == kVersion, "checkpoint '", path, "' has version ", version,
                  ", expected ", kVersion);
    CheckpointData data;
    data.iteration = read_pod<uint64_t>(f, path);
    data.config_text = read_blob(f, path);
    data.rng_state = read_blob(f, path);
    const uint64_t count = read_pod<uint64_t>(f, path);
    LS_CHECK_DATA(count < (1u << 20), "checkpoint '", path, "' has an implausible tensor count");
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = read_blob(f, path);
        const uint8_t dt_raw = read_pod<uint8_t>(f, path);
        LS_CHECK_DATA(dt_raw <= 1, "checkpoint '", path, "': bad dtype for tensor '", name, "'");
        const DType dt = static_cast<DType>(dt_raw);
        const uint32_t ndim = read_pod<uint32_t>(f, path);
        LS_CHECK_DATA(ndim <= 8, "checkpoint '", path, "': bad rank for tensor '", name, "'");
        std::vector<int64_t> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int64_t>(f, path);
        const uint64_t bytes = read_pod<uint64_t>(f, path);
        Array a(shape, dt);
        dispatch_dtype(dt, [&](auto tag) {
            using T = decltype(tag);
            LS_CHECK_DATA(bytes == static_cast<uint64_t>(a.numel()) * sizeof(T), "checkpoint '",
                          path, "': tensor '", name, "' has inconsistent byte length");
            f.read(reinterpret_cast<char*>(a.raw<T>()), static_cast<std::streamsize>(bytes));
        });
        LS_CHECK_DATA(f.good(), "checkpoint '", path, "' is truncated in tensor '", name, "'");
        data.tensors.emplace(name, std::move(a));
    }
    return data;
}

}  // namespace leansplat
