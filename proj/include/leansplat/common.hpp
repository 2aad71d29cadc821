#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace leansplat {

// Error taxonomy maps onto CLI exit codes: usage=2, data=3, numeric=4.
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
template <typename... Args>
std::string format_msg(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << args);
    return oss.str();
}
}  // namespace detail

#define LS_CHECK(cond, ...)                                                              \
    do {                                                                                 \
        if (!(cond)) {                                                                   \
            throw ::leansplat::NumericError(                                             \
                ::leansplat::detail::format_msg("check failed: " #cond " — ", __VA_ARGS__)); \
        }                                                                                \
    } while (0)

#define LS_CHECK_DATA(cond, ...)                                                      \
    do {                                                                              \
        if (!(cond)) {                                                                \
            throw ::leansplat::DataError(::leansplat::detail::format_msg(__VA_ARGS__)); \
        }                                                                             \
    } while (0)

}  // namespace leansplat
