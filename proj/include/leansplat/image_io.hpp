#pragma once

#include <string>

#include "leansplat/array.hpp"

namespace leansplat {

// 8-bit RGB PNG. Values are raw (no color management): stored byte = round(v*255).
void save_png(const std::string& path, const Array& rgb);  // rgb: [3,H,W] in [0,1]
Array load_png(const std::string& path, DType dtype = DType::F64);

}  // namespace leansplat
