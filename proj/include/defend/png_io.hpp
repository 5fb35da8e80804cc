#pragma once

#include <string>

#include "defend/image.hpp"

namespace defend {

// Minimal PNG codec over zlib: 8-bit RGB, no interlacing. write_png always
// emits filter type 0; read_png handles all five standard filters.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace defend
