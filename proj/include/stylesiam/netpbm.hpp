#pragma once

#include <string>

#include "stylesiam/tensor.hpp"

namespace stylesiam {

// Binary PPM (P6) and PGM (P5), maxval 255, the only image formats the
// pipeline touches. Readers accept standard netpbm whitespace and comments;
// writers emit a canonical header so identical pixels give identical bytes.
// Pixel values map to [0,1] floats as v/255.

TensorPtr read_ppm(const std::string& path);  // [3,H,W]
TensorPtr read_pgm(const std::string& path);  // [1,H,W]

void write_ppm(const std::string& path, const Tensor& image);  // [3,H,W], values clamped to [0,1]
void write_pgm(const std::string& path, const Tensor& image);  // [1,H,W]

// nearest-neighbor, floor index mapping: src = dst * in_extent / out_extent
TensorPtr resize_nearest(const Tensor& image, int out_h, int out_w);

}  // namespace stylesiam
