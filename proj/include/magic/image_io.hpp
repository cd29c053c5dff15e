#pragma once

#include <string>

#include "magic/imaging.hpp"

namespace magic::imaging {

/// Reads an 8-bit PNG as a Unit-domain RGB image (values v/255).
Image read_png(const std::string& path);

/// Writes a Unit-domain image as 8-bit RGB PNG (clamped, quantized by
/// round(v*255)). Raw255 images are quantized directly.
void write_png(const std::string& path, const Image& img);

/// Reads a single-channel PNG whose pixels are exactly {0,255} as a mask.
BinaryMask read_mask_png(const std::string& path);

/// Writes a mask as single-channel PNG with values {0,255}.
void write_mask_png(const std::string& path, const BinaryMask& mask);

}  // namespace magic::imaging
