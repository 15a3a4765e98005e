#pragma once

#include <cstdint>
#include <vector>

#include "amfusion/errors.hpp"

namespace amfusion {

// 8-bit grayscale image; metrics and file I/O both operate on this
// re-quantized representation.
struct GrayImageU8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> px;  // row-major

    GrayImageU8() = default;
    GrayImageU8(int w, int h) : width(w), height(h), px(static_cast<std::size_t>(w) * h, 0) {
        if (w < 2 || h < 2) throw ShapeError("GrayImageU8: dims must be >= 2x2");
    }

    std::uint8_t at(int y, int x) const { return px[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t& at(int y, int x) { return px[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return px.size(); }
};

} // namespace amfusion
