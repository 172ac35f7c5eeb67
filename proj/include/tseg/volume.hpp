#pragma once

#include <cstdint>
#include <vector>

#include "tseg/errors.hpp"

namespace tseg {

// Axis order is [z slices, y rows, x cols]; linear layout keeps x fastest,
// matching NIfTI's on-disk order.
struct Volume {
    int64_t dz = 0, dy = 0, dx = 0;
    float sz = 1.0f, sy = 1.0f, sx = 1.0f; // voxel spacing in mm
    std::vector<float> v;

    Volume() = default;
    Volume(int64_t z, int64_t y, int64_t x)
        : dz(z), dy(y), dx(x), v(size_t(z * y * x), 0.0f) {}

    int64_t numel() const { return dz * dy * dx; }
    float& at(int64_t z, int64_t y, int64_t x) {
        return v[size_t((z * dy + y) * dx + x)];
    }
    const float& at(int64_t z, int64_t y, int64_t x) const {
        return v[size_t((z * dy + y) * dx + x)];
    }
    bool same_dims(const Volume& o) const {
        return dz == o.dz && dy == o.dy && dx == o.dx;
    }
};

struct LabelVolume {
    int64_t dz = 0, dy = 0, dx = 0;
    float sz = 1.0f, sy = 1.0f, sx = 1.0f;
    std::vector<uint8_t> v;

    LabelVolume() = default;
    LabelVolume(int64_t z, int64_t y, int64_t x)
        : dz(z), dy(y), dx(x), v(size_t(z * y * x), 0) {}

    int64_t numel() const { return dz * dy * dx; }
    uint8_t& at(int64_t z, int64_t y, int64_t x) {
        return v[size_t((z * dy + y) * dx + x)];
    }
    const uint8_t& at(int64_t z, int64_t y, int64_t x) const {
        return v[size_t((z * dy + y) * dx + x)];
    }
    bool empty() const { return v.empty(); }
};

} // namespace tseg
