#pragma once

#include <cstdint>
#include <cstring>

namespace tseg {

// IEEE 754 binary16 conversions with round-to-nearest-even. Used only as a
// storage format for slice intensities; all arithmetic stays float.
inline uint16_t half_from_float(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint16_t sign = uint16_t((x >> 16) & 0x8000u);
    const int32_t exp = int32_t((x >> 23) & 0xffu) - 127;
    uint32_t man = x & 0x7fffffu;
    if (exp == 128) // inf / nan
        return uint16_t(sign | 0x7c00u | (man ? 0x200u : 0u));
    if (exp == -127) return sign; // float subnormals underflow to +-0
    if (exp > 15) return uint16_t(sign | 0x7c00u); // overflow -> inf
    man |= 0x800000u;
    int32_t he = exp + 15;
    int32_t shift = 13;
    if (he <= 0) { // half subnormal
        shift = 13 + 1 - he;
        he = 0;
    }
    if (shift > 25) return sign;
    uint32_t kept = man >> shift;
    const uint32_t rem = man & ((1u << shift) - 1u);
    const uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (kept & 1u))) ++kept;
    // normals carry the implicit bit in `kept`; the +1 overflow on round-up
    // lands in the exponent field, which is exactly the right binade bump
    const uint32_t out =
        he > 0 ? (uint32_t(he) << 10) + kept - 0x400u : kept;
    return uint16_t(sign | out);
}

inline float float_from_half(uint16_t h) {
    const uint32_t sign = uint32_t(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t man = h & 0x3ffu;
    uint32_t x;
    if (exp == 0) {
        if (man == 0) {
            x = sign;
        } else { // subnormal: renormalize
            int e = -1;
            do {
                ++e;
                man <<= 1;
            } while (!(man & 0x400u));
            man &= 0x3ffu;
            x = sign | (uint32_t(112 - e) << 23) | (man << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (man << 13);
    } else {
        x = sign | ((exp + 112u) << 23) | (man << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

} // namespace tseg
