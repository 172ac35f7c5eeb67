#pragma once

#include <cstdint>
#include <vector>

#include "tseg/errors.hpp"
#include "tseg/half.hpp"

namespace tseg {

// In-memory training corpus: 2D slices with four modality channels (stored as
// binary16 to keep large phantom sets resident) and a raw label map over
// {0, 1, 2, 4}.
struct SliceDataset {
    int64_t h = 0, w = 0;
    int64_t count = 0;
    std::vector<uint16_t> pixels; // count * 4 * h * w
    std::vector<uint8_t> labels;  // count * h * w

    SliceDataset() = default;
    SliceDataset(int64_t height, int64_t width) : h(height), w(width) {}

    int64_t slice_pixels() const { return h * w; }

    // chans: 4*h*w floats in modality order; lab: h*w labels
    void append_slice(const float* chans, const uint8_t* lab) {
        const int64_t hw = slice_pixels();
        pixels.reserve(pixels.size() + size_t(4 * hw));
        for (int64_t i = 0; i < 4 * hw; ++i)
            pixels.push_back(half_from_float(chans[i]));
        labels.insert(labels.end(), lab, lab + hw);
        ++count;
    }

    // Decodes slice i's four channels into x (4*h*w floats).
    void fetch(int64_t i, float* x) const {
        if (i < 0 || i >= count)
            throw ContractError("slice index out of range");
        const uint16_t* src = pixels.data() + size_t(i * 4 * slice_pixels());
        for (int64_t j = 0; j < 4 * slice_pixels(); ++j)
            x[j] = float_from_half(src[j]);
    }

    const uint8_t* label(int64_t i) const {
        if (i < 0 || i >= count)
            throw ContractError("slice index out of range");
        return labels.data() + size_t(i * slice_pixels());
    }
};

// Binary branch masks from a raw label map: WT = {1,2,4}, ET = {4}, NET = {1}.
inline void branch_masks(const uint8_t* lab, int64_t n, float* wt, float* et,
                         float* net) {
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t v = lab[i];
        wt[i] = (v == 1 || v == 2 || v == 4) ? 1.0f : 0.0f;
        et[i] = v == 4 ? 1.0f : 0.0f;
        net[i] = v == 1 ? 1.0f : 0.0f;
    }
}

} // namespace tseg
