#include "tseg/postprocess.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

namespace tseg {

LabelVolume fuse_branches(const Volume& wt, const Volume& et,
                          const Volume& net, float threshold,
                          bool clamp_to_wt) {
    if (!wt.same_dims(et) || !wt.same_dims(net))
        throw DimensionError("branch map dimensions differ");
    LabelVolume out(wt.dz, wt.dy, wt.dx);
    out.sz = wt.sz;
    out.sy = wt.sy;
    out.sx = wt.sx;
    const int64_t n = wt.numel();
    for (int64_t i = 0; i < n; ++i) {
        const bool in_wt = wt.v[size_t(i)] >= threshold;
        if (clamp_to_wt && !in_wt) continue;
        uint8_t l = 0;
        if (et.v[size_t(i)] >= threshold)
            l = 4;
        else if (net.v[size_t(i)] >= threshold)
            l = 1;
        else if (in_wt)
            l = 2;
        out.v[size_t(i)] = l;
    }
    return out;
}

namespace {

std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw ConfigError("connectivity must be 6, 18 or 26");
    std::vector<std::array<int, 3>> offs;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int man = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (man == 0) continue;
                if (connectivity == 6 && man > 1) continue;
                if (connectivity == 18 && man > 2) continue;
                offs.push_back({dz, dy, dx});
            }
    return offs;
}

} // namespace

std::vector<ComponentStats> connected_components_3d(const LabelVolume& mask,
                                                    int connectivity) {
    const auto offs = neighbor_offsets(connectivity);
    const int64_t dz = mask.dz, dy = mask.dy, dx = mask.dx;
    const int64_t n = mask.numel();
    std::vector<uint8_t> seen(size_t(n), 0);
    std::vector<ComponentStats> comps;
    std::vector<int64_t> stack;

    // linear scan order makes component ids follow minimal member index
    for (int64_t seed = 0; seed < n; ++seed) {
        if (mask.v[size_t(seed)] == 0 || seen[size_t(seed)]) continue;
        ComponentStats c;
        c.id = int(comps.size());
        seen[size_t(seed)] = 1;
        stack.assign(1, seed);
        while (!stack.empty()) {
            const int64_t at = stack.back();
            stack.pop_back();
            c.members.push_back(at);
            const int64_t z = at / (dy * dx);
            const int64_t y = (at / dx) % dy;
            const int64_t x = at % dx;
            for (const auto& o : offs) {
                const int64_t nz = z + o[0], ny = y + o[1], nx = x + o[2];
                if (nz < 0 || nz >= dz || ny < 0 || ny >= dy || nx < 0 ||
                    nx >= dx)
                    continue;
                const int64_t ni = (nz * dy + ny) * dx + nx;
                if (mask.v[size_t(ni)] == 0 || seen[size_t(ni)]) continue;
                seen[size_t(ni)] = 1;
                stack.push_back(ni);
            }
        }
        std::sort(c.members.begin(), c.members.end());
        c.voxels = int64_t(c.members.size());
        int64_t distinct = 1;
        for (size_t i = 1; i < c.members.size(); ++i)
            distinct += c.members[i] / (dy * dx) !=
                        c.members[i - 1] / (dy * dx);
        c.slice_span = distinct;
        comps.push_back(std::move(c));
    }
    return comps;
}

LabelVolume refine_et(const LabelVolume& labels, int64_t min_slices,
                      int64_t min_voxels, int connectivity) {
    LabelVolume mask(labels.dz, labels.dy, labels.dx);
    for (size_t i = 0; i < labels.v.size(); ++i)
        mask.v[i] = labels.v[i] == 4;
    LabelVolume out = labels;
    for (const ComponentStats& c : connected_components_3d(mask, connectivity))
        if (c.slice_span < min_slices || c.voxels < min_voxels)
            for (int64_t i : c.members) out.v[size_t(i)] = 1;
    return out;
}

} // namespace tseg
