#pragma once

#include <cstdint>
#include <vector>

#include "tseg/errors.hpp"
#include "tseg/volume.hpp"

namespace tseg {

// One maximal connected component of a binary mask. `members` holds linear
// indices in ascending order; components are numbered by their smallest
// member index.
struct ComponentStats {
    int id = 0;
    int64_t voxels = 0;
    int64_t slice_span = 0; // distinct z indices touched
    std::vector<int64_t> members;
};

// Per-voxel priority fusion of the three branch maps: et wins over net wins
// over wt; below-threshold everywhere = background. With clamp_to_wt, voxels
// the WT branch rejects stay background regardless of et/net.
LabelVolume fuse_branches(const Volume& wt, const Volume& et,
                          const Volume& net, float threshold = 0.5f,
                          bool clamp_to_wt = false);

// Nonzero voxels of `mask` partitioned into maximal components.
// connectivity is 6, 18 or 26.
std::vector<ComponentStats> connected_components_3d(const LabelVolume& mask,
                                                    int connectivity = 26);

// Relabel every ET (4) component that spans < min_slices slices or holds
// < min_voxels voxels to NET (1). Other labels are never touched.
LabelVolume refine_et(const LabelVolume& labels, int64_t min_slices = 6,
                      int64_t min_voxels = 1000, int connectivity = 26);

} // namespace tseg
