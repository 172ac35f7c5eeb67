#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tseg/dataset.hpp"
#include "tseg/volume.hpp"

namespace tseg {

struct CropSpec {
    int64_t row_offset = 20;
    int64_t row_len = 200;
    int64_t col_offset = 36;
    int64_t col_len = 168;
    int64_t slice_front_trim = 15;
    int64_t slice_back_trim = 12;

    // throws DimensionError if the window/trims do not fit [dz,dy,dx]
    void check_fits(int64_t dz, int64_t dy, int64_t dx) const;
};

struct CaseBundle {
    std::string case_id;
    Volume flair, t2, t1ce, t1;
    LabelVolume labels; // optional; empty() when absent

    bool has_labels() const { return !labels.empty(); }
};

// NIfTI-1, plain or gzip-compressed, datatypes uint8/int16/float32,
// scl_slope/scl_inter applied, either endianness.
Volume read_nifti(const std::string& path);
LabelVolume read_nifti_labels(const std::string& path);
void write_nifti(const std::string& path, const Volume& vol);
void write_nifti(const std::string& path, const LabelVolume& vol);

// z-score over strictly nonzero (brain) voxels; background stays exactly 0.
Volume normalize_modality(const Volume& vol);

// normalize all four modalities, then crop rows/cols and trim slices; labels
// are cropped identically but never rescaled.
CaseBundle preprocess_case(const CaseBundle& c, const CropSpec& crop);

// inverse coordinate mapping of preprocess_case for label volumes; the
// trimmed/cropped surround is label 0.
LabelVolume embed_prediction(const LabelVolume& cropped, const CropSpec& crop,
                             int64_t native_dz = 155, int64_t native_dy = 240,
                             int64_t native_dx = 240);

// Synthetic BraTS-shaped cases: brain ellipsoid with nested tumor ellipsoids
// ET inside TC inside WT; every fourth case (i % 4 == 1) carries an ET small
// enough to trip the refinement rule. Deterministic per (seed, case index).
std::vector<CaseBundle> make_phantom(uint64_t seed, int64_t n_cases,
                                     bool tumor_free = false);
CaseBundle make_phantom_case(uint64_t seed, int64_t index,
                             bool tumor_free = false);

// Preprocessed cases -> training slices (channel order Flair, T2, T1ce, T1).
SliceDataset make_slice_dataset(const std::vector<CaseBundle>& cases);
void append_case(SliceDataset& ds, const CaseBundle& c);

// Disk layout: <dir>/<case>/<case>_<modality>.nii[.gz], labels *_seg.nii[.gz]
CaseBundle read_case(const std::string& dir, const std::string& case_id,
                     bool need_labels);
void write_case(const std::string& dir, const CaseBundle& c);
std::vector<std::string> list_cases(const std::string& dir);

} // namespace tseg
