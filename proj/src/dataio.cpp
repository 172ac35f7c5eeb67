#include "tseg/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tseg/kernels.hpp"
#include "tseg/rng.hpp"

namespace fs = std::filesystem;

namespace tseg {

void CropSpec::check_fits(int64_t dz, int64_t dy, int64_t dx) const {
    if (row_len < 1 || col_len < 1 || row_offset < 0 || col_offset < 0 ||
        slice_front_trim < 0 || slice_back_trim < 0)
        throw DimensionError("crop spec has negative or empty extents");
    if (row_offset + row_len > dy || col_offset + col_len > dx)
        throw DimensionError("crop window exceeds volume bounds");
    if (slice_front_trim + slice_back_trim >= dz)
        throw DimensionError("slice trims leave no slices");
}

namespace {

// --- raw little-endian field access into a 348-byte NIfTI-1 header ---

template <typename T>
T get_at(const uint8_t* hdr, size_t off, bool swap) {
    uint8_t b[sizeof(T)];
    std::memcpy(b, hdr + off, sizeof(T));
    if (swap) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

template <typename T>
void put_at(uint8_t* hdr, size_t off, T v) {
    std::memcpy(hdr + off, &v, sizeof(T));
}

constexpr size_t kHdrBytes = 348;
constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtFloat32 = 16;

std::vector<uint8_t> gz_read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::vector<uint8_t> out;
    uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0)
        out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw DataError("decompression failed for " + path);
    return out;
}

Volume parse_nifti(const std::vector<uint8_t>& raw, const std::string& path) {
    if (raw.size() < kHdrBytes)
        throw FormatError(path + ": shorter than a NIfTI-1 header");
    const uint8_t* h = raw.data();
    bool swap = false;
    if (get_at<int32_t>(h, 0, false) != 348) {
        swap = true;
        if (get_at<int32_t>(h, 0, true) != 348)
            throw FormatError(path + ": sizeof_hdr is not 348");
    }
    char magic[4];
    std::memcpy(magic, h + 344, 4);
    const bool n1 = std::memcmp(magic, "n+1", 4) == 0;
    const bool ni1 = std::memcmp(magic, "ni1", 4) == 0;
    if (!n1 && !ni1)
        throw FormatError(path + ": missing NIfTI magic (n+1/ni1)");
    if (ni1)
        throw FormatError(path +
                          ": two-file (.hdr/.img) NIfTI is not supported");

    const int16_t rank = get_at<int16_t>(h, 40, swap);
    if (rank != 3)
        throw FormatError(path + ": expected a 3D image, got rank " +
                          std::to_string(rank));
    const int64_t nx = get_at<int16_t>(h, 42, swap);
    const int64_t ny = get_at<int16_t>(h, 44, swap);
    const int64_t nz = get_at<int16_t>(h, 46, swap);
    if (nx < 1 || ny < 1 || nz < 1)
        throw FormatError(path + ": non-positive dimension");

    const int16_t dtype = get_at<int16_t>(h, 70, swap);
    const int16_t bitpix = get_at<int16_t>(h, 72, swap);
    int64_t bytes_per;
    switch (dtype) {
        case kDtUint8: bytes_per = 1; break;
        case kDtInt16: bytes_per = 2; break;
        case kDtFloat32: bytes_per = 4; break;
        default:
            throw FormatError(path + ": unsupported datatype " +
                              std::to_string(dtype));
    }
    if (bitpix != bytes_per * 8)
        throw FormatError(path + ": bitpix inconsistent with datatype");

    Volume vol(nz, ny, nx);
    vol.sx = get_at<float>(h, 80, swap);
    vol.sy = get_at<float>(h, 84, swap);
    vol.sz = get_at<float>(h, 88, swap);
    if (!(vol.sx > 0)) vol.sx = 1.0f;
    if (!(vol.sy > 0)) vol.sy = 1.0f;
    if (!(vol.sz > 0)) vol.sz = 1.0f;

    const float vox_offset = get_at<float>(h, 108, swap);
    const int64_t off = int64_t(vox_offset);
    if (off < int64_t(kHdrBytes) || vox_offset != float(off))
        throw FormatError(path + ": bad vox_offset");
    float slope = get_at<float>(h, 112, swap);
    float inter = get_at<float>(h, 116, swap);
    if (slope == 0.0f) { // NIfTI convention: 0 means "no scaling stored"
        slope = 1.0f;
        inter = 0.0f;
    }

    const int64_t n = vol.numel();
    if (int64_t(raw.size()) < off + n * bytes_per)
        throw FormatError(path + ": file truncated");
    const uint8_t* d = raw.data() + off;
    switch (dtype) {
        case kDtUint8:
            for (int64_t i = 0; i < n; ++i)
                vol.v[size_t(i)] = slope * float(d[i]) + inter;
            break;
        case kDtInt16:
            for (int64_t i = 0; i < n; ++i)
                vol.v[size_t(i)] =
                    slope * float(get_at<int16_t>(d, size_t(i) * 2, swap)) +
                    inter;
            break;
        case kDtFloat32:
            for (int64_t i = 0; i < n; ++i)
                vol.v[size_t(i)] =
                    slope * get_at<float>(d, size_t(i) * 4, swap) + inter;
            break;
    }
    if (!kern::all_finite(vol.v.data(), n))
        throw FormatError(path + ": non-finite voxel values");
    return vol;
}

std::vector<uint8_t> build_header(const Volume& shape, int16_t dtype,
                                  int16_t bitpix) {
    std::vector<uint8_t> h(kHdrBytes + 4, 0); // header + extension flag
    put_at<int32_t>(h.data(), 0, 348);
    put_at<int16_t>(h.data(), 40, 3);
    put_at<int16_t>(h.data(), 42, int16_t(shape.dx));
    put_at<int16_t>(h.data(), 44, int16_t(shape.dy));
    put_at<int16_t>(h.data(), 46, int16_t(shape.dz));
    for (size_t i = 4; i < 8; ++i)
        put_at<int16_t>(h.data(), 40 + 2 * i, 1);
    put_at<int16_t>(h.data(), 70, dtype);
    put_at<int16_t>(h.data(), 72, bitpix);
    put_at<float>(h.data(), 76, 1.0f); // pixdim[0]
    put_at<float>(h.data(), 80, shape.sx);
    put_at<float>(h.data(), 84, shape.sy);
    put_at<float>(h.data(), 88, shape.sz);
    for (size_t i = 4; i < 8; ++i)
        put_at<float>(h.data(), 76 + 4 * i, 1.0f);
    put_at<float>(h.data(), 108, 352.0f); // vox_offset
    put_at<float>(h.data(), 112, 1.0f);   // scl_slope
    std::memcpy(h.data() + 344, "n+1", 4);
    return h;
}

void write_raw(const std::string& path, const std::vector<uint8_t>& hdr,
               const uint8_t* data, size_t nbytes) {
    const std::string tmp = path + ".tmp";
    if (path.size() > 3 && path.ends_with(".gz")) {
        gzFile f = gzopen(tmp.c_str(), "wb");
        if (!f) throw DataError("cannot write " + tmp);
        bool ok = gzwrite(f, hdr.data(), unsigned(hdr.size())) ==
                  int(hdr.size());
        for (size_t at = 0; ok && at < nbytes;) {
            const unsigned chunk = unsigned(std::min<size_t>(
                nbytes - at, size_t(1) << 24));
            ok = gzwrite(f, data + at, chunk) == int(chunk);
            at += chunk;
        }
        gzclose(f);
        if (!ok) throw DataError("write failed: " + tmp);
    } else {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + tmp);
        f.write(reinterpret_cast<const char*>(hdr.data()),
                std::streamsize(hdr.size()));
        f.write(reinterpret_cast<const char*>(data), std::streamsize(nbytes));
        if (!f) throw DataError("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot rename " + tmp + " to " + path);
}

} // namespace

Volume read_nifti(const std::string& path) {
    return parse_nifti(gz_read_all(path), path);
}

LabelVolume read_nifti_labels(const std::string& path) {
    const Volume raw = read_nifti(path);
    LabelVolume lab(raw.dz, raw.dy, raw.dx);
    lab.sz = raw.sz;
    lab.sy = raw.sy;
    lab.sx = raw.sx;
    for (int64_t i = 0; i < raw.numel(); ++i) {
        const float f = raw.v[size_t(i)];
        if (f != 0.0f && f != 1.0f && f != 2.0f && f != 4.0f)
            throw DataError(path + ": label value " + std::to_string(f) +
                            " outside {0,1,2,4}");
        lab.v[size_t(i)] = uint8_t(f);
    }
    return lab;
}

void write_nifti(const std::string& path, const Volume& vol) {
    const std::vector<uint8_t> hdr = build_header(vol, kDtFloat32, 32);
    write_raw(path, hdr, reinterpret_cast<const uint8_t*>(vol.v.data()),
              vol.v.size() * sizeof(float));
}

void write_nifti(const std::string& path, const LabelVolume& vol) {
    Volume shape;
    shape.dz = vol.dz;
    shape.dy = vol.dy;
    shape.dx = vol.dx;
    shape.sz = vol.sz;
    shape.sy = vol.sy;
    shape.sx = vol.sx;
    const std::vector<uint8_t> hdr = build_header(shape, kDtUint8, 8);
    write_raw(path, hdr, vol.v.data(), vol.v.size());
}

Volume normalize_modality(const Volume& vol) {
    double sum = 0.0;
    int64_t cnt = 0;
    for (float f : vol.v)
        if (f != 0.0f) {
            sum += double(f);
            ++cnt;
        }
    if (cnt == 0)
        throw DataError("degenerate volume: no nonzero (brain) voxels");
    const double mu = sum / double(cnt);
    double ss = 0.0;
    for (float f : vol.v)
        if (f != 0.0f) {
            const double d = double(f) - mu;
            ss += d * d;
        }
    const double sigma = std::sqrt(ss / double(cnt));
    if (sigma == 0.0)
        throw DataError("degenerate volume: zero intensity variance");

    Volume out = vol;
    const double inv = 1.0 / sigma;
    for (float& f : out.v)
        if (f != 0.0f) f = float((double(f) - mu) * inv);
    return out;
}

namespace {

template <typename V>
V crop_volume(const V& src, const CropSpec& c) {
    V out(src.dz - c.slice_front_trim - c.slice_back_trim, c.row_len,
          c.col_len);
    out.sz = src.sz;
    out.sy = src.sy;
    out.sx = src.sx;
    for (int64_t z = 0; z < out.dz; ++z)
        for (int64_t y = 0; y < out.dy; ++y)
            std::memcpy(&out.at(z, y, 0),
                        &src.at(z + c.slice_front_trim, y + c.row_offset,
                                c.col_offset),
                        size_t(c.col_len) * sizeof(out.v[0]));
    return out;
}

} // namespace

CaseBundle preprocess_case(const CaseBundle& c, const CropSpec& crop) {
    if (!c.flair.same_dims(c.t2) || !c.flair.same_dims(c.t1ce) ||
        !c.flair.same_dims(c.t1))
        throw DimensionError("case " + c.case_id +
                             ": modality dimensions differ");
    if (c.has_labels() &&
        (c.labels.dz != c.flair.dz || c.labels.dy != c.flair.dy ||
         c.labels.dx != c.flair.dx))
        throw DimensionError("case " + c.case_id +
                             ": label dimensions differ from modalities");
    crop.check_fits(c.flair.dz, c.flair.dy, c.flair.dx);

    CaseBundle out;
    out.case_id = c.case_id;
    out.flair = crop_volume(normalize_modality(c.flair), crop);
    out.t2 = crop_volume(normalize_modality(c.t2), crop);
    out.t1ce = crop_volume(normalize_modality(c.t1ce), crop);
    out.t1 = crop_volume(normalize_modality(c.t1), crop);
    if (c.has_labels()) out.labels = crop_volume(c.labels, crop);
    return out;
}

LabelVolume embed_prediction(const LabelVolume& cropped, const CropSpec& crop,
                             int64_t native_dz, int64_t native_dy,
                             int64_t native_dx) {
    crop.check_fits(native_dz, native_dy, native_dx);
    if (cropped.dz != native_dz - crop.slice_front_trim - crop.slice_back_trim ||
        cropped.dy != crop.row_len || cropped.dx != crop.col_len)
        throw DimensionError("cropped labels do not match the crop spec");
    LabelVolume out(native_dz, native_dy, native_dx);
    out.sz = cropped.sz;
    out.sy = cropped.sy;
    out.sx = cropped.sx;
    for (int64_t z = 0; z < cropped.dz; ++z)
        for (int64_t y = 0; y < cropped.dy; ++y)
            std::memcpy(&out.at(z + crop.slice_front_trim, y + crop.row_offset,
                                crop.col_offset),
                        &cropped.at(z, y, 0), size_t(cropped.dx));
    return out;
}

namespace {

struct Ellipsoid {
    double cz, cy, cx, az, ay, ax;

    bool contains(int64_t z, int64_t y, int64_t x) const {
        const double u = (double(z) - cz) / az;
        const double v = (double(y) - cy) / ay;
        const double w = (double(x) - cx) / ax;
        return u * u + v * v + w * w <= 1.0;
    }
    int64_t lo(double c, double a) const { return int64_t(std::floor(c - a)); }
    int64_t hi(double c, double a) const { return int64_t(std::ceil(c + a)); }
};

} // namespace

CaseBundle make_phantom_case(uint64_t seed, int64_t ci, bool tumor_free) {
    if (ci < 0) throw ConfigError("case index must be >= 0");
    const int64_t DZ = 155, DY = 240, DX = 240;

    {
        auto rng = Rng::substream(seed, "phantom-case-" + std::to_string(ci));
        CaseBundle cb;
        {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "phantom_%03d", int(ci));
            cb.case_id = buf;
        }

        const Ellipsoid brain{77.0 + rng.uniform(-4, 4),
                              120.0 + rng.uniform(-6, 6),
                              120.0 + rng.uniform(-6, 6),
                              60.0 + rng.uniform(-4, 4),
                              86.0 + rng.uniform(-5, 5),
                              76.0 + rng.uniform(-5, 5)};

        // concentric tumor ellipsoids guarantee ET inside TC inside WT
        Ellipsoid wt{}, tc{}, et{};
        const bool small_et = !tumor_free && (ci % 4 == 1);
        if (!tumor_free) {
            wt.az = rng.uniform(12, 20);
            wt.ay = rng.uniform(16, 28);
            wt.ax = rng.uniform(16, 28);
            wt.cz = brain.cz + rng.uniform(-0.45, 0.45) * (brain.az - wt.az);
            wt.cy = brain.cy + rng.uniform(-0.45, 0.45) * (brain.ay - wt.ay);
            wt.cx = brain.cx + rng.uniform(-0.45, 0.45) * (brain.ax - wt.ax);
            const double shrink = rng.uniform(0.6, 0.75);
            tc = wt;
            tc.az *= shrink;
            tc.ay *= shrink;
            tc.ax *= shrink;
            et = tc;
            if (small_et) {
                // spans at most 5 slices: the refinement rule must fire
                et.az = rng.uniform(1.2, 1.9);
                et.ay = tc.ay * rng.uniform(0.4, 0.6);
                et.ax = tc.ax * rng.uniform(0.4, 0.6);
            } else {
                const double s2 = rng.uniform(0.6, 0.75);
                et.az = std::max(4.5, tc.az * s2);
                et.ay = tc.ay * s2;
                et.ax = tc.ax * s2;
            }
        }

        LabelVolume lab(DZ, DY, DX);
        if (!tumor_free) {
            for (int64_t z = std::max<int64_t>(0, wt.lo(wt.cz, wt.az));
                 z <= std::min(DZ - 1, wt.hi(wt.cz, wt.az)); ++z)
                for (int64_t y = std::max<int64_t>(0, wt.lo(wt.cy, wt.ay));
                     y <= std::min(DY - 1, wt.hi(wt.cy, wt.ay)); ++y)
                    for (int64_t x = std::max<int64_t>(0, wt.lo(wt.cx, wt.ax));
                         x <= std::min(DX - 1, wt.hi(wt.cx, wt.ax)); ++x) {
                        if (!wt.contains(z, y, x)) continue;
                        lab.at(z, y, x) = et.contains(z, y, x)
                                              ? 4
                                              : tc.contains(z, y, x) ? 1 : 2;
                    }
        }
        cb.labels = std::move(lab);

        // modality contrasts: WT bright on flair/t2, ET bright on t1ce,
        // necrotic core dark on t1ce/t1
        struct Profile {
            float brain, ed, net, et;
        };
        const Profile prof[4] = {{1.0f, 1.9f, 1.7f, 1.6f},   // flair
                                 {1.0f, 1.8f, 1.5f, 1.4f},   // t2
                                 {1.0f, 1.05f, 0.55f, 2.2f}, // t1ce
                                 {1.0f, 0.9f, 0.7f, 0.95f}}; // t1
        const float unit[4] = {320.0f, 410.0f, 280.0f, 350.0f};

        Volume* mods[4];
        cb.flair = Volume(DZ, DY, DX);
        cb.t2 = Volume(DZ, DY, DX);
        cb.t1ce = Volume(DZ, DY, DX);
        cb.t1 = Volume(DZ, DY, DX);
        mods[0] = &cb.flair;
        mods[1] = &cb.t2;
        mods[2] = &cb.t1ce;
        mods[3] = &cb.t1;

        for (int64_t z = std::max<int64_t>(0, brain.lo(brain.cz, brain.az));
             z <= std::min(DZ - 1, brain.hi(brain.cz, brain.az)); ++z)
            for (int64_t y = std::max<int64_t>(0, brain.lo(brain.cy, brain.ay));
                 y <= std::min(DY - 1, brain.hi(brain.cy, brain.ay)); ++y)
                for (int64_t x =
                         std::max<int64_t>(0, brain.lo(brain.cx, brain.ax));
                     x <= std::min(DX - 1, brain.hi(brain.cx, brain.ax)); ++x) {
                    if (!brain.contains(z, y, x)) continue;
                    const uint8_t l = cb.labels.at(z, y, x);
                    // mild ramp so the background brain is not constant
                    const float ramp =
                        float(1.0 + 0.08 * (double(y) - brain.cy) / brain.ay +
                              0.05 * (double(x) - brain.cx) / brain.ax);
                    for (int m = 0; m < 4; ++m) {
                        const Profile& p = prof[m];
                        const float base = l == 4   ? p.et
                                           : l == 1 ? p.net
                                           : l == 2 ? p.ed
                                                    : p.brain * ramp;
                        const float noisy =
                            base + 0.06f * float(rng.normal());
                        mods[m]->at(z, y, x) =
                            unit[m] * std::max(0.05f, noisy);
                    }
                }
        return cb;
    }
}

std::vector<CaseBundle> make_phantom(uint64_t seed, int64_t n_cases,
                                     bool tumor_free) {
    if (n_cases < 1) throw ConfigError("n_cases must be >= 1");
    std::vector<CaseBundle> out;
    out.reserve(size_t(n_cases));
    for (int64_t ci = 0; ci < n_cases; ++ci)
        out.push_back(make_phantom_case(seed, ci, tumor_free));
    return out;
}

void append_case(SliceDataset& ds, const CaseBundle& c) {
    if (!c.has_labels())
        throw DataError("case " + c.case_id + " has no labels");
    if (c.flair.dy != ds.h || c.flair.dx != ds.w)
        throw DimensionError("case " + c.case_id +
                             " has mismatched slice size");
    const int64_t h = ds.h, w = ds.w;
    std::vector<float> chans(size_t(4 * h * w));
    const Volume* mods[4] = {&c.flair, &c.t2, &c.t1ce, &c.t1};
    for (int64_t z = 0; z < c.flair.dz; ++z) {
        for (int m = 0; m < 4; ++m)
            std::memcpy(chans.data() + m * h * w, &mods[m]->at(z, 0, 0),
                        size_t(h * w) * sizeof(float));
        ds.append_slice(chans.data(), &c.labels.at(z, 0, 0));
    }
}

SliceDataset make_slice_dataset(const std::vector<CaseBundle>& cases) {
    if (cases.empty()) throw DataError("no cases to assemble");
    SliceDataset ds(cases[0].flair.dy, cases[0].flair.dx);
    for (const CaseBundle& c : cases) append_case(ds, c);
    return ds;
}

namespace {

std::string find_modality(const std::string& dir, const std::string& case_id,
                          const std::string& mod) {
    const std::string stem = dir + "/" + case_id + "/" + case_id + "_" + mod;
    for (const char* ext : {".nii.gz", ".nii"})
        if (fs::exists(stem + ext)) return stem + ext;
    throw DataError("missing " + mod + " image for case " + case_id + " (" +
                    stem + ".nii[.gz])");
}

} // namespace

CaseBundle read_case(const std::string& dir, const std::string& case_id,
                     bool need_labels) {
    CaseBundle c;
    c.case_id = case_id;
    c.flair = read_nifti(find_modality(dir, case_id, "flair"));
    c.t2 = read_nifti(find_modality(dir, case_id, "t2"));
    c.t1ce = read_nifti(find_modality(dir, case_id, "t1ce"));
    c.t1 = read_nifti(find_modality(dir, case_id, "t1"));
    const std::string stem = dir + "/" + case_id + "/" + case_id + "_seg";
    std::string seg;
    for (const char* ext : {".nii.gz", ".nii"})
        if (fs::exists(stem + ext)) seg = stem + ext;
    if (seg.empty()) {
        if (need_labels)
            throw DataError("missing labels for case " + case_id);
    } else {
        c.labels = read_nifti_labels(seg);
    }
    if (!c.flair.same_dims(c.t2) || !c.flair.same_dims(c.t1ce) ||
        !c.flair.same_dims(c.t1))
        throw DimensionError("case " + case_id + ": modality dims differ");
    return c;
}

void write_case(const std::string& dir, const CaseBundle& c) {
    const std::string cdir = dir + "/" + c.case_id;
    std::error_code ec;
    fs::create_directories(cdir, ec);
    if (ec) throw DataError("cannot create " + cdir + ": " + ec.message());
    const std::string stem = cdir + "/" + c.case_id + "_";
    write_nifti(stem + "flair.nii", c.flair);
    write_nifti(stem + "t2.nii", c.t2);
    write_nifti(stem + "t1ce.nii", c.t1ce);
    write_nifti(stem + "t1.nii", c.t1);
    if (c.has_labels()) write_nifti(stem + "seg.nii", c.labels);
}

std::vector<std::string> list_cases(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace tseg
