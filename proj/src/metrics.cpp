#include "tseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace tseg {

LabelVolume region_mask(const LabelVolume& labels, Region r) {
    LabelVolume m(labels.dz, labels.dy, labels.dx);
    m.sz = labels.sz;
    m.sy = labels.sy;
    m.sx = labels.sx;
    for (size_t i = 0; i < labels.v.size(); ++i) {
        const uint8_t l = labels.v[i];
        switch (r) {
            case Region::ET: m.v[i] = l == 4; break;
            case Region::TC: m.v[i] = l == 1 || l == 4; break;
            case Region::WT: m.v[i] = l != 0; break;
        }
    }
    return m;
}

namespace {

void check_dims(const LabelVolume& a, const LabelVolume& b) {
    if (a.dz != b.dz || a.dy != b.dy || a.dx != b.dx)
        throw DimensionError("mask dimensions differ");
}

int64_t count_fg(const LabelVolume& m) {
    int64_t n = 0;
    for (uint8_t v : m.v) n += v != 0;
    return n;
}

int64_t count_and(const LabelVolume& a, const LabelVolume& b) {
    int64_t n = 0;
    for (size_t i = 0; i < a.v.size(); ++i) n += a.v[i] && b.v[i];
    return n;
}

} // namespace

double dice(const LabelVolume& pred, const LabelVolume& truth) {
    check_dims(pred, truth);
    const int64_t p = count_fg(pred), t = count_fg(truth);
    if (p + t == 0) return 1.0;
    return 2.0 * double(count_and(pred, truth)) / double(p + t);
}

Flagged sensitivity(const LabelVolume& pred, const LabelVolume& truth) {
    check_dims(pred, truth);
    const int64_t t = count_fg(truth);
    if (t == 0) return {1.0, true};
    return {double(count_and(pred, truth)) / double(t), false};
}

Flagged specificity(const LabelVolume& pred, const LabelVolume& truth) {
    check_dims(pred, truth);
    const int64_t t0 = truth.numel() - count_fg(truth);
    if (t0 == 0) return {1.0, true};
    int64_t both_bg = 0;
    for (size_t i = 0; i < pred.v.size(); ++i)
        both_bg += !pred.v[i] && !truth.v[i];
    return {double(both_bg) / double(t0), false};
}

namespace {

constexpr double kFarAway = 1e30; // finite stand-in for "no seed yet"

// 1D squared distance transform on a grid with sample spacing s
// (Felzenszwalb-Huttenlocher lower envelope of parabolas).
void dt_1d(const double* f, double* d, int n, double s, int* v, double* z) {
    const double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf; // f is capped finite, so intersections never reach the
    z[1] = inf;  // sentinels and k cannot underflow
    for (int q = 1; q < n; ++q) {
        double sx;
        for (;;) {
            const int p = v[k];
            sx = ((f[q] + q * s * q * s) - (f[p] + p * s * p * s)) /
                 (2.0 * s * (q - p));
            if (sx <= z[k])
                --k;
            else
                break;
        }
        ++k;
        v[k] = q;
        z[k] = sx;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        const double x = q * s;
        while (z[k + 1] < x) ++k;
        const double dx = x - v[k] * s;
        d[q] = dx * dx + f[v[k]];
    }
}

// squared Euclidean distance from every voxel center to the nearest
// foreground voxel of `mask`, anisotropic spacing
std::vector<double> squared_edt(const LabelVolume& mask, Spacing sp) {
    const int64_t dz = mask.dz, dy = mask.dy, dx = mask.dx;
    std::vector<double> d(mask.v.size());
    for (size_t i = 0; i < mask.v.size(); ++i)
        d[i] = mask.v[i] ? 0.0 : kFarAway;

    const size_t nmax = size_t(std::max({dz, dy, dx}));
    std::vector<double> f(nmax), g(nmax), z(nmax + 1);
    std::vector<int> v(nmax);

    for (int64_t zz = 0; zz < dz; ++zz) // pass 1: along x
        for (int64_t y = 0; y < dy; ++y) {
            double* row = d.data() + (zz * dy + y) * dx;
            dt_1d(row, g.data(), int(dx), sp.x, v.data(), z.data());
            std::copy(g.begin(), g.begin() + dx, row);
        }
    for (int64_t zz = 0; zz < dz; ++zz) // pass 2: along y
        for (int64_t x = 0; x < dx; ++x) {
            for (int64_t y = 0; y < dy; ++y)
                f[size_t(y)] = d[size_t((zz * dy + y) * dx + x)];
            dt_1d(f.data(), g.data(), int(dy), sp.y, v.data(), z.data());
            for (int64_t y = 0; y < dy; ++y)
                d[size_t((zz * dy + y) * dx + x)] = g[size_t(y)];
        }
    for (int64_t y = 0; y < dy; ++y) // pass 3: along z
        for (int64_t x = 0; x < dx; ++x) {
            for (int64_t zz = 0; zz < dz; ++zz)
                f[size_t(zz)] = d[size_t((zz * dy + y) * dx + x)];
            dt_1d(f.data(), g.data(), int(dz), sp.z, v.data(), z.data());
            for (int64_t zz = 0; zz < dz; ++zz)
                d[size_t((zz * dy + y) * dx + x)] = g[size_t(zz)];
        }
    return d;
}

// linear-interpolated percentile of the sorted values, numpy convention
double percentile(std::vector<double>& vals, double pct) {
    std::sort(vals.begin(), vals.end());
    const double rank = pct / 100.0 * double(vals.size() - 1);
    const size_t lo = size_t(rank);
    if (lo + 1 >= vals.size()) return vals.back();
    const double frac = rank - double(lo);
    return vals[lo] + frac * (vals[lo + 1] - vals[lo]);
}

double directed_q95(const LabelVolume& from, const std::vector<double>& edt) {
    std::vector<double> dists;
    for (size_t i = 0; i < from.v.size(); ++i)
        if (from.v[i]) dists.push_back(std::sqrt(edt[i]));
    return percentile(dists, 95.0);
}

} // namespace

Flagged hausdorff95(const LabelVolume& pred, const LabelVolume& truth,
                    Spacing sp, bool directed) {
    check_dims(pred, truth);
    if (count_fg(pred) == 0 || count_fg(truth) == 0) return {0.0, true};
    const double fwd = directed_q95(pred, squared_edt(truth, sp));
    if (directed) return {fwd, false};
    const double bwd = directed_q95(truth, squared_edt(pred, sp));
    return {std::max(fwd, bwd), false};
}

CaseReport evaluate_case(const LabelVolume& pred, const LabelVolume& truth,
                         Spacing sp) {
    check_dims(pred, truth);
    CaseReport r;
    for (Region reg : {Region::ET, Region::WT, Region::TC}) {
        const LabelVolume pm = region_mask(pred, reg);
        const LabelVolume tm = region_mask(truth, reg);
        RegionMetrics m;
        m.dice = dice(pm, tm);
        m.sensitivity = sensitivity(pm, tm);
        m.specificity = specificity(pm, tm);
        m.hausdorff95 = hausdorff95(pm, tm, sp);
        (reg == Region::ET ? r.et : reg == Region::WT ? r.wt : r.tc) = m;
    }
    return r;
}

namespace {

Summary summarize(std::vector<double> vals) {
    Summary s;
    s.n = int64_t(vals.size());
    if (vals.empty()) return s;
    double sum = 0;
    for (double v : vals) sum += v;
    s.mean = sum / double(s.n);
    std::sort(vals.begin(), vals.end());
    s.median = s.n % 2 ? vals[size_t(s.n / 2)]
                       : 0.5 * (vals[size_t(s.n / 2 - 1)] +
                                vals[size_t(s.n / 2)]);
    if (s.n > 1) {
        double ss = 0;
        for (double v : vals) ss += (v - s.mean) * (v - s.mean);
        s.stdev = std::sqrt(ss / double(s.n - 1));
    }
    return s;
}

RegionAggregate aggregate_region(const std::vector<CaseReport>& reports,
                                 Region reg) {
    std::vector<double> d, se, sp, hd;
    for (const CaseReport& r : reports) {
        const RegionMetrics& m = r.of(reg);
        d.push_back(m.dice);
        if (!m.sensitivity.undefined) se.push_back(m.sensitivity.value);
        if (!m.specificity.undefined) sp.push_back(m.specificity.value);
        if (!m.hausdorff95.undefined) hd.push_back(m.hausdorff95.value);
    }
    return {summarize(std::move(d)), summarize(std::move(se)),
            summarize(std::move(sp)), summarize(std::move(hd))};
}

nlohmann::json flagged_json(const Flagged& f) {
    return {{"value", f.value}, {"undefined", f.undefined}};
}

nlohmann::json region_json(const RegionMetrics& m) {
    return {{"dice", m.dice},
            {"sensitivity", flagged_json(m.sensitivity)},
            {"specificity", flagged_json(m.specificity)},
            {"hausdorff95", flagged_json(m.hausdorff95)}};
}

nlohmann::json summary_json(const Summary& s) {
    return {{"mean", s.mean},
            {"median", s.median},
            {"stdev", s.stdev},
            {"n", s.n}};
}

void write_text(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp);
    f << text;
    f.close();
    if (!f || std::rename(tmp.c_str(), path.c_str()) != 0)
        throw DataError("cannot finalize " + path);
}

} // namespace

AggregateReport aggregate(const std::vector<CaseReport>& reports) {
    AggregateReport a;
    a.cases = int64_t(reports.size());
    a.et = aggregate_region(reports, Region::ET);
    a.wt = aggregate_region(reports, Region::WT);
    a.tc = aggregate_region(reports, Region::TC);
    return a;
}

void write_report_json(const std::string& path,
                       const std::vector<CaseReport>& reports,
                       const AggregateReport& agg) {
    nlohmann::json j;
    j["cases"] = nlohmann::json::array();
    for (const CaseReport& r : reports) {
        nlohmann::json c;
        c["case_id"] = r.case_id;
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            c[region_name(reg)] = region_json(r.of(reg));
        j["cases"].push_back(std::move(c));
    }
    nlohmann::json a;
    a["n_cases"] = agg.cases;
    for (Region reg : {Region::ET, Region::WT, Region::TC}) {
        const RegionAggregate& ra = agg.of(reg);
        a[region_name(reg)] = {{"dice", summary_json(ra.dice)},
                               {"sensitivity", summary_json(ra.sensitivity)},
                               {"specificity", summary_json(ra.specificity)},
                               {"hausdorff95",
                                summary_json(ra.hausdorff95)}};
    }
    j["aggregate"] = std::move(a);
    write_text(path, j.dump(2) + "\n");
}

void write_report_csv(const std::string& path,
                      const std::vector<CaseReport>& reports) {
    std::ostringstream out;
    out << "case";
    for (const char* metric :
         {"dice", "sensitivity", "specificity", "hausdorff95"})
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            out << ',' << metric << '_' << region_name(reg);
    out << '\n';
    out << std::fixed << std::setprecision(6);
    for (const CaseReport& r : reports) {
        out << r.case_id;
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            out << ',' << r.of(reg).dice;
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            out << ',' << r.of(reg).sensitivity.value;
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            out << ',' << r.of(reg).specificity.value;
        for (Region reg : {Region::ET, Region::WT, Region::TC})
            out << ',' << r.of(reg).hausdorff95.value;
        out << '\n';
    }
    write_text(path, out.str());
}

} // namespace tseg
