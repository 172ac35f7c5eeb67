#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tseg/errors.hpp"
#include "tseg/volume.hpp"

namespace tseg {

// Evaluation regions in report column order.
enum class Region { ET, WT, TC };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::ET: return "et";
        case Region::WT: return "wt";
        default: return "tc";
    }
}

// WT = {1,2,4}, TC = {1,4}, ET = {4} as 0/1 masks.
LabelVolume region_mask(const LabelVolume& labels, Region r);

struct Spacing {
    double z = 1.0, y = 1.0, x = 1.0;
};

// A metric together with its defined-ness: undefined values carry the
// challenge-convention fallback (1.0, or 0.0 for HD95) plus the flag.
struct Flagged {
    double value = 0.0;
    bool undefined = false;
};

double dice(const LabelVolume& pred, const LabelVolume& truth);
Flagged sensitivity(const LabelVolume& pred, const LabelVolume& truth);
Flagged specificity(const LabelVolume& pred, const LabelVolume& truth);

// Symmetric HD95 between mask foregrounds, voxel centers weighted by
// spacing. directed=true keeps only the pred-to-truth direction.
Flagged hausdorff95(const LabelVolume& pred, const LabelVolume& truth,
                    Spacing sp = {}, bool directed = false);

struct RegionMetrics {
    double dice = 0.0;
    Flagged sensitivity, specificity, hausdorff95;
};

struct CaseReport {
    std::string case_id;
    RegionMetrics et, wt, tc;

    const RegionMetrics& of(Region r) const {
        return r == Region::ET ? et : r == Region::WT ? wt : tc;
    }
};

CaseReport evaluate_case(const LabelVolume& pred, const LabelVolume& truth,
                         Spacing sp = {});

struct Summary {
    double mean = 0.0, median = 0.0, stdev = 0.0;
    int64_t n = 0; // values that entered (undefined metrics are skipped)
};

struct RegionAggregate {
    Summary dice, sensitivity, specificity, hausdorff95;
};

struct AggregateReport {
    RegionAggregate et, wt, tc;
    int64_t cases = 0;

    const RegionAggregate& of(Region r) const {
        return r == Region::ET ? et : r == Region::WT ? wt : tc;
    }
};

AggregateReport aggregate(const std::vector<CaseReport>& reports);

// JSON: per-case and aggregate sections. CSV: one row per case, regions in
// ET, WT, TC column order.
void write_report_json(const std::string& path,
                       const std::vector<CaseReport>& reports,
                       const AggregateReport& agg);
void write_report_csv(const std::string& path,
                      const std::vector<CaseReport>& reports);

} // namespace tseg
