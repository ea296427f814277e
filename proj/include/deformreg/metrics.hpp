#pragma once

#include <string>
#include <vector>

#include "deformreg/volgrid.hpp"

namespace deformreg {

// Mean absolute difference in HU over every voxel of the cube.
double mae(const VolumeGrid& v_gt, const VolumeGrid& v_def);

// Same, restricted to voxels where mask is non-zero.
double mae_masked(const VolumeGrid& v_gt, const VolumeGrid& v_def, const std::vector<std::uint8_t>& mask);

// Voxels above `threshold_hu` in v (the body outline for the phantom).
std::vector<std::uint8_t> body_mask(const VolumeGrid& v, double threshold_hu = -500.0);

// 2|A n B| / (|A| + |B|) for one organ label; 1 when both are empty.
double dsc(const LabelVolume& a, const LabelVolume& b, Label organ);

struct EvalReport {
    std::string case_id;
    int phase = 50;
    double mae_hu = 0.0;
    double dsc_liver = 0.0;
    double dsc_stomach = 0.0;
};

EvalReport evaluate_case(const VolumeGrid& v_gt, const LabelVolume& labels_gt, const VolumeGrid& v_def,
                         const LabelVolume& labels_def, bool masked_mae = false);

// Mean and population standard deviation.
struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& xs);

struct MethodSummary {
    std::string method;
    std::vector<EvalReport> cases;
    MeanSd mae_hu;
    MeanSd dsc_liver;
    MeanSd dsc_stomach;
};

MethodSummary summarize(const std::string& method, const std::vector<EvalReport>& cases);

// Rows MAE / liver DSC [%] / stomach DSC [%], one column per method, cells
// "mean±sd".
std::string format_table(const std::vector<MethodSummary>& columns);

// method,case,phase,mae_hu,dsc_liver,dsc_stomach
std::string format_csv(const std::vector<MethodSummary>& columns);

} // namespace deformreg
