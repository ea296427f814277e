#include "deformreg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace deformreg {

double mae(const VolumeGrid& v_gt, const VolumeGrid& v_def) {
    require_same_dims(v_gt.dims, v_def.dims, "mae");
    double sum = 0.0;
    for (std::size_t i = 0; i < v_gt.values.size(); ++i)
        sum += std::abs(static_cast<double>(v_gt.values[i]) - static_cast<double>(v_def.values[i]));
    return v_gt.values.empty() ? 0.0 : sum / static_cast<double>(v_gt.values.size());
}

double mae_masked(const VolumeGrid& v_gt, const VolumeGrid& v_def, const std::vector<std::uint8_t>& mask) {
    require_same_dims(v_gt.dims, v_def.dims, "mae_masked");
    if (mask.size() != v_gt.values.size()) fail(ErrorKind::DimsMismatch, "mae_masked: mask size mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        sum += std::abs(static_cast<double>(v_gt.values[i]) - static_cast<double>(v_def.values[i]));
        ++n;
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::vector<std::uint8_t> body_mask(const VolumeGrid& v, double threshold_hu) {
    std::vector<std::uint8_t> mask(v.values.size());
    for (std::size_t i = 0; i < v.values.size(); ++i) mask[i] = v.values[i] > threshold_hu ? 1 : 0;
    return mask;
}

double dsc(const LabelVolume& a, const LabelVolume& b, Label organ) {
    require_same_dims(a.dims, b.dims, "dsc");
    const auto id = static_cast<std::uint8_t>(organ);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        const bool in_a = a.labels[i] == id;
        const bool in_b = b.labels[i] == id;
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

EvalReport evaluate_case(const VolumeGrid& v_gt, const LabelVolume& labels_gt, const VolumeGrid& v_def,
                         const LabelVolume& labels_def, bool masked_mae) {
    require_same_dims(v_gt.dims, labels_gt.dims, "evaluate_case");
    EvalReport r;
    r.mae_hu = masked_mae ? mae_masked(v_gt, v_def, body_mask(v_gt)) : mae(v_gt, v_def);
    r.dsc_liver = dsc(labels_gt, labels_def, Label::Liver);
    r.dsc_stomach = dsc(labels_gt, labels_def, Label::Stomach);
    return r;
}

MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd out;
    if (xs.empty()) return out;
    for (double x : xs) out.mean += x;
    out.mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

MethodSummary summarize(const std::string& method, const std::vector<EvalReport>& cases) {
    MethodSummary s;
    s.method = method;
    s.cases = cases;
    std::vector<double> m, l, st;
    for (const auto& c : cases) {
        m.push_back(c.mae_hu);
        l.push_back(c.dsc_liver);
        st.push_back(c.dsc_stomach);
    }
    s.mae_hu = mean_sd(m);
    s.dsc_liver = mean_sd(l);
    s.dsc_stomach = mean_sd(st);
    return s;
}

namespace {

std::string cell(const MeanSd& v, double scale) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << v.mean * scale << "±" << v.sd * scale;
    return os.str();
}

// Display width, counting the two-byte '±' as one column.
std::size_t columns_of(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
}

std::string pad(const std::string& s, std::size_t width) {
    const std::size_t w = columns_of(s);
    return s + std::string(width > w ? width - w : 0, ' ');
}

} // namespace

std::string format_table(const std::vector<MethodSummary>& columns) {
    const std::vector<std::string> row_names = {"MAE", "liver DSC [%]", "stomach DSC [%]"};
    std::vector<std::vector<std::string>> cells(3);
    std::size_t width = 12;
    for (const auto& c : columns) {
        cells[0].push_back(cell(c.mae_hu, 1.0));
        cells[1].push_back(cell(c.dsc_liver, 100.0));
        cells[2].push_back(cell(c.dsc_stomach, 100.0));
        width = std::max(width, columns_of(c.method));
    }
    for (const auto& row : cells)
        for (const auto& s : row) width = std::max(width, columns_of(s));
    width += 2;

    std::ostringstream os;
    const std::size_t first = 17;
    std::string rule(first + width * columns.size(), '-');
    os << rule << "\n" << pad("", first);
    for (const auto& c : columns) os << pad(c.method, width);
    os << "\n" << rule << "\n";
    for (std::size_t r = 0; r < 3; ++r) {
        os << pad(row_names[r], first);
        for (const auto& s : cells[r]) os << pad(s, width);
        os << "\n";
    }
    os << rule << "\n";
    return os.str();
}

std::string format_csv(const std::vector<MethodSummary>& columns) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "method,case,phase,mae_hu,dsc_liver,dsc_stomach\n";
    for (const auto& c : columns)
        for (const auto& r : c.cases)
            os << c.method << "," << r.case_id << "," << r.phase << "," << r.mae_hu << "," << r.dsc_liver << ","
               << r.dsc_stomach << "\n";
    return os.str();
}

} // namespace deformreg
