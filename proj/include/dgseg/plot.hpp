#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dgseg {

/// Parsed metrics.csv: iteration rows and evaluation rows kept apart.
struct MetricsLog {
    struct Step {
        int stage = 0;
        long iter = 0;
        double loss_u_rgb = 0.0;
        double loss_u_depth = 0.0;
    };
    struct Eval {
        int stage = 0;
        long iter = 0;
        double ap = 0.0;
        double ap50 = 0.0;
    };
    std::vector<Step> steps;
    std::vector<Eval> evals;
};

/// Throws DataError naming the offending row (1-based, header is row 1) on
/// malformed input, including a header-only file.
MetricsLog parse_metrics_csv(const std::filesystem::path& path);

struct Series {
    std::string label;
    std::vector<double> x, y;
};

/// Line chart rendered to an RGB PNG with axes, ticks and a legend.
/// The file is written to a temporary name and renamed into place.
void render_line_chart(const std::filesystem::path& out, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

struct PlotOutput {
    std::filesystem::path ap_curve, loss_curve;
    std::vector<std::string> ap_legend, loss_legend;
};

/// Writes ap_curve.png (AP against iteration, one line per run) and
/// loss_curve.png (unsupervised RGB and depth losses against iteration) into
/// `out_dir`. Every input is parsed before anything is written.
PlotOutput emit_plots(const std::vector<std::pair<std::string, std::filesystem::path>>& runs,
                      const std::filesystem::path& out_dir);

}  // namespace dgseg
