#include "dgseg/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "dgseg/core.hpp"
#include "dgseg/png_io.hpp"

namespace dgseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double to_number(const std::string& s, const fs::path& path, long row, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(path.string() + ": row " + std::to_string(row) + ": column " + column + " is not a number: '" +
                        s + "'");
    }
}

}  // namespace

MetricsLog parse_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": row 1: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* name : {"stage", "iter", "loss_u_rgb", "loss_u_depth", "ap", "ap50"})
        if (!col.count(name)) throw DataError(path.string() + ": row 1: header lacks column '" + name + "'");

    MetricsLog log;
    long row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != header.size())
            throw DataError(path.string() + ": row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
        const int stage = static_cast<int>(to_number(f[col["stage"]], path, row, "stage"));
        const long iter = static_cast<long>(to_number(f[col["iter"]], path, row, "iter"));
        if (!f[col["ap"]].empty()) {
            log.evals.push_back({stage, iter, to_number(f[col["ap"]], path, row, "ap"),
                                 to_number(f[col["ap50"]], path, row, "ap50")});
        } else {
            log.steps.push_back({stage, iter, to_number(f[col["loss_u_rgb"]], path, row, "loss_u_rgb"),
                                 to_number(f[col["loss_u_depth"]], path, row, "loss_u_depth")});
        }
    }
    if (log.steps.empty() && log.evals.empty())
        throw DataError(path.string() + ": row 2: no data rows after the header");
    return log;
}

// ---------------------------------------------------------------------------
// Raster

namespace {

using Color = std::array<std::uint8_t, 3>;

constexpr Color kWhite{255, 255, 255};
constexpr Color kBlack{0, 0, 0};
constexpr Color kGrid{225, 225, 225};
constexpr std::array<Color, 8> kPalette{{{31, 119, 180},
                                         {255, 127, 14},
                                         {44, 160, 44},
                                         {214, 39, 40},
                                         {148, 103, 189},
                                         {140, 86, 75},
                                         {227, 119, 194},
                                         {127, 127, 127}}};

// 5x7 glyphs, one byte per row, bit 4 = leftmost column.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
    static const std::map<char, std::array<std::uint8_t, 7>> f = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}}, {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}}, {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {',', {0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08}},
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return f;
}

constexpr int kGlyphW = 6;  // 5 columns + spacing

class Canvas {
public:
    Canvas(int w, int h) : img_{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * 3), 255)} {}

    void set(int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
        auto* p = &img_.pixels[static_cast<std::size_t>((y * img_.width + x) * 3)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void fill(int x0, int y0, int x1, int y1, Color c) {
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) set(x, y, c);
    }

    void line(int x0, int y0, int x1, int y1, Color c, int thickness = 1) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        const int r = thickness / 2;
        while (true) {
            fill(x0 - r, y0 - r, x0 + r, y0 + r, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void text(int x, int y, const std::string& s, Color c) {
        const auto& f = font();
        for (char ch : s) {
            const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            const auto it = f.find(key);
            for (int row = 0; row < 7; ++row) {
                const std::uint8_t bits = it == f.end() ? (row == 0 || row == 6 ? 0x1F : 0x11) : it->second[static_cast<std::size_t>(row)];
                for (int col = 0; col < 5; ++col)
                    if (bits & (0x10 >> col)) set(x + col, y + row, c);
            }
            x += kGlyphW;
        }
    }

    /// Text drawn bottom-to-top, for the y-axis label.
    void text_vertical(int x, int y, const std::string& s, Color c) {
        const auto& f = font();
        for (char ch : s) {
            const char key = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            const auto it = f.find(key);
            for (int row = 0; row < 7; ++row) {
                const std::uint8_t bits = it == f.end() ? 0x1F : it->second[static_cast<std::size_t>(row)];
                for (int col = 0; col < 5; ++col)
                    if (bits & (0x10 >> col)) set(x + row, y - col, c);
            }
            y -= kGlyphW;
        }
    }

    const png::Rgb8& image() const { return img_; }

private:
    png::Rgb8 img_;
};

int text_width(const std::string& s) { return static_cast<int>(s.size()) * kGlyphW; }

/// Tick positions at 1, 2 or 5 times a power of ten covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
    const double span = hi - lo;
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (raw <= step) break;
    }
    std::vector<double> t;
    for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) t.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
    return t;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_png_atomic(const fs::path& out, const png::Rgb8& img) {
    const fs::path tmp = out.string() + ".tmp";
    png::write_rgb8(tmp, img);
    fs::rename(tmp, out);
}

}  // namespace

void render_line_chart(const fs::path& out, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    constexpr int W = 720, H = 440;
    constexpr int left = 70, right = 20, top = 36, bottom = 50;
    Canvas cv(W, H);

    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    const int pw = W - left - right, ph = H - top - bottom;
    const auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * pw)); };
    const auto py = [&](double y) { return top + ph - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * ph)); };

    for (double t : nice_ticks(xmin, xmax)) {
        const int x = px(t);
        cv.line(x, top, x, top + ph, kGrid);
        cv.line(x, top + ph, x, top + ph + 4, kBlack);
        const auto s = tick_label(t);
        cv.text(x - text_width(s) / 2, top + ph + 8, s, kBlack);
    }
    for (double t : nice_ticks(ymin, ymax)) {
        const int y = py(t);
        cv.line(left, y, left + pw, y, kGrid);
        cv.line(left - 4, y, left, y, kBlack);
        const auto s = tick_label(t);
        cv.text(left - 8 - text_width(s), y - 3, s, kBlack);
    }
    cv.line(left, top, left, top + ph, kBlack);
    cv.line(left, top + ph, left + pw, top + ph, kBlack);
    cv.line(left, top, left + pw, top, kBlack);
    cv.line(left + pw, top, left + pw, top + ph, kBlack);

    cv.text((W - text_width(title)) / 2, 14, title, kBlack);
    cv.text(left + (pw - text_width(x_label)) / 2, H - 18, x_label, kBlack);
    cv.text_vertical(12, top + (ph + text_width(y_label)) / 2, y_label, kBlack);

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const Color c = kPalette[k % kPalette.size()];
        bool have_prev = false;
        int x0 = 0, y0 = 0;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                have_prev = false;
                continue;
            }
            const int x1 = px(s.x[i]), y1 = py(s.y[i]);
            if (have_prev)
                cv.line(x0, y0, x1, y1, c, 2);
            else
                cv.fill(x1 - 1, y1 - 1, x1 + 1, y1 + 1, c);
            x0 = x1;
            y0 = y1;
            have_prev = true;
        }
    }

    // Legend, top-right inside the plot area.
    int widest = 0;
    for (const auto& s : series) widest = std::max(widest, text_width(s.label));
    const int lw = widest + 34, lh = static_cast<int>(series.size()) * 14 + 8;
    const int lx = left + pw - lw - 8, ly = top + 8;
    if (!series.empty()) {
        cv.fill(lx, ly, lx + lw, ly + lh, kWhite);
        cv.line(lx, ly, lx + lw, ly, kBlack);
        cv.line(lx, ly + lh, lx + lw, ly + lh, kBlack);
        cv.line(lx, ly, lx, ly + lh, kBlack);
        cv.line(lx + lw, ly, lx + lw, ly + lh, kBlack);
        for (std::size_t k = 0; k < series.size(); ++k) {
            const int y = ly + 6 + static_cast<int>(k) * 14;
            cv.line(lx + 6, y + 3, lx + 24, y + 3, kPalette[k % kPalette.size()], 3);
            cv.text(lx + 30, y, series[k].label, kBlack);
        }
    }
    write_png_atomic(out, cv.image());
}

PlotOutput emit_plots(const std::vector<std::pair<std::string, fs::path>>& runs, const fs::path& out_dir) {
    if (runs.empty()) throw DataError("plot: no metrics files given");
    std::vector<MetricsLog> logs;
    for (const auto& [label, path] : runs) logs.push_back(parse_metrics_csv(path));

    std::vector<Series> ap, loss;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& label = runs[r].first;
        Series a{label, {}, {}};
        for (const auto& e : logs[r].evals) {
            a.x.push_back(static_cast<double>(e.iter));
            a.y.push_back(e.ap);
        }
        ap.push_back(std::move(a));
        const std::string prefix = runs.size() > 1 ? label + " " : "";
        Series rgb{prefix + "loss_u_rgb", {}, {}}, depth{prefix + "loss_u_depth", {}, {}};
        for (const auto& s : logs[r].steps) {
            if (s.stage < 2) continue;
            rgb.x.push_back(static_cast<double>(s.iter));
            rgb.y.push_back(s.loss_u_rgb);
            depth.x.push_back(static_cast<double>(s.iter));
            depth.y.push_back(s.loss_u_depth);
        }
        loss.push_back(std::move(rgb));
        loss.push_back(std::move(depth));
    }

    fs::create_directories(out_dir);
    PlotOutput out;
    out.ap_curve = out_dir / "ap_curve.png";
    out.loss_curve = out_dir / "loss_curve.png";
    render_line_chart(out.ap_curve, "Mask AP", "iteration", "AP", ap);
    render_line_chart(out.loss_curve, "Unsupervised loss", "iteration", "loss", loss);
    for (const auto& s : ap) out.ap_legend.push_back(s.label);
    for (const auto& s : loss) out.loss_legend.push_back(s.label);
    return out;
}

}  // namespace dgseg
