#include "dgseg/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "dgseg/depth.hpp"
#include "dgseg/png_io.hpp"

namespace dgseg {

namespace fs = std::filesystem;

bool Shape::covers(double px, double py) const {
    const double dx = px - cx;
    const double dy = py - cy;
    switch (kind) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= size * size;
        case ShapeKind::rectangle:
            return std::abs(dx) <= size && std::abs(dy) <= size * aspect;
        case ShapeKind::triangle: {
            // Equilateral triangle with circumradius `size`, rotated by `angle`.
            std::array<double, 3> vx{}, vy{};
            for (int k = 0; k < 3; ++k) {
                const double a = angle + k * 2.0 * std::numbers::pi / 3.0 - std::numbers::pi / 2.0;
                vx[static_cast<std::size_t>(k)] = cx + size * std::cos(a);
                vy[static_cast<std::size_t>(k)] = cy + size * std::sin(a);
            }
            auto edge = [&](int i, int j) {
                const auto a = static_cast<std::size_t>(i);
                const auto b = static_cast<std::size_t>(j);
                return (vx[b] - vx[a]) * (py - vy[a]) - (vy[b] - vy[a]) * (px - vx[a]);
            };
            const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
            return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
        }
    }
    return false;
}

const Sample& Dataset::get(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("dataset: unknown image id " + std::to_string(id));
    return samples[it->second];
}

const SplitManifest& Dataset::split(double fraction) const {
    for (const auto& s : splits)
        if (std::abs(s.fraction - fraction) < 1e-9) return s;
    throw DataError("dataset: no split manifest for fraction " + std::to_string(fraction));
}

void Dataset::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < samples.size(); ++i) index_[samples[i].id] = i;
}

// ---------------------------------------------------------------------------
// Scene generation
// ---------------------------------------------------------------------------

std::optional<RenderedScene> render_scene(const Scene& scene, int num_classes, int min_area, Rng* noise) {
    const int h = scene.height, w = scene.width;
    const auto n = scene.shapes.size();
    // Paint far to near.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scene.shapes[a].z < scene.shapes[b].z; });

    std::vector<int> owner(static_cast<std::size_t>(h) * w, -1);
    for (auto idx : order) {
        const auto& s = scene.shapes[idx];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (s.covers(x + 0.5, y + 0.5)) owner[static_cast<std::size_t>(y) * w + x] = static_cast<int>(idx);
    }

    RenderedScene out;
    out.gt.height = h;
    out.gt.width = w;
    for (std::size_t i = 0; i < n; ++i) {
        Mask m(h, w);
        for (std::size_t p = 0; p < owner.size(); ++p) m.bits[p] = owner[p] == static_cast<int>(i) ? 1 : 0;
        if (m.area() < min_area) return std::nullopt;
        out.gt.masks.push_back(std::move(m));
        out.gt.classes.push_back(static_cast<int>(scene.shapes[i].kind) % num_classes);
        out.z.push_back(scene.shapes[i].z);
    }

    out.gray.assign(owner.size(), 0.0);
    out.image = Image(3, h, w);
    for (std::size_t p = 0; p < owner.size(); ++p) {
        const auto& color = owner[p] >= 0 ? scene.shapes[static_cast<std::size_t>(owner[p])].color : scene.background;
        if (owner[p] >= 0) out.gray[p] = scene.shapes[static_cast<std::size_t>(owner[p])].z;
        for (int c = 0; c < 3; ++c) {
            double v = color[static_cast<std::size_t>(c)];
            if (noise) v += noise->normal(0.0, 0.04);
            v = std::clamp(v, 0.0, 1.0);
            out.image.data(c, static_cast<Eigen::Index>(p)) = std::round(v * 255.0) / 255.0;
        }
    }
    return out;
}

namespace {

Scene draw_scene(Rng& rng, int num_shapes, int canvas) {
    Scene sc;
    sc.height = sc.width = canvas;
    for (auto& c : sc.background) c = rng.uniform(0.0, 0.35);
    std::set<int> used_z;
    const double scale = canvas / 64.0;
    for (int i = 0; i < num_shapes; ++i) {
        Shape s;
        s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
        s.cx = rng.uniform(6.0, canvas - 6.0);
        s.cy = rng.uniform(6.0, canvas - 6.0);
        s.size = rng.uniform(6.0, 14.0) * scale;
        s.aspect = rng.uniform(0.5, 1.5);
        s.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (auto& c : s.color) c = rng.uniform(0.1, 0.95);
        // Distinct, 16-bit representable depth layers.
        int k = 0;
        do {
            k = rng.uniform_int(16384, 65535);
        } while (used_z.count(k));
        used_z.insert(k);
        s.z = k / 65535.0;
        sc.shapes.push_back(s);
    }
    return sc;
}

}  // namespace

Sample generate_scene(Rng& rng, int num_shapes, int canvas, int alpha_S, int num_classes) {
    if (num_shapes < 1 || num_shapes > 6) throw std::invalid_argument("generate_scene: num_shapes must lie in [1,6]");
    for (int attempt = 0; attempt < 200; ++attempt) {
        Scene sc = draw_scene(rng, num_shapes, canvas);
        auto rendered = render_scene(sc, num_classes, alpha_S + 1, &rng);
        if (!rendered) continue;
        Sample s;
        s.image = std::move(rendered->image);
        s.depth = make_depth_map(std::move(rendered->gray), canvas, canvas);
        s.gt = std::move(rendered->gt);
        s.z = std::move(rendered->z);
        return s;
    }
    throw DataError("generate_scene: could not place " + std::to_string(num_shapes) +
                    " shapes with the minimum visible area after 200 attempts");
}

Sample generate_sample(std::uint64_t seed, int id, const Config& cfg) {
    Rng rng(seed, "scene", static_cast<std::uint64_t>(id));
    const int n = rng.uniform_int(1, cfg.max_shapes);
    Sample s = generate_scene(rng, n, cfg.canvas, cfg.alpha_S, cfg.num_classes);
    s.id = id;
    return s;
}

SplitManifest make_splits(const std::vector<int>& ids, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("make_splits: fraction must lie in (0,1]");
    std::vector<int> shuffled = ids;
    rng.shuffle(shuffled);
    const auto n_lab = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
    SplitManifest m;
    m.fraction = fraction;
    m.labeled_ids.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_lab));
    m.unlabeled_ids.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_lab), shuffled.end());
    std::sort(m.labeled_ids.begin(), m.labeled_ids.end());
    std::sort(m.unlabeled_ids.begin(), m.unlabeled_ids.end());
    return m;
}

std::array<double, 3> channel_mean(const Dataset& data, const std::vector<int>& ids) {
    std::array<double, 3> sum{0, 0, 0};
    double count = 0;
    for (int id : ids) {
        const auto& img = data.get(id).image;
        for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += img.data.row(c).sum();
        count += img.pixels();
    }
    if (count > 0)
        for (auto& s : sum) s /= count;
    return sum;
}

Dataset generate_dataset(int num_train, int num_val, const std::vector<double>& fractions, const Config& cfg) {
    if (num_train <= 0) throw DataError("generate_dataset: number of images must be positive");
    if (num_val < 0) throw DataError("generate_dataset: validation size must be >= 0");
    Dataset d;
    d.canvas = cfg.canvas;
    d.num_classes = cfg.num_classes;
    for (int id = 0; id < num_train + num_val; ++id) {
        d.samples.push_back(generate_sample(cfg.seed, id, cfg));
        (id < num_train ? d.train_ids : d.val_ids).push_back(id);
    }
    d.reindex();
    for (double f : fractions) {
        Rng rng(cfg.seed, "split", static_cast<std::uint64_t>(std::llround(f * 1e6)));
        d.splits.push_back(make_splits(d.train_ids, f, rng));
    }
    d.mean = channel_mean(d, d.train_ids);
    return d;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

AugParams draw_aug_params(AugMode mode, Rng& rng, int height, int width) {
    AugParams p;
    p.flip = rng.bernoulli(0.5);
    if (mode == AugMode::strong) {
        p.photometric = true;
        p.brightness = rng.uniform(0.6, 1.4);
        p.contrast = rng.uniform(0.6, 1.4);
        p.saturation = rng.uniform(0.6, 1.4);
        p.grayscale = rng.bernoulli(0.2);
        p.cut_size = std::min({kCutoutSize, height, width});
        p.cut_x = rng.uniform_int(0, width - p.cut_size);
        p.cut_y = rng.uniform_int(0, height - p.cut_size);
    }
    return p;
}

Image hflip(const Image& img) {
    Image out(img.channels(), img.height, img.width);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

Mask hflip(const Mask& m) {
    Mask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}

InstanceSet hflip(const InstanceSet& s) {
    InstanceSet out = s;
    for (auto& m : out.masks) m = hflip(m);
    return out;
}

DepthMap hflip(const DepthMap& d) {
    DepthMap out;
    out.height = d.height;
    out.width = d.width;
    out.gray.resize(d.gray.size());
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x)
            out.gray[static_cast<std::size_t>(y) * d.width + x] =
                d.gray[static_cast<std::size_t>(y) * d.width + (d.width - 1 - x)];
    out.rgb = hflip(d.rgb);
    return out;
}

Image apply_photometric(const Image& img, const AugParams& p, const std::array<double, 3>& mean) {
    if (!p.photometric) return img;
    Image out = img;
    auto& a = out.data;
    a *= p.brightness;
    const Eigen::RowVectorXd lum = 0.299 * a.row(0) + 0.587 * a.row(1) + 0.114 * a.row(2);
    const double mean_lum = lum.mean();
    a = ((a.array() - mean_lum) * p.contrast + mean_lum).matrix();
    {
        const Eigen::RowVectorXd g = 0.299 * a.row(0) + 0.587 * a.row(1) + 0.114 * a.row(2);
        for (int c = 0; c < 3; ++c) a.row(c) = g + p.saturation * (a.row(c) - g);
    }
    a = a.cwiseMax(0.0).cwiseMin(1.0);
    if (p.grayscale) {
        const Eigen::RowVectorXd g = 0.299 * a.row(0) + 0.587 * a.row(1) + 0.114 * a.row(2);
        for (int c = 0; c < 3; ++c) a.row(c) = g;
    }
    for (int y = p.cut_y; y < p.cut_y + p.cut_size; ++y)
        for (int x = p.cut_x; x < p.cut_x + p.cut_size; ++x)
            for (int c = 0; c < 3; ++c) out.at(c, y, x) = mean[static_cast<std::size_t>(c)];
    return out;
}

Augmented augment(const Image& image, const InstanceSet& gt, AugMode mode, Rng& rng,
                  const std::array<double, 3>& mean) {
    Augmented out;
    out.params = draw_aug_params(mode, rng, image.height, image.width);
    out.image = out.params.flip ? hflip(image) : image;
    out.gt = out.params.flip ? hflip(gt) : gt;
    out.image = apply_photometric(out.image, out.params, mean);
    return out;
}

PairedViews augment_pair(const Image& image, const InstanceSet& gt, Rng& rng, const std::array<double, 3>& mean) {
    PairedViews v;
    v.params = draw_aug_params(AugMode::strong, rng, image.height, image.width);
    v.weak = v.params.flip ? hflip(image) : image;
    v.gt = v.params.flip ? hflip(gt) : gt;
    v.strong = apply_photometric(v.weak, v.params, mean);
    return v;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

std::vector<int> rle_encode(const Mask& m) {
    std::vector<int> counts;
    std::uint8_t current = 0;
    int run = 0;
    for (auto b : m.bits) {
        if (b != current) {
            counts.push_back(run);
            run = 0;
            current = b;
        }
        ++run;
    }
    counts.push_back(run);
    return counts;
}

Mask rle_decode(const std::vector<int>& counts, int height, int width) {
    Mask m(height, width);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (int c : counts) {
        if (c < 0 || pos + static_cast<std::size_t>(c) > m.bits.size()) throw DataError("rle: run exceeds mask size");
        std::fill_n(m.bits.begin() + static_cast<std::ptrdiff_t>(pos), c, value);
        pos += static_cast<std::size_t>(c);
        value ^= 1;
    }
    if (pos != m.bits.size()) throw DataError("rle: runs do not cover the mask");
    return m;
}

nlohmann::json instances_to_json(const InstanceSet& s, const std::vector<double>* z) {
    nlohmann::json j;
    j["size"] = {s.height, s.width};
    j["masks"] = nlohmann::json::array();
    for (const auto& m : s.masks) j["masks"].push_back(rle_encode(m));
    j["classes"] = s.classes;
    if (z) j["z"] = *z;
    if (s.scores) j["scores"] = *s.scores;
    return j;
}

InstanceSet instances_from_json(const nlohmann::json& j) {
    try {
        InstanceSet s;
        s.height = j.at("size").at(0).get<int>();
        s.width = j.at("size").at(1).get<int>();
        for (const auto& counts : j.at("masks")) s.masks.push_back(rle_decode(counts.get<std::vector<int>>(), s.height, s.width));
        s.classes = j.at("classes").get<std::vector<int>>();
        if (j.contains("scores")) s.scores = j.at("scores").get<std::vector<double>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("annotations: malformed instance record: ") + e.what());
    }
}

namespace {

nlohmann::json split_to_json(const SplitManifest& m) {
    return {{"fraction", m.fraction}, {"labeled_ids", m.labeled_ids}, {"unlabeled_ids", m.unlabeled_ids}};
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

}  // namespace

void write_dataset(const Dataset& data, const fs::path& dir) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "depths");
    nlohmann::json ann;
    ann["canvas"] = data.canvas;
    ann["num_classes"] = data.num_classes;
    ann["images"] = nlohmann::json::object();
    for (const auto& s : data.samples) {
        const auto id = std::to_string(s.id);
        png::Rgb8 rgb{s.image.width, s.image.height, {}};
        rgb.pixels.resize(static_cast<std::size_t>(s.image.pixels()) * 3);
        for (int p = 0; p < s.image.pixels(); ++p)
            for (int c = 0; c < 3; ++c)
                rgb.pixels[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<std::uint8_t>(std::lround(s.image.data(c, p) * 255.0));
        png::write_rgb8(dir / "images" / (id + ".png"), rgb);

        png::Gray16 g{s.depth.width, s.depth.height, {}};
        g.pixels.resize(s.depth.gray.size());
        for (std::size_t p = 0; p < s.depth.gray.size(); ++p)
            g.pixels[p] = static_cast<std::uint16_t>(std::lround(s.depth.gray[p] * 65535.0));
        png::write_gray16(dir / "depths" / (id + ".png"), g);

        ann["images"][id] = instances_to_json(s.gt, &s.z);
    }
    write_text(dir / "annotations.json", ann.dump(1) + "\n");

    nlohmann::json sp;
    sp["train_ids"] = data.train_ids;
    sp["val_ids"] = data.val_ids;
    sp["manifests"] = nlohmann::json::array();
    for (const auto& m : data.splits) sp["manifests"].push_back(split_to_json(m));
    write_text(dir / "splits.json", sp.dump(1) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    const auto ann = read_json(dir / "annotations.json");
    const auto sp = read_json(dir / "splits.json");
    Dataset d;
    try {
        d.canvas = ann.at("canvas").get<int>();
        d.num_classes = ann.at("num_classes").get<int>();
        d.train_ids = sp.at("train_ids").get<std::vector<int>>();
        d.val_ids = sp.at("val_ids").get<std::vector<int>>();
        for (const auto& m : sp.at("manifests")) {
            SplitManifest s;
            s.fraction = m.at("fraction").get<double>();
            s.labeled_ids = m.at("labeled_ids").get<std::vector<int>>();
            s.unlabeled_ids = m.at("unlabeled_ids").get<std::vector<int>>();
            d.splits.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("dataset: malformed metadata: ") + e.what());
    }
    std::vector<int> ids = d.train_ids;
    ids.insert(ids.end(), d.val_ids.begin(), d.val_ids.end());
    for (int id : ids) {
        const auto key = std::to_string(id);
        if (!ann.at("images").contains(key)) throw DataError("annotations.json: missing image " + key);
        Sample s;
        s.id = id;
        const auto rgb = png::read_rgb8(dir / "images" / (key + ".png"));
        s.image = Image(3, rgb.height, rgb.width);
        for (int p = 0; p < rgb.width * rgb.height; ++p)
            for (int c = 0; c < 3; ++c)
                s.image.data(c, p) = rgb.pixels[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(c)] / 255.0;
        const auto g = png::read_gray16(dir / "depths" / (key + ".png"));
        std::vector<double> gray(g.pixels.size());
        for (std::size_t p = 0; p < gray.size(); ++p) gray[p] = g.pixels[p] / 65535.0;
        s.depth = make_depth_map(std::move(gray), g.height, g.width);
        const auto& rec = ann["images"][key];
        s.gt = instances_from_json(rec);
        if (rec.contains("z")) s.z = rec["z"].get<std::vector<double>>();
        s.gt.validate(d.num_classes);
        d.samples.push_back(std::move(s));
    }
    d.reindex();
    d.mean = channel_mean(d, d.train_ids);
    return d;
}

}  // namespace dgseg
