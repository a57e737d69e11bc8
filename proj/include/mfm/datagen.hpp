#pragma once

// Synthetic two-domain segmentation scenes: colored shapes on a textured
// background. Geometry (and therefore the label map) depends only on the
// seed; the target domain shifts appearance — palette rotation, brightness,
// additive noise — while labels stay identical. Also: PNG folder ingestion
// with per-file validation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mfm/png_io.hpp"
#include "mfm/rng.hpp"
#include "mfm/segmodel.hpp"

namespace mfm {

enum class Domain { source, target };

struct SceneSpec {
    int height = 64, width = 64;
    int classes = 4;  // background plus up to three shape kinds
    int min_shapes = 2, max_shapes = 5;
    // Appearance gap applied to target-domain images only (labels unchanged).
    double palette_rotation_deg = 40.0;
    double noise_sigma = 0.06;
    double brightness_shift = -0.12;
    // Scene texture, identical in both domains (not part of the shift).
    double texture_freq = 0.15;
    double texture_amp = 0.08;

    void validate() const {
        if (height < 8 || width < 8) throw ConfigError("scene: extent must be at least 8x8");
        if (classes < 2 || classes > 4)
            throw ConfigError("scene: classes must be in [2,4], got " + std::to_string(classes));
        if (min_shapes < 0 || max_shapes < min_shapes)
            throw ConfigError("scene: shape count range [" + std::to_string(min_shapes) + "," +
                              std::to_string(max_shapes) + "] is invalid");
        if (noise_sigma < 0.0) throw ConfigError("scene: noise sigma must be >= 0");
    }
};

struct ScenePair {
    Tensor image;  // {3, H, W}, values in [0, 1]
    LabelMap labels;
};

namespace scene_detail {

struct Shape {
    int kind;  // 1 = circle, 2 = rectangle, 3 = triangle
    double cy, cx, r;
};

inline bool inside(const Shape& s, int y, int x) {
    const double dy = y - s.cy, dx = x - s.cx;
    switch (s.kind) {
        case 1: return dy * dy + dx * dx <= s.r * s.r;
        case 2: return std::fabs(dy) <= s.r * 0.8 && std::fabs(dx) <= s.r * 1.1;
        default: {
            // Isoceles triangle, apex up: half-width grows linearly with depth.
            const double depth = y - (s.cy - s.r);
            return depth >= 0.0 && depth <= 2.0 * s.r && std::fabs(dx) <= depth * 0.55;
        }
    }
}

// Rotation about the gray axis by angle degrees (a hue rotation). At zero
// degrees the matrix is exactly the identity, keeping the null shift bitwise.
inline std::array<double, 9> hue_rotation(double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const double t = (1.0 - c) / 3.0;
    const double u = std::sqrt(1.0 / 3.0) * s;
    return {c + t, t - u, t + u, t + u, c + t, t - u, t - u, t + u, c + t};
}

}  // namespace scene_detail

inline ScenePair generate_pair(std::uint64_t seed, const SceneSpec& spec, Domain domain) {
    spec.validate();
    const int h = spec.height, w = spec.width;

    // Geometry stream: fully determines the label map, shared across domains.
    Rng geo(derive_seed(seed, "scene-geom"));
    const int span = spec.max_shapes - spec.min_shapes;
    const int count =
        spec.min_shapes +
        (span > 0 ? static_cast<int>(geo.below(static_cast<std::uint64_t>(span + 1))) : 0);
    std::vector<scene_detail::Shape> shapes;
    const double dim = std::min(h, w);
    for (int i = 0; i < count; ++i) {
        scene_detail::Shape s;
        s.kind = 1 + static_cast<int>(geo.below(static_cast<std::uint64_t>(spec.classes - 1)));
        s.r = (0.10 + 0.15 * geo.uniform()) * dim;
        s.cy = s.r + geo.uniform() * (h - 2.0 * s.r);
        s.cx = s.r + geo.uniform() * (w - 2.0 * s.r);
        shapes.push_back(s);
    }

    LabelMap lm;
    lm.h = h;
    lm.w = w;
    lm.idx.assign(static_cast<std::size_t>(h) * w, 0);
    for (const auto& s : shapes)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (scene_detail::inside(s, y, x))
                    lm.idx[static_cast<std::size_t>(y) * w + x] = s.kind;

    // Palette stream: per-scene color jitter, shared across domains.
    Rng pal(derive_seed(seed, "scene-pal"));
    std::array<std::array<double, 3>, 4> palette = {{{0.22, 0.25, 0.30},
                                                     {0.75, 0.30, 0.25},
                                                     {0.30, 0.70, 0.35},
                                                     {0.30, 0.40, 0.80}}};
    for (auto& color : palette)
        for (auto& ch : color) ch += 0.06 * (pal.uniform() - 0.5);
    const double phase = pal.uniform() * 2.0 * 3.14159265358979323846;

    if (domain == Domain::target) {
        const auto m = scene_detail::hue_rotation(spec.palette_rotation_deg);
        for (auto& color : palette) {
            const std::array<double, 3> c = color;
            for (int i = 0; i < 3; ++i)
                color[i] = m[i * 3 + 0] * c[0] + m[i * 3 + 1] * c[1] + m[i * 3 + 2] * c[2];
        }
    }

    // Noise stream: consumed only for the target domain.
    Rng noise(derive_seed(seed, "scene-noise"));
    const bool shifted = domain == Domain::target;

    std::vector<float> img(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int cls = lm.idx[static_cast<std::size_t>(y) * w + x];
            const double tex =
                spec.texture_amp *
                std::sin(2.0 * 3.14159265358979323846 * spec.texture_freq * (x + 0.7 * y) +
                         phase);
            for (int c = 0; c < 3; ++c) {
                double v = palette[cls][c] + tex;
                if (shifted) {
                    v += spec.brightness_shift;
                    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise.normal();
                }
                img[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }

    ScenePair out;
    out.image = Tensor::leaf({3, h, w}, std::move(img));
    out.labels = std::move(lm);
    return out;
}

// ----------------------------------------------------------------------------
// PNG persistence and folder ingestion

inline void write_scene(const std::string& dir, const std::string& stem, const ScenePair& p) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    const Shape& s = p.image.shape();
    const int h = s[1], w = s[2];
    const auto& d = p.image.data();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = d[(static_cast<std::size_t>(c) * h + y) * w + x];
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(
                    std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }
    png::write_rgb8((fs::path(dir) / "images" / (stem + ".png")).string(), rgb, h, w);

    std::vector<std::uint8_t> lab(p.labels.idx.size());
    for (std::size_t i = 0; i < lab.size(); ++i)
        lab[i] = static_cast<std::uint8_t>(p.labels.idx[i]);
    png::write_gray8((fs::path(dir) / "labels" / (stem + ".png")).string(), lab, p.labels.h,
                     p.labels.w);
}

struct Dataset {
    struct Item {
        std::string stem, image_path, label_path;
    };
    std::vector<Item> items;
    std::vector<std::string> problems;  // per-file reports; items exclude these files
    std::size_t size() const { return items.size(); }
};

inline ScenePair load_item(const Dataset::Item& it) {
    png::Image im = png::read(it.image_path);
    if (im.channels != 3)
        throw ConfigError("dataset: image '" + it.image_path + "' must be RGB");
    png::Image lb = png::read(it.label_path);
    if (lb.channels != 1)
        throw ConfigError("dataset: label '" + it.label_path + "' must be single-channel");
    if (lb.h != im.h || lb.w != im.w)
        throw ConfigError("dataset: '" + it.stem + "' image and label extents differ");

    std::vector<float> img(static_cast<std::size_t>(3) * im.h * im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c)
                img[(static_cast<std::size_t>(c) * im.h + y) * im.w + x] =
                    im.data[(static_cast<std::size_t>(y) * im.w + x) * 3 + c] / 255.0f;
    ScenePair p;
    p.image = Tensor::leaf({3, im.h, im.w}, std::move(img));
    p.labels.h = lb.h;
    p.labels.w = lb.w;
    p.labels.idx.assign(lb.data.begin(), lb.data.end());
    return p;
}

// Scans images/ and labels/ for matching PNG stems. Unmatched or invalid
// files are reported in `problems` and excluded; valid pairs are listed in
// stem order and loaded lazily via load_item.
inline Dataset load_folder(const std::string& path, int classes) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(path) / "images";
    const fs::path labels = fs::path(path) / "labels";
    if (!fs::is_directory(images) || !fs::is_directory(labels))
        throw ConfigError("dataset: '" + path + "' must contain images/ and labels/");

    auto scan = [](const fs::path& dir) {
        std::map<std::string, std::string> stems;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png")
                stems[e.path().stem().string()] = e.path().string();
        return stems;
    };
    const auto image_stems = scan(images);
    const auto label_stems = scan(labels);

    Dataset ds;
    for (const auto& [stem, ipath] : image_stems)
        if (!label_stems.count(stem))
            ds.problems.push_back("missing label for image '" + stem + "'");
    for (const auto& [stem, lpath] : label_stems)
        if (!image_stems.count(stem))
            ds.problems.push_back("missing image for label '" + stem + "'");

    for (const auto& [stem, ipath] : image_stems) {
        auto lit = label_stems.find(stem);
        if (lit == label_stems.end()) continue;
        try {
            png::Image im = png::read(ipath);
            if (im.channels != 3) {
                ds.problems.push_back("image '" + stem + "' is not RGB");
                continue;
            }
            png::Image lb = png::read(lit->second);
            if (lb.channels != 1) {
                ds.problems.push_back("label '" + stem + "' is not 8-bit single-channel");
                continue;
            }
            std::vector<std::int32_t> idx(lb.data.begin(), lb.data.end());
            const std::int32_t bad = first_invalid_label(idx, classes);
            if (bad >= 0) {
                ds.problems.push_back("label '" + stem + "' contains invalid value " +
                                      std::to_string(bad));
                continue;
            }
            ds.items.push_back({stem, ipath, lit->second});
        } catch (const ConfigError& e) {
            ds.problems.push_back("'" + stem + "': " + e.what());
        }
    }
    return ds;  // std::map iteration keeps items in stem order
}

}  // namespace mfm
