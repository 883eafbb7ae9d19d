#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edgeo/geometry.hpp"
#include "edgeo/io.hpp"
#include "edgeo/png.hpp"
#include "edgeo/posenc.hpp"
#include "edgeo/rng.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

inline constexpr const char* kGeneratorVersion = "1";
inline constexpr int kDatasetSchemaVersion = 1;

/// Scene recipe for the synthetic cross-view world: textured reference
/// image with colored rectangles, query view as a rotated/scaled crop
/// around one designated target.
struct SceneConfig {
    int n_objects = 6;
    double aspect_min = 0.4; // w/h, before orientation
    double aspect_max = 3.0;
    double elongated_fraction = 0.5; // fraction with max(w,h)/min(w,h) > 1.5
    int query_h = 128, query_w = 128;
    int ref_h = 256, ref_w = 256;
    double jitter = 0.05;             // photometric gain/offset range on the query
    std::string point_mode = "uniform"; // uniform | center
    std::uint64_t seed = 1;

    void validate() const {
        if (n_objects < 1) throw std::invalid_argument("SceneConfig: n_objects must be >= 1");
        if (!(aspect_min <= aspect_max) || aspect_min <= 0) throw std::invalid_argument("SceneConfig: bad aspect range");
        if (elongated_fraction < 0 || elongated_fraction > 1)
            throw std::invalid_argument("SceneConfig: elongated_fraction must be in [0,1]");
        if (query_h < 16 || query_w < 16 || ref_h < 32 || ref_w < 32)
            throw std::invalid_argument("SceneConfig: image sizes too small");
        if (point_mode != "uniform" && point_mode != "center")
            throw std::invalid_argument("SceneConfig: point_mode must be uniform or center");
    }
};

struct SampleMeta {
    std::uint64_t seed = 0;
    int index = 0;
    std::string generator_version = kGeneratorVersion;
};

/// One task instance: locate the object marked in the query inside the
/// reference image.
struct Sample {
    Tensor3f query_image;     // 3 x Hq x Wq, values in [0,1]
    Tensor3f reference_image; // 3 x Hr x Wr
    MarkingPoint point;       // query-image pixels
    Mask mask;                // query-frame ground-truth mask of the target
    Box gt_box;               // reference-frame ground truth
    SampleMeta meta;
};

using Dataset = std::vector<Sample>;

namespace synthdetail {

struct RectObj {
    double cx, cy, w, h; // reference frame
    float r, g, b;
    bool elongated;
};

inline void hsv_to_rgb(double h, double s, double v, float& r, float& g, float& b) {
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double rr = 0, gg = 0, bb = 0;
    if (hp < 1) { rr = c; gg = x; }
    else if (hp < 2) { rr = x; gg = c; }
    else if (hp < 3) { gg = c; bb = x; }
    else if (hp < 4) { gg = x; bb = c; }
    else if (hp < 5) { rr = x; bb = c; }
    else { rr = c; bb = x; }
    const double m = v - c;
    r = static_cast<float>(rr + m);
    g = static_cast<float>(gg + m);
    b = static_cast<float>(bb + m);
}

/// Cheap deterministic per-pixel hash noise in [0,1).
inline double pixel_noise(std::uint64_t seed, int y, int x) {
    std::uint64_t z = seed ^ (static_cast<std::uint64_t>(y) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(x) * 0xD1B54A32D192ED03ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

inline float quantize8(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0);
}

inline bool rects_overlap(const RectObj& a, const RectObj& b, double gap) {
    return std::abs(a.cx - b.cx) * 2 < a.w + b.w + gap && std::abs(a.cy - b.cy) * 2 < a.h + b.h + gap;
}

} // namespace synthdetail

/// Deterministic per (cfg, index). The reference holds n_objects
/// non-overlapping uniquely colored rectangles over a textured background;
/// the query is a rotated/scaled crop centered near the designated target
/// (index % n_objects) with mild photometric jitter. The query-frame mask
/// and the reference-frame box are analytically exact.
inline Sample generate_sample(const SceneConfig& cfg, int index) {
    cfg.validate();
    if (index < 0) throw std::invalid_argument("generate_sample: index must be >= 0");
    Rng rng(derive_seed(cfg.seed, "sample") + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1));

    using namespace synthdetail;

    // --- reference scene -------------------------------------------------
    const int n_elong = static_cast<int>(std::lround(cfg.elongated_fraction * cfg.n_objects));
    std::vector<RectObj> objects;
    const double hue0 = rng.uniform();
    for (int i = 0; i < cfg.n_objects; ++i) {
        const bool elongated = i < n_elong;
        RectObj obj;
        obj.elongated = elongated;
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const double ar = elongated ? rng.uniform(std::max(1.6, cfg.aspect_min), std::max(1.7, cfg.aspect_max))
                                        : rng.uniform(1.0, 1.45);
            const double short_side = rng.uniform(16, 36);
            double w = short_side * ar, h = short_side;
            if (rng.bernoulli(0.5)) std::swap(w, h);
            const double margin = 4;
            if (w + 2 * margin >= cfg.ref_w || h + 2 * margin >= cfg.ref_h) continue;
            obj.w = w;
            obj.h = h;
            obj.cx = rng.uniform(margin + w / 2, cfg.ref_w - margin - w / 2);
            obj.cy = rng.uniform(margin + h / 2, cfg.ref_h - margin - h / 2);
            placed = true;
            for (const auto& other : objects)
                if (rects_overlap(obj, other, 6)) {
                    placed = false;
                    break;
                }
        }
        if (!placed) throw std::runtime_error("generate_sample: could not place object " + std::to_string(i));
        hsv_to_rgb(std::fmod(hue0 + i * 0.618033988749895, 1.0), rng.uniform(0.65, 0.95), rng.uniform(0.7, 0.95),
                   obj.r, obj.g, obj.b);
        objects.push_back(obj);
    }

    const float bg_a[3] = {static_cast<float>(rng.uniform(0.1, 0.35)), static_cast<float>(rng.uniform(0.1, 0.35)),
                           static_cast<float>(rng.uniform(0.1, 0.35))};
    const float bg_b[3] = {static_cast<float>(rng.uniform(0.15, 0.4)), static_cast<float>(rng.uniform(0.15, 0.4)),
                           static_cast<float>(rng.uniform(0.15, 0.4))};
    const std::uint64_t noise_seed = rng.next_u64();

    auto reference_color = [&](double rx, double ry, float out[3]) {
        const double tx = rx / cfg.ref_w, ty = ry / cfg.ref_h;
        const double t = 0.5 * (tx + ty);
        const double noise =
            0.06 * (pixel_noise(noise_seed, static_cast<int>(std::floor(ry)), static_cast<int>(std::floor(rx))) - 0.5);
        for (int c = 0; c < 3; ++c) out[c] = static_cast<float>(bg_a[c] * (1 - t) + bg_b[c] * t + noise);
        for (const auto& obj : objects) {
            if (rx >= obj.cx - obj.w / 2 && rx < obj.cx + obj.w / 2 && ry >= obj.cy - obj.h / 2 &&
                ry < obj.cy + obj.h / 2) {
                out[0] = obj.r;
                out[1] = obj.g;
                out[2] = obj.b;
            }
        }
    };

    Sample s;
    s.meta.seed = cfg.seed;
    s.meta.index = index;
    s.reference_image = Tensor3f(3, cfg.ref_h, cfg.ref_w);
    for (int y = 0; y < cfg.ref_h; ++y)
        for (int x = 0; x < cfg.ref_w; ++x) {
            float px[3];
            reference_color(x + 0.5, y + 0.5, px);
            for (int c = 0; c < 3; ++c) s.reference_image.at(c, y, x) = quantize8(px[c]);
        }

    const RectObj& target = objects[static_cast<std::size_t>(index) % objects.size()];
    s.gt_box = Box(target.cx, target.cy, target.w, target.h);

    // --- query view -------------------------------------------------------
    // query pixel q maps to reference point: center + scale * R(theta) * (q - q_mid)
    const double rotations[4] = {0.0, 90.0, 15.0, -15.0};
    bool view_ok = false;
    double cos_t = 1, sin_t = 0, scale = 1, view_cx = 0, view_cy = 0;
    Grid2<std::uint8_t> mask_grid;
    for (int attempt = 0; attempt < 40 && !view_ok; ++attempt) {
        const double theta = rotations[rng.uniform_int(0, 3)] * M_PI / 180.0;
        cos_t = std::cos(theta);
        sin_t = std::sin(theta);
        scale = rng.uniform(0.8, 1.25);
        view_cx = target.cx + rng.uniform(-0.15, 0.15) * cfg.query_w * scale;
        view_cy = target.cy + rng.uniform(-0.15, 0.15) * cfg.query_h * scale;

        mask_grid = Grid2<std::uint8_t>(cfg.query_h, cfg.query_w);
        std::size_t area = 0;
        for (int qy = 0; qy < cfg.query_h; ++qy)
            for (int qx = 0; qx < cfg.query_w; ++qx) {
                const double dx = (qx + 0.5) - cfg.query_w / 2.0;
                const double dy = (qy + 0.5) - cfg.query_h / 2.0;
                const double rx = view_cx + scale * (cos_t * dx - sin_t * dy);
                const double ry = view_cy + scale * (sin_t * dx + cos_t * dy);
                if (rx >= target.cx - target.w / 2 && rx < target.cx + target.w / 2 && ry >= target.cy - target.h / 2 &&
                    ry < target.cy + target.h / 2) {
                    mask_grid.at(qy, qx) = 1;
                    ++area;
                }
            }
        // demand a usable mask: the target visibly inside the query frame
        view_ok = area >= 16;
    }
    if (!view_ok) throw std::runtime_error("generate_sample: target clipped out of query frame after retries");

    s.mask = Mask(std::move(mask_grid));

    const float gain = static_cast<float>(rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter));
    const float offset = static_cast<float>(rng.uniform(-cfg.jitter / 2, cfg.jitter / 2));
    s.query_image = Tensor3f(3, cfg.query_h, cfg.query_w);
    for (int qy = 0; qy < cfg.query_h; ++qy)
        for (int qx = 0; qx < cfg.query_w; ++qx) {
            const double dx = (qx + 0.5) - cfg.query_w / 2.0;
            const double dy = (qy + 0.5) - cfg.query_h / 2.0;
            const double rx = view_cx + scale * (cos_t * dx - sin_t * dy);
            const double ry = view_cy + scale * (sin_t * dx + cos_t * dy);
            float px[3] = {0.05f, 0.05f, 0.08f}; // out-of-scene fill
            if (rx >= 0 && rx < cfg.ref_w && ry >= 0 && ry < cfg.ref_h) reference_color(rx, ry, px);
            for (int c = 0; c < 3; ++c) s.query_image.at(c, qy, qx) = quantize8(px[c] * gain + offset);
        }

    // --- marking point ----------------------------------------------------
    if (cfg.point_mode == "uniform") {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(s.mask.area) - 1));
        std::size_t seen = 0;
        for (int qy = 0; qy < cfg.query_h && s.point.x == 0 && s.point.y == 0; ++qy)
            for (int qx = 0; qx < cfg.query_w; ++qx)
                if (s.mask.foreground(qy, qx) && seen++ == pick) {
                    s.point = {double(qx), double(qy)};
                    break;
                }
    } else {
        // centroid snapped to the nearest foreground pixel
        double sx = 0, sy = 0;
        for (int qy = 0; qy < cfg.query_h; ++qy)
            for (int qx = 0; qx < cfg.query_w; ++qx)
                if (s.mask.foreground(qy, qx)) {
                    sx += qx;
                    sy += qy;
                }
        sx /= static_cast<double>(s.mask.area);
        sy /= static_cast<double>(s.mask.area);
        double best = 1e18;
        for (int qy = 0; qy < cfg.query_h; ++qy)
            for (int qx = 0; qx < cfg.query_w; ++qx)
                if (s.mask.foreground(qy, qx)) {
                    const double d = (qx - sx) * (qx - sx) + (qy - sy) * (qy - sy);
                    if (d < best) {
                        best = d;
                        s.point = {double(qx), double(qy)};
                    }
                }
    }
    return s;
}

// ---------------------------------------------------------------------------
// On-disk dataset: manifest.json + PNGs per sample. The manifest schema is
// also the ingestion format for externally converted real datasets.
// ---------------------------------------------------------------------------

inline nlohmann::json scene_config_to_json(const SceneConfig& cfg) {
    return nlohmann::json{{"n_objects", cfg.n_objects},
                          {"aspect_min", cfg.aspect_min},
                          {"aspect_max", cfg.aspect_max},
                          {"elongated_fraction", cfg.elongated_fraction},
                          {"query_h", cfg.query_h},
                          {"query_w", cfg.query_w},
                          {"ref_h", cfg.ref_h},
                          {"ref_w", cfg.ref_w},
                          {"jitter", cfg.jitter},
                          {"point_mode", cfg.point_mode},
                          {"seed", cfg.seed}};
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
    SceneConfig cfg;
    cfg.n_objects = j.value("n_objects", cfg.n_objects);
    cfg.aspect_min = j.value("aspect_min", cfg.aspect_min);
    cfg.aspect_max = j.value("aspect_max", cfg.aspect_max);
    cfg.elongated_fraction = j.value("elongated_fraction", cfg.elongated_fraction);
    cfg.query_h = j.value("query_h", cfg.query_h);
    cfg.query_w = j.value("query_w", cfg.query_w);
    cfg.ref_h = j.value("ref_h", cfg.ref_h);
    cfg.ref_w = j.value("ref_w", cfg.ref_w);
    cfg.jitter = j.value("jitter", cfg.jitter);
    cfg.point_mode = j.value("point_mode", cfg.point_mode);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

inline void write_dataset(const SceneConfig& cfg, int n, const std::string& directory) {
    if (n < 1) throw std::invalid_argument("write_dataset: n must be >= 1");
    std::filesystem::create_directories(directory);
    nlohmann::json manifest;
    manifest["schema_version"] = kDatasetSchemaVersion;
    manifest["generator_version"] = kGeneratorVersion;
    manifest["config"] = scene_config_to_json(cfg);
    manifest["samples"] = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
        const Sample s = generate_sample(cfg, i);
        const std::string id = sample_id(i);
        png_write_file(directory + "/" + id + "_query.png", image_to_png(s.query_image));
        png_write_file(directory + "/" + id + "_ref.png", image_to_png(s.reference_image));
        png_write_file(directory + "/" + id + "_mask.png", mask_to_png(s.mask));
        manifest["samples"].push_back({{"id", id},
                                       {"query", id + "_query.png"},
                                       {"reference", id + "_ref.png"},
                                       {"mask", id + "_mask.png"},
                                       {"point", {s.point.x, s.point.y}},
                                       {"gt_box", {s.gt_box.cx, s.gt_box.cy, s.gt_box.w, s.gt_box.h}},
                                       {"index", i}});
    }
    atomic_write_file(directory + "/manifest.json", manifest.dump(2) + "\n");
}

inline Dataset read_dataset(const std::string& directory) {
    const std::string manifest_path = directory + "/manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw std::runtime_error("read_dataset: missing manifest " + manifest_path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_text(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("read_dataset: malformed manifest: " + std::string(e.what()));
    }
    if (!manifest.contains("samples") || !manifest["samples"].is_array())
        throw std::runtime_error("read_dataset: manifest has no sample list");
    const SceneConfig cfg = scene_config_from_json(manifest.value("config", nlohmann::json::object()));

    Dataset out;
    for (const auto& rec : manifest["samples"]) {
        const std::string id = rec.value("id", "?");
        for (const char* key : {"query", "reference", "mask", "point", "gt_box"})
            if (!rec.contains(key))
                throw std::runtime_error("read_dataset: sample " + id + " missing field '" + key + "'");
        Sample s;
        for (const auto& [key, member] :
             std::initializer_list<std::pair<const char*, Tensor3f Sample::*>>{{"query", &Sample::query_image},
                                                                               {"reference", &Sample::reference_image}}) {
            const std::string path = directory + "/" + rec[key].get<std::string>();
            if (!std::filesystem::exists(path))
                throw std::runtime_error("read_dataset: sample " + id + " missing file " + path);
            s.*member = image_from_png<float>(png_read_file(path));
        }
        const std::string mask_path = directory + "/" + rec["mask"].get<std::string>();
        if (!std::filesystem::exists(mask_path))
            throw std::runtime_error("read_dataset: sample " + id + " missing file " + mask_path);
        s.mask = mask_from_png(png_read_file(mask_path));
        s.point = {rec["point"][0].get<double>(), rec["point"][1].get<double>()};
        s.gt_box = Box(rec["gt_box"][0].get<double>(), rec["gt_box"][1].get<double>(), rec["gt_box"][2].get<double>(),
                       rec["gt_box"][3].get<double>());
        s.meta.seed = cfg.seed;
        s.meta.index = rec.value("index", 0);
        s.meta.generator_version = manifest.value("generator_version", "?");
        out.push_back(std::move(s));
    }
    return out;
}

/// In-memory generation of n samples (no disk round trip).
inline Dataset generate_dataset(const SceneConfig& cfg, int n) {
    Dataset out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, i));
    return out;
}

/// Ground-truth (w, h) boxes of a dataset, for anchor clustering.
inline std::vector<Anchor> dataset_box_dims(const Dataset& ds) {
    std::vector<Anchor> dims;
    dims.reserve(ds.size());
    for (const auto& s : ds) dims.push_back({s.gt_box.w, s.gt_box.h});
    return dims;
}

} // namespace edgeo
