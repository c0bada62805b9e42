#pragma once

// Seeded image corruption primitives. Every operator is a pure function of
// (image, parameters, seed): same inputs, bit-identical output.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "crystal/errors.hpp"
#include "crystal/image.hpp"
#include "crystal/rng.hpp"

namespace crystal {

enum class CorruptionMode { Identity, Blur, Mask, Jigsaw, Color, Noise };

inline const char* mode_name(CorruptionMode m) {
    switch (m) {
        case CorruptionMode::Identity: return "identity";
        case CorruptionMode::Blur: return "blur";
        case CorruptionMode::Mask: return "mask";
        case CorruptionMode::Jigsaw: return "jigsaw";
        case CorruptionMode::Color: return "color";
        case CorruptionMode::Noise: return "noise";
    }
    return "?";
}

inline CorruptionMode parse_mode(const std::string& name) {
    for (CorruptionMode m : {CorruptionMode::Identity, CorruptionMode::Blur, CorruptionMode::Mask,
                             CorruptionMode::Jigsaw, CorruptionMode::Color, CorruptionMode::Noise})
        if (name == mode_name(m)) return m;
    throw ConfigError("unknown corruption mode \"" + name + "\"");
}

// Built-in intensity ladders, one per mode. The level prior is uniform over
// the ladder.
inline const std::vector<double>& default_levels(CorruptionMode m) {
    static const std::vector<double> kBlur = {2, 5, 10};
    static const std::vector<double> kMask = {0.2, 0.5, 0.8};
    static const std::vector<double> kJigsaw = {0.2, 0.5, 0.8};
    static const std::vector<double> kColor = {0.5, 1.0, 2.0};
    static const std::vector<double> kNoise = {15, 30, 50};
    static const std::vector<double> kNone = {};
    switch (m) {
        case CorruptionMode::Blur: return kBlur;
        case CorruptionMode::Mask: return kMask;
        case CorruptionMode::Jigsaw: return kJigsaw;
        case CorruptionMode::Color: return kColor;
        case CorruptionMode::Noise: return kNoise;
        case CorruptionMode::Identity: return kNone;
    }
    return kNone;
}

// Fully determines one corruption realization.
struct CorruptionSpec {
    CorruptionMode mode = CorruptionMode::Identity;
    double level = 0.0;
    uint64_t seed = 0;
    std::vector<double> level_set;  // allowed levels; empty means any level >= 0

    void validate() const {
        if (mode == CorruptionMode::Identity) return;
        if (level_set.empty()) {
            if (level < 0.0) throw ContractViolation("corruption level must be >= 0");
            return;
        }
        if (std::find(level_set.begin(), level_set.end(), level) == level_set.end())
            throw ContractViolation("corruption level " + std::to_string(level) + " not in the mode's ladder");
    }
};

// Draws the intensity uniformly from the given ladder; deterministic per
// (mode, seed).
inline CorruptionSpec sample_spec(CorruptionMode mode, uint64_t seed, const std::vector<double>& ladder) {
    CorruptionSpec spec;
    spec.mode = mode;
    spec.seed = seed;
    spec.level_set = ladder;
    if (!spec.level_set.empty()) {
        Rng rng(Rng::derive(seed, 0xC0DE));
        spec.level = spec.level_set[rng.uniform_int(spec.level_set.size())];
    }
    return spec;
}

inline CorruptionSpec sample_spec(CorruptionMode mode, uint64_t seed) {
    return sample_spec(mode, seed, default_levels(mode));
}

namespace detail {

// Edge-inclusive reflection: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i = ((i % period) + period) % period;
    return i < n ? i : period - 1 - i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    const int half = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * half + 1));
    double total = 0.0;
    for (int t = -half; t <= half; ++t) {
        k[static_cast<size_t>(t + half)] = std::exp(-0.5 * (t / sigma) * (t / sigma));
        total += k[static_cast<size_t>(t + half)];
    }
    for (double& w : k) w /= total;
    return k;
}

}  // namespace detail

// Separable Gaussian low-pass filter, kernel half-width ceil(3*sigma),
// reflect padding, applied per channel. Written in the "x + sum w*(tap - x)"
// form so a constant image passes through bit-exactly.
inline Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) throw ContractViolation("blur sigma must be positive");
    const auto kernel = detail::gaussian_kernel(sigma);
    const int half = (static_cast<int>(kernel.size()) - 1) / 2;

    // Lines are copied into a reflected-border scratch first so the tap loop
    // stays branch-free.
    std::vector<double> ext;
    Image tmp(img.height, img.width);
    ext.resize(static_cast<size_t>(img.width + 2 * half));
    for (int y = 0; y < img.height; ++y) {
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < static_cast<int>(ext.size()); ++i)
                ext[static_cast<size_t>(i)] = img.at(y, detail::reflect_index(i - half, img.width), c);
            for (int x = 0; x < img.width; ++x) {
                const double center = ext[static_cast<size_t>(x + half)];
                double delta = 0.0;
                for (int t = -half; t <= half; ++t)
                    delta += kernel[static_cast<size_t>(t + half)] * (ext[static_cast<size_t>(x + half + t)] - center);
                tmp.at(y, x, c) = center + delta;
            }
        }
    }
    Image out(img.height, img.width);
    ext.resize(static_cast<size_t>(img.height + 2 * half));
    for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < static_cast<int>(ext.size()); ++i)
                ext[static_cast<size_t>(i)] = tmp.at(detail::reflect_index(i - half, img.height), x, c);
            for (int y = 0; y < img.height; ++y) {
                const double center = ext[static_cast<size_t>(y + half)];
                double delta = 0.0;
                for (int t = -half; t <= half; ++t)
                    delta += kernel[static_cast<size_t>(t + half)] * (ext[static_cast<size_t>(y + half + t)] - center);
                out.at(y, x, c) = center + delta;
            }
        }
    }
    out.clamp_to_unit();
    return out;
}

// One axis-aligned rectangle of roughly area_fraction * H * W (aspect drawn
// uniformly in [0.5, 2]) filled with constant 0.5 gray.
inline Image random_mask(const Image& img, double area_fraction, uint64_t seed) {
    if (area_fraction <= 0.0 || area_fraction >= 1.0)
        throw ContractViolation("mask area fraction must lie in (0, 1)");
    Rng rng(Rng::derive(seed, 0x3A5C));
    const double target = area_fraction * img.height * img.width;
    const double aspect = rng.uniform(0.5, 2.0);
    int h = std::clamp(static_cast<int>(std::lround(std::sqrt(target * aspect))), 1, img.height);
    int w = std::clamp(static_cast<int>(std::lround(target / h)), 1, img.width);
    // rebalance once so a clamped extent does not shrink the area
    h = std::clamp(static_cast<int>(std::lround(target / w)), 1, img.height);
    const int top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.height - h + 1)));
    const int left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.width - w + 1)));

    Image out = img;
    for (int y = top; y < top + h; ++y)
        for (int x = left; x < left + w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.5;
    return out;
}

namespace detail {

// In-place Fisher-Yates: v[i] <-> v[i + uniform_int(n - i)] for i = 0..n-2.
inline void shuffle(std::vector<int>& v, Rng& rng) {
    for (size_t i = 0; i + 1 < v.size(); ++i) {
        const size_t j = i + rng.uniform_int(v.size() - i);
        std::swap(v[i], v[j]);
    }
}

struct JigsawPlan {
    std::vector<int> selected;  // tile indices, row-major
    std::vector<int> perm;      // derangement over `selected` slots
};

// Draw order is part of the contract: the tile selection is the first
// n_sel entries of a shuffled identity, then the derangement is rejection
// sampled with full shuffles.
inline JigsawPlan jigsaw_plan(int grid, double ratio, uint64_t seed) {
    JigsawPlan plan;
    const int tiles = grid * grid;
    const int n_sel = static_cast<int>(std::ceil(ratio * tiles));
    if (n_sel == 0) return plan;
    Rng rng(Rng::derive(seed, 0x915A));
    std::vector<int> order(static_cast<size_t>(tiles));
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    plan.selected.assign(order.begin(), order.begin() + n_sel);
    plan.perm.resize(static_cast<size_t>(n_sel));
    std::iota(plan.perm.begin(), plan.perm.end(), 0);
    if (n_sel >= 2) {
        bool has_fixed_point = true;
        while (has_fixed_point) {
            shuffle(plan.perm, rng);
            has_fixed_point = false;
            for (int i = 0; i < n_sel; ++i)
                if (plan.perm[static_cast<size_t>(i)] == i) has_fixed_point = true;
        }
    }
    return plan;
}

}  // namespace detail

// Permutes ceil(ratio * G^2) grid tiles with a seeded fixed-point-free
// permutation; remaining tiles are untouched.
inline Image jigsaw(const Image& img, double shuffle_ratio, uint64_t seed, int grid = 4) {
    if (shuffle_ratio < 0.0 || shuffle_ratio > 1.0)
        throw ContractViolation("jigsaw ratio must lie in [0, 1]");
    if (img.height % grid != 0 || img.width % grid != 0)
        throw DimensionError("image extents must be divisible by the jigsaw grid " + std::to_string(grid));
    const auto plan = detail::jigsaw_plan(grid, shuffle_ratio, seed);
    if (plan.selected.empty()) return img;

    const int th = img.height / grid, tw = img.width / grid;
    Image out = img;
    for (size_t slot = 0; slot < plan.selected.size(); ++slot) {
        const int dst = plan.selected[slot];
        const int src = plan.selected[static_cast<size_t>(plan.perm[slot])];
        const int dy = (dst / grid) * th, dx = (dst % grid) * tw;
        const int sy = (src / grid) * th, sx = (src % grid) * tw;
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int c = 0; c < 3; ++c) out.at(dy + y, dx + x, c) = img.at(sy + y, sx + x, c);
    }
    return out;
}

// Photometric jitter factors; exposed so tests can pin them directly.
struct ColorFactors {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue_turns = 0.0;
};

inline ColorFactors sample_color_factors(double strength, Rng& rng) {
    const double lo = std::max(0.0, 1.0 - 0.4 * strength);
    const double hi = 1.0 + 0.4 * strength;
    ColorFactors f;
    f.brightness = rng.uniform(lo, hi);
    f.contrast = rng.uniform(lo, hi);
    f.saturation = rng.uniform(lo, hi);
    f.hue_turns = rng.uniform(-0.1 * strength, 0.1 * strength);
    return f;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d == 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    } else if (mx == g) {
        h = ((b - r) / d + 2.0) / 6.0;
    } else {
        h = ((r - g) / d + 4.0) / 6.0;
    }
    if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    if (s == 0.0) {
        r = g = b = v;
        return;
    }
    const double h6 = h * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace detail

// Applies brightness, contrast, saturation, then hue rotation (HSV
// round-trip), clamping after each stage. Factors of exactly 1 (or a hue of
// exactly 0) skip their stage, so the identity factors are a true identity.
inline Image apply_color(const Image& img, const ColorFactors& f) {
    Image out = img;
    if (f.brightness != 1.0) {
        for (double& v : out.pixels) v = std::clamp(v * f.brightness, 0.0, 1.0);
    }
    if (f.contrast != 1.0) {
        const double m = std::accumulate(out.pixels.begin(), out.pixels.end(), 0.0) /
                         static_cast<double>(out.pixels.size());
        for (double& v : out.pixels) v = std::clamp(m + (v - m) * f.contrast, 0.0, 1.0);
    }
    if (f.saturation != 1.0) {
        for (size_t i = 0; i < out.pixels.size(); i += 3) {
            const double gray = (out.pixels[i] + out.pixels[i + 1] + out.pixels[i + 2]) / 3.0;
            for (int c = 0; c < 3; ++c)
                out.pixels[i + c] = std::clamp(gray + (out.pixels[i + c] - gray) * f.saturation, 0.0, 1.0);
        }
    }
    if (f.hue_turns != 0.0) {
        for (size_t i = 0; i < out.pixels.size(); i += 3) {
            double h, s, v;
            detail::rgb_to_hsv(out.pixels[i], out.pixels[i + 1], out.pixels[i + 2], h, s, v);
            h += f.hue_turns;
            h -= std::floor(h);
            detail::hsv_to_rgb(h, s, v, out.pixels[i], out.pixels[i + 1], out.pixels[i + 2]);
        }
        out.clamp_to_unit();
    }
    return out;
}

inline Image color_distort(const Image& img, double strength, uint64_t seed) {
    if (strength <= 0.0) throw ContractViolation("color strength must be positive");
    Rng rng(Rng::derive(seed, 0xC010));
    return apply_color(img, sample_color_factors(strength, rng));
}

// Additive i.i.d. Gaussian noise with standard deviation sigma255/255.
inline Image gaussian_noise(const Image& img, double sigma255, uint64_t seed) {
    if (sigma255 <= 0.0) throw ContractViolation("noise sigma must be positive");
    Rng rng(Rng::derive(seed, 0x2015E));
    const double sigma = sigma255 / 255.0;
    Image out = img;
    for (double& v : out.pixels) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    return out;
}

// Dispatch for I_cor = C(I; level, mode).
inline Image corrupt(const Image& img, const CorruptionSpec& spec) {
    spec.validate();
    switch (spec.mode) {
        case CorruptionMode::Identity: return img;
        case CorruptionMode::Blur: return gaussian_blur(img, spec.level);
        case CorruptionMode::Mask: return random_mask(img, spec.level, spec.seed);
        case CorruptionMode::Jigsaw: return jigsaw(img, spec.level, spec.seed);
        case CorruptionMode::Color: return color_distort(img, spec.level, spec.seed);
        case CorruptionMode::Noise: return gaussian_noise(img, spec.level, spec.seed);
    }
    throw ContractViolation("unreachable corruption mode");
}

}  // namespace crystal
