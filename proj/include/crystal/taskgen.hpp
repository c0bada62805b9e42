#pragma once

// Procedural visual-QA corpus: rendered shape scenes, templated questions,
// single-token answers. Everything is a pure function of the seed.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crystal/errors.hpp"
#include "crystal/image.hpp"
#include "crystal/rng.hpp"
#include "crystal/vocab.hpp"

namespace crystal {

enum class ShapeKind { Circle, Square, Triangle };
enum class ColorName { Red, Green, Blue, Yellow };
enum class TaskKind { Count, Exist, Relation };

inline const char* shape_word(ShapeKind s) {
    switch (s) {
        case ShapeKind::Circle: return "circle";
        case ShapeKind::Square: return "square";
        case ShapeKind::Triangle: return "triangle";
    }
    return "?";
}

inline const char* color_word(ColorName c) {
    switch (c) {
        case ColorName::Red: return "red";
        case ColorName::Green: return "green";
        case ColorName::Blue: return "blue";
        case ColorName::Yellow: return "yellow";
    }
    return "?";
}

inline const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::Count: return "count";
        case TaskKind::Exist: return "exist";
        case TaskKind::Relation: return "relation";
    }
    return "?";
}

struct SceneObject {
    ShapeKind shape;
    ColorName color;
    double cx, cy;   // pixel coordinates of the center
    double radius;   // circumscribed radius, so distance > r1+r2 means no pixel overlap
};

struct Scene {
    static constexpr int kCanvas = 64;
    std::vector<SceneObject> objects;
};

struct QASample {
    Image image;
    std::vector<int> question;
    std::vector<int> answer;  // single token
    TaskKind kind = TaskKind::Count;
    uint64_t seed = 0;
    Scene scene;
};

namespace detail {

inline void shape_rgb(ColorName c, double& r, double& g, double& b) {
    switch (c) {
        case ColorName::Red: r = 0.85; g = 0.10; b = 0.10; return;
        case ColorName::Green: r = 0.10; g = 0.70; b = 0.15; return;
        case ColorName::Blue: r = 0.10; g = 0.15; b = 0.85; return;
        case ColorName::Yellow: r = 0.90; g = 0.85; b = 0.10; return;
    }
}

// Pixel (x, y) samples the shape at its center (x+0.5, y+0.5).
inline bool inside_object(const SceneObject& o, double px, double py) {
    const double dx = px - o.cx, dy = py - o.cy;
    switch (o.shape) {
        case ShapeKind::Circle:
            return dx * dx + dy * dy <= o.radius * o.radius;
        case ShapeKind::Square: {
            const double h = o.radius / 1.4142135623730951;
            return std::abs(dx) <= h && std::abs(dy) <= h;
        }
        case ShapeKind::Triangle: {
            // equilateral, apex up, vertices on the circumscribed circle
            const double ax = o.cx, ay = o.cy - o.radius;
            const double bx = o.cx - o.radius * 0.8660254037844386, by = o.cy + o.radius * 0.5;
            const double cx2 = o.cx + o.radius * 0.8660254037844386, cy2 = o.cy + o.radius * 0.5;
            auto edge = [&](double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            const double e1 = edge(ax, ay, bx, by);
            const double e2 = edge(bx, by, cx2, cy2);
            const double e3 = edge(cx2, cy2, ax, ay);
            return (e1 >= 0 && e2 >= 0 && e3 >= 0) || (e1 <= 0 && e2 <= 0 && e3 <= 0);
        }
    }
    return false;
}

}  // namespace detail

// Rasterizes the scene on a white background; no anti-aliasing.
inline Image render(const Scene& scene) {
    Image img(Scene::kCanvas, Scene::kCanvas, 1.0);
    for (const auto& obj : scene.objects) {
        double r, g, b;
        detail::shape_rgb(obj.color, r, g, b);
        const int y0 = std::max(0, static_cast<int>(obj.cy - obj.radius - 1));
        const int y1 = std::min(Scene::kCanvas - 1, static_cast<int>(obj.cy + obj.radius + 1));
        const int x0 = std::max(0, static_cast<int>(obj.cx - obj.radius - 1));
        const int x1 = std::min(Scene::kCanvas - 1, static_cast<int>(obj.cx + obj.radius + 1));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (detail::inside_object(obj, x + 0.5, y + 0.5)) {
                    img.at(y, x, 0) = r;
                    img.at(y, x, 1) = g;
                    img.at(y, x, 2) = b;
                }
            }
        }
    }
    return img;
}

namespace detail {

// Objects occupy distinct cells of a 4x4 layout grid, one object per cell,
// jittered around the cell's anchor. Cell exclusivity guarantees the
// non-overlap invariant, and the fixed footprint keeps object count aligned
// with pixel mass.
inline bool place_objects(Scene& scene, int count, Rng& rng,
                          const std::vector<std::pair<ShapeKind, ColorName>>& combos) {
    scene.objects.clear();
    constexpr int kCells = 4;
    constexpr double kCell = Scene::kCanvas / static_cast<double>(kCells);
    std::vector<int> cells(kCells * kCells);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    for (size_t i = 0; i + 1 < cells.size(); ++i) {
        const size_t j = i + rng.uniform_int(cells.size() - i);
        std::swap(cells[i], cells[j]);
    }
    for (int i = 0; i < count; ++i) {
        SceneObject obj;
        obj.shape = combos[static_cast<size_t>(i)].first;
        obj.color = combos[static_cast<size_t>(i)].second;
        obj.radius = 3.4;
        const int cell = cells[static_cast<size_t>(i)];
        obj.cx = (cell % kCells) * kCell + 4.0;
        obj.cy = (cell / kCells) * kCell + 4.0;
        scene.objects.push_back(obj);
    }
    return true;
}

inline std::pair<ShapeKind, ColorName> random_combo(Rng& rng) {
    return {static_cast<ShapeKind>(rng.uniform_int(3)), static_cast<ColorName>(rng.uniform_int(4))};
}

inline std::pair<ShapeKind, ColorName> random_other_combo(Rng& rng, std::pair<ShapeKind, ColorName> avoid) {
    while (true) {
        auto combo = random_combo(rng);
        if (combo != avoid) return combo;
    }
}

}  // namespace detail

// Ground truth recomputed from the scene; used as the generator's label and
// by the oracle tests.
inline int count_matching(const Scene& scene, ShapeKind shape, ColorName color) {
    int n = 0;
    for (const auto& o : scene.objects)
        if (o.shape == shape && o.color == color) ++n;
    return n;
}

inline QASample make_sample(uint64_t seed, TaskKind kind) {
    Rng rng(Rng::derive(seed, 0x7A50 + static_cast<uint64_t>(kind)));
    Vocab vocab;
    QASample sample;
    sample.kind = kind;
    sample.seed = seed;

    while (true) {
        auto target = detail::random_combo(rng);
        std::vector<std::pair<ShapeKind, ColorName>> combos;
        std::string answer_word;

        if (kind == TaskKind::Count) {
            // Counting statistics are tuned for trainability at this scale.
            // The answer stays uniform over 0..5 but the scene always holds
            // five objects, so neither global pixel mass nor scene density
            // leaks the count. Questions favor one anchor combo, which lets
            // an unconditional counting circuit form before the rarer combos
            // generalize it, and distractors share the target color half the
            // time so color mass alone cannot count either.
            if (rng.uniform() < 0.6) target = {ShapeKind::Circle, ColorName::Red};
            const int target_count = static_cast<int>(rng.uniform_int(6));
            const int total = 5;
            for (int i = 0; i < target_count; ++i) combos.push_back(target);
            for (int i = target_count; i < total; ++i) {
                if (rng.uniform() < 0.5) {
                    auto same_color = target;
                    while (same_color.first == target.first)
                        same_color.first = static_cast<ShapeKind>(rng.uniform_int(3));
                    combos.push_back(same_color);
                } else {
                    combos.push_back(detail::random_other_combo(rng, target));
                }
            }
            answer_word = std::to_string(target_count);
            sample.question = vocab.encode(std::string("how many ") + color_word(target.second) + " " +
                                           shape_word(target.first));
        } else if (kind == TaskKind::Exist) {
            const bool present = rng.uniform_int(2) == 1;
            const int total = 2 + static_cast<int>(rng.uniform_int(4));
            const int target_count = present ? 1 + static_cast<int>(rng.uniform_int(2)) : 0;
            for (int i = 0; i < std::min(target_count, total); ++i) combos.push_back(target);
            for (int i = static_cast<int>(combos.size()); i < total; ++i)
                combos.push_back(detail::random_other_combo(rng, target));
            answer_word = present ? "yes" : "no";
            sample.question = vocab.encode(std::string("is there a ") + color_word(target.second) + " " +
                                           shape_word(target.first));
        } else {
            const int total = 2 + static_cast<int>(rng.uniform_int(4));
            combos.push_back(target);  // exactly one target object
            for (int i = 1; i < total; ++i) combos.push_back(detail::random_other_combo(rng, target));
            sample.question = vocab.encode(std::string("where is the ") + color_word(target.second) + " " +
                                           shape_word(target.first));
            answer_word = "";  // decided after placement
        }

        if (!detail::place_objects(sample.scene, static_cast<int>(combos.size()), rng, combos)) continue;

        if (kind == TaskKind::Relation) {
            const double cx = sample.scene.objects.front().cx;
            if (std::abs(cx - Scene::kCanvas / 2.0) < 5.0) continue;  // keep sides unambiguous
            answer_word = cx < Scene::kCanvas / 2.0 ? "left" : "right";
        }

        sample.answer = {vocab.id(answer_word)};
        sample.image = render(sample.scene);
        return sample;
    }
}

enum class Split { Train, Eval };

struct TaskMix {
    double count = 1.0;
    double exist = 0.0;
    double relation = 0.0;
};

// Train and eval draw their per-sample seeds from disjoint derived streams.
inline std::vector<QASample> make_split(uint64_t seed, int n, const TaskMix& mix, Split split = Split::Train) {
    if (n <= 0) throw ContractViolation("split size must be positive");
    if (std::abs(mix.count + mix.exist + mix.relation - 1.0) > 1e-9)
        throw ContractViolation("task mix must sum to 1");
    const uint64_t split_seed = Rng::derive(seed, split == Split::Train ? 0x17A12 : 0xE7A1);
    Rng kind_rng(Rng::derive(split_seed, 0xF00D));
    std::vector<QASample> samples;
    samples.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = kind_rng.uniform();
        TaskKind kind = TaskKind::Count;
        if (u >= mix.count && u < mix.count + mix.exist)
            kind = TaskKind::Exist;
        else if (u >= mix.count + mix.exist)
            kind = TaskKind::Relation;
        samples.push_back(make_sample(Rng::derive(split_seed, 0x5EED + static_cast<uint64_t>(i)), kind));
    }
    return samples;
}

}  // namespace crystal
