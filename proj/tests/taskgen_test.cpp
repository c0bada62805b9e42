#include <cmath>
#include <map>
#include <set>
#include <string>

#include "crystal/taskgen.hpp"
#include "doctest.h"

using namespace crystal;

namespace {

// Independent label oracle: re-derive the answer from the scene and the
// question text alone.
std::string oracle_answer(const Vocab& vocab, const QASample& sample) {
    const std::string q = vocab.decode(sample.question);
    auto word_at = [&](int from_end) {
        std::vector<std::string> words;
        std::string cur;
        for (char c : q) {
            if (c == ' ') {
                words.push_back(cur);
                cur.clear();
            } else
                cur += c;
        }
        words.push_back(cur);
        return words[words.size() - static_cast<size_t>(from_end)];
    };
    const std::string shape_w = word_at(1);
    const std::string color_w = word_at(2);
    ShapeKind shape = ShapeKind::Circle;
    for (ShapeKind s : {ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle})
        if (shape_w == shape_word(s)) shape = s;
    ColorName color = ColorName::Red;
    for (ColorName c : {ColorName::Red, ColorName::Green, ColorName::Blue, ColorName::Yellow})
        if (color_w == color_word(c)) color = c;

    int matches = 0;
    for (const auto& o : sample.scene.objects)
        if (o.shape == shape && o.color == color) ++matches;

    switch (sample.kind) {
        case TaskKind::Count: return std::to_string(matches);
        case TaskKind::Exist: return matches > 0 ? "yes" : "no";
        case TaskKind::Relation: {
            for (const auto& o : sample.scene.objects)
                if (o.shape == shape && o.color == color) return o.cx < Scene::kCanvas / 2.0 ? "left" : "right";
            return "?";
        }
    }
    return "?";
}

}  // namespace

TEST_SUITE("taskgen") {

TEST_CASE("vocabulary is dense, small, and round-trips") {
    Vocab v;
    CHECK(v.size() < 64);
    for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.token(i)) == i);
    CHECK_THROWS_AS(v.id("walrus"), VocabularyError);
    CHECK_THROWS_AS(v.token(99), VocabularyError);
    CHECK(v.decode(v.encode("how many red circle")) == "how many red circle");
    CHECK(v.is_answer_token(v.id("3")));
    CHECK(v.is_answer_token(v.id("left")));
    CHECK_FALSE(v.is_answer_token(v.id("circle")));
    CHECK(v.answer_ids().size() == 10);
}

TEST_CASE("empty scene renders all white") {
    Scene scene;
    Image img = render(scene);
    for (double p : img.pixels) CHECK(p == 1.0);
}

TEST_CASE("a circle rasterizes exactly the pixels inside its radius") {
    Scene scene;
    scene.objects.push_back({ShapeKind::Circle, ColorName::Red, 31.0, 27.0, 6.0});
    Image img = render(scene);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const double dx = x + 0.5 - 31.0, dy = y + 0.5 - 27.0;
            const bool inside = dx * dx + dy * dy <= 36.0;
            const bool painted = img.at(y, x, 0) != 1.0 || img.at(y, x, 1) != 1.0 || img.at(y, x, 2) != 1.0;
            CHECK(painted == inside);
            if (painted) CHECK(img.at(y, x, 0) > img.at(y, x, 2));  // red-ish
        }
    }
}

TEST_CASE("color changes do not move the pixel support") {
    Scene a;
    a.objects.push_back({ShapeKind::Triangle, ColorName::Green, 20.0, 40.0, 7.0});
    Scene b = a;
    b.objects[0].color = ColorName::Blue;
    Image ia = render(a), ib = render(b);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const bool pa = ia.at(y, x, 0) != 1.0 || ia.at(y, x, 1) != 1.0 || ia.at(y, x, 2) != 1.0;
            const bool pb = ib.at(y, x, 0) != 1.0 || ib.at(y, x, 1) != 1.0 || ib.at(y, x, 2) != 1.0;
            CHECK(pa == pb);
        }
}

TEST_CASE("samples are deterministic per seed") {
    QASample a = make_sample(1234, TaskKind::Count);
    QASample b = make_sample(1234, TaskKind::Count);
    CHECK(a.image.same_pixels(b.image));
    CHECK(a.question == b.question);
    CHECK(a.answer == b.answer);
    QASample c = make_sample(1235, TaskKind::Count);
    CHECK_FALSE(a.image.same_pixels(c.image));
}

TEST_CASE("generator labels match the scene oracle on every sample") {
    Vocab vocab;
    for (uint64_t seed = 0; seed < 300; ++seed) {
        for (TaskKind kind : {TaskKind::Count, TaskKind::Exist, TaskKind::Relation}) {
            QASample s = make_sample(seed, kind);
            REQUIRE(s.answer.size() == 1);
            CHECK(vocab.token(s.answer[0]) == oracle_answer(vocab, s));
            CHECK(s.question.size() <= 12);
            CHECK(vocab.is_answer_token(s.answer[0]));
            CHECK(s.scene.objects.size() >= 2);
            CHECK(s.scene.objects.size() <= 5);
        }
    }
}

TEST_CASE("scene objects never overlap") {
    for (uint64_t seed = 0; seed < 200; ++seed) {
        QASample s = make_sample(seed, TaskKind::Count);
        for (size_t i = 0; i < s.scene.objects.size(); ++i) {
            for (size_t j = i + 1; j < s.scene.objects.size(); ++j) {
                const auto& a = s.scene.objects[i];
                const auto& b = s.scene.objects[j];
                const double d = std::hypot(a.cx - b.cx, a.cy - b.cy);
                CHECK(d > a.radius + b.radius);
            }
        }
    }
}

TEST_CASE("pure count mix yields only count samples") {
    auto samples = make_split(7, 100, TaskMix{1.0, 0.0, 0.0});
    CHECK(samples.size() == 100);
    for (const auto& s : samples) CHECK(s.kind == TaskKind::Count);
}

TEST_CASE("count answers cover all six values and stay balanced") {
    Vocab vocab;
    auto samples = make_split(11, 1000, TaskMix{1.0, 0.0, 0.0});
    std::map<std::string, int> freq;
    for (const auto& s : samples) ++freq[vocab.token(s.answer[0])];
    for (const char* d : {"0", "1", "2", "3", "4", "5"}) CHECK(freq[d] > 0);
    for (const auto& [token, count] : freq) CHECK(count <= 400);  // no answer above 40%
}

TEST_CASE("train and eval splits use disjoint sample seeds") {
    auto train = make_split(42, 200, TaskMix{1.0, 0.0, 0.0}, Split::Train);
    auto eval = make_split(42, 200, TaskMix{1.0, 0.0, 0.0}, Split::Eval);
    std::set<uint64_t> train_seeds, eval_seeds;
    for (const auto& s : train) train_seeds.insert(s.seed);
    for (const auto& s : eval) eval_seeds.insert(s.seed);
    CHECK(train_seeds.size() == 200);
    for (uint64_t s : eval_seeds) CHECK(train_seeds.count(s) == 0);
}

TEST_CASE("mixed splits respect the requested proportions roughly") {
    auto samples = make_split(13, 900, TaskMix{0.4, 0.3, 0.3});
    int n_count = 0, n_exist = 0, n_rel = 0;
    for (const auto& s : samples) {
        if (s.kind == TaskKind::Count) ++n_count;
        if (s.kind == TaskKind::Exist) ++n_exist;
        if (s.kind == TaskKind::Relation) ++n_rel;
    }
    CHECK(n_count > 280);
    CHECK(n_exist > 190);
    CHECK(n_rel > 190);
}

TEST_CASE("exist task on a target-free scene answers no") {
    Vocab vocab;
    int saw_no = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        QASample s = make_sample(seed, TaskKind::Exist);
        if (vocab.token(s.answer[0]) == "no") {
            ++saw_no;
            CHECK(oracle_answer(vocab, s) == "no");
        }
    }
    CHECK(saw_no > 5);
}

}  // TEST_SUITE
