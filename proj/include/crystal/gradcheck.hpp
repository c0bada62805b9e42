#pragma once

// Finite-difference verification of every differentiable operation plus the
// composite dual-path step on a micro model. The check drives each op's
// output through a fixed random projection to get a scalar, then compares
// backward() against central differences on every input coordinate.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "crystal/ops.hpp"
#include "crystal/rng.hpp"
#include "crystal/taskgen.hpp"
#include "crystal/trainer.hpp"

namespace crystal {

struct GradCheckEntry {
    std::string op;
    double worst_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double runtime_seconds = 0.0;
    double threshold = 1e-4;

    bool pass() const {
        for (const auto& e : entries)
            if (!(e.worst_rel_err < threshold)) return false;
        return true;
    }
};

namespace detail {

inline double gc_rel_err(double a, double b) {
    const double diff = std::abs(a - b);
    // below the cancellation noise floor of central differences at step 1e-5
    // on O(1) losses; such coordinates cannot be resolved numerically
    if (diff <= 1e-9) return 0.0;
    return diff / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Central differences against backward() for every coordinate of every leaf.
inline double check_function(std::vector<Tensor>& leaves, const std::function<Tensor()>& forward,
                             bool inject_fault) {
    for (Tensor& leaf : leaves) leaf.zero_grad();  // leaves may be shared across checks
    Graph graph;
    Tensor loss;
    {
        Graph::Scope scope(graph);
        loss = forward();
    }
    graph.backward(loss);

    double worst = 0.0;
    const double step = 1e-5;
    bool fault_pending = inject_fault;
    for (Tensor& leaf : leaves) {
        std::vector<double> analytic = leaf.grad();
        if (fault_pending && !analytic.empty()) {
            analytic[0] += 0.5;  // simulated broken backward, used by the harness test
            fault_pending = false;
        }
        for (int64_t i = 0; i < leaf.size(); ++i) {
            const double saved = leaf.at(static_cast<int>(i));
            leaf.at(static_cast<int>(i)) = saved + step;
            const double up = forward().item();
            leaf.at(static_cast<int>(i)) = saved - step;
            const double down = forward().item();
            leaf.at(static_cast<int>(i)) = saved;
            const double fd = (up - down) / (2.0 * step);
            worst = std::max(worst, gc_rel_err(analytic[static_cast<size_t>(i)], fd));
        }
    }
    return worst;
}

inline Tensor gc_random(Shape shape, Rng& rng, bool requires_grad, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (int64_t i = 0; i < t.size(); ++i) t.at(static_cast<int>(i)) = rng.uniform(lo, hi);
    return t;
}

}  // namespace detail

// Runs every registered check. `inject_fault` perturbs the named op's
// analytic gradient so the harness itself can be exercised.
inline GradCheckReport run_gradcheck(const std::string& inject_fault = "") {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport report;

    auto run = [&](const std::string& name, std::vector<Tensor> leaves,
                   const std::function<Tensor()>& forward) {
        const double worst = detail::check_function(leaves, forward, inject_fault == name);
        report.entries.push_back({name, worst});
    };

    Rng rng(0xabcdef);

    {
        Tensor a = detail::gc_random({3, 4}, rng, true);
        Tensor b = detail::gc_random({4, 5}, rng, true);
        Tensor w = detail::gc_random({3, 5}, rng, false);
        run("matmul", {a, b}, [=] { return sum(mul(matmul(a, b), w)); });
    }
    {
        Tensor a = detail::gc_random({3, 4}, rng, true);
        Tensor w = detail::gc_random({4, 3}, rng, false);
        run("transpose", {a}, [=] { return sum(mul(transpose(a), w)); });
    }
    {
        Tensor a = detail::gc_random({2, 5}, rng, true);
        Tensor b = detail::gc_random({2, 5}, rng, true);
        Tensor w = detail::gc_random({2, 5}, rng, false);
        run("add", {a, b}, [=] { return sum(mul(add(a, b), w)); });
        run("sub", {a, b}, [=] { return sum(mul(sub(a, b), w)); });
        run("mul", {a, b}, [=] { return sum(mul(mul(a, b), w)); });
        run("scale", {a}, [=] { return sum(mul(scale(a, -1.7), w)); });
    }
    {
        Tensor x = detail::gc_random({3, 4}, rng, true);
        Tensor bias = detail::gc_random({4}, rng, true);
        Tensor w = detail::gc_random({3, 4}, rng, false);
        run("add_bias_rows", {x, bias}, [=] { return sum(mul(add_bias_rows(x, bias), w)); });
    }
    {
        Tensor x = detail::gc_random({2, 6}, rng, true, -2.0, 2.0);
        Tensor w = detail::gc_random({2, 6}, rng, false);
        run("gelu", {x}, [=] { return sum(mul(gelu(x), w)); });
    }
    {
        Tensor x = detail::gc_random({7}, rng, true);
        run("sum", {x}, [=] { return sum(mul(x, x)); });
        Tensor y = detail::gc_random({1}, rng, true);
        Tensor z = detail::gc_random({1}, rng, true);
        run("weighted_sum", {y, z}, [=] { return weighted_sum({{0.3, sum(mul(y, y))}, {1.9, sum(mul(z, z))}}); });
    }
    {
        Tensor x = detail::gc_random({3, 5}, rng, true, -2.0, 2.0);
        Tensor w = detail::gc_random({3, 5}, rng, false);
        run("softmax", {x}, [=] { return sum(mul(softmax(x, 1), w)); });
    }
    {
        Tensor scores = detail::gc_random({5, 5}, rng, true, -2.0, 2.0);
        Tensor w = detail::gc_random({5, 5}, rng, false);
        run("causal_softmax", {scores}, [=] { return sum(mul(causal_softmax(scores), w)); });
    }
    {
        Tensor x = detail::gc_random({3, 6}, rng, true);
        Tensor gain = detail::gc_random({6}, rng, true, 0.5, 1.5);
        Tensor bias = detail::gc_random({6}, rng, true);
        Tensor w = detail::gc_random({3, 6}, rng, false);
        run("layernorm", {x, gain, bias}, [=] { return sum(mul(layernorm(x, gain, bias), w)); });
    }
    {
        Tensor logits = detail::gc_random({4, 7}, rng, true, -2.0, 2.0);
        const std::vector<std::pair<int, int>> labels = {{0, 2}, {2, 6}};
        run("cross_entropy", {logits}, [=] { return cross_entropy(logits, labels); });
    }
    {
        Tensor pl = detail::gc_random({2, 5}, rng, true, -1.5, 1.5);
        Tensor ql = detail::gc_random({2, 5}, rng, true, -1.5, 1.5);
        run("kl_divergence", {ql}, [=] { return kl_divergence(softmax(pl, 1), softmax(ql, 1)); });
    }
    {
        Tensor x = detail::gc_random({2, 4}, rng, true, 0.05, 2.0);
        Tensor w = detail::gc_random({2, 4}, rng, false);
        run("log_floored", {x}, [=] { return sum(mul(log_floored(x), w)); });
        run("renorm_rows", {x}, [=] { return sum(mul(renorm_rows(x), w)); });
    }
    {
        Tensor table = detail::gc_random({6, 3}, rng, true);
        Tensor w = detail::gc_random({4, 3}, rng, false);
        const std::vector<int> ids = {1, 4, 4, 0};
        run("gather_rows", {table}, [=] { return sum(mul(gather_rows(table, ids), w)); });
    }
    {
        Tensor x = detail::gc_random({5, 3}, rng, true);
        Tensor v = detail::gc_random({2, 3}, rng, true);
        Tensor w_s = detail::gc_random({2, 3}, rng, false);
        Tensor w_r = detail::gc_random({5, 3}, rng, false);
        run("slice_rows", {x}, [=] { return sum(mul(slice_rows(x, 1, 3), w_s)); });
        run("replace_rows", {x, v}, [=] { return sum(mul(replace_rows(x, 2, v), w_r)); });
    }
    {
        Tensor x = detail::gc_random({3, 6}, rng, true);
        Tensor w = detail::gc_random({3, 2}, rng, false);
        run("slice_cols", {x}, [=] { return sum(mul(slice_cols(x, 2, 4), w)); });
    }
    {
        Tensor a = detail::gc_random({3, 2}, rng, true);
        Tensor b = detail::gc_random({3, 3}, rng, true);
        Tensor w = detail::gc_random({3, 5}, rng, false);
        run("concat_cols", {a, b}, [=] { return sum(mul(concat_cols({a, b}), w)); });
        Tensor c = detail::gc_random({2, 4}, rng, true);
        Tensor d = detail::gc_random({3, 4}, rng, true);
        Tensor w2 = detail::gc_random({5, 4}, rng, false);
        run("concat_rows", {c, d}, [=] { return sum(mul(concat_rows({c, d}), w2)); });
    }

    // Composite: full dual-path objective on a micro model, checked on every
    // parameter. Teacher sides stay coupled so the whole computation is
    // differentiable through.
    {
        Vocab vocab;
        ModelConfig cfg;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.dim = 16;
        cfg.latents = 2;
        cfg.vocab = vocab.size();
        cfg.max_seq = 32;
        Model model(cfg, 2024);

        QASample sample;
        sample.kind = TaskKind::Count;
        Rng img_rng(55);
        sample.image = Image(16, 16);
        for (double& p : sample.image.pixels) p = img_rng.uniform();
        sample.question = vocab.encode("how many red circle");
        sample.answer = {vocab.id("2")};

        CorruptionSpec spec;
        spec.mode = CorruptionMode::Blur;
        spec.level = 2.0;
        spec.seed = 9;

        LossConfig lc;
        lc.teacher_detach = false;

        std::vector<Tensor> leaves;
        for (auto& p : model.parameters()) leaves.push_back(p.tensor);
        run("dual_path_composite", leaves,
            [&model, &vocab, sample, spec, lc] { return dual_path_forward(model, vocab, sample, spec, lc).total; });
    }

    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace crystal
