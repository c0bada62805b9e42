#pragma once

// Dual-path training: an intact forward supplies per-layer latent states and
// teacher distributions, a corrupted forward consumes the copied latents, and
// the four-term objective aligns the two paths.

#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "crystal/corruption.hpp"
#include "crystal/model.hpp"
#include "crystal/ops.hpp"
#include "crystal/taskgen.hpp"

namespace crystal {

enum class AttnVariant { AnswerToLatentsKL, AnswerToLatentsMSE, AnswerToAllKL };

inline const char* attn_variant_name(AttnVariant v) {
    switch (v) {
        case AttnVariant::AnswerToLatentsKL: return "answer_to_latents_kl";
        case AttnVariant::AnswerToLatentsMSE: return "answer_to_latents_mse";
        case AttnVariant::AnswerToAllKL: return "answer_to_all_kl";
    }
    return "?";
}

inline AttnVariant parse_attn_variant(const std::string& s) {
    for (AttnVariant v : {AttnVariant::AnswerToLatentsKL, AttnVariant::AnswerToLatentsMSE,
                          AttnVariant::AnswerToAllKL})
        if (s == attn_variant_name(v)) return v;
    throw ConfigError("unknown attention alignment variant \"" + s + "\"");
}

struct LossConfig {
    double w_ce_int = 1.0;
    double w_ce_cor = 1.0;
    double w_kl = 1.0;
    double w_attn = 1.0;
    AttnVariant attn_variant = AttnVariant::AnswerToLatentsKL;
    std::vector<int> layer_subset;  // empty = all decoder layers
    bool teacher_detach = true;

    void validate(int layers) const {
        if (w_ce_int < 0 || w_ce_cor < 0 || w_kl < 0 || w_attn < 0)
            throw ConfigError("loss weights must be nonnegative");
        for (int l : layer_subset)
            if (l < 0 || l >= layers) throw ConfigError("layer subset entry out of range");
    }

    std::vector<int> resolved_layers(int layers) const {
        if (!layer_subset.empty()) return layer_subset;
        std::vector<int> all(static_cast<size_t>(layers));
        for (int l = 0; l < layers; ++l) all[static_cast<size_t>(l)] = l;
        return all;
    }
};

struct LossBreakdown {
    double ce_int = 0.0;
    double ce_cor = 0.0;
    double kl = 0.0;
    double attn = 0.0;
    double total = 0.0;

    bool finite() const {
        return std::isfinite(ce_int) && std::isfinite(ce_cor) && std::isfinite(kl) && std::isfinite(attn) &&
               std::isfinite(total);
    }
};

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

namespace detail {

// Mean KL per row when the teacher side must keep its gradient: the dedicated
// kl_divergence op treats p as constant, so the coupled form is spelled out
// from primitive ops instead.
inline Tensor kl_rows_coupled(const Tensor& p, const Tensor& q) {
    const int64_t rows = p.size() / p.shape().back();
    Tensor per_entry = mul(p, sub(log_floored(p), log_floored(q)));
    return scale(sum(per_entry), 1.0 / static_cast<double>(rows));
}

}  // namespace detail

// (1/M) sum over answer positions of KL(softmax(intact row) || softmax(corrupted row)).
inline Tensor loss_kl(const Tensor& logits_int, const Tensor& logits_cor, const std::vector<int>& omega,
                      bool teacher_detach) {
    if (omega.empty()) throw ContractViolation("loss_kl requires a non-empty answer position set");
    const int lo = omega.front(), hi = omega.back() + 1;
    Tensor rows_int = slice_rows(logits_int, lo, hi);
    Tensor rows_cor = slice_rows(logits_cor, lo, hi);
    Tensor q = softmax(rows_cor, 1);
    if (teacher_detach) return kl_divergence(softmax(rows_int.detach(), 1), q);
    return detail::kl_rows_coupled(softmax(rows_int, 1), q);
}

// Alignment between per-layer per-head attention blocks of the two paths.
// For the latent variants the blocks are [M x K]; for answer-to-all they are
// the full causal rows [M x T].
inline Tensor attn_alignment_from_maps(const std::vector<std::vector<Tensor>>& maps_int,
                                       const std::vector<std::vector<Tensor>>& maps_cor,
                                       AttnVariant variant, bool teacher_detach) {
    if (maps_int.empty() || maps_int.size() != maps_cor.size())
        throw ContractViolation("attention map layer lists must match and be non-empty");
    const double layer_count = static_cast<double>(maps_int.size());
    std::vector<std::pair<double, Tensor>> terms;
    for (size_t l = 0; l < maps_int.size(); ++l) {
        if (maps_int[l].size() != maps_cor[l].size() || maps_int[l].empty())
            throw ContractViolation("attention map head lists must match and be non-empty");
        const double head_count = static_cast<double>(maps_int[l].size());
        for (size_t h = 0; h < maps_int[l].size(); ++h) {
            Tensor a_int = teacher_detach ? maps_int[l][h].detach() : maps_int[l][h];
            const Tensor& a_cor = maps_cor[l][h];
            if (a_int.shape() != a_cor.shape()) throw DimensionError("attention blocks differ in shape");
            const int m = a_int.rows(), k = a_int.cols();
            switch (variant) {
                case AttnVariant::AnswerToLatentsMSE: {
                    Tensor diff = sub(a_int, a_cor);
                    terms.emplace_back(1.0 / (layer_count * head_count * m * k), sum(mul(diff, diff)));
                    break;
                }
                case AttnVariant::AnswerToLatentsKL: {
                    Tensor p = renorm_rows(a_int);
                    Tensor q = renorm_rows(a_cor);
                    terms.emplace_back(1.0 / (layer_count * head_count),
                                       teacher_detach ? kl_divergence(p, q) : detail::kl_rows_coupled(p, q));
                    break;
                }
                case AttnVariant::AnswerToAllKL: {
                    terms.emplace_back(1.0 / (layer_count * head_count),
                                       teacher_detach ? kl_divergence(a_int, a_cor)
                                                      : detail::kl_rows_coupled(a_int, a_cor));
                    break;
                }
            }
        }
    }
    return weighted_sum(terms);
}

inline Tensor loss_attn(const DualPathTrace& trace_int, const DualPathTrace& trace_cor,
                        const TokenSequence& seq, const LossConfig& cfg) {
    const auto layers = cfg.resolved_layers(static_cast<int>(trace_int.attention.size()));
    if (layers.empty()) throw ContractViolation("attention alignment needs at least one layer");
    const auto omega = answer_logit_positions(seq);

    std::vector<std::vector<Tensor>> maps_int, maps_cor;
    for (int l : layers) {
        if (cfg.attn_variant == AttnVariant::AnswerToAllKL) {
            std::vector<Tensor> row_int, row_cor;
            for (size_t h = 0; h < trace_int.attention[static_cast<size_t>(l)].size(); ++h) {
                row_int.push_back(
                    slice_rows(trace_int.attention[static_cast<size_t>(l)][h], omega.front(), omega.back() + 1));
                row_cor.push_back(
                    slice_rows(trace_cor.attention[static_cast<size_t>(l)][h], omega.front(), omega.back() + 1));
            }
            maps_int.push_back(std::move(row_int));
            maps_cor.push_back(std::move(row_cor));
        } else {
            maps_int.push_back(answer_to_latent_attention(trace_int, seq, l));
            maps_cor.push_back(answer_to_latent_attention(trace_cor, seq, l));
        }
    }
    return attn_alignment_from_maps(maps_int, maps_cor, cfg.attn_variant, cfg.teacher_detach);
}

// Cross entropy over the same answer-segment labels on both paths.
inline std::pair<Tensor, Tensor> loss_ce_paths(const Tensor& logits_int, const Tensor& logits_cor,
                                               const std::vector<std::pair<int, int>>& labels) {
    return {cross_entropy(logits_int, labels), cross_entropy(logits_cor, labels)};
}

// ---------------------------------------------------------------------------
// The dual-path step
// ---------------------------------------------------------------------------

enum class LossTerm { CeInt = 0, CeCor = 1, Kl = 2, Attn = 3 };
using TermMask = std::array<bool, 4>;  // true = replace that term's computation with a constant

struct DualPathOutputs {
    TokenSequence seq;
    DualPathTrace trace_int;
    DualPathTrace trace_cor;
    Tensor ce_int, ce_cor, kl, attn;  // graph scalars
    Tensor total;
    LossBreakdown breakdown;
};

// Runs both forwards and assembles the objective inside the caller's active
// graph. `excised` is a diagnostic hook: flagged terms are replaced by a
// constant zero so gradient excision can be verified externally.
inline DualPathOutputs dual_path_forward(const Model& model, const Vocab& vocab, const QASample& sample,
                                         const CorruptionSpec& spec, const LossConfig& cfg,
                                         const TermMask* excised = nullptr) {
    cfg.validate(model.config().layers);
    DualPathOutputs out;
    out.seq = build_sequence(vocab, model.config(), sample.question, sample.answer,
                             model.image_token_count(sample.image));

    out.trace_int = model.forward(out.seq, sample.image);
    const Image corrupted = corrupt(sample.image, spec);
    out.trace_cor = model.forward(out.seq, corrupted, &out.trace_int.latent_checkpoints);

    const auto labels = answer_labels(out.seq, vocab);
    const auto omega = answer_logit_positions(out.seq);

    auto excise = [&](LossTerm term) { return excised && (*excised)[static_cast<size_t>(term)]; };
    out.ce_int = excise(LossTerm::CeInt) ? Tensor::scalar(0.0)
                                         : cross_entropy(out.trace_int.logits, labels);
    out.ce_cor = excise(LossTerm::CeCor) ? Tensor::scalar(0.0)
                                         : cross_entropy(out.trace_cor.logits, labels);
    out.kl = excise(LossTerm::Kl)
                 ? Tensor::scalar(0.0)
                 : loss_kl(out.trace_int.logits, out.trace_cor.logits, omega, cfg.teacher_detach);
    out.attn = excise(LossTerm::Attn) ? Tensor::scalar(0.0) : loss_attn(out.trace_int, out.trace_cor, out.seq, cfg);

    out.total = weighted_sum({{cfg.w_ce_int, out.ce_int},
                              {cfg.w_ce_cor, out.ce_cor},
                              {cfg.w_kl, out.kl},
                              {cfg.w_attn, out.attn}});
    out.breakdown = {out.ce_int.item(), out.ce_cor.item(), out.kl.item(), out.attn.item(), out.total.item()};
    return out;
}

// One sample's contribution: forward both paths, backward loss_scale * total.
// Parameter gradients accumulate across calls until zeroed.
inline LossBreakdown dual_path_step(const Model& model, const Vocab& vocab, const QASample& sample,
                                    const CorruptionSpec& spec, const LossConfig& cfg,
                                    double loss_scale = 1.0) {
    Graph graph;
    DualPathOutputs out;
    {
        Graph::Scope scope(graph);
        out = dual_path_forward(model, vocab, sample, spec, cfg);
        graph.backward(scale(out.total, loss_scale));
    }
    return out.breakdown;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class Optimizer { Sgd, Adam };

inline const char* optimizer_name(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

inline Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::Sgd;
    if (s == "adam") return Optimizer::Adam;
    throw ConfigError("unknown optimizer \"" + s + "\"");
}

struct TrainConfig {
    int steps = 2000;
    int batch = 8;
    Optimizer optimizer = Optimizer::Adam;
    double lr = 3e-3;
    double momentum = 0.9;   // sgd momentum / adam beta1
    double beta2 = 0.999;       // adam second-moment decay
    double eps = 1e-8;          // adam denominator floor
    double weight_decay = 0.0;  // decoupled, adam only
    int warmup = 100;           // linear warmup steps
    double clip_norm = 1.0;     // global gradient-norm clip; 0 disables
};

struct MetricsRow {
    int step = 0;
    LossBreakdown loss;
    double lr = 0.0;
    uint64_t seed = 0;  // the step's sampling seed, for replaying bad batches
};

// Plain SGD with momentum over the dual-path objective. Deterministic for a
// fixed (model init, dataset, seed).
inline std::vector<MetricsRow> train(Model& model, const Vocab& vocab, const std::vector<QASample>& data,
                                     CorruptionMode mode, const std::vector<double>& levels,
                                     const TrainConfig& tc, const LossConfig& lc, uint64_t seed) {
    if (tc.steps < 1) throw ContractViolation("training needs at least one step");
    if (tc.batch < 1 || data.empty()) throw ContractViolation("training needs samples");
    lc.validate(model.config().layers);

    std::vector<std::vector<double>> velocity;  // sgd momentum / adam first moment
    std::vector<std::vector<double>> second_moment;
    for (auto& p : model.parameters()) {
        velocity.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
        if (tc.optimizer == Optimizer::Adam)
            second_moment.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
    }

    Rng master(Rng::derive(seed, 0x12A17));
    std::vector<MetricsRow> log;
    log.reserve(static_cast<size_t>(tc.steps));

    for (int step = 0; step < tc.steps; ++step) {
        const uint64_t step_seed = master.next_u64();
        Rng srng(step_seed);
        model.zero_grads();

        LossBreakdown avg;
        for (int b = 0; b < tc.batch; ++b) {
            const auto& sample = data[srng.uniform_int(data.size())];
            const CorruptionSpec spec = sample_spec(mode, srng.next_u64(), levels);
            const LossBreakdown bd = dual_path_step(model, vocab, sample, spec, lc, 1.0 / tc.batch);
            if (!bd.finite())
                throw NumericError("non-finite loss at step " + std::to_string(step) + " (batch seed " +
                                   std::to_string(step_seed) + ")");
            avg.ce_int += bd.ce_int / tc.batch;
            avg.ce_cor += bd.ce_cor / tc.batch;
            avg.kl += bd.kl / tc.batch;
            avg.attn += bd.attn / tc.batch;
            avg.total += bd.total / tc.batch;
        }

        double clip_scale = 1.0;
        if (tc.clip_norm > 0.0) {
            double norm2 = 0.0;
            for (auto& p : model.parameters())
                for (double g : p.tensor.grad()) norm2 += g * g;
            const double norm = std::sqrt(norm2);
            if (norm > tc.clip_norm) clip_scale = tc.clip_norm / norm;
        }

        const double lr_t = tc.lr * std::min(1.0, (step + 1) / static_cast<double>(std::max(1, tc.warmup)));
        if (tc.optimizer == Optimizer::Sgd) {
            for (size_t p = 0; p < model.parameters().size(); ++p) {
                Tensor& t = model.parameters()[p].tensor;
                auto& v = velocity[p];
                auto& g = t.grad();
                for (size_t i = 0; i < v.size(); ++i) {
                    v[i] = tc.momentum * v[i] + clip_scale * g[i];
                    t.at(static_cast<int>(i)) -= lr_t * v[i];
                }
            }
        } else {
            const double bias1 = 1.0 - std::pow(tc.momentum, step + 1);
            const double bias2 = 1.0 - std::pow(tc.beta2, step + 1);
            for (size_t p = 0; p < model.parameters().size(); ++p) {
                Tensor& t = model.parameters()[p].tensor;
                auto& m = velocity[p];
                auto& v = second_moment[p];
                auto& g = t.grad();
                for (size_t i = 0; i < m.size(); ++i) {
                    const double gi = clip_scale * g[i];
                    m[i] = tc.momentum * m[i] + (1.0 - tc.momentum) * gi;
                    v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * gi * gi;
                    double& w = t.at(static_cast<int>(i));
                    w -= lr_t * ((m[i] / bias1) / (std::sqrt(v[i] / bias2) + tc.eps) + tc.weight_decay * w);
                }
            }
        }
        log.push_back({step, avg, lr_t, step_seed});
    }
    return log;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class EvalCondition { Intact, CorruptedWithLatents, CorruptedNoLatents, Blind };

inline const char* condition_name(EvalCondition c) {
    switch (c) {
        case EvalCondition::Intact: return "intact";
        case EvalCondition::CorruptedWithLatents: return "corrupted_with_latents";
        case EvalCondition::CorruptedNoLatents: return "corrupted_no_latents";
        case EvalCondition::Blind: return "blind";
    }
    return "?";
}

inline int worker_threads() {
    const char* env = std::getenv("CRYSTAL_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

// Greedy-decode accuracy under one input condition. Corruption seeds derive
// from (seed, sample index), so a fixed seed fixes the whole evaluation.
inline double evaluate(const Model& model, const Vocab& vocab, const std::vector<QASample>& data,
                       EvalCondition cond, CorruptionMode mode, double level, uint64_t seed) {
    if (data.empty()) throw ContractViolation("evaluation needs samples");
    const int threads = std::min<int>(worker_threads(), static_cast<int>(data.size()));

    auto decode_one = [&](size_t i) -> int {
        const QASample& sample = data[i];
        TokenSequence seq = build_sequence(vocab, model.config(), sample.question, {},
                                           model.image_token_count(sample.image));
        switch (cond) {
            case EvalCondition::Intact:
                return model.greedy_decode(seq, sample.image);
            case EvalCondition::Blind:
                return model.greedy_decode(seq, mid_gray(sample.image.height, sample.image.width));
            case EvalCondition::CorruptedNoLatents:
            case EvalCondition::CorruptedWithLatents: {
                CorruptionSpec spec;
                spec.mode = mode;
                spec.level = level;
                spec.seed = Rng::derive(seed, 0xE7A7 + i);
                const Image corrupted = corrupt(sample.image, spec);
                if (cond == EvalCondition::CorruptedNoLatents) return model.greedy_decode(seq, corrupted);
                DualPathTrace clean = model.forward(seq, sample.image);
                return model.greedy_decode(seq, corrupted, &clean.latent_checkpoints);
            }
        }
        return -1;
    };

    std::vector<int> correct(static_cast<size_t>(threads), 0);
    auto worker = [&](int w) {
        for (size_t i = static_cast<size_t>(w); i < data.size(); i += static_cast<size_t>(threads))
            if (decode_one(i) == data[i].answer[0]) ++correct[static_cast<size_t>(w)];
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
        for (auto& th : pool) th.join();
    }
    int total = 0;
    for (int c : correct) total += c;
    return static_cast<double>(total) / static_cast<double>(data.size());
}

struct EvalReport {
    double intact = 0.0;
    double corrupted_with_latents = 0.0;
    double corrupted_no_latents = 0.0;
    double blind = 0.0;
};

inline EvalReport evaluate_all(const Model& model, const Vocab& vocab, const std::vector<QASample>& data,
                               CorruptionMode mode, double level, uint64_t seed) {
    EvalReport r;
    r.intact = evaluate(model, vocab, data, EvalCondition::Intact, mode, level, seed);
    r.corrupted_with_latents = evaluate(model, vocab, data, EvalCondition::CorruptedWithLatents, mode, level, seed);
    r.corrupted_no_latents = evaluate(model, vocab, data, EvalCondition::CorruptedNoLatents, mode, level, seed);
    r.blind = evaluate(model, vocab, data, EvalCondition::Blind, mode, level, seed);
    return r;
}

}  // namespace crystal
