#pragma once

// The three ablation grids: latent token quantity/content, loss components,
// and corruption strategy. Every cell trains a fresh model at reduced scale
// and reports greedy-decode accuracy under the four evaluation conditions.

#include <string>
#include <vector>

#include "crystal/config.hpp"
#include "crystal/csv.hpp"
#include "crystal/trainer.hpp"

namespace crystal {

namespace detail {

inline AblationRow run_cell(const std::string& grid, const std::string& cell, const RunConfig& base,
                            const ModelConfig& mcfg, const LossConfig& lcfg, CorruptionMode mode,
                            const std::vector<double>& levels, double eval_level,
                            const std::vector<QASample>& train_data, const std::vector<QASample>& eval_data) {
    Model model(mcfg, base.seed);
    TrainConfig tc = base.train;
    tc.steps = base.ablate_steps;
    tc.batch = base.ablate_batch;
    Vocab vocab;
    train(model, vocab, train_data, mode, levels, tc, lcfg, base.seed);
    return {grid, cell, evaluate_all(model, vocab, eval_data, mode, eval_level, base.seed)};
}

}  // namespace detail

// Rows mirror the study grids: 6 token cells, 4 loss cells (including the
// all-terms row), 5 corruption cells.
inline std::vector<AblationRow> ablation_suite(const RunConfig& base, const std::string& which = "all") {
    const bool do_tokens = which == "all" || which == "tokens";
    const bool do_loss = which == "all" || which == "loss";
    const bool do_corruption = which == "all" || which == "corruption";
    if (!do_tokens && !do_loss && !do_corruption)
        throw ConfigError("unknown ablation grid \"" + which + "\" (tokens, loss, corruption, all)");

    const auto train_data = make_split(base.seed, base.ablate_train_n, base.mix, Split::Train);
    const auto eval_data = make_split(base.seed, base.ablate_eval_n, base.mix, Split::Eval);

    std::vector<AblationRow> rows;

    if (do_tokens) {
        for (int k : {4, 8, 16}) {
            for (LatentMode lm : {LatentMode::Identical, LatentMode::Diverse}) {
                ModelConfig mcfg = base.model;
                mcfg.latents = k;
                mcfg.latent_mode = lm;
                const std::string cell = "K" + std::to_string(k) + "_" + latent_mode_name(lm);
                rows.push_back(detail::run_cell("tokens", cell, base, mcfg, base.loss, base.corruption_mode,
                                                base.corruption_levels, base.eval_level, train_data, eval_data));
            }
        }
    }

    if (do_loss) {
        struct LossCell {
            const char* name;
            double w_kl, w_attn;
        };
        for (const LossCell& cell : {LossCell{"cor_ce", 0, 0}, LossCell{"cor_ce_kl", 1, 0},
                                     LossCell{"cor_ce_attn", 0, 1}, LossCell{"all", 1, 1}}) {
            LossConfig lcfg = base.loss;
            lcfg.w_kl = cell.w_kl;
            lcfg.w_attn = cell.w_attn;
            rows.push_back(detail::run_cell("loss", cell.name, base, base.model, lcfg, base.corruption_mode,
                                            base.corruption_levels, base.eval_level, train_data, eval_data));
        }
    }

    if (do_corruption) {
        for (CorruptionMode mode : {CorruptionMode::Blur, CorruptionMode::Mask, CorruptionMode::Jigsaw,
                                    CorruptionMode::Noise, CorruptionMode::Color}) {
            const auto& levels = default_levels(mode);
            rows.push_back(detail::run_cell("corruption", mode_name(mode), base, base.model, base.loss, mode,
                                            levels, levels.back(), train_data, eval_data));
        }
    }

    return rows;
}

// Directional observations the study tables suggest; reported, not enforced.
inline std::string ablation_summary(const std::vector<AblationRow>& rows) {
    auto find = [&](const std::string& grid, const std::string& cell) -> const AblationRow* {
        for (const auto& r : rows)
            if (r.grid == grid && r.cell == cell) return &r;
        return nullptr;
    };
    std::string out;
    const auto* div8 = find("tokens", "K8_diverse");
    const auto* ident8 = find("tokens", "K8_identical");
    if (div8 && ident8) {
        out += "tokens: K8 diverse vs identical (corrupted+latents): " +
               std::to_string(div8->report.corrupted_with_latents) + " vs " +
               std::to_string(ident8->report.corrupted_with_latents) +
               (div8->report.corrupted_with_latents >= ident8->report.corrupted_with_latents ? " (diverse >= identical)"
                                                                                             : " (identical ahead)") +
               "\n";
    }
    const auto* blur = find("corruption", "blur");
    if (blur) {
        bool best_or_tied = true;
        for (const auto& r : rows)
            if (r.grid == "corruption" && r.report.corrupted_with_latents > blur->report.corrupted_with_latents)
                best_or_tied = false;
        out += std::string("corruption: blur ") + (best_or_tied ? "best-or-tied" : "not best") +
               " on corrupted+latents\n";
    }
    return out;
}

}  // namespace crystal
