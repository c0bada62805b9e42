// Command-line front end: dataset generation, one-shot corruption, training,
// evaluation, the ablation grids, and the gradient-check suite.
//
// Exit codes: 0 success, 1 check/runtime failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crystal/ablation.hpp"
#include "crystal/checkpoint.hpp"
#include "crystal/config.hpp"
#include "crystal/csv.hpp"
#include "crystal/gradcheck.hpp"
#include "crystal/ppm.hpp"
#include "crystal/trainer.hpp"

namespace fs = std::filesystem;
using namespace crystal;

namespace {

TaskMix parse_mix(const std::string& text) {
    TaskMix mix{0.0, 0.0, 0.0};
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        const auto eq = token.find('=');
        if (eq == std::string::npos) throw ConfigError("mix entry \"" + token + "\" must look like count=0.5");
        const std::string key = token.substr(0, eq);
        const double value = std::stod(token.substr(eq + 1));
        if (key == "count")
            mix.count = value;
        else if (key == "exist")
            mix.exist = value;
        else if (key == "relation")
            mix.relation = value;
        else
            throw ConfigError("unknown mix key \"" + key + "\"");
        token.clear();
    };
    for (char c : text) {
        if (c == ',')
            flush();
        else
            token += c;
    }
    flush();
    if (std::abs(mix.count + mix.exist + mix.relation - 1.0) > 1e-9)
        throw ConfigError("task mix must sum to 1");
    return mix;
}

int cmd_gen(int n, uint64_t seed, const std::string& out_dir, const std::string& mix_text,
            const std::string& split_name) {
    const TaskMix mix = parse_mix(mix_text);
    const Split split = split_name == "eval" ? Split::Eval : Split::Train;
    fs::create_directories(out_dir);

    Vocab vocab;
    const auto samples = make_split(seed, n, mix, split);
    std::string manifest;
    for (size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%05zu.ppm", i);
        write_ppm((fs::path(out_dir) / name).string(), samples[i].image);
        json line = {{"image", name},
                     {"question", vocab.decode(samples[i].question)},
                     {"answer", vocab.token(samples[i].answer[0])},
                     {"kind", task_name(samples[i].kind)},
                     {"seed", samples[i].seed}};
        manifest += line.dump() + "\n";
    }
    write_text_file((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
    std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
    return 0;
}

int cmd_corrupt(const std::string& in_path, const std::string& mode_text, double level, uint64_t seed,
                const std::string& out_path) {
    const CorruptionMode mode = parse_mode(mode_text);
    CorruptionSpec spec;
    spec.mode = mode;
    spec.seed = seed;
    spec.level_set = default_levels(mode);
    spec.level = level;
    if (mode != CorruptionMode::Identity) {
        bool in_ladder = false;
        for (double l : spec.level_set)
            if (l == level) in_ladder = true;
        if (!in_ladder) {
            std::string ladder;
            for (double l : spec.level_set) ladder += (ladder.empty() ? "" : ", ") + detail::f64_text(l);
            throw ConfigError("level " + detail::f64_text(level) + " not in the " + mode_text +
                              " ladder {" + ladder + "}");
        }
    }
    const Image input = read_ppm(in_path);
    write_ppm(out_path, corrupt(input, spec));
    return 0;
}

int cmd_train(const std::string& config_path) {
    const RunConfig cfg = load_run_config(config_path);
    fs::create_directories(cfg.out_dir);

    Vocab vocab;
    Model model(cfg.model, cfg.seed);
    std::vector<MetricsRow> log;
    if (cfg.train.steps > 0) {
        const auto data = make_split(cfg.seed, cfg.train_n, cfg.mix, Split::Train);
        log = train(model, vocab, data, cfg.corruption_mode, cfg.corruption_levels, cfg.train, cfg.loss,
                    cfg.seed);
    }
    const std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint.cryl").string();
    const std::string metrics = (fs::path(cfg.out_dir) / "metrics.csv").string();
    save_checkpoint(ckpt, model);
    write_text_file(metrics, metrics_csv(log));
    json summary = {{"checkpoint", ckpt}, {"metrics", metrics}, {"steps", cfg.train.steps}};
    std::printf("%s\n", summary.dump().c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path) {
    const RunConfig cfg = load_run_config(config_path);
    Model model = load_checkpoint(checkpoint_path);
    Vocab vocab;
    const auto data = make_split(cfg.seed, cfg.eval_n, cfg.mix, Split::Eval);
    const EvalReport r = evaluate_all(model, vocab, data, cfg.corruption_mode, cfg.eval_level, cfg.seed);
    json out = {{"intact", r.intact},
                {"corrupted_with_latents", r.corrupted_with_latents},
                {"corrupted_no_latents", r.corrupted_no_latents},
                {"blind", r.blind}};
    std::printf("%s\n", out.dump().c_str());
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& grid) {
    const RunConfig cfg = load_run_config(config_path);
    fs::create_directories(cfg.out_dir);
    const auto rows = ablation_suite(cfg, grid);
    const std::string report_path = (fs::path(cfg.out_dir) / "ablation.csv").string();
    write_text_file(report_path, ablation_csv(rows));
    std::printf("%s", ablation_summary(rows).c_str());
    std::printf("wrote %zu rows to %s\n", rows.size(), report_path.c_str());
    return 0;
}

int cmd_gradcheck(const std::string& inject_fault) {
    const GradCheckReport report = run_gradcheck(inject_fault);
    for (const auto& e : report.entries)
        std::printf("%-22s %10.3e %s\n", e.op.c_str(), e.worst_rel_err,
                    e.worst_rel_err < report.threshold ? "ok" : "FAIL");
    std::printf("runtime: %.1f s, threshold %.0e\n", report.runtime_seconds, report.threshold);
    if (!report.pass()) {
        for (const auto& e : report.entries)
            if (!(e.worst_rel_err < report.threshold))
                std::fprintf(stderr, "gradcheck failed on %s (worst rel err %.3e)\n", e.op.c_str(),
                             e.worst_rel_err);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-path latent-reasoning trainer on synthetic visual QA"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen", "generate a dataset (PPMs + JSON-lines manifest)");
    int gen_n = 100;
    uint64_t gen_seed = 0;
    std::string gen_out, gen_mix = "count=1.0", gen_split = "train";
    gen->add_option("--n", gen_n, "number of samples")->required();
    gen->add_option("--seed", gen_seed, "master seed")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--mix", gen_mix, "task mix, e.g. count=0.5,exist=0.25,relation=0.25");
    gen->add_option("--split", gen_split, "train or eval seed stream")->check(CLI::IsMember({"train", "eval"}));

    auto* corrupt_cmd = app.add_subcommand("corrupt", "apply one corruption primitive to a P6 PPM");
    std::string cor_in, cor_out, cor_mode = "identity";
    double cor_level = 0.0;
    uint64_t cor_seed = 0;
    corrupt_cmd->add_option("--in", cor_in, "input PPM")->required();
    corrupt_cmd->add_option("--mode", cor_mode, "identity|blur|mask|jigsaw|color|noise")->required();
    corrupt_cmd->add_option("--level", cor_level, "intensity (must sit on the mode's ladder)");
    corrupt_cmd->add_option("--seed", cor_seed, "corruption seed");
    corrupt_cmd->add_option("--out", cor_out, "output PPM")->required();

    auto* train_cmd = app.add_subcommand("train", "train from a run config");
    std::string train_cfg;
    train_cmd->add_option("--config", train_cfg, "run config JSON")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint under all four conditions");
    std::string eval_cfg, eval_ckpt;
    eval_cmd->add_option("--config", eval_cfg, "run config JSON")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "CRYL checkpoint")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grids");
    std::string ablate_cfg, ablate_grid = "all";
    ablate_cmd->add_option("--config", ablate_cfg, "run config JSON")->required();
    ablate_cmd->add_option("--grid", ablate_grid, "tokens|loss|corruption|all")
        ->check(CLI::IsMember({"tokens", "loss", "corruption", "all"}));

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");
    std::string inject_fault;
    gradcheck_cmd->add_option("--inject-fault", inject_fault, "perturb the named op's gradient (harness test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_n, gen_seed, gen_out, gen_mix, gen_split);
        if (corrupt_cmd->parsed()) return cmd_corrupt(cor_in, cor_mode, cor_level, cor_seed, cor_out);
        if (train_cmd->parsed()) return cmd_train(train_cfg);
        if (eval_cmd->parsed()) return cmd_eval(eval_cfg, eval_ckpt);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_cfg, ablate_grid);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(inject_fault);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
