// End-to-end tests of the command-line binary: exit codes, file outputs,
// determinism, and the bit-exact corrupt pipeline.

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "crystal/checkpoint.hpp"
#include "crystal/config.hpp"
#include "crystal/corruption.hpp"
#include "crystal/csv.hpp"
#include "crystal/ppm.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace crystal;

namespace {

struct CliResult {
    int exit_code;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(CRYSTAL_BIN) + " " + args + " 2>&1";
    std::array<char, 4096> buf;
    std::string out;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

fs::path test_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("crystal_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string micro_config_json(const fs::path& out_dir, int steps) {
    json j;
    j["model"] = {{"layers", 2}, {"heads", 2}, {"dim", 16}, {"latents", 2}, {"max_seq", 96}};
    j["data"] = {{"train_n", 16}, {"eval_n", 12}};
    j["train"] = {{"steps", steps}, {"batch", 2}, {"lr", 0.003}};
    j["seed"] = 77;
    j["out_dir"] = out_dir.string();
    return j.dump();
}

// dense-convolution oracle, independent of the separable implementation
Image blur_oracle(const Image& img, double sigma) {
    const int half = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k1(static_cast<size_t>(2 * half + 1));
    double total = 0.0;
    for (int t = -half; t <= half; ++t) {
        k1[static_cast<size_t>(t + half)] = std::exp(-0.5 * (t / sigma) * (t / sigma));
        total += k1[static_cast<size_t>(t + half)];
    }
    for (double& w : k1) w /= total;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int dy = -half; dy <= half; ++dy)
                    for (int dx = -half; dx <= half; ++dx)
                        acc += k1[static_cast<size_t>(dy + half)] * k1[static_cast<size_t>(dx + half)] *
                               img.at(reflect(y + dy, img.height), reflect(x + dx, img.width), c);
                out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
            }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen writes a deterministic manifest and images") {
    const fs::path d1 = test_dir() / "gen1";
    const fs::path d2 = test_dir() / "gen2";
    CHECK(run_cli("gen --n 6 --seed 7 --out " + d1.string()).exit_code == 0);
    CHECK(run_cli("gen --n 6 --seed 7 --out " + d2.string()).exit_code == 0);

    const std::string m1 = slurp(d1 / "manifest.jsonl");
    CHECK(m1 == slurp(d2 / "manifest.jsonl"));

    int lines = 0;
    for (char c : m1)
        if (c == '\n') ++lines;
    CHECK(lines == 6);
    CHECK(m1.find("\"kind\":\"count\"") != std::string::npos);
    CHECK(fs::exists(d1 / "sample_00005.ppm"));
    CHECK(slurp(d1 / "sample_00003.ppm") == slurp(d2 / "sample_00003.ppm"));

    // a mixed split carries the other kinds as well
    const fs::path d3 = test_dir() / "gen3";
    CHECK(run_cli("gen --n 30 --seed 3 --mix count=0.4,exist=0.3,relation=0.3 --out " + d3.string()).exit_code == 0);
    const std::string m3 = slurp(d3 / "manifest.jsonl");
    CHECK(m3.find("\"kind\":\"exist\"") != std::string::npos);
    CHECK(m3.find("\"kind\":\"relation\"") != std::string::npos);
}

TEST_CASE("corrupt identity copies the file bit for bit") {
    const fs::path dir = test_dir();
    const fs::path in = dir / "in.ppm";
    const fs::path out = dir / "out_id.ppm";
    Image img(32, 32);
    Rng rng(3);
    for (double& v : img.pixels) v = rng.uniform();
    write_ppm(in.string(), img);

    CHECK(run_cli("corrupt --in " + in.string() + " --mode identity --out " + out.string()).exit_code == 0);
    CHECK(slurp(in) == slurp(out));
}

TEST_CASE("corrupt blur matches the dense-convolution golden file") {
    const fs::path dir = test_dir();
    const fs::path in = dir / "blur_in.ppm";
    const fs::path out = dir / "blur_out.ppm";
    Image img(24, 24);
    Rng rng(11);
    for (double& v : img.pixels) v = rng.uniform();
    write_ppm(in.string(), img);

    CHECK(run_cli("corrupt --in " + in.string() + " --mode blur --level 10 --seed 42 --out " + out.string())
              .exit_code == 0);

    // the golden bytes come from the oracle applied to the decoded input
    const Image decoded = read_ppm(in.string());
    const auto golden = encode_ppm(blur_oracle(decoded, 10.0));
    const std::string golden_str(golden.begin(), golden.end());
    CHECK(golden_str == slurp(out));

    // repeat run is bit-exact
    const fs::path out2 = dir / "blur_out2.ppm";
    run_cli("corrupt --in " + in.string() + " --mode blur --level 10 --seed 42 --out " + out2.string());
    CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("corrupt rejects levels off the ladder with a usage error") {
    const fs::path dir = test_dir();
    const fs::path in = dir / "ladder_in.ppm";
    write_ppm(in.string(), Image(16, 16, 0.5));
    auto r = run_cli("corrupt --in " + in.string() + " --mode blur --level 3 --seed 1 --out " +
                     (dir / "x.ppm").string());
    CHECK(r.exit_code == 2);
    CHECK(r.out.find("2, 5, 10") != std::string::npos);
}

TEST_CASE("corrupt reports ppm parse errors with a byte offset") {
    const fs::path dir = test_dir();
    const fs::path bad = dir / "bad.ppm";
    write_text_file(bad.string(), "P5\n2 2\n255\nxxxx");
    auto r = run_cli("corrupt --in " + bad.string() + " --mode identity --out " + (dir / "y.ppm").string());
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("byte") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("definitely-not-a-command").exit_code == 2);
    CHECK(run_cli("corrupt --in missing.ppm").exit_code == 2);  // missing required flags
    CHECK(run_cli("train").exit_code == 2);
}

TEST_CASE("train with zero steps writes the initialization checkpoint") {
    const fs::path dir = test_dir() / "train0";
    const fs::path cfg_path = test_dir() / "cfg0.json";
    write_text_file(cfg_path.string(), micro_config_json(dir, 0));
    CHECK(run_cli("train --config " + cfg_path.string()).exit_code == 0);

    Model loaded = load_checkpoint((dir / "checkpoint.cryl").string());
    ModelConfig mc;
    mc.layers = 2;
    mc.heads = 2;
    mc.dim = 16;
    mc.latents = 2;
    mc.vocab = Vocab().size();
    Model fresh(mc, 77);
    for (size_t p = 0; p < fresh.parameters().size(); ++p)
        CHECK(loaded.parameters()[p].tensor.values() == fresh.parameters()[p].tensor.values());

    CHECK(slurp(dir / "metrics.csv") == "step,ce_int,ce_cor,kl,attn,total,lr,seed\n");
}

TEST_CASE("train is deterministic and eval prints sane json") {
    const fs::path dir_a = test_dir() / "train_a";
    const fs::path dir_b = test_dir() / "train_b";
    const fs::path cfg_a = test_dir() / "cfg_a.json";
    const fs::path cfg_b = test_dir() / "cfg_b.json";
    write_text_file(cfg_a.string(), micro_config_json(dir_a, 3));
    write_text_file(cfg_b.string(), micro_config_json(dir_b, 3));

    CHECK(run_cli("train --config " + cfg_a.string()).exit_code == 0);
    CHECK(run_cli("train --config " + cfg_b.string()).exit_code == 0);
    CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
    CHECK(slurp(dir_a / "checkpoint.cryl") == slurp(dir_b / "checkpoint.cryl"));

    auto r = run_cli("eval --config " + cfg_a.string() + " --checkpoint " + (dir_a / "checkpoint.cryl").string());
    CHECK(r.exit_code == 0);
    const json j = json::parse(r.out);
    for (const char* key : {"intact", "corrupted_with_latents", "corrupted_no_latents", "blind"}) {
        REQUIRE(j.contains(key));
        const double acc = j.at(key).get<double>();
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
}

TEST_CASE("config validation failures exit with code 2 before compute") {
    const fs::path cfg_path = test_dir() / "bad_cfg.json";
    write_text_file(cfg_path.string(), "{\"model\":{\"heads\":3,\"dim\":16},\"nonsense\":1}");
    CHECK(run_cli("train --config " + cfg_path.string()).exit_code == 2);
    write_text_file(cfg_path.string(), "{not json");
    CHECK(run_cli("train --config " + cfg_path.string()).exit_code == 2);
}

TEST_CASE("gradcheck fault injection is caught and named") {
    auto r = run_cli("gradcheck --inject-fault softmax");
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("softmax") != std::string::npos);
    CHECK(r.out.find("FAIL") != std::string::npos);
}

}  // TEST_SUITE
