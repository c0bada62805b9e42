#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "crystal/errors.hpp"
#include "crystal/trainer.hpp"

namespace crystal {

namespace detail {

// Shortest-exact float text; %.17g reproduces the double bit for bit.
inline std::string f64_text(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,ce_int,ce_cor,kl,attn,total,lr,seed\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + ',' + detail::f64_text(r.loss.ce_int) + ',' +
               detail::f64_text(r.loss.ce_cor) + ',' + detail::f64_text(r.loss.kl) + ',' +
               detail::f64_text(r.loss.attn) + ',' + detail::f64_text(r.loss.total) + ',' +
               detail::f64_text(r.lr) + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

struct AblationRow {
    std::string grid;
    std::string cell;
    EvalReport report;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "grid,cell,acc_intact,acc_cor_lat,acc_cor_nolat,acc_blind\n";
    for (const auto& r : rows) {
        out += r.grid + ',' + r.cell + ',' + detail::f64_text(r.report.intact) + ',' +
               detail::f64_text(r.report.corrupted_with_latents) + ',' +
               detail::f64_text(r.report.corrupted_no_latents) + ',' + detail::f64_text(r.report.blind) + '\n';
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed writing " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace crystal
