#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "actjepa/evalkit/evaluate.hpp"
#include "actjepa/evalkit/probe.hpp"
#include "actjepa/trainer/alternate.hpp"

namespace actjepa {

inline std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// "91.6 ± 1.7"
inline std::string fmt_mean_std(const MeanStd& s, int digits) {
    return fmt_fixed(s.mean, digits) + " ± " + fmt_fixed(s.std, digits);
}

inline const std::string kEvalHeader = "model,task,train_seed,eval_seed,success,steps,queries";
inline const std::string kEvalSummaryHeader = "model,train_seeds,evaluations,successes,mean_pct,std_pct,success";
inline const std::string kProbeHeader =
    "model,probe_seed,rmse,ate,rmse_x100,ate_x100,train_chunks,holdout_chunks,encoder_hash_before,encoder_hash_after";
inline const std::string kAlternationHeader = "pretrain_epoch,finetune_action_loss,pretrain_observation_loss,encoder_hash";
inline const std::string kComparisonHeader = "model,success_mean_pct,success_std_pct,success,probe_rmse_x100,probe_ate_x100";

inline std::string eval_csv(const EvalTable& t) {
    std::ostringstream os;
    os << kEvalHeader << "\n";
    for (const auto& c : t.cells) {
        os << c.model << "," << c.task << "," << c.train_seed << "," << c.eval_seed << "," << (c.success ? 1 : 0) << ","
           << c.steps << "," << c.queries << "\n";
    }
    return os.str();
}

inline std::string eval_summary_csv(const EvalTable& t) {
    std::ostringstream os;
    os << kEvalSummaryHeader << "\n";
    for (const auto& s : t.summary()) {
        os << s.model << "," << s.per_seed.size() << "," << s.evaluations << "," << s.successes << "," << fmt_num(s.rate.mean)
           << "," << fmt_num(s.rate.std) << "," << fmt_mean_std(s.rate, 1) << " %\n";
    }
    return os.str();
}

/// One row per probe seed plus an aggregate row with mean ± std (×100).
inline std::string probe_csv(const ProbeReport& r) {
    std::ostringstream os;
    os << kProbeHeader << "\n";
    for (const auto& s : r.seeds) {
        os << r.model << "," << s.probe_seed << "," << fmt_num(s.rmse) << "," << fmt_num(s.ate) << "," << fmt_fixed(100 * s.rmse, 3)
           << "," << fmt_fixed(100 * s.ate, 3) << "," << s.train_chunks << "," << s.holdout_chunks << "," << s.hash_before << ","
           << s.hash_after << "\n";
    }
    const auto rm = r.rmse(), am = r.ate();
    os << r.model << ",mean ± std," << fmt_num(rm.mean) << "," << fmt_num(am.mean) << ","
       << fmt_mean_std({100 * rm.mean, 100 * rm.std}, 3) << "," << fmt_mean_std({100 * am.mean, 100 * am.std}, 3) << ",,,,\n";
    return os.str();
}

inline std::string alternation_csv(const AlternationCurve& c) {
    std::ostringstream os;
    os << kAlternationHeader << "\n";
    for (const auto& p : c.points) {
        os << p.epoch << "," << fmt_num(p.finetune_action_loss) << "," << fmt_num(p.pretrain_obs_loss) << "," << p.encoder_hash << "\n";
    }
    return os.str();
}

namespace detail {

struct PlotFrame {
    double x0 = 60, y0 = 20, w = 420, h = 240;
};

inline std::string svg_open(const std::string& title, const std::string& xlabel, const std::string& ylabel) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"520\" height=\"320\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"520\" height=\"320\" fill=\"white\"/>\n"
       << "<text x=\"270\" y=\"14\" text-anchor=\"middle\">" << title << "</text>\n"
       << "<line x1=\"60\" y1=\"260\" x2=\"480\" y2=\"260\" stroke=\"black\"/>\n"
       << "<line x1=\"60\" y1=\"20\" x2=\"60\" y2=\"260\" stroke=\"black\"/>\n"
       << "<text x=\"270\" y=\"295\" text-anchor=\"middle\">" << xlabel << "</text>\n"
       << "<text x=\"14\" y=\"140\" text-anchor=\"middle\" transform=\"rotate(-90 14 140)\">" << ylabel << "</text>\n";
    return os.str();
}

}  // namespace detail

/// Fine-tune action loss against pretraining epoch, one marker per epoch.
inline std::string alternation_svg(const AlternationCurve& c) {
    const detail::PlotFrame f;
    std::ostringstream os;
    os << detail::svg_open("Fine-tune action loss during pretraining", "pretraining epoch", "final fine-tune L_actions");
    if (c.points.empty()) {
        os << "</svg>\n";
        return os.str();
    }
    double lo = c.points[0].finetune_action_loss, hi = lo;
    for (const auto& p : c.points) {
        lo = std::min(lo, p.finetune_action_loss);
        hi = std::max(hi, p.finetune_action_loss);
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double n = static_cast<double>(c.points.size());
    auto px = [&](std::size_t i) { return f.x0 + (n <= 1 ? f.w / 2 : f.w * static_cast<double>(i) / (n - 1)); };
    auto py = [&](double v) { return f.y0 + f.h * (hi - v) / (hi - lo); };
    os << "<text x=\"56\" y=\"24\" text-anchor=\"end\">" << fmt_fixed(hi, 4) << "</text>\n"
       << "<text x=\"56\" y=\"260\" text-anchor=\"end\">" << fmt_fixed(lo, 4) << "</text>\n"
       << "<text x=\"60\" y=\"274\" text-anchor=\"middle\">" << c.points.front().epoch << "</text>\n"
       << "<text x=\"480\" y=\"274\" text-anchor=\"middle\">" << c.points.back().epoch << "</text>\n"
       << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        os << (i ? " " : "") << fmt_fixed(px(i), 2) << "," << fmt_fixed(py(c.points[i].finetune_action_loss), 2);
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        os << "<circle class=\"point\" cx=\"" << fmt_fixed(px(i), 2) << "\" cy=\"" << fmt_fixed(py(c.points[i].finetune_action_loss), 2)
           << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Cross-model comparison; probe cells are empty when no probe ran.
struct ComparisonRow {
    std::string model;
    std::optional<MeanStd> success;  // percent
    std::optional<MeanStd> rmse;     // denormalized units
    std::optional<MeanStd> ate;
};

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    os << kComparisonHeader << "\n";
    for (const auto& r : rows) {
        os << r.model << ",";
        if (r.success) os << fmt_num(r.success->mean) << "," << fmt_num(r.success->std) << "," << fmt_mean_std(*r.success, 1) << " %";
        else os << ",,";
        os << ",";
        if (r.rmse) os << fmt_mean_std({100 * r.rmse->mean, 100 * r.rmse->std}, 3);
        os << ",";
        if (r.ate) os << fmt_mean_std({100 * r.ate->mean, 100 * r.ate->std}, 3);
        os << "\n";
    }
    return os.str();
}

/// Bar chart of mean success with std whiskers.
inline std::string success_svg(const std::vector<ComparisonRow>& rows) {
    const detail::PlotFrame f;
    std::ostringstream os;
    os << detail::svg_open("Success rate (mean ± std over training seeds)", "model", "success %");
    os << "<text x=\"56\" y=\"24\" text-anchor=\"end\">100</text>\n<text x=\"56\" y=\"260\" text-anchor=\"end\">0</text>\n";
    const double slot = rows.empty() ? f.w : f.w / static_cast<double>(rows.size());
    auto py = [&](double pct) { return f.y0 + f.h * (100.0 - std::clamp(pct, 0.0, 100.0)) / 100.0; };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double cx = f.x0 + slot * (static_cast<double>(i) + 0.5);
        os << "<text x=\"" << fmt_fixed(cx, 2) << "\" y=\"274\" text-anchor=\"middle\">" << rows[i].model << "</text>\n";
        if (!rows[i].success) continue;
        const auto& s = *rows[i].success;
        const double top = py(s.mean);
        os << "<rect class=\"bar\" x=\"" << fmt_fixed(cx - slot * 0.3, 2) << "\" y=\"" << fmt_fixed(top, 2) << "\" width=\""
           << fmt_fixed(slot * 0.6, 2) << "\" height=\"" << fmt_fixed(f.y0 + f.h - top, 2) << "\" fill=\"#1f77b4\"/>\n"
           << "<line x1=\"" << fmt_fixed(cx, 2) << "\" y1=\"" << fmt_fixed(py(s.mean - s.std), 2) << "\" x2=\"" << fmt_fixed(cx, 2)
           << "\" y2=\"" << fmt_fixed(py(s.mean + s.std), 2) << "\" stroke=\"black\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Whatever tables are present; each one becomes a file in out_dir.
struct ReportTables {
    std::optional<EvalTable> eval;
    std::vector<ProbeReport> probes;
    std::optional<AlternationCurve> alternation;
    std::vector<ComparisonRow> comparison;
};

inline std::vector<std::filesystem::path> write_report(const ReportTables& t, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::string& name, const std::string& body) {
        write_file(out_dir / name, body);
        written.push_back(out_dir / name);
    };
    if (t.eval) {
        put("eval.csv", eval_csv(*t.eval));
        put("eval_summary.csv", eval_summary_csv(*t.eval));
    }
    for (const auto& p : t.probes) put(t.probes.size() == 1 ? "probe.csv" : "probe_" + p.model + ".csv", probe_csv(p));
    if (t.alternation) {
        put("alternation.csv", alternation_csv(*t.alternation));
        put("alternation.svg", alternation_svg(*t.alternation));
    }
    if (!t.comparison.empty()) {
        put("comparison.csv", comparison_csv(t.comparison));
        put("success.svg", success_svg(t.comparison));
    }
    return written;
}

/// Header-keyed rows of a comma-separated file without quoting.
inline std::vector<std::map<std::string, std::string>> read_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) out.push_back(cell);
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    };
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(p.string() + " is empty");
    const auto header = split(line);
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size()) throw std::runtime_error(p.string() + ": row has " + std::to_string(cells.size()) + " cells, header " + std::to_string(header.size()));
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace actjepa
