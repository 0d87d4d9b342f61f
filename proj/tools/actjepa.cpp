// actjepa: collect → train → probe → eval → alternate → report.
//
// Exit codes: 0 success, 2 usage/config, 3 numeric divergence, 4 IO/integrity.

#include <glob.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "actjepa/cli/config.hpp"
#include "actjepa/evalkit/report.hpp"

namespace fs = std::filesystem;
using namespace actjepa;

namespace {

constexpr int kUsage = 2, kDiverged = 3, kIntegrity = 4;

struct ConfigFlags {
    std::string file;
    std::vector<std::string> overrides;

    void add_to(CLI::App* app, bool required = false) {
        auto* o = app->add_option("--config", file, "run config file ([model]/[train]/[probe] sections)");
        if (required) o->required();
        app->add_option("--set", overrides, "override a config key: section.key=value (repeatable)");
    }

    cli::RunConfig load() const {
        cli::RunConfig c;
        if (!file.empty()) {
            std::string text;
            try {
                text = read_file(file);
            } catch (const std::runtime_error& e) {
                throw ConfigError(e.what());
            }
            c = cli::parse_config(text);
        }
        for (const auto& o : overrides) cli::apply_override(c, o);
        return c;
    }
};

std::vector<sim::TaskSpec> parse_tasks(const std::string& name) {
    if (name == "all") {
        std::vector<sim::TaskSpec> t;
        for (int i = 0; i < sim::kTaskCount; ++i) t.push_back(sim::task_from_id(i));
        return t;
    }
    const auto t = sim::task_from_name(name);
    if (!t) throw ConfigError("unknown task '" + name + "' (expected reach, push, pickplace or all)");
    return {*t};
}

void echo_config(const cli::RunConfig& c, const fs::path& dir) {
    fs::create_directories(dir);
    write_file(dir / "config.resolved", cli::resolved_text(c));
}

std::vector<fs::path> expand_glob(const std::vector<std::string>& patterns) {
    std::set<fs::path> found;
    for (const auto& p : patterns) {
        glob_t g{};
        if (::glob(p.c_str(), 0, nullptr, &g) == 0) {
            for (std::size_t i = 0; i < g.gl_pathc; ++i) found.insert(g.gl_pathv[i]);
        }
        globfree(&g);
    }
    return {found.begin(), found.end()};
}

int cmd_collect(const std::string& task, std::size_t episodes, std::uint64_t seed, std::size_t image, std::size_t chunk,
                const fs::path& out) {
    const auto tasks = parse_tasks(task);
    const sim::RenderSpec spec{static_cast<int>(image), static_cast<int>(image)};
    const auto d = collect_dataset(tasks, episodes, seed, chunk, spec);
    save_dataset(d, out);
    std::cout << "collected " << d.episodes.size() << " expert episodes (all successful) into " << out.string() << "\n";
    return 0;
}

int cmd_train(const cli::RunConfig& base, const std::string& model, const fs::path& data, std::uint64_t train_seed,
              const fs::path& out, bool resume) {
    auto c = base;
    const auto kind = kind_from_name(model);
    if (!kind) throw ConfigError("unknown model '" + model + "' (expected actjepa, act or rbc)");
    c.train.kind = *kind;
    c.train.seed = train_seed;
    c.model.validate();
    const auto d = load_dataset(data);
    echo_config(c, out);
    const RunPaths paths{out};
    fs::create_directories(paths.reports());
    const auto r = train_policy(d, c.model, c.train, paths, resume);
    std::cout << kind_name(c.train.kind) << " seed " << train_seed << ": " << r.state.epoch << " epochs, " << r.state.step
              << " steps, best selection success " << r.state.best_success << " at epoch " << r.state.best_epoch << "\n";
    return 0;
}

int cmd_alternate(const cli::RunConfig& base, const fs::path& data, std::size_t epochs, const fs::path& out) {
    auto c = base;
    c.train.kind = ModelKind::actjepa;
    const auto d = load_dataset(data);
    echo_config(c, out);
    const auto curve = alternate(d, c.model, c.train, epochs, nullptr, [](const AlternationPoint& p) {
        std::cout << "epoch " << p.epoch << ": pretrain L_obs " << p.pretrain_obs_loss << ", fine-tune L_actions "
                  << p.finetune_action_loss << "\n";
    });
    ReportTables t;
    t.alternation = curve;
    write_report(t, out / "reports");
    std::cout << "spearman(epoch, fine-tune loss) = " << spearman([&] {
        std::vector<double> e;
        for (const auto& p : curve.points) e.push_back(static_cast<double>(p.epoch));
        return e;
    }(), [&] {
        std::vector<double> l;
        for (const auto& p : curve.points) l.push_back(p.finetune_action_loss);
        return l;
    }()) << "\n";
    return 0;
}

int cmd_probe(const cli::RunConfig& c, const fs::path& checkpoint, const fs::path& data, std::size_t seeds,
              std::uint64_t seed_base, bool untrained, const fs::path& out) {
    const auto ck = load_checkpoint(checkpoint);
    const auto norm = checkpoint_norm(ck);
    auto m = untrained ? init_model<float>(ck.config, ck.train_state.at("train").value("seed", std::uint64_t{0}), ck.kind)
                       : model_from_checkpoint(ck);
    const auto d = load_dataset(data);
    const std::string label = std::string(kind_name(ck.kind)) + (untrained ? "_untrained" : "");
    const auto rep = probe_seeds(label, m, norm, d, seeds, seed_base, c.probe);
    for (const auto& s : rep.seeds) {
        std::cout << label << " probe seed " << s.probe_seed << ": rmse " << s.rmse << " ate " << s.ate << " encoder hash "
                  << s.hash_before << " -> " << s.hash_after << "\n";
    }
    fs::create_directories(out);
    write_file(out / "probe.csv", probe_csv(rep));
    std::cout << label << " RMSE (x100) " << fmt_mean_std({100 * rep.rmse().mean, 100 * rep.rmse().std}, 3) << ", ATE (x100) "
              << fmt_mean_std({100 * rep.ate().mean, 100 * rep.ate().std}, 3) << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& patterns, std::size_t eval_seeds, std::uint64_t seed_base, const fs::path& out) {
    const auto paths = expand_glob(patterns);
    if (paths.empty()) throw std::runtime_error("no checkpoints matched");
    std::vector<LoadedPolicy> loaded;
    std::vector<EvalPolicy> policies;
    std::optional<ModelConfig> cfg;
    for (const auto& p : paths) {
        loaded.push_back(load_policy(load_checkpoint(p)));
        const auto& lp = loaded.back();
        if (cfg && (cfg->image_height != lp.config.image_height || cfg->task_count != lp.config.task_count)) {
            throw DimensionError("checkpoints disagree on image size or task count");
        }
        cfg = lp.config;
        policies.push_back({std::string(kind_name(lp.kind)), lp.train_seed, lp.factory()});
        std::cout << "loaded " << p.string() << " (" << kind_name(lp.kind) << ", train seed " << lp.train_seed << ")\n";
    }
    std::vector<sim::TaskSpec> tasks;
    for (int i = 0; i < sim::kTaskCount && static_cast<std::size_t>(i) < cfg->task_count; ++i) tasks.push_back(sim::task_from_id(i));
    const sim::RenderSpec spec{static_cast<int>(cfg->image_height), static_cast<int>(cfg->image_width)};
    ReportTables t;
    t.eval = evaluate_success(policies, tasks, eval_seed_list(eval_seeds, seed_base), spec);
    write_report(t, out);
    for (const auto& s : t.eval->summary()) {
        std::cout << s.model << ": " << fmt_mean_std(s.rate, 1) << " % over " << s.evaluations << " evaluations\n";
    }
    return 0;
}

/// Fixed presentation order: the three paper models first, then the rest.
int model_rank(const std::string& m) {
    if (m == "actjepa") return 0;
    if (m == "act") return 1;
    if (m == "rbc") return 2;
    return 3;
}

int cmd_report(const fs::path& runs, const fs::path& out) {
    if (!fs::is_directory(runs)) throw std::runtime_error("runs directory " + runs.string() + " does not exist");
    std::vector<fs::path> summaries, probes, curves;
    for (const auto& e : fs::recursive_directory_iterator(runs)) {
        if (!e.is_regular_file()) continue;
        if (fs::weakly_canonical(e.path()).string().rfind(fs::weakly_canonical(out).string(), 0) == 0) continue;
        const auto name = e.path().filename().string();
        if (name == "eval_summary.csv") summaries.push_back(e.path());
        else if (name == "probe.csv") probes.push_back(e.path());
        else if (name == "alternation.csv") curves.push_back(e.path());
    }
    std::sort(summaries.begin(), summaries.end());
    std::sort(probes.begin(), probes.end());
    std::sort(curves.begin(), curves.end());
    if (summaries.empty() && probes.empty() && curves.empty()) {
        throw std::runtime_error("no eval_summary.csv, probe.csv or alternation.csv under " + runs.string());
    }

    std::map<std::string, ComparisonRow> rows;
    for (const auto& p : summaries) {
        for (const auto& r : read_csv(p)) {
            auto& row = rows[r.at("model")];
            row.model = r.at("model");
            row.success = MeanStd{std::stod(r.at("mean_pct")), std::stod(r.at("std_pct"))};
        }
    }
    for (const auto& p : probes) {
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_model;
        for (const auto& r : read_csv(p)) {
            if (r.at("encoder_hash_before").empty()) continue;  // aggregate row
            per_model[r.at("model")].first.push_back(std::stod(r.at("rmse")));
            per_model[r.at("model")].second.push_back(std::stod(r.at("ate")));
        }
        for (const auto& [model, v] : per_model) {
            auto& row = rows[model];
            row.model = model;
            row.rmse = mean_std(v.first);
            row.ate = mean_std(v.second);
        }
    }
    ReportTables t;
    for (auto& [name, row] : rows) {
        if (!row.rmse) std::cerr << "warning: no probe data for model '" << name << "'; probe cells left empty\n";
        if (!row.success) std::cerr << "warning: no evaluation data for model '" << name << "'; success cells left empty\n";
        t.comparison.push_back(row);
    }
    std::stable_sort(t.comparison.begin(), t.comparison.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        return model_rank(a.model) < model_rank(b.model);
    });
    if (!curves.empty()) {
        if (curves.size() > 1) std::cerr << "warning: several alternation curves found; using " << curves.front().string() << "\n";
        AlternationCurve c;
        for (const auto& r : read_csv(curves.front())) {
            c.points.push_back({static_cast<std::size_t>(std::stoul(r.at("pretrain_epoch"))), std::stod(r.at("finetune_action_loss")),
                                std::stod(r.at("pretrain_observation_loss")), r.at("encoder_hash")});
        }
        t.alternation = c;
    }
    for (const auto& f : write_report(t, out)) std::cout << "wrote " << f.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ACT-JEPA desk-scale pipeline"};
    app.require_subcommand(1);

    std::string task = "all";
    std::size_t episodes = 40, image = 24, chunk = 8;
    std::uint64_t collect_seed = 0;
    std::string collect_out;
    auto* collect = app.add_subcommand("collect", "record scripted-expert demonstrations");
    collect->add_option("--task", task, "reach, push, pickplace or all")->capture_default_str();
    collect->add_option("--episodes", episodes, "episodes per task")->capture_default_str();
    collect->add_option("--seed", collect_seed, "first collection seed")->capture_default_str();
    collect->add_option("--image", image, "square render size in pixels")->capture_default_str();
    collect->add_option("--chunk", chunk, "steps recorded after success (the policy chunk size)")->capture_default_str();
    collect->add_option("--out", collect_out, "dataset directory")->required();

    ConfigFlags train_cfg;
    std::string model, train_data, train_out;
    std::uint64_t train_seed = 0;
    bool resume = false;
    auto* train = app.add_subcommand("train", "train one policy");
    train->add_option("--model", model, "actjepa, act or rbc")->required();
    train_cfg.add_to(train);
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--train-seed", train_seed, "training seed")->capture_default_str();
    train->add_option("--out", train_out, "run directory")->required();
    train->add_flag("--resume", resume, "continue from <out>/checkpoints/last.ckpt");

    ConfigFlags alt_cfg;
    std::string alt_data, alt_out;
    std::size_t alt_epochs = 10;
    auto* alt = app.add_subcommand("alternate", "pretrain with throwaway one-epoch action fine-tunes");
    alt_cfg.add_to(alt);
    alt->add_option("--data", alt_data, "dataset directory")->required();
    alt->add_option("--epochs", alt_epochs, "pretraining epochs")->capture_default_str();
    alt->add_option("--out", alt_out, "run directory")->required();

    ConfigFlags probe_cfg;
    std::string ckpt, probe_data, probe_out;
    std::size_t probe_count = 3;
    std::uint64_t probe_base = 0;
    bool untrained = false;
    auto* probe = app.add_subcommand("probe", "probe a frozen context encoder");
    probe_cfg.add_to(probe);
    probe->add_option("--checkpoint", ckpt, "actjepa or act checkpoint")->required();
    probe->add_option("--data", probe_data, "dataset directory")->required();
    probe->add_option("--probe-seeds", probe_count, "number of probe seeds")->capture_default_str();
    probe->add_option("--probe-seed-base", probe_base, "first probe seed")->capture_default_str();
    probe->add_flag("--untrained", untrained, "probe a freshly initialized encoder of the same shape instead");
    probe->add_option("--out", probe_out, "output directory")->required();

    std::vector<std::string> patterns;
    std::size_t eval_seeds = 10;
    std::uint64_t eval_base = kEvalSeedBase;
    std::string eval_out;
    auto* eval = app.add_subcommand("eval", "closed-loop success rates");
    eval->add_option("--checkpoints", patterns, "checkpoint glob(s)")->required();
    eval->add_option("--eval-seeds", eval_seeds, "evaluation seeds per task")->capture_default_str();
    eval->add_option("--eval-seed-base", eval_base, "first evaluation seed")->capture_default_str();
    eval->add_option("--out", eval_out, "output directory")->required();

    std::string runs, report_out;
    auto* report = app.add_subcommand("report", "merge run reports into comparison tables and plots");
    report->add_option("--runs", runs, "directory holding run outputs")->required();
    report->add_option("--out", report_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsage;
    }

    try {
        if (*collect) return cmd_collect(task, episodes, collect_seed, image, chunk, collect_out);
        if (*train) return cmd_train(train_cfg.load(), model, train_data, train_seed, train_out, resume);
        if (*alt) return cmd_alternate(alt_cfg.load(), alt_data, alt_epochs, alt_out);
        if (*probe) return cmd_probe(probe_cfg.load(), ckpt, probe_data, probe_count, probe_base, untrained, probe_out);
        if (*eval) return cmd_eval(patterns, eval_seeds, eval_base, eval_out);
        if (*report) return cmd_report(runs, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIntegrity;
    }
    return kUsage;
}
