#include <gtest/gtest.h>

#include <algorithm>
#include <unistd.h>

#include "actjepa/evalkit/report.hpp"
#include "support.hpp"

using namespace actjepa;
using actjepa::testing::tiny_config;
using actjepa::testing::tiny_dataset;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor<double>({r, c}, v);
}

std::vector<sim::TaskSpec> all_tasks() {
    std::vector<sim::TaskSpec> t;
    for (int i = 0; i < sim::kTaskCount; ++i) t.push_back(sim::task_from_id(i));
    return t;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag)
        : path(std::filesystem::temp_directory_path() / ("evalkit_" + tag + "_" + std::to_string(::getpid()))) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::size_t count_of(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

ProbeConfig quick_probe() {
    ProbeConfig pc;
    pc.epochs = 2;
    pc.batch_size = 8;
    return pc;
}

}  // namespace

TEST(Rmse, HandValues) {
    const auto truth = mat(2, 2, {0, 0, 0, 0});
    EXPECT_EQ(rmse(truth, truth), 0.0);
    EXPECT_DOUBLE_EQ(rmse(mat(2, 2, {0, 0, 1, 0}), truth), 0.5);
    EXPECT_DOUBLE_EQ(rmse(mat(2, 2, {1, 1, 1, 1}), truth), 1.0);
    EXPECT_DOUBLE_EQ(rmse(mat(2, 2, {0, 0, 3, 0}), truth), 3 * rmse(mat(2, 2, {0, 0, 1, 0}), truth));
    EXPECT_THROW(rmse(mat(1, 4, {0, 0, 0, 0}), truth), DimensionError);
}

TEST(Ate, HandValuesAndTranslationInvariance) {
    const auto pred = mat(2, 2, {0, 0, 1, 0}), truth = mat(2, 2, {0, 0, 0, 0});
    EXPECT_EQ(ate(truth, truth), 0.0);
    EXPECT_DOUBLE_EQ(ate(pred, truth), 0.5);
    const auto shift = [](Tensor<double> t) {
        for (std::size_t i = 0; i < t.rows(); ++i) {
            t.at(i, 0) += 0.37;
            t.at(i, 1) -= 1.25;
        }
        return t;
    };
    EXPECT_NEAR(ate(shift(pred), shift(truth)), 0.5, 1e-15);
    EXPECT_DOUBLE_EQ(ate(mat(2, 2, {0, 0, 2, 0}), truth), 2 * ate(pred, truth));
    EXPECT_THROW(ate(mat(1, 4, {0, 0, 0, 0}), truth), DimensionError);
}

TEST(MeanStd, SampleStd) {
    const auto s = mean_std({1, 2, 3});
    EXPECT_DOUBLE_EQ(s.mean, 2.0);
    EXPECT_DOUBLE_EQ(s.std, 1.0);
    EXPECT_EQ(mean_std({5}).std, 0.0);
    EXPECT_EQ(fmt_mean_std({91.6, 1.7}, 1), "91.6 ± 1.7");
}

TEST(Evaluate, ExpertScoresAllAndNullScoresNone) {
    const auto seeds = eval_seed_list(10);
    const auto t = evaluate_success({{"expert", 0, expert_factory()}, {"null", 0, null_factory()}}, all_tasks(), seeds);
    ASSERT_EQ(t.cells.size(), 60u);
    EXPECT_EQ(t.summary_of("expert")->rate.mean, 100.0);
    EXPECT_EQ(t.summary_of("null")->rate.mean, 0.0);
    for (const auto& c : t.cells) {
        EXPECT_GE(c.eval_seed, kEvalSeedBase);
        EXPECT_EQ(c.steps, 64u);
    }
}

TEST(Evaluate, CountIsSeedsTimesTasksTimesEvalSeeds) {
    std::vector<EvalPolicy> ps;
    for (std::uint64_t s = 0; s < 3; ++s) ps.push_back({"expert", s, expert_factory()});
    const auto t = evaluate_success(ps, all_tasks(), eval_seed_list(10));
    EXPECT_EQ(t.cells.size(), 90u);
    const auto s = t.summary_of("expert");
    EXPECT_EQ(s->evaluations, 90u);
    EXPECT_EQ(s->per_seed.size(), 3u);
    EXPECT_EQ(count_lines(eval_csv(t)), 91u);
}

TEST(Evaluate, ThreadedMatchesSerial) {
    const auto d = tiny_dataset(2);
    auto m = init_model<float>(tiny_config(), 5, ModelKind::act);
    const auto f = any_task(chunk_agent_factory(m, d.manifest.norm));
    const std::vector<EvalPolicy> ps{{"act", 5, f}, {"expert", 0, expert_factory()}};
    const auto spec = render_spec(d);
    const auto serial = evaluate_success(ps, all_tasks(), eval_seed_list(4), spec, 1);
    const auto threaded = evaluate_success(ps, all_tasks(), eval_seed_list(4), spec, 3);
    EXPECT_EQ(eval_csv(serial), eval_csv(threaded));
}

TEST(Evaluate, AggregationIgnoresCellOrder) {
    EvalTable t;
    for (std::uint64_t s = 0; s < 3; ++s)
        for (std::uint64_t e = 0; e < 10; ++e) t.cells.push_back({"m", "reach", 0, s, e, (e + s) % 3 == 0});
    auto shuffled = t;
    std::reverse(shuffled.cells.begin(), shuffled.cells.end());
    std::rotate(shuffled.cells.begin(), shuffled.cells.begin() + 7, shuffled.cells.end());
    EXPECT_EQ(eval_summary_csv(t), eval_summary_csv(shuffled));
}

TEST(Rollout, ChunkedReplayOfExpertIsBitwiseAndQueriesEveryN) {
    for (const auto& task : all_tasks()) {
        const auto rec = sim::collect_episode(task, 21, sim::expert_policy(task));
        ReplayAgent agent(rec.actions, 8);
        const auto r = rollout(task, 21, agent);
        EXPECT_EQ(r.trajectory, rec);
        EXPECT_EQ(r.queries, 8u);
        EXPECT_TRUE(r.success);
    }
}

TEST(Policy, LoadedCheckpointActsLikeTheModel) {
    const auto d = tiny_dataset(2);
    TrainConfig tc;
    tc.kind = ModelKind::act;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.steps_per_epoch = 2;
    tc.select_every = 0;
    tc.seed = 9;
    const auto res = train_policy(d, tiny_config(), tc);
    const auto p = load_policy(res.last);
    EXPECT_EQ(p.train_seed, 9u);
    EXPECT_EQ(p.norm, d.manifest.norm);
    const auto m = model_from_checkpoint(res.last);
    const auto task = sim::task_from_id(1);
    auto a = p.factory()(task);
    auto b = chunk_agent_factory(m, d.manifest.norm)();
    EXPECT_EQ(rollout(task, 10003, *a, std::nullopt, render_spec(d)).trajectory,
              rollout(task, 10003, *b, std::nullopt, render_spec(d)).trajectory);
}

TEST(Probe, EncoderUntouchedAndDeterministic) {
    const auto d = tiny_dataset(5);
    const auto m = init_model<float>(tiny_config(), 1, ModelKind::actjepa);
    const auto before = hash_params(m.store.all());
    const auto r = probe_representation(m, d.manifest.norm, d, 0, quick_probe());
    EXPECT_EQ(r.hash_before, r.hash_after);
    EXPECT_EQ(hash_params(m.store.all()), before);
    EXPECT_GT(r.rmse, 0.0);
    EXPECT_GT(r.ate, 0.0);
    EXPECT_GT(r.train_chunks, 0u);
    EXPECT_GT(r.holdout_chunks, 0u);
    const auto again = probe_representation(m, d.manifest.norm, d, 0, quick_probe());
    EXPECT_EQ(again.rmse, r.rmse);
    EXPECT_EQ(again.ate, r.ate);
    EXPECT_NE(probe_representation(m, d.manifest.norm, d, 1, quick_probe()).rmse, r.rmse);
}

TEST(Probe, HoldoutIsLastFifthBySeed) {
    const auto d = tiny_dataset(5);
    const auto split = split_by_seed(d.episodes);
    ASSERT_EQ(split.holdout.size(), 3u);
    for (const auto& ep : split.holdout) EXPECT_EQ(ep.seed, 4u);
    const auto m = init_model<float>(tiny_config(), 1, ModelKind::act);
    const auto r = probe_representation(m, d.manifest.norm, d, 0, quick_probe());
    EXPECT_EQ(r.holdout_chunks, all_chunk_refs(split.holdout, 2).size());
    EXPECT_EQ(r.train_chunks, all_chunk_refs(split.train, 2).size());
}

TEST(Probe, SeedsReportAggregate) {
    const auto d = tiny_dataset(5);
    const auto m = init_model<float>(tiny_config(), 1, ModelKind::act);
    const auto rep = probe_seeds("act", m, d.manifest.norm, d, 3, 0, quick_probe());
    ASSERT_EQ(rep.seeds.size(), 3u);
    const auto csv = probe_csv(rep);
    EXPECT_EQ(count_lines(csv), 1u + 3u + 1u);
    EXPECT_NE(csv.find("mean ± std"), std::string::npos);
    const auto rows = [&] {
        TempDir tmp("probe");
        write_file(tmp.path / "p.csv", csv);
        return read_csv(tmp.path / "p.csv");
    }();
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[3].at("encoder_hash_after"), "");
    EXPECT_EQ(rows[0].at("encoder_hash_before"), rows[0].at("encoder_hash_after"));
}

TEST(Report, RegenerationIsByteIdentical) {
    TempDir a("rep_a"), b("rep_b");
    ReportTables t;
    t.eval = evaluate_success({{"expert", 0, expert_factory()}}, all_tasks(), eval_seed_list(2));
    AlternationCurve c;
    for (std::size_t k = 1; k <= 10; ++k) c.points.push_back({k, 1.0 / static_cast<double>(k), 0.5, "h" + std::to_string(k)});
    t.alternation = c;
    t.comparison = {{"actjepa", MeanStd{90, 2}, MeanStd{0.04, 0.001}, MeanStd{0.07, 0.002}}, {"rbc", MeanStd{10, 1}, {}, {}}};
    const auto fa = write_report(t, a.path);
    const auto fb = write_report(t, b.path);
    ASSERT_EQ(fa.size(), fb.size());
    for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_EQ(read_file(fa[i]), read_file(fb[i])) << fa[i];
    const auto svg = read_file(a.path / "alternation.svg");
    EXPECT_EQ(count_of(svg, "class=\"point\""), 10u);
    EXPECT_EQ(count_lines(read_file(a.path / "alternation.csv")), 11u);
    const auto cmp = read_csv(a.path / "comparison.csv");
    ASSERT_EQ(cmp.size(), 2u);
    EXPECT_EQ(cmp[1].at("probe_rmse_x100"), "");
    EXPECT_EQ(cmp[0].at("success"), "90.0 ± 2.0 %");
    EXPECT_EQ(cmp[0].at("probe_rmse_x100"), "4.000 ± 0.100");
}
