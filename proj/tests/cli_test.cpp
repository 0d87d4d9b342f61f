#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "actjepa/cli/config.hpp"
#include "actjepa/evalkit/report.hpp"

using namespace actjepa;
namespace fs = std::filesystem;

namespace {

const std::string kBin = ACTJEPA_CLI;
const std::string kTiny = ACTJEPA_SOURCE_DIR "/configs/tiny.ini";

struct Outcome {
    int code;
    std::string out, err;
};

class CliTest : public ::testing::Test {
protected:
    static fs::path root;

    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / ("cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        ASSERT_EQ(run("collect --task all --episodes 5 --image 12 --chunk 2 --out " + (root / "data").string()).code, 0);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static Outcome run(const std::string& args) {
        const auto out = root / "stdout.txt", err = root / "stderr.txt";
        const int status = std::system((kBin + " " + args + " >" + out.string() + " 2>" + err.string()).c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
    }

    static std::string data() { return (root / "data").string(); }
    static std::string dir(const std::string& name) { return (root / name).string(); }

    static std::string train(const std::string& model, int seed, const std::string& out, const std::string& extra = "") {
        return "train --model " + model + " --config " + kTiny + " --data " + data() + " --train-seed " + std::to_string(seed) +
               " --out " + out + " " + extra;
    }
};

fs::path CliTest::root;

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST(Config, ResolvedTextRoundTrips) {
    cli::RunConfig c;
    c.model.d_model = 32;
    c.train.lr = 3.0e-4;
    c.train.kind = ModelKind::rbc;
    c.train.act_loss = ActionLoss::l2;
    c.probe.holdout_fraction = 0.25;
    const auto back = cli::parse_config(cli::resolved_text(c));
    EXPECT_EQ(back.model, c.model);
    EXPECT_EQ(cli::resolved_text(back), cli::resolved_text(c));
}

TEST(Config, UnknownKeysAndSectionsAreErrors) {
    EXPECT_THROW(cli::parse_config("[model]\nd_modle = 8\n"), ConfigError);
    EXPECT_THROW(cli::parse_config("[modle]\nd_model = 8\n"), ConfigError);
    EXPECT_THROW(cli::parse_config("d_model = 8\n"), ConfigError);
    EXPECT_THROW(cli::parse_config("[train]\nepochs = ten\n"), ConfigError);
    EXPECT_THROW(cli::parse_config("[train]\nkind = cnn\n"), ConfigError);
    cli::RunConfig c;
    EXPECT_THROW(cli::apply_override(c, "train.epoch=3"), ConfigError);
    EXPECT_THROW(cli::apply_override(c, "train.epochs"), ConfigError);
}

TEST(Config, CommentsAndOverrides) {
    auto c = cli::parse_config("# header\n[train]\nepochs = 7 ; trailing\n\n[model]\nd_model=16\n");
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_EQ(c.model.d_model, 16u);
    cli::apply_override(c, "train.epochs = 9");
    EXPECT_EQ(c.train.epochs, 9u);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run("collect --task nosuch --out " + dir("x")).code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run(train("cnn", 0, dir("x"))).code, 2);
    EXPECT_EQ(run(train("act", 0, dir("x"), "--set train.epoch=1")).code, 2);
}

TEST_F(CliTest, IntegrityErrorsExitFour) {
    EXPECT_EQ(run("train --model act --config " + kTiny + " --data " + dir("missing") + " --out " + dir("x")).code, 4);
    EXPECT_EQ(run("eval --checkpoints '" + dir("nothing") + "/*.ckpt' --out " + dir("x")).code, 4);
    EXPECT_EQ(run("report --runs " + dir("missing") + " --out " + dir("x")).code, 4);
}

TEST_F(CliTest, DivergenceExitsThree) {
    EXPECT_EQ(run(train("act", 0, dir("diverge"), "--set train.lr=1e38")).code, 3);
}

TEST_F(CliTest, CollectIsByteIdentical) {
    ASSERT_EQ(run("collect --task all --episodes 5 --image 12 --chunk 2 --out " + dir("data2")).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "data")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root / "data");
        EXPECT_EQ(read_file(e.path()), read_file(root / "data2" / rel)) << rel;
        ++files;
    }
    EXPECT_GT(files, 15u);
}

TEST_F(CliTest, TrainWritesRunDirectoryAndLogColumnsFollowKind) {
    for (int s = 0; s < 3; ++s) ASSERT_EQ(run(train("act", s, dir("act/seed" + std::to_string(s)))).code, 0);
    ASSERT_EQ(run(train("actjepa", 0, dir("jepa"))).code, 0);
    std::set<std::string> logs;
    for (int s = 0; s < 3; ++s) {
        const fs::path r = root / ("act/seed" + std::to_string(s));
        EXPECT_TRUE(fs::exists(r / "config.resolved"));
        EXPECT_TRUE(fs::exists(r / "checkpoints/best.ckpt"));
        EXPECT_TRUE(fs::is_directory(r / "reports"));
        logs.insert(read_file(r / "logs/loss.csv"));
    }
    EXPECT_EQ(logs.size(), 3u);
    EXPECT_EQ(first_line(read_file(root / "act/seed0/logs/loss.csv")).find("observations"), std::string::npos);
    EXPECT_NE(first_line(read_file(root / "jepa/logs/loss.csv")).find("observations"), std::string::npos);
    const auto resolved = cli::parse_config(read_file(root / "act/seed1/config.resolved"));
    EXPECT_EQ(resolved.train.seed, 1u);
    EXPECT_EQ(resolved.train.kind, ModelKind::act);
    EXPECT_EQ(resolved.model.d_model, 8u);
}

TEST_F(CliTest, ResumeMatchesUnbrokenRun) {
    ASSERT_EQ(run(train("actjepa", 4, dir("full"))).code, 0);
    ASSERT_EQ(run(train("actjepa", 4, dir("split"), "--set train.epochs=1")).code, 0);
    ASSERT_EQ(run(train("actjepa", 4, dir("split"), "--resume")).code, 0);
    EXPECT_EQ(read_file(root / "split/logs/loss.csv"), read_file(root / "full/logs/loss.csv"));
    EXPECT_EQ(read_file(root / "split/checkpoints/last.ckpt"), read_file(root / "full/checkpoints/last.ckpt"));
}

TEST_F(CliTest, EvalProbeAlternateReport) {
    for (int s = 0; s < 3; ++s) ASSERT_EQ(run(train("rbc", s, dir("runs/rbc/seed" + std::to_string(s)))).code, 0);
    for (int s = 0; s < 3; ++s) ASSERT_EQ(run(train("actjepa", s, dir("runs/actjepa/seed" + std::to_string(s)))).code, 0);
    ASSERT_EQ(run(train("act", 0, dir("runs/act/seed0"))).code, 0);

    const auto ev = run("eval --checkpoints '" + dir("runs/rbc") + "/seed*/checkpoints/best.ckpt' --eval-seeds 10 --out " + dir("runs/rbc/eval"));
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(lines(read_file(root / "runs/rbc/eval/eval.csv")), 91u);
    EXPECT_NE(read_file(root / "runs/rbc/eval/eval_summary.csv").find(" ± "), std::string::npos);
    ASSERT_EQ(run("eval --checkpoints '" + dir("runs/actjepa") + "/seed*/checkpoints/best.ckpt' --eval-seeds 2 --out " + dir("runs/actjepa/eval")).code, 0);
    ASSERT_EQ(run("eval --checkpoints " + dir("runs/act/seed0/checkpoints/best.ckpt") + " --eval-seeds 2 --out " + dir("runs/act/eval")).code, 0);

    for (const std::string m : {"act", "actjepa"}) {
        const auto pr = run("probe --config " + kTiny + " --checkpoint " + dir("runs/" + m + "/seed0/checkpoints/last.ckpt") +
                            " --data " + data() + " --probe-seeds 3 --out " + dir("runs/" + m + "/probe"));
        ASSERT_EQ(pr.code, 0) << pr.err;
        EXPECT_EQ(lines(read_file(root / ("runs/" + m + "/probe/probe.csv"))), 1u + 3u + 1u);
        for (const auto& row : read_csv(root / ("runs/" + m + "/probe/probe.csv"))) {
            EXPECT_EQ(row.at("encoder_hash_before"), row.at("encoder_hash_after"));
        }
    }
    EXPECT_EQ(run("probe --checkpoint " + dir("runs/rbc/seed0/checkpoints/last.ckpt") + " --data " + data() + " --out " + dir("x")).code, 4);

    const auto alt = "alternate --config " + kTiny + " --data " + data() + " --epochs 3 --out ";
    ASSERT_EQ(run(alt + dir("runs/alternate")).code, 0);
    ASSERT_EQ(run(alt + dir("alt2")).code, 0);
    EXPECT_EQ(lines(read_file(root / "runs/alternate/reports/alternation.csv")), 4u);
    EXPECT_EQ(read_file(root / "runs/alternate/reports/alternation.csv"), read_file(root / "alt2/reports/alternation.csv"));

    const auto rep = run("report --runs " + dir("runs") + " --out " + dir("report"));
    ASSERT_EQ(rep.code, 0) << rep.err;
    EXPECT_NE(rep.err.find("no probe data for model 'rbc'"), std::string::npos);
    const auto cmp = read_csv(root / "report/comparison.csv");
    ASSERT_EQ(cmp.size(), 3u);
    EXPECT_EQ(cmp[0].at("model"), "actjepa");
    EXPECT_EQ(cmp[2].at("model"), "rbc");
    EXPECT_EQ(cmp[2].at("probe_rmse_x100"), "");
    EXPECT_NE(cmp[1].at("probe_rmse_x100"), "");
    EXPECT_TRUE(fs::exists(root / "report/alternation.svg"));
    EXPECT_TRUE(fs::exists(root / "report/success.svg"));
    const auto before = read_file(root / "report/comparison.csv");
    ASSERT_EQ(run("report --runs " + dir("runs") + " --out " + dir("report")).code, 0);
    EXPECT_EQ(read_file(root / "report/comparison.csv"), before);
}
