#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cntn/config.hpp"
#include "oracle.hpp"

#include <cstdlib>

using namespace cntn;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const std::invalid_argument& e) {
        return e.what();
    }
    return {};
}

struct EnvGuard {
    std::string name;
    explicit EnvGuard(std::string n, const char* value) : name(std::move(n)) {
        if (value)
            setenv(name.c_str(), value, 1);
        else
            unsetenv(name.c_str());
    }
    ~EnvGuard() { unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("serialize and parse round trip") {
    ExperimentConfig c;
    c.data_dir = "data/x";
    c.output_dir = "/tmp/out dir";
    c.eval_every = 50;
    c.gen.n_train_ids = 12;
    c.gen.frame_jitter = 0.1234567890123;
    c.corruption = {CorruptionMode::Split, 0.6, 9};
    c.trainer.mode = TrainMode::CoteachBaseline;
    c.trainer.optimizer.kind = OptimizerKind::Adam;
    c.trainer.optimizer.milestones = {10, 20, 30};
    c.trainer.schedule.sigma[2] = {0.3, 0.7, 11};
    c.trainer.and_enabled = false;
    c.eval.exclude_same_view = false;
    const ExperimentConfig back = parse_config(serialize(c));
    CHECK(back == c);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(serialize(back) == serialize(c));

    const ExperimentConfig d;
    CHECK(parse_config(serialize(d)) == d);
}

TEST_CASE("property: round trip of random configurations") {
    oracle::Gen g(81);
    for (int t = 0; t < 100; ++t) {
        ExperimentConfig c;
        c.gen.seed = static_cast<std::uint64_t>(g.integer(0, 1 << 30)) << 20;
        c.gen.bg_shift = g.uniform(0, 1);
        c.trainer.momentum = g.uniform(0, 1);
        c.trainer.iterations = g.integer(1, 100000);
        c.trainer.optimizer.lr = std::exp(g.uniform(-12, 0));
        c.trainer.mode = static_cast<TrainMode>(g.integer(0, 3));
        for (Ramp& r : c.trainer.schedule.sigma) r = {g.uniform(0, 2), g.uniform(0, 2), g.integer(0, 5000)};
        c.corruption.mode = static_cast<CorruptionMode>(g.integer(0, 3));
        c.corruption.rate = g.uniform(0, 0.99);
        const ExperimentConfig back = parse_config(serialize(c));
        CHECK(back == c);
        CHECK(config_hash(back) == config_hash(c));
    }
}

TEST_CASE("hash changes with any setting") {
    ExperimentConfig a;
    ExperimentConfig b = a;
    b.trainer.seed += 1;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.eval.gallery_nm_groups = 3;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("partial files keep defaults and follow the run length") {
    const ExperimentConfig c = parse_config("# comment\n[trainer]\niterations = 400   # short\nP = 6\n");
    CHECK(c.trainer.iterations == 400);
    CHECK(c.trainer.P == 6);
    CHECK(c.trainer.K == TrainerConfig{}.K);
    CHECK(c.trainer.optimizer.milestones == std::vector<long>{200});
    CHECK(c.trainer.schedule.sigma[1].length == 200);
    CHECK(c.trainer.schedule.at(0)[1] == 1.0);

    const ExperimentConfig pinned =
        parse_config("[trainer]\niterations = 400\n[optimizer]\nmilestones = 50\n[schedule]\nsigma0 = 1, 1, 0\n");
    CHECK(pinned.trainer.optimizer.milestones == std::vector<long>{50});
    CHECK(pinned.trainer.schedule.sigma[0].start == 1.0);
    CHECK(pinned.trainer.schedule.sigma[1] == TrainerConfig{}.schedule.sigma[1]);
}

TEST_CASE("parse errors name the line") {
    CHECK(error_of("[trainer]\n\nP = x\n").find("line 3") != std::string::npos);
    CHECK(error_of("[nope]\n").find("line 1: unknown section [nope]") != std::string::npos);
    CHECK(error_of("[trainer]\nbogus = 1\n").find("line 2: unknown key 'bogus'") != std::string::npos);
    CHECK(error_of("P = 3\n").find("outside any section") != std::string::npos);
    CHECK(error_of("[trainer\n").find("unterminated") != std::string::npos);
    CHECK(error_of("[trainer]\nP\n").find("key = value") != std::string::npos);
    CHECK(error_of("[trainer]\ncyclic = maybe\n").find("true or false") != std::string::npos);
    CHECK(error_of("[trainer]\nmode = teacher\n").find("line 2") != std::string::npos);
    CHECK(error_of("[schedule]\nsigma0 = 1, 2\n").find("start, end, length") != std::string::npos);
    CHECK(error_of("[experiment]\nformat_version = 2\n").find("format_version") != std::string::npos);
    CHECK(error_of("[trainer]\nP = 3.5\n").find("not a number") != std::string::npos);
}

TEST_CASE("files") {
    const auto dir = oracle::scratch("config");
    ExperimentConfig c;
    c.trainer.iterations = 77;
    save_config(dir / "c.cfg", c);
    CHECK(load_config(dir / "c.cfg") == c);
    CHECK_THROWS_AS(load_config(dir / "missing.cfg"), std::runtime_error);
}

TEST_CASE("set_iterations and mode defaults") {
    TrainerConfig t;
    set_iterations(t, 1000);
    CHECK(t.iterations == 1000);
    CHECK(t.optimizer.milestones == std::vector<long>{500});
    CHECK(t.schedule.at(500)[0] == doctest::Approx(0.1));
    CHECK(t.schedule.at(0)[1] == 1.0);

    apply_mode_defaults(t, TrainMode::Supervised);
    CHECK_FALSE(t.cyclic);
    CHECK_FALSE(t.and_enabled);
    apply_mode_defaults(t, TrainMode::Cntn);
    CHECK(t.cyclic);
    CHECK(t.and_enabled);
    CHECK(t.mode == TrainMode::Cntn);
}

TEST_CASE("environment overrides") {
    {
        EnvGuard root("CNTN_OUTPUT_ROOT", "/data/root");
        CHECK(resolve_output_dir("runs/a") == std::filesystem::path("/data/root/runs/a"));
        CHECK(resolve_output_dir("/abs/a") == std::filesystem::path("/abs/a"));
    }
    {
        EnvGuard unset("CNTN_OUTPUT_ROOT", nullptr);
        CHECK(resolve_output_dir("runs/a") == std::filesystem::path("runs/a"));
    }
    {
        EnvGuard unset("CNTN_THREADS", nullptr);
        CHECK(thread_count() == 1);
    }
    {
        EnvGuard four("CNTN_THREADS", "4");
        CHECK(thread_count() == 4);
    }
    for (const char* bad : {"0", "-2", "two"}) {
        EnvGuard b("CNTN_THREADS", bad);
        CHECK_THROWS_AS(thread_count(), std::invalid_argument);
    }
}

TEST_CASE("manifest follows the corruption") {
    ExperimentConfig c;
    CHECK(c.manifest().corruptions.empty());
    c.corruption = {CorruptionMode::Label, 0.2, 3};
    REQUIRE(c.manifest().corruptions.size() == 1);
    CHECK(c.manifest().corruptions[0] == c.corruption);
    CHECK(c.manifest().gen == c.gen);
}
