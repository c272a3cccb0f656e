#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "egoflow/checkpoint.hpp"
#include "egoflow/config.hpp"

using namespace egoflow;
namespace fs = std::filesystem;

namespace {
std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("checkpoint round trip is bit-exact for float parameters") {
    ParamRegistry<float> reg(7);
    reg.add("a.w", {3, 4}, Init::glorot_uniform);
    reg.add("a.b", {4}, Init::zeros);
    reg.add_buffer("a.bn.running_mean", {4}, 0.25f);
    const std::string p1 = (fs::temp_directory_path() / "egoflow_ck1.egfk").string();
    const std::string p2 = (fs::temp_directory_path() / "egoflow_ck2.egfk").string();
    save_checkpoint(reg, p1, /*include_optimizer=*/true, /*epoch=*/3);

    ParamRegistry<float> reg2(8);  // different init seed: values differ before loading
    reg2.add("a.w", {3, 4}, Init::glorot_uniform);
    reg2.add("a.b", {4}, Init::zeros);
    reg2.add_buffer("a.bn.running_mean", {4}, 0.0f);
    auto meta = load_checkpoint(reg2, p1);
    CHECK(meta.epoch == 3);
    CHECK(meta.has_optimizer);
    save_checkpoint(reg2, p2, true, 3);
    CHECK(read_bytes(p1) == read_bytes(p2));

    for (std::size_t i = 0; i < reg.params().size(); ++i) {
        const auto& a = reg.params()[i]->value.data();
        const auto& b = reg2.params()[i]->value.data();
        for (std::size_t e = 0; e < a.size(); ++e) CHECK(a[e] == b[e]);
    }
    CHECK(reg2.find_buffer("a.bn.running_mean")->data[0] == 0.25f);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("checkpoint errors") {
    ParamRegistry<float> reg(9);
    reg.add("x", {2}, Init::zeros);
    CHECK_THROWS_AS(load_checkpoint(reg, "/nonexistent/ck.egfk"), validation_error);

    const std::string bad = (fs::temp_directory_path() / "egoflow_bad.egfk").string();
    {
        std::ofstream os(bad, std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(reg, bad), validation_error);
    std::remove(bad.c_str());

    // shape mismatch
    const std::string ck = (fs::temp_directory_path() / "egoflow_shape.egfk").string();
    save_checkpoint(reg, ck);
    ParamRegistry<float> other(10);
    other.add("x", {3}, Init::zeros);
    CHECK_THROWS_AS(load_checkpoint(other, ck), validation_error);
    std::remove(ck.c_str());
}

TEST_CASE("duplicate parameter names rejected") {
    ParamRegistry<float> reg(11);
    reg.add("dup", {1}, Init::zeros);
    CHECK_THROWS_AS(reg.add("dup", {1}, Init::zeros), validation_error);
}

TEST_CASE("config parsing") {
    const std::string text = R"(
# comment
[train]
epochs = 12
lr = 0.002   # inline comment
[model]
channels = 8,16, 32,64
use_stop_grad = false
[data]
points = 256
)";
    Config cfg = Config::parse_string(text);
    CHECK(cfg.get_int("train.epochs", 0) == 12);
    CHECK(cfg.get_double("train.lr", 0) == doctest::Approx(0.002));
    CHECK(cfg.get_bool("model.use_stop_grad", true) == false);
    auto ch = cfg.get_list("model.channels", {});
    REQUIRE(ch.size() == 4);
    CHECK(ch[3] == doctest::Approx(64));
    CHECK(cfg.get_int("missing.key", 77) == 77);

    CHECK_THROWS_AS(Config::parse_string("novalue\n"), validation_error);
    CHECK_THROWS_AS(Config::parse_string("[broken\nk = v\n"), validation_error);
}

TEST_CASE("run config profiles and overrides") {
    Config empty = Config::parse_string("");
    auto desk = make_run_config(empty, "desk");
    CHECK(desk.model.channels == std::array<int, 4>{16, 32, 64, 128});
    CHECK(desk.points == 1024);
    CHECK(desk.loss.gamma == doctest::Approx(20.0));
    CHECK(desk.loss.beta == doctest::Approx(1.8));
    CHECK(desk.loss.alpha == std::array<double, 4>{0.02, 0.04, 0.08, 0.16});
    CHECK(desk.loss.smooth_k == std::array<int, 4>{16, 12, 8, 4});

    auto paper = make_run_config(empty, "paper");
    CHECK(paper.model.channels == std::array<int, 4>{32, 128, 256, 512});
    CHECK(paper.points == 8192);
    CHECK(paper.epochs == 150);
    CHECK(paper.lr == doctest::Approx(0.001));
    CHECK(paper.decay_epochs == 10);

    Config over = Config::parse_string("[train]\nepochs = 3\n[loss]\ngamma = 5\n");
    auto rc = make_run_config(over, "desk");
    CHECK(rc.epochs == 3);
    CHECK(rc.loss.gamma == doctest::Approx(5.0));

    CHECK_THROWS_AS(make_run_config(empty, "huge"), validation_error);
}

TEST_CASE("learning rate schedule") {
    Config empty = Config::parse_string("");
    auto rc = make_run_config(empty, "paper");
    CHECK(lr_at_epoch(rc, 0) == doctest::Approx(0.001));
    CHECK(lr_at_epoch(rc, 9) == doctest::Approx(0.001));
    CHECK(lr_at_epoch(rc, 10) == doctest::Approx(0.0007));
    CHECK(lr_at_epoch(rc, 25) == doctest::Approx(0.001 * 0.7 * 0.7));
}
