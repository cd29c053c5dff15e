// End-to-end exercises of the command-line surface, driving the built binary
// as a subprocess: the mini pipeline (fixture -> train-ed -> train-classifier
// -> synthesize -> evaluate), plus error-contract checks.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "magic/dataset.hpp"
#include "magic/image_io.hpp"
#include "magic/util.hpp"

using namespace magic;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MAGIC_CLI_PATH;

struct RunOut {
    int exit_code = -1;
    std::string output;
};

RunOut run_cli(const std::string& args, const std::string& tag) {
    const std::string log = (fs::temp_directory_path() / ("magic_cli_" + tag + ".log")).string();
    const std::string cmd = kCli + " " + args + " >" + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    RunOut out;
    out.exit_code = rc == -1 ? -1 : WEXITSTATUS(rc);
    if (fs::exists(log)) out.output = read_text_file(log);
    return out;
}

std::string test_root() {
    static const std::string root = [] {
        const std::string r = (fs::temp_directory_path() / "magic_cli_suite").string();
        fs::remove_all(r);
        fs::create_directories(r);
        return r;
    }();
    return root;
}

void write_config(const std::string& path, const std::string& body) {
    write_text_file(path, body);
}

}  // namespace

TEST_CASE("synthesize without checkpoints fails naming the missing training command") {
    const std::string cfg = test_root() + "/syn_missing.json";
    write_config(cfg, R"({"classifier_ckpt": "/nonexistent/classifier.ckpt"})");
    RunOut r = run_cli("synthesize --config " + cfg, "missing_cls");
    CHECK(r.exit_code != 0);
    CHECK(r.output.find("train-classifier") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected with the offending key named") {
    const std::string cfg = test_root() + "/bad_key.json";
    write_config(cfg, R"({"epsilonn": 0.1})");
    RunOut r = run_cli("train-classifier --config " + cfg, "bad_key");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("epsilonn") != std::string::npos);
}

TEST_CASE("report-params prints counts, receptive fields, and the reference size") {
    RunOut r = run_cli("report-params", "params");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("26.253M") != std::string::npos);
    CHECK(r.output.find("receptive field 29") != std::string::npos);
    CHECK(r.output.find("21") != std::string::npos);
    CHECK(r.output.find("baseline critic receptive field: 9") != std::string::npos);
}

TEST_CASE("mini pipeline: fixture, train-ed, train-classifier, synthesize, evaluate") {
    const std::string root = test_root();

    // fixture
    RunOut rf = run_cli("make-fixture --out " + root + "/fixture --config " + [&] {
        const std::string c = root + "/fixture.json";
        write_config(c, R"({"size": 24, "seed": 7, "shift_dx": 6})");
        return c;
    }(), "fixture");
    CHECK(rf.exit_code == 0);
    REQUIRE(fs::exists(root + "/fixture/x_src.png"));
    REQUIRE(fs::exists(root + "/fixture/y_src.png"));
    REQUIRE(fs::exists(root + "/fixture/y_dst.png"));

    // train-ed (tiny budget; the overfit contract is covered elsewhere)
    {
        const std::string c = root + "/ed.json";
        write_config(c, "{\"source_image\": \"" + root + "/fixture/x_src.png\"," +
                            "\"source_mask\": \"" + root + "/fixture/y_src.png\"," +
                            "\"iters\": 40, \"lr\": 0.002, \"seed\": 3}");
        RunOut r = run_cli("train-ed --config " + c + " --out " + root + "/ed", "train_ed");
        CHECK(r.exit_code == 0);
        REQUIRE(fs::exists(root + "/ed/ed.ckpt"));
        CHECK(fs::exists(root + "/ed/manifest.json"));
    }

    // train-classifier (tiny budget)
    {
        const std::string c = root + "/cls.json";
        write_config(c, R"({"dataset": {"size": 24, "per_class_train": 6, "per_class_test": 2},
                            "epsilon": 0.2, "norm": "l2", "steps": 2, "epochs": 1,
                            "batch_size": 16, "width": 8, "seed": 3})");
        RunOut r = run_cli("train-classifier --config " + c + " --out " + root + "/cls", "train_cls");
        CHECK(r.exit_code == 0);
        REQUIRE(fs::exists(root + "/cls/classifier.ckpt"));
        const std::string manifest = read_text_file(root + "/cls/manifest.json");
        CHECK(manifest.find("\"epsilon\"") != std::string::npos);
        CHECK(manifest.find("\"norm\"") != std::string::npos);
        CHECK(manifest.find("\"seed\"") != std::string::npos);
    }

    // synthesize (few iterations, critic never activates)
    {
        const std::string c = root + "/syn.json";
        write_config(c, "{\"classifier_ckpt\": \"" + root + "/cls/classifier.ckpt\"," +
                            "\"ed_ckpt\": \"" + root + "/ed/ed.ckpt\"," +
                            "\"source_image\": \"" + root + "/fixture/x_src.png\"," +
                            "\"source_mask\": \"" + root + "/fixture/y_src.png\"," +
                            "\"target_mask\": \"" + root + "/fixture/y_dst.png\"," +
                            "\"snapshot_every\": 0, \"seed\": 5," +
                            "\"critic\": {\"layers\": [{\"kernel\": 4, \"stride\": 2, "
                            "\"filters\": 8}]}}");
        RunOut r = run_cli("synthesize --config " + c + " --iters 4 --out " + root + "/syn",
                           "synthesize");
        CHECK(r.exit_code == 0);
        REQUIRE(fs::exists(root + "/syn/x_dst.png"));
        REQUIRE(fs::exists(root + "/syn/manifest.json"));
        CHECK(fs::exists(root + "/syn/loss_curves.csv"));
        const std::string manifest = read_text_file(root + "/syn/manifest.json");
        CHECK(manifest.find("receptive_field") != std::string::npos);
        CHECK(manifest.find("\"seed\": 5") != std::string::npos);

        // resume from the saved state for two more iterations
        const std::string c2 = root + "/syn_resume.json";
        write_config(c2, "{\"classifier_ckpt\": \"" + root + "/cls/classifier.ckpt\"," +
                             "\"ed_ckpt\": \"" + root + "/ed/ed.ckpt\"," +
                             "\"source_image\": \"" + root + "/fixture/x_src.png\"," +
                             "\"source_mask\": \"" + root + "/fixture/y_src.png\"," +
                             "\"target_mask\": \"" + root + "/fixture/y_dst.png\"," +
                             "\"snapshot_every\": 0, \"seed\": 5," +
                             "\"resume\": \"" + root + "/syn/state.bin\"," +
                             "\"critic\": {\"layers\": [{\"kernel\": 4, \"stride\": 2, "
                             "\"filters\": 8}]}}");
        RunOut r2 = run_cli("synthesize --config " + c2 + " --iters 6 --out " + root +
                                "/syn_resumed",
                            "synthesize_resume");
        CHECK(r2.exit_code == 0);
        CHECK(r2.output.find("resuming from t=4") != std::string::npos);
    }

    // grad-study with a training block: file-count oracle |images| x |grid|
    {
        const std::string c = root + "/grad.json";
        write_config(c, R"({"train": {"epsilon_grid": [0.0, 0.3], "epochs": 1, "steps": 2,
                                      "width": 8,
                                      "dataset": {"size": 24, "per_class_train": 4,
                                                  "per_class_test": 2}},
                            "images": {"count": 3, "size": 24}})");
        RunOut r = run_cli("grad-study --config " + c + " --out " + root + "/grad", "grad");
        CHECK(r.exit_code == 0);
        int pngs = 0;
        for (const auto& e : fs::directory_iterator(root + "/grad"))
            if (e.path().extension() == ".png") ++pngs;
        CHECK(pngs == 2 * 3);
        CHECK(fs::exists(root + "/grad/alignment.csv"));
        CHECK(fs::exists(root + "/grad/study.json"));
    }

    // evaluate: FID between two small image sets + SIFID pair
    {
        fs::create_directories(root + "/set_a");
        fs::create_directories(root + "/set_b");
        Rng rng(9);
        for (int i = 0; i < 3; ++i) {
            imaging::write_png(root + "/set_a/a" + std::to_string(i) + ".png",
                               data::render_sample(0, 24, 0.04, rng));
            imaging::write_png(root + "/set_b/b" + std::to_string(i) + ".png",
                               data::render_sample(5, 24, 0.04, rng));
        }
        const std::string c = root + "/eval.json";
        write_config(c, "{\"classifier_ckpt\": \"" + root + "/cls/classifier.ckpt\"," +
                            "\"dir_a\": \"" + root + "/set_a\"," +
                            "\"dir_b\": \"" + root + "/set_b\"," +
                            "\"sifid_pairs\": [[\"" + root + "/set_a/a0.png\", \"" + root +
                            "/set_b/b0.png\"]]}");
        RunOut r = run_cli("evaluate --config " + c + " --out " + root + "/eval", "evaluate");
        CHECK(r.exit_code == 0);
        REQUIRE(fs::exists(root + "/eval/metrics.json"));
        const std::string rep = read_text_file(root + "/eval/metrics.json");
        CHECK(rep.find("\"fid\"") != std::string::npos);
        CHECK(rep.find("\"sifid\"") != std::string::npos);
        CHECK(rep.find("feature_extractor") != std::string::npos);
        CHECK(rep.find("30.79") != std::string::npos);  // recorded reference metadata
    }
}

TEST_CASE("evaluate without a classifier checkpoint is a path error naming the command") {
    const std::string cfg = test_root() + "/eval_missing.json";
    write_config(cfg, R"({"dir_a": "/tmp", "dir_b": "/tmp"})");
    RunOut r = run_cli("evaluate --config " + cfg, "eval_missing");
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("train-classifier") != std::string::npos);
}

TEST_CASE("mask png with values outside {0,255} is rejected") {
    const std::string root = test_root();
    // write an image png and try to read it as a mask via train-ed
    Rng rng(31);
    imaging::write_png(root + "/notmask.png", data::render_sample(2, 24, 0.2, rng));
    const std::string c = root + "/ed_badmask.json";
    write_config(c, "{\"source_image\": \"" + root + "/notmask.png\", \"source_mask\": \"" +
                        root + "/notmask.png\", \"iters\": 1}");
    RunOut r = run_cli("train-ed --config " + c + " --out " + root + "/ed_bad", "bad_mask");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("{0,255}") != std::string::npos);
}
