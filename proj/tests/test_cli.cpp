#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "helpers.hpp"
#include "wfkit/feature.hpp"

using Catch::Matchers::ContainsSubstring;

namespace {

struct CliResult {
    int code = -1;
    std::string output; // stdout and stderr merged
};

std::string bin_path() {
    const char* bin = std::getenv("WFKIT_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    std::string cmd;
    if (!env_prefix.empty()) cmd += env_prefix + " ";
    cmd += "\"" + bin_path() + "\" " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult res;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, n);
    const int status = pclose(pipe);
    if (WIFEXITED(status)) res.code = WEXITSTATUS(status);
    return res;
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

} // namespace

TEST_CASE("help and usage errors use the documented exit codes") {
    CHECK(run_cli("--help").code == 0);
    CHECK_THAT(run_cli("--help").output, ContainsSubstring("synth"));

    const CliResult none = run_cli("");
    CHECK(none.code == 2);
    CHECK_THAT(none.output, ContainsSubstring("error: config:"));

    const CliResult bogus = run_cli("synth --out /tmp/x --bogus-flag 3");
    CHECK(bogus.code == 2);
    CHECK_THAT(bogus.output, ContainsSubstring("error: config:"));

    const CliResult missing_required = run_cli("featurize");
    CHECK(missing_required.code == 2);
    CHECK_THAT(missing_required.output, ContainsSubstring("error: config:"));
}

TEST_CASE("runtime failures report their error category on exit 1") {
    testutil::TempDir dir;
    const CliResult io = run_cli("defend --in /nonexistent-dataset --out " + dir.file("out") +
                                 " --defense front");
    CHECK(io.code == 1);
    CHECK_THAT(io.output, ContainsSubstring("error: io: dataset not found"));

    const CliResult bad_defense = run_cli("synth --out " + dir.file("d") +
                                          " --classes 2 --traces 4 --cells-min 50 --cells-max 60"
                                          " --duration-min 1 --duration-max 2");
    REQUIRE(bad_defense.code == 0);
    const CliResult unknown = run_cli("defend --in " + dir.file("d") + " --out " + dir.file("o") +
                                      " --defense bogus");
    CHECK(unknown.code == 1);
    CHECK_THAT(unknown.output, ContainsSubstring("error: config:"));

    const CliResult bad_spec = run_cli("synth --out " + dir.file("e") + " --traces 0");
    CHECK(bad_spec.code == 1);
    CHECK_THAT(bad_spec.output, ContainsSubstring("error: config:"));

    const CliResult bad_env = run_cli("synth --out " + dir.file("f"), "WFKIT_SEED=banana");
    CHECK(bad_env.code == 1);
    CHECK_THAT(bad_env.output, ContainsSubstring("WFKIT_SEED"));
}

TEST_CASE("default featurize settings build full-size histograms") {
    testutil::TempDir dir;
    REQUIRE(run_cli("synth --out " + dir.file("data") +
                    " --classes 2 --traces 3 --cells-min 40 --cells-max 60"
                    " --duration-min 1 --duration-max 2 --seed 4")
                .code == 0);
    REQUIRE(run_cli("featurize --in " + dir.file("data") + " --out " + dir.file("feat") +
                    " --repr iat --slot-ms 44 --slots 1800 --bins 9 --seed 4")
                .code == 0);

    const auto tensors = wfkit::read_feature_cache(dir.file("feat") + "/features.bin");
    REQUIRE(tensors.size() == 6);
    for (const auto& t : tensors) {
        CHECK(t.shape == std::vector<std::int64_t>{9, 2, 1800});
        double mass = 0.0;
        for (float v : t.data) mass += v;
        CHECK(mass > 0.0);
    }
    CHECK(wfkit::read_labels_csv(dir.file("feat") + "/labels.csv").size() == 6);
}

TEST_CASE("the seed flag and the environment fallback agree") {
    testutil::TempDir dir;
    const std::string args = " --classes 2 --traces 2 --cells-min 40 --cells-max 50"
                             " --duration-min 1 --duration-max 2";
    REQUIRE(run_cli("synth --out " + dir.file("flag") + args + " --seed 123").code == 0);
    REQUIRE(run_cli("synth --out " + dir.file("env") + args, "WFKIT_SEED=123").code == 0);
    REQUIRE(run_cli("synth --out " + dir.file("other") + args + " --seed 124").code == 0);

    CHECK(testutil::read_bytes(dir.file("flag") + "/0-0.cell") ==
          testutil::read_bytes(dir.file("env") + "/0-0.cell"));
    CHECK(testutil::read_bytes(dir.file("flag") + "/0-0.cell") !=
          testutil::read_bytes(dir.file("other") + "/0-0.cell"));
}

TEST_CASE("the five-stage pipeline emits every documented artifact deterministically") {
    testutil::TempDir dir;
    namespace fs = std::filesystem;
    const std::string seed = " --seed 7";

    // synth: 3 monitored classes plus non-monitored background
    REQUIRE(run_cli("synth --out " + dir.file("data") +
                    " --classes 3 --traces 8 --nonmonitored 4"
                    " --cells-min 60 --cells-max 90 --duration-min 2 --duration-max 3" + seed)
                .code == 0);
    CHECK(fs::exists(dir.file("data") + "/run-manifest.txt"));
    CHECK_THAT(testutil::read_bytes(dir.file("data") + "/run-manifest.txt"),
               ContainsSubstring("command=synth") && ContainsSubstring("seed=7") &&
                   ContainsSubstring("config_hash="));

    // defend: tamaraw produces a mirrored tree with overheads
    REQUIRE(run_cli("defend --in " + dir.file("data") + " --out " + dir.file("def") +
                    " --defense tamaraw" + seed)
                .code == 0);
    CHECK(fs::exists(dir.file("def") + "/manifest.csv"));
    CHECK(fs::exists(dir.file("def") + "/0-0.cell"));
    const std::string overheads = testutil::read_bytes(dir.file("def") + "/overheads.csv");
    CHECK(overheads.rfind("data_overhead,time_overhead\n", 0) == 0);
    CHECK(count_lines(overheads) == 2);

    // featurize twice: byte-identical caches
    const std::string feat_args = "featurize --in " + dir.file("data") +
                                  " --repr iat --slot-ms 44 --slots 64 --bins 9" + seed;
    REQUIRE(run_cli(feat_args + " --out " + dir.file("feat")).code == 0);
    REQUIRE(run_cli(feat_args + " --out " + dir.file("feat2")).code == 0);
    CHECK(testutil::read_bytes(dir.file("feat") + "/features.bin") ==
          testutil::read_bytes(dir.file("feat2") + "/features.bin"));
    CHECK(testutil::read_bytes(dir.file("feat") + "/labels.csv") ==
          testutil::read_bytes(dir.file("feat2") + "/labels.csv"));

    // train twice: byte-identical checkpoints and histories
    const std::string train_args = "train --features " + dir.file("feat") + "/features.bin" +
                                   " --labels " + dir.file("feat") + "/labels.csv" +
                                   " --epochs 3 --batch 16 --lr 0.002 --folds 4 --fold 0"
                                   " --kernels 2 --se-reduction 4 --stage-a 8 --stage-a2 8 --stage-b 8" +
                                   seed;
    REQUIRE(run_cli(train_args + " --out " + dir.file("run")).code == 0);
    REQUIRE(run_cli(train_args + " --out " + dir.file("run2")).code == 0);
    CHECK(testutil::read_bytes(dir.file("run") + "/model-fold0.ckpt") ==
          testutil::read_bytes(dir.file("run2") + "/model-fold0.ckpt"));
    CHECK(testutil::read_bytes(dir.file("run") + "/history-fold0.csv") ==
          testutil::read_bytes(dir.file("run2") + "/history-fold0.csv"));

    const std::string model_cfg = testutil::read_bytes(dir.file("run") + "/model-config.txt");
    CHECK_THAT(model_cfg, ContainsSubstring("class_count=4") && ContainsSubstring("slot_count=64") &&
                              ContainsSubstring("bin_count=9"));
    const std::string history = testutil::read_bytes(dir.file("run") + "/history-fold0.csv");
    CHECK(history.rfind("epoch,train_loss,val_acc\n", 0) == 0);
    CHECK(count_lines(history) == 4); // header + 3 epochs

    // closed-world eval
    REQUIRE(run_cli("eval --features " + dir.file("feat") + "/features.bin --labels " +
                    dir.file("feat") + "/labels.csv --models " + dir.file("run") +
                    " --out " + dir.file("evalc") + " --mode closed --folds 4 --fold 0" + seed)
                .code == 0);
    const std::string closed = testutil::read_bytes(dir.file("evalc") + "/summary.csv");
    CHECK(closed.rfind("metric,value\naccuracy,", 0) == 0);
    CHECK(!fs::exists(dir.file("evalc") + "/pr_curve.csv"));

    // open-world eval with a reduced tau grid
    REQUIRE(run_cli("eval --features " + dir.file("feat") + "/features.bin --labels " +
                    dir.file("feat") + "/labels.csv --models " + dir.file("run") +
                    " --out " + dir.file("evalo") + " --mode open --folds 4 --fold 0 --tau-grid 21" +
                    seed)
                .code == 0);
    const std::string pr = testutil::read_bytes(dir.file("evalo") + "/pr_curve.csv");
    CHECK(pr.rfind("tau,tp,wp,fn,fp,precision,recall,f1\n", 0) == 0);
    CHECK(count_lines(pr) == 22); // header + 21 grid points
    const std::string open_summary = testutil::read_bytes(dir.file("evalo") + "/summary.csv");
    CHECK_THAT(open_summary, ContainsSubstring("accuracy,") && ContainsSubstring("best_f1,") &&
                                 ContainsSubstring("best_tau,"));

    // eval against a cache whose geometry disagrees with the trained model
    REQUIRE(run_cli("featurize --in " + dir.file("data") + " --out " + dir.file("feat32") +
                    " --repr iat --slot-ms 44 --slots 32 --bins 9" + seed)
                .code == 0);
    const CliResult mismatch =
        run_cli("eval --features " + dir.file("feat32") + "/features.bin --labels " +
                dir.file("feat32") + "/labels.csv --models " + dir.file("run") + " --out " +
                dir.file("evalbad") + " --mode closed --folds 4 --fold 0" + seed);
    CHECK(mismatch.code == 1);
    CHECK_THAT(mismatch.output, ContainsSubstring("error: shape:"));

    // asking for a fold that was never trained is an io error
    const CliResult missing =
        run_cli("eval --features " + dir.file("feat") + "/features.bin --labels " + dir.file("feat") +
                "/labels.csv --models " + dir.file("run") + " --out " + dir.file("evalm") +
                " --mode closed --folds 4 --fold 2" + seed);
    CHECK(missing.code == 1);
    CHECK_THAT(missing.output, ContainsSubstring("error: io: missing checkpoint"));

    // eval requires a model source
    const CliResult no_model =
        run_cli("eval --features " + dir.file("feat") + "/features.bin --labels " + dir.file("feat") +
                "/labels.csv --out " + dir.file("evaln") + " --mode closed" + seed);
    CHECK(no_model.code == 1);
    CHECK_THAT(no_model.output, ContainsSubstring("error: config:"));
}
