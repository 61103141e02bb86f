#include "faceswap/pipeline.hpp"

#include "doctest.h"
#include "support.hpp"

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace fswap;

namespace {

// Exit status of the CLI with stdout and stderr captured to <log>.
int run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(FSWAP_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_small_config(const fs::path& path) {
    std::ofstream(path) << R"({
  "generator": {"crop_size": 16, "n_levels": 2, "identity_dim": 8, "base_channels": 4,
                "discriminator_channels": 4},
  "train": {"epochs": 1, "batch_size": 2, "identity_pretrain_steps": 2, "checkpoint_every": 100},
  "seed": 1
})";
}

} // namespace

TEST_CASE("cli exit codes") {
    const auto dir = testing::scratch_dir("cli_codes");
    const fs::path log = dir / "log.txt";
    CHECK(run("--help", log) == 0);
    CHECK(testing::slurp(log).find("swap-video") != std::string::npos);
    CHECK(run("swap-image --help", log) == 0);
    CHECK(run("", log) == 1);
    CHECK(run("dance", log) == 1);
    CHECK(run("make-synthetic --out " + (dir / "d").string() + " --persons 0", log) == 1);
    CHECK(run("make-synthetic", log) == 1);
    CHECK(run("train --preset huge --data x --out y", log) == 1);

    // Syntactically fine but the data directory does not exist.
    CHECK(run("train --data " + (dir / "nowhere").string() + " --out " + (dir / "o").string(), log) == 2);
    CHECK(testing::slurp(log).find("error:") != std::string::npos);
    std::ofstream(dir / "bad.json") << R"({"generator": {"crop_size": 17}})";
    CHECK(run("train --config " + (dir / "bad.json").string() + " --data x --out y", log) == 2);
    fs::remove_all(dir);
}

TEST_CASE("cli end to end") {
    const auto dir = testing::scratch_dir("cli_e2e");
    const fs::path log = dir / "log.txt";
    const fs::path data = dir / "data", run_dir = dir / "run", cfg = dir / "config.json";
    write_small_config(cfg);

    REQUIRE(run("make-synthetic --out " + data.string() + " --persons 2 --frames 2 --seed 4", log) == 0);
    CHECK(list_frames(data / "person00").size() == 2);

    REQUIRE(run("train --config " + cfg.string() + " --data " + data.string() + " --out " + run_dir.string(), log) ==
            0);
    const fs::path ckpt = run_dir / "checkpoint.fswp";
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(run_dir / "config.json"));
    CHECK(testing::slurp(run_dir / "train_log.csv").rfind(kTrainLogHeader, 0) == 0);

    const std::string common = "--config " + cfg.string() + " --checkpoint " + ckpt.string();
    const fs::path src = data / "person00" / frame_name(1), tgt = data / "person01" / frame_name(2);
    REQUIRE(run("swap-image " + common + " --source " + src.string() + " --target " + tgt.string() + " --out " +
                    (dir / "swap.png").string(),
                log) == 0);
    CHECK(read_png(dir / "swap.png").same_shape(read_png(tgt)));

    REQUIRE(run("swap-video " + common + " --source " + src.string() + " --frames " + (data / "person01").string() +
                    " --out " + (dir / "video").string() + " --workers 2",
                log) == 0);
    CHECK(list_frames(dir / "video").size() == 2);
    CHECK(read_fps(dir / "video") == 25.0);

    write_manifest(dir / "manifest.csv", {{src, tgt, dir / "swap.png"}});
    REQUIRE(run("eval " + common + " --manifest " + (dir / "manifest.csv").string() + " --out " +
                    (dir / "report.csv").string(),
                log) == 0);
    std::ifstream report(dir / "report.csv");
    const MetricTable table = MetricTable::parse_csv(report);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].count("id_retrieval") == 1);
    CHECK(table.rows[0].count("eye_ldmk") == 1);

    // A missing source face is a runtime error.
    CHECK(run("swap-image " + common + " --source " + (dir / "swap.png").string() + " --target " + tgt.string() +
                  " --out " + (dir / "x.png").string(),
              log) == 2);
    CHECK(testing::slurp(log).find("NoFaceDetected") != std::string::npos);
    fs::remove_all(dir);
}
