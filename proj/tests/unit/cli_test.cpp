#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "h2m/ablation.hpp"
#include "h2m/config.hpp"
#include "h2m/error.hpp"
#include "h2m/pipeline.hpp"
#include "json.hpp"

using namespace h2m;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "run.json");
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("h2m_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Minutes-free settings: identity latents, a 5-step schedule, tiny nets.
GenerationConfig tiny_config() {
    GenerationConfig c;
    c.schedule = {5, 0.2, 0.9};
    c.latent_mode = LatentMode::identity_debug;
    c.segment_length = 4;
    c.rollout_frames = 8;
    c.data.sequences = 3;
    c.data.length = 10;
    c.training.stage1_steps = 2;
    c.training.stage2_steps = 2;
    c.training.batch = 1;
    c.model.width = 4;
    c.model.stages = 1;
    return c;
}

fs::path write_config(const fs::path& dir, const GenerationConfig& c) {
    const auto p = dir / "run.json";
    std::ofstream(p) << serialize_config(c);
    return p;
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<std::string> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a).generic_string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b).generic_string());
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& f : fa)
        if (slurp(a / f) != slurp(b / f)) return false;
    return true;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("defaults validate and serialization is a fixed point") {
        const GenerationConfig d;
        CHECK_NOTHROW(validate_config(d));
        const auto text = serialize_config(d);
        const auto back = parse_config(text);
        CHECK(back == d);
        CHECK(serialize_config(back) == text);
        CHECK(parse_config("{}") == d);
    }

    TEST_CASE("non-default values survive the round trip") {
        auto c = tiny_config();
        c.labels = {{Expression::neutral, 0}, {Expression::happy, 64}};
        c.patch = {4, 0.5, DropDomain::latent};
        c.noise = {0.05};
        c.enhancer = true;
        c.seeds = {3, 9, 12, 40, 41};
        c.data.train_dir = "corpus";
        c.training.snr_gamma = 0.0;
        c.model.prior_variance = 0.25;
        const auto back = parse_config(serialize_config(c));
        CHECK(back == c);
    }

    TEST_CASE("unknown keys are rejected with their line") {
        const auto msg = error_of("{\n  \"window\": 4,\n  \"colour\": 1\n}\n");
        CHECK(msg.find("run.json:3:") == 0);
        CHECK(msg.find("unknown key 'colour'") != std::string::npos);
        const auto nested = error_of("{\n  \"augmentation\": {\n    \"patch_size\": 1,\n    \"droprate\": 0.2\n  }\n}\n");
        CHECK(nested.find("run.json:4:") == 0);
        CHECK(nested.find("droprate") != std::string::npos);
    }

    TEST_CASE("type and range errors point at the offending line") {
        CHECK(error_of("{\n\n  \"segment_length\": \"long\"\n}").find("run.json:3:") == 0);
        const auto rate = error_of("{\n  \"augmentation\": {\n    \"drop_rate\": 1.5\n  }\n}");
        CHECK(rate.find("run.json:3:") == 0);
        CHECK(rate.find("drop_rate") != std::string::npos);
        CHECK(error_of("{\n  \"labels\": [\n    {\"label\": \"neutral\", \"onset\": 0},\n    {\"label\": \"grumpy\", \"onset\": 8}\n  ]\n}")
                  .find("run.json:4:") == 0);
        CHECK(error_of("{\n  \"augmentation\": {\"patch_size\": 3}\n}").find("run.json:2:") == 0);
        CHECK(error_of("{\n  \"training\": {\n    \"snr_gamma\": -2\n  }\n}").find("snr_gamma") != std::string::npos);
        CHECK(error_of("{\n  \"model\": {\"prior_variance\": -0.1}\n}").find("prior_variance") != std::string::npos);
    }

    TEST_CASE("syntax errors carry a line number") {
        const auto msg = error_of("{\n  \"window\": 4,\n  \"seeds\": [1, 2,, 3]\n}");
        CHECK(msg.find("run.json:3:") == 0);
    }

    TEST_CASE("cross-field rules") {
        auto c = GenerationConfig{};
        c.schedule = {10, 1e-4, 0.02};
        CHECK_THROWS_AS(validate_config(c), ValidationError);
        c = GenerationConfig{};
        c.labels = {{Expression::happy, 4}};
        CHECK_THROWS_AS(validate_config(c), ValidationError);
        c = GenerationConfig{};
        c.labels = {{Expression::neutral, 0}, {Expression::happy, 40}, {Expression::surprised, 20}};
        CHECK_THROWS_AS(validate_config(c), ValidationError);
        c = GenerationConfig{};
        c.segment_length = 0;
        CHECK_THROWS_AS(validate_config(c), ValidationError);
    }

    TEST_CASE("schema is JSON and covers every serialized key") {
        const auto schema = nlohmann::json::parse(config_schema());
        const auto cfg = nlohmann::json::parse(serialize_config(GenerationConfig{}));
        for (const auto& [key, value] : cfg.items()) {
            CHECK(schema["properties"].contains(key));
            if (value.is_object())
                for (const auto& [sub, v] : value.items()) CHECK(schema["properties"][key]["properties"].contains(sub));
        }
        CHECK(schema["additionalProperties"] == false);
    }

    TEST_CASE("shipped schema.json is current") {
        CHECK(slurp(fs::path(H2M_SOURCE_DIR) / "schema.json") == config_schema());
    }

    TEST_CASE("usage errors exit 1 with help on stderr") {
        auto r = run_cli({"frobnicate"});
        CHECK(r.code == 1);
        CHECK(r.err.find("Usage") != std::string::npos);
        r = run_cli({"gen-data", "--out", "x", "--bogus", "1"});
        CHECK(r.code == 1);
        CHECK(r.err.find("bogus") != std::string::npos);
        r = run_cli({});
        CHECK(r.code == 1);
        r = run_cli({"--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("animate") != std::string::npos);
    }

    TEST_CASE("config errors exit 1") {
        const auto dir = scratch("badcfg");
        std::ofstream(dir / "bad.json") << "{\n  \"window\": 0\n}\n";
        const auto r = run_cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("bad.json:2:") != std::string::npos);
    }

    TEST_CASE("stage 2 without a stage-1 checkpoint names the missing path") {
        const auto dir = scratch("stage2");
        const auto cfg = write_config(dir, tiny_config());
        const auto r = run_cli({"train", "--stage", "2", "--config", cfg.string(), "--out", (dir / "stage2").string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("stage-1 checkpoint not found") != std::string::npos);
        CHECK(r.err.find((dir / "stage1/stage1.h2mc").generic_string()) != std::string::npos);
    }

    TEST_CASE("gen-data output matches the in-memory corpus and carries a manifest") {
        const auto dir = scratch("gendata");
        const auto r = run_cli({"gen-data", "--out", (dir / "data").string(), "--count", "2", "--length", "6"});
        REQUIRE(r.code == 0);
        DataSpec spec;
        spec.sequences = 2;
        spec.length = 6;
        const auto expected = training_corpus(spec);
        spec.train_dir = (dir / "data").string();
        const auto loaded = training_corpus(spec);
        REQUIRE(loaded.size() == 2);
        // Frames come back through 8-bit PPM.
        for (std::size_t i = 0; i < 2; ++i) {
            REQUIRE(loaded[i].frames.size() == expected[i].frames.size());
            CHECK(loaded[i].identity == expected[i].identity);
            CHECK(loaded[i].signal.samples == expected[i].signal.samples);
            for (std::size_t f = 0; f < loaded[i].frames.size(); ++f)
                CHECK(max_abs_diff(loaded[i].frames[f], expected[i].frames[f]) <= 0.5 / 255.0 + 1e-12);
        }
        const auto m = nlohmann::json::parse(slurp(dir / "data" / "manifest.json"));
        CHECK(m["command"] == "gen-data");
        CHECK(m["version"] == H2M_VERSION);
        CHECK(m["outputs"].size() == 2 * 7);
    }

    TEST_CASE("train, animate twice, replay: byte-identical trees") {
        const auto dir = scratch("pipeline");
        const auto cfg = write_config(dir, tiny_config());
        const auto c = cfg.string();
        REQUIRE(run_cli({"train", "--stage", "1", "--config", c, "--out", (dir / "stage1").string()}).code == 0);
        REQUIRE(run_cli({"train", "--stage", "2", "--config", c, "--out", (dir / "stage2").string()}).code == 0);
        REQUIRE(run_cli({"animate", "--config", c, "--seed", "7", "--out", (dir / "a").string()}).code == 0);
        REQUIRE(run_cli({"animate", "--config", c, "--seed", "7", "--out", (dir / "b").string()}).code == 0);
        CHECK(same_tree(dir / "a", dir / "b"));
        CHECK(fs::exists(dir / "a" / "frame_0007.ppm"));
        CHECK(fs::exists(dir / "a" / "reference.ppm"));

        const auto replay = run_cli({"replay", "--manifest", (dir / "stage2" / "manifest.json").string(), "--out",
                                     (dir / "stage2_again").string()});
        CHECK(replay.code == 0);
        CHECK(same_tree(dir / "stage2", dir / "stage2_again"));

        REQUIRE(run_cli({"metrics", "--input", (dir / "a").string(), "--out", (dir / "m").string()}).code == 0);
        const auto metrics = nlohmann::json::parse(slurp(dir / "m" / "metrics.json"));
        CHECK(metrics["frames"] == 8);
        CHECK(metrics["drift"][0].get<double>() >= 0.0);
        REQUIRE(run_cli({"replay", "--manifest", (dir / "m" / "manifest.json").string(), "--out",
                         (dir / "m2").string()})
                    .code == 0);
        CHECK(same_tree(dir / "m", dir / "m2"));

        REQUIRE(run_cli({"dump-attention", "--config", c, "--out", (dir / "att").string()}).code == 0);
        const auto index = slurp(dir / "att" / "attention_index.csv");
        CHECK(index.find("self") != std::string::npos);
        CHECK(index.find("temporal") != std::string::npos);
        CHECK(fs::exists(dir / "att" / "stage0.self_t1.pgm"));
    }

    TEST_CASE("replay refuses changed inputs") {
        const auto dir = scratch("tamper");
        const auto cfg = write_config(dir, tiny_config());
        REQUIRE(run_cli({"train", "--stage", "1", "--config", cfg.string(), "--out", (dir / "stage1").string()}).code == 0);
        REQUIRE(run_cli({"train", "--stage", "2", "--config", cfg.string(), "--out", (dir / "stage2").string()}).code == 0);
        std::ofstream(dir / "stage1" / "stage1.h2mc", std::ios::app) << "x";
        const auto r = run_cli({"replay", "--manifest", (dir / "stage2" / "manifest.json").string(), "--out",
                                (dir / "again").string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("changed") != std::string::npos);
    }

    TEST_CASE("ablate emits the three artifacts and is reproducible") {
        const auto dir = scratch("ablate");
        const auto cache = dir / "cache";
        ::setenv("HALLO2_MICRO_CACHE", cache.c_str(), 1);
        const auto cfg = write_config(dir, tiny_config());
        auto r = run_cli({"ablate", "--grid", "default", "--config", cfg.string(), "--jobs", "2", "--out",
                          (dir / "one").string()});
        REQUIRE(r.code == 0);
        for (const char* f : {"ablation.csv", "ablation_summary.txt", "drift_curves.csv"})
            CHECK(fs::exists(dir / "one" / f));
        const auto csv = slurp(dir / "one" / "ablation.csv");
        for (const char* cell : {"\nnone,", "\nnoise,", "\npatch,", "\ncombined,", "\np4,", "\np16,", "\nr0.1,", "\nr0.5,"})
            CHECK(csv.find(cell) != std::string::npos);
        CHECK(slurp(dir / "one" / "drift_curves.csv").rfind("arm,seed,k,D\n", 0) == 0);

        r = run_cli({"ablate", "--grid", "default", "--config", cfg.string(), "--no-train", "--out",
                     (dir / "two").string()});
        REQUIRE(r.code == 0);
        CHECK(slurp(dir / "one" / "drift_curves.csv") == slurp(dir / "two" / "drift_curves.csv"));
        CHECK(slurp(dir / "one" / "ablation.csv") == slurp(dir / "two" / "ablation.csv"));

        ::setenv("HALLO2_MICRO_CACHE", (dir / "empty").c_str(), 1);
        r = run_cli({"ablate", "--grid", "arms", "--config", cfg.string(), "--no-train", "--out",
                     (dir / "three").string()});
        CHECK(r.code == 0);
        CHECK(r.err.find("warning: skipping cell 'none'") != std::string::npos);
        CHECK(slurp(dir / "three" / "ablation.csv").find("skipped") != std::string::npos);
        ::unsetenv("HALLO2_MICRO_CACHE");
    }

    TEST_CASE("grid cells are distinct and cover every sweep") {
        const auto cells = AblationGrid::default_grid().cells();
        CHECK(cells.size() == 8);
        for (std::size_t i = 0; i < cells.size(); ++i)
            for (std::size_t j = i + 1; j < cells.size(); ++j) {
                CHECK(cells[i].arm.name != cells[j].arm.name);
                CHECK_FALSE((cells[i].arm.patch == cells[j].arm.patch && cells[i].arm.noise == cells[j].arm.noise));
            }
        std::size_t patch_members = 0, rate_members = 0;
        for (const auto& c : cells) {
            patch_members += std::count(c.groups.begin(), c.groups.end(), "patch_size");
            rate_members += std::count(c.groups.begin(), c.groups.end(), "drop_rate");
        }
        CHECK(patch_members == 4);
        CHECK(rate_members == 4);
        AblationGrid few;
        few.seeds = {1, 2, 3};
        CHECK_THROWS_AS(few.validate(), ValidationError);
    }

    TEST_CASE("single-frame drift curve has one row per seed") {
        AblationResult r;
        CellOutcome c;
        c.cell.arm.name = "none";
        c.seeds = {4};
        DriftReport d;
        d.drift = {0.25};
        c.reports = {d};
        r.cells.push_back(c);
        CHECK(drift_curve_csv(r) == "arm,seed,k,D\nnone,4,0,0.25\n");
    }
}
