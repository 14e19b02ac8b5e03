#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "psp/cli.hpp"
#include "psp/error.hpp"
#include "psp/maskgen.hpp"
#include "psp/pgm.hpp"
#include "psp/sha256.hpp"
#include "psp/tensor_io.hpp"

using namespace psp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome psp_run(std::vector<std::string> args) {
    args.insert(args.begin(), "psp");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("psp_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string plan(const std::string& name) { return std::string(PSP_PLANS_DIR) + "/" + name; }

fs::path write_json(const fs::path& dir, const json& doc) {
    const fs::path p = dir / "plan.json";
    std::ofstream(p) << doc.dump();
    return p;
}

std::vector<json> events(const std::string& out) {
    std::vector<json> ev;
    std::istringstream in(out);
    for (std::string line; std::getline(in, line);) ev.push_back(json::parse(line));
    return ev;
}

}  // namespace

TEST_CASE("edit writes z0 and a manifest, deterministically") {
    const fs::path a = scratch("edit_a"), b = scratch("edit_b");
    const Outcome ra = psp_run({"edit", plan("baseline.json"), a.string()});
    REQUIRE(ra.code == 0);
    REQUIRE(psp_run({"edit", plan("baseline.json"), "--quiet", b.string()}).code == 0);
    CHECK(sha256_file(a / "z0.pspt") == sha256_file(b / "z0.pspt"));
    CHECK(read_tensor(a / "z0.pspt").shape() == Shape{16, 16, 4});

    const json manifest = json::parse(std::ifstream(a / "manifest.json"));
    CHECK(manifest["outputs"]["z0.pspt"] == sha256_file(a / "z0.pspt"));
    CHECK(manifest["plan"]["scheduler"]["T"] == 30);
    CHECK(manifest["plan"]["window"] == json::array({0, 0}));
    CHECK(manifest["plan"]["flags"]["use_aug"] == true);

    // The resolved plan reproduces the run on its own.
    const fs::path c = scratch("edit_c");
    const fs::path replay = write_json(c, manifest["plan"]);
    REQUIRE(psp_run({"edit", replay.string(), (c / "out").string()}).code == 0);
    CHECK(sha256_file(c / "out" / "z0.pspt") == sha256_file(a / "z0.pspt"));

    const std::vector<json> ev = events(ra.out);
    CHECK(ev.front()["event"] == "start");
    CHECK(ev.back()["event"] == "done");
    CHECK(ev.size() == 32);
}

TEST_CASE("seed override and --out") {
    const fs::path a = scratch("seed_a"), b = scratch("seed_b");
    REQUIRE(psp_run({"--out", a.string(), "edit", plan("baseline.json")}).code == 0);
    REQUIRE(psp_run({"edit", plan("baseline.json"), "--seed", "99", "--out", b.string()}).code == 0);
    CHECK(sha256_file(a / "z0.pspt") != sha256_file(b / "z0.pspt"));
    const json manifest = json::parse(std::ifstream(b / "manifest.json"));
    CHECK(manifest["plan"]["scheduler"]["seed"] == 99);
}

TEST_CASE("thread count does not change results") {
    const fs::path a = scratch("threads_a"), b = scratch("threads_b");
    ::setenv("PSP_THREADS", "1", 1);
    REQUIRE(psp_run({"--quiet", "edit", plan("replace_cat_dog.json"), a.string()}).code == 0);
    ::setenv("PSP_THREADS", "4", 1);
    REQUIRE(psp_run({"--quiet", "edit", plan("replace_cat_dog.json"), b.string()}).code == 0);
    ::unsetenv("PSP_THREADS");
    CHECK(sha256_file(a / "z0.pspt") == sha256_file(b / "z0.pspt"));
}

TEST_CASE("replace captures stay inside the box") {
    const fs::path dir = scratch("replace");
    const Outcome r = psp_run({"edit", plan("replace_cat_dog.json"), dir.string()});
    REQUIRE(r.code == 0);
    int captures = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.ends_with("_mask.pspt")) continue;
        ++captures;
        const Tensor mask = read_tensor(entry.path());
        const Tensor box = read_tensor(dir / (name.substr(0, name.size() - 10) + "_box.pspt"));
        CHECK(box == rasterize(Softbox::rect(0.3, 0.8, 0.5, 0.7), 16));
        for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] <= box[i]);
    }
    CHECK(captures == 2);
    CHECK(fs::exists(dir / "capture_t29_l0_map.pgm"));
    CHECK(fs::exists(dir / "capture_t12_l1_mask.pgm"));
    for (const json& ev : events(r.out))
        if (ev["event"] == "step") CHECK(ev["branch"] == (ev["t"].get<int>() < 30 ? "psp" : "base"));
}

TEST_CASE("validation errors exit 2 with a JSON pointer") {
    const fs::path dir = scratch("invalid");
    const auto check = [&](const json& doc, const std::string& pointer) {
        const Outcome r = psp_run({"edit", write_json(dir, doc).string(), (dir / "out").string()});
        CHECK(r.code == 2);
        CHECK(r.err.find(pointer) != std::string::npos);
    };
    const json base = {{"task", "none"}, {"prompt_source", {{"words", {"a", "cat"}}}}};
    json doc = base;
    doc["window"] = {10, 5};
    check(doc, "/window");
    doc = base;
    doc["colour"] = "red";
    check(doc, "/colour");
    doc = base;
    doc["scheduler"] = {{"T", 0}};
    check(doc, "/scheduler/T");
    doc = base;
    doc["scheduler"] = {{"gg", 3}};
    check(doc, "/scheduler/gg");
    doc = base;
    doc["task"] = "replace";
    doc["prompt_target"] = {{"words", {"a", "dog"}}};
    doc["spans"] = {{{"source", {2, 3}}, {"target", {2, 3}}}};
    check(doc, "/softbox");
    doc["softbox"] = {0.1, 0.4, 0.2};
    check(doc, "/softbox");
    doc["softbox"] = {0.1, 0.4, 0.2, 0.4};
    doc["spans"] = {{{"source", {2, 3}}, {"target", {2, 4}}}};
    check(doc, "/spans/0");
    doc = base;
    doc["prompt_source"]["words"] = json::array();
    for (int i = 0; i < 80; ++i) doc["prompt_source"]["words"].push_back("w");
    check(doc, "/prompt_source/words");

    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(psp_run({"edit", (dir / "broken.json").string(), dir.string()}).code == 2);
    CHECK(psp_run({"edit", (dir / "missing.json").string(), dir.string()}).code == 2);
    CHECK(psp_run({"frobnicate"}).code == 2);
    CHECK(psp_run({}).code == 2);
}

TEST_CASE("engine errors exit 1") {
    const fs::path dir = scratch("engine");
    std::ofstream(dir / "file") << "x";
    const Outcome r = psp_run({"edit", plan("baseline.json"), (dir / "file" / "sub").string()});
    CHECK(r.code == 1);
    CHECK(!r.err.empty());
}

TEST_CASE("softbox from a PGM bitmap") {
    const fs::path dir = scratch("bitmap");
    GrayImage img{16, 16, std::vector<std::uint8_t>(256, 0)};
    for (std::size_t r = 4; r < 9; ++r)
        for (std::size_t c = 2; c < 12; ++c) img.pixels[r * 16 + c] = 200;
    write_pgm(img, dir / "box.pgm");
    json doc = json::parse(std::ifstream(plan("replace_cat_dog.json")));
    doc["softbox"] = {{"pgm", "box.pgm"}};
    const Outcome r = psp_run({"edit", write_json(dir, doc).string(), (dir / "out").string()});
    REQUIRE(r.code == 0);
    const Tensor box = read_tensor(dir / "out" / "capture_t29_l0_box.pspt");
    CHECK(box == binarize(img).reshaped({256}));
    const json manifest = json::parse(std::ifstream(dir / "out" / "manifest.json"));
    CHECK(manifest["inputs"]["softbox_pgm"] == sha256_file(dir / "box.pgm"));

    img.width = 8;
    img.pixels.resize(128);
    write_pgm(img, dir / "box.pgm");
    CHECK(psp_run({"edit", write_json(dir, doc).string(), (dir / "out2").string()}).code == 2);
}

TEST_CASE("analyze masks slots") {
    for (const std::string spec : {"0-1", "6-9", "16-17", "0-1,6-9"}) {
        const fs::path dir = scratch("analyze");
        const Outcome r = psp_run({"analyze", plan("baseline.json"), "--mask", spec, dir.string()});
        REQUIRE(r.code == 0);
        const Tensor sums = read_tensor(dir / "weights_colsum.pspt");
        CHECK(sums.shape() == Shape{30, 2, 77});
        std::vector<bool> masked(77, false);
        for (const cli::MaskSpan& s : cli::parse_mask_spec(spec))
            for (std::size_t j = s.begin; j < s.end; ++j) masked[j] = true;
        for (std::size_t row = 0; row < 60; ++row)
            for (std::size_t j = 0; j < 77; ++j) {
                if (masked[j]) CHECK(sums[row * 77 + j] == 0.0f);
            }
        const json summary = json::parse(std::ifstream(dir / "analysis.json"));
        CHECK(summary["max_masked_weight"] == 0.0);
        int weight_events = 0;
        for (const json& ev : events(r.out))
            if (ev["event"] == "weights") {
                ++weight_events;
                CHECK(ev["masked_max"] == 0.0);
            }
        CHECK(weight_events == 60);
    }
}

TEST_CASE("analyze with every slot masked") {
    const fs::path dir = scratch("analyze_all");
    CHECK(psp_run({"analyze", plan("baseline.json"), "--mask", "0-77", dir.string()}).code == 0);
    const json summary = json::parse(std::ifstream(dir / "analysis.json"));
    CHECK(summary["attention_skipped"] == true);

    const Outcome r = psp_run({"analyze", plan("baseline.json"), "--mask", "0-77", "--no-aug", dir.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("empty attention support") != std::string::npos);

    CHECK(psp_run({"analyze", plan("baseline.json"), "--mask", "5-3", dir.string()}).code == 2);
    CHECK(psp_run({"analyze", plan("baseline.json"), "--mask", "70-78", dir.string()}).code == 2);
    CHECK(psp_run({"analyze", plan("baseline.json"), "--mask", "a-b", dir.string()}).code == 2);
}

TEST_CASE("mask spec parsing") {
    const auto spans = cli::parse_mask_spec("0-1,6-9,16");
    REQUIRE(spans.size() == 3);
    CHECK(spans[0].begin == 0);
    CHECK(spans[0].end == 1);
    CHECK(spans[1].begin == 6);
    CHECK(spans[1].end == 9);
    CHECK(spans[2].begin == 16);
    CHECK(spans[2].end == 17);
    CHECK_THROWS_AS(cli::parse_mask_spec(""), ConfigError);
    CHECK_THROWS_AS(cli::parse_mask_spec("3-3"), ConfigError);
    CHECK_THROWS_AS(cli::parse_mask_spec("1,"), ConfigError);
    CHECK_THROWS_AS(cli::parse_mask_spec("-2"), ConfigError);
}

TEST_CASE("attnmap writes a PGM matching the raw map") {
    const fs::path dir = scratch("attnmap");
    const Outcome r = psp_run({"attnmap", plan("replace_cat_dog.json"), "--step", "12", "--layer", "1",
                               "--slot", "5", (dir / "map.pgm").string()});
    REQUIRE(r.code == 0);
    const std::vector<std::uint8_t> bytes = read_file_bytes(dir / "map.pgm");
    const std::string header = "P5\n16 16\n255\n";
    REQUIRE(bytes.size() == header.size() + 256);
    CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
    const Tensor raw = read_tensor(dir / "map.pspt");
    CHECK(raw.shape() == Shape{256});
    for (std::size_t i = 0; i < 256; ++i)
        CHECK(bytes[header.size() + i] == static_cast<std::uint8_t>(std::lround(255.0f * raw[i])));

    // Same map the edit run captured at (12, 1).
    const fs::path edit = scratch("attnmap_edit");
    REQUIRE(psp_run({"--quiet", "edit", plan("replace_cat_dog.json"), edit.string()}).code == 0);
    CHECK(read_tensor(edit / "capture_t12_l1_map.pspt") == raw);

    CHECK(psp_run({"attnmap", plan("replace_cat_dog.json"), "--step", "0", "--layer", "0", "--slot", "5",
                   (dir / "x.pgm").string()}).code == 2);
    CHECK(psp_run({"attnmap", plan("replace_cat_dog.json"), "--step", "3", "--layer", "2", "--slot", "5",
                   (dir / "x.pgm").string()}).code == 2);
    CHECK(psp_run({"attnmap", plan("replace_cat_dog.json"), "--step", "3", "--layer", "0", "--slot", "9",
                   (dir / "x.pgm").string()}).code == 2);
    CHECK(psp_run({"attnmap", plan("replace_cat_dog.json"), "--step", "3", "--layer", "0", "--slot", "77",
                   (dir / "x.pgm").string()}).code == 2);
}

TEST_CASE("otsu command matches the library") {
    const fs::path dir = scratch("otsu");
    write_tensor(Tensor::vector({0.1f, 0.9f, 0.1f, 0.9f, 0.9f, 0.1f, 0.1f, 0.9f}), dir / "bi.pspt");
    const Outcome r = psp_run({"otsu", (dir / "bi.pspt").string(), (dir / "bi.pgm").string()});
    REQUIRE(r.code == 0);
    const json line = json::parse(r.out);
    CHECK(line["degenerate"] == false);
    CHECK(line["threshold"].get<double>() > 0.1);
    CHECK(line["threshold"].get<double>() < 0.9);
    CHECK(line["class1"]["count"] == 4);
    const GrayImage img = read_pgm(dir / "bi.pgm");
    CHECK(img.width == 8);
    CHECK(img.height == 1);
    CHECK(binarize(img).reshaped({8}) == otsu_threshold(read_tensor(dir / "bi.pspt")).binary);

    write_tensor(Tensor({4, 4}, 0.25f), dir / "flat.pspt");
    const Outcome flat = psp_run({"otsu", (dir / "flat.pspt").string(), (dir / "flat.pgm").string()});
    REQUIRE(flat.code == 0);
    CHECK(json::parse(flat.out)["degenerate"] == true);
    const GrayImage f = read_pgm(dir / "flat.pgm");
    CHECK(f.width == 4);
    CHECK(f.height == 4);
    CHECK(std::all_of(f.pixels.begin(), f.pixels.end(), [](std::uint8_t p) { return p == 0; }));

    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor m({8, 12});
        for (float& v : m.data()) v = u(rng);
        write_tensor(m, dir / "r.pspt");
        const Outcome o = psp_run({"otsu", (dir / "r.pspt").string(), (dir / "r.pgm").string()});
        REQUIRE(o.code == 0);
        const OtsuResult lib = otsu_threshold(m.reshaped({96}));
        CHECK(json::parse(o.out)["threshold_index"] == lib.threshold_index);
        CHECK(binarize(read_pgm(dir / "r.pgm")).reshaped({96}) == lib.binary);
    }

    write_tensor(Tensor::vector({0.5f, 1.5f}), dir / "bad.pspt");
    CHECK(psp_run({"otsu", (dir / "bad.pspt").string(), (dir / "bad.pgm").string()}).code == 2);
    write_tensor(Tensor({2, 2, 2}, 0.5f), dir / "cube.pspt");
    CHECK(psp_run({"otsu", (dir / "cube.pspt").string(), (dir / "c.pgm").string()}).code == 2);
    std::ofstream(dir / "junk.pspt") << "nope";
    CHECK(psp_run({"otsu", (dir / "junk.pspt").string(), (dir / "j.pgm").string()}).code == 2);
}

TEST_CASE("all example plans run") {
    for (const char* name : {"baseline.json", "replace_cat_dog.json", "add_hat.json", "style_watercolor.json"}) {
        CAPTURE(name);
        const fs::path dir = scratch("examples");
        CHECK(psp_run({"--quiet", "edit", plan(name), dir.string()}).code == 0);
    }
}
