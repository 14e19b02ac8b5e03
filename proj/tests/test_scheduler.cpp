#include <cmath>
#include <numeric>

#include "doctest.h"

#include "psp/error.hpp"
#include "psp/scheduler.hpp"

using namespace psp;

namespace {

using Words = std::vector<std::string>;

const Words kCat{"a", "photo", "of", "a", "cat", "on", "the", "grass"};
const Words kDog{"a", "photo", "of", "a", "dog", "on", "the", "grass"};

SchedulerConfig config(std::uint64_t seed, int l1 = 0, int l2 = 0) {
    SchedulerConfig cfg;
    cfg.seed = seed;
    cfg.model_seed = 77;
    cfg.lambda1 = l1;
    cfg.lambda2 = l2;
    return cfg;
}

EditPlan replace_plan(const Words& target, Softbox box = Softbox::rect(0.4, 0.7, 0.4, 0.6)) {
    EditPlan plan;
    plan.task = Task::Replace;
    plan.source_words = kCat;
    plan.target_words = target;
    plan.spans = {{{5, 6}, {5, 6}, SpanKind::Object}};
    plan.softbox = box;
    return plan;
}

EditPlan none_plan(const Words& target = {}) {
    EditPlan plan;
    plan.source_words = kCat;
    plan.target_words = target;
    return plan;
}

GenerationResult run(const EditPlan& plan, const SchedulerConfig& cfg, const StepObserver& obs = {}) {
    return generate(embed_plan(plan, cfg), plan, cfg, obs);
}

}  // namespace

TEST_CASE("init_latent") {
    const Tensor a = init_latent(config(1));
    CHECK(a.shape() == Shape{16, 16, 4});
    CHECK(a == init_latent(config(1)));
    CHECK(!(a == init_latent(config(2))));
    double mean = 0, sq = 0;
    for (float v : a.data()) mean += v;
    mean /= double(a.size());
    for (float v : a.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / double(a.size()));
    CHECK(std::abs(mean) < 0.1);
    CHECK(std::abs(sd - 1.0) < 0.1);
}

TEST_CASE("window test is strict on both sides") {
    CHECK(!in_window(5, 5, 10));
    CHECK(in_window(6, 5, 10));
    CHECK(in_window(9, 5, 10));
    CHECK(!in_window(10, 5, 10));
    for (int t = 0; t <= 30; ++t) CHECK(!in_window(t, 7, 7));
}

TEST_CASE("branch log for window (5, 10)") {
    const EditPlan plan = replace_plan(kDog);
    std::vector<int> psp_steps, all_steps;
    const GenerationResult r = run(plan, config(3, 5, 10), [&](const StepEvent& ev) {
        all_steps.push_back(ev.t);
        if (ev.psp) psp_steps.push_back(ev.t);
        CHECK(ev.layers.size() == 2);
    });
    CHECK(psp_steps == std::vector<int>{9, 8, 7, 6});
    CHECK(all_steps.size() == 30);
    CHECK(all_steps.front() == 30);
    CHECK(all_steps.back() == 1);
    CHECK(r.steps_run == 30);
    CHECK(r.psp_steps == 4);
}

TEST_CASE("empty window reproduces the baseline bitwise") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor base = run(none_plan(), config(seed)).latent;
        for (int l : {0, 7, 30}) {
            CHECK(run(replace_plan(kDog), config(seed, l, l)).latent == base);
        }
        // The target prompt is irrelevant outside the window.
        CHECK(run(replace_plan({"a", "red", "car"}), config(seed, 12, 12)).latent == base);
    }
}

TEST_CASE("identity edits track the baseline") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const SchedulerConfig cfg = config(seed, 0, 30);
        const Tensor base = run(none_plan(), cfg).latent;

        const Tensor replaced = run(replace_plan(kCat), cfg).latent;
        CHECK(max_abs_diff(replaced, base) < 1e-5f);

        EditPlan style;
        style.task = Task::Style;
        style.source_words = kCat;
        style.target_words = kCat;
        style.spans = {{{9, 10}, {9, 10}, SpanKind::Style}};
        CHECK(max_abs_diff(run(style, cfg).latent, base) < 1e-5f);

        // Box choice only matters through the swap term.
        const Tensor other_box = run(replace_plan(kCat, Softbox::rect(0, 0, 0, 0)), cfg).latent;
        CHECK(max_abs_diff(other_box, replaced) < 1e-5f);
    }
}

TEST_CASE("edits change the result inside the window") {
    const SchedulerConfig cfg = config(4, 0, 30);
    const Tensor base = run(none_plan(), cfg).latent;
    CHECK(max_abs_diff(run(replace_plan(kDog), cfg).latent, base) > 0.0f);

    EditPlan add;
    add.task = Task::Add;
    add.source_words = kCat;
    add.target_words = {"a", "photo", "of", "a", "cat", "with", "a", "hat", "on", "the", "grass"};
    add.spans = {{{}, {8, 9}, SpanKind::Object}};
    add.softbox = Softbox::rect(0.1, 0.4, 0.2, 0.4);
    CHECK(max_abs_diff(run(add, cfg).latent, base) > 0.0f);
}

TEST_CASE("window monotonicity") {
    const EditPlan plan = replace_plan(kDog);
    // (5, 6) has no integer step inside, exactly like (5, 5).
    CHECK(run(plan, config(2, 5, 6)).latent == run(plan, config(2, 5, 5)).latent);
    CHECK(run(plan, config(2, 4, 7)).latent == run(plan, config(2, 4, 7)).latent);
    CHECK(!(run(plan, config(2, 4, 7)).latent == run(plan, config(2, 5, 7)).latent));
}

TEST_CASE("captures") {
    SchedulerConfig cfg = config(5, 0, 30);
    cfg.capture = {{29, 0, std::nullopt}};
    const GenerationResult one = run(replace_plan(kDog), cfg);
    REQUIRE(one.captures.size() == 1);
    CHECK(one.captures[0].map.values.shape() == Shape{256});
    CHECK(one.captures[0].mask.values.shape() == Shape{256});
    CHECK(one.captures[0].slots == SlotSpan{5, 6});

    for (int t = 1; t <= 30; ++t)
        for (std::size_t l = 0; l < 2; ++l) cfg.capture.push_back({t, l, std::nullopt});
    const GenerationResult all = run(replace_plan(kDog, Softbox::rect(0.3, 0.8, 0.5, 0.7)), cfg);
    CHECK(all.captures.size() == 61);
    for (const CaptureArtifact& a : all.captures)
        for (std::size_t i = 0; i < 256; ++i) CHECK(a.mask.values[i] <= a.box[i]);

    cfg.capture = {{3, 0, SlotSpan{0, 1}}};
    CHECK_THROWS_AS(run(replace_plan(kDog), cfg), ConfigError);
    cfg.capture = {{31, 0, std::nullopt}};
    CHECK_THROWS_AS(run(replace_plan(kDog), cfg), ConfigError);
}

TEST_CASE("frozen masks") {
    SchedulerConfig cfg = config(6, 0, 30);
    cfg.freeze_mask_at_step = 25;
    std::vector<float> areas;
    run(replace_plan(kDog), cfg, [&](const StepEvent& ev) {
        if (ev.psp && ev.t <= 25) areas.push_back(ev.layers[0].mask_area);
    });
    REQUIRE(!areas.empty());
    CHECK(std::all_of(areas.begin(), areas.end(), [&](float a) { return a == areas.front(); }));
}

TEST_CASE("masked analysis runs") {
    SchedulerConfig cfg = config(7);
    cfg.record_weights = true;
    EditPlan plan = none_plan();
    plan.source_mask = {{0, 1}, {6, 9}};
    run(plan, cfg, [&](const StepEvent& ev) {
        for (const LayerTrace& l : ev.layers) {
            REQUIRE(l.weights.rank() == 2);
            for (std::size_t i = 0; i < l.weights.rows(); ++i)
                for (std::size_t j : {0, 6, 7, 8}) CHECK(l.weights.at(i, j) == 0.0f);
        }
    });

    plan.source_mask = {{0, 77}};
    CHECK_NOTHROW(run(plan, cfg));
    cfg.use_aug = false;
    CHECK_THROWS_WITH_AS(run(plan, cfg), doctest::Contains("empty attention support"), AttentionError);
}

TEST_CASE("configuration errors") {
    CHECK_THROWS_WITH_AS(validate(config(1, 10, 5)), doctest::Contains("window"), ConfigError);
    CHECK_THROWS_WITH_AS(validate(config(1, 0, 31)), doctest::Contains("window"), ConfigError);

    EditPlan no_box = replace_plan(kDog);
    no_box.softbox.reset();
    CHECK_THROWS_WITH_AS(run(no_box, config(1)), doctest::Contains("softbox"), ConfigError);

    EditPlan bad_span = replace_plan(kDog);
    bad_span.spans = {{{5, 6}, {5, 7}, SpanKind::Object}};
    CHECK_THROWS_AS(run(bad_span, config(1)), ConfigError);

    EditPlan two_adds;
    two_adds.task = Task::Add;
    two_adds.source_words = kCat;
    two_adds.target_words = kDog;
    two_adds.softbox = Softbox::rect(0, 1, 0, 1);
    two_adds.spans = {{{}, {2, 3}, SpanKind::Object}, {{}, {3, 4}, SpanKind::Object}};
    CHECK_THROWS_WITH_AS(run(two_adds, config(1)), doctest::Contains("exactly one span"), ConfigError);

    SchedulerConfig heads = config(1);
    heads.heads = 3;
    CHECK_THROWS_AS(validate(heads), ConfigError);
}

TEST_CASE("multi-head generation is deterministic") {
    SchedulerConfig cfg = config(8, 0, 30);
    cfg.heads = 2;
    CHECK(run(replace_plan(kDog), cfg).latent == run(replace_plan(kDog), cfg).latent);
}
