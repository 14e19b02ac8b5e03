#include "psp/plan_file.hpp"

#include <fstream>
#include <initializer_list>
#include <limits>
#include <set>

#include "psp/error.hpp"
#include "psp/pgm.hpp"

namespace psp {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& pointer, const std::string& msg) {
    throw ConfigError((pointer.empty() ? std::string("/") : pointer) + ": " + msg);
}

std::string child(const std::string& pointer, const std::string& key) { return pointer + "/" + key; }
std::string child(const std::string& pointer, std::size_t index) {
    return pointer + "/" + std::to_string(index);
}

void require_object(const json& j, const std::string& ptr, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(ptr, "expected an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!keys.count(k)) fail(child(ptr, k), "unknown key");
}

long long get_int(const json& j, const std::string& ptr, long long lo, long long hi) {
    if (!j.is_number_integer()) fail(ptr, "expected an integer");
    const long long v = j.get<long long>();
    if (v < lo || v > hi)
        fail(ptr, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
    return v;
}

std::uint64_t get_seed(const json& j, const std::string& ptr) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    return static_cast<std::uint64_t>(get_int(j, ptr, 0, std::numeric_limits<long long>::max()));
}

bool get_bool(const json& j, const std::string& ptr) {
    if (!j.is_boolean()) fail(ptr, "expected a boolean");
    return j.get<bool>();
}

SlotSpan get_span(const json& j, const std::string& ptr) {
    if (!j.is_array() || j.size() != 2) fail(ptr, "expected a [begin, end) pair");
    const auto b = static_cast<std::size_t>(get_int(j[0], child(ptr, 0), 0, 1 << 20));
    const auto e = static_cast<std::size_t>(get_int(j[1], child(ptr, 1), 0, 1 << 20));
    if (b > e) fail(ptr, "begin exceeds end");
    return {b, e};
}

struct PromptSection {
    std::vector<std::string> words;
    std::size_t length = 77;
    std::vector<SlotSpan> mask;
};

PromptSection get_prompt(const json& j, const std::string& ptr) {
    require_object(j, ptr, {"words", "L", "mask"});
    PromptSection p;
    if (!j.contains("words")) fail(child(ptr, "words"), "required");
    const json& words = j["words"];
    if (!words.is_array()) fail(child(ptr, "words"), "expected an array of strings");
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (!words[i].is_string()) fail(child(child(ptr, "words"), i), "expected a string");
        p.words.push_back(words[i].get<std::string>());
    }
    if (j.contains("L")) p.length = static_cast<std::size_t>(get_int(j["L"], child(ptr, "L"), 2, 4096));
    if (p.words.size() + 2 > p.length)
        fail(child(ptr, "words"), "prompt exceeds layout: " + std::to_string(p.words.size()) +
                                      " words do not fit L=" + std::to_string(p.length));
    if (j.contains("mask")) {
        const json& m = j["mask"];
        const std::string mp = child(ptr, "mask");
        if (!m.is_array()) fail(mp, "expected an array of [i, j) spans");
        for (std::size_t i = 0; i < m.size(); ++i) {
            const SlotSpan s = get_span(m[i], child(mp, i));
            if (s.end > p.length) fail(child(mp, i), "span exceeds L");
            p.mask.push_back(s);
        }
    }
    return p;
}

json span_json(SlotSpan s) { return json::array({s.begin, s.end}); }

}  // namespace

PlanFile parse_plan(const json& doc, const std::filesystem::path& base_dir) {
    require_object(doc, "", {"prompt_source", "prompt_target", "task", "spans", "softbox", "window",
                             "scheduler", "capture", "flags"});
    PlanFile pf;
    EditPlan& plan = pf.plan;
    SchedulerConfig& cfg = pf.config;

    if (!doc.contains("task")) fail("/task", "required");
    if (!doc["task"].is_string()) fail("/task", "expected a string");
    try {
        plan.task = task_from_string(doc["task"].get<std::string>());
    } catch (const ConfigError&) {
        fail("/task", "expected one of none, replace, add, style");
    }

    if (!doc.contains("prompt_source")) fail("/prompt_source", "required");
    const PromptSection src = get_prompt(doc["prompt_source"], "/prompt_source");
    plan.source_words = src.words;
    plan.source_mask = src.mask;
    cfg.length = src.length;
    if (doc.contains("prompt_target")) {
        const PromptSection tgt = get_prompt(doc["prompt_target"], "/prompt_target");
        if (tgt.length != src.length) fail("/prompt_target/L", "must equal prompt_source L");
        if (!tgt.mask.empty()) fail("/prompt_target/mask", "target prompts cannot be masked");
        plan.target_words = tgt.words;
    } else if (plan.task != Task::None) {
        fail("/prompt_target", "required for task '" + std::string(to_string(plan.task)) + "'");
    }

    if (doc.contains("spans")) {
        const json& spans = doc["spans"];
        if (!spans.is_array()) fail("/spans", "expected an array");
        for (std::size_t i = 0; i < spans.size(); ++i) {
            const std::string ptr = child("/spans", i);
            require_object(spans[i], ptr, {"kind", "source", "target"});
            SpanSpec s;
            const json& kind = spans[i].value("kind", json("object"));
            if (kind == "object") {
                s.kind = SpanKind::Object;
            } else if (kind == "style") {
                s.kind = SpanKind::Style;
            } else {
                fail(child(ptr, "kind"), "expected \"object\" or \"style\"");
            }
            if (!spans[i].contains("target")) fail(child(ptr, "target"), "required");
            s.target = get_span(spans[i]["target"], child(ptr, "target"));
            s.source = spans[i].contains("source") ? get_span(spans[i]["source"], child(ptr, "source"))
                                                   : s.target;
            plan.spans.push_back(s);
        }
    }

    if (doc.contains("softbox")) {
        const json& sb = doc["softbox"];
        if (sb.is_array()) {
            if (sb.size() != 4) fail("/softbox", "expected [h1, h2, w1, w2]");
            std::array<double, 4> f{};
            for (std::size_t i = 0; i < 4; ++i) {
                if (!sb[i].is_number()) fail(child("/softbox", i), "expected a number");
                f[i] = sb[i].get<double>();
            }
            try {
                plan.softbox = Softbox::rect(f);
            } catch (const Error& e) {
                fail("/softbox", e.what());
            }
        } else if (sb.is_object()) {
            require_object(sb, "/softbox", {"pgm"});
            if (!sb.contains("pgm") || !sb["pgm"].is_string())
                fail("/softbox/pgm", "expected a path string");
            const std::filesystem::path given = sb["pgm"].get<std::string>();
            pf.softbox_pgm = std::filesystem::absolute(given.is_absolute() ? given : base_dir / given);
            try {
                plan.softbox = Softbox::bitmap(binarize(read_pgm(pf.softbox_pgm)));
            } catch (const Error& e) {
                fail("/softbox/pgm", e.what());
            }
        } else {
            fail("/softbox", "expected [h1, h2, w1, w2] or {\"pgm\": path}");
        }
    }

    if (doc.contains("window")) {
        const json& w = doc["window"];
        if (!w.is_array() || w.size() != 2) fail("/window", "expected [lambda1, lambda2]");
        cfg.lambda1 = static_cast<int>(get_int(w[0], "/window/0", 0, 1 << 20));
        cfg.lambda2 = static_cast<int>(get_int(w[1], "/window/1", 0, 1 << 20));
    }

    if (doc.contains("scheduler")) {
        const json& s = doc["scheduler"];
        require_object(s, "/scheduler", {"T", "g", "c", "d", "d_k", "d_v", "d_aug", "n_layers",
                                         "heads", "seed", "model_seed"});
        const auto dim = [&](const char* key, std::size_t& out, long long hi) {
            if (s.contains(key))
                out = static_cast<std::size_t>(get_int(s[key], child("/scheduler", key), 1, hi));
        };
        if (s.contains("T")) cfg.steps = static_cast<int>(get_int(s["T"], "/scheduler/T", 1, 100000));
        dim("g", cfg.grid, 1024);
        dim("c", cfg.channels, 4096);
        dim("d", cfg.embed, 4096);
        dim("d_k", cfg.d_k, 4096);
        dim("d_v", cfg.d_v, 4096);
        dim("d_aug", cfg.d_aug, 4096);
        dim("n_layers", cfg.layers, 1024);
        dim("heads", cfg.heads, 4096);
        if (s.contains("seed")) cfg.seed = get_seed(s["seed"], "/scheduler/seed");
        if (s.contains("model_seed")) cfg.model_seed = get_seed(s["model_seed"], "/scheduler/model_seed");
    }

    if (doc.contains("capture")) {
        const json& c = doc["capture"];
        if (!c.is_array()) fail("/capture", "expected an array");
        for (std::size_t i = 0; i < c.size(); ++i) {
            const std::string ptr = child("/capture", i);
            CaptureRequest req;
            if (c[i].is_array()) {
                if (c[i].size() != 2) fail(ptr, "expected [step, layer]");
                req.step = static_cast<int>(get_int(c[i][0], child(ptr, 0), 0, 1 << 20));
                req.layer = static_cast<std::size_t>(get_int(c[i][1], child(ptr, 1), 0, 1 << 20));
            } else {
                require_object(c[i], ptr, {"step", "layer", "slot"});
                if (!c[i].contains("step")) fail(child(ptr, "step"), "required");
                req.step = static_cast<int>(get_int(c[i]["step"], child(ptr, "step"), 0, 1 << 20));
                if (c[i].contains("layer"))
                    req.layer = static_cast<std::size_t>(
                        get_int(c[i]["layer"], child(ptr, "layer"), 0, 1 << 20));
                if (c[i].contains("slot")) {
                    const json& sl = c[i]["slot"];
                    if (sl.is_number_integer()) {
                        const auto k = static_cast<std::size_t>(get_int(sl, child(ptr, "slot"), 0, 1 << 20));
                        req.slots = SlotSpan{k, k + 1};
                    } else {
                        req.slots = get_span(sl, child(ptr, "slot"));
                    }
                }
            }
            cfg.capture.push_back(req);
        }
    }

    if (doc.contains("flags")) {
        const json& f = doc["flags"];
        require_object(f, "/flags", {"swap_aug", "swap_eos", "outside_uses_plain_source", "use_aug",
                                     "freeze_mask_at_step"});
        if (f.contains("swap_aug")) plan.swap_aug = get_bool(f["swap_aug"], "/flags/swap_aug");
        if (f.contains("swap_eos")) plan.swap_eos = get_bool(f["swap_eos"], "/flags/swap_eos");
        if (f.contains("outside_uses_plain_source"))
            plan.outside_uses_plain_source =
                get_bool(f["outside_uses_plain_source"], "/flags/outside_uses_plain_source");
        if (f.contains("use_aug")) cfg.use_aug = get_bool(f["use_aug"], "/flags/use_aug");
        if (f.contains("freeze_mask_at_step") && !f["freeze_mask_at_step"].is_null())
            cfg.freeze_mask_at_step = static_cast<int>(
                get_int(f["freeze_mask_at_step"], "/flags/freeze_mask_at_step", 0, 1 << 20));
    }

    // Engine-level checks report fields as "name: reason"; prefix to make
    // them JSON pointers.
    try {
        validate(cfg);
        validate(plan, embed_plan(plan, cfg), cfg);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("/") + e.what());
    } catch (const Error& e) {
        throw ConfigError(std::string("/: ") + e.what());
    }
    return pf;
}

PlanFile load_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("/: cannot open plan file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("/: malformed JSON: ") + e.what());
    }
    return parse_plan(doc, path.parent_path());
}

json resolved_plan(const PlanFile& pf) {
    const EditPlan& plan = pf.plan;
    const SchedulerConfig& cfg = pf.config;
    json doc;
    json src = {{"words", plan.source_words}, {"L", cfg.length}};
    json mask = json::array();
    for (const SlotSpan& s : plan.source_mask) mask.push_back(span_json(s));
    src["mask"] = mask;
    doc["prompt_source"] = src;
    doc["prompt_target"] = {{"words", plan.target_words}, {"L", cfg.length}};
    doc["task"] = std::string(to_string(plan.task));
    json spans = json::array();
    for (const SpanSpec& s : plan.spans)
        spans.push_back({{"kind", s.kind == SpanKind::Object ? "object" : "style"},
                         {"source", span_json(s.source)},
                         {"target", span_json(s.target)}});
    doc["spans"] = spans;
    if (plan.softbox) {
        if (plan.softbox->kind() == Softbox::Kind::Rect) {
            const auto& f = plan.softbox->fractions();
            doc["softbox"] = json::array({f[0], f[1], f[2], f[3]});
        } else {
            doc["softbox"] = {{"pgm", pf.softbox_pgm.string()}};
        }
    }
    doc["window"] = json::array({cfg.lambda1, cfg.lambda2});
    doc["scheduler"] = {{"T", cfg.steps},         {"g", cfg.grid},          {"c", cfg.channels},
                        {"d", cfg.embed},         {"d_k", cfg.d_k},         {"d_v", cfg.d_v},
                        {"d_aug", cfg.d_aug},     {"n_layers", cfg.layers}, {"heads", cfg.heads},
                        {"seed", cfg.seed},       {"model_seed", cfg.model_seed}};
    json capture = json::array();
    for (const CaptureRequest& c : cfg.capture) {
        json entry = {{"step", c.step}, {"layer", c.layer}};
        if (c.slots) entry["slot"] = span_json(*c.slots);
        capture.push_back(entry);
    }
    doc["capture"] = capture;
    doc["flags"] = {{"swap_aug", plan.swap_aug},
                    {"swap_eos", plan.swap_eos},
                    {"outside_uses_plain_source", plan.outside_uses_plain_source},
                    {"use_aug", cfg.use_aug},
                    {"freeze_mask_at_step", cfg.freeze_mask_at_step
                                                ? json(*cfg.freeze_mask_at_step)
                                                : json(nullptr)}};
    return doc;
}

}  // namespace psp
