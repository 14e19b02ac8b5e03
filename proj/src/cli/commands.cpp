#include "psp/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "psp/error.hpp"
#include "psp/kernels.hpp"
#include "psp/pgm.hpp"
#include "psp/plan_file.hpp"
#include "psp/scheduler.hpp"
#include "psp/sha256.hpp"
#include "psp/tensor_io.hpp"

namespace psp::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

// Line-delimited JSON events on stdout.
class EventLog {
public:
    EventLog(std::ostream& out, bool quiet) : out_(out), quiet_(quiet) {}

    void emit(const json& event) {
        if (!quiet_) out_ << event.dump() << '\n';
    }

private:
    std::ostream& out_;
    bool quiet_;
};

std::string config_message(const ConfigError& e) {
    const std::string what = e.what();
    return what.starts_with("/") || what.starts_with("--") ? what : "/" + what;
}

PlanFile load_with_overrides(const std::string& path, const GlobalOptions& g) {
    PlanFile pf = load_plan(path);
    if (g.seed) pf.config.seed = *g.seed;
    return pf;
}

fs::path require_out_dir(const std::string& positional, const GlobalOptions& g) {
    const std::string dir = !positional.empty() ? positional : g.out;
    if (dir.empty()) throw ConfigError("/: an output directory is required (--out)");
    fs::create_directories(dir);
    return dir;
}

// Writes a file and records its digest under `name` in the manifest outputs.
void write_output(const fs::path& dir, const std::string& name, std::span<const std::uint8_t> bytes,
                  json& outputs) {
    write_file_bytes(dir / name, bytes);
    outputs[name] = sha256_hex(bytes);
}

void write_manifest(const fs::path& dir, const PlanFile& pf, const json& outputs, json extra) {
    json manifest = std::move(extra);
    manifest["format"] = "psp-manifest-1";
    manifest["plan"] = resolved_plan(pf);
    manifest["outputs"] = outputs;
    if (!pf.softbox_pgm.empty())
        manifest["inputs"] = {{"softbox_pgm", sha256_file(pf.softbox_pgm)}};
    const std::string text = manifest.dump(2) + "\n";
    write_file_bytes(dir / "manifest.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json step_event(const StepEvent& ev) {
    json areas = json::array();
    json degenerate = json::array();
    for (const LayerTrace& l : ev.layers) {
        areas.push_back(l.mask_area);
        degenerate.push_back(l.mask_degenerate);
    }
    return {{"event", "step"},
            {"t", ev.t},
            {"branch", ev.psp ? "psp" : "base"},
            {"mask_area", areas},
            {"mask_degenerate", degenerate}};
}

std::string capture_stem(const CaptureArtifact& a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "capture_t%02d_l%zu", a.step, a.layer);
    return buf;
}

int cmd_edit(const std::string& plan_path, const std::string& out_arg, const GlobalOptions& g,
             std::ostream& out) {
    PlanFile pf = load_with_overrides(plan_path, g);
    const fs::path dir = require_out_dir(out_arg, g);
    EventLog log(out, g.quiet);

    Generator gen(embed_plan(pf.plan, pf.config), pf.plan, pf.config);
    const SchedulerConfig& cfg = pf.config;
    log.emit({{"event", "start"},
              {"task", to_string(pf.plan.task)},
              {"T", cfg.steps},
              {"window", {cfg.lambda1, cfg.lambda2}},
              {"seed", cfg.seed}});
    if (pf.plan.task == Task::Style &&
        !covers_eos(style_spans(pf.plan, gen.prompts()), gen.prompts().source.layout))
        log.emit({{"event", "warning"}, {"message", "style spans do not include EOS"}});

    const GenerationResult result = gen.run([&](const StepEvent& ev) { log.emit(step_event(ev)); });

    json outputs = json::object();
    write_output(dir, "z0.pspt", encode_tensor(result.latent), outputs);
    const std::size_t g_side = cfg.grid;
    for (const CaptureArtifact& a : result.captures) {
        const std::string stem = capture_stem(a);
        write_output(dir, stem + "_map.pspt", encode_tensor(a.map.values), outputs);
        write_output(dir, stem + "_map.pgm", encode_pgm(to_gray(a.map.values, g_side, g_side)), outputs);
        write_output(dir, stem + "_mask.pspt", encode_tensor(a.mask.values), outputs);
        write_output(dir, stem + "_mask.pgm", encode_pgm(to_gray(a.mask.values, g_side, g_side)),
                     outputs);
        write_output(dir, stem + "_box.pspt", encode_tensor(a.box), outputs);
    }
    write_manifest(dir, pf, outputs,
                   {{"command", "edit"}, {"steps_run", result.steps_run}, {"psp_steps", result.psp_steps}});
    log.emit({{"event", "done"}, {"z0_sha256", outputs["z0.pspt"]}, {"psp_steps", result.psp_steps}});
    return kOk;
}

int cmd_analyze(const std::string& plan_path, const std::string& mask_spec, bool no_aug,
                const std::string& out_arg, const GlobalOptions& g, std::ostream& out) {
    PlanFile pf = load_with_overrides(plan_path, g);
    std::vector<MaskSpan> spans;
    try {
        spans = parse_mask_spec(mask_spec);
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("--mask: ") + e.what());
    }
    SchedulerConfig& cfg = pf.config;
    for (const MaskSpan& s : spans) {
        if (s.end > cfg.length)
            throw ConfigError("--mask: span " + std::to_string(s.begin) + "-" +
                              std::to_string(s.end) + " exceeds L=" + std::to_string(cfg.length));
        pf.plan.source_mask.push_back({s.begin, s.end});
    }
    pf.plan.task = Task::None;
    pf.plan.spans.clear();
    cfg.capture.clear();
    cfg.use_aug = !no_aug;
    cfg.record_weights = true;

    Prompts prompts = embed_plan(pf.plan, cfg);
    if (prompts.source.all_masked() && !cfg.use_aug)
        throw ConfigError("--mask: empty attention support: every slot is masked and --no-aug "
                          "leaves nothing to condition on");
    const fs::path dir = require_out_dir(out_arg, g);
    EventLog log(out, g.quiet);
    const std::vector<bool> masked = prompts.source.mask;
    const std::size_t L = cfg.length;

    Tensor colsums({static_cast<std::size_t>(cfg.steps), cfg.layers, L});
    float max_masked = 0.0f;
    bool attention_skipped = false;
    Generator gen(std::move(prompts), pf.plan, cfg);
    const GenerationResult result = gen.run([&](const StepEvent& ev) {
        const auto step_row = static_cast<std::size_t>(cfg.steps - ev.t);
        for (std::size_t l = 0; l < ev.layers.size(); ++l) {
            const Tensor& w = ev.layers[l].weights;
            float step_max = 0.0f;
            if (w.rank() != 2) {
                attention_skipped = true;
            } else {
                float* sums = colsums.data().data() + (step_row * cfg.layers + l) * L;
                for (std::size_t i = 0; i < w.rows(); ++i)
                    for (std::size_t j = 0; j < L; ++j) {
                        sums[j] += w.at(i, j);
                        if (masked[j]) step_max = std::max(step_max, w.at(i, j));
                    }
            }
            max_masked = std::max(max_masked, step_max);
            log.emit({{"event", "weights"},
                      {"t", ev.t},
                      {"layer", l},
                      {"attention", w.rank() == 2 ? "computed" : "skipped"},
                      {"masked_max", step_max}});
        }
    });

    json outputs = json::object();
    write_output(dir, "z0.pspt", encode_tensor(result.latent), outputs);
    write_output(dir, "weights_colsum.pspt", encode_tensor(colsums), outputs);
    json masked_json = json::array();
    for (const MaskSpan& s : spans) masked_json.push_back({s.begin, s.end});
    const json summary = {{"masked_slots", masked_json},
                          {"use_aug", cfg.use_aug},
                          {"attention_skipped", attention_skipped},
                          {"max_masked_weight", max_masked}};
    const std::string text = summary.dump(2) + "\n";
    write_output(dir, "analysis.json",
                 std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), outputs);
    write_manifest(dir, pf, outputs, {{"command", "analyze"}, {"steps_run", result.steps_run}});
    log.emit({{"event", "done"}, {"max_masked_weight", max_masked}, {"z0_sha256", outputs["z0.pspt"]}});
    return kOk;
}

int cmd_attnmap(const std::string& plan_path, int step, std::size_t layer, std::size_t slot,
                const std::string& out_pgm, const GlobalOptions& g, std::ostream& out) {
    PlanFile pf = load_with_overrides(plan_path, g);
    SchedulerConfig& cfg = pf.config;
    if (step < 1 || step > cfg.steps)
        throw ConfigError("--step: " + std::to_string(step) + " outside [1, " +
                          std::to_string(cfg.steps) + "]");
    if (layer >= cfg.layers)
        throw ConfigError("--layer: " + std::to_string(layer) + " outside [0, " +
                          std::to_string(cfg.layers) + ")");
    if (slot >= cfg.length)
        throw ConfigError("--slot: " + std::to_string(slot) + " outside [0, " +
                          std::to_string(cfg.length) + ")");
    cfg.capture = {CaptureRequest{step, layer, SlotSpan{slot, slot + 1}}};

    Generator gen(embed_plan(pf.plan, cfg), pf.plan, cfg);
    const GenerationResult result = gen.run();
    const CaptureArtifact& art = result.captures.at(0);

    fs::path pgm_path = out_pgm.empty() ? fs::path(g.out) / "attnmap.pgm" : fs::path(out_pgm);
    if (pgm_path.has_parent_path()) fs::create_directories(pgm_path.parent_path());
    fs::path raw_path = pgm_path;
    raw_path.replace_extension(".pspt");
    write_pgm(to_gray(art.map.values, cfg.grid, cfg.grid), pgm_path);
    write_tensor(art.map.values, raw_path);
    EventLog(out, g.quiet)
        .emit({{"event", "attnmap"},
               {"step", step},
               {"layer", layer},
               {"slot", slot},
               {"degenerate", art.map.degenerate},
               {"pgm", pgm_path.string()},
               {"pspt", raw_path.string()}});
    return kOk;
}

int cmd_otsu(const std::string& map_path, const std::string& out_pgm, const GlobalOptions& g,
             std::ostream& out) {
    Tensor map;
    try {
        map = read_tensor(map_path);
    } catch (const Error& e) {
        throw ConfigError(std::string("map: ") + e.what());
    }
    std::size_t width = 0, height = 0;
    if (map.rank() == 1) {
        width = map.dim(0);
        height = 1;
    } else if (map.rank() == 2) {
        height = map.dim(0);
        width = map.dim(1);
    } else {
        throw ConfigError("map: expected a 1-D or 2-D tensor, got " + shape_to_string(map.shape()));
    }
    for (float v : map.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("map: values must lie in [0, 1]");

    constexpr std::size_t kBins = 256;
    const OtsuResult res = otsu_threshold(map.reshaped({map.size()}), kBins);

    fs::path pgm_path = out_pgm.empty() ? fs::path(g.out) / "otsu_mask.pgm" : fs::path(out_pgm);
    if (pgm_path.has_parent_path()) fs::create_directories(pgm_path.parent_path());
    write_pgm(to_gray(res.binary, width, height), pgm_path);

    // Printed regardless of --quiet: this line is the command's result.
    out << json{{"threshold", res.threshold},
                {"threshold_index", res.threshold_index},
                {"bins", kBins},
                {"degenerate", res.degenerate},
                {"class0", {{"count", res.count0}, {"mean", res.mean0}}},
                {"class1", {{"count", res.count1}, {"mean", res.mean1}}}}
               .dump()
        << '\n';
    return kOk;
}

void apply_thread_env() {
    if (const char* env = std::getenv("PSP_THREADS")) {
        int n = 0;
        const std::string_view s(env);
        if (std::from_chars(s.data(), s.data() + s.size(), n).ec == std::errc{} && n >= 0)
            set_num_threads(n);
    }
}

}  // namespace

std::vector<MaskSpan> parse_mask_spec(const std::string& spec) {
    std::vector<MaskSpan> spans;
    if (spec.empty()) throw ConfigError("empty mask spec");
    std::size_t pos = 0;
    const auto number = [&](std::string_view part) {
        std::size_t v = 0;
        const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc{} || p != part.data() + part.size() || part.empty())
            throw ConfigError("cannot parse '" + std::string(part) + "' in mask spec");
        return v;
    };
    while (pos <= spec.size()) {
        const std::size_t comma = std::min(spec.find(',', pos), spec.size());
        const std::string_view item(spec.data() + pos, comma - pos);
        const std::size_t dash = item.find('-');
        MaskSpan s{};
        if (dash == std::string_view::npos) {
            s.begin = number(item);
            s.end = s.begin + 1;
        } else {
            s.begin = number(item.substr(0, dash));
            s.end = number(item.substr(dash + 1));
        }
        if (s.begin >= s.end)
            throw ConfigError("mask span '" + std::string(item) + "' must satisfy i < j");
        spans.push_back(s);
        pos = comma + 1;
    }
    return spans;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    apply_thread_env();

    CLI::App app{"Cross-attention prompt editing on a toy latent diffusion stack",
                 "psp"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Override the plan's noise seed");
    app.add_option("--out", g.out, "Output directory (or file for attnmap/otsu)");
    app.add_flag("--quiet", g.quiet, "Suppress JSON event lines");

    std::string plan_path, out_arg, mask_spec, map_path;
    bool no_aug = false;
    int step = 0;
    std::size_t layer = 0, slot = 0;

    auto* edit = app.add_subcommand("edit", "Run an edit plan and write z0, captures and a manifest");
    edit->add_option("plan", plan_path, "Edit-plan JSON")->required();
    edit->add_option("out_dir", out_arg, "Output directory");

    auto* analyze = app.add_subcommand("analyze", "Baseline generation with slot masking");
    analyze->add_option("plan", plan_path, "Edit-plan JSON")->required();
    analyze->add_option("--mask", mask_spec, "Slots to mask, e.g. 0-1,6-9")->required();
    analyze->add_flag("--no-aug", no_aug, "Disable the aug embedding");
    analyze->add_option("out_dir", out_arg, "Output directory");

    auto* attnmap = app.add_subcommand("attnmap", "Export one normalized attention map");
    attnmap->add_option("plan", plan_path, "Edit-plan JSON")->required();
    attnmap->add_option("--step", step, "Time step t in [1, T]")->required();
    attnmap->add_option("--layer", layer, "Cross-attention block")->required();
    attnmap->add_option("--slot", slot, "Prompt slot (WORD)")->required();
    attnmap->add_option("out_pgm", out_arg, "Output PGM path (raw .pspt written alongside)");

    auto* otsu = app.add_subcommand("otsu", "Otsu-threshold a PSPT map in [0, 1]");
    otsu->add_option("map", map_path, "Input PSPT tensor")->required();
    otsu->add_option("out_pgm", out_arg, "Output mask PGM");

    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kOk;
        }
        err << "error: " << e.what() << '\n';
        return kInputError;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (*edit) return cmd_edit(plan_path, out_arg, g, out);
        if (*analyze) return cmd_analyze(plan_path, mask_spec, no_aug, out_arg, g, out);
        if (*attnmap) return cmd_attnmap(plan_path, step, layer, slot, out_arg, g, out);
        if (*otsu) return cmd_otsu(map_path, out_arg, g, out);
    } catch (const ConfigError& e) {
        err << "error: invalid input at " << config_message(e) << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kEngineError;
    }
    return kInputError;
}

}  // namespace psp::cli
