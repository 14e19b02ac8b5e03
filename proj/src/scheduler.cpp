#include "psp/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "psp/error.hpp"
#include "psp/kernels.hpp"
#include "psp/rng.hpp"

namespace psp {

namespace {

[[noreturn]] void config_fail(const std::string& field, const std::string& msg) {
    throw ConfigError(field + ": " + msg);
}

}  // namespace

void validate(const SchedulerConfig& cfg) {
    if (cfg.steps < 1) config_fail("scheduler.T", "must be at least 1");
    if (cfg.lambda1 < 0 || cfg.lambda1 > cfg.lambda2 || cfg.lambda2 > cfg.steps)
        config_fail("window", "need 0 <= lambda1 <= lambda2 <= T, got [" +
                                  std::to_string(cfg.lambda1) + ", " +
                                  std::to_string(cfg.lambda2) + "] with T=" +
                                  std::to_string(cfg.steps));
    const std::pair<const char*, std::size_t> dims[] = {
        {"scheduler.g", cfg.grid},       {"scheduler.c", cfg.channels},
        {"scheduler.d", cfg.embed},      {"scheduler.d_k", cfg.d_k},
        {"scheduler.d_v", cfg.d_v},      {"scheduler.d_aug", cfg.d_aug},
        {"scheduler.n_layers", cfg.layers}, {"scheduler.heads", cfg.heads}};
    for (const auto& [name, value] : dims)
        if (value < 1) config_fail(name, "must be at least 1");
    if (cfg.length < 2) config_fail("scheduler.L", "must be at least 2");
    if (cfg.d_k % cfg.heads != 0 || cfg.d_v % cfg.heads != 0)
        config_fail("scheduler.heads", "must divide d_k and d_v");
    for (std::size_t i = 0; i < cfg.capture.size(); ++i) {
        const CaptureRequest& c = cfg.capture[i];
        const std::string field = "capture/" + std::to_string(i);
        if (c.step < 1 || c.step > cfg.steps)
            config_fail(field, "step " + std::to_string(c.step) + " outside [1, T]");
        if (c.layer >= cfg.layers)
            config_fail(field, "layer " + std::to_string(c.layer) + " outside [0, n_layers)");
    }
    if (cfg.freeze_mask_at_step &&
        (*cfg.freeze_mask_at_step < 1 || *cfg.freeze_mask_at_step > cfg.steps))
        config_fail("flags.freeze_mask_at_step", "must lie in [1, T]");
}

std::string_view to_string(Task task) {
    switch (task) {
        case Task::None: return "none";
        case Task::Replace: return "replace";
        case Task::Add: return "add";
        case Task::Style: return "style";
    }
    return "?";
}

Task task_from_string(std::string_view name) {
    if (name == "none") return Task::None;
    if (name == "replace") return Task::Replace;
    if (name == "add") return Task::Add;
    if (name == "style") return Task::Style;
    config_fail("task", "unknown task '" + std::string(name) + "'");
}

Prompts embed_plan(const EditPlan& plan, const SchedulerConfig& cfg) {
    Prompts p;
    p.source = mask_slots(embed_prompt(plan.source_words, cfg.length, cfg.embed, cfg.model_seed),
                          plan.source_mask);
    const bool reuse_source = plan.task == Task::None && plan.target_words.empty();
    p.target = embed_prompt(reuse_source ? plan.source_words : plan.target_words, cfg.length,
                            cfg.embed, cfg.model_seed);
    return p;
}

std::vector<SpanSpec> style_spans(const EditPlan& plan, const Prompts& prompts) {
    std::vector<SpanSpec> spans = plan.spans;
    if (plan.swap_eos && !covers_eos(spans, prompts.source.layout)) {
        const std::size_t se = prompts.source.layout.eos_index();
        const std::size_t te = prompts.target.layout.eos_index();
        spans.push_back({{se, se + 1}, {te, te + 1}, SpanKind::Style});
    }
    return spans;
}

void validate(const EditPlan& plan, const Prompts& prompts, const SchedulerConfig& cfg) {
    const auto check_spans = [&](SpanKind want) {
        for (std::size_t i = 0; i < plan.spans.size(); ++i) {
            const SpanSpec& s = plan.spans[i];
            const std::string field = "spans/" + std::to_string(i);
            if (s.kind != want)
                config_fail(field, std::string("task '") + std::string(to_string(plan.task)) +
                                       "' needs " + (want == SpanKind::Object ? "object" : "style") +
                                       " spans");
            try {
                validate_span(s, prompts.source.layout, prompts.target.layout);
            } catch (const Error& e) {
                config_fail(field, e.what());
            }
        }
    };

    if ((plan.task == Task::Replace || plan.task == Task::Add) && !plan.softbox)
        config_fail("softbox", "required for task '" + std::string(to_string(plan.task)) + "'");
    if (plan.softbox && plan.softbox->kind() == Softbox::Kind::Bitmap &&
        plan.softbox->bitmap_values().rows() != cfg.grid)
        config_fail("softbox", "bitmap must be " + std::to_string(cfg.grid) + "x" +
                                   std::to_string(cfg.grid));

    switch (plan.task) {
        case Task::None: break;
        case Task::Replace:
            if (plan.spans.empty()) config_fail("spans", "replace needs at least one span");
            check_spans(SpanKind::Object);
            break;
        case Task::Add: {
            if (plan.spans.size() != 1) config_fail("spans", "add needs exactly one span");
            const SpanSpec& s = plan.spans[0];
            if (s.kind != SpanKind::Object) config_fail("spans/0", "add needs an object span");
            const TokenLayout& t = prompts.target.layout;
            if (s.target.empty() && !s.source.empty())
                config_fail("spans/0", "add inserts the target span; source must be empty");
            if (s.target.begin > s.target.end || s.target.end > t.length() ||
                s.target.contains(0) || s.target.contains(t.eos_index()))
                config_fail("spans/0", "target span must lie on target WORD slots");
            if (s.target.size() > prompts.source.layout.pad_count())
                config_fail("spans/0", "padding overflow: need " + std::to_string(s.target.size()) +
                                           ", have " +
                                           std::to_string(prompts.source.layout.pad_count()));
            break;
        }
        case Task::Style:
            if (plan.target_words.empty()) config_fail("prompt_target", "style needs target words");
            check_spans(SpanKind::Style);
            if (style_spans(plan, prompts).empty())
                config_fail("spans", "style needs at least one span or swap_eos");
            break;
    }
}

Tensor init_latent(const SchedulerConfig& cfg) {
    return gaussian_tensor({cfg.grid, cfg.grid, cfg.channels}, derive_key(cfg.seed, "latent"));
}

bool in_window(int t, int lambda1, int lambda2) noexcept { return lambda1 < t && t < lambda2; }

Generator::Generator(Prompts prompts, EditPlan plan, SchedulerConfig cfg)
    : prompts_(std::move(prompts)), plan_(std::move(plan)), cfg_(std::move(cfg)) {
    validate(cfg_);
    validate(plan_, prompts_, cfg_);
    if (prompts_.source.width() != cfg_.embed || prompts_.target.width() != cfg_.embed)
        throw ConfigError("scheduler.d: prompt embeddings do not match the configured width");

    const LayerDims dims{cfg_.channels, cfg_.embed, cfg_.d_k, cfg_.d_v, cfg_.heads};
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        layers_.push_back(make_layer_weights(dims, cfg_.model_seed, l));
        source_proj_.push_back(project(prompts_.source, layers_.back()));
        target_proj_.push_back(project(prompts_.target, layers_.back()));
    }
    if (plan_.task == Task::Style) style_spans_ = style_spans(plan_, prompts_);

    source_pooled_ = prompts_.source;
    std::fill(source_pooled_.mask.begin(), source_pooled_.mask.end(), false);
    aug_output_ = gaussian_tensor({cfg_.d_aug, cfg_.channels},
                                  derive_key(cfg_.model_seed, "aug:output"),
                                  1.0f / std::sqrt(static_cast<float>(cfg_.d_aug)));
    box_raster_ = plan_.softbox ? rasterize(*plan_.softbox, cfg_.grid)
                                : Tensor({cfg_.pixels()}, 1.0f);
    frozen_.resize(cfg_.layers);

    for (std::size_t i = 0; i < cfg_.capture.size(); ++i) {
        const SlotSpan s = capture_slots(cfg_.capture[i]);
        const TokenLayout& layout = prompts_.source.layout;
        for (std::size_t k = s.begin; k < s.end; ++k) {
            if (k >= layout.length() || layout.roles[k] != SlotRole::Word ||
                prompts_.source.mask[k])
                config_fail("capture/" + std::to_string(i),
                            "slot " + std::to_string(k) + " is not an unmasked WORD slot");
        }
        if (s.empty()) config_fail("capture/" + std::to_string(i), "empty slot range");
    }
}

bool Generator::psp_active(int t) const noexcept {
    return plan_.task != Task::None && in_window(t, cfg_.lambda1, cfg_.lambda2);
}

SlotSpan Generator::capture_slots(const CaptureRequest& req) const {
    if (req.slots) return *req.slots;
    if (plan_.task == Task::Replace && !plan_.spans.empty()) return plan_.spans.front().source;
    if (prompts_.source.layout.words.empty())
        config_fail("capture", "source prompt has no WORD slot to capture");
    return {1, 2};
}

Tensor Generator::replace_mask(const Tensor& q, std::size_t layer, int t, LayerTrace& trace) {
    if (frozen_[layer]) {
        trace.mask_degenerate = frozen_[layer]->degenerate;
        return frozen_[layer]->values;
    }
    ObjectMask combined{Tensor({cfg_.pixels()}), true};
    for (const SpanSpec& s : plan_.spans) {
        const AttentionMap map = object_attention_map(q, source_proj_[layer], s.source, cfg_.heads);
        const ObjectMask m = object_mask(map.values, *plan_.softbox, cfg_.grid);
        for (std::size_t i = 0; i < m.values.size(); ++i)
            combined.values[i] = std::max(combined.values[i], m.values[i]);
        combined.degenerate = combined.degenerate && m.degenerate;
    }
    trace.mask_degenerate = combined.degenerate;
    if (cfg_.freeze_mask_at_step && t <= *cfg_.freeze_mask_at_step) frozen_[layer] = combined;
    return combined.values;
}

Tensor Generator::denoise_step(const Tensor& z, int t, const StepObserver& observer) {
    if (t < 1 || t > cfg_.steps)
        throw IndexError("step " + std::to_string(t) + " outside [1, " +
                         std::to_string(cfg_.steps) + "]");
    const std::size_t n_pix = cfg_.pixels();
    if (z.size() != n_pix * cfg_.channels)
        throw ShapeError("latent " + shape_to_string(z.shape()) + " does not match the grid");

    const bool psp = psp_active(t);
    StepEvent event{t, psp, {}, false};
    event.style_without_eos = psp && plan_.task == Task::Style &&
                              !covers_eos(style_spans_, prompts_.source.layout);

    const Tensor z_flat = z.reshaped({n_pix, cfg_.channels});
    Tensor x = z_flat;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        LayerTrace trace;
        const Tensor q = matmul(x, layers_[l].query);
        Tensor attn({n_pix, cfg_.d_v});
        if (!psp) {
            if (prompts_.source.all_masked()) {
                // Every slot masked: only the aug embedding conditions the step.
                if (!cfg_.use_aug)
                    throw AttentionError("empty attention support: every slot is masked and aug is off");
            } else {
                AttentionBundle b = base_attention(q, source_proj_[l], cfg_.heads);
                attn = std::move(b.out);
                if (cfg_.record_weights) trace.weights = std::move(b.weights);
            }
        } else {
            switch (plan_.task) {
                case Task::Replace: {
                    const Tensor m = replace_mask(q, l, t, trace);
                    for (float v : m.data()) trace.mask_area += v;
                    attn = replace_attention(q, source_proj_[l], target_proj_[l], plan_.spans, m,
                                             cfg_.heads, plan_.outside_uses_plain_source);
                    break;
                }
                case Task::Add:
                    for (float v : box_raster_.data()) trace.mask_area += v;
                    attn = add_attention(q, source_proj_[l], target_proj_[l],
                                         plan_.spans.front().target, box_raster_, cfg_.heads);
                    break;
                case Task::Style:
                    attn = style_attention(q, source_proj_[l], target_proj_[l], style_spans_,
                                           cfg_.heads);
                    break;
                case Task::None: break;
            }
        }

        for (const CaptureRequest& req : cfg_.capture) {
            if (req.step != t || req.layer != l) continue;
            const SlotSpan slots = capture_slots(req);
            CaptureArtifact art{t, l, slots, object_attention_map(q, source_proj_[l], slots, cfg_.heads),
                                {}, box_raster_};
            art.mask = plan_.softbox ? object_mask(art.map.values, *plan_.softbox, cfg_.grid)
                                     : object_mask(art.map.values, Softbox::rect(0, 1, 0, 1),
                                                   cfg_.grid);
            captures_.push_back(std::move(art));
        }

        const Tensor update = matmul(attn, layers_[l].output);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += update[i];
        event.layers.push_back(std::move(trace));
    }

    Tensor eps = x;
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] -= z_flat[i];
    if (cfg_.use_aug) {
        const bool target_aug = psp && plan_.task == Task::Style && plan_.swap_aug;
        const AugEmbedding aug =
            build_aug(target_aug ? prompts_.target : source_pooled_, t, cfg_.d_aug, cfg_.model_seed);
        const Tensor shift = matmul(aug.vector.reshaped({1, cfg_.d_aug}), aug_output_);
        for (std::size_t i = 0; i < n_pix; ++i)
            for (std::size_t c = 0; c < cfg_.channels; ++c) eps.at(i, c) += shift[c];
    }

    const float sigma = static_cast<float>(t) / static_cast<float>(cfg_.steps);
    Tensor next(z.shape());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = z[i] - sigma * eps[i];

    if (observer) observer(event);
    return next;
}

GenerationResult Generator::run(const StepObserver& observer) {
    captures_.clear();
    std::fill(frozen_.begin(), frozen_.end(), std::nullopt);
    GenerationResult result;
    Tensor z = init_latent(cfg_);
    for (int t = cfg_.steps; t >= 1; --t) {
        z = denoise_step(z, t, observer);
        ++result.steps_run;
        result.psp_steps += psp_active(t) ? 1 : 0;
    }
    result.latent = std::move(z);
    result.captures = std::move(captures_);
    captures_.clear();
    return result;
}

GenerationResult generate(const Prompts& prompts, const EditPlan& plan,
                          const SchedulerConfig& cfg, const StepObserver& observer) {
    Generator gen(prompts, plan, cfg);
    return gen.run(observer);
}

}  // namespace psp
