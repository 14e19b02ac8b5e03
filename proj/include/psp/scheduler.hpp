#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "psp/attention.hpp"
#include "psp/maskgen.hpp"
#include "psp/prompt.hpp"
#include "psp/tensor.hpp"

namespace psp {

struct CaptureRequest {
    int step = 0;
    std::size_t layer = 0;
    std::optional<SlotSpan> slots;  // default: first object span, else slot 1
};

struct SchedulerConfig {
    int steps = 30;
    int lambda1 = 0;
    int lambda2 = 0;
    std::size_t grid = 16;
    std::size_t channels = 4;
    std::size_t length = 77;
    std::size_t embed = 32;
    std::size_t d_k = 16;
    std::size_t d_v = 16;
    std::size_t d_aug = 8;
    std::size_t layers = 2;
    std::size_t heads = 1;
    std::uint64_t seed = 0;        // initial noise
    std::uint64_t model_seed = 0;  // embedding table and layer weights
    std::vector<CaptureRequest> capture;
    bool use_aug = true;
    std::optional<int> freeze_mask_at_step;
    bool record_weights = false;

    std::size_t pixels() const noexcept { return grid * grid; }
};

// Throws ConfigError naming the offending field.
void validate(const SchedulerConfig& cfg);

enum class Task { None, Replace, Add, Style };

std::string_view to_string(Task task);
Task task_from_string(std::string_view name);

struct EditPlan {
    Task task = Task::None;
    std::vector<std::string> source_words;
    std::vector<std::string> target_words;
    std::vector<SpanSpec> spans;
    std::optional<Softbox> softbox;
    std::vector<SlotSpan> source_mask;  // slots removed from source attention
    bool swap_aug = true;
    bool swap_eos = true;
    bool outside_uses_plain_source = false;
};

struct Prompts {
    EmbeddingSequence source;  // with plan.source_mask applied
    EmbeddingSequence target;
};

Prompts embed_plan(const EditPlan& plan, const SchedulerConfig& cfg);

// Spans the style branch swaps: the plan's spans plus the EOS pair when
// plan.swap_eos is set and no span already covers EOS.
std::vector<SpanSpec> style_spans(const EditPlan& plan, const Prompts& prompts);

// Task-specific plan checks against the embedded prompts (ConfigError).
void validate(const EditPlan& plan, const Prompts& prompts, const SchedulerConfig& cfg);

Tensor init_latent(const SchedulerConfig& cfg);

// The branch rule lambda1 < t < lambda2 (strict on both sides).
bool in_window(int t, int lambda1, int lambda2) noexcept;

struct LayerTrace {
    float mask_area = 0.0f;  // pixels where target attention is injected
    bool mask_degenerate = false;
    Tensor weights;  // baseline weights when cfg.record_weights, else empty scalar
};

struct StepEvent {
    int t = 0;
    bool psp = false;
    std::vector<LayerTrace> layers;
    bool style_without_eos = false;
};

struct CaptureArtifact {
    int step = 0;
    std::size_t layer = 0;
    SlotSpan slots;
    AttentionMap map;
    ObjectMask mask;
    Tensor box;  // rasterized softbox, all ones when the plan has none
};

struct GenerationResult {
    Tensor latent;  // [g x g x c]
    std::vector<CaptureArtifact> captures;
    int steps_run = 0;
    int psp_steps = 0;
};

using StepObserver = std::function<void(const StepEvent&)>;

/// Deterministic toy denoiser driving the gated edit loop.
///
/// Each step runs `layers` cross-attention blocks on the residual stream
/// x (initialised to z_t): x += Attn_mode(x W_q) W_out. The noise estimate is
/// (x - z_t) plus the projected aug embedding broadcast over pixels, and
/// z_{t-1} = z_t - (t / T) * eps.
class Generator {
public:
    Generator(Prompts prompts, EditPlan plan, SchedulerConfig cfg);

    bool psp_active(int t) const noexcept;

    Tensor denoise_step(const Tensor& z, int t, const StepObserver& observer = {});

    GenerationResult run(const StepObserver& observer = {});

    const SchedulerConfig& config() const noexcept { return cfg_; }
    const Prompts& prompts() const noexcept { return prompts_; }

private:
    SlotSpan capture_slots(const CaptureRequest& req) const;
    Tensor replace_mask(const Tensor& q, std::size_t layer, int t, LayerTrace& trace);

    Prompts prompts_;
    EditPlan plan_;
    SchedulerConfig cfg_;
    std::vector<LayerWeights> layers_;
    std::vector<ProjectedPrompt> source_proj_;
    std::vector<ProjectedPrompt> target_proj_;
    std::vector<SpanSpec> style_spans_;
    EmbeddingSequence source_pooled_;  // source without attention masks
    Tensor aug_output_;                // [d_aug x c]
    Tensor box_raster_;
    std::vector<std::optional<ObjectMask>> frozen_;
    std::vector<CaptureArtifact> captures_;
};

GenerationResult generate(const Prompts& prompts, const EditPlan& plan,
                          const SchedulerConfig& cfg, const StepObserver& observer = {});

}  // namespace psp
