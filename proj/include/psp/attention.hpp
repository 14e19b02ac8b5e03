#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psp/prompt.hpp"
#include "psp/tensor.hpp"

namespace psp {

/// Fixed projection weights of one cross-attention block.
struct LayerWeights {
    Tensor query;   // [c x d_k]
    Tensor key;     // [d x d_k]
    Tensor value;   // [d x d_v]
    Tensor output;  // [d_v x c]
    std::size_t heads = 1;
};

struct LayerDims {
    std::size_t channels = 4;
    std::size_t embed = 32;
    std::size_t d_k = 16;
    std::size_t d_v = 16;
    std::size_t heads = 1;
};

// Seeded Gaussian weights scaled by 1/sqrt(fan_in); one independent stream
// per (seed, layer, matrix).
LayerWeights make_layer_weights(const LayerDims& dims, std::uint64_t seed, std::size_t layer);

/// K and V projections of a prompt. Both carry the prompt's layout and mask so
/// slot-level operations (swap, padding insertion) apply to them directly.
struct ProjectedPrompt {
    EmbeddingSequence keys;    // [L x d_k]
    EmbeddingSequence values;  // [L x d_v]

    const std::vector<bool>& mask() const noexcept { return keys.mask; }
    const TokenLayout& layout() const noexcept { return keys.layout; }
    std::size_t length() const noexcept { return keys.length(); }
};

ProjectedPrompt project(const EmbeddingSequence& seq, const LayerWeights& weights);

struct AttentionBundle {
    Tensor q;        // [n_pix x d_k]
    Tensor k;        // [L x d_k]
    Tensor v;        // [L x d_v]
    Tensor weights;  // [n_pix x L], mean over heads
    Tensor out;      // [n_pix x d_v]
};

// softmax(q k^T / sqrt(d_head)) v per head with masked slots at -inf; heads
// split d_k and d_v into equal column blocks and outputs are concatenated.
AttentionBundle attend(const Tensor& q, const Tensor& k, const Tensor& v,
                       const std::vector<bool>& mask, std::size_t heads = 1);

AttentionBundle base_attention(const Tensor& q, const ProjectedPrompt& prompt,
                               std::size_t heads = 1);

enum class SpanKind { Object, Style };

struct SpanSpec {
    SlotSpan source;
    SlotSpan target;
    SpanKind kind = SpanKind::Object;
};

// Bounds, equal lengths, and the BOS/EOS rule: object spans never touch BOS or
// EOS, style spans may include EOS but not BOS.
void validate_span(const SpanSpec& span, const TokenLayout& source, const TokenLayout& target);

bool covers_eos(std::span<const SpanSpec> spans, const TokenLayout& source);

// Source values with the span rows taken from the target values.
EmbeddingSequence swap_values(const ProjectedPrompt& source, const ProjectedPrompt& target,
                              std::span<const SpanSpec> spans);

/// Object replacement.
///
/// swapped = Attn(q, K_s, Swap(V_s, V_t)), target = Attn(q, K_t, V_t), and the
/// result is swapped * (1 - M) + target * M row by row. With
/// `outside_uses_plain_source` the (1 - M) side uses Attn(q, K_s, V_s).
Tensor replace_attention(const Tensor& q, const ProjectedPrompt& source,
                         const ProjectedPrompt& target, std::span<const SpanSpec> spans,
                         const Tensor& mask, std::size_t heads = 1,
                         bool outside_uses_plain_source = false);

struct AttentionMap {
    Tensor values;  // [n_pix] in [0, 1]
    bool degenerate = false;  // constant before normalization; values are all 0
};

// Full softmax over every slot, mean of the columns in `slots`, min-max
// normalized.
AttentionMap object_attention_map(const Tensor& q, const ProjectedPrompt& prompt, SlotSpan slots,
                                  std::size_t heads = 1);
AttentionMap normalize_map(const Tensor& raw);

/// Object addition.
///
/// The target rows in `added` are written into the source padding of both
/// projections, attended jointly, and blended with Attn(q, K_t, V_t) by the
/// box raster: joint * (1 - B) + target * B.
Tensor add_attention(const Tensor& q, const ProjectedPrompt& source, const ProjectedPrompt& target,
                     SlotSpan added, const Tensor& box, std::size_t heads = 1);

// Keys and values of the source with every span swapped in from the target.
Tensor style_attention(const Tensor& q, const ProjectedPrompt& source,
                       const ProjectedPrompt& target, std::span<const SpanSpec> spans,
                       std::size_t heads = 1);

}  // namespace psp
