#include "psp/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "psp/error.hpp"
#include "psp/kernels.hpp"
#include "psp/rng.hpp"

namespace psp {

namespace {

float inv_sqrt(std::size_t fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

EmbeddingSequence project_rows(const EmbeddingSequence& seq, const Tensor& weight) {
    return EmbeddingSequence{seq.layout, matmul(seq.embeddings, weight), seq.mask};
}

void check_unit_interval(const Tensor& m, std::size_t n_pix, const char* what, bool binary) {
    if (m.size() != n_pix)
        throw ShapeError(std::string(what) + " length " + std::to_string(m.size()) +
                         " != n_pix " + std::to_string(n_pix));
    for (float v : m.data()) {
        const bool ok = binary ? (v == 0.0f || v == 1.0f) : (v >= 0.0f && v <= 1.0f);
        if (!ok)
            throw ValueError(std::string(what) + (binary ? " entries must be 0 or 1"
                                                         : " entries must lie in [0, 1]"));
    }
}

}  // namespace

LayerWeights make_layer_weights(const LayerDims& dims, std::uint64_t seed, std::size_t layer) {
    if (dims.heads == 0 || dims.d_k % dims.heads != 0 || dims.d_v % dims.heads != 0)
        throw ConfigError("heads must divide both d_k and d_v");
    LayerWeights w;
    w.query = gaussian_tensor({dims.channels, dims.d_k}, derive_key(seed, "layer:query", layer),
                              inv_sqrt(dims.channels));
    w.key = gaussian_tensor({dims.embed, dims.d_k}, derive_key(seed, "layer:key", layer),
                            inv_sqrt(dims.embed));
    w.value = gaussian_tensor({dims.embed, dims.d_v}, derive_key(seed, "layer:value", layer),
                              inv_sqrt(dims.embed));
    w.output = gaussian_tensor({dims.d_v, dims.channels}, derive_key(seed, "layer:output", layer),
                               inv_sqrt(dims.d_v));
    w.heads = dims.heads;
    return w;
}

ProjectedPrompt project(const EmbeddingSequence& seq, const LayerWeights& weights) {
    return ProjectedPrompt{project_rows(seq, weights.key), project_rows(seq, weights.value)};
}

AttentionBundle attend(const Tensor& q, const Tensor& k, const Tensor& v,
                       const std::vector<bool>& mask, std::size_t heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attend expects 2-D q, k, v");
    if (q.cols() != k.cols())
        throw ShapeError("query width " + std::to_string(q.cols()) + " != key width " +
                         std::to_string(k.cols()));
    if (k.rows() != v.rows() || mask.size() != k.rows())
        throw ShapeError("key/value/mask slot counts disagree");
    if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0)
        throw ShapeError("heads must divide d_k and d_v");

    const std::size_t n_pix = q.rows();
    const std::size_t slots = k.rows();
    constexpr float kMasked = -std::numeric_limits<float>::infinity();

    auto head_pass = [&](const Tensor& qh, const Tensor& kh, const Tensor& vh,
                         Tensor& weights_out) {
        Tensor logits = matmul_bt(qh, kh);
        for (std::size_t j = 0; j < slots; ++j) {
            if (!mask[j]) continue;
            for (std::size_t i = 0; i < n_pix; ++i) logits.at(i, j) = kMasked;
        }
        weights_out = row_softmax(logits, std::sqrt(static_cast<float>(qh.cols())));
        return matmul(weights_out, vh);
    };

    AttentionBundle b{q, k, v, Tensor({n_pix, slots}), Tensor({n_pix, v.cols()})};
    if (heads == 1) {
        b.out = head_pass(q, k, v, b.weights);
        return b;
    }

    const std::size_t dk = q.cols() / heads;
    const std::size_t dv = v.cols() / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor w;
        const Tensor out = head_pass(q.slice_cols(h * dk, (h + 1) * dk),
                                     k.slice_cols(h * dk, (h + 1) * dk),
                                     v.slice_cols(h * dv, (h + 1) * dv), w);
        for (std::size_t i = 0; i < n_pix; ++i)
            std::copy_n(out.row(i).begin(), dv, b.out.row(i).begin() + static_cast<std::ptrdiff_t>(h * dv));
        for (std::size_t i = 0; i < w.size(); ++i) b.weights[i] += w[i];
    }
    const float inv_heads = 1.0f / static_cast<float>(heads);
    for (float& x : b.weights.data()) x *= inv_heads;
    return b;
}

AttentionBundle base_attention(const Tensor& q, const ProjectedPrompt& prompt, std::size_t heads) {
    return attend(q, prompt.keys.embeddings, prompt.values.embeddings, prompt.mask(), heads);
}

void validate_span(const SpanSpec& span, const TokenLayout& source, const TokenLayout& target) {
    check_swap_spans(source.length(), span.source, target.length(), span.target);
    const auto touches = [](SlotSpan s, std::size_t slot) { return s.contains(slot); };
    if (touches(span.source, 0) || touches(span.target, 0))
        throw ValueError("spans may not include BOS");
    if (span.kind == SpanKind::Object &&
        (touches(span.source, source.eos_index()) || touches(span.target, target.eos_index())))
        throw ValueError("object spans may not include EOS");
}

bool covers_eos(std::span<const SpanSpec> spans, const TokenLayout& source) {
    return std::any_of(spans.begin(), spans.end(), [&](const SpanSpec& s) {
        return s.source.contains(source.eos_index());
    });
}

EmbeddingSequence swap_values(const ProjectedPrompt& source, const ProjectedPrompt& target,
                              std::span<const SpanSpec> spans) {
    EmbeddingSequence out = source.values;
    for (const SpanSpec& s : spans) out = swap_span(out, s.source, target.values, s.target);
    return out;
}

Tensor replace_attention(const Tensor& q, const ProjectedPrompt& source,
                         const ProjectedPrompt& target, std::span<const SpanSpec> spans,
                         const Tensor& mask, std::size_t heads, bool outside_uses_plain_source) {
    check_unit_interval(mask, q.rows(), "object mask", false);
    for (const SpanSpec& s : spans)
        check_swap_spans(source.length(), s.source, target.length(), s.target);

    const Tensor outside =
        outside_uses_plain_source
            ? base_attention(q, source, heads).out
            : attend(q, source.keys.embeddings, swap_values(source, target, spans).embeddings,
                     source.mask(), heads)
                  .out;
    const Tensor inside = base_attention(q, target, heads).out;
    return blend_rows(outside, inside, mask);
}

AttentionMap normalize_map(const Tensor& raw) {
    AttentionMap map{Tensor({raw.size()}), false};
    const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
    const float range = *hi - *lo;
    if (!(range > 0.0f)) {
        map.degenerate = true;
        return map;
    }
    for (std::size_t i = 0; i < raw.size(); ++i)
        map.values[i] = std::clamp((raw[i] - *lo) / range, 0.0f, 1.0f);
    return map;
}

AttentionMap object_attention_map(const Tensor& q, const ProjectedPrompt& prompt, SlotSpan slots,
                                  std::size_t heads) {
    if (slots.empty() || slots.end > prompt.length())
        throw IndexError("invalid object slot: span [" + std::to_string(slots.begin) + ", " +
                         std::to_string(slots.end) + ") outside the layout");
    for (std::size_t s = slots.begin; s < slots.end; ++s) {
        if (prompt.layout().roles[s] != SlotRole::Word || prompt.mask()[s])
            throw IndexError("invalid object slot " + std::to_string(s) +
                             ": must be an unmasked WORD slot");
    }
    const AttentionBundle b = base_attention(q, prompt, heads);
    Tensor raw({q.rows()});
    const float inv = 1.0f / static_cast<float>(slots.size());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        float acc = 0.0f;
        for (std::size_t s = slots.begin; s < slots.end; ++s) acc += b.weights.at(i, s);
        raw[i] = acc * inv;
    }
    return normalize_map(raw);
}

Tensor add_attention(const Tensor& q, const ProjectedPrompt& source, const ProjectedPrompt& target,
                     SlotSpan added, const Tensor& box, std::size_t heads) {
    check_unit_interval(box, q.rows(), "box raster", true);
    if (added.begin > added.end || added.end > target.length())
        throw IndexError("added span out of bounds for target prompt");

    const std::size_t dk = target.keys.width();
    const std::size_t dv = target.values.width();
    std::vector<std::string> names;
    for (std::size_t s = added.begin; s < added.end; ++s) {
        const std::size_t w = s - 1;
        names.push_back(w < target.layout().words.size() ? target.layout().words[w]
                                                         : std::string("<slot>"));
    }
    const auto key_rows = target.keys.embeddings.data().subspan(added.begin * dk, added.size() * dk);
    const auto value_rows =
        target.values.embeddings.data().subspan(added.begin * dv, added.size() * dv);
    const Insertion keys = insert_into_padding(source.keys, key_rows, names);
    const Insertion values = insert_into_padding(source.values, value_rows, names);

    const Tensor joint = attend(q, keys.sequence.embeddings, values.sequence.embeddings,
                                keys.sequence.mask, heads)
                             .out;
    const Tensor inside = base_attention(q, target, heads).out;
    return blend_rows(joint, inside, box);
}

Tensor style_attention(const Tensor& q, const ProjectedPrompt& source,
                       const ProjectedPrompt& target, std::span<const SpanSpec> spans,
                       std::size_t heads) {
    EmbeddingSequence keys = source.keys;
    EmbeddingSequence values = source.values;
    for (const SpanSpec& s : spans) {
        if (s.kind != SpanKind::Style) throw ValueError("style_attention needs STYLE spans");
        keys = swap_span(keys, s.source, target.keys, s.target);
        values = swap_span(values, s.source, target.values, s.target);
    }
    return attend(q, keys.embeddings, values.embeddings, source.mask(), heads).out;
}

}  // namespace psp
