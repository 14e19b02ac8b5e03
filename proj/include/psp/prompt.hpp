#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psp/tensor.hpp"

namespace psp {

enum class SlotRole : std::uint8_t { Bos, Word, Eos, Pad };

std::string_view to_string(SlotRole role);

// Half-open slot range [begin, end).
struct SlotSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
    bool empty() const noexcept { return end <= begin; }
    bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
    bool operator==(const SlotSpan&) const = default;
};

/// Slot layout of a prompt: BOS, the prompt words, EOS, then padding.
///
/// Words added by insert_into_padding occupy the slots directly after EOS and
/// carry the WORD role; they are listed in `inserted`, not in `words`.
struct TokenLayout {
    std::vector<SlotRole> roles;
    std::vector<std::string> words;
    std::vector<std::string> inserted;

    std::size_t length() const noexcept { return roles.size(); }
    std::size_t eos_index() const noexcept { return words.size() + 1; }
    // First PAD slot, or length() when the padding is exhausted.
    std::size_t first_pad() const noexcept { return eos_index() + 1 + inserted.size(); }
    std::size_t pad_count() const noexcept;
};

// Throws LayoutError describing the first violated invariant.
void validate_layout(const TokenLayout& layout);

struct EmbeddingSequence {
    TokenLayout layout;
    Tensor embeddings;       // [L x d]
    std::vector<bool> mask;  // true = slot excluded from attention

    std::size_t length() const noexcept { return layout.length(); }
    std::size_t width() const { return embeddings.cols(); }
    bool all_masked() const noexcept;
};

// Layout invariants plus row-count and mask-length agreement.
void validate_sequence(const EmbeddingSequence& seq);

struct AugEmbedding {
    Tensor vector;  // [d_aug]
    int source_timestep = 0;
};

struct Insertion {
    EmbeddingSequence sequence;
    SlotSpan range;
};

// Deterministic toy text encoder. WORD rows are unit-norm vectors keyed by
// (seed, word); BOS and PAD rows are keyed by (seed, role); the EOS row is the
// normalized sum of an EOS base vector and every word vector, so it pools the
// whole prompt.
EmbeddingSequence embed_prompt(std::span<const std::string> words, std::size_t length,
                               std::size_t width, std::uint64_t seed);

// The unit-norm vector embed_prompt assigns to `word`.
std::vector<float> word_vector(std::string_view word, std::size_t width, std::uint64_t seed);

EmbeddingSequence mask_slots(const EmbeddingSequence& seq, std::span<const SlotSpan> spans);

// Pooled (EOS) embedding projected to d_aug plus a sinusoidal embedding of t.
AugEmbedding build_aug(const EmbeddingSequence& seq, int timestep, std::size_t d_aug,
                       std::uint64_t seed);

// Copies k = rows.size() / width rows into the first k PAD slots after EOS.
Insertion insert_into_padding(const EmbeddingSequence& source, std::span<const float> rows,
                              std::span<const std::string> names = {});
Insertion insert_into_padding(const EmbeddingSequence& source, const Tensor& rows,
                              std::span<const std::string> names = {});

// Rows src of source replaced by rows tgt of target; roles and mask come from
// source. Spans must have equal length.
EmbeddingSequence swap_span(const EmbeddingSequence& source, SlotSpan src,
                            const EmbeddingSequence& target, SlotSpan tgt);

// Shared bounds / length checks for swaps on raw row tensors.
void check_swap_spans(std::size_t source_rows, SlotSpan src, std::size_t target_rows,
                      SlotSpan tgt);

}  // namespace psp
