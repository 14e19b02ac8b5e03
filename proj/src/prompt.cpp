#include "psp/prompt.hpp"

#include <algorithm>
#include <cmath>

#include "psp/error.hpp"
#include "psp/kernels.hpp"
#include "psp/rng.hpp"

namespace psp {

std::string_view to_string(SlotRole role) {
    switch (role) {
        case SlotRole::Bos: return "BOS";
        case SlotRole::Word: return "WORD";
        case SlotRole::Eos: return "EOS";
        case SlotRole::Pad: return "PAD";
    }
    return "?";
}

std::size_t TokenLayout::pad_count() const noexcept {
    const std::size_t first = first_pad();
    return first < length() ? length() - first : 0;
}

void validate_layout(const TokenLayout& layout) {
    const auto fail = [](const std::string& msg) { throw LayoutError("layout invalid: " + msg); };
    const std::size_t n = layout.roles.size();
    if (n < 2) fail("fewer than two slots");
    if (layout.roles[0] != SlotRole::Bos) fail("slot 0 is not BOS");
    const std::size_t eos = layout.eos_index();
    if (eos >= n) fail("EOS index " + std::to_string(eos) + " outside layout");
    if (std::count(layout.roles.begin(), layout.roles.end(), SlotRole::Eos) != 1)
        fail("expected exactly one EOS");
    if (layout.roles[eos] != SlotRole::Eos)
        fail("word count " + std::to_string(layout.words.size()) + " disagrees with EOS position");
    for (std::size_t i = 1; i < eos; ++i)
        if (layout.roles[i] != SlotRole::Word) fail("slot " + std::to_string(i) + " is not WORD");
    if (layout.first_pad() > n) fail("inserted words overflow the layout");
    for (std::size_t i = eos + 1; i < n; ++i) {
        const SlotRole want = i < layout.first_pad() ? SlotRole::Word : SlotRole::Pad;
        if (layout.roles[i] != want)
            fail("slot " + std::to_string(i) + " after EOS is " +
                 std::string(to_string(layout.roles[i])) + ", expected " +
                 std::string(to_string(want)));
    }
}

bool EmbeddingSequence::all_masked() const noexcept {
    return std::all_of(mask.begin(), mask.end(), [](bool m) { return m; });
}

void validate_sequence(const EmbeddingSequence& seq) {
    validate_layout(seq.layout);
    if (seq.embeddings.rank() != 2 || seq.embeddings.rows() != seq.length())
        throw LayoutError("embedding rows do not match layout length " +
                          std::to_string(seq.length()));
    if (seq.mask.size() != seq.length())
        throw LayoutError("mask length does not match layout length");
}

namespace {

void normalize(std::span<float> v) {
    double sq = 0.0;
    for (float x : v) sq += static_cast<double>(x) * x;
    const double norm = std::sqrt(sq);
    for (float& x : v) x = static_cast<float>(x / norm);
}

std::vector<float> role_vector(std::string_view tag, std::size_t width, std::uint64_t seed) {
    Tensor t = gaussian_tensor({width}, derive_key(seed, tag));
    normalize(t.data());
    return std::move(t.storage());
}

}  // namespace

std::vector<float> word_vector(std::string_view word, std::size_t width, std::uint64_t seed) {
    Tensor t = gaussian_tensor({width}, derive_key(seed, "word:" + std::string(word)));
    normalize(t.data());
    return std::move(t.storage());
}

EmbeddingSequence embed_prompt(std::span<const std::string> words, std::size_t length,
                               std::size_t width, std::uint64_t seed) {
    if (width == 0) throw ValueError("embedding width must be at least 1");
    if (length < 2 || words.size() > length - 2)
        throw LayoutError("prompt exceeds layout: " + std::to_string(words.size()) +
                          " words need " + std::to_string(words.size() + 2) + " slots, have " +
                          std::to_string(length));

    EmbeddingSequence seq;
    seq.layout.words.assign(words.begin(), words.end());
    seq.layout.roles.assign(length, SlotRole::Pad);
    seq.layout.roles[0] = SlotRole::Bos;
    const std::size_t eos = words.size() + 1;
    for (std::size_t i = 1; i < eos; ++i) seq.layout.roles[i] = SlotRole::Word;
    seq.layout.roles[eos] = SlotRole::Eos;

    seq.embeddings = Tensor({length, width});
    seq.mask.assign(length, false);

    const auto bos = role_vector("role:bos", width, seed);
    const auto pad = role_vector("role:pad", width, seed);
    std::vector<double> pooled(width);
    {
        const auto base = role_vector("role:eos", width, seed);
        std::copy(base.begin(), base.end(), pooled.begin());
    }

    std::copy(bos.begin(), bos.end(), seq.embeddings.row(0).begin());
    for (std::size_t w = 0; w < words.size(); ++w) {
        const auto v = word_vector(words[w], width, seed);
        std::copy(v.begin(), v.end(), seq.embeddings.row(w + 1).begin());
        for (std::size_t j = 0; j < width; ++j) pooled[j] += v[j];
    }
    auto eos_row = seq.embeddings.row(eos);
    for (std::size_t j = 0; j < width; ++j) eos_row[j] = static_cast<float>(pooled[j]);
    normalize(eos_row);
    for (std::size_t i = eos + 1; i < length; ++i)
        std::copy(pad.begin(), pad.end(), seq.embeddings.row(i).begin());
    return seq;
}

EmbeddingSequence mask_slots(const EmbeddingSequence& seq, std::span<const SlotSpan> spans) {
    for (const SlotSpan& s : spans) {
        if (s.begin > s.end || s.end > seq.length())
            throw IndexError("mask span [" + std::to_string(s.begin) + ", " +
                             std::to_string(s.end) + ") outside [0, " +
                             std::to_string(seq.length()) + ")");
    }
    EmbeddingSequence out = seq;
    for (const SlotSpan& s : spans)
        for (std::size_t i = s.begin; i < s.end; ++i) out.mask[i] = true;
    return out;
}

AugEmbedding build_aug(const EmbeddingSequence& seq, int timestep, std::size_t d_aug,
                       std::uint64_t seed) {
    if (d_aug == 0) throw ValueError("d_aug must be at least 1");
    const std::size_t eos = seq.layout.eos_index();
    if (eos >= seq.length() || seq.layout.roles[eos] != SlotRole::Eos)
        throw LayoutError("pooled slot unavailable: no EOS slot");
    if (seq.mask[eos]) throw LayoutError("pooled slot unavailable: EOS is masked");

    const std::size_t d = seq.width();
    const Tensor projection = gaussian_tensor({d, d_aug}, derive_key(seed, "aug:projection"),
                                              1.0f / std::sqrt(static_cast<float>(d)));
    const Tensor pooled({1, d}, std::vector<float>(seq.embeddings.row(eos).begin(),
                                                   seq.embeddings.row(eos).end()));
    Tensor projected = matmul(pooled, projection);

    AugEmbedding aug{Tensor({d_aug}), timestep};
    for (std::size_t k = 0; k < d_aug; ++k) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d_aug));
        const double phase = timestep * freq;
        const double s = (k % 2 == 0) ? std::sin(phase) : std::cos(phase);
        aug.vector[k] = projected[k] + static_cast<float>(s);
    }
    return aug;
}

Insertion insert_into_padding(const EmbeddingSequence& source, std::span<const float> rows,
                              std::span<const std::string> names) {
    const std::size_t d = source.width();
    if (rows.size() % d != 0)
        throw ShapeError("inserted rows length " + std::to_string(rows.size()) +
                         " is not a multiple of width " + std::to_string(d));
    const std::size_t k = rows.size() / d;
    if (!names.empty() && names.size() != k)
        throw ValueError("inserted names count does not match row count");
    const std::size_t have = source.layout.pad_count();
    if (k > have)
        throw LayoutError("padding overflow: need " + std::to_string(k) + ", have " +
                          std::to_string(have));

    Insertion out{source, {source.layout.first_pad(), source.layout.first_pad() + k}};
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t slot = out.range.begin + r;
        std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    out.sequence.embeddings.row(slot).begin());
        out.sequence.layout.roles[slot] = SlotRole::Word;
        out.sequence.layout.inserted.push_back(names.empty() ? std::string("<inserted>")
                                                             : names[r]);
        out.sequence.mask[slot] = false;
    }
    return out;
}

Insertion insert_into_padding(const EmbeddingSequence& source, const Tensor& rows,
                              std::span<const std::string> names) {
    if (rows.rank() != 2 || rows.cols() != source.width())
        throw ShapeError("inserted rows " + shape_to_string(rows.shape()) +
                         " do not match embedding width " + std::to_string(source.width()));
    return insert_into_padding(source, rows.data(), names);
}

void check_swap_spans(std::size_t source_rows, SlotSpan src, std::size_t target_rows,
                      SlotSpan tgt) {
    if (src.begin > src.end || src.end > source_rows)
        throw IndexError("source span [" + std::to_string(src.begin) + ", " +
                         std::to_string(src.end) + ") out of bounds");
    if (tgt.begin > tgt.end || tgt.end > target_rows)
        throw IndexError("target span [" + std::to_string(tgt.begin) + ", " +
                         std::to_string(tgt.end) + ") out of bounds");
    if (src.size() != tgt.size())
        throw ValueError("span length mismatch: source has " + std::to_string(src.size()) +
                         " slots, target has " + std::to_string(tgt.size()));
}

EmbeddingSequence swap_span(const EmbeddingSequence& source, SlotSpan src,
                            const EmbeddingSequence& target, SlotSpan tgt) {
    check_swap_spans(source.length(), src, target.length(), tgt);
    if (source.width() != target.width())
        throw ShapeError("swap between sequences of different width");
    EmbeddingSequence out = source;
    if (!src.empty()) copy_rows(out.embeddings, src.begin, target.embeddings, tgt.begin, src.size());
    return out;
}

}  // namespace psp
