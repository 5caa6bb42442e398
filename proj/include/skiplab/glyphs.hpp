#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skiplab/rng.hpp"
#include "skiplab/tensor.hpp"

namespace skiplab {

// Embedded 5x7 bitmap font, A-Z then 0-9. Each glyph is 7 rows of 5 bits,
// MSB-left in the low 5 bits.
inline constexpr const char* kGlyphAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
inline constexpr int kGlyphCount = 36;
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kUnkToken = kGlyphCount; // vocabulary = glyphs + [UNK]
inline constexpr int kVocabSize = kGlyphCount + 1;

inline const std::array<std::array<uint8_t, 7>, 36>& glyph_font() {
    static const std::array<std::array<uint8_t, 7>, 36> font = {{
        {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, // A
        {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}, // B
        {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, // C
        {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}, // D
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, // E
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}, // F
        {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, // G
        {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}, // H
        {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, // I
        {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}, // J
        {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, // K
        {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}, // L
        {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, // M
        {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}, // N
        {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, // O
        {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}, // P
        {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, // Q
        {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}, // R
        {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, // S
        {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}, // T
        {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, // U
        {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}, // V
        {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, // W
        {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}, // X
        {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}, // Y
        {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}, // Z
        {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, // 0
        {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}, // 1
        {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, // 2
        {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}, // 3
        {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, // 4
        {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}, // 5
        {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, // 6
        {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}, // 7
        {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, // 8
        {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}, // 9
    }};
    return font;
}

inline int glyph_id(char c) {
    for (int i = 0; i < kGlyphCount; ++i)
        if (kGlyphAlphabet[i] == c) return i;
    throw config_error(std::string("glyph_id: character '") + c + "' not in alphabet");
}

inline std::vector<int> tokenize(const std::string& text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(glyph_id(c));
    return out;
}

inline std::string detokenize(const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens) {
        if (t == kUnkToken) {
            out.push_back('?');
        } else if (t >= 0 && t < kGlyphCount) {
            out.push_back(kGlyphAlphabet[t]);
        } else {
            throw config_error("detokenize: token out of range");
        }
    }
    return out;
}

inline void draw_glyph(Tensor& img, int id, int r0, int c0, double intensity = 1.0) {
    if (id < 0 || id >= kGlyphCount) throw config_error("draw_glyph: id out of range");
    if (r0 < 0 || c0 < 0 || r0 + kGlyphHeight > img.rows() || c0 + kGlyphWidth > img.cols())
        throw config_error("draw_glyph: glyph outside canvas");
    const auto& rows = glyph_font()[id];
    for (int i = 0; i < kGlyphHeight; ++i)
        for (int j = 0; j < kGlyphWidth; ++j)
            if (rows[i] & (1 << (kGlyphWidth - 1 - j))) img.at(r0 + i, c0 + j) = intensity;
}

struct GlyphImage {
    Tensor pixels;
    std::string text;
    uint64_t seed = 0;
};

// Rectangle in pixel coordinates, [r0, r0+h) x [c0, c0+w).
struct Rect {
    int r0 = 0, c0 = 0, h = 0, w = 0;
};

// Renders a string left-to-right at seeded jittered positions and adds
// seeded uniform noise, clamped to [0,1]. Fully deterministic for a fixed
// (text, size, seed, ...) tuple.
inline GlyphImage render_glyphs(const std::string& text, int size, uint64_t seed,
                                double noise_amp = 0.0, int jitter = 1) {
    const int advance = kGlyphWidth + 1;
    int needed_w = 1 + jitter + static_cast<int>(text.size()) * advance;
    int needed_h = 1 + jitter + kGlyphHeight;
    if (!text.empty() && (needed_w > size || needed_h > size))
        throw config_error("render_glyphs: string too long for canvas");

    GlyphImage out;
    out.text = text;
    out.seed = seed;
    out.pixels = Tensor({size, size});
    Rng rng = Rng(seed).derive("render:" + text);
    for (size_t k = 0; k < text.size(); ++k) {
        int dr = jitter > 0 ? static_cast<int>(rng.below(2 * jitter + 1)) - jitter : 0;
        int dc = jitter > 0 ? static_cast<int>(rng.below(2 * jitter + 1)) - jitter : 0;
        int r0 = std::max(0, 1 + dr);
        int c0 = std::max(0, 1 + static_cast<int>(k) * advance + dc);
        draw_glyph(out.pixels, glyph_id(text[k]), r0, c0);
    }
    if (noise_amp > 0.0) {
        for (auto& v : out.pixels.data) {
            v += noise_amp * (2.0 * rng.uniform() - 1.0);
            v = std::min(1.0, std::max(0.0, v));
        }
    }
    return out;
}

// One probe example: the context keeps the target region visible; masking
// and text dropping are applied downstream by the probe flags.
struct ReconSample {
    Tensor context;               // full image
    Tensor target;                // crop of target_rect
    std::vector<int> text_tokens; // character ids describing the target
    Rect target_rect;
    bool mask_image = false;
    bool drop_text = false;
};

inline Tensor crop(const Tensor& img, const Rect& r) {
    if (r.r0 < 0 || r.c0 < 0 || r.h <= 0 || r.w <= 0 || r.r0 + r.h > img.rows() ||
        r.c0 + r.w > img.cols())
        throw config_error("crop: rectangle out of bounds");
    Tensor out({r.h, r.w});
    for (int i = 0; i < r.h; ++i)
        for (int j = 0; j < r.w; ++j) out.at(i, j) = img.at(r.r0 + i, r.c0 + j);
    return out;
}

inline ReconSample make_pair(const GlyphImage& image, const Rect& target_rect) {
    ReconSample s;
    s.context = image.pixels;
    s.target = crop(image.pixels, target_rect);
    s.target_rect = target_rect;
    s.text_tokens = tokenize(image.text);
    return s;
}

// Deterministic synthetic dataset parameters.
struct DatasetSpec {
    uint64_t seed = 0;
    int count = 64;
    int image_size = 32;
    double noise_amp = 0.05;
    int cell = 8;                 // glyph placement cell in pixels
    double glyph_density = 0.35;  // dense task: probability a cell holds a glyph
    Rect target_rect{16, 16, 16, 16}; // probe task target region
    int target_glyphs = 2;        // glyphs rendered inside the target region
    int context_glyphs = 2;       // extra glyphs in the context area
    // Appearance variation inside the target cells: text tokens identify the
    // glyph but not its exact placement or ink level, so pixel evidence
    // carries information that language alone cannot supply.
    bool target_jitter = true;
    double intensity_min = 0.6;   // glyph ink drawn from [intensity_min, 1]
};

// Dense downstream batch: per-cell glyph-id map (0 = background, id+1
// otherwise). Glyphs are drawn inside their cell so each label is exact.
inline void downstream_task_batch(const DatasetSpec& spec, int batch_size, int batch_index,
                                  std::vector<Tensor>& images, std::vector<std::vector<int>>& labels) {
    if (spec.image_size % spec.cell != 0)
        throw config_error("downstream_task_batch: image size not divisible by cell");
    if (spec.cell < kGlyphHeight + 1)
        throw config_error("downstream_task_batch: cell too small for the font");
    int g = spec.image_size / spec.cell;
    images.clear();
    labels.clear();
    Rng batch_rng = Rng(spec.seed).derive("dense-batch:" + std::to_string(batch_index));
    for (int b = 0; b < batch_size; ++b) {
        Rng rng = batch_rng.split();
        Tensor img({spec.image_size, spec.image_size});
        std::vector<int> lab(static_cast<size_t>(g) * g, 0);
        for (int cr = 0; cr < g; ++cr)
            for (int cc = 0; cc < g; ++cc) {
                if (rng.uniform() >= spec.glyph_density) continue;
                int id = static_cast<int>(rng.below(kGlyphCount));
                int max_dr = spec.cell - kGlyphHeight;
                int max_dc = spec.cell - kGlyphWidth;
                int dr = static_cast<int>(rng.below(max_dr + 1));
                int dc = static_cast<int>(rng.below(max_dc + 1));
                draw_glyph(img, id, cr * spec.cell + dr, cc * spec.cell + dc);
                lab[static_cast<size_t>(cr) * g + cc] = id + 1;
            }
        if (spec.noise_amp > 0.0) {
            for (auto& v : img.data) {
                v += spec.noise_amp * (2.0 * rng.uniform() - 1.0);
                v = std::min(1.0, std::max(0.0, v));
            }
        }
        images.push_back(std::move(img));
        labels.push_back(std::move(lab));
    }
}

// One probe sample. Target glyphs occupy fixed cells of the target region
// (glyph j in cell j, row-major over 8x8-pixel cells), so the text tokens
// deterministically describe the clean target pixels.
inline ReconSample probe_sample(const DatasetSpec& spec, int index) {
    Rng rng = Rng(spec.seed).derive("probe-sample:" + std::to_string(index));
    Tensor img({spec.image_size, spec.image_size});
    const Rect& tr = spec.target_rect;
    if (tr.r0 + tr.h > spec.image_size || tr.c0 + tr.w > spec.image_size)
        throw config_error("probe_sample: target rect out of bounds");

    const int cell = 8;
    int cells_r = tr.h / cell, cells_c = tr.w / cell;
    int n_cells = cells_r * cells_c;
    if (spec.target_glyphs > n_cells)
        throw config_error("probe_sample: too many target glyphs for the region");

    std::string text;
    for (int j = 0; j < spec.target_glyphs; ++j) {
        int id = static_cast<int>(rng.below(kGlyphCount));
        text.push_back(kGlyphAlphabet[id]);
        int cr = j / cells_c, cc = j % cells_c;
        int dr = 1, dc = 1;
        if (spec.target_jitter) {
            dr = static_cast<int>(rng.below(cell - kGlyphHeight + 1));
            dc = static_cast<int>(rng.below(cell - kGlyphWidth + 1));
        }
        double ink = spec.intensity_min < 1.0
                         ? spec.intensity_min + (1.0 - spec.intensity_min) * rng.uniform()
                         : 1.0;
        draw_glyph(img, id, tr.r0 + cr * cell + dr, tr.c0 + cc * cell + dc, ink);
    }
    // context clutter outside the target region
    for (int j = 0; j < spec.context_glyphs; ++j) {
        int id = static_cast<int>(rng.below(kGlyphCount));
        int r0 = static_cast<int>(rng.below(std::max(1, tr.r0 - kGlyphHeight)));
        int c0 = static_cast<int>(rng.below(spec.image_size - kGlyphWidth));
        draw_glyph(img, id, r0, c0);
    }
    if (spec.noise_amp > 0.0) {
        for (auto& v : img.data) {
            v += spec.noise_amp * (2.0 * rng.uniform() - 1.0);
            v = std::min(1.0, std::max(0.0, v));
        }
    }

    GlyphImage gi;
    gi.pixels = std::move(img);
    gi.text = text;
    gi.seed = spec.seed;
    return make_pair(gi, tr);
}

} // namespace skiplab
