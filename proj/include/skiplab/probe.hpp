#pragma once

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "skiplab/fusion.hpp"
#include "skiplab/glyphs.hpp"
#include "skiplab/optim.hpp"
#include "skiplab/rope2d.hpp"

namespace skiplab {

// FNV-1a over the raw parameter bytes; used for freeze-contract checks.
inline uint64_t params_checksum(const std::vector<Param*>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Param* p : params)
        for (double v : p->value.data) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ull;
        }
    return h;
}

// Channel-concatenates each 2x2 block of a patch-token grid:
// (N, C) with N = g*g  ->  (N/4, 4C), cell order row-major, block order
// (r0c0, r0c1, r1c0, r1c1). Grid side must be even.
inline Tensor merge_patches(const Tensor& tokens, int grid_side) {
    if (tokens.rank() != 2 || tokens.rows() != grid_side * grid_side)
        throw config_error("merge_patches: token count does not match the grid");
    if (grid_side % 2 != 0) throw config_error("merge_patches: odd grid");
    int c = tokens.cols();
    int mg = grid_side / 2;
    Tensor out({mg * mg, 4 * c});
    for (int mr = 0; mr < mg; ++mr)
        for (int mc = 0; mc < mg; ++mc) {
            int row = mr * mg + mc;
            const int src[4] = {(2 * mr) * grid_side + 2 * mc, (2 * mr) * grid_side + 2 * mc + 1,
                                (2 * mr + 1) * grid_side + 2 * mc, (2 * mr + 1) * grid_side + 2 * mc + 1};
            for (int k = 0; k < 4; ++k)
                for (int j = 0; j < c; ++j) out.at(row, k * c + j) = tokens.at(src[k], j);
        }
    return out;
}

// ---- frozen encoder under evaluation ----

struct ProbeEncoderConfig {
    int image_size = 32;
    int patch_size = 4;
    int hidden_dim = 16;
    int blocks = 2;
    int num_heads = 2;

    int grid_side() const { return image_size / patch_size; }
    int n_patches() const { return grid_side() * grid_side(); }
};

// Small patch encoder (no class token); only ever evaluated, never trained.
class ProbeEncoder {
public:
    ProbeEncoderConfig cfg;
    Param patch_w, patch_b, pos_embed;
    std::vector<TransformerBlock> blocks;

    ProbeEncoder(ProbeEncoderConfig config, Rng& rng) : cfg(config) {
        int pd = cfg.patch_size * cfg.patch_size;
        patch_w = Param("penc.patch.w",
                        detail::init_weight({pd, cfg.hidden_dim}, rng, 1.0 / std::sqrt(static_cast<double>(pd))));
        patch_b = Param("penc.patch.b", Tensor::zeros({cfg.hidden_dim}));
        pos_embed = Param("penc.pos", detail::init_weight({cfg.n_patches(), cfg.hidden_dim}, rng, 0.02));
        blocks.resize(cfg.blocks);
        for (int i = 0; i < cfg.blocks; ++i)
            blocks[i].init("penc.b" + std::to_string(i + 1), cfg.hidden_dim, rng);
    }

    std::vector<Param*> params() {
        std::vector<Param*> out = {&patch_w, &patch_b, &pos_embed};
        for (auto& b : blocks)
            for (Param* p : b.params()) out.push_back(p);
        return out;
    }

    Tensor patchify(const Tensor& image) const {
        if (image.rows() != cfg.image_size || image.cols() != cfg.image_size)
            throw config_error("probe encoder: unexpected image shape " + image.shape_str());
        int g = cfg.grid_side(), p = cfg.patch_size;
        Tensor out({g * g, p * p});
        for (int pr = 0; pr < g; ++pr)
            for (int pc = 0; pc < g; ++pc)
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < p; ++j)
                        out.at(pr * g + pc, i * p + j) = image.at(pr * p + i, pc * p + j);
        return out;
    }

    // Value-only forward; the caller never backpropagates into this pass.
    Tensor encode(const Tensor& image) {
        Tape t;
        ParamBind bind;
        Rng no_dropout(0);
        Var x = t.add(t.matmul(t.constant(patchify(image)), bind.bind(t, patch_w)), bind.bind(t, patch_b));
        x = t.add(x, bind.bind(t, pos_embed));
        for (auto& b : blocks) x = b.forward(t, bind, x, cfg.num_heads, 0.0, no_dropout);
        return t.value(x);
    }
};

// ---- frozen adapter variants (the subject of evaluation) ----

// Maps merged tokens (N, in_dim) into the decoder space (N, out_dim).
// Identity passes features straight through; a bottleneck of width w is a
// frozen random rank-w linear map.
struct ProbeAdapter {
    std::string name;
    int width = 0; // 0 = identity
    Tensor w1, w2; // (in, width), (width, out)
    int in_dim = 0, out_dim = 0;

    static ProbeAdapter identity(int dim) {
        ProbeAdapter a;
        a.name = "identity";
        a.in_dim = a.out_dim = dim;
        return a;
    }

    static ProbeAdapter bottleneck(int in_dim, int width, int out_dim, Rng& rng) {
        if (width <= 0) throw config_error("bottleneck adapter: width must be positive");
        ProbeAdapter a;
        a.name = "bottleneck-w" + std::to_string(width);
        a.width = width;
        a.in_dim = in_dim;
        a.out_dim = out_dim;
        a.w1 = detail::init_weight({in_dim, width}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
        a.w2 = detail::init_weight({width, out_dim}, rng, 1.0 / std::sqrt(static_cast<double>(width)));
        return a;
    }

    Tensor apply(const Tensor& merged) const {
        if (merged.cols() != in_dim) throw config_error("adapter: input dim mismatch");
        if (width == 0) return merged;
        int n = merged.rows();
        Tensor mid({n, width});
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < in_dim; ++k) {
                double v = merged.at(i, k);
                if (v == 0.0) continue;
                for (int j = 0; j < width; ++j) mid.at(i, j) += v * w1.at(k, j);
            }
        Tensor out({n, out_dim});
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < width; ++k) {
                double v = mid.at(i, k);
                for (int j = 0; j < out_dim; ++j) out.at(i, j) += v * w2.at(k, j);
            }
        return out;
    }

    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](const Tensor& t) {
            for (double v : t.data) {
                unsigned char bytes[sizeof(double)];
                std::memcpy(bytes, &v, sizeof(double));
                for (unsigned char b : bytes) h = (h ^ b) * 0x100000001b3ull;
            }
        };
        mix(w1);
        mix(w2);
        return h;
    }
};

// ---- probe configuration and sequence layout ----

struct ProbeConfig {
    int toy_lm_depth = 8;
    int decoder_depth = (8 + 3) / 4; // quarter of the toy LM depth
    int decoder_dim = 64;
    int decoder_heads = 4;
    double tau = 0.75;
    int steps = 400;
    int batch = 4;
    double lr = 3e-3;
    double weight_decay = 0.01;
    bool freeze_encoder = true;
    bool freeze_adapter = true;
    int merge = 2; // fixed 2x2

    void validate() const {
        if (decoder_depth < 1) throw config_error("probe config: decoder_depth must be >= 1");
        if (merge != 2) throw config_error("probe config: merge factor is fixed at 2x2");
        if (tau <= 0.0) throw config_error("probe config: tau must be positive");
        if (!freeze_encoder || !freeze_adapter)
            throw config_error("probe config: unfreezing the encoder/adapter violates the probe contract");
        if (decoder_dim % decoder_heads != 0 || (decoder_dim / decoder_heads) % 4 != 0)
            throw config_error("probe config: head dim must be a multiple of 4 for 2D rotary phases");
    }
};

// Segment boundaries and per-token grid coordinates. Image-token phases are
// fixed by the merged-grid coordinate in the original image layout; moving
// a token to the target segment does not change its phase.
struct SequenceLayout {
    int n_context = 0, n_text = 0, n_target = 0;
    std::vector<TokenCoord> coords;  // one per sequence position
    std::vector<int> target_cells;   // merged-grid cell index per target token

    int total() const { return n_context + n_text + n_target; }
    int text_begin() const { return n_context; }
    int target_begin() const { return n_context + n_text; }
};

inline SequenceLayout build_sequence(const ReconSample& sample, int merged_grid_side,
                                     int merged_cell_pixels) {
    const Rect& r = sample.target_rect;
    if (r.r0 % merged_cell_pixels || r.c0 % merged_cell_pixels || r.h % merged_cell_pixels ||
        r.w % merged_cell_pixels)
        throw config_error("build_sequence: target rect must align to merged-token cells");
    int cr0 = r.r0 / merged_cell_pixels, cc0 = r.c0 / merged_cell_pixels;
    int crh = r.h / merged_cell_pixels, ccw = r.w / merged_cell_pixels;
    if (crh <= 0 || ccw <= 0) throw config_error("build_sequence: empty target segment");

    SequenceLayout layout;
    layout.n_context = merged_grid_side * merged_grid_side;
    layout.n_text = static_cast<int>(sample.text_tokens.size());
    layout.n_target = crh * ccw;

    // context: every merged cell of the full image, row-major
    for (int cr = 0; cr < merged_grid_side; ++cr)
        for (int cc = 0; cc < merged_grid_side; ++cc)
            layout.coords.push_back({static_cast<double>(cr), static_cast<double>(cc)});
    // text: a band just below the image grid, indexed by text position
    for (int j = 0; j < layout.n_text; ++j)
        layout.coords.push_back({static_cast<double>(merged_grid_side + 2), static_cast<double>(j)});
    // target: the target-region cells, phases from their original coordinates
    for (int cr = cr0; cr < cr0 + crh; ++cr)
        for (int cc = cc0; cc < cc0 + ccw; ++cc) {
            layout.coords.push_back({static_cast<double>(cr), static_cast<double>(cc)});
            layout.target_cells.push_back(cr * merged_grid_side + cc);
        }
    return layout;
}

// ---- probe decoder ----

// Pre-norm block with 2D rotary phases applied to q and k per head.
struct RopeBlock {
    Param wq, bq, wk, bk, wv, bv, wo, bo;
    Param w1, b1, w2, b2;

    void init(const std::string& prefix, int dim, Rng& rng) {
        double s = 1.0 / std::sqrt(static_cast<double>(dim));
        wq = Param(prefix + ".attn.wq", detail::init_weight({dim, dim}, rng, s));
        bq = Param(prefix + ".attn.bq", Tensor::zeros({dim}));
        wk = Param(prefix + ".attn.wk", detail::init_weight({dim, dim}, rng, s));
        bk = Param(prefix + ".attn.bk", Tensor::zeros({dim}));
        wv = Param(prefix + ".attn.wv", detail::init_weight({dim, dim}, rng, s));
        bv = Param(prefix + ".attn.bv", Tensor::zeros({dim}));
        wo = Param(prefix + ".attn.wo", detail::init_weight({dim, dim}, rng, s));
        bo = Param(prefix + ".attn.bo", Tensor::zeros({dim}));
        int mlp = 2 * dim;
        w1 = Param(prefix + ".mlp.w1", detail::init_weight({dim, mlp}, rng, s));
        b1 = Param(prefix + ".mlp.b1", Tensor::zeros({mlp}));
        w2 = Param(prefix + ".mlp.w2", detail::init_weight({mlp, dim}, rng, 1.0 / std::sqrt(static_cast<double>(mlp))));
        b2 = Param(prefix + ".mlp.b2", Tensor::zeros({dim}));
    }

    std::vector<Param*> params() {
        return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &w1, &b1, &w2, &b2};
    }

    Var forward(Tape& t, ParamBind& bind, Var x, int num_heads, const RopeTables& rope) {
        int dim = t.value(x).cols();
        int head_dim = dim / num_heads;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
        Var xn = t.layer_norm(x);
        Var q = t.add(t.matmul(xn, bind.bind(t, wq)), bind.bind(t, bq));
        Var k = t.add(t.matmul(xn, bind.bind(t, wk)), bind.bind(t, bk));
        Var v = t.add(t.matmul(xn, bind.bind(t, wv)), bind.bind(t, bv));
        std::vector<Var> head_outs;
        for (int h = 0; h < num_heads; ++h) {
            Var qh = apply_rope(t, t.slice_channels(q, h * head_dim, head_dim), rope);
            Var kh = apply_rope(t, t.slice_channels(k, h * head_dim, head_dim), rope);
            Var vh = t.slice_channels(v, h * head_dim, head_dim);
            Var probs = t.softmax(t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt));
            head_outs.push_back(t.matmul(probs, vh));
        }
        Var attn = t.add(t.matmul(t.concat_channels(head_outs), bind.bind(t, wo)), bind.bind(t, bo));
        Var x1 = t.add(x, attn);
        Var x1n = t.layer_norm(x1);
        Var hmid = t.gelu(t.add(t.matmul(x1n, bind.bind(t, w1)), bind.bind(t, b1)));
        return t.add(x1, t.add(t.matmul(hmid, bind.bind(t, w2)), bind.bind(t, b2)));
    }
};

// Shallow full-attention decoder + sigmoid pixel head. The pixel head is
// zero-initialized so an untrained probe predicts 0.5 everywhere.
class ProbeDecoder {
public:
    ProbeConfig cfg;
    Param text_embed;
    std::vector<RopeBlock> blocks;
    Param pix_w, pix_b;
    int pixels_per_token;

    ProbeDecoder(ProbeConfig config, int pix_per_token, Rng& rng)
        : cfg(config), pixels_per_token(pix_per_token) {
        cfg.validate();
        text_embed = Param("dec.text_embed", detail::init_weight({kVocabSize, cfg.decoder_dim}, rng, 0.02));
        blocks.resize(cfg.decoder_depth);
        for (int i = 0; i < cfg.decoder_depth; ++i)
            blocks[i].init("dec.b" + std::to_string(i + 1), cfg.decoder_dim, rng);
        pix_w = Param("dec.pix.w", Tensor::zeros({cfg.decoder_dim, pixels_per_token}));
        pix_b = Param("dec.pix.b", Tensor::zeros({pixels_per_token}));
    }

    std::vector<Param*> params() {
        std::vector<Param*> out = {&text_embed};
        for (auto& b : blocks)
            for (Param* p : b.params()) out.push_back(p);
        out.push_back(&pix_w);
        out.push_back(&pix_b);
        return out;
    }
};

// Frozen-side tensors precomputed once per sample: encoder and adapter are
// never updated, so their outputs are constants across probe steps.
struct PreparedSample {
    Tensor ctx_plain, tgt_plain;   // adapter outputs, full image
    Tensor ctx_masked, tgt_masked; // adapter outputs, target region blacked out
    std::vector<int> text_tokens;
    SequenceLayout layout;
    RopeTables rope;
    Tensor target_pixels; // (n_target, pixels_per_token), always the true pixels
};

inline PreparedSample prepare_sample(ProbeEncoder& encoder, const ProbeAdapter& adapter,
                                     const ReconSample& sample, const ProbeConfig& cfg) {
    int grid = encoder.cfg.grid_side();
    int merged_grid = grid / 2;
    int merged_cell_px = encoder.cfg.patch_size * 2;
    SequenceLayout layout = build_sequence(sample, merged_grid, merged_cell_px);

    auto encode_variant = [&](const Tensor& image) {
        Tensor merged = merge_patches(encoder.encode(image), grid);
        return adapter.apply(merged);
    };
    auto gather_targets = [&](const Tensor& all_tokens) {
        Tensor out({layout.n_target, all_tokens.cols()});
        for (int i = 0; i < layout.n_target; ++i)
            for (int j = 0; j < all_tokens.cols(); ++j)
                out.at(i, j) = all_tokens.at(layout.target_cells[i], j);
        return out;
    };

    PreparedSample prep;
    Tensor plain = encode_variant(sample.context);
    prep.ctx_plain = plain;
    prep.tgt_plain = gather_targets(plain);

    Tensor masked_img = sample.context;
    for (int i = 0; i < sample.target_rect.h; ++i)
        for (int j = 0; j < sample.target_rect.w; ++j)
            masked_img.at(sample.target_rect.r0 + i, sample.target_rect.c0 + j) = 0.0;
    Tensor masked = encode_variant(masked_img);
    prep.ctx_masked = masked;
    prep.tgt_masked = gather_targets(masked);

    prep.text_tokens = sample.text_tokens;
    prep.layout = layout;
    prep.rope = build_rope_tables(layout.coords, cfg.decoder_dim / cfg.decoder_heads);

    int px = merged_cell_px * merged_cell_px;
    prep.target_pixels = Tensor({layout.n_target, px});
    for (int i = 0; i < layout.n_target; ++i) {
        int cell = layout.target_cells[i];
        int cr = (cell / merged_grid) * merged_cell_px;
        int cc = (cell % merged_grid) * merged_cell_px;
        for (int a = 0; a < merged_cell_px; ++a)
            for (int b = 0; b < merged_cell_px; ++b)
                prep.target_pixels.at(i, a * merged_cell_px + b) = sample.context.at(cr + a, cc + b);
    }
    return prep;
}

// Per-token MSE for one sample; mask/drop flags choose the input variant.
inline Var probe_sample_loss(Tape& t, ParamBind& bind, ProbeDecoder& dec, const PreparedSample& prep,
                             bool mask_image, bool drop_text, Tensor* prediction_out = nullptr) {
    const Tensor& ctx = mask_image ? prep.ctx_masked : prep.ctx_plain;
    const Tensor& tgt = mask_image ? prep.tgt_masked : prep.tgt_plain;
    Var x = t.constant(ctx);
    if (!prep.text_tokens.empty()) {
        std::vector<int> ids = prep.text_tokens;
        if (drop_text)
            for (auto& id : ids) id = kUnkToken;
        x = t.concat_rows(x, t.embed_lookup(bind.bind(t, dec.text_embed), ids));
    }
    x = t.concat_rows(x, t.constant(tgt));
    for (auto& b : dec.blocks) x = b.forward(t, bind, x, dec.cfg.decoder_heads, prep.rope);
    Var states = t.slice_rows(x, prep.layout.target_begin(), prep.layout.n_target);
    Var pred = t.sigmoid(t.add(t.matmul(states, bind.bind(t, dec.pix_w)), bind.bind(t, dec.pix_b)));
    if (prediction_out) *prediction_out = t.value(pred);
    return t.mse_loss(pred, t.constant(prep.target_pixels));
}

// One optimizer step over a batch; only decoder parameters move.
inline double probe_step(ProbeDecoder& dec, AdamW& opt, const std::vector<const PreparedSample*>& batch,
                         bool mask_image, bool drop_text) {
    if (batch.empty()) throw config_error("probe_step: empty batch");
    Tape t;
    ParamBind bind;
    Var total;
    for (size_t i = 0; i < batch.size(); ++i) {
        Var l = probe_sample_loss(t, bind, dec, *batch[i], mask_image, drop_text);
        total = i == 0 ? l : t.add(total, l);
    }
    Var loss = t.scale(total, 1.0 / static_cast<double>(batch.size()));
    double value = t.value(loss).item();
    t.backward(loss);
    for (Param* p : dec.params()) p->zero_grad();
    bind.pull_grads(t);
    std::vector<Param*> ps = dec.params();
    opt.step(ps);
    return value;
}

// Reassembles per-token pixel rows into the target-region image.
inline Tensor assemble_region(const SequenceLayout& layout, const Tensor& token_pixels,
                              int merged_grid_side, int cell_px) {
    if (token_pixels.rows() != layout.n_target || token_pixels.cols() != cell_px * cell_px)
        throw config_error("assemble_region: token pixel shape mismatch");
    int min_r = merged_grid_side, min_c = merged_grid_side, max_r = 0, max_c = 0;
    for (int cell : layout.target_cells) {
        min_r = std::min(min_r, cell / merged_grid_side);
        max_r = std::max(max_r, cell / merged_grid_side);
        min_c = std::min(min_c, cell % merged_grid_side);
        max_c = std::max(max_c, cell % merged_grid_side);
    }
    Tensor out({(max_r - min_r + 1) * cell_px, (max_c - min_c + 1) * cell_px});
    for (int i = 0; i < layout.n_target; ++i) {
        int r0 = (layout.target_cells[i] / merged_grid_side - min_r) * cell_px;
        int c0 = (layout.target_cells[i] % merged_grid_side - min_c) * cell_px;
        for (int a = 0; a < cell_px; ++a)
            for (int b = 0; b < cell_px; ++b)
                out.at(r0 + a, c0 + b) = token_pixels.at(i, a * cell_px + b);
    }
    return out;
}

// First 0-indexed step whose loss is below tau; absent if never reached.
inline std::optional<int> steps_to_threshold(const std::vector<double>& losses, double tau) {
    if (tau <= 0.0) throw config_error("steps_to_threshold: tau must be positive");
    for (size_t i = 0; i < losses.size(); ++i)
        if (losses[i] < tau) return static_cast<int>(i);
    return std::nullopt;
}

struct ProbeRun {
    std::vector<double> losses;
    double final_loss = 0.0; // mean over the last 10% of steps
    std::optional<int> steps_to_tau;
    std::string decoder_init = "fresh-random-quarter-depth"; // report header note
};

// Trains a fresh decoder against frozen encoder/adapter features and
// verifies the freeze contract on exit.
inline ProbeRun run_probe(ProbeEncoder& encoder, const ProbeAdapter& adapter,
                          const std::vector<ReconSample>& samples, const ProbeConfig& cfg,
                          uint64_t seed, bool mask_image, bool drop_text) {
    cfg.validate();
    if (samples.empty()) throw config_error("run_probe: no samples");

    uint64_t enc_sum = params_checksum(encoder.params());
    uint64_t ad_sum = adapter.checksum();

    std::vector<PreparedSample> prepared;
    prepared.reserve(samples.size());
    for (const auto& s : samples) prepared.push_back(prepare_sample(encoder, adapter, s, cfg));

    Rng rng(seed);
    int px = (encoder.cfg.patch_size * 2) * (encoder.cfg.patch_size * 2);
    ProbeDecoder dec(cfg, px, rng);
    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(ocfg);

    ProbeRun run;
    size_t cursor = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<const PreparedSample*> batch;
        for (int b = 0; b < cfg.batch; ++b) {
            batch.push_back(&prepared[cursor % prepared.size()]);
            ++cursor;
        }
        run.losses.push_back(probe_step(dec, opt, batch, mask_image, drop_text));
    }
    int tail = std::max(1, cfg.steps / 10);
    double acc = 0.0;
    for (int i = cfg.steps - tail; i < cfg.steps; ++i) acc += run.losses[i];
    run.final_loss = acc / tail;
    run.steps_to_tau = steps_to_threshold(run.losses, cfg.tau);

    if (params_checksum(encoder.params()) != enc_sum)
        throw config_error("run_probe: frozen encoder parameters changed");
    if (adapter.checksum() != ad_sum)
        throw config_error("run_probe: frozen adapter parameters changed");
    return run;
}

// ---- report suites ----

struct ModalityCell {
    bool mask_image = false;
    bool drop_text = false;
    double final_loss = 0.0;
    ProbeRun run;
};

// Four probes under (mask x drop_text), identical seeds and step budgets.
// Row order matches the reference table: (masked, no-text), (masked, text),
// (full, no-text), (full, text).
inline std::vector<ModalityCell> modality_ablation(ProbeEncoder& encoder, const ProbeAdapter& adapter,
                                                   const std::vector<ReconSample>& samples,
                                                   const ProbeConfig& cfg, uint64_t seed) {
    std::vector<ModalityCell> out;
    const bool grid[4][2] = {{true, true}, {true, false}, {false, true}, {false, false}};
    for (auto& [mask, drop] : grid) {
        ModalityCell cell;
        cell.mask_image = mask;
        cell.drop_text = drop;
        cell.run = run_probe(encoder, adapter, samples, cfg, seed, mask, drop);
        cell.final_loss = cell.run.final_loss;
        out.push_back(std::move(cell));
    }
    return out;
}

struct AdapterResult {
    std::string name;
    int width = 0;
    double final_loss = 0.0;
    std::optional<int> steps_to_tau;
};

// Runs the probe per adapter variant and ranks by final loss (best first).
inline std::vector<AdapterResult> adapter_sensitivity(ProbeEncoder& encoder,
                                                      const std::vector<ProbeAdapter>& adapters,
                                                      const std::vector<ReconSample>& samples,
                                                      const ProbeConfig& cfg, uint64_t seed) {
    std::vector<AdapterResult> results;
    for (const auto& adapter : adapters) {
        ProbeRun run = run_probe(encoder, adapter, samples, cfg, seed, false, false);
        AdapterResult r;
        r.name = adapter.name;
        r.width = adapter.width;
        r.final_loss = run.final_loss;
        r.steps_to_tau = run.steps_to_tau;
        results.push_back(std::move(r));
    }
    std::vector<AdapterResult> ranked = results;
    std::sort(ranked.begin(), ranked.end(),
              [](const AdapterResult& a, const AdapterResult& b) { return a.final_loss < b.final_loss; });
    return ranked;
}

} // namespace skiplab
