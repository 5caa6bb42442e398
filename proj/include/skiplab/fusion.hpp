#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "skiplab/autograd.hpp"
#include "skiplab/rng.hpp"

namespace skiplab {

// Layer partition for skip fusion: taps every `stride` blocks, the
// `detach_count` shallowest taps go through stop-gradient at fusion time.
struct FusionConfig {
    int total_blocks = 8;
    int stride = 2;
    int detach_count = 0;
    int hidden_dim = 16;
    int num_heads = 2;
    int patch_size = 8;
    double skip_scale = 1.0;
    double dropout_p = 0.0;
    bool use_class_token = true;
    int image_size = 32;
    int adapter_hidden = 32;
    int num_classes = 37; // 36 glyphs + background

    int grid_side() const { return image_size / patch_size; }
    int n_patches() const { return grid_side() * grid_side(); }
    int n_tokens() const { return n_patches() + (use_class_token ? 1 : 0); }

    void validate() const {
        if (total_blocks <= 0 || stride <= 0 || detach_count < 0)
            throw config_error("fusion config: blocks/stride must be positive, detach_count >= 0");
        if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0)
            throw config_error("fusion config: hidden_dim must be divisible by num_heads");
        if (image_size % patch_size != 0)
            throw config_error("fusion config: image_size must be a multiple of patch_size");
        if (skip_scale < 0.0) throw config_error("fusion config: skip_scale must be nonnegative");
    }
};

struct SkipLayers {
    std::vector<int> detached; // 1-based block indices, shallow->deep
    std::vector<int> live;

    std::vector<int> all() const {
        std::vector<int> v = detached;
        v.insert(v.end(), live.begin(), live.end());
        return v;
    }
};

// Tap set = {S, 2S, ..., floor(K/S)*S}; the D shallowest are detached.
inline SkipLayers select_skip_layers(const FusionConfig& cfg) {
    cfg.validate();
    std::vector<int> taps;
    for (int l = cfg.stride; l <= cfg.total_blocks; l += cfg.stride) taps.push_back(l);
    if (cfg.detach_count > static_cast<int>(taps.size()))
        throw config_error("select_skip_layers: detach_count exceeds tap count (stride too large)");
    SkipLayers out;
    for (size_t i = 0; i < taps.size(); ++i) {
        if (static_cast<int>(i) < cfg.detach_count)
            out.detached.push_back(taps[i]);
        else
            out.live.push_back(taps[i]);
    }
    return out;
}

// Which taps get stop-gradient in this pass. AsConfigured follows the
// config's detach_count; the probe passes force all or none.
enum class DetachMode { AsConfigured, AllTaps, NoTaps };

// Tapped features from one forward pass; all Vars live on the same tape.
struct EncoderTaps {
    Var h_main;
    std::vector<std::pair<int, Var>> taps; // (1-based block index, features), shallow->deep
};

// Mean-over-heads attention probabilities per block, captured on request.
struct AttnCapture {
    std::vector<Tensor> per_block; // each (T, T)
};

// [CLS]-query patch attention reshaped to the patch grid, min-max
// normalized. A constant (degenerate) map normalizes to all zeros.
struct AttentionMap {
    int block = 0;
    int grid_side = 0;
    std::vector<double> grid; // row-major, values in [0,1]
};

namespace detail {

inline Tensor init_weight(std::vector<int> shape, Rng& rng, double std_dev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = std_dev * rng.normal();
    return t;
}

} // namespace detail

// One pre-norm transformer block: x + Wo*attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
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

    // Residual output projections zeroed makes the block an exact identity.
    void make_identity() {
        wo.value = Tensor::zeros(wo.value.shape);
        w2.value = Tensor::zeros(w2.value.shape);
    }

    Var forward(Tape& t, ParamBind& bind, Var x, int num_heads, double dropout_p, Rng& rng,
                Tensor* attn_out = nullptr) {
        int dim = t.value(x).cols();
        int head_dim = dim / num_heads;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

        Var xn = t.layer_norm(x);
        Var q = t.add(t.matmul(xn, bind.bind(t, wq)), bind.bind(t, bq));
        Var k = t.add(t.matmul(xn, bind.bind(t, wk)), bind.bind(t, bk));
        Var v = t.add(t.matmul(xn, bind.bind(t, wv)), bind.bind(t, bv));

        std::vector<Var> head_outs;
        Tensor attn_mean;
        for (int h = 0; h < num_heads; ++h) {
            Var qh = t.slice_channels(q, h * head_dim, head_dim);
            Var kh = t.slice_channels(k, h * head_dim, head_dim);
            Var vh = t.slice_channels(v, h * head_dim, head_dim);
            Var scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt);
            Var probs = t.softmax(scores);
            if (attn_out) {
                const Tensor& pv = t.value(probs);
                if (attn_mean.numel() == 0) attn_mean = Tensor::zeros(pv.shape);
                for (size_t i = 0; i < pv.numel(); ++i) attn_mean.data[i] += pv.data[i] / num_heads;
            }
            head_outs.push_back(t.matmul(probs, vh));
        }
        if (attn_out) *attn_out = attn_mean;

        Var attn = t.add(t.matmul(t.concat_channels(head_outs), bind.bind(t, wo)), bind.bind(t, bo));
        if (dropout_p > 0.0) attn = t.dropout(attn, dropout_p, rng);
        Var x1 = t.add(x, attn);

        Var x1n = t.layer_norm(x1);
        Var hmid = t.gelu(t.add(t.matmul(x1n, bind.bind(t, w1)), bind.bind(t, b1)));
        Var mlp = t.add(t.matmul(hmid, bind.bind(t, w2)), bind.bind(t, b2));
        if (dropout_p > 0.0) mlp = t.dropout(mlp, dropout_p, rng);
        return t.add(x1, mlp);
    }
};

// Toy patch encoder with stride-tapped blocks, the detached-skip fusion
// adapter, and a dense per-patch classification head.
class FusionModel {
public:
    FusionConfig cfg;

    Param patch_w, patch_b, pos_embed, cls_token;
    std::vector<TransformerBlock> blocks;
    Param adapter_w1, adapter_b1, adapter_w2, adapter_b2;
    Param head_w, head_b;

    explicit FusionModel(FusionConfig config, Rng& rng) : cfg(config) {
        cfg.validate();
        int dim = cfg.hidden_dim;
        int pd = cfg.patch_size * cfg.patch_size;
        patch_w = Param("patch.w", detail::init_weight({pd, dim}, rng, 1.0 / std::sqrt(static_cast<double>(pd))));
        patch_b = Param("patch.b", Tensor::zeros({dim}));
        pos_embed = Param("pos", detail::init_weight({cfg.n_tokens(), dim}, rng, 0.02));
        if (cfg.use_class_token) cls_token = Param("cls", detail::init_weight({1, dim}, rng, 0.02));
        blocks.resize(cfg.total_blocks);
        for (int i = 0; i < cfg.total_blocks; ++i)
            blocks[i].init("enc.b" + std::to_string(i + 1), dim, rng);

        int n_taps = static_cast<int>(select_skip_layers(cfg).all().size());
        int fused_in = dim * (1 + n_taps);
        adapter_w1 = Param("adapter.w1",
                           detail::init_weight({fused_in, cfg.adapter_hidden}, rng, 1.0 / std::sqrt(static_cast<double>(fused_in))));
        adapter_b1 = Param("adapter.b1", Tensor::zeros({cfg.adapter_hidden}));
        adapter_w2 = Param("adapter.w2",
                           detail::init_weight({cfg.adapter_hidden, dim}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.adapter_hidden))));
        adapter_b2 = Param("adapter.b2", Tensor::zeros({dim}));
        head_w = Param("head.w", detail::init_weight({dim, cfg.num_classes}, rng, 1.0 / std::sqrt(static_cast<double>(dim))));
        head_b = Param("head.b", Tensor::zeros({cfg.num_classes}));
    }

    std::vector<Param*> params() {
        std::vector<Param*> out = {&patch_w, &patch_b, &pos_embed};
        if (cfg.use_class_token) out.push_back(&cls_token);
        for (auto& b : blocks)
            for (Param* p : b.params()) out.push_back(p);
        for (Param* p : adapter_params()) out.push_back(p);
        out.push_back(&head_w);
        out.push_back(&head_b);
        return out;
    }

    std::vector<Param*> adapter_params() {
        return {&adapter_w1, &adapter_b1, &adapter_w2, &adapter_b2};
    }

    std::vector<Param*> encoder_params() {
        std::vector<Param*> out = {&patch_w, &patch_b, &pos_embed};
        if (cfg.use_class_token) out.push_back(&cls_token);
        for (auto& b : blocks)
            for (Param* p : b.params()) out.push_back(p);
        return out;
    }

    std::vector<Param*> params_with_prefix(const std::string& prefix) {
        std::vector<Param*> out;
        for (Param* p : params())
            if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
        if (out.empty()) throw config_error("no parameters match prefix '" + prefix + "'");
        return out;
    }

    void zero_grads() {
        for (Param* p : params()) p->zero_grad();
    }

    // Splits an image into row-major patch vectors, shape (N, P*P).
    Tensor patchify(const Tensor& image) const {
        if (image.rank() != 2 || image.rows() != cfg.image_size || image.cols() != cfg.image_size)
            throw config_error("patchify: image must be " + std::to_string(cfg.image_size) + "^2, got " + image.shape_str());
        int g = cfg.grid_side(), p = cfg.patch_size;
        Tensor out({g * g, p * p});
        for (int pr = 0; pr < g; ++pr)
            for (int pc = 0; pc < g; ++pc)
                for (int i = 0; i < p; ++i)
                    for (int j = 0; j < p; ++j)
                        out.at(pr * g + pc, i * p + j) = image.at(pr * p + i, pc * p + j);
        return out;
    }

    // Patch projection + [CLS] slot + learned positions; output (T, C).
    Var embed_image(Tape& t, ParamBind& bind, const Tensor& image) {
        Var patches = t.constant(patchify(image));
        Var tok = t.add(t.matmul(patches, bind.bind(t, patch_w)), bind.bind(t, patch_b));
        if (cfg.use_class_token) tok = t.concat_rows(bind.bind(t, cls_token), tok);
        return t.add(tok, bind.bind(t, pos_embed));
    }

    // Runs all blocks, recording tapped features. Detachment is applied at
    // fusion time only; taps here are live graph values.
    EncoderTaps encode_with_taps(Tape& t, ParamBind& bind, Var tokens, Rng& rng,
                                 AttnCapture* capture = nullptr) {
        if (t.value(tokens).cols() != cfg.hidden_dim)
            throw config_error("encode_with_taps: token channel dim != hidden_dim");
        SkipLayers layers = select_skip_layers(cfg);
        std::vector<int> tap_set = layers.all();
        EncoderTaps out;
        Var x = tokens;
        if (capture) capture->per_block.resize(cfg.total_blocks);
        size_t next_tap = 0;
        for (int l = 1; l <= cfg.total_blocks; ++l) {
            Tensor* attn_slot = capture ? &capture->per_block[l - 1] : nullptr;
            x = blocks[l - 1].forward(t, bind, x, cfg.num_heads, cfg.dropout_p, rng, attn_slot);
            if (next_tap < tap_set.size() && tap_set[next_tap] == l) {
                out.taps.emplace_back(l, x);
                ++next_tap;
            }
        }
        out.h_main = x;
        return out;
    }

    // z = MLP([h_main ; taps...]) with stop-gradient on the detached taps.
    // The concat layout is fixed (h_main, then taps shallow->deep) for every
    // detach mode, so the forward value never depends on D.
    Var fuse(Tape& t, ParamBind& bind, const EncoderTaps& taps, DetachMode mode = DetachMode::AsConfigured) {
        SkipLayers layers = select_skip_layers(cfg);
        std::vector<Var> parts = {taps.h_main};
        for (auto& [layer, v] : taps.taps) {
            Var feat = cfg.skip_scale == 1.0 ? v : t.scale(v, cfg.skip_scale);
            bool detach = false;
            switch (mode) {
                case DetachMode::AllTaps: detach = true; break;
                case DetachMode::NoTaps: detach = false; break;
                case DetachMode::AsConfigured:
                    detach = std::find(layers.detached.begin(), layers.detached.end(), layer) != layers.detached.end();
                    break;
            }
            parts.push_back(detach ? t.stop_gradient(feat) : feat);
        }
        Var cat = t.concat_channels(parts);
        Var h = t.gelu(t.add(t.matmul(cat, bind.bind(t, adapter_w1)), bind.bind(t, adapter_b1)));
        return t.add(t.matmul(h, bind.bind(t, adapter_w2)), bind.bind(t, adapter_b2));
    }

    // Dense per-patch logits from fused tokens (class token dropped).
    Var dense_logits(Tape& t, ParamBind& bind, Var fused) {
        Var tokens = fused;
        if (cfg.use_class_token)
            tokens = t.slice_rows(fused, 1, cfg.n_patches());
        return t.add(t.matmul(tokens, bind.bind(t, head_w)), bind.bind(t, head_b));
    }

    // Mean cross-entropy over a batch of (image, per-patch labels).
    Var batch_loss(Tape& t, ParamBind& bind, const std::vector<Tensor>& images,
                   const std::vector<std::vector<int>>& labels, Rng& rng,
                   DetachMode mode = DetachMode::AsConfigured) {
        if (images.empty() || images.size() != labels.size())
            throw config_error("batch_loss: empty batch or image/label count mismatch");
        Var total;
        for (size_t b = 0; b < images.size(); ++b) {
            Var tok = embed_image(t, bind, images[b]);
            EncoderTaps taps = encode_with_taps(t, bind, tok, rng);
            Var z = fuse(t, bind, taps, mode);
            Var loss = t.cross_entropy(dense_logits(t, bind, z), labels[b]);
            total = b == 0 ? loss : t.add(total, loss);
        }
        return t.scale(total, 1.0 / static_cast<double>(images.size()));
    }
};

// Min-max normalization of raw patch scores to [0,1]; a constant score
// vector (zero range) maps to all zeros.
inline std::vector<double> minmax_normalize(const std::vector<double>& scores) {
    if (scores.empty()) throw config_error("minmax_normalize: empty scores");
    double lo = scores[0], hi = scores[0];
    for (double v : scores) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double range = hi - lo;
    std::vector<double> out(scores.size(), 0.0);
    if (range > 0.0)
        for (size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - lo) / range;
    return out;
}

// [CLS]-attention export per the frozen-attention visualization protocol:
// mean over heads, class-token query row without the class->class entry,
// min-max normalized onto the patch grid.
inline AttentionMap attention_map_export(FusionModel& model, const Tensor& image, int block_index, Rng& rng) {
    if (!model.cfg.use_class_token)
        throw config_error("attention_map_export: model configured without class token");
    if (block_index < 1 || block_index > model.cfg.total_blocks)
        throw config_error("attention_map_export: block index out of range");
    Tape t;
    ParamBind bind;
    AttnCapture cap;
    Var tok = model.embed_image(t, bind, image);
    model.encode_with_taps(t, bind, tok, rng, &cap);
    const Tensor& attn = cap.per_block[block_index - 1];

    int g = model.cfg.grid_side();
    // row 0 is the [CLS] query; skip column 0 ([CLS]->[CLS]).
    std::vector<double> scores(static_cast<size_t>(g) * g);
    for (int j = 0; j < g * g; ++j) scores[j] = attn.at(0, 1 + j);

    AttentionMap map;
    map.block = block_index;
    map.grid_side = g;
    map.grid = minmax_normalize(scores);
    return map;
}

// Nearest-neighbor upsample of a patch-grid map to image resolution.
inline Tensor attention_map_image(const AttentionMap& map, int image_size) {
    int g = map.grid_side;
    int scale = image_size / g;
    Tensor img({image_size, image_size});
    for (int i = 0; i < image_size; ++i)
        for (int j = 0; j < image_size; ++j)
            img.at(i, j) = map.grid[static_cast<size_t>(i / scale) * g + (j / scale)];
    return img;
}

} // namespace skiplab
