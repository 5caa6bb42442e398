#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skiplab/emit.hpp"
#include "skiplab/fusion.hpp"
#include "skiplab/glyphs.hpp"
#include "skiplab/optim.hpp"
#include "skiplab/pathwise.hpp"
#include "skiplab/probe.hpp"

namespace skiplab {

using nlohmann::json;

// Full description of a suite run; serializable, and identical spec + seed
// reproduces identical metric bytes.
struct ExperimentSpec {
    std::string suite = "train";
    FusionConfig fusion;
    AdamWConfig optim;
    DatasetSpec dataset;
    ProbeConfig probe;
    int batch_size = 4;
    int steps = 300;
    std::vector<uint64_t> seeds = {0};
    double stage_a_ratio = 0.1; // adapter-only warmup fraction
    int window = 50;            // trailing window K for gradient statistics
    int consecutive = 3;        // windows required below 1 for the transition
    int ma_horizon = 50;
    std::string probe_group;    // parameter-name prefix; empty = first tapped block
    std::string out_dir = "out";

    void validate() const {
        fusion.validate();
        if (batch_size <= 0 || steps < 0) throw config_error("spec: batch_size/steps invalid");
        if (seeds.empty()) throw config_error("spec: at least one seed required");
        if (window < 1 || consecutive < 1 || ma_horizon < 1)
            throw config_error("spec: window/consecutive/ma_horizon must be >= 1");
        if (stage_a_ratio < 0.0 || stage_a_ratio > 1.0)
            throw config_error("spec: stage_a_ratio must be in [0,1]");
    }
};

// ---- JSON (config file) bindings ----

inline void to_json(json& j, const FusionConfig& c) {
    j = json{{"total_blocks", c.total_blocks}, {"stride", c.stride}, {"detach_count", c.detach_count},
             {"hidden_dim", c.hidden_dim},     {"num_heads", c.num_heads}, {"patch_size", c.patch_size},
             {"skip_scale", c.skip_scale},     {"dropout_p", c.dropout_p},
             {"use_class_token", c.use_class_token}, {"image_size", c.image_size},
             {"adapter_hidden", c.adapter_hidden},   {"num_classes", c.num_classes}};
}

inline void from_json(const json& j, FusionConfig& c) {
    FusionConfig d;
    c.total_blocks = j.value("total_blocks", d.total_blocks);
    c.stride = j.value("stride", d.stride);
    c.detach_count = j.value("detach_count", d.detach_count);
    c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
    c.num_heads = j.value("num_heads", d.num_heads);
    c.patch_size = j.value("patch_size", d.patch_size);
    c.skip_scale = j.value("skip_scale", d.skip_scale);
    c.dropout_p = j.value("dropout_p", d.dropout_p);
    c.use_class_token = j.value("use_class_token", d.use_class_token);
    c.image_size = j.value("image_size", d.image_size);
    c.adapter_hidden = j.value("adapter_hidden", d.adapter_hidden);
    c.num_classes = j.value("num_classes", d.num_classes);
}

inline void to_json(json& j, const AdamWConfig& c) {
    j = json{{"lr", c.lr},           {"beta1", c.beta1},        {"beta2", c.beta2},
             {"eps", c.eps},         {"weight_decay", c.weight_decay},
             {"warmup_ratio", c.warmup_ratio}, {"cosine_decay", c.cosine_decay}};
}

inline void from_json(const json& j, AdamWConfig& c) {
    AdamWConfig d;
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.warmup_ratio = j.value("warmup_ratio", d.warmup_ratio);
    c.cosine_decay = j.value("cosine_decay", d.cosine_decay);
}

inline void to_json(json& j, const DatasetSpec& c) {
    j = json{{"seed", c.seed},
             {"count", c.count},
             {"image_size", c.image_size},
             {"noise_amp", c.noise_amp},
             {"cell", c.cell},
             {"glyph_density", c.glyph_density},
             {"target_rect", {c.target_rect.r0, c.target_rect.c0, c.target_rect.h, c.target_rect.w}},
             {"target_glyphs", c.target_glyphs},
             {"context_glyphs", c.context_glyphs},
             {"target_jitter", c.target_jitter},
             {"intensity_min", c.intensity_min}};
}

inline void from_json(const json& j, DatasetSpec& c) {
    DatasetSpec d;
    c.seed = j.value("seed", d.seed);
    c.count = j.value("count", d.count);
    c.image_size = j.value("image_size", d.image_size);
    c.noise_amp = j.value("noise_amp", d.noise_amp);
    c.cell = j.value("cell", d.cell);
    c.glyph_density = j.value("glyph_density", d.glyph_density);
    if (j.contains("target_rect")) {
        auto r = j.at("target_rect");
        c.target_rect = Rect{r.at(0), r.at(1), r.at(2), r.at(3)};
    }
    c.target_glyphs = j.value("target_glyphs", d.target_glyphs);
    c.context_glyphs = j.value("context_glyphs", d.context_glyphs);
    c.target_jitter = j.value("target_jitter", d.target_jitter);
    c.intensity_min = j.value("intensity_min", d.intensity_min);
}

inline void to_json(json& j, const ProbeConfig& c) {
    j = json{{"toy_lm_depth", c.toy_lm_depth}, {"decoder_depth", c.decoder_depth},
             {"decoder_dim", c.decoder_dim},   {"decoder_heads", c.decoder_heads},
             {"tau", c.tau},                   {"steps", c.steps},
             {"batch", c.batch},               {"lr", c.lr},
             {"weight_decay", c.weight_decay}, {"freeze_encoder", c.freeze_encoder},
             {"freeze_adapter", c.freeze_adapter}, {"merge", c.merge}};
}

inline void from_json(const json& j, ProbeConfig& c) {
    ProbeConfig d;
    c.toy_lm_depth = j.value("toy_lm_depth", d.toy_lm_depth);
    c.decoder_depth = j.value("decoder_depth", d.decoder_depth);
    c.decoder_dim = j.value("decoder_dim", d.decoder_dim);
    c.decoder_heads = j.value("decoder_heads", d.decoder_heads);
    c.tau = j.value("tau", d.tau);
    c.steps = j.value("steps", d.steps);
    c.batch = j.value("batch", d.batch);
    c.lr = j.value("lr", d.lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.freeze_encoder = j.value("freeze_encoder", d.freeze_encoder);
    c.freeze_adapter = j.value("freeze_adapter", d.freeze_adapter);
    c.merge = j.value("merge", d.merge);
}

inline void to_json(json& j, const ExperimentSpec& s) {
    j = json{{"suite", s.suite},       {"fusion", s.fusion},   {"optim", s.optim},
             {"dataset", s.dataset},   {"probe", s.probe},     {"batch_size", s.batch_size},
             {"steps", s.steps},       {"seeds", s.seeds},     {"stage_a_ratio", s.stage_a_ratio},
             {"window", s.window},     {"consecutive", s.consecutive}, {"ma_horizon", s.ma_horizon},
             {"probe_group", s.probe_group}, {"out_dir", s.out_dir}};
}

inline void from_json(const json& j, ExperimentSpec& s) {
    ExperimentSpec d;
    s.suite = j.value("suite", d.suite);
    if (j.contains("fusion")) j.at("fusion").get_to(s.fusion);
    if (j.contains("optim")) j.at("optim").get_to(s.optim);
    if (j.contains("dataset")) j.at("dataset").get_to(s.dataset);
    if (j.contains("probe")) j.at("probe").get_to(s.probe);
    s.batch_size = j.value("batch_size", d.batch_size);
    s.steps = j.value("steps", d.steps);
    s.seeds = j.value("seeds", d.seeds);
    s.stage_a_ratio = j.value("stage_a_ratio", d.stage_a_ratio);
    s.window = j.value("window", d.window);
    s.consecutive = j.value("consecutive", d.consecutive);
    s.ma_horizon = j.value("ma_horizon", d.ma_horizon);
    s.probe_group = j.value("probe_group", d.probe_group);
    s.out_dir = j.value("out_dir", d.out_dir);
}

// ---- small deterministic worker pool ----

// Runs fn(0..n) on up to `workers` threads; tasks own disjoint output slots
// so merge order is fixed by index regardless of scheduling.
inline void run_parallel(int n, const std::function<void(int)>& fn, int workers = 0) {
    if (n <= 0) return;
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---- training ----

struct TrainingRun {
    uint64_t seed = 0;
    std::vector<double> losses;
    std::vector<double> lrs;
    bool aborted = false;
    std::string abort_reason;

    double final_loss() const {
        if (losses.empty()) return std::numeric_limits<double>::quiet_NaN();
        int tail = std::max<int>(1, static_cast<int>(losses.size()) / 10);
        double acc = 0.0;
        for (size_t i = losses.size() - tail; i < losses.size(); ++i) acc += losses[i];
        return acc / tail;
    }
};

namespace detail {

inline DatasetSpec run_dataset(const ExperimentSpec& spec, uint64_t seed) {
    DatasetSpec ds = spec.dataset;
    ds.seed = spec.dataset.seed * 1000003ull + seed;
    return ds;
}

} // namespace detail

// Two-stage training on the dense glyph task: adapter-only warmup for the
// first stage_a fraction of steps, then full fine-tuning.
inline TrainingRun run_training(const ExperimentSpec& spec, uint64_t seed) {
    spec.validate();
    TrainingRun run;
    run.seed = seed;
    if (spec.steps == 0) return run;

    Rng init_rng = Rng(seed).derive("init");
    FusionModel model(spec.fusion, init_rng);
    Rng model_rng = Rng(seed).derive("model");
    DatasetSpec ds = detail::run_dataset(spec, seed);

    AdamWConfig ocfg = spec.optim;
    ocfg.total_steps = spec.steps;
    AdamW opt(ocfg);
    int stage_a_steps = static_cast<int>(spec.stage_a_ratio * spec.steps);

    std::vector<Tensor> images;
    std::vector<std::vector<int>> labels;
    for (int step = 0; step < spec.steps; ++step) {
        downstream_task_batch(ds, spec.batch_size, step, images, labels);
        double lr = opt.current_lr();
        try {
            Tape t;
            ParamBind bind;
            Var loss = model.batch_loss(t, bind, images, labels, model_rng);
            run.losses.push_back(t.value(loss).item());
            run.lrs.push_back(lr);
            t.backward(loss);
            model.zero_grads();
            bind.pull_grads(t);
        } catch (const numeric_error& e) {
            run.aborted = true;
            run.abort_reason = e.what();
            return run;
        }
        std::vector<Param*> active = step < stage_a_steps ? model.adapter_params() : model.params();
        opt.step(active);
    }
    return run;
}

inline void emit_training(const ExperimentSpec& spec, const std::vector<TrainingRun>& runs,
                          const std::string& dir) {
    JsonlWriter metrics(dir + "/metrics.jsonl");
    for (const auto& run : runs) {
        for (size_t i = 0; i < run.losses.size(); ++i) {
            JsonLine l;
            l.text("suite", spec.suite)
                .integer("run", static_cast<long long>(run.seed))
                .integer("step", static_cast<long long>(i))
                .num("loss", run.losses[i])
                .num("lr", run.lrs[i]);
            metrics.line(l);
        }
        if (run.aborted) {
            JsonLine l;
            l.text("suite", spec.suite)
                .integer("run", static_cast<long long>(run.seed))
                .integer("step", static_cast<long long>(run.losses.size()))
                .text("event", "nan_abort")
                .text("reason", run.abort_reason);
            metrics.line(l);
        }
    }
    SvgPanel panel;
    panel.title = "training loss";
    panel.xlabel = "step";
    panel.ylabel = "loss";
    for (const auto& run : runs) {
        if (run.losses.empty()) continue;
        SvgSeries s;
        s.name = "seed " + std::to_string(run.seed);
        for (size_t i = 0; i < run.losses.size(); ++i) {
            s.xs.push_back(static_cast<double>(i));
            s.ys.push_back(run.losses[i]);
        }
        panel.series.push_back(std::move(s));
    }
    if (!panel.series.empty()) emit_svg_plot(dir + "/loss.svg", {panel});
}

// ---- gradient dynamics ----

struct DynamicsStep {
    int step = 0;
    double norm2_main = 0.0, norm2_skip = 0.0, norm2_full = 0.0;
    double cos_inst = 0.0;
    double ratio = 0.0; // ||g_skip|| / ||g_main||, unsquared norms
    std::optional<double> tr_m, tr_s, delta, snr_main, snr_skip;
};

struct DynamicsRun {
    uint64_t seed = 0;
    std::string group;
    std::vector<DynamicsStep> steps;
    std::vector<double> losses;
    TransitionReport transition;
    std::optional<AssumptionReport> early_assumption; // over the first full window
    std::vector<double> ratio_series;
};

// Per-step pathwise decomposition during training. The update gradient
// reuses whichever decomposition pass matches the configured detach count;
// intermediate D values take a third checkpointed pass.
inline DynamicsRun run_grad_dynamics(const ExperimentSpec& spec, uint64_t seed) {
    spec.validate();
    SkipLayers layers = select_skip_layers(spec.fusion);
    if (layers.all().empty())
        throw config_error("run_grad_dynamics: probe group missing (no tapped layers)");

    Rng init_rng = Rng(seed).derive("init");
    FusionModel model(spec.fusion, init_rng);
    Rng model_rng = Rng(seed).derive("model");
    DatasetSpec ds = detail::run_dataset(spec, seed);

    std::string group_prefix =
        spec.probe_group.empty() ? "enc.b" + std::to_string(layers.all().front()) + "." : spec.probe_group;
    std::vector<Param*> group = model.params_with_prefix(group_prefix);

    AdamWConfig ocfg = spec.optim;
    ocfg.total_steps = spec.steps;
    AdamW opt(ocfg);
    int stage_a_steps = static_cast<int>(spec.stage_a_ratio * spec.steps);

    int n_taps = static_cast<int>(layers.all().size());
    UpdateFrom reuse = spec.fusion.detach_count == 0
                           ? UpdateFrom::FullPass
                           : (spec.fusion.detach_count == n_taps ? UpdateFrom::MainPass : UpdateFrom::None);

    DynamicsRun run;
    run.seed = seed;
    run.group = group_prefix;
    std::vector<GradSnapshot> snapshots;
    std::vector<Tensor> images;
    std::vector<std::vector<int>> labels;

    for (int step = 0; step < spec.steps; ++step) {
        downstream_task_batch(ds, spec.batch_size, step, images, labels);
        auto forward = [&](Tape& t, ParamBind& bind, DetachMode mode, Rng& r) {
            return model.batch_loss(t, bind, images, labels, r, mode);
        };
        RngState pre_step = model_rng.save();
        model.zero_grads();
        GradSnapshot snap = decompose(step, forward, group, model_rng, reuse);
        if (reuse == UpdateFrom::None) {
            model_rng.restore(pre_step);
            Tape t;
            ParamBind bind;
            Var loss = forward(t, bind, DetachMode::AsConfigured, model_rng);
            t.backward(loss);
            bind.pull_grads(t);
            run.losses.push_back(t.value(loss).item());
        } else {
            // loss value comes from the reused full/main pass; recompute is
            // forward-invariant so either pass reports the same number
            Tape t;
            ParamBind bind;
            RngState s = model_rng.save();
            Var loss = forward(t, bind, DetachMode::AsConfigured, model_rng);
            model_rng.restore(s);
            run.losses.push_back(t.value(loss).item());
        }

        DynamicsStep d;
        d.step = step;
        d.norm2_main = sq_norm(snap.g_main);
        d.norm2_skip = sq_norm(snap.g_skip);
        d.norm2_full = sq_norm(snap.g_full);
        d.cos_inst = cosine(snap.g_main, snap.g_skip);
        d.ratio = std::sqrt(d.norm2_skip) / std::max(std::sqrt(d.norm2_main), 1e-300);
        snapshots.push_back(std::move(snap));
        if (step >= spec.window - 1) {
            std::span<const GradSnapshot> win(snapshots.data() + step - spec.window + 1,
                                              static_cast<size_t>(spec.window));
            d.tr_m = variance_trace(win, Branch::Main);
            d.tr_s = variance_trace(win, Branch::Skip);
            d.delta = delta_ratio(win);
            d.snr_main = snr(win, Branch::Main);
            d.snr_skip = snr(win, Branch::Skip);
        }
        run.ratio_series.push_back(d.ratio);
        run.steps.push_back(d);

        std::vector<Param*> active = step < stage_a_steps ? model.adapter_params() : model.params();
        opt.step(active);
    }

    if (static_cast<int>(run.ratio_series.size()) >= spec.window)
        run.transition = transition_step(run.ratio_series, spec.window, spec.consecutive);
    else
        run.transition.window = spec.window;
    if (static_cast<int>(snapshots.size()) >= std::max(2, spec.window)) {
        std::span<const GradSnapshot> early(snapshots.data(), static_cast<size_t>(spec.window));
        run.early_assumption = assumption_report(early);
    }
    return run;
}

inline void emit_dynamics(const ExperimentSpec& spec, const DynamicsRun& run, const std::string& dir) {
    JsonlWriter metrics(dir + "/metrics_seed" + std::to_string(run.seed) + ".jsonl");
    for (const auto& d : run.steps) {
        JsonLine l;
        l.integer("step", d.step)
            .text("group", run.group)
            .num("norm_main", d.norm2_main)
            .num("norm_skip", d.norm2_skip)
            .num("norm_full", d.norm2_full)
            .num("cos", d.cos_inst)
            .opt_num("delta", d.delta)
            .opt_num("snr_main", d.snr_main)
            .opt_num("snr_skip", d.snr_skip)
            .opt_num("tr_m", d.tr_m)
            .opt_num("tr_s", d.tr_s);
        metrics.line(l);
    }

    std::vector<double> xs, nm, ns;
    for (const auto& d : run.steps) {
        xs.push_back(d.step);
        nm.push_back(d.norm2_main);
        ns.push_back(d.norm2_skip);
    }
    SvgPanel p_norm{"gradient norms", "step", "||g||^2", {}};
    p_norm.series.push_back({"main", xs, nm, false, {}, {}});
    p_norm.series.push_back({"skip", xs, ns, false, {}, {}});
    p_norm.series.push_back({"main MA", xs, moving_average(nm, spec.ma_horizon), false, {}, {}});
    p_norm.series.push_back({"skip MA", xs, moving_average(ns, spec.ma_horizon), false, {}, {}});

    SvgPanel p_trace{"variance traces", "step", "tr(Sigma)", {}};
    {
        std::vector<double> txs, tm, ts;
        for (const auto& d : run.steps)
            if (d.tr_m) {
                txs.push_back(d.step);
                tm.push_back(*d.tr_m);
                ts.push_back(*d.tr_s);
            }
        if (txs.empty()) {
            txs.push_back(0);
            tm.push_back(0);
            ts.push_back(0);
        }
        p_trace.series.push_back({"tr main", txs, tm, false, {}, {}});
        p_trace.series.push_back({"tr skip", txs, ts, false, {}, {}});
    }

    SvgPanel p_cos{"branch cosine", "step", "cos(g_skip, g_main)", {}};
    {
        std::vector<double> cy;
        for (const auto& d : run.steps) cy.push_back(d.cos_inst);
        p_cos.series.push_back({"cos", xs, cy, true, {}, {}});
    }

    SvgPanel p_delta{"cross-covariance ratio", "step", "delta", {}};
    {
        std::vector<double> dxs, dy;
        for (const auto& d : run.steps)
            if (d.delta) {
                dxs.push_back(d.step);
                dy.push_back(*d.delta);
            }
        if (dxs.empty()) {
            dxs.push_back(0);
            dy.push_back(0);
        }
        p_delta.series.push_back({"delta", dxs, dy, true, {}, {}});
    }

    emit_svg_plot(dir + "/panels_seed" + std::to_string(run.seed) + ".svg",
                  {p_norm, p_trace, p_cos, p_delta}, "pathwise gradient dynamics");
}

// ---- stride x detach ablation grid ----

struct GridCell {
    int stride = 0;
    int detach = 0;
    bool valid = false;
    std::string skip_reason;
    double mean_final_loss = 0.0;
    double delta_vs_baseline = 0.0; // baseline loss - cell loss (positive = better)
};

struct GridReport {
    std::vector<GridCell> cells;
    double baseline_loss = 0.0;  // largest stride, D = 0
    double nofusion_loss = 0.0;  // empty tap set
};

inline GridReport run_ablation_grid(const ExperimentSpec& spec, const std::vector<int>& strides,
                                    const std::vector<int>& detaches, int workers = 0) {
    spec.validate();
    if (strides.empty() || detaches.empty())
        throw config_error("run_ablation_grid: empty stride or detach list");

    struct Task {
        int stride, detach;
        uint64_t seed;
        bool nofusion = false;
    };
    std::vector<Task> tasks;
    std::vector<GridCell> cells;
    for (int s : strides)
        for (int d : detaches) {
            GridCell cell;
            cell.stride = s;
            cell.detach = d;
            FusionConfig fc = spec.fusion;
            fc.stride = s;
            fc.detach_count = d;
            try {
                select_skip_layers(fc);
                cell.valid = true;
            } catch (const config_error& e) {
                cell.skip_reason = e.what();
            }
            cells.push_back(cell);
            if (cell.valid)
                for (uint64_t seed : spec.seeds) tasks.push_back({s, d, seed, false});
        }
    int max_stride = *std::max_element(strides.begin(), strides.end());
    for (uint64_t seed : spec.seeds) {
        tasks.push_back({max_stride, 0, seed, false});       // baseline cell
        tasks.push_back({spec.fusion.total_blocks + 1, 0, seed, true}); // no-fusion
    }

    std::vector<double> results(tasks.size(), 0.0);
    run_parallel(static_cast<int>(tasks.size()), [&](int i) {
        ExperimentSpec cell_spec = spec;
        cell_spec.fusion.stride = tasks[i].stride;
        cell_spec.fusion.detach_count = tasks[i].detach;
        TrainingRun run = run_training(cell_spec, tasks[i].seed);
        results[i] = run.final_loss();
    }, workers);

    auto mean_for = [&](int stride, int detach, bool nofusion) {
        double acc = 0.0;
        int n = 0;
        for (size_t i = 0; i < tasks.size(); ++i)
            if (tasks[i].stride == stride && tasks[i].detach == detach && tasks[i].nofusion == nofusion) {
                acc += results[i];
                ++n;
            }
        return n ? acc / n : std::numeric_limits<double>::quiet_NaN();
    };

    GridReport report;
    report.baseline_loss = mean_for(max_stride, 0, false);
    report.nofusion_loss = mean_for(spec.fusion.total_blocks + 1, 0, true);
    for (auto& cell : cells) {
        if (!cell.valid) continue;
        cell.mean_final_loss = mean_for(cell.stride, cell.detach, false);
        cell.delta_vs_baseline = report.baseline_loss - cell.mean_final_loss;
    }
    report.cells = std::move(cells);
    return report;
}

inline void emit_grid(const GridReport& report, const std::string& dir) {
    CsvWriter csv(dir + "/grid.csv", {"stride", "detach", "valid", "final_loss", "delta_vs_baseline"});
    for (const auto& c : report.cells) {
        if (c.valid)
            csv.row({std::to_string(c.stride), std::to_string(c.detach), "1", fmt17(c.mean_final_loss),
                     fmt17(c.delta_vs_baseline)});
        else
            csv.row({std::to_string(c.stride), std::to_string(c.detach), "0", "skipped", "skipped"});
    }
    csv.row({"baseline", "0", "1", fmt17(report.baseline_loss), "0"});
    csv.row({"no-fusion", "0", "1", fmt17(report.nofusion_loss),
             fmt17(report.baseline_loss - report.nofusion_loss)});

    SvgPanel panel{"stride x detach ablation (bubble = |delta|, green = better)", "stride S",
                   "detach count D", {}};
    SvgSeries bubbles;
    bubbles.name = "delta vs baseline";
    bubbles.scatter = true;
    double max_abs = 1e-12;
    for (const auto& c : report.cells)
        if (c.valid) max_abs = std::max(max_abs, std::abs(c.delta_vs_baseline));
    for (const auto& c : report.cells) {
        if (!c.valid) continue;
        bubbles.xs.push_back(c.stride);
        bubbles.ys.push_back(c.detach);
        bubbles.sizes.push_back(4.0 + 14.0 * std::abs(c.delta_vs_baseline) / max_abs);
        bubbles.colors.push_back(c.delta_vs_baseline >= 0 ? "#3a9d5d" : "#d1495b");
    }
    panel.series.push_back(std::move(bubbles));
    emit_svg_plot(dir + "/grid.svg", {panel});
}

// ---- learning-rate sweep ----

struct LrSweepRow {
    double lr = 0.0;
    uint64_t seed = 0;
    std::optional<int> t_trans;
    double median_cos = 0.0;
    double median_delta = 0.0;
    double early_median_cos = 0.0;  // first quarter of the horizon
    double early_median_delta = 0.0;
};

inline std::vector<LrSweepRow> run_lr_sweep(const ExperimentSpec& spec, const std::vector<double>& lrs,
                                            int workers = 0) {
    spec.validate();
    if (lrs.size() < 2) throw config_error("run_lr_sweep: need at least two learning rates");

    struct Task {
        double lr;
        uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double lr : lrs)
        for (uint64_t seed : spec.seeds) tasks.push_back({lr, seed});

    std::vector<LrSweepRow> rows(tasks.size());
    run_parallel(static_cast<int>(tasks.size()), [&](int i) {
        ExperimentSpec s = spec;
        s.optim.lr = tasks[i].lr;
        DynamicsRun run = run_grad_dynamics(s, tasks[i].seed);
        LrSweepRow row;
        row.lr = tasks[i].lr;
        row.seed = tasks[i].seed;
        row.t_trans = run.transition.t_trans;
        std::vector<double> cos_s, delta_s;
        for (const auto& d : run.steps) {
            cos_s.push_back(d.cos_inst);
            if (d.delta) delta_s.push_back(*d.delta);
        }
        row.median_cos = median_of(cos_s);
        row.median_delta = delta_s.empty() ? 0.0 : median_of(delta_s);
        size_t quarter = std::max<size_t>(1, cos_s.size() / 4);
        row.early_median_cos = median_of(std::vector<double>(cos_s.begin(), cos_s.begin() + quarter));
        size_t dq = std::max<size_t>(1, std::min(delta_s.size(), delta_s.size() / 4 + 1));
        row.early_median_delta =
            delta_s.empty() ? 0.0 : median_of(std::vector<double>(delta_s.begin(), delta_s.begin() + dq));
        rows[i] = row;
    }, workers);
    return rows;
}

inline void emit_lr_sweep(const std::vector<LrSweepRow>& rows, const std::string& dir) {
    CsvWriter per_seed(dir + "/lrsweep_per_seed.csv",
                       {"lr", "seed", "t_trans", "median_cos", "median_delta", "early_median_cos",
                        "early_median_delta"});
    for (const auto& r : rows)
        per_seed.row({fmt17(r.lr), std::to_string(r.seed),
                      r.t_trans ? std::to_string(*r.t_trans) : "/", fmt17(r.median_cos),
                      fmt17(r.median_delta), fmt17(r.early_median_cos), fmt17(r.early_median_delta)});

    // aggregate per lr: medians over seeds; t_trans is "/" when absent for
    // more than half the seeds
    std::vector<double> lrs;
    for (const auto& r : rows)
        if (std::find(lrs.begin(), lrs.end(), r.lr) == lrs.end()) lrs.push_back(r.lr);
    CsvWriter agg(dir + "/lrsweep.csv", {"lr", "t_trans", "median_cos", "median_delta"});
    for (double lr : lrs) {
        std::vector<double> ts, cs, dsv;
        int absent = 0, total = 0;
        for (const auto& r : rows)
            if (r.lr == lr) {
                ++total;
                if (r.t_trans)
                    ts.push_back(*r.t_trans);
                else
                    ++absent;
                cs.push_back(r.median_cos);
                dsv.push_back(r.median_delta);
            }
        std::string t_cell = (ts.empty() || absent * 2 > total)
                                 ? "/"
                                 : std::to_string(static_cast<long long>(median_of(ts)));
        agg.row({fmt17(lr), t_cell, fmt17(median_of(cs)), fmt17(median_of(dsv))});
    }
}

} // namespace skiplab
