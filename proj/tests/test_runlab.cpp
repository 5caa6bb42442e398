#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skiplab/runlab.hpp"

using namespace skiplab;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_spec() {
    ExperimentSpec spec;
    spec.fusion.total_blocks = 4;
    spec.fusion.stride = 2;
    spec.fusion.detach_count = 0;
    spec.fusion.hidden_dim = 8;
    spec.fusion.num_heads = 2;
    spec.fusion.patch_size = 8;
    spec.fusion.image_size = 32;
    spec.fusion.adapter_hidden = 16;
    spec.optim.lr = 5e-3;
    spec.batch_size = 2;
    spec.steps = 12;
    spec.stage_a_ratio = 0.0;
    spec.window = 5;
    spec.consecutive = 2;
    spec.dataset.noise_amp = 0.02;
    return spec;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir() {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() / ("skiplab_runlab_" + std::to_string(::getpid()) + "_" +
                                              std::to_string(counter++));
    fs::create_directories(p);
    return p.string();
}

} // namespace

TEST_CASE("zero steps yields an empty metric stream without error") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 0;
    TrainingRun run = run_training(spec, 0);
    REQUIRE(run.losses.empty());
    REQUIRE_FALSE(run.aborted);
}

TEST_CASE("identical spec and seed reproduce identical loss streams") {
    ExperimentSpec spec = tiny_spec();
    TrainingRun a = run_training(spec, 7);
    TrainingRun b = run_training(spec, 7);
    REQUIRE(a.losses == b.losses);
    TrainingRun c = run_training(spec, 8);
    REQUIRE(a.losses != c.losses);
}

TEST_CASE("detach count preserves step-0 loss and changes the trajectory") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 6;
    spec.fusion.detach_count = 0;
    TrainingRun full = run_training(spec, 3);
    spec.fusion.detach_count = 2; // all taps
    TrainingRun detached = run_training(spec, 3);
    REQUIRE(full.losses[0] == detached.losses[0]); // forward invariance
    REQUIRE(full.losses[1] != detached.losses[1]); // updates differ from step 1
}

TEST_CASE("stage A updates only the adapter") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 4;
    spec.stage_a_ratio = 1.0; // whole run is adapter-only

    Rng init_rng = Rng(5).derive("init");
    FusionModel reference(spec.fusion, init_rng);
    uint64_t encoder_before = params_checksum(reference.encoder_params());
    uint64_t adapter_before = params_checksum(reference.adapter_params());

    // replicate run_training's model construction to compare final bytes
    TrainingRun run = run_training(spec, 5);
    REQUIRE(run.losses.size() == 4);

    // re-run manually to inspect the trained model
    Rng init2 = Rng(5).derive("init");
    FusionModel model(spec.fusion, init2);
    Rng model_rng = Rng(5).derive("model");
    DatasetSpec ds = spec.dataset;
    ds.seed = spec.dataset.seed * 1000003ull + 5;
    AdamWConfig ocfg = spec.optim;
    ocfg.total_steps = spec.steps;
    AdamW opt(ocfg);
    std::vector<Tensor> images;
    std::vector<std::vector<int>> labels;
    for (int step = 0; step < spec.steps; ++step) {
        downstream_task_batch(ds, spec.batch_size, step, images, labels);
        Tape t;
        ParamBind bind;
        Var loss = model.batch_loss(t, bind, images, labels, model_rng);
        t.backward(loss);
        model.zero_grads();
        bind.pull_grads(t);
        std::vector<Param*> active = model.adapter_params();
        opt.step(active);
    }
    REQUIRE(params_checksum(model.encoder_params()) == encoder_before);
    REQUIRE(params_checksum(model.adapter_params()) != adapter_before);
}

TEST_CASE("dynamics with zero skip scale sees no skip gradient") {
    ExperimentSpec spec = tiny_spec();
    spec.fusion.skip_scale = 0.0;
    spec.steps = 8;
    DynamicsRun run = run_grad_dynamics(spec, 1);
    for (const auto& d : run.steps) {
        REQUIRE(std::sqrt(d.norm2_skip) < 1e-12);
        if (d.delta) REQUIRE(*d.delta < 1e-6);
    }
}

TEST_CASE("dynamics requires a tapped layer") {
    ExperimentSpec spec = tiny_spec();
    spec.fusion.stride = 9; // no taps
    REQUIRE_THROWS_AS(run_grad_dynamics(spec, 0), config_error);
}

TEST_CASE("dynamics update reuse matches an independent training run") {
    // with D = 0 the dynamics loop reuses the full-pass gradient; the loss
    // stream must match plain training exactly
    ExperimentSpec spec = tiny_spec();
    spec.steps = 8;
    TrainingRun plain = run_training(spec, 11);
    DynamicsRun dyn = run_grad_dynamics(spec, 11);
    REQUIRE(plain.losses == dyn.losses);
}

TEST_CASE("ablation grid shapes, baseline cell, and skipped cells") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 4;
    spec.seeds = {0, 1};
    GridReport report = run_ablation_grid(spec, {2, 4, 9}, {0, 1});
    REQUIRE(report.cells.size() == 6);

    int valid = 0, skipped = 0;
    for (const auto& c : report.cells) {
        if (c.valid)
            ++valid;
        else
            ++skipped;
    }
    // stride 9 has no taps: D=0 valid (empty tap set), D=1 skipped
    REQUIRE(valid == 5);
    REQUIRE(skipped == 1);

    // baseline = (max stride 9, D=0): its own delta is zero
    for (const auto& c : report.cells)
        if (c.valid && c.stride == 9 && c.detach == 0)
            REQUIRE(c.delta_vs_baseline == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(std::isfinite(report.nofusion_loss));

    GridReport again = run_ablation_grid(spec, {2, 4, 9}, {0, 1});
    for (size_t i = 0; i < report.cells.size(); ++i)
        REQUIRE(report.cells[i].mean_final_loss == again.cells[i].mean_final_loss);
}

TEST_CASE("single-lr sweep is rejected") {
    ExperimentSpec spec = tiny_spec();
    REQUIRE_THROWS_AS(run_lr_sweep(spec, {1e-3}), config_error);
}

TEST_CASE("lr sweep emits one aggregate row per lr and slash for absent transitions") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 8;
    spec.window = 4;
    spec.consecutive = 2;
    spec.seeds = {0};
    spec.fusion.skip_scale = 0.0; // ratio identically ~0: transition at the first window
    auto rows = run_lr_sweep(spec, {1e-3, 3e-3});
    REQUIRE(rows.size() == 2);
    std::string dir = temp_dir();
    emit_lr_sweep(rows, dir);
    std::string agg = slurp(dir + "/lrsweep.csv");
    REQUIRE(agg.rfind("lr,t_trans,median_cos,median_delta\n", 0) == 0);
    // zero skip gradient means ratio 0 < 1 everywhere: t_trans present
    REQUIRE(agg.find("/") == std::string::npos);
}

TEST_CASE("experiment spec round-trips through json") {
    ExperimentSpec spec = tiny_spec();
    spec.suite = "dynamics";
    spec.seeds = {3, 1, 4};
    spec.probe_group = "enc.b2.";
    spec.fusion.skip_scale = 10.0;
    json j = spec;
    ExperimentSpec back = j.get<ExperimentSpec>();
    json j2 = back;
    REQUIRE(j.dump() == j2.dump());
}

TEST_CASE("dynamics emission is byte-identical across reruns") {
    ExperimentSpec spec = tiny_spec();
    spec.steps = 10;
    spec.window = 4;
    std::string d1 = temp_dir(), d2 = temp_dir();
    emit_dynamics(spec, run_grad_dynamics(spec, 2), d1);
    emit_dynamics(spec, run_grad_dynamics(spec, 2), d2);
    REQUIRE(slurp(d1 + "/metrics_seed2.jsonl") == slurp(d2 + "/metrics_seed2.jsonl"));
    REQUIRE(slurp(d1 + "/panels_seed2.svg") == slurp(d2 + "/panels_seed2.svg"));
    REQUIRE(slurp(d1 + "/metrics_seed2.jsonl").find("\"group\":\"enc.b2.\"") != std::string::npos);
}
