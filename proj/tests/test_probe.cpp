#include <catch2/catch_amalgamated.hpp>

#include "skiplab/probe.hpp"

using namespace skiplab;

namespace {

std::vector<ReconSample> probe_dataset(uint64_t seed, int count, double noise = 0.03) {
    DatasetSpec spec;
    spec.seed = seed;
    spec.noise_amp = noise;
    std::vector<ReconSample> out;
    for (int i = 0; i < count; ++i) out.push_back(probe_sample(spec, i));
    return out;
}

ProbeConfig fast_cfg(int steps = 120) {
    ProbeConfig cfg;
    cfg.steps = steps;
    cfg.batch = 4;
    cfg.lr = 1e-2;
    return cfg;
}

} // namespace

TEST_CASE("merge_patches shapes and layout") {
    SECTION("4x4 grid merges to 4 tokens") {
        Tensor tokens({16, 3});
        Tensor merged = merge_patches(tokens, 4);
        REQUIRE(merged.shape == std::vector<int>{4, 12});
    }
    SECTION("8x8 grid, dim 8 gives 16 tokens of channel dim 32") {
        Tensor tokens({64, 8});
        Tensor merged = merge_patches(tokens, 8);
        REQUIRE(merged.shape == std::vector<int>{16, 32});
    }
    SECTION("identical patches produce a 4-fold repetition pattern") {
        Tensor tokens({16, 3});
        for (int i = 0; i < 16; ++i)
            for (int j = 0; j < 3; ++j) tokens.at(i, j) = j + 1.0;
        Tensor merged = merge_patches(tokens, 4);
        for (int i = 0; i < 4; ++i)
            for (int k = 0; k < 4; ++k)
                for (int j = 0; j < 3; ++j) REQUIRE(merged.at(i, k * 3 + j) == j + 1.0);
    }
    SECTION("block order is (r0c0, r0c1, r1c0, r1c1)") {
        Tensor tokens({4, 1});
        for (int i = 0; i < 4; ++i) tokens.at(i, 0) = static_cast<double>(i);
        Tensor merged = merge_patches(tokens, 2);
        REQUIRE(merged.data == std::vector<double>{0, 1, 2, 3});
    }
    SECTION("odd grid rejected") {
        Tensor tokens({9, 2});
        REQUIRE_THROWS_AS(merge_patches(tokens, 3), config_error);
    }
}

TEST_CASE("build_sequence layout and boundaries") {
    DatasetSpec spec;
    spec.seed = 77;
    ReconSample sample = probe_sample(spec, 0);

    SECTION("counts: 16 context + 2 text + 4 target") {
        SequenceLayout layout = build_sequence(sample, 4, 8);
        REQUIRE(layout.n_context == 16);
        REQUIRE(layout.n_text == 2);
        REQUIRE(layout.n_target == 4);
        REQUIRE(layout.total() == 22);
        REQUIRE(layout.text_begin() == 16);
        REQUIRE(layout.target_begin() == 18);
    }
    SECTION("three text tokens shift the boundaries to 16 and 19") {
        ReconSample s = sample;
        s.text_tokens = {0, 1, 2};
        SequenceLayout layout = build_sequence(s, 4, 8);
        REQUIRE(layout.total() == 23);
        REQUIRE(layout.text_begin() == 16);
        REQUIRE(layout.target_begin() == 19);
    }
    SECTION("empty text leaves an empty middle segment") {
        ReconSample s = sample;
        s.text_tokens.clear();
        SequenceLayout layout = build_sequence(s, 4, 8);
        REQUIRE(layout.n_text == 0);
        REQUIRE(layout.target_begin() == 16);
        REQUIRE(layout.total() == 20);
    }
    SECTION("misaligned target rect rejected") {
        ReconSample s = sample;
        s.target_rect = Rect{15, 16, 16, 16};
        REQUIRE_THROWS_AS(build_sequence(s, 4, 8), config_error);
    }
    SECTION("target segment coordinates match the original grid cells") {
        SequenceLayout layout = build_sequence(sample, 4, 8);
        // target rect {16,16,16,16} covers merged cells (2,2),(2,3),(3,2),(3,3)
        REQUIRE(layout.target_cells == std::vector<int>{10, 11, 14, 15});
        for (int i = 0; i < layout.n_target; ++i) {
            int cell = layout.target_cells[i];
            TokenCoord c = layout.coords[layout.target_begin() + i];
            REQUIRE(c.row == cell / 4);
            REQUIRE(c.col == cell % 4);
        }
    }
}

TEST_CASE("rotary phases depend on grid coordinates, not sequence position") {
    DatasetSpec spec;
    spec.seed = 12;
    ReconSample sample = probe_sample(spec, 0);

    ReconSample long_text = sample;
    long_text.text_tokens = {0, 1, 2, 3, 4};
    ReconSample no_text = sample;
    no_text.text_tokens.clear();

    SequenceLayout la = build_sequence(long_text, 4, 8);
    SequenceLayout lb = build_sequence(no_text, 4, 8);
    RopeTables ta = build_rope_tables(la.coords, 16);
    RopeTables tb = build_rope_tables(lb.coords, 16);

    for (int i = 0; i < la.n_target; ++i) {
        int ra = la.target_begin() + i;
        int rb = lb.target_begin() + i;
        for (int p = 0; p < 8; ++p) {
            REQUIRE(ta.cos_t.at(ra, p) == tb.cos_t.at(rb, p));
            REQUIRE(ta.sin_t.at(ra, p) == tb.sin_t.at(rb, p));
        }
    }
}

TEST_CASE("rope rotation preserves norms and is exact for zero coordinates") {
    std::vector<TokenCoord> coords = {{0, 0}, {3, 1}};
    RopeTables tab = build_rope_tables(coords, 8);
    Tape t;
    Tensor x({2, 8});
    Rng rng(4);
    for (auto& v : x.data) v = rng.normal();
    Var out = apply_rope(t, t.constant(x), tab);
    const Tensor& o = t.value(out);
    // token with coord (0,0): identity rotation
    for (int j = 0; j < 8; ++j) REQUIRE(o.at(0, j) == Catch::Approx(x.at(0, j)).margin(1e-15));
    // rotations preserve the per-pair norm
    for (int p = 0; p < 4; ++p) {
        double before = x.at(1, p) * x.at(1, p) + x.at(1, p + 4) * x.at(1, p + 4);
        double after = o.at(1, p) * o.at(1, p) + o.at(1, p + 4) * o.at(1, p + 4);
        REQUIRE(after == Catch::Approx(before).margin(1e-12));
    }
}

TEST_CASE("untrained probe with a constant 0.5 target has zero loss") {
    GlyphImage img;
    img.pixels = Tensor::full({32, 32}, 0.5);
    img.text = "AB";
    ReconSample sample = make_pair(img, Rect{16, 16, 16, 16});

    Rng enc_rng(31);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    ProbeAdapter adapter = ProbeAdapter::identity(64);
    ProbeConfig cfg = fast_cfg();
    PreparedSample prep = prepare_sample(encoder, adapter, sample, cfg);

    Rng dec_rng(32);
    ProbeDecoder dec(cfg, 64, dec_rng);
    Tape t;
    ParamBind bind;
    Var loss = probe_sample_loss(t, bind, dec, prep, false, false);
    REQUIRE(t.value(loss).item() == 0.0);
}

TEST_CASE("random-init probe loss is positive and finite") {
    auto samples = probe_dataset(5, 4);
    Rng enc_rng(41);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    ProbeAdapter adapter = ProbeAdapter::identity(64);
    ProbeConfig cfg = fast_cfg();
    PreparedSample prep = prepare_sample(encoder, adapter, samples[0], cfg);
    Rng dec_rng(42);
    ProbeDecoder dec(cfg, 64, dec_rng);
    Tape t;
    ParamBind bind;
    Var loss = probe_sample_loss(t, bind, dec, prep, false, false);
    double v = t.value(loss).item();
    REQUIRE(std::isfinite(v));
    REQUIRE(v > 0.0);
}

TEST_CASE("freeze contract: encoder and adapter bytes never change") {
    auto samples = probe_dataset(6, 4);
    Rng enc_rng(51);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    Rng ad_rng(52);
    ProbeAdapter adapter = ProbeAdapter::bottleneck(64, 8, 64, ad_rng);
    uint64_t enc_before = params_checksum(encoder.params());
    uint64_t ad_before = adapter.checksum();

    ProbeConfig cfg = fast_cfg(100);
    ProbeRun run = run_probe(encoder, adapter, samples, cfg, 1, false, false);
    REQUIRE(run.losses.size() == 100);
    REQUIRE(params_checksum(encoder.params()) == enc_before);
    REQUIRE(adapter.checksum() == ad_before);
}

TEST_CASE("unfreezing via config is a contract violation") {
    ProbeConfig cfg = fast_cfg();
    cfg.freeze_encoder = false;
    REQUIRE_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("steps_to_threshold") {
    SECTION("already below tau at step zero") {
        REQUIRE(steps_to_threshold({0.5, 0.4}, 0.75) == 0);
    }
    SECTION("first crossing is 0-indexed") {
        std::vector<double> series = {1.0, 0.9, 0.74, 0.8};
        REQUIRE(steps_to_threshold(series, 0.75) == 2);
    }
    SECTION("never crossing is absent") {
        REQUIRE_FALSE(steps_to_threshold({1.0, 0.8, 0.76}, 0.75).has_value());
    }
    SECTION("tau must be positive") {
        REQUIRE_THROWS_AS(steps_to_threshold({1.0}, 0.0), config_error);
    }
    SECTION("matches a linear-scan oracle on 100 random series") {
        Rng rng(314);
        for (int rep = 0; rep < 100; ++rep) {
            int n = 1 + static_cast<int>(rng.below(40));
            double tau = 0.2 + rng.uniform();
            std::vector<double> series(n);
            for (auto& v : series) v = rng.uniform() * 1.5;
            std::optional<int> expect;
            for (int i = 0; i < n; ++i)
                if (series[i] < tau) {
                    expect = i;
                    break;
                }
            REQUIRE(steps_to_threshold(series, tau) == expect);
        }
    }
}

TEST_CASE("identical adapters and seeds give identical loss curves") {
    auto samples = probe_dataset(7, 4);
    Rng enc_rng(61);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    ProbeAdapter a = ProbeAdapter::identity(64);
    ProbeAdapter b = ProbeAdapter::identity(64);
    ProbeConfig cfg = fast_cfg(60);
    ProbeRun r1 = run_probe(encoder, a, samples, cfg, 9, false, false);
    ProbeRun r2 = run_probe(encoder, b, samples, cfg, 9, false, false);
    REQUIRE(r1.losses == r2.losses);
}

TEST_CASE("identity adapter beats a rank-1 bottleneck") {
    auto samples = probe_dataset(8, 6);
    Rng enc_rng(71);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    Rng ad_rng(72);
    std::vector<ProbeAdapter> adapters = {ProbeAdapter::identity(64),
                                          ProbeAdapter::bottleneck(64, 1, 64, ad_rng)};
    ProbeConfig cfg = fast_cfg(150);
    auto ranked = adapter_sensitivity(encoder, adapters, samples, cfg, 3);
    REQUIRE(ranked.size() == 2);
    REQUIRE(ranked[0].name == "identity");
    REQUIRE(ranked[0].final_loss < ranked[1].final_loss);
}

TEST_CASE("modality ablation on constant-zero targets reaches near-zero everywhere") {
    // degenerate sanity: all-black images make every setting trivial
    std::vector<ReconSample> samples;
    for (int i = 0; i < 4; ++i) {
        GlyphImage img;
        img.pixels = Tensor({32, 32});
        img.text = "AA";
        samples.push_back(make_pair(img, Rect{16, 16, 16, 16}));
    }
    Rng enc_rng(81);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    ProbeAdapter adapter = ProbeAdapter::identity(64);
    ProbeConfig cfg = fast_cfg(200);
    cfg.lr = 3e-2;
    auto cells = modality_ablation(encoder, adapter, samples, cfg, 4);
    REQUIRE(cells.size() == 4);
    for (const auto& cell : cells) {
        INFO("mask=" << cell.mask_image << " drop=" << cell.drop_text);
        REQUIRE(cell.final_loss < 0.02);
    }
}

TEST_CASE("language tokens reduce masked-region reconstruction loss") {
    // light version of the modality study: just the text-information gap on
    // masked targets. The full 2x2 grid at proper scale runs in acceptance.
    auto samples = probe_dataset(9, 48);
    Rng enc_rng(91);
    ProbeEncoder encoder(ProbeEncoderConfig{}, enc_rng);
    ProbeAdapter adapter = ProbeAdapter::identity(64);
    ProbeConfig cfg;
    cfg.steps = 200;
    cfg.lr = 3e-3;
    ProbeRun with_text = run_probe(encoder, adapter, samples, cfg, 5, true, false);
    ProbeRun without_text = run_probe(encoder, adapter, samples, cfg, 5, true, true);
    CAPTURE(with_text.final_loss, without_text.final_loss);
    REQUIRE(without_text.final_loss > with_text.final_loss);
}
