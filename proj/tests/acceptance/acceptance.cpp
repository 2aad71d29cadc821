// Acceptance suite: one self-contained check per criterion, each printing a
// single [PASS]/[FAIL] line. Run all: `leansplat_acceptance`; one criterion:
// `leansplat_acceptance --criterion N [--scratch DIR]`.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "leansplat/data.hpp"
#include "leansplat/image_io.hpp"
#include "leansplat/metrics.hpp"
#include "leansplat/ops.hpp"
#include "leansplat/renderer.hpp"
#include "leansplat/threading.hpp"
#include "leansplat/training.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace leansplat;
using leansplat::testing::max_grad_rel_error;
using leansplat::testing::max_param_grad_rel_error;
using leansplat::testing::random_array;
using leansplat::testing::random_uniform;

namespace {

std::string g_scratch;

// ---------------------------------------------------------------- shared

PhysicalGaussians random_scene(int n, Rng& rng, double opacity_max = 0.9) {
    PhysicalGaussians g;
    g.centers = Array({n, 3}, DType::F64);
    g.cov = Array({n, 3, 3}, DType::F64);
    g.opacity = Array({n}, DType::F64);
    g.sh = Array({n, 3, 4}, DType::F64);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) g.centers.set_value(i * 3 + d, rng.uniform(-0.45, 0.45));
        Eigen::Matrix3d a;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a(r, c) = rng.normal(0, 0.05);
        Eigen::Matrix3d cov = a * a.transpose() + 0.002 * Eigen::Matrix3d::Identity();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) g.cov.set_value(i * 9 + r * 3 + c, cov(r, c));
        g.opacity.set_value(i, rng.uniform(0.15, opacity_max));
        for (int k = 0; k < 12; ++k) g.sh.set_value(i * 12 + k, rng.normal(0, 0.6));
    }
    return g;
}

Camera orbit_cam(int res) {
    return Camera::look_at(res * 1.1, res * 1.1, res / 2.0, res / 2.0, res, res, {0, 0, -2.0},
                           {0, 0, 0});
}

double max_abs_diff(const Array& a, const Array& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.value_at(i) - b.value_at(i)));
    return m;
}

// The canonical overfit task (criterion 4): one 32-gaussian scene, 25 views
// at 64x64 (20 train incl. the input, 5 held out), N=256 C=128 L=2 N_P=4,
// Adam lr 1e-4, at most 5000 iterations.
SceneSpec canonical_scene_spec() {
    SceneSpec spec;
    spec.seed = 2024;
    spec.n_objects = 1;
    spec.n_views = 25;
    spec.n_gaussians = 32;
    spec.resolution = 64;
    return spec;
}

TrainConfig canonical_train_config() {
    TrainConfig cfg;
    cfg.n_queries = 256;
    cfg.hidden = 128;
    cfg.layers = 2;
    cfg.n_points = 4;
    cfg.heads = 4;
    cfg.lr = 1e-4;
    cfg.batch = 3;
    cfg.iters = 5000;
    cfg.seed = 1;
    // The perceptual term runs from step 0 here: switching the loss mid-run
    // shocks the Adam moments at desk-scale step counts.
    cfg.perc_start_iter = 0;
    return cfg;
}

struct SplitViews {
    Dataset train;            // views 0..19 of the object
    std::vector<View> held;   // views 20..24
};

SplitViews canonical_split(const Dataset& full) {
    SplitViews s;
    ObjectViews tr;
    tr.name = full.objects[0].name;
    for (int v = 0; v < 20; ++v) tr.views.push_back(full.objects[0].views[static_cast<size_t>(v)]);
    s.train.objects.push_back(std::move(tr));
    for (int v = 20; v < 25; ++v) s.held.push_back(full.objects[0].views[static_cast<size_t>(v)]);
    return s;
}

// Generates (or reuses) the canonical dataset on disk through the real
// SRN export/load path.
Dataset canonical_dataset() {
    const fs::path dir = fs::path(g_scratch) / "canonical_data";
    if (!fs::exists(dir / "obj_0" / "intrinsics.txt")) {
        GeneratedDataset gen = generate_dataset(canonical_scene_spec());
        export_srn(dir.string(), gen);
    }
    return load_srn(dir.string());
}

double heldout_psnr(const Trainer& t, const Dataset& train, const std::vector<View>& held,
                    int level) {
    const View& input = train.objects[0].views[0];
    double sum = 0;
    for (const View& v : held) sum += psnr(t.render_stage(input, v.camera, level), v.image);
    return sum / static_cast<double>(held.size());
}

// ---------------------------------------------------------------- criteria

bool criterion1(std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_core = 0, worst_model = 0;

    // adcore primitives at 1e-4 (h=1e-5, f64).
    {
        Rng rng(11);
        Array a = random_array({3, 3}, rng), b = random_array({3, 3}, rng);
        worst_core = std::max(
            worst_core, max_grad_rel_error(
                            [](const std::vector<Array>& ls) {
                                return ops::sum_all(ops::mul(ops::matmul(ls[0], ls[1]), ls[1]));
                            },
                            {a, b}));
        Array x = random_array({2, 5, 5}, rng);
        Array w = random_array({3, 2, 3, 3}, rng, 0.5);
        worst_core = std::max(
            worst_core, max_grad_rel_error(
                            [](const std::vector<Array>& ls) {
                                Array y = ops::conv2d(ls[0], ls[1], 2, 1);
                                return ops::mean_all(ops::mul(y, y));
                            },
                            {x, w}));
        Array sx = random_array({3, 4}, rng);
        worst_core = std::max(worst_core,
                              max_grad_rel_error(
                                  [](const std::vector<Array>& ls) {
                                      Array s = ops::softmax(ls[0], 1);
                                      return ops::sum_all(
                                          ops::mul(s, Array::from({4}, {0.1, -0.4, 1.3, 0.2})));
                                  },
                                  {sx}));
        Array f = random_array({3, 5, 6}, rng);
        Array pts(std::vector<int64_t>{6, 2}, DType::F64);
        for (int p = 0; p < 6; ++p) {
            pts.set_value(p * 2, rng.uniform(0.2, 4.7));
            pts.set_value(p * 2 + 1, rng.uniform(0.2, 3.7));
        }
        worst_core = std::max(worst_core,
                              max_grad_rel_error(
                                  [](const std::vector<Array>& ls) {
                                      Array s = ops::bilinear_sample(ls[0], ls[1]);
                                      return ops::mean_all(ops::mul(s, s));
                                  },
                                  {f, pts}));
        Array ex = random_uniform({4, 5}, rng, -1.5, 1.5);
        worst_core = std::max(
            worst_core,
            max_grad_rel_error(
                [](const std::vector<Array>& ls) {
                    Array t = ops::mul(ops::sigmoid(ls[0]), ops::tanh(ls[0]));
                    return ops::mean_all(ops::mul(ops::softplus(t), ops::exp(ops::mul_scalar(ls[0], 0.3))));
                },
                {ex}));
    }

    // Renderer, SH path included, at 1e-3.
    {
        Rng rng(13);
        PhysicalGaussians g = random_scene(3, rng, 0.8);
        Camera cam = orbit_cam(8);
        worst_model = std::max(
            worst_model,
            max_grad_rel_error(
                [&](const std::vector<Array>& ls) {
                    PhysicalGaussians s;
                    s.centers = ls[0];
                    s.cov = ls[1];
                    s.opacity = ls[2];
                    s.sh = ls[3];
                    RenderedImage img = render(s, cam);
                    Array loss = ops::mean_all(ops::mul(img.rgb, Array::full({3, 8, 8}, 0.41)));
                    return ops::add(loss, ops::mul_scalar(ops::mean_all(img.alpha), 0.23));
                },
                {g.centers, g.cov, g.opacity, g.sh}));
        // Standalone SH evaluation.
        Array sh = random_array({4, 3, 4}, rng, 0.5);
        Array dirs(std::vector<int64_t>{4, 3}, DType::F64);
        for (int i = 0; i < 4; ++i) {
            Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
            d.normalize();
            for (int k = 0; k < 3; ++k) dirs.set_value(i * 3 + k, d[k]);
        }
        worst_model = std::max(worst_model,
                               max_grad_rel_error(
                                   [&](const std::vector<Array>& ls) {
                                       Array c = sh_color(ls[0], dirs);
                                       return ops::mean_all(ops::mul(c, c));
                                   },
                                   {sh}));
    }

    // SSIM at 1e-3.
    {
        Rng rng(17);
        Array a = random_uniform({1, 13, 13}, rng, 0.1, 0.9);
        Array b = random_uniform({1, 13, 13}, rng, 0.1, 0.9);
        worst_model = std::max(
            worst_model,
            max_grad_rel_error([](const std::vector<Array>& ls) { return ssim(ls[0], ls[1]); },
                               {a, b}, 1e-5, 50, 3));
    }

    // Full decoder on the tiny config (N=16, C=16, L=1, 16x16 input).
    {
        ModelConfig mc;
        mc.n_queries = 16;
        mc.hidden = 16;
        mc.layers = 1;
        mc.n_points = 4;
        mc.heads = 2;
        mc.feat.base_channels = 4;
        mc.feat.out_channels = 8;
        mc.feat.scale = 4;
        mc.act.d_near = 1.0;
        mc.act.d_far = 3.0;
        LeanSplatModel model(mc, Intrinsics{20, 20, 8, 8, 16, 16}, 47);
        ParamStore& ps = model.params();
        Rng rng(53);
        // Give the zero-initialized heads generic weights so every path is
        // live and sampling points sit away from bilinear-interpolation kinks.
        for (const std::string& name : ps.names()) {
            if (name.find("head.out.w") != std::string::npos ||
                name.find("dfa.offsets.w") != std::string::npos ||
                name.find("dfa.attn.w") != std::string::npos) {
                Array& w = ps.get(name);
                for (int64_t i = 0; i < w.numel(); ++i) w.set_value(i, rng.normal(0, 0.05));
            }
        }
        Array img(std::vector<int64_t>{3, 16, 16}, DType::F64);
        for (int64_t i = 0; i < img.numel(); ++i) img.set_value(i, rng.uniform(0.0, 1.0));
        worst_model = std::max(
            worst_model, max_param_grad_rel_error(
                             [&]() {
                                 auto outs = model.forward(img);
                                 PhysicalGaussians phys = model.activate_raw(outs.back());
                                 return ops::mean_all(render(phys, model.input_camera()).rgb);
                             },
                             {&ps.get("decoder.q_init"), &ps.get("decoder.layer0.ffn.lin1.w"),
                              &ps.get("decoder.layer0.head.out.w"), &ps.get("feat.down.w"),
                              &ps.get("decoder.layer0.dfa.offsets.w")},
                             1e-5, 5, 59));
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "max rel err: adcore " << worst_core << " (limit 1e-4), model " << worst_model
        << " (limit 1e-3), " << secs << " s";
    return worst_core < 1e-4 && worst_model < 1e-3 && secs < 300.0;
}

bool criterion2(std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    Camera cam = orbit_cam(32);
    double worst_default = 0, worst_exact = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed * 7919 + 1);
        PhysicalGaussians g = random_scene(1 + static_cast<int>(rng.randint(32)), rng);
        RenderedImage oracle = render_oracle(g, cam);
        worst_default = std::max(worst_default, max_abs_diff(render(g, cam).rgb, oracle.rgb));
        RenderOptions exact;
        exact.cull = false;
        exact.early_stop = false;
        worst_exact = std::max(worst_exact, max_abs_diff(render(g, cam, exact).rgb, oracle.rgb));
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "50 scenes: default diff " << worst_default << " (limit 1e-3), exact diff "
        << worst_exact << " (limit 1e-6), " << secs << " s";
    return worst_default < 1e-3 && worst_exact < 1e-6 && secs < 60.0;
}

bool criterion3(std::ostream& log) {
    // Hand-expanded three-splat compositing sum.
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Splat2D> splats(3);
        for (int i = 0; i < 3; ++i) {
            Splat2D& s = splats[i];
            s.mean2d = {rng.uniform(2, 6), rng.uniform(2, 6)};
            Eigen::Matrix2d a;
            a << rng.normal(0, 1), rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 1);
            s.cov2d = a * a.transpose() + 0.4 * Eigen::Matrix2d::Identity();
            s.depth_z = 1.0 + i;
            s.opacity = rng.uniform(0.3, 0.95);
            s.color = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
            s.index = i;
        }
        const double px = rng.uniform(1, 7), py = rng.uniform(1, 7);
        RenderOptions opts;
        opts.early_stop = false;
        double rgb[3], alpha_out;
        composite_pixel(splats, px, py, opts, rgb, alpha_out);
        double a[3];
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector2d d(px - splats[i].mean2d.x(), py - splats[i].mean2d.y());
            a[i] = std::min(kAlphaClamp,
                            splats[i].opacity * std::exp(-0.5 * d.dot(splats[i].cov2d.inverse() * d)));
        }
        for (int ch = 0; ch < 3; ++ch) {
            const double expect = splats[0].color[ch] * a[0] +
                                  splats[1].color[ch] * a[1] * (1 - a[0]) +
                                  splats[2].color[ch] * a[2] * (1 - a[0]) * (1 - a[1]) +
                                  opts.background[ch] * (1 - a[0]) * (1 - a[1]) * (1 - a[2]);
            worst = std::max(worst, std::abs(rgb[ch] - expect));
        }
    }

    // Energy bound on 10^4 random pixels.
    bool energy_ok = true;
    {
        Rng rng2(9);
        PhysicalGaussians g = random_scene(24, rng2);
        Camera cam = orbit_cam(32);
        auto sorted = prepare_splats(g, cam, false);
        RenderOptions opts;
        for (int k = 0; k < 10000; ++k) {
            double rgb[3], alpha_out;
            composite_pixel(sorted, rng2.uniform(0, 32), rng2.uniform(0, 32), opts, rgb, alpha_out);
            if (!(alpha_out <= 1.0)) energy_ok = false;
        }
    }

    // Order-permutation invariance (bitwise).
    bool perm_ok = true;
    {
        Rng rng3(21);
        const int n = 24;
        PhysicalGaussians g = random_scene(n, rng3);
        Camera cam = orbit_cam(32);
        RenderedImage base = render(g, cam);
        PhysicalGaussians r;
        r.centers = Array({n, 3}, DType::F64);
        r.cov = Array({n, 3, 3}, DType::F64);
        r.opacity = Array({n}, DType::F64);
        r.sh = Array({n, 3, 4}, DType::F64);
        for (int i = 0; i < n; ++i) {
            const int j = n - 1 - i;
            for (int k = 0; k < 3; ++k) r.centers.set_value(i * 3 + k, g.centers.value_at(j * 3 + k));
            for (int k = 0; k < 9; ++k) r.cov.set_value(i * 9 + k, g.cov.value_at(j * 9 + k));
            r.opacity.set_value(i, g.opacity.value_at(j));
            for (int k = 0; k < 12; ++k) r.sh.set_value(i * 12 + k, g.sh.value_at(j * 12 + k));
        }
        RenderedImage perm = render(r, cam);
        perm_ok = base.rgb.to_vector() == perm.rgb.to_vector() &&
                  base.alpha.to_vector() == perm.alpha.to_vector();
    }

    log << "3-splat law max diff " << worst << " (limit 1e-12), alpha<=1 "
        << (energy_ok ? "ok" : "VIOLATED") << ", permutation "
        << (perm_ok ? "bit-identical" : "DIFFERS");
    return worst < 1e-12 && energy_ok && perm_ok;
}

bool criterion4(std::ostream& log) {
    const auto t0 = std::chrono::steady_clock::now();
    Dataset full = canonical_dataset();
    SplitViews split = canonical_split(full);
    TrainConfig cfg = canonical_train_config();

    Trainer trainer(cfg, split.train);
    const View& input = split.train.objects[0].views[0];
    double held = 0, in_view = 0;
    while (trainer.iteration() < cfg.iters) {
        trainer.step();
        const int64_t it = trainer.iteration();
        const bool milestone = (it >= 400 && it % 200 == 0) || it == cfg.iters;
        if (!milestone) continue;
        held = heldout_psnr(trainer, split.train, split.held, cfg.layers);
        in_view = psnr(trainer.render_stage(input, input.camera, cfg.layers), input.image);
        std::cout << "  [criterion 4] iter " << it << ": held-out " << held << " dB, input "
                  << in_view << " dB\n";
        if (held >= 25.5 && in_view >= 30.5) break;  // passed with margin
    }
    fs::create_directories(g_scratch);
    trainer.save_checkpoint((fs::path(g_scratch) / "canonical_ckpt.bin").string());

    const double mins =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    log << "held-out " << held << " dB (need >= 25), input view " << in_view
        << " dB (need >= 30) after " << trainer.iteration() << " iters, " << mins << " min";
    return held >= 25.0 && in_view >= 30.0;
}

// Ablation harness (criterion 5). Several objects share one model, so the
// decoder has to read the image features; a single-scene overfit can bypass
// the ablated mechanisms entirely by memorizing through the query embeddings.
struct AblationSetup {
    Dataset train;
    std::vector<std::vector<View>> held;  // per object
};

AblationSetup ablation_setup(uint64_t seed) {
    // Dense 24-view ring per object with every 6th view held out, so the
    // held-out views interpolate between training views and model-quality
    // differences are not drowned by irreducible self-occlusion error.
    SceneSpec spec;
    spec.seed = 177 + seed;
    spec.n_objects = 4;
    spec.n_views = 24;
    spec.n_gaussians = 16;
    spec.resolution = 48;
    GeneratedDataset gen = generate_dataset(spec);
    AblationSetup s;
    s.held.resize(static_cast<size_t>(spec.n_objects));
    for (int o = 0; o < spec.n_objects; ++o) {
        ObjectViews tr;
        tr.name = gen.dataset.objects[static_cast<size_t>(o)].name;
        const auto& views = gen.dataset.objects[static_cast<size_t>(o)].views;
        for (int v = 0; v < spec.n_views; ++v) {
            if (v % 6 == 5) {
                s.held[static_cast<size_t>(o)].push_back(views[static_cast<size_t>(v)]);
            } else {
                tr.views.push_back(views[static_cast<size_t>(v)]);
            }
        }
        s.train.objects.push_back(std::move(tr));
    }
    return s;
}

TrainConfig ablation_config(uint64_t seed) {
    TrainConfig cfg;
    cfg.n_queries = 100;
    cfg.hidden = 64;
    cfg.layers = 2;
    cfg.n_points = 4;
    cfg.heads = 4;
    cfg.feat_base = 16;
    cfg.feat_channels = 32;
    cfg.feat_scale = 8;
    cfg.lr = 1e-4;
    cfg.batch = 3;
    cfg.iters = 1400;
    cfg.seed = seed;
    cfg.perc_start_iter = 0;
    return cfg;
}

double run_ablation_arm(const TrainConfig& cfg, const AblationSetup& s) {
    Trainer t(cfg, s.train);
    while (t.iteration() < cfg.iters) t.step();
    double sum = 0;
    int n = 0;
    for (size_t o = 0; o < s.train.objects.size(); ++o) {
        const View& input = s.train.objects[o].views[0];
        for (const View& v : s.held[o]) {
            sum += psnr(t.render_stage(input, v.camera, cfg.layers), v.image);
            ++n;
        }
    }
    return sum / n;
}

bool criterion5(std::ostream& log) {
    double m_full = 0, m_a = 0, m_b = 0, m_c = 0;
    const int n_seeds = 3;
    for (uint64_t seed = 1; seed <= n_seeds; ++seed) {
        AblationSetup setup = ablation_setup(seed);
        TrainConfig full_cfg = ablation_config(seed);
        TrainConfig a = full_cfg;  // (a) single layer, no multi-layer refinement
        a.layers = 1;
        TrainConfig b = full_cfg;  // (b) reference points frozen at the initial grid
        b.freeze_refs = true;
        TrainConfig c = full_cfg;  // (c) no first-stage supervision
        c.use_first_stage = false;

        const double p_full = run_ablation_arm(full_cfg, setup);
        const double p_a = run_ablation_arm(a, setup);
        const double p_b = run_ablation_arm(b, setup);
        const double p_c = run_ablation_arm(c, setup);
        std::cout << "  [criterion 5] seed " << seed << ": full " << p_full << ", L=1 " << p_a
                  << ", frozen refs " << p_b << ", no first-stage " << p_c << "\n";
        m_full += p_full / n_seeds;
        m_a += p_a / n_seeds;
        m_b += p_b / n_seeds;
        m_c += p_c / n_seeds;
    }

    log << "mean held-out dB: full " << m_full << ", (a) L=1 " << m_a << ", (b) frozen refs "
        << m_b << ", (c) no first-stage " << m_c;
    const bool a_ok = m_a < m_full;
    const bool b_ok = m_b <= m_full + 0.1;  // reduces or at best matches
    const bool c_ok = m_c < m_full;
    return a_ok && b_ok && c_ok;
}

bool criterion6(std::ostream& log) {
    Dataset full = canonical_dataset();
    SplitViews split = canonical_split(full);
    TrainConfig cfg = canonical_train_config();
    Trainer trainer(cfg, split.train);

    const fs::path ckpt = fs::path(g_scratch) / "canonical_ckpt.bin";
    if (fs::exists(ckpt)) {
        trainer.restore(ckpt.string());
    } else {
        // Standalone fallback: converge enough for the comparison.
        std::cout << "  [criterion 6] no canonical checkpoint found, training fresh\n";
        while (trainer.iteration() < 800) trainer.step();
    }

    const View& input = split.train.objects[0].views[0];
    int better = 0;
    const auto& views = split.train.objects[0].views;
    for (const View& v : views) {
        auto mse = [&](int level) {
            Array pred = trainer.render_stage(input, v.camera, level);
            double acc = 0;
            for (int64_t i = 0; i < pred.numel(); ++i) {
                const double d = pred.value_at(i) - v.image.value_at(i);
                acc += d * d;
            }
            return acc / static_cast<double>(pred.numel());
        };
        if (mse(cfg.layers) <= mse(1)) ++better;
    }
    const double frac = static_cast<double>(better) / static_cast<double>(views.size());
    log << "layer-" << cfg.layers << " loss <= layer-1 loss on " << better << "/" << views.size()
        << " training views (need >= 90%)";
    return frac >= 0.9;
}

bool criterion7(std::ostream& log) {
    // Identical 50-step loss traces across thread counts.
    TrainConfig cfg;
    cfg.n_queries = 16;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.n_points = 2;
    cfg.heads = 2;
    cfg.feat_base = 4;
    cfg.feat_channels = 8;
    cfg.feat_scale = 4;
    cfg.d_near = 1.0;
    cfg.d_far = 3.0;
    cfg.lr = 1e-3;
    cfg.batch = 2;
    cfg.iters = 50;
    cfg.seed = 5;
    SceneSpec spec;
    spec.seed = 11;
    spec.n_views = 6;
    spec.resolution = 16;
    spec.n_gaussians = 6;
    Dataset data;
    data.objects.push_back(generate_scene(spec, 0).object);

    std::vector<std::vector<double>> traces;
    for (int threads : {1, 4, 8}) {
        ThreadPool::instance().set_threads(threads);
        Trainer t(cfg, data);
        std::vector<double> trace;
        for (int i = 0; i < 50; ++i) trace.push_back(t.step().loss);
        traces.push_back(std::move(trace));
    }
    ThreadPool::instance().set_threads(static_cast<int>(std::thread::hardware_concurrency()));
    const bool threads_ok = traces[0] == traces[1] && traces[0] == traces[2];

    // Checkpoint round trip + bit-exact resume.
    fs::create_directories(g_scratch);
    const std::string ckpt = (fs::path(g_scratch) / "determinism_ckpt.bin").string();
    Trainer a(cfg, data);
    for (int i = 0; i < 20; ++i) a.step();
    a.save_checkpoint(ckpt);
    std::vector<double> tail_a;
    for (int i = 0; i < 10; ++i) tail_a.push_back(a.step().loss);

    Trainer b(cfg, data);
    b.restore(ckpt);
    std::vector<double> tail_b;
    for (int i = 0; i < 10; ++i) tail_b.push_back(b.step().loss);
    bool resume_ok = tail_a == tail_b;

    // Weights identical bit-for-bit after the resumed steps.
    for (const std::string& name : a.model().params().names()) {
        if (a.model().params().get(name).to_vector() != b.model().params().get(name).to_vector())
            resume_ok = false;
    }

    log << "thread traces " << (threads_ok ? "identical" : "DIFFER") << ", resume "
        << (resume_ok ? "bit-exact" : "DIFFERS");
    return threads_ok && resume_ok;
}

bool criterion8(std::ostream& log) {
    TrainConfig cfg;
    cfg.n_queries = 10000;
    cfg.precision = DType::F32;
    Intrinsics intr{140.8, 140.8, 64, 64, 128, 128};
    LeanSplatModel model(cfg.model_config(), intr, 3);
    Rng rng(3);
    Array img({3, 128, 128}, DType::F32);
    for (int64_t i = 0; i < img.numel(); ++i) img.set_value(i, rng.uniform(0.0, 1.0));

    NoGradGuard ng;
    const auto t0 = std::chrono::steady_clock::now();
    auto outs = model.forward(img);
    PhysicalGaussians phys = model.activate_raw(outs.back());
    const auto t1 = std::chrono::steady_clock::now();
    RenderedImage rendered = render(phys, model.input_camera());
    const auto t2 = std::chrono::steady_clock::now();

    bool finite = true;
    for (int64_t i = 0; i < rendered.rgb.numel() && finite; ++i)
        finite = std::isfinite(rendered.rgb.value_at(i));

    const double recon_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double render_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    log << "10000 gaussians at 128x128: reconstruction " << recon_ms << " ms (reported), render "
        << render_ms << " ms (limit 250); A100 reference: 3D 140 ms, render 1.8 ms (context only)";
    return finite && render_ms < 250.0;
}

bool criterion9(std::ostream& log) {
    // PSNR closed forms.
    Array a = Array::full({3, 8, 8}, 0.4);
    Array b = ops::add_scalar(a, 0.1);
    const bool psnr_ok =
        std::abs(psnr(a, b) - 20.0) < 1e-9 && std::isinf(psnr(a, a)) &&
        std::abs(psnr(Array::zeros({4, 4}), Array::full({4, 4}, 1.0)) - 0.0) < 1e-9;

    // ssim(a,a) = 1 exactly.
    Rng rng(3);
    Array img = random_uniform({3, 16, 16}, rng, 0.0, 1.0);
    const bool ssim_ok = ssim_value(img, img) == 1.0;

    // Far-view subset equals a brute-force 45-degree angle check.
    SceneSpec spec;
    spec.seed = 31;
    spec.n_views = 16;
    spec.resolution = 16;
    spec.n_gaussians = 8;
    ObjectViews obj = generate_scene(spec, 0).object;
    ViewSynthesizer dummy = [&](const View&, const Camera&) {
        return ops::mul_scalar(obj.views[0].image, 0.9);
    };
    const int input_index = 2;
    EvalReport rep = eval_object(dummy, obj, input_index, 45.0);
    double in_az, in_el;
    camera_angles(obj.views[static_cast<size_t>(input_index)].camera, in_az, in_el);
    bool far_ok = rep.n_far > 0;
    size_t row = 0;
    for (size_t j = 0; j < obj.views.size(); ++j) {
        if (static_cast<int>(j) == input_index) continue;
        double az, el;
        camera_angles(obj.views[j].camera, az, el);
        double daz = std::abs(az - in_az);
        daz = std::min(daz, 2 * M_PI - daz);
        const bool expect = daz > M_PI / 4 || std::abs(el - in_el) > M_PI / 4;
        if (rep.per_view[row].far != expect) far_ok = false;
        ++row;
    }

    log << "psnr closed forms " << (psnr_ok ? "ok" : "WRONG") << ", ssim identity "
        << (ssim_ok ? "exact" : "WRONG") << ", far-view subset "
        << (far_ok ? "matches oracle" : "WRONG");
    return psnr_ok && ssim_ok && far_ok;
}

}  // namespace

int main(int argc, char** argv) {
    int which = 0;
    std::string bin_dir;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--criterion" && i + 1 < argc) {
            which = std::atoi(argv[++i]);
        } else if (arg == "--scratch" && i + 1 < argc) {
            g_scratch = argv[++i];
        } else if (arg == "--bin-dir" && i + 1 < argc) {
            bin_dir = argv[++i];
        } else {
            std::cerr << "usage: leansplat_acceptance [--criterion N] [--scratch DIR]\n";
            return 2;
        }
    }
    if (g_scratch.empty()) {
        g_scratch = (bin_dir.empty() ? fs::temp_directory_path() / "leansplat_acceptance"
                                     : fs::path(bin_dir) / "acceptance_scratch")
                        .string();
    }
    fs::create_directories(g_scratch);

    using Criterion = std::function<bool(std::ostream&)>;
    const std::pair<const char*, Criterion> criteria[] = {
        {"gradient integrity", criterion1},
        {"renderer oracle equivalence", criterion2},
        {"compositing law", criterion3},
        {"overfit convergence", criterion4},
        {"ablation directions", criterion5},
        {"refinement monotonicity", criterion6},
        {"determinism & persistence", criterion7},
        {"throughput report", criterion8},
        {"metric correctness", criterion9},
    };

    bool all_ok = true;
    for (int i = 0; i < 9; ++i) {
        if (which != 0 && which != i + 1) continue;
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = criteria[i].second(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << (i + 1) << " ("
                  << criteria[i].first << "): " << detail.str() << "\n";
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
