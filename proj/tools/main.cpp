#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <filesystem>
#include <iostream>

#include "leansplat/data.hpp"
#include "leansplat/image_io.hpp"
#include "leansplat/metrics.hpp"
#include "leansplat/renderer.hpp"
#include "leansplat/threading.hpp"
#include "leansplat/training.hpp"

namespace fs = std::filesystem;
using namespace leansplat;

namespace {

int default_threads() {
    if (const char* env = std::getenv("LEANSPLAT_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

TrainConfig load_train_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
    // Flags override the file: append them after the file contents.
    std::string text;
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        LS_CHECK_DATA(f.good(), "cannot open config file '", config_path, "'");
        text.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
        text += "\n";
    }
    for (const std::string& kv : overrides) {
        if (kv.find('=') == std::string::npos)
            throw UsageError("--set expects key=value, got '" + kv + "'");
        text += kv + "\n";
    }
    return TrainConfig::from_config(
        Config::parse(text, TrainConfig::config_keys(),
                      config_path.empty() ? "<flags>" : config_path));
}

View make_input_view(const LoadedModel& lm, const std::string& image_path,
                     const std::string& input_pose_path) {
    View input;
    input.image = load_png(image_path, lm.cfg.precision);
    const Camera& c = lm.model->input_camera();
    Eigen::Matrix4d pose = Eigen::Matrix4d::Identity();
    if (!input_pose_path.empty()) pose = load_pose(input_pose_path);
    input.camera = make_camera({c.fx, c.fy, c.cx, c.cy, c.width, c.height}, pose);
    LS_CHECK_DATA(input.image.dim(1) == c.height && input.image.dim(2) == c.width, "input image is ",
                  input.image.dim(2), "x", input.image.dim(1), " but the checkpoint expects ",
                  c.width, "x", c.height);
    return input;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir, int64_t seed_override,
                 int views_override) {
    SceneSpec spec;
    if (!spec_path.empty()) spec = load_scene_spec(spec_path);
    if (seed_override >= 0) spec.seed = static_cast<uint64_t>(seed_override);
    if (views_override > 0) spec.n_views = views_override;
    LS_CHECK_DATA(spec.n_views >= 2, "at least 2 views required");
    GeneratedDataset data = generate_dataset(spec);
    export_srn(out_dir, data);
    std::cout << "wrote " << data.dataset.objects.size() << " objects x " << spec.n_views
              << " views to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume,
              const std::vector<std::string>& overrides) {
    TrainConfig cfg = load_train_config(config_path, overrides);
    Dataset data = load_srn(data_dir, cfg.precision);
    fs::create_directories(out_dir);
    Trainer trainer(cfg, std::move(data));
    if (!resume.empty()) trainer.restore(resume);
    trainer.run((fs::path(out_dir) / "log.csv").string(), out_dir);
    std::cout << "finished at iteration " << trainer.iteration() << ", checkpoint in " << out_dir
              << "\n";
    return 0;
}

int cmd_render(const std::string& ckpt, const std::string& image, const std::string& pose,
               const std::string& input_pose, const std::string& out) {
    LoadedModel lm = load_model_checkpoint(ckpt);
    View input = make_input_view(lm, image, input_pose);
    const Camera& c = lm.model->input_camera();
    Camera target = make_camera({c.fx, c.fy, c.cx, c.cy, c.width, c.height}, load_pose(pose));
    Array rgb = synthesize_view(*lm.model, lm.cfg.freeze_refs, input, target);
    save_png(out, rgb);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& report_dir,
             int input_view) {
    LoadedModel lm = load_model_checkpoint(ckpt);
    Dataset data = load_srn(data_dir, lm.cfg.precision);
    const int iv = input_view >= 0 ? input_view : lm.cfg.input_view;
    double psnr_sum = 0, ssim_sum = 0;
    for (const ObjectViews& obj : data.objects) {
        ViewSynthesizer synth = [&](const View& input, const Camera& target) {
            return synthesize_view(*lm.model, lm.cfg.freeze_refs, input, target);
        };
        EvalReport rep = eval_object(synth, obj, iv);
        write_eval_report(report_dir, obj.name, rep);
        psnr_sum += rep.psnr_mean;
        ssim_sum += rep.ssim_mean;
        std::cout << obj.name << ": psnr " << rep.psnr_mean << " ssim " << rep.ssim_mean
                  << " (far: psnr " << rep.psnr_far << " ssim " << rep.ssim_far << ", n="
                  << rep.n_far << ")\n";
    }
    std::cout << "mean over " << data.objects.size() << " objects: psnr "
              << psnr_sum / data.objects.size() << " ssim " << ssim_sum / data.objects.size()
              << "\n";
    return 0;
}

int cmd_export_ply(const std::string& ckpt, const std::string& image, const std::string& out) {
    LoadedModel lm = load_model_checkpoint(ckpt);
    View input = make_input_view(lm, image, "");
    NoGradGuard ng;
    std::vector<RawGaussians> outs = lm.model->forward(input.image, lm.cfg.freeze_refs);
    PhysicalGaussians phys = lm.model->activate_raw(outs.back());
    export_ply(out, phys);
    std::cout << "wrote " << phys.count() << " vertices to " << out << "\n";
    return 0;
}

int cmd_bench(int n_gaussians, const std::string& res, const std::string& precision,
              uint64_t seed) {
    const auto x = res.find('x');
    LS_CHECK_DATA(x != std::string::npos, "--res expects WxH, got '", res, "'");
    const int W = std::stoi(res.substr(0, x));
    const int H = std::stoi(res.substr(x + 1));
    LS_CHECK_DATA(W == H && W % 4 == 0, "bench needs a square resolution divisible by 4");

    TrainConfig cfg;
    cfg.n_queries = n_gaussians;
    cfg.precision = dtype_from_name(precision);
    cfg.seed = seed;
    const double f = 1.1 * W;
    Intrinsics intr{f, f, W / 2.0, H / 2.0, W, H};
    LeanSplatModel model(cfg.model_config(), intr, seed);

    Rng rng(seed);
    Array img({3, H, W}, cfg.precision);
    for (int64_t i = 0; i < img.numel(); ++i) img.set_value(i, rng.uniform(0.0, 1.0));

    NoGradGuard ng;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RawGaussians> outs = model.forward(img);
    PhysicalGaussians phys = model.activate_raw(outs.back());
    const auto t1 = std::chrono::steady_clock::now();
    RenderedImage rendered = render(phys, model.input_camera());
    const auto t2 = std::chrono::steady_clock::now();
    check_finite(rendered.rgb, "bench render");

    const double recon_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double render_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    std::cout << "reconstruction: " << recon_ms << " ms (" << n_gaussians << " gaussians, " << W
              << "x" << H << " input, " << dtype_name(cfg.precision) << ")\n"
              << "render: " << render_ms << " ms\n"
              << "A100 reference figures for context (not asserted): 3D 0.140 s, render 0.0018 s\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"leansplat: single-image gaussian-splat reconstruction"};
    app.require_subcommand(1);
    int threads = default_threads();
    app.add_option("--threads", threads, "worker threads (env LEANSPLAT_THREADS)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic SRN-layout dataset");
    std::string spec_path, out_dir;
    int64_t seed_override = -1;
    int views_override = 0;
    gen->add_option("--spec", spec_path, "scene spec file (key=value)");
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed_override, "override spec seed");
    gen->add_option("--views", views_override, "override views per object");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string config_path, data_dir, ckpt_dir, resume;
    std::vector<std::string> overrides;
    double lr_flag = -1;
    int64_t iters_flag = -1, seed_flag = -1, batch_flag = -1;
    train->add_option("--config", config_path, "training config file (key=value)");
    train->add_option("--data", data_dir, "SRN-layout dataset directory")->required();
    train->add_option("--out", ckpt_dir, "checkpoint/log directory")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_option("--set", overrides, "config override key=value (repeatable)");
    train->add_option("--lr", lr_flag, "override learning rate");
    train->add_option("--iters", iters_flag, "override iteration count");
    train->add_option("--seed", seed_flag, "override seed");
    train->add_option("--batch", batch_flag, "override batch size");

    // render
    auto* rend = app.add_subcommand("render", "render one novel view from one input image");
    std::string r_ckpt, r_image, r_pose, r_input_pose, r_out;
    rend->add_option("--ckpt", r_ckpt, "checkpoint file")->required();
    rend->add_option("--image", r_image, "input image (PNG)")->required();
    rend->add_option("--pose", r_pose, "target pose file (4x4 world-from-camera)")->required();
    rend->add_option("--input-pose", r_input_pose, "input view pose (default: identity)");
    rend->add_option("--out", r_out, "output PNG")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string e_ckpt, e_data, e_report;
    int e_input = -1;
    ev->add_option("--ckpt", e_ckpt)->required();
    ev->add_option("--data", e_data)->required();
    ev->add_option("--report", e_report, "report output directory")->required();
    ev->add_option("--input-view", e_input, "input view position (default from config)");

    // export-ply
    auto* ply = app.add_subcommand("export-ply", "export gaussian centers as a PLY point cloud");
    std::string p_ckpt, p_image, p_out;
    ply->add_option("--ckpt", p_ckpt)->required();
    ply->add_option("--image", p_image)->required();
    ply->add_option("--out", p_out)->required();

    // bench
    auto* bench = app.add_subcommand("bench", "micro-benchmark reconstruction and rendering");
    int b_gaussians = 10000;
    std::string b_res = "128x128", b_precision = "f32";
    uint64_t b_seed = 0;
    bench->add_option("--gaussians", b_gaussians, "gaussian count (perfect square)");
    bench->add_option("--res", b_res, "image resolution WxH");
    bench->add_option("--precision", b_precision, "f32 or f64");
    bench->add_option("--seed", b_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ThreadPool::instance().set_threads(threads);
        if (*gen) return cmd_gen_data(spec_path, out_dir, seed_override, views_override);
        if (*train) {
            if (lr_flag >= 0) {
                std::ostringstream lr_str;
                lr_str.precision(17);
                lr_str << lr_flag;
                overrides.push_back("lr=" + lr_str.str());
            }
            if (iters_flag >= 0) overrides.push_back("iters=" + std::to_string(iters_flag));
            if (seed_flag >= 0) overrides.push_back("seed=" + std::to_string(seed_flag));
            if (batch_flag >= 0) overrides.push_back("batch=" + std::to_string(batch_flag));
            return cmd_train(config_path, data_dir, ckpt_dir, resume, overrides);
        }
        if (*rend) return cmd_render(r_ckpt, r_image, r_pose, r_input_pose, r_out);
        if (*ev) return cmd_eval(e_ckpt, e_data, e_report, e_input);
        if (*ply) return cmd_export_ply(p_ckpt, p_image, p_out);
        if (*bench) return cmd_bench(b_gaussians, b_res, b_precision, b_seed);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
