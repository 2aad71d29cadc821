#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "leansplat/config.hpp"
#include "leansplat/data.hpp"
#include "leansplat/decoder.hpp"
#include "leansplat/rng.hpp"
#include "leansplat/tape.hpp"

namespace leansplat {

struct TrainConfig {
    // model
    int n_queries = 256;
    int hidden = 128;
    int layers = 2;
    int n_points = 4;
    int heads = 4;
    int feat_channels = 64;
    int feat_base = 32;
    int feat_scale = 14;
    double scene_extent = 1.0;
    double d_near = 0.5;
    double d_far = 3.0;
    // optimization
    double lr = 1e-5;
    int iters = 3000;
    int batch = 4;
    double lambda_e = 1.0;
    double lambda_d = 1.0;
    double lambda_perc = 0.5;
    int perc_start_iter = -1;  // -1: 80% of iters
    uint64_t seed = 0;
    DType precision = DType::F64;
    int input_view = 0;
    int log_every = 1;
    int ckpt_every = 0;  // 0: final checkpoint only
    // ablation switches
    bool freeze_refs = false;
    bool use_unet = true;
    bool use_first_stage = true;  // shorthand for lambda_e > 0

    static const std::vector<std::string>& config_keys();
    static TrainConfig from_config(const Config& cfg);
    std::string to_text() const;
    ModelConfig model_config() const;
    int effective_perc_start() const {
        return perc_start_iter >= 0 ? perc_start_iter : (iters * 8) / 10;
    }
};

// Per-target loss: lambda_e*MSE(first_stage, target)
//   + sum_l [ lambda_d*MSE(render_l, target) + lambda_perc*(1 - SSIM) ],
// with the perceptual term gated by `use_perc`; first_stage may be empty.
Array training_loss(const std::vector<Array>& layer_renders, const Array& first_stage,
                    const Array& target, double lambda_e, double lambda_d, double lambda_perc,
                    bool use_perc);

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one update in place from the tape's gradients.
    void step(ParamStore& params, Tape& tape, double lr);

    int64_t t() const { return t_; }
    std::unordered_map<std::string, Array>& moment1() { return m_; }
    std::unordered_map<std::string, Array>& moment2() { return v_; }
    const std::unordered_map<std::string, Array>& moment1() const { return m_; }
    const std::unordered_map<std::string, Array>& moment2() const { return v_; }
    void set_t(int64_t t) { t_ = t; }

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::unordered_map<std::string, Array> m_, v_;
};

struct StepStats {
    double loss = 0;
    double psnr_train = 0;
    double wall_ms = 0;
};

// Loop driver over a dataset (one object per step). Deterministic given
// (seed, config, data) at fixed precision, independent of the thread count.
// Rebuilds a model (weights, rays, intrinsics, config) from a checkpoint.
struct LoadedModel {
    TrainConfig cfg;
    std::unique_ptr<LeanSplatModel> model;
    uint64_t iteration = 0;
};
LoadedModel load_model_checkpoint(const std::string& path);

// One novel view from one input view; no tape recording.
Array synthesize_view(const LeanSplatModel& model, bool freeze_refs, const View& input,
                      const Camera& target_cam, int level = -1);

class Trainer {
public:
    Trainer(const TrainConfig& cfg, Dataset dataset);

    StepStats step();
    // Runs to cfg.iters, appending CSV rows (iter,loss,psnr_train,wall_ms)
    // and writing checkpoints under ckpt_dir (empty string: none).
    void run(const std::string& log_csv, const std::string& ckpt_dir);

    void save_checkpoint(const std::string& path) const;
    void restore(const std::string& path);  // resumes bit-exactly

    int64_t iteration() const { return iter_; }
    LeanSplatModel& model() { return *model_; }
    const LeanSplatModel& model() const { return *model_; }
    const TrainConfig& config() const { return cfg_; }

    // Renders stage `level` (0=init, 1..L=decoder layers) of the current
    // model for one input/target pair. No tape recording.
    Array render_stage(const View& input, const Camera& target_cam, int level) const;

private:
    TrainConfig cfg_;
    Dataset data_;
    std::unique_ptr<LeanSplatModel> model_;
    Adam opt_;
    Rng rng_;
    int64_t iter_ = 0;
};

}  // namespace leansplat
