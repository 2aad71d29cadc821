#include "leansplat/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "leansplat/checkpoint.hpp"
#include "leansplat/metrics.hpp"
#include "leansplat/ops.hpp"

namespace leansplat {

const std::vector<std::string>& TrainConfig::config_keys() {
    static const std::vector<std::string> keys = {
        "n_queries",  "hidden",     "layers",          "n_points",   "heads",
        "feat_channels", "feat_base", "feat_scale",    "scene_extent", "d_near",
        "d_far",      "lr",         "iters",           "batch",      "lambda_e",
        "lambda_d",   "lambda_perc", "perc_start_iter", "seed",       "precision",
        "input_view", "log_every",  "ckpt_every",      "freeze_refs", "use_unet",
        "use_first_stage"};
    return keys;
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig t;
    t.n_queries = static_cast<int>(cfg.get_int("n_queries", t.n_queries));
    t.hidden = static_cast<int>(cfg.get_int("hidden", t.hidden));
    t.layers = static_cast<int>(cfg.get_int("layers", t.layers));
    t.n_points = static_cast<int>(cfg.get_int("n_points", t.n_points));
    t.heads = static_cast<int>(cfg.get_int("heads", t.heads));
    t.feat_channels = static_cast<int>(cfg.get_int("feat_channels", t.feat_channels));
    t.feat_base = static_cast<int>(cfg.get_int("feat_base", t.feat_base));
    t.feat_scale = static_cast<int>(cfg.get_int("feat_scale", t.feat_scale));
    t.scene_extent = cfg.get_double("scene_extent", t.scene_extent);
    t.d_near = cfg.get_double("d_near", t.d_near);
    t.d_far = cfg.get_double("d_far", t.d_far);
    t.lr = cfg.get_double("lr", t.lr);
    t.iters = static_cast<int>(cfg.get_int("iters", t.iters));
    t.batch = static_cast<int>(cfg.get_int("batch", t.batch));
    t.lambda_e = cfg.get_double("lambda_e", t.lambda_e);
    t.lambda_d = cfg.get_double("lambda_d", t.lambda_d);
    t.lambda_perc = cfg.get_double("lambda_perc", t.lambda_perc);
    t.perc_start_iter = static_cast<int>(cfg.get_int("perc_start_iter", t.perc_start_iter));
    t.seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
    t.precision = dtype_from_name(cfg.get_string("precision", "f64"));
    t.input_view = static_cast<int>(cfg.get_int("input_view", t.input_view));
    t.log_every = static_cast<int>(cfg.get_int("log_every", t.log_every));
    t.ckpt_every = static_cast<int>(cfg.get_int("ckpt_every", t.ckpt_every));
    t.freeze_refs = cfg.get_bool("freeze_refs", t.freeze_refs);
    t.use_unet = cfg.get_bool("use_unet", t.use_unet);
    t.use_first_stage = cfg.get_bool("use_first_stage", t.use_first_stage);
    LS_CHECK_DATA(t.lambda_e >= 0 && t.lambda_d >= 0 && t.lambda_perc >= 0,
                  "loss weights must be non-negative");
    LS_CHECK_DATA(t.perc_start_iter <= t.iters, "perc_start_iter must be <= iters");
    LS_CHECK_DATA(t.batch >= 1 && t.iters >= 0, "batch/iters must be positive");
    return t;
}

std::string TrainConfig::to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "n_queries = " << n_queries << "\nhidden = " << hidden << "\nlayers = " << layers
      << "\nn_points = " << n_points << "\nheads = " << heads
      << "\nfeat_channels = " << feat_channels << "\nfeat_base = " << feat_base
      << "\nfeat_scale = " << feat_scale << "\nscene_extent = " << scene_extent
      << "\nd_near = " << d_near << "\nd_far = " << d_far << "\nlr = " << lr
      << "\niters = " << iters << "\nbatch = " << batch << "\nlambda_e = " << lambda_e
      << "\nlambda_d = " << lambda_d << "\nlambda_perc = " << lambda_perc
      << "\nperc_start_iter = " << perc_start_iter << "\nseed = " << seed
      << "\nprecision = " << dtype_name(precision) << "\ninput_view = " << input_view
      << "\nlog_every = " << log_every << "\nckpt_every = " << ckpt_every
      << "\nfreeze_refs = " << (freeze_refs ? "true" : "false")
      << "\nuse_unet = " << (use_unet ? "true" : "false")
      << "\nuse_first_stage = " << (use_first_stage ? "true" : "false") << "\n";
    return o.str();
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.n_queries = n_queries;
    m.hidden = hidden;
    m.layers = layers;
    m.n_points = n_points;
    m.heads = heads;
    m.scene_extent = scene_extent;
    m.feat.base_channels = feat_base;
    m.feat.out_channels = feat_channels;
    m.feat.scale = feat_scale;
    m.feat.use_unet = use_unet;
    m.feat.dtype = precision;
    m.act.d_near = d_near;
    m.act.d_far = d_far;
    m.dtype = precision;
    return m;
}

Array training_loss(const std::vector<Array>& layer_renders, const Array& first_stage,
                    const Array& target, double lambda_e, double lambda_d, double lambda_perc,
                    bool use_perc) {
    auto mse = [&](const Array& a) {
        Array d = ops::sub(a, target);
        return ops::mean_all(ops::mul(d, d));
    };
    Array loss;
    if (first_stage.defined() && lambda_e > 0) {
        LS_CHECK(first_stage.shape() == target.shape(), "loss: first-stage render shape ",
                 first_stage.shape_str(), " != target ", target.shape_str());
        loss = ops::mul_scalar(mse(first_stage), lambda_e);
    }
    for (const Array& r : layer_renders) {
        LS_CHECK(r.shape() == target.shape(), "loss: render shape ", r.shape_str(), " != target ",
                 target.shape_str());
        Array term = ops::mul_scalar(mse(r), lambda_d);
        if (use_perc && lambda_perc > 0) {
            Array perc = ops::mul_scalar(ops::add_scalar(ops::neg(ssim(r, target)), 1.0),
                                         lambda_perc);
            term = ops::add(term, perc);
        }
        loss = loss.defined() ? ops::add(loss, term) : term;
    }
    LS_CHECK(loss.defined(), "loss: nothing to optimize (no renders, no first stage)");
    return loss;
}

void Adam::step(ParamStore& params, Tape& tape, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const std::string& name : params.names()) {
        Array& p = params.get(name);
        Array g = tape.grad(p);
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            m_[name] = Array::zeros(p.shape(), p.dtype());
            v_[name] = Array::zeros(p.shape(), p.dtype());
        }
        Array& m = m_[name];
        Array& v = v_[name];
        dispatch_dtype(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            T* pp = p.raw<T>();
            T* pm = m.raw<T>();
            T* pv = v.raw<T>();
            const T* pg = g.data<T>();
            for (int64_t i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>(pg[i]);
                const double mi = beta1_ * static_cast<double>(pm[i]) + (1.0 - beta1_) * gi;
                const double vi = beta2_ * static_cast<double>(pv[i]) + (1.0 - beta2_) * gi * gi;
                pm[i] = static_cast<T>(mi);
                pv[i] = static_cast<T>(vi);
                const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
                pp[i] = static_cast<T>(static_cast<double>(pp[i]) - update);
            }
        });
    }
}

Trainer::Trainer(const TrainConfig& cfg, Dataset dataset)
    : cfg_(cfg), data_(std::move(dataset)), rng_(cfg.seed) {
    LS_CHECK_DATA(!data_.objects.empty(), "training dataset has no objects");
    for (const ObjectViews& obj : data_.objects) {
        LS_CHECK_DATA(cfg_.input_view >= 0 &&
                          cfg_.input_view < static_cast<int>(obj.views.size()),
                      "input view ", cfg_.input_view, " out of range for object '", obj.name, "'");
    }
    const Camera& c0 = data_.objects[0].views[0].camera;
    Intrinsics intr{c0.fx, c0.fy, c0.cx, c0.cy, c0.width, c0.height};
    model_ = std::make_unique<LeanSplatModel>(cfg_.model_config(), intr, cfg_.seed);
    // Convert images to the training precision once.
    if (cfg_.precision != DType::F64) {
        for (ObjectViews& obj : data_.objects)
            for (View& v : obj.views) v.image = v.image.as_dtype(cfg_.precision);
    }
}

StepStats Trainer::step() {
    const auto t0 = std::chrono::steady_clock::now();
    const ObjectViews& obj =
        data_.objects[static_cast<size_t>(rng_.randint(static_cast<int64_t>(data_.objects.size())))];
    const View& input = obj.views[static_cast<size_t>(cfg_.input_view)];

    std::vector<size_t> targets;
    targets.push_back(static_cast<size_t>(cfg_.input_view));
    for (int b = 1; b < cfg_.batch; ++b)
        targets.push_back(static_cast<size_t>(rng_.randint(static_cast<int64_t>(obj.views.size()))));

    const bool use_perc = iter_ >= cfg_.effective_perc_start();
    const double lambda_e = cfg_.use_first_stage ? cfg_.lambda_e : 0.0;

    Tape tape;
    StepStats stats;
    {
        TapeScope scope(tape);
        std::vector<RawGaussians> outs = model_->forward(input.image, cfg_.freeze_refs);

        Array first_stage;
        if (lambda_e > 0) {
            PhysicalGaussians init_phys = model_->activate_raw(outs[0]);
            first_stage = render(init_phys, model_->input_camera()).rgb;
        }

        Array total;
        double psnr_sum = 0;
        for (size_t bi = 0; bi < targets.size(); ++bi) {
            const View& target = obj.views[targets[bi]];
            const Camera cam_rel = target.camera.relative_to(input.camera);
            std::vector<Array> renders;
            for (size_t l = 1; l < outs.size(); ++l) {
                PhysicalGaussians phys = model_->activate_raw(outs[l]);
                renders.push_back(render(phys, cam_rel).rgb);
            }
            Array loss_j = training_loss(renders, bi == 0 ? first_stage : Array{}, target.image,
                                         bi == 0 ? lambda_e : 0.0, cfg_.lambda_d, cfg_.lambda_perc,
                                         use_perc);
            total = total.defined() ? ops::add(total, loss_j) : loss_j;
            const Array& last = renders.empty() ? first_stage : renders.back();
            psnr_sum += psnr(last, target.image);
        }
        total = ops::mul_scalar(total, 1.0 / static_cast<double>(targets.size()));
        stats.loss = total.scalar();
        stats.psnr_train = psnr_sum / static_cast<double>(targets.size());
        if (!std::isfinite(stats.loss)) {
            throw NumericError("non-finite training loss at iteration " + std::to_string(iter_));
        }
        tape.backward(total);
        opt_.step(model_->params(), tape, cfg_.lr);
    }
    tape.reset();
    ++iter_;
    stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

void Trainer::run(const std::string& log_csv, const std::string& ckpt_dir) {
    std::ofstream log;
    if (!log_csv.empty()) {
        const bool fresh = !std::filesystem::exists(log_csv);
        log.open(log_csv, std::ios::app);
        LS_CHECK_DATA(log.good(), "cannot open training log '", log_csv, "'");
        if (fresh) log << "iter,loss,psnr_train,wall_ms\n";
    }
    if (!ckpt_dir.empty()) std::filesystem::create_directories(ckpt_dir);
    while (iter_ < cfg_.iters) {
        StepStats s = step();
        if (log.is_open() && (iter_ % std::max(1, cfg_.log_every) == 0 || iter_ == cfg_.iters)) {
            log << iter_ << "," << s.loss << "," << s.psnr_train << "," << s.wall_ms << "\n";
            log.flush();
        }
        if (!ckpt_dir.empty() && cfg_.ckpt_every > 0 && iter_ % cfg_.ckpt_every == 0 &&
            iter_ < cfg_.iters) {
            save_checkpoint((std::filesystem::path(ckpt_dir) /
                             ("ckpt_" + std::to_string(iter_) + ".bin"))
                                .string());
        }
    }
    if (!ckpt_dir.empty()) {
        save_checkpoint((std::filesystem::path(ckpt_dir) / "ckpt_final.bin").string());
    }
}

void Trainer::save_checkpoint(const std::string& path) const {
    CheckpointData data;
    data.iteration = static_cast<uint64_t>(iter_);
    data.config_text = cfg_.to_text();
    data.rng_state = rng_.serialize();
    const ParamStore& ps = model_->params();
    for (const std::string& name : ps.names()) data.tensors.emplace(name, ps.get(name));
    for (const auto& [name, m] : opt_.moment1()) data.tensors.emplace("opt.m." + name, m);
    for (const auto& [name, v] : opt_.moment2()) data.tensors.emplace("opt.v." + name, v);
    Array t({1}, DType::F64);
    t.set_value(0, static_cast<double>(opt_.t()));
    data.tensors.emplace("opt.t", t);
    data.tensors.emplace("model.rays", model_->rays().u);
    const Camera& c = model_->input_camera();
    data.tensors.emplace("model.intrinsics",
                         Array::from({6}, {c.fx, c.fy, c.cx, c.cy, static_cast<double>(c.width),
                                           static_cast<double>(c.height)}));
    save_checkpoint_file(path, data);
}

LoadedModel load_model_checkpoint(const std::string& path) {
    CheckpointData data = load_checkpoint_file(path);
    LoadedModel out;
    out.cfg = TrainConfig::from_config(
        Config::parse(data.config_text, TrainConfig::config_keys(), path));
    out.iteration = data.iteration;
    auto iit = data.tensors.find("model.intrinsics");
    LS_CHECK_DATA(iit != data.tensors.end(), "checkpoint '", path, "' is missing model.intrinsics");
    const Array& iv = iit->second;
    Intrinsics intr{iv.value_at(0), iv.value_at(1), iv.value_at(2), iv.value_at(3),
                    static_cast<int>(iv.value_at(4)), static_cast<int>(iv.value_at(5))};
    auto rit = data.tensors.find("model.rays");
    LS_CHECK_DATA(rit != data.tensors.end(), "checkpoint '", path, "' is missing model.rays");
    QueryRays rays{rit->second};
    out.model = std::make_unique<LeanSplatModel>(out.cfg.model_config(), intr, out.cfg.seed, &rays);
    ParamStore& ps = out.model->params();
    for (const std::string& name : ps.names()) {
        auto it = data.tensors.find(name);
        LS_CHECK_DATA(it != data.tensors.end(), "checkpoint '", path, "' is missing tensor '", name,
                      "'");
        ps.assign(name, it->second);
    }
    return out;
}

Array synthesize_view(const LeanSplatModel& model, bool freeze_refs, const View& input,
                      const Camera& target_cam, int level) {
    NoGradGuard ng;
    std::vector<RawGaussians> outs = model.forward(input.image, freeze_refs);
    if (level < 0) level = static_cast<int>(outs.size()) - 1;
    LS_CHECK(level >= 0 && level < static_cast<int>(outs.size()), "synthesize_view: bad level ",
             level);
    PhysicalGaussians phys = model.activate_raw(outs[static_cast<size_t>(level)]);
    const Camera cam_rel = target_cam.relative_to(input.camera);
    return render(phys, cam_rel).rgb;
}

void Trainer::restore(const std::string& path) {
    CheckpointData data = load_checkpoint_file(path);
    LS_CHECK_DATA(data.config_text == cfg_.to_text(),
                  "checkpoint '", path, "' was written with a different config");
    ParamStore& ps = model_->params();
    for (const std::string& name : ps.names()) {
        auto it = data.tensors.find(name);
        LS_CHECK_DATA(it != data.tensors.end(), "checkpoint '", path, "' is missing tensor '", name,
                      "'");
        ps.assign(name, it->second);
    }
    for (const std::string& name : ps.names()) {
        auto mit = data.tensors.find("opt.m." + name);
        auto vit = data.tensors.find("opt.v." + name);
        if (mit != data.tensors.end() && vit != data.tensors.end()) {
            opt_.moment1()[name] = mit->second.clone();
            opt_.moment2()[name] = vit->second.clone();
        }
    }
    auto tit = data.tensors.find("opt.t");
    LS_CHECK_DATA(tit != data.tensors.end(), "checkpoint '", path, "' is missing optimizer state");
    opt_.set_t(static_cast<int64_t>(tit->second.value_at(0)));
    rng_.deserialize(data.rng_state);
    iter_ = static_cast<int64_t>(data.iteration);
}

Array Trainer::render_stage(const View& input, const Camera& target_cam, int level) const {
    return synthesize_view(*model_, cfg_.freeze_refs, input, target_cam, level);
}

}  // namespace leansplat
