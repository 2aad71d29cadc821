#include "leansplat/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "leansplat/config.hpp"
#include "leansplat/image_io.hpp"
#include "leansplat/renderer.hpp"
#include "leansplat/rng.hpp"

namespace fs = std::filesystem;

namespace leansplat {

Eigen::Vector3d rig_position(double radius, double azimuth_rad, double elevation_rad) {
    return {radius * std::cos(elevation_rad) * std::sin(azimuth_rad),
            -radius * std::sin(elevation_rad),
            -radius * std::cos(elevation_rad) * std::cos(azimuth_rad)};
}

void camera_angles(const Camera& cam, double& azimuth_rad, double& elevation_rad) {
    const Eigen::Vector3d p = cam.center();
    const double r = p.norm();
    elevation_rad = std::asin(-p.y() / r);
    azimuth_rad = std::atan2(p.x(), -p.z());
}

SceneSpec load_scene_spec(const std::string& path) {
    static const std::vector<std::string> keys = {"seed",       "objects",  "views",
                                                  "gaussians",  "resolution", "fov_deg",
                                                  "rig_radius", "elev_min", "elev_max",
                                                  "recipe"};
    Config cfg = Config::load(path, keys);
    SceneSpec s;
    s.seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
    s.n_objects = static_cast<int>(cfg.get_int("objects", s.n_objects));
    s.n_views = static_cast<int>(cfg.get_int("views", s.n_views));
    s.n_gaussians = static_cast<int>(cfg.get_int("gaussians", s.n_gaussians));
    s.resolution = static_cast<int>(cfg.get_int("resolution", s.resolution));
    s.fov_deg = cfg.get_double("fov_deg", s.fov_deg);
    s.rig_radius = cfg.get_double("rig_radius", s.rig_radius);
    s.elev_min_deg = cfg.get_double("elev_min", s.elev_min_deg);
    s.elev_max_deg = cfg.get_double("elev_max", s.elev_max_deg);
    s.recipe = cfg.get_string("recipe", s.recipe);
    LS_CHECK_DATA(s.n_gaussians >= 1 && s.n_gaussians <= 128, "scene spec: gaussians must be 1..128");
    LS_CHECK_DATA(s.n_views >= 2, "scene spec: at least 2 views required");
    return s;
}

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

void sample_gaussian(Rng& rng, const std::string& recipe, int slot, double* center, double* cov,
                     double* opacity, double* sh) {
    std::string kind = recipe;
    if (recipe == "composite") kind = (slot % 2 == 0) ? "sphere-shell" : "box";

    Eigen::Vector3d c;
    if (kind == "sphere-shell") {
        Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
        dir.normalize();
        c = dir * rng.uniform(0.26, 0.38);
    } else if (kind == "box") {
        c = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    } else {
        throw DataError("unknown scene recipe '" + kind + "'");
    }
    for (int d = 0; d < 3; ++d) center[d] = c[d];

    // Random orientation, anisotropic scales.
    Eigen::Vector4d q(1.0 + rng.normal(0, 0.5), rng.normal(0, 0.5), rng.normal(0, 0.5),
                      rng.normal(0, 0.5));
    q.normalize();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    Eigen::Vector3d s(rng.uniform(0.02, 0.07), rng.uniform(0.02, 0.07), rng.uniform(0.015, 0.05));
    Eigen::Matrix3d S = R * s.cwiseProduct(s).asDiagonal() * R.transpose();
    for (int r = 0; r < 3; ++r)
        for (int cc = 0; cc < 3; ++cc) cov[r * 3 + cc] = S(r, cc);

    *opacity = rng.uniform(0.55, 0.95);

    static const double palette[8][3] = {{0.85, 0.2, 0.2}, {0.2, 0.7, 0.25}, {0.2, 0.35, 0.85},
                                         {0.9, 0.75, 0.15}, {0.7, 0.25, 0.75}, {0.15, 0.7, 0.7},
                                         {0.9, 0.5, 0.2},  {0.35, 0.35, 0.35}};
    const double* col = palette[rng.randint(8)];
    for (int ch = 0; ch < 3; ++ch) {
        sh[ch * 4 + 0] = logit(col[ch]) / kShC0;
        for (int k = 1; k < 4; ++k) sh[ch * 4 + k] = rng.normal(0, 0.15);
    }
}

}  // namespace

GeneratedScene generate_scene(const SceneSpec& spec, int object_index) {
    Rng rng(spec.seed * 1000003ull + static_cast<uint64_t>(object_index) * 7919ull + 17ull);
    const int n = spec.n_gaussians;

    PhysicalGaussians g;
    g.centers = Array({n, 3}, DType::F64);
    g.cov = Array({n, 3, 3}, DType::F64);
    g.opacity = Array({n}, DType::F64);
    g.sh = Array({n, 3, 4}, DType::F64);
    for (int i = 0; i < n; ++i) {
        double center[3], cov[9], opacity, sh[12];
        sample_gaussian(rng, spec.recipe, i, center, cov, &opacity, sh);
        for (int d = 0; d < 3; ++d) g.centers.set_value(i * 3 + d, center[d]);
        for (int d = 0; d < 9; ++d) g.cov.set_value(i * 9 + d, cov[d]);
        g.opacity.set_value(i, opacity);
        for (int d = 0; d < 12; ++d) g.sh.set_value(i * 12 + d, sh[d]);
    }

    const int res = spec.resolution;
    const double f = 0.5 * res / std::tan(0.5 * spec.fov_deg * M_PI / 180.0);
    GeneratedScene out;
    out.ground_truth = g;
    out.object.name = "obj_" + std::to_string(object_index);
    for (int v = 0; v < spec.n_views; ++v) {
        const double az =
            2.0 * M_PI * v / spec.n_views + rng.uniform(-0.3, 0.3) * 2.0 * M_PI / spec.n_views;
        const double el =
            (spec.elev_min_deg + (spec.elev_max_deg - spec.elev_min_deg) * rng.uniform()) * M_PI /
            180.0;
        Camera cam = Camera::look_at(f, f, res / 2.0, res / 2.0, res, res,
                                     rig_position(spec.rig_radius, az, el), {0, 0, 0});
        View view;
        view.camera = cam;
        view.index = v;
        view.image = render_oracle(g, cam).rgb;
        out.object.views.push_back(std::move(view));
    }
    return out;
}

GeneratedDataset generate_dataset(const SceneSpec& spec) {
    GeneratedDataset out;
    for (int o = 0; o < spec.n_objects; ++o) {
        GeneratedScene scene = generate_scene(spec, o);
        out.dataset.objects.push_back(std::move(scene.object));
        out.ground_truth.push_back(std::move(scene.ground_truth));
    }
    return out;
}

void export_srn(const std::string& dir, const GeneratedDataset& data) {
    for (size_t o = 0; o < data.dataset.objects.size(); ++o) {
        const ObjectViews& obj = data.dataset.objects[o];
        const fs::path base = fs::path(dir) / obj.name;
        std::error_code ec;
        fs::create_directories(base / "rgb", ec);
        fs::create_directories(base / "pose", ec);
        LS_CHECK_DATA(fs::exists(base / "rgb"), "cannot create output directory '", base.string(),
                      "'");
        LS_CHECK_DATA(!obj.views.empty(), "object '", obj.name, "' has no views");
        const Camera& c0 = obj.views[0].camera;
        save_intrinsics((base / "intrinsics.txt").string(),
                        {c0.fx, c0.fy, c0.cx, c0.cy, c0.width, c0.height});
        for (const View& v : obj.views) {
            std::ostringstream name;
            name << std::setw(6) << std::setfill('0') << v.index;
            save_png((base / "rgb" / (name.str() + ".png")).string(), v.image);
            save_pose((base / "pose" / (name.str() + ".txt")).string(), v.camera.pose_matrix());
        }
        if (o < data.ground_truth.size()) {
            save_gaussians_txt((base / "gt_gaussians.txt").string(), data.ground_truth[o]);
        }
    }
}

Dataset load_srn(const std::string& dir, DType dtype) {
    LS_CHECK_DATA(fs::is_directory(dir), "dataset directory '", dir, "' does not exist");
    Dataset out;
    std::vector<fs::path> objdirs;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) objdirs.push_back(e.path());
    }
    std::sort(objdirs.begin(), objdirs.end());
    LS_CHECK_DATA(!objdirs.empty(), "no object directories under '", dir, "'");

    for (const fs::path& od : objdirs) {
        ObjectViews obj;
        obj.name = od.filename().string();
        const Intrinsics intr = load_intrinsics((od / "intrinsics.txt").string());
        std::vector<fs::path> images;
        LS_CHECK_DATA(fs::is_directory(od / "rgb"), "object '", obj.name, "' has no rgb/ directory");
        for (const auto& e : fs::directory_iterator(od / "rgb")) {
            if (e.path().extension() == ".png") images.push_back(e.path());
        }
        std::sort(images.begin(), images.end());
        LS_CHECK_DATA(!images.empty(), "object '", obj.name, "' has no PNG views");
        for (const fs::path& img_path : images) {
            View v;
            const std::string stem = img_path.stem().string();
            try {
                v.index = std::stoi(stem);
            } catch (const std::exception&) {
                throw DataError("view file '" + img_path.string() + "' is not numbered NNNNNN.png");
            }
            v.image = load_png(img_path.string(), dtype);
            LS_CHECK_DATA(v.image.dim(1) == intr.height && v.image.dim(2) == intr.width, "image '",
                          img_path.string(), "' size ", v.image.dim(2), "x", v.image.dim(1),
                          " does not match intrinsics ", intr.width, "x", intr.height);
            const fs::path pose_path = od / "pose" / (stem + ".txt");
            LS_CHECK_DATA(fs::exists(pose_path), "missing pose file '", pose_path.string(), "'");
            v.camera = make_camera(intr, load_pose(pose_path.string()));
            obj.views.push_back(std::move(v));
        }
        out.objects.push_back(std::move(obj));
    }
    return out;
}

void save_gaussians_txt(const std::string& path, const PhysicalGaussians& g) {
    std::ofstream f(path);
    LS_CHECK_DATA(f.good(), "cannot write '", path, "'");
    f.precision(17);
    const int64_t n = g.count();
    for (int64_t i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) f << g.centers.value_at(i * 3 + d) << " ";
        for (int d = 0; d < 9; ++d) f << g.cov.value_at(i * 9 + d) << " ";
        f << g.opacity.value_at(i);
        for (int d = 0; d < 12; ++d) f << " " << g.sh.value_at(i * 12 + d);
        f << "\n";
    }
}

PhysicalGaussians load_gaussians_txt(const std::string& path) {
    std::ifstream f(path);
    LS_CHECK_DATA(f.good(), "cannot open '", path, "'");
    std::vector<double> vals;
    double v;
    while (f >> v) vals.push_back(v);
    LS_CHECK_DATA(!vals.empty() && vals.size() % 25 == 0, "'", path,
                  "': expected 25 numbers per Gaussian, got ", vals.size());
    const int64_t n = static_cast<int64_t>(vals.size() / 25);
    PhysicalGaussians g;
    g.centers = Array({n, 3}, DType::F64);
    g.cov = Array({n, 3, 3}, DType::F64);
    g.opacity = Array({n}, DType::F64);
    g.sh = Array({n, 3, 4}, DType::F64);
    for (int64_t i = 0; i < n; ++i) {
        const double* row = vals.data() + i * 25;
        for (int d = 0; d < 3; ++d) g.centers.set_value(i * 3 + d, row[d]);
        for (int d = 0; d < 9; ++d) g.cov.set_value(i * 9 + d, row[3 + d]);
        g.opacity.set_value(i, row[12]);
        for (int d = 0; d < 12; ++d) g.sh.set_value(i * 12 + d, row[13 + d]);
    }
    return g;
}

}  // namespace leansplat
