#pragma once

#include <string>
#include <vector>

#include "leansplat/camera.hpp"
#include "leansplat/gaussians.hpp"

namespace leansplat {

struct View {
    Array image;  // [3,H,W] in [0,1]
    Camera camera;
    int index = 0;  // view index within the object (preserved by the loader)
};

struct ObjectViews {
    std::string name;
    std::vector<View> views;
};

struct Dataset {
    std::vector<ObjectViews> objects;
};

// Synthetic scene recipe; fully reproducible from the seed.
struct SceneSpec {
    uint64_t seed = 0;
    int n_objects = 8;
    int n_views = 20;
    int n_gaussians = 32;  // <= 128
    int resolution = 64;
    double fov_deg = 50.0;
    double rig_radius = 2.0;
    double elev_min_deg = -25.0;
    double elev_max_deg = 45.0;
    std::string recipe = "composite";  // sphere-shell | box | composite
};

SceneSpec load_scene_spec(const std::string& path);

struct GeneratedScene {
    PhysicalGaussians ground_truth;
    ObjectViews object;
};

// Samples ground-truth Gaussians per the recipe and renders every rig view
// with the oracle renderer. Deterministic per (spec.seed, object index).
GeneratedScene generate_scene(const SceneSpec& spec, int object_index);

struct GeneratedDataset {
    Dataset dataset;
    std::vector<PhysicalGaussians> ground_truth;  // one per object
};
GeneratedDataset generate_dataset(const SceneSpec& spec);

// SRN directory layout:
//   <dir>/<object>/rgb/NNNNNN.png
//   <dir>/<object>/pose/NNNNNN.txt      (4x4 row-major world-from-camera)
//   <dir>/<object>/intrinsics.txt       (fx fy cx cy width height)
// generate_scene's exporter additionally writes gt_gaussians.txt per object.
void export_srn(const std::string& dir, const GeneratedDataset& data);
Dataset load_srn(const std::string& dir, DType dtype = DType::F64);

// Ground-truth Gaussian text format: one line per Gaussian with
// center(3) cov(9) opacity(1) sh(12).
void save_gaussians_txt(const std::string& path, const PhysicalGaussians& g);
PhysicalGaussians load_gaussians_txt(const std::string& path);

// Camera rig placement angles (object-centric, y-down world):
// azimuth = atan2(x, -z), elevation = asin(-y / radius).
Eigen::Vector3d rig_position(double radius, double azimuth_rad, double elevation_rad);
void camera_angles(const Camera& cam, double& azimuth_rad, double& elevation_rad);

}  // namespace leansplat
