#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "leansplat/array.hpp"

namespace leansplat {

// Pinhole camera, OpenCV convention: x right, y down, z forward.
// Pose is world-from-camera: X_world = R * X_cam + t.
struct Camera {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d center() const { return translation; }
    Eigen::Vector3d world_to_cam(const Eigen::Vector3d& p) const {
        return rotation.transpose() * (p - translation);
    }
    Eigen::Vector3d cam_to_world(const Eigen::Vector3d& p) const {
        return rotation * p + translation;
    }
    Eigen::Matrix4d pose_matrix() const;

    // Same intrinsics, identity pose.
    Camera canonical() const;
    // This camera's pose expressed in ref's camera frame.
    Camera relative_to(const Camera& ref) const;

    // Throws DataError if intrinsics or rotation are invalid.
    void validate() const;

    static Camera look_at(double fx, double fy, double cx, double cy, int width, int height,
                          const Eigen::Vector3d& eye, const Eigen::Vector3d& target);
};

constexpr double kBehindCameraEps = 1e-4;

// Projects world-space centers to pixel coordinates and camera-frame depth.
// Rows with depth <= z_eps are behind the camera: their pixel values are
// computed against clamped depth and they receive zero gradient.
// Differentiable w.r.t. mu; recorded on the active tape.
std::pair<Array, Array> project_centers(const Camera& cam, const Array& mu,
                                        double z_eps = kBehindCameraEps);

// Local affine approximation of the projection at camera-frame points
// mu_cam [N,3]; returns [N,2,3]. Forward only.
Array projection_jacobian(const Camera& cam, const Array& mu_cam, double z_eps = kBehindCameraEps);

// Unit direction in the world frame through (px, py) on the image plane.
Eigen::Vector3d pixel_ray(const Camera& cam, double px, double py);

// Pose file: 16 whitespace-separated numbers, row-major 4x4 world-from-camera.
Eigen::Matrix4d load_pose(const std::string& path);
void save_pose(const std::string& path, const Eigen::Matrix4d& pose);

// Intrinsics file: "fx fy cx cy width height" on one line.
struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
};
Intrinsics load_intrinsics(const std::string& path);
void save_intrinsics(const std::string& path, const Intrinsics& in);

Camera make_camera(const Intrinsics& in, const Eigen::Matrix4d& pose);

}  // namespace leansplat
