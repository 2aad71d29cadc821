#include "leansplat/camera.hpp"

#include <fstream>

#include "leansplat/tape.hpp"
#include "leansplat/threading.hpp"

namespace leansplat {

Eigen::Matrix4d Camera::pose_matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
}

Camera Camera::canonical() const {
    Camera c = *this;
    c.rotation = Eigen::Matrix3d::Identity();
    c.translation = Eigen::Vector3d::Zero();
    return c;
}

Camera Camera::relative_to(const Camera& ref) const {
    Camera c = *this;
    c.rotation = ref.rotation.transpose() * rotation;
    c.translation = ref.rotation.transpose() * (translation - ref.translation);
    return c;
}

void Camera::validate() const {
    LS_CHECK_DATA(fx > 0 && fy > 0, "camera focal lengths must be positive (fx=", fx, " fy=", fy, ")");
    LS_CHECK_DATA(width > 0 && height > 0, "camera image size must be positive");
    const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).norm();
    LS_CHECK_DATA(ortho < 1e-9, "camera rotation is not orthonormal (deviation ", ortho, ")");
}

Camera Camera::look_at(double fx, double fy, double cx, double cy, int width, int height,
                       const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    Camera c;
    c.fx = fx;
    c.fy = fy;
    c.cx = cx;
    c.cy = cy;
    c.width = width;
    c.height = height;
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d down(0, 1, 0);  // world y points down
    Eigen::Vector3d right = down.cross(forward);
    LS_CHECK_DATA(right.norm() > 1e-9, "look_at: view direction parallel to the vertical axis");
    right.normalize();
    const Eigen::Vector3d ydir = forward.cross(right);
    c.rotation.col(0) = right;
    c.rotation.col(1) = ydir;
    c.rotation.col(2) = forward;
    c.translation = eye;
    return c;
}

std::pair<Array, Array> project_centers(const Camera& cam, const Array& mu, double z_eps) {
    LS_CHECK(mu.ndim() == 2 && mu.dim(1) == 3, "project_centers: mu must be [N,3], got ",
             mu.shape_str());
    const int64_t N = mu.dim(0);
    Array pts({N, 2}, mu.dtype());
    Array depth({N}, mu.dtype());
    const Eigen::Matrix3d Rcw = cam.rotation.transpose();
    const Eigen::Vector3d t = cam.translation;
    dispatch_dtype(mu.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pm = mu.data<T>();
        T* pp = pts.raw<T>();
        T* pd = depth.raw<T>();
        parallel_for(N, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const Eigen::Vector3d p(pm[i * 3], pm[i * 3 + 1], pm[i * 3 + 2]);
                const Eigen::Vector3d c = Rcw * (p - t);
                const double z = std::max(c.z(), z_eps);
                pp[i * 2 + 0] = static_cast<T>(cam.fx * c.x() / z + cam.cx);
                pp[i * 2 + 1] = static_cast<T>(cam.fy * c.y() / z + cam.cy);
                pd[i] = static_cast<T>(c.z());
            }
        });
    });
    check_finite(pts, "project_centers");
    if (should_record({&mu})) {
        Array smu = mu;
        Camera scam = cam;
        record_op("project_centers", {mu}, {&pts, &depth},
                  [smu, scam, z_eps, N](const std::vector<Array>& gs) {
                      const Array& gp = gs[0];
                      const Array& gd = gs[1];
                      Array gmu(smu.shape(), smu.dtype());
                      const Eigen::Matrix3d Rcw = scam.rotation.transpose();
                      const Eigen::Vector3d t = scam.translation;
                      dispatch_dtype(smu.dtype(), [&](auto tag) {
                          using T = decltype(tag);
                          const T* pm = smu.data<T>();
                          const T* pgp = gp.data<T>();
                          const T* pgd = gd.data<T>();
                          T* pg = gmu.raw<T>();
                          parallel_for(N, [&](int64_t lo, int64_t hi) {
                              for (int64_t i = lo; i < hi; ++i) {
                                  const Eigen::Vector3d p(pm[i * 3], pm[i * 3 + 1], pm[i * 3 + 2]);
                                  const Eigen::Vector3d c = Rcw * (p - t);
                                  Eigen::Vector3d gc = Eigen::Vector3d::Zero();
                                  if (c.z() > z_eps) {
                                      const double z = c.z();
                                      const double gx = pgp[i * 2 + 0], gy = pgp[i * 2 + 1];
                                      gc.x() = gx * scam.fx / z;
                                      gc.y() = gy * scam.fy / z;
                                      gc.z() = -gx * scam.fx * c.x() / (z * z) -
                                               gy * scam.fy * c.y() / (z * z) +
                                               static_cast<double>(pgd[i]);
                                  }
                                  const Eigen::Vector3d gw = Rcw.transpose() * gc;
                                  pg[i * 3 + 0] = static_cast<T>(gw.x());
                                  pg[i * 3 + 1] = static_cast<T>(gw.y());
                                  pg[i * 3 + 2] = static_cast<T>(gw.z());
                              }
                          });
                      });
                      return std::vector<Array>{gmu};
                  });
    }
    return {pts, depth};
}

Array projection_jacobian(const Camera& cam, const Array& mu_cam, double z_eps) {
    LS_CHECK(mu_cam.ndim() == 2 && mu_cam.dim(1) == 3, "projection_jacobian: mu_cam must be [N,3]");
    const int64_t N = mu_cam.dim(0);
    Array out({N, 2, 3}, mu_cam.dtype());
    dispatch_dtype(mu_cam.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pm = mu_cam.data<T>();
        T* po = out.raw<T>();
        for (int64_t i = 0; i < N; ++i) {
            const double x = pm[i * 3], y = pm[i * 3 + 1];
            const double z = std::max(static_cast<double>(pm[i * 3 + 2]), z_eps);
            T* j = po + i * 6;
            j[0] = static_cast<T>(cam.fx / z);
            j[1] = T(0);
            j[2] = static_cast<T>(-cam.fx * x / (z * z));
            j[3] = T(0);
            j[4] = static_cast<T>(cam.fy / z);
            j[5] = static_cast<T>(-cam.fy * y / (z * z));
        }
    });
    return out;
}

Eigen::Vector3d pixel_ray(const Camera& cam, double px, double py) {
    Eigen::Vector3d d((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0);
    return (cam.rotation * d).normalized();
}

Eigen::Matrix4d load_pose(const std::string& path) {
    std::ifstream f(path);
    LS_CHECK_DATA(f.good(), "cannot open pose file '", path, "'");
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            LS_CHECK_DATA(static_cast<bool>(f >> m(r, c)), "malformed pose file '", path,
                          "': expected 16 numbers");
        }
    }
    return m;
}

void save_pose(const std::string& path, const Eigen::Matrix4d& pose) {
    std::ofstream f(path);
    LS_CHECK_DATA(f.good(), "cannot write pose file '", path, "'");
    f.precision(17);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) f << pose(r, c) << (c == 3 ? "\n" : " ");
    }
}

Intrinsics load_intrinsics(const std::string& path) {
    std::ifstream f(path);
    LS_CHECK_DATA(f.good(), "cannot open intrinsics file '", path, "'");
    Intrinsics in;
    LS_CHECK_DATA(static_cast<bool>(f >> in.fx >> in.fy >> in.cx >> in.cy >> in.width >> in.height),
                  "malformed intrinsics file '", path, "': expected 'fx fy cx cy width height'");
    return in;
}

void save_intrinsics(const std::string& path, const Intrinsics& in) {
    std::ofstream f(path);
    LS_CHECK_DATA(f.good(), "cannot write intrinsics file '", path, "'");
    f.precision(17);
    f << in.fx << " " << in.fy << " " << in.cx << " " << in.cy << " " << in.width << " " << in.height
      << "\n";
}

Camera make_camera(const Intrinsics& in, const Eigen::Matrix4d& pose) {
    Camera c;
    c.fx = in.fx;
    c.fy = in.fy;
    c.cx = in.cx;
    c.cy = in.cy;
    c.width = in.width;
    c.height = in.height;
    c.rotation = pose.block<3, 3>(0, 0);
    c.translation = pose.block<3, 1>(0, 3);
    c.validate();
    return c;
}

}  // namespace leansplat
