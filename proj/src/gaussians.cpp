#include "leansplat/gaussians.hpp"

#include <Eigen/Dense>
#include <atomic>
#include <cstring>
#include <fstream>

#include "leansplat/ops.hpp"
#include "leansplat/tape.hpp"
#include "leansplat/threading.hpp"

namespace leansplat {

namespace {

Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& u) {
    const double w = u[0], x = u[1], y = u[2], z = u[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// dL/d(unit quaternion) from dL/dR.
Eigen::Vector4d rot_grad_to_quat(const Eigen::Vector4d& u, const Eigen::Matrix3d& gR) {
    const double w = u[0], x = u[1], y = u[2], z = u[3];
    Eigen::Matrix3d dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    Eigen::Vector4d g;
    g[0] = 2.0 * (gR.array() * dw.array()).sum();
    g[1] = 2.0 * (gR.array() * dx.array()).sum();
    g[2] = 2.0 * (gR.array() * dy.array()).sum();
    g[3] = 2.0 * (gR.array() * dz.array()).sum();
    return g;
}

// dL/d(raw quaternion) through q -> q/|q|.
Eigen::Vector4d normalize_backward(const Eigen::Vector4d& u, double norm,
                                   const Eigen::Vector4d& gu) {
    return (gu - u * u.dot(gu)) / norm;
}

}  // namespace

PhysicalGaussians activate(const RawGaussians& raw, const QueryRays& rays,
                           const ActivationConfig& cfg) {
    const Array& p = raw.params;
    LS_CHECK(p.ndim() == 2 && p.dim(1) == kGaussianParams, "activate: params must be [N,24], got ",
             p.shape_str());
    LS_CHECK(rays.u.ndim() == 2 && rays.u.dim(0) == p.dim(0) && rays.u.dim(1) == 2,
             "activate: rays must be [N,2] matching params");
    const int64_t N = p.dim(0);
    const double d_span = cfg.d_far - cfg.d_near;
    const double log_smax = std::log(cfg.scale_max);
    const double log_smin = std::log(cfg.scale_min);

    PhysicalGaussians out;
    out.centers = Array({N, 3}, p.dtype());
    out.cov = Array({N, 3, 3}, p.dtype());
    out.opacity = Array({N}, p.dtype());
    out.sh = Array({N, 3, 4}, p.dtype());

    dispatch_dtype(p.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pp = p.data<T>();
        const T* pu = rays.u.data<T>();
        T* pc = out.centers.raw<T>();
        T* pcov = out.cov.raw<T>();
        T* pop = out.opacity.raw<T>();
        T* psh = out.sh.raw<T>();
        std::atomic<bool> bad_quat{false};
        parallel_for(N, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const T* g = pp + i * kGaussianParams;
                const double sd = 1.0 / (1.0 + std::exp(-static_cast<double>(g[kIdxDepth])));
                const double d = cfg.d_near + d_span * sd;
                pc[i * 3 + 0] = static_cast<T>(pu[i * 2 + 0] * d + g[kIdxOffset + 0]);
                pc[i * 3 + 1] = static_cast<T>(pu[i * 2 + 1] * d + g[kIdxOffset + 1]);
                pc[i * 3 + 2] = static_cast<T>(d + g[kIdxOffset + 2]);

                Eigen::Vector3d s;
                for (int k = 0; k < 3; ++k) {
                    const double ls = static_cast<double>(g[kIdxScale + k]);
                    s[k] = std::exp(std::min(std::max(ls, log_smin), log_smax));
                }
                Eigen::Vector4d q(g[kIdxQuat], g[kIdxQuat + 1], g[kIdxQuat + 2], g[kIdxQuat + 3]);
                const double qn = q.norm();
                if (qn < 1e-12) {
                    bad_quat.store(true);
                    continue;
                }
                const Eigen::Matrix3d R = quat_to_rot(q / qn);
                const Eigen::Matrix3d cov =
                    R * s.cwiseProduct(s).asDiagonal() * R.transpose();
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) pcov[i * 9 + r * 3 + c] = static_cast<T>(cov(r, c));

                pop[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(g[kIdxOpacity]))));
                for (int k = 0; k < 12; ++k) psh[i * 12 + k] = g[kIdxSh + k];
            }
        });
        if (bad_quat.load()) {
            throw NumericError("activate: zero-norm quaternion");
        }
    });
    check_finite(out.cov, "activate");

    if (should_record({&p})) {
        Array sp = p, su = rays.u;
        record_op("activate", {p}, {&out.centers, &out.cov, &out.opacity, &out.sh},
                  [sp, su, cfg, N, d_span, log_smax, log_smin](const std::vector<Array>& gs) {
                      const Array& gmu = gs[0];
                      const Array& gcov = gs[1];
                      const Array& gop = gs[2];
                      const Array& gsh = gs[3];
                      Array gp = Array::zeros(sp.shape(), sp.dtype());
                      dispatch_dtype(sp.dtype(), [&](auto tag) {
                          using T = decltype(tag);
                          const T* pp = sp.data<T>();
                          const T* pu = su.data<T>();
                          const T* pgm = gmu.data<T>();
                          const T* pgc = gcov.data<T>();
                          const T* pgo = gop.data<T>();
                          const T* pgs = gsh.data<T>();
                          T* pg = gp.raw<T>();
                          parallel_for(N, [&](int64_t lo, int64_t hi) {
                              for (int64_t i = lo; i < hi; ++i) {
                                  const T* g = pp + i * kGaussianParams;
                                  T* o = pg + i * kGaussianParams;
                                  // centers
                                  const double sd =
                                      1.0 / (1.0 + std::exp(-static_cast<double>(g[kIdxDepth])));
                                  const double gd = pgm[i * 3] * pu[i * 2] +
                                                    pgm[i * 3 + 1] * pu[i * 2 + 1] + pgm[i * 3 + 2];
                                  o[kIdxDepth] = static_cast<T>(gd * d_span * sd * (1.0 - sd));
                                  for (int k = 0; k < 3; ++k)
                                      o[kIdxOffset + k] = static_cast<T>(pgm[i * 3 + k]);
                                  // covariance
                                  Eigen::Vector3d s;
                                  bool clamped[3];
                                  for (int k = 0; k < 3; ++k) {
                                      const double ls = static_cast<double>(g[kIdxScale + k]);
                                      clamped[k] = ls <= log_smin || ls >= log_smax;
                                      s[k] = std::exp(std::min(std::max(ls, log_smin), log_smax));
                                  }
                                  Eigen::Vector4d q(g[kIdxQuat], g[kIdxQuat + 1], g[kIdxQuat + 2],
                                                    g[kIdxQuat + 3]);
                                  const double qn = q.norm();
                                  const Eigen::Vector4d u = q / qn;
                                  const Eigen::Matrix3d R = quat_to_rot(u);
                                  Eigen::Matrix3d G;
                                  for (int r = 0; r < 3; ++r)
                                      for (int c = 0; c < 3; ++c) G(r, c) = pgc[i * 9 + r * 3 + c];
                                  const Eigen::Matrix3d RtGR = R.transpose() * G * R;
                                  for (int k = 0; k < 3; ++k) {
                                      const double ds = 2.0 * s[k] * RtGR(k, k);
                                      // d(exp)/d(raw) = s unless clamped
                                      o[kIdxScale + k] =
                                          static_cast<T>(clamped[k] ? 0.0 : ds * s[k]);
                                  }
                                  const Eigen::Matrix3d gR =
                                      (G + G.transpose()) * R * s.cwiseProduct(s).asDiagonal();
                                  const Eigen::Vector4d gu = rot_grad_to_quat(u, gR);
                                  const Eigen::Vector4d gq = normalize_backward(u, qn, gu);
                                  for (int k = 0; k < 4; ++k)
                                      o[kIdxQuat + k] = static_cast<T>(gq[k]);
                                  // opacity
                                  const double op =
                                      1.0 / (1.0 + std::exp(-static_cast<double>(g[kIdxOpacity])));
                                  o[kIdxOpacity] = static_cast<T>(pgo[i] * op * (1.0 - op));
                                  // SH passthrough
                                  for (int k = 0; k < 12; ++k) o[kIdxSh + k] = pgs[i * 12 + k];
                              }
                          });
                      });
                      return std::vector<Array>{gp};
                  });
    }
    return out;
}

RawGaussians compose_update(const RawGaussians& g, const Array& delta) {
    const Array& a = g.params;
    LS_CHECK(a.shape() == delta.shape(), "compose_update: shape mismatch ", a.shape_str(), " vs ",
             delta.shape_str());
    const int64_t N = a.dim(0);
    Array out(a.shape(), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pa = a.data<T>();
        const T* pd = delta.data<T>();
        T* po = out.raw<T>();
        std::atomic<bool> bad_quat{false};
        parallel_for(N, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                const T* ga = pa + i * kGaussianParams;
                const T* gd = pd + i * kGaussianParams;
                T* o = po + i * kGaussianParams;
                for (int k = 0; k < kGaussianParams; ++k) o[k] = static_cast<T>(ga[k] + gd[k]);
                Eigen::Vector4d dq(gd[kIdxQuat], gd[kIdxQuat + 1], gd[kIdxQuat + 2],
                                   gd[kIdxQuat + 3]);
                const double n = dq.norm();
                if (n < 1e-12) {
                    bad_quat.store(true);
                    continue;
                }
                const Eigen::Vector4d u = dq / n;
                const Eigen::Vector4d q(ga[kIdxQuat], ga[kIdxQuat + 1], ga[kIdxQuat + 2],
                                        ga[kIdxQuat + 3]);
                // Hamilton product u (x) q
                o[kIdxQuat + 0] = static_cast<T>(u[0] * q[0] - u[1] * q[1] - u[2] * q[2] - u[3] * q[3]);
                o[kIdxQuat + 1] = static_cast<T>(u[0] * q[1] + u[1] * q[0] + u[2] * q[3] - u[3] * q[2]);
                o[kIdxQuat + 2] = static_cast<T>(u[0] * q[2] - u[1] * q[3] + u[2] * q[0] + u[3] * q[1]);
                o[kIdxQuat + 3] = static_cast<T>(u[0] * q[3] + u[1] * q[2] - u[2] * q[1] + u[3] * q[0]);
            }
        });
        if (bad_quat.load()) {
            throw NumericError("compose_update: zero-norm delta quaternion");
        }
    });
    check_finite(out, "compose_update");

    if (should_record({&a, &delta})) {
        Array sa = a, sd = delta;
        record_op("compose_update", {a, delta}, {&out}, [sa, sd, N](const std::vector<Array>& gs) {
            const Array& go = gs[0];
            Array ga = Array::zeros(sa.shape(), sa.dtype());
            Array gd = Array::zeros(sd.shape(), sd.dtype());
            dispatch_dtype(sa.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const T* pa = sa.data<T>();
                const T* pd = sd.data<T>();
                const T* pg = go.data<T>();
                T* pga = ga.raw<T>();
                T* pgd = gd.raw<T>();
                parallel_for(N, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i) {
                        const T* qa = pa + i * kGaussianParams;
                        const T* qd = pd + i * kGaussianParams;
                        const T* g = pg + i * kGaussianParams;
                        T* oa = pga + i * kGaussianParams;
                        T* od = pgd + i * kGaussianParams;
                        for (int k = 0; k < kGaussianParams; ++k) {
                            oa[k] = g[k];
                            od[k] = g[k];
                        }
                        Eigen::Vector4d dq(qd[kIdxQuat], qd[kIdxQuat + 1], qd[kIdxQuat + 2],
                                           qd[kIdxQuat + 3]);
                        const double n = dq.norm();
                        const Eigen::Vector4d u = dq / n;
                        const Eigen::Vector4d q(qa[kIdxQuat], qa[kIdxQuat + 1], qa[kIdxQuat + 2],
                                                qa[kIdxQuat + 3]);
                        const Eigen::Vector4d gq(g[kIdxQuat], g[kIdxQuat + 1], g[kIdxQuat + 2],
                                                 g[kIdxQuat + 3]);
                        // q' = L(u) q = M(q) u
                        Eigen::Matrix4d L, M;
                        L << u[0], -u[1], -u[2], -u[3],
                             u[1],  u[0], -u[3],  u[2],
                             u[2],  u[3],  u[0], -u[1],
                             u[3], -u[2],  u[1],  u[0];
                        M << q[0], -q[1], -q[2], -q[3],
                             q[1],  q[0],  q[3], -q[2],
                             q[2], -q[3],  q[0],  q[1],
                             q[3],  q[2], -q[1],  q[0];
                        const Eigen::Vector4d gqa = L.transpose() * gq;
                        const Eigen::Vector4d gu = M.transpose() * gq;
                        const Eigen::Vector4d gdq = normalize_backward(u, n, gu);
                        for (int k = 0; k < 4; ++k) {
                            oa[kIdxQuat + k] = static_cast<T>(gqa[k]);
                            od[kIdxQuat + k] = static_cast<T>(gdq[k]);
                        }
                    }
                });
            });
            return std::vector<Array>{ga, gd};
        });
    }
    return RawGaussians{out};
}

Array sh_color(const Array& sh, const Array& view_dirs) {
    LS_CHECK(sh.ndim() == 3 && sh.dim(1) == 3 && sh.dim(2) == 4, "sh_color: sh must be [N,3,4]");
    LS_CHECK(view_dirs.ndim() == 2 && view_dirs.dim(1) == 3 && view_dirs.dim(0) == sh.dim(0),
             "sh_color: view_dirs must be [N,3]");
    const int64_t N = sh.dim(0);
    auto coeff = [&](int k) { return ops::reshape(ops::slice(sh, 2, k, 1), {N, 3}); };
    Array dx = ops::slice(view_dirs, 1, 0, 1);  // [N,1]
    Array dy = ops::slice(view_dirs, 1, 1, 1);
    Array dz = ops::slice(view_dirs, 1, 2, 1);
    Array raw = ops::mul_scalar(coeff(0), kShC0);
    raw = ops::add(raw, ops::mul(ops::mul_scalar(coeff(1), kShC1), dy));
    raw = ops::add(raw, ops::mul(ops::mul_scalar(coeff(2), kShC1), dz));
    raw = ops::add(raw, ops::mul(ops::mul_scalar(coeff(3), kShC1), dx));
    return ops::sigmoid(raw);
}

void export_ply(const std::string& path, const PhysicalGaussians& g) {
    std::ofstream f(path, std::ios::binary);
    LS_CHECK_DATA(f.good(), "cannot write PLY file '", path, "'");
    const int64_t N = g.count();
    f << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << N << "\n"
      << "property float x\nproperty float y\nproperty float z\nproperty float opacity\n"
      << "end_header\n";
    std::vector<float> row(4);
    for (int64_t i = 0; i < N; ++i) {
        row[0] = static_cast<float>(g.centers.value_at(i * 3 + 0));
        row[1] = static_cast<float>(g.centers.value_at(i * 3 + 1));
        row[2] = static_cast<float>(g.centers.value_at(i * 3 + 2));
        row[3] = static_cast<float>(g.opacity.value_at(i));
        f.write(reinterpret_cast<const char*>(row.data()), 4 * sizeof(float));
    }
}

}  // namespace leansplat
