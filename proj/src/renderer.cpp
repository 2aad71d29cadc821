#include "leansplat/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "leansplat/ops.hpp"
#include "leansplat/tape.hpp"
#include "leansplat/threading.hpp"

namespace leansplat {

namespace {

// Tile-binning radius: wide enough that a culled splat contributes less
// than ~1e-5 alpha anywhere outside, keeping the tiled path within the
// oracle-equivalence tolerance. The reported Splat2D::radius stays at 3 sigma.
const double kBinSigma = std::sqrt(2.0 * std::log(1e5));

struct Prepared {
    // Sorted front-to-back; parallel arrays.
    std::vector<int64_t> index;
    std::vector<double> mean2d;   // 2 per splat
    std::vector<double> conic;    // 3 per splat (a, b, c) of inverse cov2d
    std::vector<double> color;    // 3 per splat
    std::vector<double> opac;     // 1 per splat
    std::vector<double> depth;    // 1 per splat
    std::vector<double> bin_radius;
    std::vector<double> mu_cam;   // 3 per splat
    std::vector<double> dir;      // 3 per splat (unit view direction)
    std::vector<double> dist;     // |mu_world - cam_center|
    size_t size() const { return index.size(); }
};

double sh_channel(const double* sh, const Eigen::Vector3d& d) {
    return sh[0] * kShC0 + kShC1 * (sh[1] * d.y() + sh[2] * d.z() + sh[3] * d.x());
}

Prepared prepare_internal(const PhysicalGaussians& g, const Camera& cam, bool cull) {
    const int64_t N = g.count();
    const Eigen::Matrix3d W = cam.rotation.transpose();
    const Eigen::Vector3d c0 = cam.center();

    struct Entry {
        double depth;
        int64_t index;
    };
    std::vector<Entry> order;
    Prepared out;

    std::vector<double> mu(N * 3), cov(N * 9), op(N), sh(N * 12);
    for (int64_t i = 0; i < N * 3; ++i) mu[i] = g.centers.value_at(i);
    for (int64_t i = 0; i < N * 9; ++i) cov[i] = g.cov.value_at(i);
    for (int64_t i = 0; i < N; ++i) op[i] = g.opacity.value_at(i);
    for (int64_t i = 0; i < N * 12; ++i) sh[i] = g.sh.value_at(i);

    std::vector<int64_t> keep;
    std::vector<double> keep_binr;
    keep.reserve(N);
    for (int64_t i = 0; i < N; ++i) {
        const Eigen::Vector3d p(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]);
        const Eigen::Vector3d pc = W * (p - c0);
        if (pc.z() <= kBehindCameraEps) continue;  // behind camera
        if (cull) {
            // Screen-bounds cull with the conservative binning radius.
            const double z = pc.z();
            const double px = cam.fx * pc.x() / z + cam.cx;
            const double py = cam.fy * pc.y() / z + cam.cy;
            Eigen::Matrix2d J_cov;
            Eigen::Matrix<double, 2, 3> J;
            J << cam.fx / z, 0, -cam.fx * pc.x() / (z * z), 0, cam.fy / z,
                -cam.fy * pc.y() / (z * z);
            Eigen::Matrix3d S;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) S(r, c) = cov[i * 9 + r * 3 + c];
            const Eigen::Matrix<double, 2, 3> M = J * W;
            Eigen::Matrix2d c2 = M * S * M.transpose();
            c2(0, 0) += kCovRegularizer;
            c2(1, 1) += kCovRegularizer;
            const double b_sym = 0.5 * (c2(0, 1) + c2(1, 0));
            const double mid = 0.5 * (c2(0, 0) + c2(1, 1));
            const double det = c2(0, 0) * c2(1, 1) - b_sym * b_sym;
            const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
            const double rb = kBinSigma * std::sqrt(lmax);
            if (px + rb < 0.0 || px - rb > cam.width || py + rb < 0.0 || py - rb > cam.height)
                continue;
            keep_binr.push_back(rb);
        } else {
            keep_binr.push_back(0.0);
        }
        keep.push_back(i);
        order.push_back({pc.z(), i});
    }

    // Front-to-back: ascending depth, stable original-index tie-break.
    std::vector<size_t> perm(order.size());
    for (size_t k = 0; k < perm.size(); ++k) perm[k] = k;
    std::sort(perm.begin(), perm.end(), [&](size_t a, size_t b) {
        if (order[a].depth != order[b].depth) return order[a].depth < order[b].depth;
        return order[a].index < order[b].index;
    });

    const size_t M = perm.size();
    out.index.resize(M);
    out.mean2d.resize(2 * M);
    out.conic.resize(3 * M);
    out.color.resize(3 * M);
    out.opac.resize(M);
    out.depth.resize(M);
    out.bin_radius.resize(M);
    out.mu_cam.resize(3 * M);
    out.dir.resize(3 * M);
    out.dist.resize(M);

    for (size_t k = 0; k < M; ++k) {
        const size_t src = perm[k];
        const int64_t i = keep[src];
        out.index[k] = i;
        const Eigen::Vector3d p(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]);
        const Eigen::Vector3d pc = W * (p - c0);
        const double z = pc.z();
        out.depth[k] = z;
        out.mu_cam[3 * k] = pc.x();
        out.mu_cam[3 * k + 1] = pc.y();
        out.mu_cam[3 * k + 2] = pc.z();
        out.mean2d[2 * k] = cam.fx * pc.x() / z + cam.cx;
        out.mean2d[2 * k + 1] = cam.fy * pc.y() / z + cam.cy;

        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0, -cam.fx * pc.x() / (z * z), 0, cam.fy / z, -cam.fy * pc.y() / (z * z);
        Eigen::Matrix3d S;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) S(r, c) = cov[i * 9 + r * 3 + c];
        const Eigen::Matrix<double, 2, 3> Mjw = J * W;
        Eigen::Matrix2d c2 = Mjw * S * Mjw.transpose();
        c2(0, 0) += kCovRegularizer;
        c2(1, 1) += kCovRegularizer;
        const double b_sym = 0.5 * (c2(0, 1) + c2(1, 0));
        const double det = c2(0, 0) * c2(1, 1) - b_sym * b_sym;
        out.conic[3 * k] = c2(1, 1) / det;
        out.conic[3 * k + 1] = -b_sym / det;
        out.conic[3 * k + 2] = c2(0, 0) / det;

        const double mid = 0.5 * (c2(0, 0) + c2(1, 1));
        const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
        out.bin_radius[k] = cull ? keep_binr[src] : kBinSigma * std::sqrt(lmax);

        Eigen::Vector3d d = p - c0;
        const double dist = d.norm();
        d /= dist;
        out.dist[k] = dist;
        out.dir[3 * k] = d.x();
        out.dir[3 * k + 1] = d.y();
        out.dir[3 * k + 2] = d.z();
        const double* shp = sh.data() + i * 12;
        for (int ch = 0; ch < 3; ++ch) {
            const double raw = sh_channel(shp + ch * 4, d);
            out.color[3 * k + ch] = 1.0 / (1.0 + std::exp(-raw));
        }
        out.opac[k] = op[i];
    }
    return out;
}

struct TileGrid {
    int tiles_x = 0, tiles_y = 0, tile = 16;
    std::vector<std::vector<int32_t>> lists;  // sorted splat ids per tile
};

TileGrid build_tiles(const Prepared& p, int width, int height, int tile, bool cull) {
    TileGrid g;
    g.tile = tile;
    g.tiles_x = (width + tile - 1) / tile;
    g.tiles_y = (height + tile - 1) / tile;
    g.lists.assign(static_cast<size_t>(g.tiles_x) * g.tiles_y, {});
    for (size_t k = 0; k < p.size(); ++k) {
        if (!cull) {
            for (auto& l : g.lists) l.push_back(static_cast<int32_t>(k));
            continue;
        }
        const double mx = p.mean2d[2 * k], my = p.mean2d[2 * k + 1];
        const double r = p.bin_radius[k];
        int tx0 = std::max(0, static_cast<int>(std::floor((mx - r) / tile)));
        int tx1 = std::min(g.tiles_x - 1, static_cast<int>(std::floor((mx + r) / tile)));
        int ty0 = std::max(0, static_cast<int>(std::floor((my - r) / tile)));
        int ty1 = std::min(g.tiles_y - 1, static_cast<int>(std::floor((my + r) / tile)));
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                // Distance from splat center to the tile's pixel-center rect.
                const double x0 = tx * tile + 0.5, x1 = std::min((tx + 1) * tile, width) - 0.5;
                const double y0 = ty * tile + 0.5, y1 = std::min((ty + 1) * tile, height) - 0.5;
                const double dx = std::max({x0 - mx, 0.0, mx - x1});
                const double dy = std::max({y0 - my, 0.0, my - y1});
                if (dx * dx + dy * dy <= r * r) {
                    g.lists[static_cast<size_t>(ty) * g.tiles_x + tx].push_back(
                        static_cast<int32_t>(k));
                }
            }
        }
    }
    return g;
}

struct ForwardBuffers {
    std::vector<double> rgb;        // 3*H*W
    std::vector<double> alpha;      // H*W
    std::vector<double> final_t;    // H*W
    std::vector<int32_t> n_contrib; // contributions used per pixel
};

ForwardBuffers run_tiled_forward(const Prepared& p, const TileGrid& tiles, int width, int height,
                                 const RenderOptions& opts) {
    ForwardBuffers fb;
    fb.rgb.assign(static_cast<size_t>(3) * width * height, 0.0);
    fb.alpha.assign(static_cast<size_t>(width) * height, 0.0);
    fb.final_t.assign(static_cast<size_t>(width) * height, 1.0);
    fb.n_contrib.assign(static_cast<size_t>(width) * height, 0);

    const int64_t n_tiles = static_cast<int64_t>(tiles.lists.size());
    parallel_for_grain(n_tiles, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const auto& list = tiles.lists[static_cast<size_t>(t)];
            const int tx = static_cast<int>(t % tiles.tiles_x);
            const int ty = static_cast<int>(t / tiles.tiles_x);
            const int x0 = tx * tiles.tile, x1 = std::min(width, x0 + tiles.tile);
            const int y0 = ty * tiles.tile, y1 = std::min(height, y0 + tiles.tile);
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    double T = 1.0, r = 0, gcol = 0, b = 0;
                    int32_t used = 0;
                    for (int32_t k : list) {
                        const double dx = px - p.mean2d[2 * k];
                        const double dy = py - p.mean2d[2 * k + 1];
                        const double power = -0.5 * (p.conic[3 * k] * dx * dx +
                                                     2.0 * p.conic[3 * k + 1] * dx * dy +
                                                     p.conic[3 * k + 2] * dy * dy);
                        const double alpha = std::min(kAlphaClamp, p.opac[k] * std::exp(power));
                        const double T_next = T * (1.0 - alpha);
                        if (opts.early_stop && T_next < kTransmittanceStop) break;
                        const double w = alpha * T;
                        r += w * p.color[3 * k];
                        gcol += w * p.color[3 * k + 1];
                        b += w * p.color[3 * k + 2];
                        T = T_next;
                        ++used;
                    }
                    const size_t pix = static_cast<size_t>(y) * width + x;
                    fb.rgb[pix] = r + T * opts.background[0];
                    fb.rgb[static_cast<size_t>(width) * height + pix] = gcol + T * opts.background[1];
                    fb.rgb[2 * static_cast<size_t>(width) * height + pix] =
                        b + T * opts.background[2];
                    fb.alpha[pix] = 1.0 - T;
                    fb.final_t[pix] = T;
                    fb.n_contrib[pix] = used;
                }
            }
        }
    });
    return fb;
}

struct SplatGrads {
    // per sorted splat: dmean2d(2), dconic(3), dopacity(1), dcolor(3)
    std::vector<double> mean2d, conic, opac, color;
    void init(size_t n) {
        mean2d.assign(2 * n, 0.0);
        conic.assign(3 * n, 0.0);
        opac.assign(n, 0.0);
        color.assign(3 * n, 0.0);
    }
};

// Replays compositing back-to-front per pixel, accumulating per-splat grads
// into per-tile buffers that are merged in fixed tile order.
SplatGrads run_tiled_backward(const Prepared& p, const TileGrid& tiles, int width, int height,
                              const RenderOptions& opts, const ForwardBuffers& fb,
                              const std::vector<double>& g_rgb, const std::vector<double>& g_alpha) {
    SplatGrads total;
    total.init(p.size());
    const int64_t n_tiles = static_cast<int64_t>(tiles.lists.size());
    std::vector<SplatGrads> per_tile(static_cast<size_t>(n_tiles));

    parallel_for_grain(n_tiles, 1, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const auto& list = tiles.lists[static_cast<size_t>(t)];
            SplatGrads& local = per_tile[static_cast<size_t>(t)];
            local.init(list.size());
            const int tx = static_cast<int>(t % tiles.tiles_x);
            const int ty = static_cast<int>(t / tiles.tiles_x);
            const int x0 = tx * tiles.tile, x1 = std::min(width, x0 + tiles.tile);
            const int y0 = ty * tiles.tile, y1 = std::min(height, y0 + tiles.tile);
            const size_t plane = static_cast<size_t>(width) * height;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const size_t pix = static_cast<size_t>(y) * width + x;
                    const double gr[3] = {g_rgb[pix], g_rgb[plane + pix], g_rgb[2 * plane + pix]};
                    const double ga = g_alpha.empty() ? 0.0 : g_alpha[pix];
                    const int32_t used = fb.n_contrib[pix];
                    if (used == 0 &&
                        (std::abs(gr[0]) + std::abs(gr[1]) + std::abs(gr[2]) + std::abs(ga)) == 0.0)
                        continue;
                    const double px = x + 0.5, py = y + 0.5;
                    const double T_final = fb.final_t[pix];
                    // dL/dT_final from alpha output and the background term.
                    const double gT = -ga + gr[0] * opts.background[0] +
                                      gr[1] * opts.background[1] + gr[2] * opts.background[2];
                    double T_run = T_final;
                    double S[3] = {0, 0, 0};  // suffix sum of c_j * w_j
                    for (int32_t li = used - 1; li >= 0; --li) {
                        const int32_t k = list[static_cast<size_t>(li)];
                        const double dx = px - p.mean2d[2 * k];
                        const double dy = py - p.mean2d[2 * k + 1];
                        const double ca = p.conic[3 * k], cb = p.conic[3 * k + 1],
                                     cc = p.conic[3 * k + 2];
                        const double power =
                            -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy);
                        const double e = std::exp(power);
                        const double a_raw = p.opac[k] * e;
                        const double alpha = std::min(kAlphaClamp, a_raw);
                        const double one_m = 1.0 - alpha;
                        const double T_i = T_run / one_m;
                        const double w = alpha * T_i;

                        const double* col = &p.color[3 * k];
                        double dalpha = 0.0;
                        for (int ch = 0; ch < 3; ++ch) {
                            local.color[3 * li + ch] += gr[ch] * w;
                            dalpha += gr[ch] * (col[ch] * T_i - S[ch] / one_m);
                        }
                        dalpha -= gT * T_final / one_m;

                        const bool clamped = a_raw >= kAlphaClamp;
                        const double dsig = clamped ? 0.0 : dalpha * e;
                        const double dpow = clamped ? 0.0 : dalpha * a_raw;
                        local.opac[li] += dsig;
                        local.mean2d[2 * li] += dpow * (ca * dx + cb * dy);
                        local.mean2d[2 * li + 1] += dpow * (cb * dx + cc * dy);
                        local.conic[3 * li] += dpow * (-0.5 * dx * dx);
                        local.conic[3 * li + 1] += dpow * (-dx * dy);
                        local.conic[3 * li + 2] += dpow * (-0.5 * dy * dy);

                        for (int ch = 0; ch < 3; ++ch) S[ch] += col[ch] * w;
                        T_run = T_i;
                    }
                }
            }
        }
    });

    // Fixed-order merge keeps gradients independent of the thread count.
    for (int64_t t = 0; t < n_tiles; ++t) {
        const auto& list = tiles.lists[static_cast<size_t>(t)];
        const SplatGrads& local = per_tile[static_cast<size_t>(t)];
        for (size_t li = 0; li < list.size(); ++li) {
            const int32_t k = list[li];
            total.mean2d[2 * k] += local.mean2d[2 * li];
            total.mean2d[2 * k + 1] += local.mean2d[2 * li + 1];
            total.conic[3 * k] += local.conic[3 * li];
            total.conic[3 * k + 1] += local.conic[3 * li + 1];
            total.conic[3 * k + 2] += local.conic[3 * li + 2];
            total.opac[k] += local.opac[li];
            total.color[3 * k] += local.color[3 * li];
            total.color[3 * k + 1] += local.color[3 * li + 1];
            total.color[3 * k + 2] += local.color[3 * li + 2];
        }
    }
    return total;
}

}  // namespace

std::vector<Splat2D> prepare_splats(const PhysicalGaussians& g, const Camera& cam, bool cull) {
    Prepared p = prepare_internal(g, cam, cull);
    std::vector<Splat2D> out(p.size());
    for (size_t k = 0; k < p.size(); ++k) {
        Splat2D& s = out[k];
        s.index = p.index[k];
        s.mean2d = {p.mean2d[2 * k], p.mean2d[2 * k + 1]};
        const double ca = p.conic[3 * k], cb = p.conic[3 * k + 1], cc = p.conic[3 * k + 2];
        const double det = ca * cc - cb * cb;
        s.cov2d << cc / det, -cb / det, -cb / det, ca / det;
        s.depth_z = p.depth[k];
        s.opacity = p.opac[k];
        s.color = {p.color[3 * k], p.color[3 * k + 1], p.color[3 * k + 2]};
        const double mid = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
        const double d2 = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(0, 1);
        s.radius = 3.0 * std::sqrt(mid + std::sqrt(std::max(0.0, mid * mid - d2)));
    }
    return out;
}

void composite_pixel(const std::vector<Splat2D>& sorted, double px, double py,
                     const RenderOptions& opts, double rgb_out[3], double& alpha_out) {
    double T = 1.0;
    double acc[3] = {0, 0, 0};
    for (const Splat2D& s : sorted) {
        const Eigen::Vector2d d(px - s.mean2d.x(), py - s.mean2d.y());
        const Eigen::Matrix2d conic = s.cov2d.inverse();
        const double power = -0.5 * d.dot(conic * d);
        const double alpha = std::min(kAlphaClamp, s.opacity * std::exp(power));
        const double T_next = T * (1.0 - alpha);
        if (opts.early_stop && T_next < kTransmittanceStop) break;
        for (int ch = 0; ch < 3; ++ch) acc[ch] += s.color[ch] * alpha * T;
        T = T_next;
    }
    for (int ch = 0; ch < 3; ++ch) rgb_out[ch] = acc[ch] + T * opts.background[ch];
    alpha_out = 1.0 - T;
}

RenderedImage render(const PhysicalGaussians& g, const Camera& cam, const RenderOptions& opts) {
    const int W = cam.width, H = cam.height;
    Prepared prep = prepare_internal(g, cam, opts.cull);
    TileGrid tiles = build_tiles(prep, W, H, opts.tile_size, opts.cull);
    ForwardBuffers fb = run_tiled_forward(prep, tiles, W, H, opts);

    const DType dt = g.centers.defined() ? g.centers.dtype() : DType::F64;
    RenderedImage img;
    img.rgb = Array({3, H, W}, dt);
    img.alpha = Array({H, W}, dt);
    for (int64_t i = 0; i < img.rgb.numel(); ++i) img.rgb.set_value(i, fb.rgb[static_cast<size_t>(i)]);
    for (int64_t i = 0; i < img.alpha.numel(); ++i)
        img.alpha.set_value(i, fb.alpha[static_cast<size_t>(i)]);
    check_finite(img.rgb, "render");

    if (g.count() > 0 && should_record({&g.centers, &g.cov, &g.opacity, &g.sh})) {
        PhysicalGaussians saved = g;
        Camera scam = cam;
        RenderOptions sopts = opts;
        auto sprep = std::make_shared<Prepared>(std::move(prep));
        auto stiles = std::make_shared<TileGrid>(std::move(tiles));
        auto sfb = std::make_shared<ForwardBuffers>(std::move(fb));
        record_op(
            "render", {g.centers, g.cov, g.opacity, g.sh}, {&img.rgb, &img.alpha},
            [saved, scam, sopts, sprep, stiles, sfb, W, H](const std::vector<Array>& gs) {
                const Array& grgb = gs[0];
                const Array& galpha = gs[1];
                std::vector<double> g_rgb(static_cast<size_t>(3) * W * H);
                std::vector<double> g_alpha(static_cast<size_t>(W) * H);
                for (size_t i = 0; i < g_rgb.size(); ++i)
                    g_rgb[i] = grgb.value_at(static_cast<int64_t>(i));
                for (size_t i = 0; i < g_alpha.size(); ++i)
                    g_alpha[i] = galpha.value_at(static_cast<int64_t>(i));

                const Prepared& p = *sprep;
                SplatGrads sg =
                    run_tiled_backward(p, *stiles, W, H, sopts, *sfb, g_rgb, g_alpha);

                const int64_t N = saved.count();
                Array gmu = Array::zeros({N, 3}, saved.centers.dtype());
                Array gcov = Array::zeros({N, 3, 3}, saved.cov.dtype());
                Array gop = Array::zeros({N}, saved.opacity.dtype());
                Array gsh = Array::zeros({N, 3, 4}, saved.sh.dtype());

                const Eigen::Matrix3d Wm = scam.rotation.transpose();
                const Eigen::Vector3d c0 = scam.center();
                const int64_t M = static_cast<int64_t>(p.size());
                parallel_for(M, [&](int64_t lo, int64_t hi) {
                    for (int64_t k = lo; k < hi; ++k) {
                        const int64_t i = p.index[static_cast<size_t>(k)];
                        // conic -> cov2d
                        const double ca = p.conic[3 * k], cb = p.conic[3 * k + 1],
                                     cc = p.conic[3 * k + 2];
                        Eigen::Matrix2d conic;
                        conic << ca, cb, cb, cc;
                        Eigen::Matrix2d Gc;
                        Gc << sg.conic[3 * k], 0.5 * sg.conic[3 * k + 1],
                            0.5 * sg.conic[3 * k + 1], sg.conic[3 * k + 2];
                        const Eigen::Matrix2d Gcov = -conic * Gc * conic;

                        // cov2d = M Sigma M^T + reg
                        const Eigen::Vector3d pc(p.mu_cam[3 * k], p.mu_cam[3 * k + 1],
                                                 p.mu_cam[3 * k + 2]);
                        const double z = pc.z();
                        Eigen::Matrix<double, 2, 3> J;
                        J << scam.fx / z, 0, -scam.fx * pc.x() / (z * z), 0, scam.fy / z,
                            -scam.fy * pc.y() / (z * z);
                        const Eigen::Matrix<double, 2, 3> Mjw = J * Wm;
                        Eigen::Matrix3d Sg;
                        for (int r = 0; r < 3; ++r)
                            for (int c = 0; c < 3; ++c)
                                Sg(r, c) = saved.cov.value_at(i * 9 + r * 3 + c);
                        const Eigen::Matrix3d dSigma = Mjw.transpose() * Gcov * Mjw;
                        for (int r = 0; r < 3; ++r)
                            for (int c = 0; c < 3; ++c)
                                gcov.set_value(i * 9 + r * 3 + c, dSigma(r, c));

                        // dM and the jacobian entries -> camera-frame center grad
                        const Eigen::Matrix<double, 2, 3> dM = 2.0 * Gcov * Mjw * Sg;
                        const Eigen::Matrix<double, 2, 3> dJ = dM * Wm.transpose();
                        Eigen::Vector3d dpc = Eigen::Vector3d::Zero();
                        const double z2 = z * z, z3 = z2 * z;
                        dpc.x() += dJ(0, 2) * (-scam.fx / z2);
                        dpc.y() += dJ(1, 2) * (-scam.fy / z2);
                        dpc.z() += dJ(0, 0) * (-scam.fx / z2) + dJ(1, 1) * (-scam.fy / z2) +
                                   dJ(0, 2) * (2.0 * scam.fx * pc.x() / z3) +
                                   dJ(1, 2) * (2.0 * scam.fy * pc.y() / z3);
                        // mean2d path
                        const double gmx = sg.mean2d[2 * k], gmy = sg.mean2d[2 * k + 1];
                        dpc.x() += gmx * scam.fx / z;
                        dpc.y() += gmy * scam.fy / z;
                        dpc.z() += -gmx * scam.fx * pc.x() / z2 - gmy * scam.fy * pc.y() / z2;
                        Eigen::Vector3d dmu = Wm.transpose() * dpc;

                        // color path: sigmoid(SH eval) with view dir from camera center
                        const Eigen::Vector3d dirv(p.dir[3 * k], p.dir[3 * k + 1], p.dir[3 * k + 2]);
                        Eigen::Vector3d ddir = Eigen::Vector3d::Zero();
                        for (int ch = 0; ch < 3; ++ch) {
                            const double col = p.color[3 * k + ch];
                            const double dcol = sg.color[3 * k + ch] * col * (1.0 - col);
                            const double sh1 = saved.sh.value_at(i * 12 + ch * 4 + 1);
                            const double sh2 = saved.sh.value_at(i * 12 + ch * 4 + 2);
                            const double sh3 = saved.sh.value_at(i * 12 + ch * 4 + 3);
                            gsh.set_value(i * 12 + ch * 4 + 0,
                                          gsh.value_at(i * 12 + ch * 4 + 0) + dcol * kShC0);
                            gsh.set_value(i * 12 + ch * 4 + 1,
                                          gsh.value_at(i * 12 + ch * 4 + 1) + dcol * kShC1 * dirv.y());
                            gsh.set_value(i * 12 + ch * 4 + 2,
                                          gsh.value_at(i * 12 + ch * 4 + 2) + dcol * kShC1 * dirv.z());
                            gsh.set_value(i * 12 + ch * 4 + 3,
                                          gsh.value_at(i * 12 + ch * 4 + 3) + dcol * kShC1 * dirv.x());
                            ddir.x() += dcol * kShC1 * sh3;
                            ddir.y() += dcol * kShC1 * sh1;
                            ddir.z() += dcol * kShC1 * sh2;
                        }
                        dmu += (ddir - dirv * dirv.dot(ddir)) / p.dist[static_cast<size_t>(k)];

                        gmu.set_value(i * 3 + 0, dmu.x());
                        gmu.set_value(i * 3 + 1, dmu.y());
                        gmu.set_value(i * 3 + 2, dmu.z());
                        gop.set_value(i, sg.opac[static_cast<size_t>(k)]);
                    }
                });
                return std::vector<Array>{gmu, gcov, gop, gsh};
            });
    }
    return img;
}

RenderedImage render_oracle(const PhysicalGaussians& g, const Camera& cam,
                            const std::array<double, 3>& background) {
    RenderOptions opts;
    opts.background = background;
    opts.cull = false;
    opts.early_stop = false;
    std::vector<Splat2D> sorted = prepare_splats(g, cam, /*cull=*/false);
    const int W = cam.width, H = cam.height;
    const DType dt = g.centers.defined() ? g.centers.dtype() : DType::F64;
    RenderedImage img;
    img.rgb = Array({3, H, W}, dt);
    img.alpha = Array({H, W}, dt);
    parallel_for(static_cast<int64_t>(H), [&](int64_t lo, int64_t hi) {
        for (int64_t y = lo; y < hi; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                double rgb[3], a;
                composite_pixel(sorted, x + 0.5, y + 0.5, opts, rgb, a);
                for (int ch = 0; ch < 3; ++ch)
                    img.rgb.set_value((ch * H + y) * W + x, rgb[ch]);
                img.alpha.set_value(y * W + x, a);
            }
        }
    });
    return img;
}

}  // namespace leansplat
