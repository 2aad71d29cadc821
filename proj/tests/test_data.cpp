#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "leansplat/data.hpp"
#include "leansplat/metrics.hpp"
#include "leansplat/renderer.hpp"

using namespace leansplat;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("data");

TEST_CASE("scene generation is deterministic per seed") {
    SceneSpec spec;
    spec.seed = 123;
    spec.n_views = 4;
    spec.resolution = 24;
    spec.n_gaussians = 10;
    GeneratedScene a = generate_scene(spec, 0);
    GeneratedScene b = generate_scene(spec, 0);
    CHECK(a.ground_truth.centers.to_vector() == b.ground_truth.centers.to_vector());
    for (size_t v = 0; v < a.object.views.size(); ++v) {
        CHECK(a.object.views[v].image.to_vector() == b.object.views[v].image.to_vector());
    }
    // Different object index gives a different scene.
    GeneratedScene c = generate_scene(spec, 1);
    CHECK(a.ground_truth.centers.to_vector() != c.ground_truth.centers.to_vector());
}

TEST_CASE("minimal two-view rig works") {
    SceneSpec spec;
    spec.n_views = 2;
    spec.resolution = 16;
    spec.n_gaussians = 4;
    GeneratedScene s = generate_scene(spec, 0);
    CHECK(s.object.views.size() == 2);
}

TEST_CASE("rendered views evaluated against themselves give the PSNR infinity sentinel") {
    SceneSpec spec;
    spec.n_views = 3;
    spec.resolution = 16;
    spec.n_gaussians = 6;
    GeneratedScene s = generate_scene(spec, 0);
    for (const View& v : s.object.views) {
        CHECK(std::isinf(psnr(v.image, v.image)));
    }
}

TEST_CASE("cameras look at the origin") {
    SceneSpec spec;
    spec.seed = 7;
    spec.n_views = 10;
    spec.resolution = 32;
    spec.n_gaussians = 16;
    GeneratedScene s = generate_scene(spec, 0);
    // Projected centroid of the scene's gaussian centers stays within 2 px
    // of the principal point.
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (int i = 0; i < spec.n_gaussians; ++i) {
        centroid += Eigen::Vector3d(s.ground_truth.centers.value_at(i * 3),
                                    s.ground_truth.centers.value_at(i * 3 + 1),
                                    s.ground_truth.centers.value_at(i * 3 + 2)) /
                    spec.n_gaussians;
    }
    Array mu = Array::from({1, 3}, {centroid.x(), centroid.y(), centroid.z()});
    for (const View& v : s.object.views) {
        auto [pts, depth] = project_centers(v.camera, mu);
        CHECK(std::abs(pts.value_at(0) - v.camera.cx) < 2.0);
        CHECK(std::abs(pts.value_at(1) - v.camera.cy) < 2.0);
    }
}

TEST_CASE("srn export / load round trip") {
    SceneSpec spec;
    spec.seed = 99;
    spec.n_objects = 2;
    spec.n_views = 3;
    spec.resolution = 16;
    spec.n_gaussians = 5;
    GeneratedDataset gen = generate_dataset(spec);

    fs::path dir = fs::temp_directory_path() / "leansplat_srn_test";
    fs::remove_all(dir);
    export_srn(dir.string(), gen);

    Dataset loaded = load_srn(dir.string());
    REQUIRE(loaded.objects.size() == 2);
    REQUIRE(loaded.objects[0].views.size() == 3);
    CHECK(loaded.objects[0].views[1].index == 1);

    // Poses round trip to 1e-7.
    for (size_t o = 0; o < loaded.objects.size(); ++o) {
        for (size_t v = 0; v < loaded.objects[o].views.size(); ++v) {
            const Eigen::Matrix4d a = gen.dataset.objects[o].views[v].camera.pose_matrix();
            const Eigen::Matrix4d b = loaded.objects[o].views[v].camera.pose_matrix();
            CHECK((a - b).norm() < 1e-7);
        }
    }

    // Images round trip bit-exactly through a re-export.
    fs::path dir2 = fs::temp_directory_path() / "leansplat_srn_test2";
    fs::remove_all(dir2);
    GeneratedDataset reexport;
    reexport.dataset = loaded;
    export_srn(dir2.string(), reexport);
    for (const auto& obj : loaded.objects) {
        for (const auto& v : obj.views) {
            std::ostringstream name;
            name << std::setw(6) << std::setfill('0') << v.index << ".png";
            std::ifstream f1(dir / obj.name / "rgb" / name.str(), std::ios::binary);
            std::ifstream f2(dir2 / obj.name / "rgb" / name.str(), std::ios::binary);
            std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
            std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
            CHECK(b1 == b2);
            CHECK(!b1.empty());
        }
    }

    // Ground-truth gaussians round trip.
    PhysicalGaussians gt = load_gaussians_txt((dir / "obj_0" / "gt_gaussians.txt").string());
    CHECK(gt.centers.to_vector() == gen.ground_truth[0].centers.to_vector());

    // Malformed pose file: the error names the file.
    {
        std::ofstream bad(dir / "obj_0" / "pose" / "000001.txt");
        bad << "not a pose";
    }
    try {
        load_srn(dir.string());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("000001.txt") != std::string::npos);
    }

    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("scene spec file parsing") {
    fs::path p = fs::temp_directory_path() / "leansplat_spec test.txt";
    {
        std::ofstream f(p);
        f << "# demo spec\nseed = 5\nobjects = 2\nviews = 4\ngaussians = 9\nresolution = 16\n";
    }
    SceneSpec s = load_scene_spec(p.string());
    CHECK(s.seed == 5);
    CHECK(s.n_objects == 2);
    CHECK(s.n_views == 4);

    {
        std::ofstream f(p);
        f << "bogus_key = 1\n";
    }
    CHECK_THROWS_AS(load_scene_spec(p.string()), DataError);
    fs::remove(p);
}

TEST_SUITE_END();
