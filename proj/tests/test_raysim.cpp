// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0

#include "catoptra/raysim.hpp"

#include "catoptra/metrics.hpp"
#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace catoptra;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Scene sphereScene(double radius = 0.28, const Vec3& center = Vec3::Zero()) {
    Scene scene;
    ScenePrimitive p;
    p.shape = Sphere{center, radius};
    p.material.albedo = Vec3(0.8, 0.5, 0.3);
    p.material.checker = true;
    p.material.albedo2 = Vec3(0.2, 0.35, 0.6);
    p.material.checkerScale = 0.09;
    scene.primitives.push_back(p);
    return scene;
}

CameraPose lookDownFrom(double z) {
    CameraPose pose;
    pose.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    pose.translation = -pose.rotation * Vec3(0, 0, z);
    return pose;
}

double pointToLineDistance(const Vec3& p, const Vec3& linePoint, const Vec3& lineDir) {
    Vec3 d = lineDir.normalized();
    Vec3 v = p - linePoint;
    return (v - d.dot(v) * d).norm();
}

}  // namespace

TEST_CASE("envelope oracle reproduces the closed-form volume") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    MeasuredEnvelope env = envelopeOracle(b, 4000);
    CHECK_THAT(radToDeg(env.volume.theta), WithinAbs(50.0, 0.01));
    CHECK_THAT(radToDeg(env.volume.theta), WithinAbs(50.0, 1e-7));
    // Edge localization is limited by the tracer's inclusive boundary slack
    // (1e-9 of h1), well inside the 1e-6 acceptance tolerance.
    CHECK_THAT(env.volume.baseLength, WithinRel(baseLength(b), 5e-8));
    CHECK_THAT(env.volume.beamWidth, WithinRel(beamWidth(b), 5e-8));
    CHECK_THAT(env.volume.height, WithinRel(beamWidth(b) / std::sin(apexAngle(b)), 5e-8));
    // Placement centers the measured rhombus at the world origin.
    CHECK_THAT(env.centerZ, WithinAbs(0.0, 1e-9));

    // 20 random feasible configs (the acceptance suite runs 100).
    std::mt19937_64 rng(901);
    for (int i = 0; i < 20; ++i) {
        MirrorPairConfig c = testutil::randomFeasibleConfig(rng);
        MeasuredEnvelope e = envelopeOracle(c, 2000);
        CHECK_THAT(radToDeg(e.volume.theta), WithinAbs(radToDeg(apexAngle(c)), 0.01));
        CHECK_THAT(e.volume.baseLength, WithinRel(baseLength(c), 1e-6));
    }

    // dAlpha -> 0 collapses the apex angle.
    MirrorPairConfig tiny = makeConfig(degToRad(60), degToRad(60.01), 1.0, 0.05);
    CHECK(radToDeg(envelopeOracle(tiny, 2000).volume.theta) < 0.05);
}

TEST_CASE("beam width is conserved across the two reflections") {
    std::mt19937_64 rng(902);
    for (int i = 0; i < 10; ++i) {
        MirrorPairConfig c = testutil::randomFeasibleConfig(rng);
        MeasuredEnvelope e = envelopeOracle(c, 2000);
        double inputWidth = e.apertureOuter - e.apertureInner;
        CHECK_THAT(e.volume.beamWidth, WithinAbs(inputWidth, 1e-9 * c.h1));
    }
}

TEST_CASE("reflection preserves the incidence angle at every bounce") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    PlacedLens lens = placeLens(b);
    Scene empty;
    std::mt19937_64 rng(903);
    int traced = 0;
    for (int i = 0; i < 200; ++i) {
        double r = testutil::uniform(rng, lens.beamInnerRadius + 1e-6,
                                     lens.beamOuterRadius - 1e-6);
        double tangential = testutil::uniform(rng, -0.2, 0.2) * r;
        HitRecord rec = traceRay(lens, empty, Vec3(r, tangential, lens.cameraZ),
                                 Vec3(0, 0, -1));
        if (!rec.pathComplete) continue;  // tangential offset may leave the facet
        ++traced;
        REQUIRE(rec.bounces.size() == 2);
        CHECK_THAT(rec.bounces[0].incidenceAngle, WithinAbs(b.alpha1, 1e-12));
        CHECK_THAT(rec.bounces[1].incidenceAngle,
                   WithinAbs(std::abs(2 * b.alpha1 - b.alpha2), 1e-12));

        // Exit angle equals incidence angle against each mirror normal.
        const MirrorPlane& m2 = lens.facets[rec.bounces[1].facetIndex].plane;
        Vec3 incoming = (rec.bounces[1].point - rec.bounces[0].point).normalized();
        double inAngle = std::acos(std::abs(m2.normal.dot(incoming)));
        double outAngle = std::acos(std::abs(m2.normal.dot(rec.exitDirection)));
        CHECK_THAT(inAngle, WithinAbs(outAngle, 1e-12));
    }
    CHECK(traced > 100);
}

TEST_CASE("beam-center ray exits at 2 dAlpha from vertical toward the volume") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    PlacedLens lens = placeLens(b);
    Scene empty;
    double rMid = 0.5 * (lens.beamInnerRadius + lens.beamOuterRadius);
    HitRecord rec = traceRay(lens, empty, Vec3(rMid, 0, lens.cameraZ), Vec3(0, 0, -1));
    REQUIRE(rec.pathComplete);
    double fromVertical = std::acos(rec.exitDirection.dot(Vec3(0, 0, -1)));
    CHECK_THAT(radToDeg(fromVertical), WithinAbs(50.0, 1e-9));
    CHECK(rec.exitDirection.x() < 0);  // inward

    // Aimed inside the inner opening: no M1 bounce, a miss.
    HitRecord miss = traceRay(lens, empty, Vec3(0.5 * b.d1, 0, lens.cameraZ), Vec3(0, 0, -1));
    CHECK(miss.status == PathStatus::Miss);
    CHECK_FALSE(miss.pathComplete);
}

TEST_CASE("condition (iii) boundary: extreme ray grazes M1's bottom edge") {
    // d2 exactly at the minimum separation.
    MirrorPairConfig cfg = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05, 1.05, 1.0);
    PlacedLens lens = placeLens(cfg);
    Scene empty;

    // The leftmost beam ray enters at M1's upper edge.
    HitRecord rec = traceRay(lens, empty, Vec3(cfg.d1, 0, lens.cameraZ), Vec3(0, 0, -1));
    REQUIRE(rec.pathComplete);
    CHECK(rec.status != PathStatus::InterReflection);
    Vec3 bottomEdge(lens.beamOuterRadius, 0.0, lens.topZ - cfg.h1);
    CHECK(pointToLineDistance(bottomEdge, rec.bounces[1].point, rec.exitDirection) <
          1e-9 * cfg.h1);

    // Full-aperture scan at the boundary: no inter-reflection flags.
    int flags = 0;
    for (int i = 0; i <= 4000; ++i) {
        double r = lens.beamInnerRadius +
                   (lens.beamOuterRadius - lens.beamInnerRadius) * i / 4000.0;
        HitRecord s = traceRay(lens, empty, Vec3(r, 0, lens.cameraZ), Vec3(0, 0, -1));
        if (s.status == PathStatus::InterReflection) ++flags;
    }
    CHECK(flags == 0);

    // Violating (iii) by 1 percent produces flagged rays.
    MirrorPairConfig bad = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05, 1.05, 0.99);
    PlacedLens badLens = placeLens(bad, 8, 0.0, /*validate=*/false);
    int badFlags = 0;
    for (int i = 0; i <= 4000; ++i) {
        double r = badLens.beamInnerRadius +
                   (badLens.beamOuterRadius - badLens.beamInnerRadius) * i / 4000.0;
        HitRecord s = traceRay(badLens, empty, Vec3(r, 0, badLens.cameraZ), Vec3(0, 0, -1));
        if (s.status == PathStatus::InterReflection) ++badFlags;
    }
    CHECK(badFlags >= 1);
}

TEST_CASE("unfolded pixel rays coincide with physically traced paths") {
    std::mt19937_64 rng(904);
    Scene scene = sphereScene(0.2);
    for (int i = 0; i < 100; ++i) {
        MirrorPairConfig cfg = testutil::randomFeasibleConfig(rng);
        PlacedLens lens = placeLens(cfg);
        Intrinsics k = Intrinsics::orthographic(257, 257, 2.1 * lens.beamOuterRadius);
        CameraPose physical = physicalCamera(lens);
        VirtualCameraRig rig = buildRig(lens, physical, k);

        double rMid = 0.5 * (lens.beamInnerRadius + lens.beamOuterRadius);
        HitRecord rec = traceRay(lens, scene, Vec3(rMid, 0, lens.cameraZ), Vec3(0, 0, -1));
        REQUIRE(rec.pathComplete);

        Vec3 px = projectPoint(physical, k, Vec3(rMid, 0, lens.cameraZ));
        PixelRay virtualRay = pixelRay(rig.cameras[0], k, px.x(), px.y());
        double scale = cfg.h1 + lens.beamOuterRadius;

        CHECK_THAT((virtualRay.direction - rec.exitDirection).norm(), WithinAbs(0.0, 1e-9));
        CHECK(pointToLineDistance(virtualRay.origin, rec.bounces[1].point, rec.exitDirection) <
              1e-9 * scale);

        // Depth along the unfolded ray equals the physical path length.
        if (rec.status == PathStatus::SceneHit) {
            double virtualDepth = virtualRay.direction.dot(rec.point - virtualRay.origin);
            CHECK_THAT(virtualDepth, WithinRel(rec.depth, 1e-9));
        }
    }
}

TEST_CASE("direct renders: sphere silhouette is a disc, box depth is the near face") {
    Scene scene = sphereScene(0.25);
    Intrinsics k = Intrinsics::orthographic(200, 200, 1.0);
    CameraPose cam = lookDownFrom(2.0);
    RenderedView view = renderView(scene, cam, k);

    int area = 0;
    for (auto s : view.silhouette.data) area += s;
    double expected = kPi * 0.25 * 0.25 / (k.focalOrScale * k.focalOrScale);
    CHECK_THAT(area, WithinRel(expected, 0.01));
    // Pixel (100,100) sits half a pixel off-axis; compare with the analytic
    // sphere depth along that exact ray.
    double rho = std::hypot((100 - 99.5) * k.focalOrScale, (100 - 99.5) * k.focalOrScale);
    double analytic = 2.0 - std::sqrt(0.25 * 0.25 - rho * rho);
    CHECK_THAT(view.depth.at(100, 100), WithinRel(analytic, 1e-6));
    // Validity is full for direct renders and silhouette stays inside it.
    bool allValid = true, depthConsistent = true;
    for (std::size_t i = 0; i < view.validity.data.size(); ++i) {
        allValid = allValid && view.validity.data[i] == 1;
        if (view.silhouette.data[i]) depthConsistent &= std::isfinite(view.depth.data[i]);
    }
    CHECK(allValid);
    CHECK(depthConsistent);

    Scene boxScene;
    ScenePrimitive bp;
    bp.shape = BoxPrim{Vec3(-0.3, -0.2, -0.25), Vec3(0.3, 0.2, 0.25)};
    boxScene.primitives.push_back(bp);
    RenderedView bv = renderView(boxScene, cam, k);
    CHECK_THAT(bv.depth.at(100, 100), WithinRel(2.0 - 0.25, 1e-9));
}

TEST_CASE("mesh loader parses, rejects, and optionally triangulates") {
    testutil::ScratchDir dir("catoptra-mesh");

    std::string cube =
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
        "f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\n"
        "f 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n";
    writeTextAtomic(dir.path / "cube.obj", cube);
    MeshPrim mesh = loadMesh(dir.path / "cube.obj");
    CHECK(mesh.data->vertices.size() == 8);
    CHECK(mesh.data->faces.size() == 12);

    std::string quadCube =
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n"
        "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";
    writeTextAtomic(dir.path / "quad.obj", quadCube);
    CHECK_THROWS_AS(loadMesh(dir.path / "quad.obj"), NonTriangleFace);
    MeshPrim tri = loadMesh(dir.path / "quad.obj", true);
    CHECK(tri.data->faces.size() == 12);

    writeTextAtomic(dir.path / "bad.obj", "v 0 0 0\nv 1 2\nf 1 2 3\n");
    try {
        loadMesh(dir.path / "bad.obj");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
    }

    writeTextAtomic(dir.path / "badstmt.obj", "v 0 0 0\nsplinesurface 1 2 3\n");
    CHECK_THROWS_AS(loadMesh(dir.path / "badstmt.obj"), ParseError);

    writeTextAtomic(dir.path / "range.obj", "v 0 0 0\nv 1 0 0\nf 1 2 9\n");
    CHECK_THROWS_AS(loadMesh(dir.path / "range.obj"), ParseError);
}

TEST_CASE("bvh traversal matches brute-force triangle intersection exactly") {
    std::mt19937_64 rng(905);
    auto mesh = std::make_shared<MeshData>();
    for (int i = 0; i < 600; ++i) {
        Vec3 base(testutil::uniform(rng, -1, 1), testutil::uniform(rng, -1, 1),
                  testutil::uniform(rng, -1, 1));
        int v0 = static_cast<int>(mesh->vertices.size());
        mesh->vertices.push_back(base);
        mesh->vertices.push_back(base + 0.2 * Vec3(testutil::uniform(rng, -1, 1),
                                                   testutil::uniform(rng, -1, 1),
                                                   testutil::uniform(rng, -1, 1)));
        mesh->vertices.push_back(base + 0.2 * Vec3(testutil::uniform(rng, -1, 1),
                                                   testutil::uniform(rng, -1, 1),
                                                   testutil::uniform(rng, -1, 1)));
        mesh->faces.push_back({v0, v0 + 1, v0 + 2});
    }
    mesh->buildBvh();

    Scene scene;
    ScenePrimitive prim;
    prim.shape = MeshPrim{mesh};
    scene.primitives.push_back(prim);

    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
        Vec3 o(testutil::uniform(rng, -2, 2), testutil::uniform(rng, -2, 2), 2.5);
        Vec3 d = Vec3(testutil::uniform(rng, -0.5, 0.5), testutil::uniform(rng, -0.5, 0.5),
                      -1.0).normalized();
        auto fast = intersectScene(scene, o, d);

        // Exhaustive reference over every face with the same primitive test.
        PrimitiveHit slow;
        for (std::size_t f = 0; f < mesh->faces.size(); ++f) {
            double t;
            Vec3 n;
            const auto& face = mesh->faces[f];
            if (detail::intersectTriangle(mesh->vertices[face[0]], mesh->vertices[face[1]],
                                          mesh->vertices[face[2]], o, d, 1e-9, t, n) &&
                t < slow.t) {
                slow.t = t;
                slow.normal = n;
                slow.triangleId = static_cast<int>(f);
            }
        }
        if (slow.triangleId < 0) {
            CHECK_FALSE(fast.has_value());
        } else {
            REQUIRE(fast.has_value());
            CHECK(fast->t == slow.t);
            CHECK(fast->triangleId == slow.triangleId);
            ++hits;
        }
    }
    CHECK(hits > 100);  // the sample actually exercised the structure
}

TEST_CASE("snapshot mosaic: empty scene shows backdrop, sphere views are symmetric") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    PlacedLens lens = placeLens(b);
    Intrinsics mosaicK = Intrinsics::orthographic(600, 600, 2.08 * lens.beamOuterRadius);
    CameraPose physical = physicalCamera(lens);

    Scene empty;
    MosaicImage blank = renderSnapshot(lens, empty, physical, mosaicK);
    CHECK(blank.interReflections == 0);
    int validCount = 0;
    bool backdropOk = true, sentinelOk = true, depthClear = true;
    for (int y = 0; y < 600; ++y)
        for (int x = 0; x < 600; ++x)
            if (blank.validity.at(x, y)) {
                ++validCount;
                for (int c = 0; c < 3; ++c)
                    backdropOk &= std::abs(blank.color.at(x, y, c) - empty.backdrop[c]) < 1e-6;
                depthClear &= !std::isfinite(blank.depth.at(x, y));
            } else {
                sentinelOk &= blank.color.at(x, y, 0) == kSentinelColor[0];
            }
    CHECK(validCount > 10000);
    CHECK(backdropOk);
    CHECK(sentinelOk);
    CHECK(depthClear);

    // Centered sphere: eight sub-views with silhouette areas equal to 0.2%.
    Scene scene = sphereScene(0.12 * lens.volume.baseLength);
    MosaicImage mosaic = renderSnapshot(lens, scene, physical, mosaicK);
    MaskSet masks = makeMaskSet(mosaic, 8);
    std::vector<int> areas(8, 0);
    for (int id = 0; id < 8; ++id)
        for (auto v : masks.foregroundMasks[id].data) areas[id] += v;
    int minA = *std::min_element(areas.begin(), areas.end());
    int maxA = *std::max_element(areas.begin(), areas.end());
    CHECK(minA > 0);
    CHECK((maxA - minA) <= 0.002 * maxA + 2.0);

    // Every valid pixel carries exactly one sub-view id.
    int idCount = 0;
    for (auto id : mosaic.multiViewMask.data)
        if (id >= 0) ++idCount;
    CHECK(idCount == validCount);
}

TEST_CASE("mosaic sub-views re-projected match direct virtual renders") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    PlacedLens lens = placeLens(b);
    Intrinsics mosaicK = Intrinsics::orthographic(720, 720, 2.08 * lens.beamOuterRadius);
    CameraPose physical = physicalCamera(lens);
    VirtualCameraRig unfolded = buildRig(lens, physical, mosaicK);

    double beamWidthWorld = lens.beamOuterRadius - lens.beamInnerRadius;
    Intrinsics targetK = Intrinsics::orthographic(160, 160, 1.15 * beamWidthWorld);
    VirtualCameraRig reference = referenceRig(unfolded, targetK);

    Scene scene = sphereScene(0.3 * beamWidthWorld, Vec3(0.05, -0.03, 0.02));
    RenderOptions opts;
    opts.supersample = 2;
    MosaicImage mosaic = renderSnapshot(lens, scene, physical, mosaicK, opts);

    RenderOptions directOpts;
    directOpts.supersample = 3;
    for (int pairId = 0; pairId < 8; ++pairId) {
        RenderedView warped =
            extractReferenceView(mosaic, unfolded, mosaicK, pairId, reference, 3);
        RenderedView direct = renderView(scene, reference.cameras[pairId], targetK, directOpts);

        ImageU8 interior = erode(warped.validity, 2);
        int n = 0;
        for (auto v : interior.data) n += v;
        REQUIRE(n > 2000);
        INFO("pair " << pairId);
        CHECK(psnr(warped.color, direct.color, &interior) > 45.0);

        // Depth maps agree on the shared silhouette interior.
        ImageU8 depthMask(targetK.width, targetK.height, 1, 0);
        for (int y = 0; y < targetK.height; ++y)
            for (int x = 0; x < targetK.width; ++x)
                depthMask.at(x, y) = interior.at(x, y) && warped.silhouette.at(x, y) &&
                                     direct.silhouette.at(x, y);
        ImageU8 depthInterior = erode(depthMask, 2);
        double worst = 0;
        int counted = 0;
        for (int y = 0; y < targetK.height; ++y)
            for (int x = 0; x < targetK.width; ++x)
                if (depthInterior.at(x, y)) {
                    double rel = std::abs(static_cast<double>(warped.depth.at(x, y)) -
                                          direct.depth.at(x, y)) /
                                 direct.depth.at(x, y);
                    worst = std::max(worst, rel);
                    ++counted;
                }
        REQUIRE(counted > 500);
        CHECK(worst < 1e-2);
    }
}

TEST_CASE("held-out ring poses are evenly spaced and skip reference azimuths") {
    MirrorPairConfig b = makeConfig(degToRad(60), degToRad(85), 1.0, 0.05);
    PlacedLens lens = placeLens(b);
    Intrinsics k = Intrinsics::orthographic(64, 64, 1.0);
    VirtualCameraRig reference = referenceRig(buildRig(lens, physicalCamera(lens), k), k);
    auto poses = heldOutPoses(reference.cameras[0], 24);
    REQUIRE(poses.size() == 24);
    auto azimuth = [](const CameraPose& p) {
        Vec3 f = p.forward();
        return std::atan2(f.y(), f.x());
    };
    for (int i = 0; i + 1 < 24; ++i) {
        double da = std::remainder(azimuth(poses[i + 1]) - azimuth(poses[i]), 2 * kPi);
        CHECK_THAT(radToDeg(std::abs(da)), WithinAbs(15.0, 1e-9));
    }
    // Half-step offset keeps held-out poses off the reference azimuths.
    double d0 = std::remainder(azimuth(poses[0]) - azimuth(reference.cameras[0]), 2 * kPi);
    CHECK_THAT(radToDeg(std::abs(d0)), WithinAbs(7.5, 1e-9));
}

TEST_CASE("scene json loads primitives and rejects unknown keys") {
    testutil::ScratchDir dir("catoptra-scene");
    std::filesystem::copy_file(std::filesystem::path(SCENES_DIR) / "lprism.obj",
                               dir.path / "lprism.obj");
    nlohmann::json j = {
        {"version", 1},
        {"backdrop", {0.1, 0.1, 0.1}},
        {"light", {{"direction", {0, 0, -1}}, {"ambient", 0.5}}},
        {"primitives",
         {{{"kind", "sphere"}, {"center", {0, 0, 0}}, {"radius", 0.2}},
          {{"kind", "box"}, {"min", {-1, -1, -1}}, {"max", {1, 1, 1}}},
          {{"kind", "mesh"}, {"path", "lprism.obj"}, {"scale", 0.25}}}},
    };
    writeTextAtomic(dir.path / "scene.json", j.dump());
    Scene scene = loadScene(dir.path / "scene.json");
    CHECK(scene.primitives.size() == 3);
    CHECK(scene.ambient == 0.5);

    nlohmann::json bad = j;
    bad["primitives"][0]["wobble"] = 3;
    writeTextAtomic(dir.path / "bad.json", bad.dump());
    CHECK_THROWS_AS(loadScene(dir.path / "bad.json"), ParseError);

    nlohmann::json badKind = j;
    badKind["primitives"][0]["kind"] = "torus";
    writeTextAtomic(dir.path / "badkind.json", badKind.dump());
    CHECK_THROWS_AS(loadScene(dir.path / "badkind.json"), ParseError);
}
