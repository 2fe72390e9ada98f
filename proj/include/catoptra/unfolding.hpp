// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Maps mirror pairs to virtual cameras. placeLens() instantiates the finite
// mirror facets of the two nested pyramids in world coordinates; buildRig()
// folds the physical camera across each pair to obtain the virtual ring.
//
// World frame: origin at the viewing-volume center, +z up, the physical
// camera above the mirrors looking straight down. Camera convention is
// world-to-camera with rows (right, down, forward); pixel u = x/s + cx grows
// right, v = y/s + cy grows down, depth is the camera-z coordinate, i.e. the
// distance from the sensor plane along the viewing axis.

#include "catoptra/common.hpp"
#include "catoptra/imaging.hpp"
#include "catoptra/lens_geometry.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <vector>

namespace catoptra {

enum class CameraModel { Orthographic, Pinhole };

struct Intrinsics {
    CameraModel model = CameraModel::Orthographic;
    double focalOrScale = 1.0;  // orthographic: world units per pixel; pinhole: focal in px
    Vec2 principalPoint = Vec2::Zero();
    int width = 0;
    int height = 0;

    static Intrinsics orthographic(int w, int h, double worldWidth) {
        Intrinsics k;
        k.model = CameraModel::Orthographic;
        k.width = w;
        k.height = h;
        k.focalOrScale = worldWidth / w;
        k.principalPoint = Vec2((w - 1) / 2.0, (h - 1) / 2.0);
        return k;
    }
};

struct CameraPose {
    Mat3 rotation = Mat3::Identity();  // world-to-camera
    Vec3 translation = Vec3::Zero();
    bool leftHanded = false;           // true after an odd number of reflections

    Vec3 position() const { return -rotation.transpose() * translation; }
    Vec3 forward() const { return rotation.row(2).transpose(); }
    Vec3 toCamera(const Vec3& x) const { return rotation * x + translation; }
    Vec3 toWorld(const Vec3& c) const { return rotation.transpose() * (c - translation); }
};

struct PixelRay {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::Zero();
};

// Projects a world point; returns pixel coordinates and depth. For the
// pinhole model the point must be in front of the camera.
inline Vec3 projectPoint(const CameraPose& pose, const Intrinsics& k, const Vec3& x) {
    Vec3 c = pose.toCamera(x);
    if (k.model == CameraModel::Orthographic)
        return {c.x() / k.focalOrScale + k.principalPoint.x(),
                c.y() / k.focalOrScale + k.principalPoint.y(), c.z()};
    if (c.z() <= 0) throw BehindCamera("point projects behind the pinhole camera");
    return {k.focalOrScale * c.x() / c.z() + k.principalPoint.x(),
            k.focalOrScale * c.y() / c.z() + k.principalPoint.y(), c.z()};
}

// Ray through pixel (u, v); the origin lies on the sensor plane (orthographic)
// or at the camera center (pinhole), so hit parameter t equals depth for
// orthographic cameras.
inline PixelRay pixelRay(const CameraPose& pose, const Intrinsics& k, double u, double v) {
    PixelRay r;
    if (k.model == CameraModel::Orthographic) {
        Vec3 sensor((u - k.principalPoint.x()) * k.focalOrScale,
                    (v - k.principalPoint.y()) * k.focalOrScale, 0.0);
        r.origin = pose.toWorld(sensor);
        r.direction = pose.forward();
    } else {
        r.origin = pose.position();
        Vec3 d((u - k.principalPoint.x()) / k.focalOrScale,
               (v - k.principalPoint.y()) / k.focalOrScale, 1.0);
        r.direction = (pose.rotation.transpose() * d).normalized();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Mirror facets
// ---------------------------------------------------------------------------

struct MirrorPlane {
    Vec3 normal = Vec3::UnitZ();            // unit, reflective side (faces incoming rays)
    double offset = 0;                      // plane {x : n.x = offset}
    std::array<Vec3, 4> corners{};          // finite extent, coplanar

    Vec3 reflectPoint(const Vec3& x) const { return x - 2.0 * (normal.dot(x) - offset) * normal; }
    Vec3 reflectDirection(const Vec3& d) const { return d - 2.0 * normal.dot(d) * normal; }
    Mat3 householder() const { return Mat3::Identity() - 2.0 * normal * normal.transpose(); }
};

struct MirrorFacet {
    MirrorPlane plane;
    int pairId = 0;
    int mirrorIndex = 0;  // 0 = inner M1, 1 = outer M2
};

// One mirror assembly placed in the world frame. The cross-section profile
// follows the construction used to derive condition (iii): M2's upper edge
// lies on the ray reflected off M1's upper edge, so the pair intercepts the
// whole beam with no dead mirror above it.
struct PlacedLens {
    MirrorPairConfig config;
    int nPairs = 8;
    double azimuthOffset = 0;
    std::vector<MirrorFacet> facets;

    double beamInnerRadius = 0;   // d1
    double beamOuterRadius = 0;   // d1 + w
    double topZ = 0;              // world z of M1's upper edge
    double cameraZ = 0;           // default physical-camera height
    double assemblyRadius = 0;    // radial extent of the outer pyramid corners
    ViewingVolume volume;         // centered at the world origin

    double pairAzimuth(int pairId) const {
        return azimuthOffset + pairId * (2.0 * kPi / nPairs);
    }
    // Direction of the beam leaving pair k, at 2*dAlpha from vertical.
    Vec3 outgoingDirection(int pairId) const {
        double twoDelta = 2.0 * config.deltaAlpha();
        double phi = pairAzimuth(pairId);
        return {-std::sin(twoDelta) * std::cos(phi), -std::sin(twoDelta) * std::sin(phi),
                -std::cos(twoDelta)};
    }
};

inline PlacedLens placeLens(const MirrorPairConfig& cfg, int nPairs = 8,
                            double azimuthOffset = 0, bool validate = true) {
    if (nPairs < 3) throw InfeasibleDesign("lens needs at least 3 mirror pairs");
    requireOrdering(cfg);
    if (validate && !checkConditions(cfg).allPass())
        throw ConditionViolation("mirror pair fails feasibility conditions; run `check` "
                                 "for the per-condition margins");

    const double a1 = cfg.alpha1, a2 = cfg.alpha2;
    const double w = cfg.h1 / std::tan(a1);
    const double twoDelta = 2.0 * cfg.deltaAlpha();
    const double cot2a1 = 1.0 / std::tan(2.0 * a1);

    // Cross-section profile in the (r, z) plane with M1's upper edge at z = 0.
    const Vec2 A(cfg.d1, 0.0);
    const Vec2 B(cfg.d1 + w, -cfg.h1);
    const Vec2 C(cfg.d2, (cfg.d2 - cfg.d1) * cot2a1);
    const Vec2 D(cfg.d2 + cfg.h2 / std::tan(a2), C.y() - cfg.h2);

    // Extreme outgoing offsets locate the viewing-volume center on the axis.
    const Vec2 m1Dir(std::sin(2.0 * a1), std::cos(2.0 * a1));   // beam after M1
    const Vec2 m2Dir(std::cos(a2), -std::sin(a2));              // along M2 downward
    // Intersection of the B-ray with M2's line: B + t*m1Dir = C + s*m2Dir.
    {
        Mat2 M;
        M << m1Dir.x(), -m2Dir.x(), m1Dir.y(), -m2Dir.y();
        Vec2 ts = M.inverse() * (C - B);
        const Vec2 C2 = B + ts.x() * m1Dir;
        const Vec2 perp(std::cos(twoDelta), -std::sin(twoDelta));
        const double cInner = perp.dot(C);
        const double cOuter = perp.dot(C2);
        const double zCenter = -(cInner + cOuter) / (2.0 * std::sin(twoDelta));

        PlacedLens lens;
        lens.config = cfg;
        lens.nPairs = nPairs;
        lens.azimuthOffset = azimuthOffset;
        lens.beamInnerRadius = cfg.d1;
        lens.beamOuterRadius = cfg.d1 + w;
        lens.topZ = -zCenter;
        lens.volume = viewingVolume(cfg);
        const double halfTan = std::tan(kPi / nPairs);
        lens.assemblyRadius = D.x() * std::sqrt(1.0 + halfTan * halfTan);
        lens.cameraZ = lens.topZ + 0.25 * cfg.h1;

        auto makeFacet = [&](const Vec2& top, const Vec2& bottom, double alpha, bool inner,
                             int pairId) {
            double phi = lens.pairAzimuth(pairId);
            Vec3 u(std::cos(phi), std::sin(phi), 0.0);
            Vec3 t(-std::sin(phi), std::cos(phi), 0.0);
            MirrorFacet f;
            f.pairId = pairId;
            f.mirrorIndex = inner ? 0 : 1;
            double zTop = top.y() - zCenter, zBot = bottom.y() - zCenter;
            f.plane.corners = {
                Vec3(top.x() * u + Vec3(0, 0, zTop) - top.x() * halfTan * t),
                Vec3(top.x() * u + Vec3(0, 0, zTop) + top.x() * halfTan * t),
                Vec3(bottom.x() * u + Vec3(0, 0, zBot) + bottom.x() * halfTan * t),
                Vec3(bottom.x() * u + Vec3(0, 0, zBot) - bottom.x() * halfTan * t),
            };
            Vec3 n = std::sin(alpha) * u + std::cos(alpha) * Vec3::UnitZ();
            if (!inner) n = -n;  // M2's reflective side faces down-inward
            f.plane.normal = n;
            f.plane.offset = n.dot(f.plane.corners[0]);
            return f;
        };

        lens.facets.reserve(2 * nPairs);
        for (int k = 0; k < nPairs; ++k) {
            lens.facets.push_back(makeFacet(A, B, a1, true, k));
            lens.facets.push_back(makeFacet(C, D, a2, false, k));
        }
        return lens;
    }
}

// Default physical camera: on the axis at lens.cameraZ, looking straight down
// with world +x to the right of the image.
inline CameraPose physicalCamera(const PlacedLens& lens) {
    CameraPose pose;
    pose.rotation << 1, 0, 0,
                     0, -1, 0,
                     0, 0, -1;
    pose.translation = -pose.rotation * Vec3(0, 0, lens.cameraZ);
    return pose;
}

// Reflects a camera across a mirror plane: R' = R*H, t' = t - R*H*b.
inline CameraPose reflectPose(const CameraPose& pose, const MirrorPlane& plane) {
    Mat3 H = plane.householder();
    Vec3 b = 2.0 * plane.offset * plane.normal;
    CameraPose out;
    out.rotation = pose.rotation * H;
    out.translation = pose.translation - pose.rotation * H * b;
    out.leftHanded = !pose.leftHanded;
    return out;
}

struct VirtualCameraRig {
    std::vector<CameraPose> cameras;
    Intrinsics intrinsics;  // shared by all views
    double ringRadius = 0;
    double ringHeight = 0;
};

// Folds the real camera across M1 then M2 of every pair.
inline VirtualCameraRig buildRig(const PlacedLens& lens, const CameraPose& realCamera,
                                 const Intrinsics& intrinsics) {
    VirtualCameraRig rig;
    rig.intrinsics = intrinsics;
    rig.cameras.reserve(lens.nPairs);
    for (int k = 0; k < lens.nPairs; ++k) {
        const MirrorPlane& m1 = lens.facets[2 * k].plane;
        const MirrorPlane& m2 = lens.facets[2 * k + 1].plane;
        CameraPose v = reflectPose(reflectPose(realCamera, m1), m2);
        rig.cameras.push_back(v);
    }
    Vec3 p0 = rig.cameras[0].position();
    rig.ringRadius = std::hypot(p0.x(), p0.y());
    rig.ringHeight = p0.z();
    return rig;
}

inline VirtualCameraRig buildRig(const MirrorPairConfig& cfg, int nPairs,
                                 const CameraPose& realCamera, const Intrinsics& intrinsics) {
    return buildRig(placeLens(cfg, nPairs), realCamera, intrinsics);
}

// Zero-roll pose with the same viewing direction and sensor plane as `pose`,
// recentered so the optical axis passes through the world origin. Depth values
// are preserved because the new center stays in the old sensor plane.
inline CameraPose zeroRollRecenter(const CameraPose& pose) {
    Vec3 f = pose.forward().normalized();
    Vec3 p = pose.position();
    Vec3 q = f * f.dot(p);  // on the axis through the origin, in p's sensor plane
    Vec3 up = Vec3::UnitZ() - f.z() * f;
    if (up.norm() < 1e-12) throw GeometryMismatch("viewing axis parallel to world up");
    Vec3 yCam = -up.normalized();
    Vec3 xCam = yCam.cross(f);
    CameraPose out;
    out.rotation.row(0) = xCam.transpose();
    out.rotation.row(1) = yCam.transpose();
    out.rotation.row(2) = f.transpose();
    out.translation = -out.rotation * q;
    return out;
}

// Re-projection targets for the eight reference views ("new viewing planes"):
// all optical axes pass through the volume center with zero roll.
inline VirtualCameraRig referenceRig(const VirtualCameraRig& unfolded,
                                     const Intrinsics& targetIntrinsics) {
    VirtualCameraRig rig;
    rig.intrinsics = targetIntrinsics;
    rig.cameras.reserve(unfolded.cameras.size());
    for (const auto& cam : unfolded.cameras) rig.cameras.push_back(zeroRollRecenter(cam));
    Vec3 p0 = rig.cameras[0].position();
    rig.ringRadius = std::hypot(p0.x(), p0.y());
    rig.ringHeight = p0.z();
    return rig;
}

// Rotates a pose rigidly about the world z axis (for held-out ring views).
inline CameraPose rotateAboutVerticalAxis(const CameraPose& pose, double angle) {
    Mat3 Rz = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
    CameraPose out;
    out.rotation = pose.rotation * Rz.transpose();
    out.translation = pose.translation;
    out.leftHanded = pose.leftHanded;
    return out;
}

// ---------------------------------------------------------------------------
// Re-projection
// ---------------------------------------------------------------------------

// Warps a view from one camera to another. Orthographic cameras must share the
// viewing direction (the warp is then a 2D rigid map plus scale); pinhole
// cameras must share the center (homography). Colors and depth resample
// bilinearly, masks nearest-neighbor; depth is re-expressed along the target
// axis. colorSamples > 1 averages a grid of bilinear taps per target pixel,
// matching the box filtering of a supersampled direct render.
inline RenderedView reprojectView(const RenderedView& view, const CameraPose& from,
                                  const Intrinsics& fromK, const CameraPose& to,
                                  const Intrinsics& toK, int colorSamples = 1) {
    if (view.color.width != fromK.width || view.color.height != fromK.height)
        throw ShapeMismatch("view resolution does not match source intrinsics");
    if (fromK.model != toK.model)
        throw GeometryMismatch("cannot re-project between camera models");

    RenderedView out;
    out.color = ImageF32(toK.width, toK.height, 3);
    out.depth = ImageF32(toK.width, toK.height, 1, kInvalidDepth);
    out.silhouette = ImageU8(toK.width, toK.height, 1, 0);
    out.validity = ImageU8(toK.width, toK.height, 1, 0);

    const bool ortho = fromK.model == CameraModel::Orthographic;
    Mat3 M = from.rotation * to.rotation.transpose();
    Vec3 dt = from.translation - M * to.translation;
    if (ortho) {
        if ((from.forward() - to.forward()).norm() > 1e-9)
            throw GeometryMismatch("orthographic re-projection requires a shared viewing "
                                   "direction");
    } else {
        if ((from.position() - to.position()).norm() > 1e-9 * (1.0 + to.position().norm()))
            throw GeometryMismatch("pinhole re-projection requires a shared camera center");
    }

    auto bilinear = [&](const ImageF32& img, double u, double v, int c, float& dst) -> bool {
        int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
        if (x0 < 0 || y0 < 0 || x0 + 1 >= img.width || y0 + 1 >= img.height) return false;
        double fx = u - x0, fy = v - y0;
        double v00 = img.at(x0, y0, c), v10 = img.at(x0 + 1, y0, c);
        double v01 = img.at(x0, y0 + 1, c), v11 = img.at(x0 + 1, y0 + 1, c);
        dst = static_cast<float>((1 - fx) * ((1 - fy) * v00 + fy * v01) +
                                 fx * ((1 - fy) * v10 + fy * v11));
        return true;
    };

    const int ss = std::max(1, colorSamples);
    // Target pixel (u, v) -> source pixel coordinates, plus the depth carry.
    auto mapPixel = [&](double u, double v, double& uf, double& vf, double& depthShift,
                        double& depthRatio) -> bool {
        if (ortho) {
            Vec3 c((u - toK.principalPoint.x()) * toK.focalOrScale,
                   (v - toK.principalPoint.y()) * toK.focalOrScale, 0.0);
            Vec3 fc = M * c + dt;
            uf = fc.x() / fromK.focalOrScale + fromK.principalPoint.x();
            vf = fc.y() / fromK.focalOrScale + fromK.principalPoint.y();
            depthShift = fc.z();
            return true;
        }
        Vec3 d((u - toK.principalPoint.x()) / toK.focalOrScale,
               (v - toK.principalPoint.y()) / toK.focalOrScale, 1.0);
        Vec3 fd = M * d;
        if (fd.z() <= 1e-12) return false;
        uf = fromK.focalOrScale * fd.x() / fd.z() + fromK.principalPoint.x();
        vf = fromK.focalOrScale * fd.y() / fd.z() + fromK.principalPoint.y();
        depthRatio = fd.z();  // d.z() == 1 by construction
        return true;
    };

    parallelFor(static_cast<std::size_t>(toK.height), [&](std::size_t yb, std::size_t ye) {
        for (std::size_t y = yb; y < ye; ++y) {
            for (int x = 0; x < toK.width; ++x) {
                double uf, vf, depthShift = 0, depthRatio = 1;
                if (!mapPixel(x, static_cast<double>(y), uf, vf, depthShift, depthRatio))
                    continue;

                int nx = static_cast<int>(std::lround(uf)), ny = static_cast<int>(std::lround(vf));
                if (!view.validity.inside(nx, ny) || !view.validity.at(nx, ny)) continue;
                out.validity.at(x, static_cast<int>(y)) = 1;
                out.silhouette.at(x, static_cast<int>(y)) = view.silhouette.at(nx, ny);

                for (int c = 0; c < 3; ++c) {
                    double acc = 0;
                    int taken = 0;
                    for (int sy = 0; sy < ss; ++sy)
                        for (int sx = 0; sx < ss; ++sx) {
                            double su = x + (sx + 0.5) / ss - 0.5;
                            double sv = y + (sy + 0.5) / ss - 0.5;
                            double fu, fv, dsh, dra;
                            if (!mapPixel(su, sv, fu, fv, dsh, dra)) continue;
                            float col;
                            if (bilinear(view.color, fu, fv, c, col)) {
                                acc += col;
                                ++taken;
                            }
                        }
                    out.color.at(x, static_cast<int>(y), c) =
                        taken > 0 ? static_cast<float>(acc / taken) : view.color.at(nx, ny, c);
                }
                if (out.silhouette.at(x, static_cast<int>(y))) {
                    float d = view.depth.at(nx, ny);
                    float db;
                    if (std::isfinite(d) && bilinear(view.depth, uf, vf, 0, db) &&
                        std::isfinite(db))
                        d = db;
                    if (std::isfinite(d)) {
                        double depthTo = ortho ? d - depthShift : d / depthRatio;
                        out.depth.at(x, static_cast<int>(y)) = static_cast<float>(depthTo);
                    }
                }
            }
        }
    });

    // Sentinel color outside validity.
    for (int y = 0; y < toK.height; ++y)
        for (int x = 0; x < toK.width; ++x)
            if (!out.validity.at(x, y))
                for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = kSentinelColor[c];
    return out;
}

// ---------------------------------------------------------------------------
// Rig JSON (the contract between the simulator, hull and splat stages)
// ---------------------------------------------------------------------------

inline nlohmann::json intrinsicsToJson(const Intrinsics& k) {
    return {
        {"model", k.model == CameraModel::Orthographic ? "orthographic" : "pinhole"},
        {"focal_or_scale", k.focalOrScale},
        {"principal_point", {k.principalPoint.x(), k.principalPoint.y()}},
        {"resolution", {k.width, k.height}},
    };
}

inline Intrinsics intrinsicsFromJson(const nlohmann::json& j) {
    Intrinsics k;
    std::string model = j.at("model").get<std::string>();
    if (model == "orthographic") k.model = CameraModel::Orthographic;
    else if (model == "pinhole") k.model = CameraModel::Pinhole;
    else throw ParseError("intrinsics", "unknown camera model '" + model + "'");
    k.focalOrScale = j.at("focal_or_scale").get<double>();
    k.principalPoint = Vec2(j.at("principal_point").at(0).get<double>(),
                            j.at("principal_point").at(1).get<double>());
    k.width = j.at("resolution").at(0).get<int>();
    k.height = j.at("resolution").at(1).get<int>();
    return k;
}

inline nlohmann::json rigToJson(const VirtualCameraRig& rig) {
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& cam : rig.cameras) {
        std::vector<double> pose(12);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) pose[r * 4 + c] = cam.rotation(r, c);
            pose[r * 4 + 3] = cam.translation(r);
        }
        cams.push_back({{"pose_3x4", pose}});
    }
    return {
        {"version", 1},
        {"intrinsics", intrinsicsToJson(rig.intrinsics)},
        {"cameras", cams},
        {"ring_radius", rig.ringRadius},
        {"ring_height", rig.ringHeight},
    };
}

inline VirtualCameraRig rigFromJson(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw ParseError("rig", "unsupported version (want 1)");
    VirtualCameraRig rig;
    rig.intrinsics = intrinsicsFromJson(j.at("intrinsics"));
    for (const auto& cj : j.at("cameras")) {
        const auto& pose = cj.at("pose_3x4");
        if (pose.size() != 12) throw ParseError("rig", "pose_3x4 must hold 12 numbers");
        CameraPose cam;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.rotation(r, c) = pose[r * 4 + c].get<double>();
            cam.translation(r) = pose[r * 4 + 3].get<double>();
        }
        rig.cameras.push_back(cam);
    }
    rig.ringRadius = j.value("ring_radius", 0.0);
    rig.ringHeight = j.value("ring_height", 0.0);
    return rig;
}

}  // namespace catoptra
