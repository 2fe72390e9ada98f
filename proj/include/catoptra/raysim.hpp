// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Physical ray tracing through the mirror assembly and over synthetic scenes.
// A legal light path bounces exactly once on M1 and once on M2 of the same
// pair before reaching the scene; anything else is a miss, and a third strike
// on a reflective face is an inter-reflection. Depth values are optical path
// lengths from the camera sensor plane, which unfolding maps one-to-one onto
// virtual-camera depth.

#include "catoptra/common.hpp"
#include "catoptra/imaging.hpp"
#include "catoptra/lens_geometry.hpp"
#include "catoptra/unfolding.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace catoptra {

// ---------------------------------------------------------------------------
// Scene primitives
// ---------------------------------------------------------------------------

struct Material {
    Vec3 albedo{0.75, 0.72, 0.68};
    bool checker = false;      // 3D checker between albedo and albedo2
    Vec3 albedo2{0.2, 0.2, 0.25};
    double checkerScale = 0.1;

    Vec3 albedoAt(const Vec3& p) const {
        if (!checker) return albedo;
        long px = static_cast<long>(std::floor(p.x() / checkerScale));
        long py = static_cast<long>(std::floor(p.y() / checkerScale));
        long pz = static_cast<long>(std::floor(p.z() / checkerScale));
        return ((px + py + pz) & 1) ? albedo2 : albedo;
    }
};

struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 1;
};

struct BoxPrim {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();
};

struct MeshData {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    struct BvhNode {
        Vec3 lo, hi;
        int left = -1, right = -1;  // children, or
        int begin = 0, count = 0;   // leaf triangle range
    };
    std::vector<BvhNode> nodes;
    std::vector<int> order;  // triangle indices, leaf-contiguous

    void buildBvh();
};

struct MeshPrim {
    std::shared_ptr<const MeshData> data;
};

struct ScenePrimitive {
    std::variant<Sphere, BoxPrim, MeshPrim> shape;
    Material material;
};

struct Scene {
    std::vector<ScenePrimitive> primitives;
    Vec3 lightDirection = Vec3(-0.35, -0.25, -1.0).normalized();  // toward the scene
    double ambient = 0.35;
    Vec3 backdrop{0.06, 0.06, 0.09};
};

// ---------------------------------------------------------------------------
// Intersection
// ---------------------------------------------------------------------------

struct PrimitiveHit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::UnitZ();
    int primitiveId = -1;
    int triangleId = -1;
};

namespace detail {

inline bool intersectSphere(const Sphere& s, const Vec3& o, const Vec3& d, double tMin,
                            double& t, Vec3& n) {
    Vec3 oc = o - s.center;
    double b = oc.dot(d);
    double c = oc.squaredNorm() - s.radius * s.radius;
    double disc = b * b - c;
    if (disc < 0) return false;
    double sq = std::sqrt(disc);
    double t0 = -b - sq, t1 = -b + sq;
    double th = t0 > tMin ? t0 : (t1 > tMin ? t1 : -1);
    if (th <= tMin) return false;
    t = th;
    n = (o + th * d - s.center).normalized();
    return true;
}

inline bool intersectBox(const BoxPrim& box, const Vec3& o, const Vec3& d, double tMin,
                         double& t, Vec3& n) {
    double t0 = tMin, t1 = std::numeric_limits<double>::infinity();
    int axis0 = -1;
    bool axis0Min = true;
    for (int a = 0; a < 3; ++a) {
        double inv = 1.0 / d[a];
        double ta = (box.min[a] - o[a]) * inv;
        double tb = (box.max[a] - o[a]) * inv;
        bool nearIsMin = ta < tb;
        if (!nearIsMin) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            axis0 = a;
            axis0Min = nearIsMin;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    if (axis0 < 0) return false;  // origin inside; treat as miss for opaque solids
    t = t0;
    n = Vec3::Zero();
    n[axis0] = axis0Min ? -1.0 : 1.0;
    return true;
}

// Moller-Trumbore; returns barycentric-free hit with the geometric normal.
inline bool intersectTriangle(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& o,
                              const Vec3& d, double tMin, double& t, Vec3& n) {
    Vec3 e1 = v1 - v0, e2 = v2 - v0;
    Vec3 p = d.cross(e2);
    double det = e1.dot(p);
    if (std::abs(det) < 1e-15) return false;
    double inv = 1.0 / det;
    Vec3 s = o - v0;
    double u = s.dot(p) * inv;
    if (u < 0 || u > 1) return false;
    Vec3 q = s.cross(e1);
    double v = d.dot(q) * inv;
    if (v < 0 || u + v > 1) return false;
    double tt = e2.dot(q) * inv;
    if (tt <= tMin) return false;
    t = tt;
    n = e1.cross(e2).normalized();
    return true;
}

inline bool slabHit(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& invD,
                    double tMax) {
    double t0 = 0, t1 = tMax;
    for (int a = 0; a < 3; ++a) {
        double ta = (lo[a] - o[a]) * invD[a];
        double tb = (hi[a] - o[a]) * invD[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace detail

inline void MeshData::buildBvh() {
    nodes.clear();
    order.resize(faces.size());
    for (std::size_t i = 0; i < faces.size(); ++i) order[i] = static_cast<int>(i);
    if (faces.empty()) return;

    std::vector<Vec3> centroids(faces.size());
    for (std::size_t i = 0; i < faces.size(); ++i)
        centroids[i] = (vertices[faces[i][0]] + vertices[faces[i][1]] + vertices[faces[i][2]]) / 3.0;

    struct Item {
        int begin, count, parentSlot;
    };
    std::vector<Item> stack{{0, static_cast<int>(faces.size()), -1}};
    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        BvhNode node;
        node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        node.hi = -node.lo;
        for (int i = item.begin; i < item.begin + item.count; ++i)
            for (int v : faces[order[i]]) {
                node.lo = node.lo.cwiseMin(vertices[v]);
                node.hi = node.hi.cwiseMax(vertices[v]);
            }
        int slot = static_cast<int>(nodes.size());
        if (item.parentSlot >= 0) {
            if (nodes[item.parentSlot].left == -2) nodes[item.parentSlot].left = slot;
            else nodes[item.parentSlot].right = slot;
        }
        if (item.count <= 4) {
            node.begin = item.begin;
            node.count = item.count;
            nodes.push_back(node);
            continue;
        }
        Vec3 extent = node.hi - node.lo;
        int axis = 0;
        if (extent.y() > extent.x()) axis = 1;
        if (extent.z() > extent[axis]) axis = 2;
        int mid = item.begin + item.count / 2;
        std::nth_element(order.begin() + item.begin, order.begin() + mid,
                         order.begin() + item.begin + item.count,
                         [&](int a, int b) { return centroids[a][axis] < centroids[b][axis]; });
        node.left = -2;   // filled by the next pushed child
        node.right = -2;
        nodes.push_back(node);
        // Push right first so the left child is processed (and numbered) first.
        stack.push_back({mid, item.begin + item.count - mid, slot});
        stack.push_back({item.begin, mid - item.begin, slot});
    }
}

namespace detail {

inline void intersectMesh(const MeshData& mesh, const Vec3& o, const Vec3& d, double tMin,
                          PrimitiveHit& best) {
    if (mesh.nodes.empty()) return;
    Vec3 invD(1.0 / d.x(), 1.0 / d.y(), 1.0 / d.z());
    std::array<int, 64> stack;
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const MeshData::BvhNode& node = mesh.nodes[stack[--sp]];
        if (!slabHit(node.lo, node.hi, o, invD, best.t)) continue;
        if (node.count > 0) {
            for (int i = node.begin; i < node.begin + node.count; ++i) {
                int tri = mesh.order[i];
                double t;
                Vec3 n;
                const auto& f = mesh.faces[tri];
                if (intersectTriangle(mesh.vertices[f[0]], mesh.vertices[f[1]],
                                      mesh.vertices[f[2]], o, d, tMin, t, n) &&
                    t < best.t) {
                    best.t = t;
                    best.normal = n;
                    best.triangleId = tri;
                }
            }
        } else {
            stack[sp++] = node.left;
            stack[sp++] = node.right;
        }
    }
}

}  // namespace detail

inline std::optional<PrimitiveHit> intersectScene(const Scene& scene, const Vec3& o,
                                                  const Vec3& d, double tMin = 1e-9) {
    PrimitiveHit best;
    for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const auto& prim = scene.primitives[i];
        double t;
        Vec3 n;
        if (std::holds_alternative<Sphere>(prim.shape)) {
            if (detail::intersectSphere(std::get<Sphere>(prim.shape), o, d, tMin, t, n) &&
                t < best.t) {
                best.t = t;
                best.normal = n;
                best.primitiveId = static_cast<int>(i);
                best.triangleId = -1;
            }
        } else if (std::holds_alternative<BoxPrim>(prim.shape)) {
            if (detail::intersectBox(std::get<BoxPrim>(prim.shape), o, d, tMin, t, n) &&
                t < best.t) {
                best.t = t;
                best.normal = n;
                best.primitiveId = static_cast<int>(i);
                best.triangleId = -1;
            }
        } else {
            PrimitiveHit meshBest = best;
            detail::intersectMesh(*std::get<MeshPrim>(prim.shape).data, o, d, tMin, meshBest);
            if (meshBest.t < best.t) {
                best = meshBest;
                best.primitiveId = static_cast<int>(i);
            }
        }
    }
    if (best.primitiveId < 0) return std::nullopt;
    return best;
}

// Flat Lambertian shading with one directional light plus ambient.
inline Vec3 shade(const Scene& scene, const Material& mat, const Vec3& point, const Vec3& normal,
                  const Vec3& viewDir) {
    Vec3 n = normal;
    if (n.dot(viewDir) > 0) n = -n;  // face the viewer
    double diffuse = std::max(0.0, n.dot(-scene.lightDirection));
    double level = scene.ambient + (1.0 - scene.ambient) * diffuse;
    return scene.lightDirection == Vec3::Zero() ? mat.albedoAt(point)
                                                : (mat.albedoAt(point) * level).eval();
}

// ---------------------------------------------------------------------------
// Mesh loading (OBJ-subset text format: v / f statements)
// ---------------------------------------------------------------------------

inline MeshPrim loadMesh(const std::filesystem::path& path, bool autoTriangulate = false) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mesh " + path.string());
    auto mesh = std::make_shared<MeshData>();
    std::string line;
    long lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z()))
                throw ParseError(path.string(), lineNo, "vertex needs 3 coordinates");
            mesh->vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // OBJ corners may carry /texture/normal suffixes.
                std::size_t slash = tok.find('/');
                std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int v = 0;
                try {
                    v = std::stoi(head);
                } catch (...) {
                    throw ParseError(path.string(), lineNo, "bad face index '" + tok + "'");
                }
                if (v <= 0 || v > static_cast<int>(mesh->vertices.size()))
                    throw ParseError(path.string(), lineNo, "face index out of range");
                idx.push_back(v - 1);
            }
            if (idx.size() < 3) throw ParseError(path.string(), lineNo, "face needs >= 3 corners");
            if (idx.size() > 3 && !autoTriangulate)
                throw NonTriangleFace(path.string() + ":" + std::to_string(lineNo) +
                                      ": non-triangle face (enable auto-triangulation)");
            for (std::size_t i = 2; i < idx.size(); ++i)
                mesh->faces.push_back({idx[0], idx[static_cast<int>(i) - 1], idx[i]});
        } else if (tag == "vn" || tag == "vt" || tag == "g" || tag == "o" || tag == "s" ||
                   tag == "usemtl" || tag == "mtllib") {
            continue;  // recognized but unused
        } else {
            throw ParseError(path.string(), lineNo, "unknown statement '" + tag + "'");
        }
    }
    if (mesh->faces.empty())
        throw ParseError(path.string(), lineNo, "mesh has no faces");
    mesh->buildBvh();
    return MeshPrim{mesh};
}

// ---------------------------------------------------------------------------
// Scene JSON
// ---------------------------------------------------------------------------

namespace detail {
inline Vec3 vec3FromJson(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ParseError("scene", "expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void requireKeys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                        const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ParseError(where, "unknown key '" + it.key() + "'");
    }
}

inline Material materialFromJson(const nlohmann::json& j) {
    Material m;
    if (j.contains("albedo")) m.albedo = vec3FromJson(j.at("albedo"));
    if (j.contains("checker")) {
        const auto& c = j.at("checker");
        requireKeys(c, {"albedo2", "scale"}, "scene checker");
        m.checker = true;
        if (c.contains("albedo2")) m.albedo2 = vec3FromJson(c.at("albedo2"));
        if (c.contains("scale")) m.checkerScale = c.at("scale").get<double>();
    }
    return m;
}
}  // namespace detail

inline Scene sceneFromJson(const nlohmann::json& j, const std::filesystem::path& baseDir) {
    detail::requireKeys(j, {"version", "primitives", "light", "backdrop"}, "scene");
    if (j.value("version", 0) != 1) throw ParseError("scene", "unsupported version (want 1)");
    Scene scene;
    if (j.contains("backdrop")) scene.backdrop = detail::vec3FromJson(j.at("backdrop"));
    if (j.contains("light")) {
        const auto& l = j.at("light");
        detail::requireKeys(l, {"direction", "ambient"}, "scene light");
        if (l.contains("direction"))
            scene.lightDirection = detail::vec3FromJson(l.at("direction")).normalized();
        if (l.contains("ambient")) scene.ambient = l.at("ambient").get<double>();
    }
    for (const auto& pj : j.at("primitives")) {
        std::string kind = pj.at("kind").get<std::string>();
        ScenePrimitive prim;
        prim.material = detail::materialFromJson(pj);
        if (kind == "sphere") {
            detail::requireKeys(pj, {"kind", "center", "radius", "albedo", "checker"},
                                "scene sphere");
            Sphere s;
            s.center = detail::vec3FromJson(pj.at("center"));
            s.radius = pj.at("radius").get<double>();
            if (s.radius <= 0) throw ParseError("scene", "sphere radius must be positive");
            prim.shape = s;
        } else if (kind == "box") {
            detail::requireKeys(pj, {"kind", "min", "max", "albedo", "checker"}, "scene box");
            BoxPrim b;
            b.min = detail::vec3FromJson(pj.at("min"));
            b.max = detail::vec3FromJson(pj.at("max"));
            if ((b.max - b.min).minCoeff() <= 0)
                throw ParseError("scene", "box needs max > min on every axis");
            prim.shape = b;
        } else if (kind == "mesh") {
            detail::requireKeys(pj,
                                {"kind", "path", "auto_triangulate", "scale", "translate",
                                 "albedo", "checker"},
                                "scene mesh");
            MeshPrim m = loadMesh(baseDir / pj.at("path").get<std::string>(),
                                  pj.value("auto_triangulate", false));
            double scale = pj.value("scale", 1.0);
            Vec3 translate = pj.contains("translate") ? detail::vec3FromJson(pj.at("translate"))
                                                      : Vec3::Zero();
            if (scale != 1.0 || translate != Vec3::Zero()) {
                auto copy = std::make_shared<MeshData>(*m.data);
                for (auto& v : copy->vertices) v = v * scale + translate;
                copy->buildBvh();
                m.data = copy;
            }
            prim.shape = m;
        } else {
            throw ParseError("scene", "unknown primitive kind '" + kind + "'");
        }
        scene.primitives.push_back(std::move(prim));
    }
    return scene;
}

inline Scene loadScene(const std::filesystem::path& path) {
    return sceneFromJson(loadJson(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Tracing through the mirror assembly
// ---------------------------------------------------------------------------

enum class PathStatus { SceneHit, Miss, InterReflection };

struct Bounce {
    int facetIndex = -1;
    Vec3 point = Vec3::Zero();
    double incidenceAngle = 0;  // against the facet normal
};

struct HitRecord {
    PathStatus status = PathStatus::Miss;
    bool pathComplete = false;  // bounced M1 then M2 of one pair
    int pairId = -1;
    std::vector<Bounce> bounces;
    Vec3 exitDirection = Vec3::Zero();
    double depth = std::numeric_limits<double>::infinity();  // path length at the scene hit
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Vec3 color = Vec3::Zero();
    int primitiveId = -1;
};

namespace detail {

struct FacetHit {
    int facetIndex = -1;
    double t = std::numeric_limits<double>::infinity();
    Vec3 point = Vec3::Zero();
    bool front = false;
};

// Convex-quad containment with a boundary tolerance (inclusive when slack > 0,
// strict interior when slack < 0). Works for either corner winding: interior
// points put every edge test on one consistent side.
inline bool insideFacet(const MirrorPlane& plane, const Vec3& p, double slack) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < 4; ++i) {
        const Vec3& a = plane.corners[i];
        const Vec3& b = plane.corners[(i + 1) % 4];
        double len = (b - a).norm();
        double side = (b - a).cross(p - a).dot(plane.normal) / len;
        lo = std::min(lo, side);
        hi = std::max(hi, side);
    }
    return lo >= -slack || hi <= slack;
}

inline std::optional<FacetHit> nearestFacetHit(const PlacedLens& lens, const Vec3& o,
                                               const Vec3& d, double tMin, double slack) {
    FacetHit best;
    for (std::size_t i = 0; i < lens.facets.size(); ++i) {
        const MirrorPlane& plane = lens.facets[i].plane;
        double denom = plane.normal.dot(d);
        if (std::abs(denom) < 1e-15) continue;
        double t = (plane.offset - plane.normal.dot(o)) / denom;
        if (t <= tMin || t >= best.t) continue;
        Vec3 p = o + t * d;
        if (!insideFacet(plane, p, slack)) continue;
        best.t = t;
        best.facetIndex = static_cast<int>(i);
        best.point = p;
        best.front = denom < 0;
    }
    if (best.facetIndex < 0) return std::nullopt;
    return best;
}

}  // namespace detail

// Traces one camera ray through the assembly into the scene. `origin` must lie
// on the physical sensor plane so the recorded depth matches virtual-camera
// depth after unfolding.
inline HitRecord traceRay(const PlacedLens& lens, const Scene& scene, const Vec3& origin,
                          const Vec3& direction) {
    const double slackIn = 1e-9 * lens.config.h1;    // inclusive for the legal bounces
    const double slackOut = -1e-9 * lens.config.h1;  // strict interior for stray strikes
    HitRecord rec;
    Vec3 o = origin;
    Vec3 d = direction.normalized();
    double pathLength = 0;

    // First bounce: must be the front of some M1.
    auto h1 = detail::nearestFacetHit(lens, o, d, 1e-12, slackIn);
    if (!h1 || lens.facets[h1->facetIndex].mirrorIndex != 0 || !h1->front) return rec;
    const MirrorPlane& m1 = lens.facets[h1->facetIndex].plane;
    rec.bounces.push_back({h1->facetIndex, h1->point,
                           std::acos(std::clamp(std::abs(m1.normal.dot(d)), 0.0, 1.0))});
    pathLength += h1->t;
    o = h1->point;
    d = m1.reflectDirection(d);

    // Second bounce: the front of M2 of the same pair.
    auto h2 = detail::nearestFacetHit(lens, o, d, 1e-9 * lens.config.h1, slackIn);
    if (!h2 || lens.facets[h2->facetIndex].mirrorIndex != 1 ||
        lens.facets[h2->facetIndex].pairId != lens.facets[h1->facetIndex].pairId) {
        if (h2 && h2->front) {
            rec.status = PathStatus::InterReflection;
            const MirrorPlane& m = lens.facets[h2->facetIndex].plane;
            rec.bounces.push_back({h2->facetIndex, h2->point,
                                   std::acos(std::clamp(std::abs(m.normal.dot(d)), 0.0, 1.0))});
        }
        return rec;
    }
    const MirrorPlane& m2 = lens.facets[h2->facetIndex].plane;
    rec.bounces.push_back({h2->facetIndex, h2->point,
                           std::acos(std::clamp(std::abs(m2.normal.dot(d)), 0.0, 1.0))});
    pathLength += h2->t;
    o = h2->point;
    d = m2.reflectDirection(d);

    rec.pathComplete = true;
    rec.pairId = lens.facets[h1->facetIndex].pairId;
    rec.exitDirection = d;

    auto sceneHit = intersectScene(scene, o, d, 1e-9 * lens.config.h1);
    double tScene = sceneHit ? sceneHit->t : std::numeric_limits<double>::infinity();

    // Any further strike on a reflective face before the scene is an
    // inter-reflection; strict interior keeps exact boundary rays legal.
    auto h3 = detail::nearestFacetHit(lens, o, d, 1e-9 * lens.config.h1, slackOut);
    if (h3 && h3->t < tScene) {
        if (h3->front) {
            const MirrorPlane& m = lens.facets[h3->facetIndex].plane;
            rec.status = PathStatus::InterReflection;
            rec.bounces.push_back({h3->facetIndex, h3->point,
                                   std::acos(std::clamp(std::abs(m.normal.dot(d)), 0.0, 1.0))});
        }
        return rec;  // backside strikes absorb the ray
    }

    if (!sceneHit) return rec;  // legal path into the backdrop
    rec.status = PathStatus::SceneHit;
    rec.depth = pathLength + sceneHit->t;
    rec.point = o + sceneHit->t * d;
    rec.normal = sceneHit->normal;
    rec.primitiveId = sceneHit->primitiveId;
    rec.color = shade(scene, scene.primitives[sceneHit->primitiveId].material, rec.point,
                      rec.normal, d);
    return rec;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct RenderOptions {
    int supersample = 1;  // SSAA factor per axis; depth/masks use the center sample
};

// Direct render from a virtual pose: no mirrors involved, every ray is legal.
inline RenderedView renderView(const Scene& scene, const CameraPose& pose, const Intrinsics& k,
                               const RenderOptions& opts = {}) {
    RenderedView view;
    view.color = ImageF32(k.width, k.height, 3);
    view.depth = ImageF32(k.width, k.height, 1, kInvalidDepth);
    view.silhouette = ImageU8(k.width, k.height, 1, 0);
    view.validity = ImageU8(k.width, k.height, 1, 1);
    const int ss = std::max(1, opts.supersample);

    parallelFor(static_cast<std::size_t>(k.height), [&](std::size_t yb, std::size_t ye) {
        for (std::size_t y = yb; y < ye; ++y)
            for (int x = 0; x < k.width; ++x) {
                Vec3 acc = Vec3::Zero();
                for (int sy = 0; sy < ss; ++sy)
                    for (int sx = 0; sx < ss; ++sx) {
                        double u = x + (sx + 0.5) / ss - 0.5;
                        double v = y + (sy + 0.5) / ss - 0.5;
                        PixelRay ray = pixelRay(pose, k, u, v);
                        auto hit = intersectScene(scene, ray.origin, ray.direction);
                        acc += hit ? shade(scene, scene.primitives[hit->primitiveId].material,
                                           ray.origin + hit->t * ray.direction, hit->normal,
                                           ray.direction)
                                   : scene.backdrop;
                    }
                acc /= ss * ss;
                for (int c = 0; c < 3; ++c)
                    view.color.at(x, static_cast<int>(y), c) = static_cast<float>(acc[c]);

                PixelRay center = pixelRay(pose, k, x, static_cast<double>(y));
                auto hit = intersectScene(scene, center.origin, center.direction);
                if (hit) {
                    view.silhouette.at(x, static_cast<int>(y)) = 1;
                    // Orthographic rays start on the sensor plane, so t = depth;
                    // pinhole depth is the camera-z component.
                    double depth = k.model == CameraModel::Orthographic
                                       ? hit->t
                                       : pose.toCamera(center.origin +
                                                       hit->t * center.direction).z();
                    view.depth.at(x, static_cast<int>(y)) = static_cast<float>(depth);
                }
            }
    });
    return view;
}

inline std::vector<RenderedView> renderVirtualViews(const Scene& scene,
                                                    const std::vector<CameraPose>& poses,
                                                    const Intrinsics& k,
                                                    const RenderOptions& opts = {}) {
    std::vector<RenderedView> views;
    views.reserve(poses.size());
    for (const auto& pose : poses) views.push_back(renderView(scene, pose, k, opts));
    return views;
}

// Held-out ring poses: `count` azimuths at even spacing, rotated half a step so
// none coincides with a reference view.
inline std::vector<CameraPose> heldOutPoses(const CameraPose& reference0, int count) {
    std::vector<CameraPose> poses;
    poses.reserve(count);
    double step = 2.0 * kPi / count;
    for (int i = 0; i < count; ++i)
        poses.push_back(rotateAboutVerticalAxis(reference0, (i + 0.5) * step));
    return poses;
}

// Renders the snapshot mosaic seen by the physical camera through the mirrors.
inline MosaicImage renderSnapshot(const PlacedLens& lens, const Scene& scene,
                                  const CameraPose& physicalPose, const Intrinsics& k,
                                  const RenderOptions& opts = {}) {
    MosaicImage mosaic;
    mosaic.color = ImageF32(k.width, k.height, 3);
    mosaic.multiViewMask = ImageI32(k.width, k.height, 1, -1);
    mosaic.depth = ImageF32(k.width, k.height, 1, kInvalidDepth);
    mosaic.validity = ImageU8(k.width, k.height, 1, 0);
    const int ss = std::max(1, opts.supersample);

    std::vector<int> interReflections(k.height, 0);
    parallelFor(static_cast<std::size_t>(k.height), [&](std::size_t yb, std::size_t ye) {
        for (std::size_t y = yb; y < ye; ++y)
            for (int x = 0; x < k.width; ++x) {
                PixelRay center = pixelRay(physicalPose, k, x, static_cast<double>(y));
                HitRecord rec = traceRay(lens, scene, center.origin, center.direction);
                if (rec.status == PathStatus::InterReflection)
                    ++interReflections[y];
                if (!rec.pathComplete || rec.status == PathStatus::InterReflection) {
                    for (int c = 0; c < 3; ++c)
                        mosaic.color.at(x, static_cast<int>(y), c) = kSentinelColor[c];
                    continue;
                }
                mosaic.validity.at(x, static_cast<int>(y)) = 1;
                mosaic.multiViewMask.at(x, static_cast<int>(y)) = rec.pairId;
                if (rec.status == PathStatus::SceneHit)
                    mosaic.depth.at(x, static_cast<int>(y)) = static_cast<float>(rec.depth);

                Vec3 acc = Vec3::Zero();
                int good = 0;
                if (ss == 1) {
                    acc = rec.status == PathStatus::SceneHit ? rec.color : scene.backdrop;
                    good = 1;
                } else {
                    for (int sy = 0; sy < ss; ++sy)
                        for (int sx = 0; sx < ss; ++sx) {
                            double u = x + (sx + 0.5) / ss - 0.5;
                            double v = y + (sy + 0.5) / ss - 0.5;
                            PixelRay ray = pixelRay(physicalPose, k, u, v);
                            HitRecord r = traceRay(lens, scene, ray.origin, ray.direction);
                            if (!r.pathComplete || r.status != PathStatus::SceneHit) {
                                if (r.pathComplete) {
                                    acc += scene.backdrop;
                                    ++good;
                                }
                                continue;
                            }
                            acc += r.color;
                            ++good;
                        }
                }
                if (good == 0) {
                    acc = scene.backdrop;
                    good = 1;
                }
                acc /= good;
                for (int c = 0; c < 3; ++c)
                    mosaic.color.at(x, static_cast<int>(y), c) = static_cast<float>(acc[c]);
            }
    });
    for (int n : interReflections) mosaic.interReflections += n;
    return mosaic;
}

inline MaskSet makeMaskSet(const MosaicImage& mosaic, int nPairs) {
    MaskSet masks;
    masks.multiViewMask = mosaic.multiViewMask;
    masks.foregroundMasks.assign(nPairs, ImageU8(mosaic.color.width, mosaic.color.height, 1, 0));
    for (int y = 0; y < mosaic.color.height; ++y)
        for (int x = 0; x < mosaic.color.width; ++x) {
            int id = mosaic.multiViewMask.at(x, y);
            if (id >= 0 && id < nPairs && std::isfinite(mosaic.depth.at(x, y)))
                masks.foregroundMasks[id].at(x, y) = 1;
        }
    return masks;
}

// Treats the mosaic as the image of unfolded camera `pairId` (same pixel grid,
// same depth origin) and re-projects it onto the matching reference camera.
inline RenderedView extractReferenceView(const MosaicImage& mosaic,
                                         const VirtualCameraRig& unfolded,
                                         const Intrinsics& mosaicIntrinsics, int pairId,
                                         const VirtualCameraRig& reference,
                                         int colorSamples = 1) {
    RenderedView raw;
    raw.color = mosaic.color;
    raw.depth = mosaic.depth;
    raw.silhouette = ImageU8(mosaic.color.width, mosaic.color.height, 1, 0);
    raw.validity = ImageU8(mosaic.color.width, mosaic.color.height, 1, 0);
    for (int y = 0; y < mosaic.color.height; ++y)
        for (int x = 0; x < mosaic.color.width; ++x) {
            if (mosaic.multiViewMask.at(x, y) != pairId) continue;
            raw.validity.at(x, y) = 1;
            raw.silhouette.at(x, y) = std::isfinite(mosaic.depth.at(x, y)) ? 1 : 0;
        }
    return reprojectView(raw, unfolded.cameras[pairId], mosaicIntrinsics,
                         reference.cameras[pairId], reference.intrinsics, colorSamples);
}

// ---------------------------------------------------------------------------
// Envelope oracle: measures the viewing volume by tracing, independently of
// the closed-form formulas.
// ---------------------------------------------------------------------------

struct MeasuredEnvelope {
    ViewingVolume volume;        // measured theta/l/w/h
    double centerZ = 0;          // rhombus center on the axis (world frame)
    Vec3 beamDirection = Vec3::Zero();
    double apertureInner = 0;    // radial extent of the accepted vertical beam
    double apertureOuter = 0;
};

namespace detail {

struct CrossSectionTrace {
    bool valid = false;
    Vec2 point = Vec2::Zero();      // (r, z) of the M2 bounce
    Vec2 direction = Vec2::Zero();  // outgoing, in the cross-section plane
};

inline CrossSectionTrace traceAperture(const PlacedLens& lens, const Scene& empty, double r) {
    HitRecord rec = traceRay(lens, empty, Vec3(r, 0, lens.cameraZ), Vec3(0, 0, -1));
    CrossSectionTrace out;
    if (!rec.pathComplete || rec.status == PathStatus::InterReflection) return out;
    out.valid = true;
    out.point = Vec2(rec.bounces[1].point.x(), rec.bounces[1].point.z());
    out.direction = Vec2(rec.exitDirection.x(), rec.exitDirection.z()).normalized();
    return out;
}

}  // namespace detail

inline MeasuredEnvelope envelopeOracle(const MirrorPairConfig& cfg, int samples = 10000) {
    requireOrdering(cfg);
    // Only condition (i) is needed to scan the aperture; the oracle measures
    // whatever beam the placed mirrors actually produce.
    PlacedLens lens = placeLens(cfg, 8, 0.0, /*validate=*/false);
    Scene empty;

    const double rLo = 0.25 * cfg.d1;
    const double rHi = lens.assemblyRadius;
    std::vector<double> grid(samples);
    std::vector<bool> valid(samples);
    int first = -1, last = -1;
    for (int i = 0; i < samples; ++i) {
        grid[i] = rLo + (rHi - rLo) * i / (samples - 1);
        valid[i] = detail::traceAperture(lens, empty, grid[i]).valid;
        if (valid[i]) {
            if (first < 0) first = i;
            last = i;
        }
    }
    if (first < 0) throw ConditionViolation("no valid two-bounce path across the aperture");

    auto refine = [&](double inside, double outside) {
        for (int it = 0; it < 80; ++it) {
            double mid = 0.5 * (inside + outside);
            if (detail::traceAperture(lens, empty, mid).valid) inside = mid;
            else outside = mid;
        }
        return inside;
    };
    double rInner = first > 0 ? refine(grid[first], grid[first - 1]) : grid[first];
    double rOuter = last + 1 < samples ? refine(grid[last], grid[last + 1]) : grid[last];

    auto innerTrace = detail::traceAperture(lens, empty, rInner);
    auto outerTrace = detail::traceAperture(lens, empty, rOuter);
    auto midTrace = detail::traceAperture(lens, empty, 0.5 * (rInner + rOuter));
    if (!innerTrace.valid || !outerTrace.valid || !midTrace.valid)
        throw ConditionViolation("aperture endpoints failed to trace");

    const Vec2 dir = midTrace.direction;
    const Vec2 perp(-dir.y(), dir.x());
    double cA = perp.dot(innerTrace.point);
    double cB = perp.dot(outerTrace.point);
    double cMin = std::min(cA, cB), cMax = std::max(cA, cB);

    // Rhombus vertices from this beam and its mirror image across the axis.
    // A line {p . perp = c} mirrored across r -> -r has direction (-dx, dz).
    auto lineCross = [&](double c1, double c2) {
        // beam line: perp . p = c1; mirrored line: perpM . p = c2 with
        // perpM = (dy, dx) for perp = (-dy, dx).
        Mat2 M;
        Vec2 perpM(dir.y(), dir.x());
        M << perp.x(), perp.y(), perpM.x(), perpM.y();
        return Vec2(M.inverse() * Vec2(c1, c2));
    };
    Vec2 top = lineCross(cMin, cMin);
    Vec2 bottom = lineCross(cMax, cMax);
    Vec2 side1 = lineCross(cMin, cMax);
    Vec2 side2 = lineCross(cMax, cMin);

    MeasuredEnvelope env;
    env.beamDirection = Vec3(dir.x(), 0, dir.y());
    env.apertureInner = rInner;
    env.apertureOuter = rOuter;
    env.centerZ = 0.5 * (top.y() + bottom.y());
    env.volume.beamWidth = cMax - cMin;
    env.volume.height = top.y() - bottom.y();
    env.volume.baseLength = std::abs(side1.x() - side2.x());
    env.volume.theta = std::atan2(0.5 * env.volume.baseLength, 0.5 * env.volume.height);
    env.volume.beta = degToRad(90.0) - env.volume.theta;
    env.volume.apexFov = 2.0 * env.volume.theta;
    return env;
}

}  // namespace catoptra
