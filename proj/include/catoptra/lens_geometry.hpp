// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed-form geometry of one mirror pair: the effective viewing volume it
// spans, the feasibility conditions on the pair, and the optimal angle
// difference that inscribes a given scene box in the volume.
//
// Conventions: all angles are radians internally; degrees appear only at the
// JSON/CLI boundary. The 2D cross-section plane is (r, z) with r the radial
// distance from the optical axis and z up. A vertical camera ray bounces off
// the inner mirror M1 (tilt alpha1 from horizontal), then the outer mirror M2
// (tilt alpha2), and exits toward the scene at angle 2*(alpha2 - alpha1) from
// vertical.

#include "catoptra/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <string>

namespace catoptra {

struct MirrorPairConfig {
    double alpha1 = 0;  // tilt of inner mirror M1, radians
    double alpha2 = 0;  // tilt of outer mirror M2, radians
    double h1 = 0;      // vertically projected height of M1
    double h2 = 0;      // vertically projected height of M2
    double d1 = 0;      // distance of M1's upper edge to the central ray
    double d2 = 0;      // distance of M2's upper edge to the central ray

    double deltaAlpha() const { return alpha2 - alpha1; }
};

// Symmetric double pyramid carved out by the eight parallel beams.
struct ViewingVolume {
    double theta = 0;       // half apex angle
    double beta = 0;        // side angle at base, theta + beta = 90 deg
    double baseLength = 0;  // l, widest length at the base plane
    double beamWidth = 0;   // w, width of one parallel beam
    double height = 0;      // h, vertical extent of the double pyramid
    double apexFov = 0;     // 2*theta, the lens field of view

    // Signed inset of a cross-section point (r, z) measured from the rhombus
    // boundary; >= 0 inside, with the volume centered at the origin.
    double insetOf(double r, double z) const {
        return 1.0 - std::abs(r) / (0.5 * baseLength) - std::abs(z) / (0.5 * height);
    }
};

struct SceneBox {
    double width = 0;    // W
    double length = 0;   // L, with L >= W
    double heightV = 0;  // H, vertical

    void validate() const {
        if (!(length >= width && width > 0 && heightV > 0))
            throw InfeasibleDesign("scene box requires L >= W > 0 and H > 0");
    }
};

struct SensorSpec {
    double maxBeamWidth = 0;  // w_max, half the sensor size (orthographic model)

    void validate() const {
        if (!(maxBeamWidth > 0)) throw InfeasibleDesign("sensor w_max must be positive");
    }
};

struct IncidenceAngles {
    double omega1 = 0;  // incidence on M1 (= alpha1)
    double omega2 = 0;  // incidence on M2 (= 2*alpha1 - alpha2)
};

struct ConditionCheck {
    bool pass = false;
    double margin = 0;  // lhs - rhs; negative when violated
    double lhs = 0;
    double rhs = 0;
};

struct ConditionReport {
    bool domainOk = false;        // positivity and d2 > d1
    ConditionCheck ordering;      // (i)  45 < alpha1 < alpha2 < 90 deg
    ConditionCheck coverage;      // (ii) M2 covers the beam reflected off M1
    ConditionCheck separation;    // (iii) no inter-reflection between the mirrors

    bool allPass() const {
        return domainOk && ordering.pass && coverage.pass && separation.pass;
    }
};

namespace detail {
inline double orderingMargin(const MirrorPairConfig& c) {
    return std::min({c.alpha1 - degToRad(45.0), c.alpha2 - c.alpha1, degToRad(90.0) - c.alpha2});
}
}  // namespace detail

inline bool satisfiesOrdering(const MirrorPairConfig& c) {
    return detail::orderingMargin(c) > 0;
}

inline void requireOrdering(const MirrorPairConfig& c) {
    if (!satisfiesOrdering(c))
        throw ConditionViolation("mirror angles must satisfy 45 deg < alpha1 < alpha2 < 90 deg "
                                 "(margin " + std::to_string(radToDeg(detail::orderingMargin(c))) +
                                 " deg)");
}

inline IncidenceAngles incidenceAngles(const MirrorPairConfig& c) {
    requireOrdering(c);
    return {c.alpha1, 2.0 * c.alpha1 - c.alpha2};
}

// Half apex angle of the viewing volume: theta = 2*(alpha2 - alpha1).
inline double apexAngle(const MirrorPairConfig& c) {
    requireOrdering(c);
    return 2.0 * c.deltaAlpha();
}

// Width of the parallel beam admitted by M1: w = h1 / tan(alpha1).
inline double beamWidth(const MirrorPairConfig& c) {
    requireOrdering(c);
    return c.h1 / std::tan(c.alpha1);
}

// Base length of the viewing volume: l = w / cos(2*dAlpha).
inline double baseLength(const MirrorPairConfig& c) {
    double theta = apexAngle(c);
    if (theta >= degToRad(90.0))
        throw DegenerateFov("2*dAlpha must stay below 90 deg for a finite base length");
    return beamWidth(c) / std::cos(theta);
}

inline ViewingVolume viewingVolume(const MirrorPairConfig& c) {
    ViewingVolume v;
    v.theta = apexAngle(c);
    v.beta = degToRad(90.0) - v.theta;
    v.beamWidth = beamWidth(c);
    v.baseLength = baseLength(c);
    v.height = v.beamWidth / std::sin(v.theta);
    v.apexFov = 2.0 * v.theta;
    return v;
}

// Minimum h2 from condition (ii): the outer mirror must intercept the whole
// beam reflected off M1.
inline double minCoverageH2(const MirrorPairConfig& c) {
    return std::sin(c.alpha2) / (std::tan(c.alpha1) * std::cos(2.0 * c.alpha1 - c.alpha2)) * c.h1;
}

// Minimum separation d2 - d1 from condition (iii): the beam reflected off M2
// must clear M1's bottom edge.
inline double minSeparation(const MirrorPairConfig& c) {
    double cot2d = 1.0 / std::tan(2.0 * c.deltaAlpha());
    double cot2a1 = 1.0 / std::tan(2.0 * c.alpha1);
    double t1 = std::tan(c.alpha1);
    return (t1 + cot2d) / (t1 * (cot2d - cot2a1)) * c.h1;
}

inline ConditionReport checkConditions(const MirrorPairConfig& c) {
    ConditionReport r;
    r.domainOk = c.h1 > 0 && c.h2 > 0 && c.d1 > 0 && c.d2 > 0 && c.d2 > c.d1;

    r.ordering.lhs = detail::orderingMargin(c);
    r.ordering.rhs = 0;
    r.ordering.margin = r.ordering.lhs;
    r.ordering.pass = r.ordering.margin > 0;
    if (!r.ordering.pass) return r;  // (ii)/(iii) are meaningless without (i)

    r.coverage.lhs = c.h2;
    r.coverage.rhs = minCoverageH2(c);
    r.coverage.margin = r.coverage.lhs - r.coverage.rhs;
    r.coverage.pass = r.coverage.margin >= 0;

    r.separation.lhs = c.d2;
    r.separation.rhs = minSeparation(c) + c.d1;
    r.separation.margin = r.separation.lhs - r.separation.rhs;
    r.separation.pass = r.separation.margin >= 0;
    return r;
}

// Largest angle difference whose viewing volume still encloses the scene box:
// solves H*sin(2*dAlpha) + L*cos(2*dAlpha) = w_max. Returns 0 at the L = w_max
// boundary.
inline double optimalDeltaAlpha(const SceneBox& scene, const SensorSpec& sensor) {
    scene.validate();
    sensor.validate();
    const double L = scene.length, H = scene.heightV, wmax = sensor.maxBeamWidth;
    const double diag = std::hypot(L, H);
    if (wmax < L)
        throw SceneTooLarge("scene length exceeds the sensor beam width; the volume base "
                            "cannot enclose the box at any angle");
    if (wmax > diag)
        throw InfeasibleDesign("sensor beam width exceeds the scene diagonal; no angle "
                               "inscribes the box");
    double twoDelta = std::asin(std::clamp(wmax / diag, -1.0, 1.0)) - std::atan2(L, H);
    return std::max(0.0, 0.5 * twoDelta);
}

struct DesignMargins {
    double alpha1 = degToRad(60.0);  // free parameter; the paper fixes only dAlpha
    double h2Factor = 1.05;          // slack on condition (ii)
    double d2Factor = 1.05;          // slack on the condition (iii) separation
    double d1OverH1 = 0.05;          // d1 as a fraction of h1
};

// Guard: beyond 2*dAlpha = 80 deg the cos term is ill-conditioned and the
// double-pyramid approximation collapses.
inline constexpr double kMaxTwoDeltaAlphaDeg = 80.0;

// Completes a config from angles and h1: h2/d2 sit at the condition (ii)/(iii)
// minima scaled by the margin factors.
inline MirrorPairConfig makeConfig(double alpha1, double alpha2, double h1,
                                   double d1, double h2Factor = 1.05, double d2Factor = 1.05) {
    MirrorPairConfig c;
    c.alpha1 = alpha1;
    c.alpha2 = alpha2;
    c.h1 = h1;
    c.d1 = d1;
    requireOrdering(c);
    if (2.0 * c.deltaAlpha() >= degToRad(90.0))
        throw DegenerateFov("2*dAlpha must stay below 90 deg");
    c.h2 = h2Factor * minCoverageH2(c);
    c.d2 = c.d1 + d2Factor * minSeparation(c);
    return c;
}

inline MirrorPairConfig designLens(const SceneBox& scene, const SensorSpec& sensor,
                                   const DesignMargins& margins = {}) {
    double dAlpha = optimalDeltaAlpha(scene, sensor);
    if (!(dAlpha > 0))
        throw SceneTooLarge("no positive angle difference inscribes the scene box");
    if (2.0 * dAlpha > degToRad(kMaxTwoDeltaAlphaDeg))
        throw DegenerateFov("optimal 2*dAlpha exceeds the 80 deg guard");
    if (!(margins.alpha1 > degToRad(45.0) && margins.alpha1 < degToRad(90.0)))
        throw InfeasibleAngles("alpha1 must lie in (45, 90) deg");
    double alpha2 = margins.alpha1 + dAlpha;
    if (alpha2 >= degToRad(90.0))
        throw InfeasibleAngles("alpha1 + dAlpha reaches 90 deg; pick a smaller alpha1");

    double h1 = sensor.maxBeamWidth * std::tan(margins.alpha1);  // saturate the beam
    MirrorPairConfig c = makeConfig(margins.alpha1, alpha2, h1, margins.d1OverH1 * h1,
                                    margins.h2Factor, margins.d2Factor);
    if (!checkConditions(c).allPass())
        throw ConditionViolation("designed lens fails its own feasibility conditions");
    return c;
}

// --------------------------------------------------------------------------
// JSON serialization (versioned; angles in degrees, lengths in mm).
// --------------------------------------------------------------------------

inline nlohmann::json toJson(const MirrorPairConfig& c) {
    return {
        {"version", 1},
        {"units", "mm"},
        {"alpha1_deg", radToDeg(c.alpha1)},
        {"alpha2_deg", radToDeg(c.alpha2)},
        {"h1", c.h1},
        {"h2", c.h2},
        {"d1", c.d1},
        {"d2", c.d2},
    };
}

inline MirrorPairConfig configFromJson(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("lens config", "expected a JSON object");
    if (j.value("version", 0) != 1)
        throw ParseError("lens config", "unsupported version (want 1)");
    for (const char* key : {"alpha1_deg", "alpha2_deg", "h1", "h2", "d1", "d2"})
        if (!j.contains(key) || !j.at(key).is_number())
            throw ParseError("lens config", std::string("missing numeric key '") + key + "'");
    MirrorPairConfig c;
    c.alpha1 = degToRad(j.at("alpha1_deg").get<double>());
    c.alpha2 = degToRad(j.at("alpha2_deg").get<double>());
    c.h1 = j.at("h1").get<double>();
    c.h2 = j.at("h2").get<double>();
    c.d1 = j.at("d1").get<double>();
    c.d2 = j.at("d2").get<double>();
    return c;
}

}  // namespace catoptra
