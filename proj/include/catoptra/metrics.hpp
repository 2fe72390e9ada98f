// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// PSNR and windowed SSIM. SSIM uses the 11x11 Gaussian window (sigma 1.5,
// K1 = 0.01, K2 = 0.03, dynamic range 1) evaluated in "valid" mode: the map is
// 10 pixels smaller than the input and a map pixel sits at its window center.
// The analytic SSIM gradient backs the D-SSIM term of the training loss.

#include "catoptra/common.hpp"
#include "catoptra/imaging.hpp"

#include <array>
#include <cmath>

namespace catoptra {

inline constexpr double kPsnrCapDb = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr int kSsimHalf = kSsimWindow / 2;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

template <typename T>
double meanSquaredError(const Image<T>& a, const Image<T>& b, const ImageU8* mask = nullptr) {
    if (!a.sameShape(b)) throw ShapeMismatch("MSE inputs differ in shape");
    if (mask && (mask->width != a.width || mask->height != a.height))
        throw ShapeMismatch("MSE mask resolution mismatch");
    double sum = 0;
    std::size_t n = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (mask && !mask->at(x, y)) continue;
            for (int c = 0; c < a.channels; ++c) {
                double d = static_cast<double>(a.at(x, y, c)) - static_cast<double>(b.at(x, y, c));
                sum += d * d;
                ++n;
            }
        }
    if (n == 0) throw NoValidPixels("MSE has no pixels to average");
    return sum / static_cast<double>(n);
}

template <typename T>
double psnr(const Image<T>& a, const Image<T>& b, const ImageU8* mask = nullptr,
            double range = 1.0) {
    double mse = meanSquaredError(a, b, mask);
    if (mse <= 0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(range * range / mse));
}

namespace detail {

inline const std::array<double, kSsimWindow>& ssimKernel() {
    static const auto kernel = [] {
        std::array<double, kSsimWindow> k{};
        double sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            double d = i - kSsimHalf;
            k[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
            sum += k[i];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return kernel;
}

// Valid-mode separable correlation: output (W-10) x (H-10), single channel.
inline ImageF64 convValid(const ImageF64& src, int channel) {
    const auto& k = ssimKernel();
    ImageF64 tmp(src.width - 2 * kSsimHalf, src.height, 1);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < tmp.width; ++x) {
            double s = 0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * src.at(x + i, y, channel);
            tmp.at(x, y) = s;
        }
    ImageF64 out(tmp.width, src.height - 2 * kSsimHalf, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            double s = 0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp.at(x, y + i);
            out.at(x, y) = s;
        }
    return out;
}

// Adjoint of convValid: scatters a valid-grid field back to image size.
inline ImageF64 convAdjoint(const ImageF64& field, int width, int height) {
    const auto& k = ssimKernel();
    ImageF64 tmp(field.width, height, 1, 0.0);
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            double v = field.at(x, y);
            if (v == 0) continue;
            for (int i = 0; i < kSsimWindow; ++i) tmp.at(x, y + i) += k[i] * v;
        }
    ImageF64 out(width, height, 1, 0.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < field.width; ++x) {
            double v = tmp.at(x, y);
            if (v == 0) continue;
            for (int i = 0; i < kSsimWindow; ++i) out.at(x + i, y) += k[i] * v;
        }
    return out;
}

}  // namespace detail

struct SsimResult {
    double mean = 0;        // over masked valid-mode pixels, averaged across channels
    ImageF64 map;           // per-pixel SSIM averaged across channels (valid grid)
    std::size_t pixels = 0; // masked pixels that entered the mean
};

// mask (optional) is in image coordinates; a map pixel participates when its
// window center is masked.
inline SsimResult ssim(const ImageF64& x, const ImageF64& y, const ImageU8* mask = nullptr,
                       ImageF64* gradX = nullptr) {
    if (!x.sameShape(y)) throw ShapeMismatch("SSIM inputs differ in shape");
    if (x.width < kSsimWindow || x.height < kSsimWindow)
        throw ShapeMismatch("SSIM needs images at least 11x11");
    if (mask && (mask->width != x.width || mask->height != x.height))
        throw ShapeMismatch("SSIM mask resolution mismatch");

    const double C1 = kSsimK1 * kSsimK1, C2 = kSsimK2 * kSsimK2;
    const int vw = x.width - 2 * kSsimHalf, vh = x.height - 2 * kSsimHalf;

    SsimResult result;
    result.map = ImageF64(vw, vh, 1, 0.0);
    if (gradX) *gradX = ImageF64(x.width, x.height, x.channels, 0.0);

    std::size_t nMasked = 0;
    for (int vyy = 0; vyy < vh; ++vyy)
        for (int vxx = 0; vxx < vw; ++vxx)
            if (!mask || mask->at(vxx + kSsimHalf, vyy + kSsimHalf)) ++nMasked;
    if (nMasked == 0) throw NoValidPixels("SSIM mask leaves no window centers");
    result.pixels = nMasked;

    ImageF64 xc(x.width, x.height, 1), yc(x.width, x.height, 1);
    ImageF64 xx(x.width, x.height, 1), yy2(x.width, x.height, 1), xy(x.width, x.height, 1);
    double meanAll = 0;
    for (int c = 0; c < x.channels; ++c) {
        for (int py = 0; py < x.height; ++py)
            for (int px = 0; px < x.width; ++px) {
                double xv = x.at(px, py, c), yv = y.at(px, py, c);
                xc.at(px, py) = xv;
                yc.at(px, py) = yv;
                xx.at(px, py) = xv * xv;
                yy2.at(px, py) = yv * yv;
                xy.at(px, py) = xv * yv;
            }
        ImageF64 mx = detail::convValid(xc, 0), my = detail::convValid(yc, 0);
        ImageF64 mxx = detail::convValid(xx, 0), myy = detail::convValid(yy2, 0);
        ImageF64 mxy = detail::convValid(xy, 0);

        ImageF64 aF(vw, vh, 1, 0.0), bF(vw, vh, 1, 0.0), cF(vw, vh, 1, 0.0);
        ImageF64 bMx(vw, vh, 1, 0.0), cMy(vw, vh, 1, 0.0);
        for (int py = 0; py < vh; ++py)
            for (int px = 0; px < vw; ++px) {
                double mux = mx.at(px, py), muy = my.at(px, py);
                double sx = mxx.at(px, py) - mux * mux;
                double sy = myy.at(px, py) - muy * muy;
                double sxy = mxy.at(px, py) - mux * muy;
                double A1 = 2 * mux * muy + C1, A2 = 2 * sxy + C2;
                double B1 = mux * mux + muy * muy + C1, B2 = sx + sy + C2;
                double S = (A1 * A2) / (B1 * B2);
                result.map.at(px, py) += S / x.channels;
                bool counted = !mask || mask->at(px + kSsimHalf, py + kSsimHalf);
                if (counted) meanAll += S;
                if (gradX && counted) {
                    double w = 1.0 / (static_cast<double>(nMasked) * x.channels);
                    double dmu = 2 * (muy * A2 * B1 - mux * A1 * A2) / (B1 * B1 * B2) * w;
                    double dsx = -S / B2 * w;
                    double dsxy = 2 * A1 / (B1 * B2) * w;
                    aF.at(px, py) = dmu;
                    bF.at(px, py) = dsx;
                    cF.at(px, py) = dsxy;
                    bMx.at(px, py) = dsx * mux;
                    cMy.at(px, py) = dsxy * muy;
                }
            }
        if (gradX) {
            ImageF64 adjA = detail::convAdjoint(aF, x.width, x.height);
            ImageF64 adjB = detail::convAdjoint(bF, x.width, x.height);
            ImageF64 adjBMx = detail::convAdjoint(bMx, x.width, x.height);
            ImageF64 adjC = detail::convAdjoint(cF, x.width, x.height);
            ImageF64 adjCMy = detail::convAdjoint(cMy, x.width, x.height);
            for (int py = 0; py < x.height; ++py)
                for (int px = 0; px < x.width; ++px) {
                    double xv = x.at(px, py, c), yv = y.at(px, py, c);
                    gradX->at(px, py, c) =
                        adjA.at(px, py) + 2 * xv * adjB.at(px, py) - 2 * adjBMx.at(px, py) +
                        yv * adjC.at(px, py) - adjCMy.at(px, py);
                }
        }
    }
    result.mean = meanAll / (static_cast<double>(nMasked) * x.channels);
    return result;
}

inline double dssim(const ImageF64& x, const ImageF64& y, const ImageU8* mask = nullptr,
                    ImageF64* gradX = nullptr) {
    SsimResult r = ssim(x, y, mask, gradX);
    if (gradX)
        for (double& g : gradX->data) g *= -0.5;
    return (1.0 - r.mean) / 2.0;
}

}  // namespace catoptra
