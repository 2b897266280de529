#pragma once

// Prior-map rendering: pull the projected structural signal out of a wrapped
// block just before it fuses into the host output, reduce it to a single
// normalized plane, optionally smooth it, and write a color-mapped PPM.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "loasp/backbone.hpp"
#include "loasp/common.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

// Mean over the channel axis of one [1,C,H,W] activation -> [H,W].
inline Tensor channel_mean_map(const Tensor& act) {
    if (act.rank() != 4 || act.dim(0) != 1)
        throw ShapeError("channel_mean_map: want a single [1,C,H,W] activation, got " +
                         shape_str(act.shape()));
    long c = act.dim(1), h = act.dim(2), w = act.dim(3);
    std::vector<double> out(static_cast<std::size_t>(h * w), 0.0);
    const double* p = act.data();
    for (long ch = 0; ch < c; ++ch)
        for (long i = 0; i < h * w; ++i) out[static_cast<std::size_t>(i)] += p[ch * h * w + i];
    for (double& v : out) v /= static_cast<double>(c);
    return Tensor::from_data(out, {h, w});
}

// Min-max normalization to [0,1]; a constant map has no contrast to show and
// comes back as all zeros.
inline Tensor normalize_unit(const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("normalize_unit: want [H,W], got " + shape_str(map.shape()));
    const double* p = map.data();
    double lo = p[0], hi = p[0];
    for (long i = 0; i < map.size(); ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    std::vector<double> out(static_cast<std::size_t>(map.size()));
    if (hi > lo)
        for (long i = 0; i < map.size(); ++i)
            out[static_cast<std::size_t>(i)] = (p[i] - lo) / (hi - lo);
    return Tensor::from_data(out, {map.dim(0), map.dim(1)});
}

// The structural prior as seen by block t for one input image: the projector
// output captured after the spline stage's up-projection, before the final
// fuse, reduced over channels and normalized. A freshly initialized block has
// a zero up-projection, so its map is identically zero.
inline Tensor extract_prior_map(const ToyBackbone& net, const Tensor& x, long block_index) {
    if (x.rank() != 4 || x.dim(0) != 1)
        throw ShapeError("extract_prior_map: want one [1,3,H,W] image, got " + shape_str(x.shape()));
    const WrappedBlock& wb = net.wrapped_at(block_index);  // ConfigError when unattached
    NoGradGuard guard;
    Tensor feats = net.features_before_block(x, block_index, false);
    Tensor host_out = wb.host.forward(feats, false);
    Tensor signal = wb.fusion_signal(feats, host_out, false);  // ConfigError unless loap fusion
    return normalize_unit(channel_mean_map(signal));
}

// Separable Gaussian blur on a [H,W] map, radius ceil(3*sigma), kernel
// normalized to unit sum, reflected borders.
inline Tensor gaussian_filter(const Tensor& map, double sigma) {
    if (map.rank() != 2) throw ShapeError("gaussian_filter: want [H,W], got " + shape_str(map.shape()));
    if (!(sigma >= 0.0)) throw ContractError("gaussian_filter: sigma must be non-negative");
    long h = map.dim(0), w = map.dim(1);
    std::vector<double> out(map.data(), map.data() + map.size());
    if (sigma == 0.0) return Tensor::from_data(out, {h, w});

    long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long t = -radius; t <= radius; ++t) {
        double v = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
        kernel[static_cast<std::size_t>(t + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    // symmetric reflection with period 2n so radii larger than the map extent
    // still land in range (a 1x1 map must absorb the whole kernel)
    auto reflect = [](long i, long n) {
        long period = 2 * n;
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - 1 - i;
    };
    std::vector<double> tmp(out.size());
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       out[static_cast<std::size_t>(y * w + reflect(x + t, w))];
            tmp[static_cast<std::size_t>(y * w + x)] = acc;
        }
    for (long x = 0; x < w; ++x)
        for (long y = 0; y < h; ++y) {
            double acc = 0.0;
            for (long t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       tmp[static_cast<std::size_t>(reflect(y + t, h) * w + x)];
            out[static_cast<std::size_t>(y * w + x)] = acc;
        }
    return Tensor::from_data(out, {h, w});
}

// Linear ramp from white down to a deep red (0.7, 0, 0), rounded half-up.
inline std::array<unsigned char, 3> reds_colormap(double v) {
    if (!(v >= 0.0 && v <= 1.0))
        throw ContractError("reds_colormap: value " + std::to_string(v) + " outside [0, 1]");
    auto to_byte = [](double channel) {
        return static_cast<unsigned char>(std::floor(255.0 * channel + 0.5));
    };
    unsigned char gb = to_byte(1.0 - v);
    return {to_byte(1.0 - 0.3 * v), gb, gb};
}

struct RgbImage {
    long h = 0, w = 0;
    std::vector<unsigned char> bytes;  // 3 per pixel, row-major
};

inline RgbImage colorize(const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("colorize: want [H,W], got " + shape_str(map.shape()));
    RgbImage img;
    img.h = map.dim(0);
    img.w = map.dim(1);
    img.bytes.reserve(static_cast<std::size_t>(3 * map.size()));
    const double* p = map.data();
    for (long i = 0; i < map.size(); ++i) {
        std::array<unsigned char, 3> rgb = reds_colormap(p[i]);
        img.bytes.insert(img.bytes.end(), rgb.begin(), rgb.end());
    }
    return img;
}

// Binary P6 with a 255 maxval; the output is a pure function of the image.
inline void write_ppm(const std::string& path, const RgbImage& img) {
    if (img.h < 1 || img.w < 1 ||
        img.bytes.size() != static_cast<std::size_t>(3 * img.h * img.w))
        throw ContractError("write_ppm: image extents and byte count disagree");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("write_ppm: cannot open " + path + " for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.bytes.data()),
             static_cast<std::streamsize>(img.bytes.size()));
    if (!os) throw ConfigError("write_ppm: write to " + path + " failed");
}

}  // namespace loasp
