#pragma once

// Procedural retinal image generator for the domain-generalization harness.
// Every sample is a 3x64x64 fundus-like image: a shaded disc, a handful of
// random-walk vessels, and lesions consistent with a severity grade. Geometry
// depends only on (global_seed, seed_index); the domain contributes style
// (gamma, blur, tint, noise, illumination, vessel thickness scale), so the
// same seed rendered under two domains shows the same anatomy restyled.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "loasp/common.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

constexpr long kImageChannels = 3;
constexpr long kImageSize = 64;
constexpr long kGradeCount = 5;

struct LesionInventory {
    long microaneurysms = 0;
    long hemorrhages = 0;
    long hard_exudates = 0;
    long soft_exudates = 0;
    long neovascular_tangles = 0;
};

// Severity ladder: any neovascular tangle dominates, then heavy bleeding or
// soft exudates, then any bleeding or hard exudates, then microaneurysms.
inline long assign_grade(const LesionInventory& inv) {
    if (inv.microaneurysms < 0 || inv.hemorrhages < 0 || inv.hard_exudates < 0 ||
        inv.soft_exudates < 0 || inv.neovascular_tangles < 0)
        throw ContractError("assign_grade: lesion counts must be non-negative");
    if (inv.neovascular_tangles > 0) return 4;
    if (inv.hemorrhages >= 4 || inv.soft_exudates > 0) return 3;
    if (inv.hemorrhages > 0 || inv.hard_exudates > 0) return 2;
    if (inv.microaneurysms > 0) return 1;
    return 0;
}

struct DomainSpec {
    std::string domain_id;
    double gamma = 1.0;              // tone curve exponent, [0.5, 2]
    std::array<double, 3> tint{};    // additive per-channel shift, each in [-0.2, 0.2]
    double blur_sigma = 0.0;         // Gaussian blur in pixels, [0, 4]
    double noise_sigma = 0.0;        // additive Gaussian noise, [0, 0.1]
    double vessel_thickness = 1.0;   // multiplier on vessel width, (0, 3]
    double illumination = 0.0;       // linear shading gradient strength, [0, 0.5]
};

inline void validate_domain(const DomainSpec& d) {
    if (d.domain_id.empty()) throw ContractError("validate_domain: empty domain_id");
    if (!(d.gamma >= 0.5 && d.gamma <= 2.0))
        throw ContractError("validate_domain: gamma " + std::to_string(d.gamma) +
                            " outside [0.5, 2] for domain " + d.domain_id);
    for (double t : d.tint)
        if (!(t >= -0.2 && t <= 0.2))
            throw ContractError("validate_domain: tint " + std::to_string(t) +
                                " outside [-0.2, 0.2] for domain " + d.domain_id);
    if (!(d.blur_sigma >= 0.0 && d.blur_sigma <= 4.0))
        throw ContractError("validate_domain: blur_sigma " + std::to_string(d.blur_sigma) +
                            " outside [0, 4] for domain " + d.domain_id);
    if (!(d.noise_sigma >= 0.0 && d.noise_sigma <= 0.1))
        throw ContractError("validate_domain: noise_sigma " + std::to_string(d.noise_sigma) +
                            " outside [0, 0.1] for domain " + d.domain_id);
    if (!(d.vessel_thickness > 0.0 && d.vessel_thickness <= 3.0))
        throw ContractError("validate_domain: vessel_thickness " +
                            std::to_string(d.vessel_thickness) + " outside (0, 3] for domain " +
                            d.domain_id);
    if (!(d.illumination >= 0.0 && d.illumination <= 0.5))
        throw ContractError("validate_domain: illumination " + std::to_string(d.illumination) +
                            " outside [0, 0.5] for domain " + d.domain_id);
}

inline const std::vector<std::string>& builtin_domain_ids() {
    static const std::vector<std::string> ids = {"A", "B", "C", "D"};
    return ids;
}

inline DomainSpec builtin_domain(const std::string& id) {
    DomainSpec d;
    d.domain_id = id;
    if (id == "A") {
        d.gamma = 1.0;
        d.tint = {0.0, 0.0, 0.0};
        d.blur_sigma = 0.0;
        d.noise_sigma = 0.01;
        d.vessel_thickness = 1.0;
        d.illumination = 0.10;
    } else if (id == "B") {
        d.gamma = 1.4;
        d.tint = {0.08, -0.02, -0.05};
        d.blur_sigma = 0.8;
        d.noise_sigma = 0.03;
        d.vessel_thickness = 1.3;
        d.illumination = 0.25;
    } else if (id == "C") {
        d.gamma = 0.7;
        d.tint = {-0.05, 0.06, 0.02};
        d.blur_sigma = 0.4;
        d.noise_sigma = 0.06;
        d.vessel_thickness = 0.8;
        d.illumination = 0.40;
    } else if (id == "D") {
        d.gamma = 1.8;
        d.tint = {0.03, 0.03, -0.08};
        d.blur_sigma = 1.2;
        d.noise_sigma = 0.09;
        d.vessel_thickness = 1.6;
        d.illumination = 0.15;
    } else {
        throw ConfigError("builtin_domain: unknown domain '" + id + "', expected one of A, B, C, D");
    }
    validate_domain(d);
    return d;
}

struct SyntheticSample {
    Tensor image;  // [3, 64, 64], values in [0, 1]
    long grade = 0;
    LesionInventory inventory;
    std::string domain_id;
    long seed_index = 0;
};

namespace detail {

// Stamps max(existing, 1 - dist/(radius + 0.5)) around a point; vessels and
// tangles accumulate into an intensity mask this way so crossings don't darken
// twice.
inline void stamp_soft_disc(std::vector<double>& mask, double px, double py, double radius) {
    long lo_y = static_cast<long>(std::floor(py - radius - 1));
    long hi_y = static_cast<long>(std::ceil(py + radius + 1));
    long lo_x = static_cast<long>(std::floor(px - radius - 1));
    long hi_x = static_cast<long>(std::ceil(px + radius + 1));
    for (long y = std::max(0L, lo_y); y <= std::min(kImageSize - 1, hi_y); ++y) {
        for (long x = std::max(0L, lo_x); x <= std::min(kImageSize - 1, hi_x); ++x) {
            double dx = static_cast<double>(x) - px;
            double dy = static_cast<double>(y) - py;
            double m = 1.0 - std::sqrt(dx * dx + dy * dy) / (radius + 0.5);
            if (m > 0.0) {
                std::size_t at = static_cast<std::size_t>(y * kImageSize + x);
                if (m > mask[at]) mask[at] = m;
            }
        }
    }
}

// Additive blob with quadratic falloff, used for the lesion delta field.
inline void stamp_blob(std::vector<double>& field, double px, double py, double radius,
                       double delta) {
    long lo_y = static_cast<long>(std::floor(py - radius));
    long hi_y = static_cast<long>(std::ceil(py + radius));
    long lo_x = static_cast<long>(std::floor(px - radius));
    long hi_x = static_cast<long>(std::ceil(px + radius));
    for (long y = std::max(0L, lo_y); y <= std::min(kImageSize - 1, hi_y); ++y) {
        for (long x = std::max(0L, lo_x); x <= std::min(kImageSize - 1, hi_x); ++x) {
            double dx = static_cast<double>(x) - px;
            double dy = static_cast<double>(y) - py;
            double q = (dx * dx + dy * dy) / (radius * radius);
            if (q < 1.0) field[static_cast<std::size_t>(y * kImageSize + x)] += delta * (1.0 - q);
        }
    }
}

// In-place separable Gaussian blur with reflected borders on one 64x64 plane.
inline void blur_plane(std::vector<double>& plane, double sigma) {
    if (sigma <= 0.0) return;
    long radius = static_cast<long>(std::ceil(2.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long t = -radius; t <= radius; ++t) {
        double v = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
        kernel[static_cast<std::size_t>(t + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    auto reflect = [](long i) {
        if (i < 0) return -i - 1;
        if (i >= kImageSize) return 2 * kImageSize - 1 - i;
        return i;
    };
    std::vector<double> tmp(plane.size());
    for (long y = 0; y < kImageSize; ++y)
        for (long x = 0; x < kImageSize; ++x) {
            double acc = 0.0;
            for (long t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       plane[static_cast<std::size_t>(y * kImageSize + reflect(x + t))];
            tmp[static_cast<std::size_t>(y * kImageSize + x)] = acc;
        }
    for (long x = 0; x < kImageSize; ++x)
        for (long y = 0; y < kImageSize; ++y) {
            double acc = 0.0;
            for (long t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       tmp[static_cast<std::size_t>(reflect(y + t) * kImageSize + x)];
            plane[static_cast<std::size_t>(y * kImageSize + x)] = acc;
        }
}

// Draws lesion counts that land exactly on the requested grade. The geometry
// stream decides the counts so the same seed produces the same pathology in
// every domain.
inline LesionInventory draw_inventory(Rng& geo, long grade_target) {
    LesionInventory inv;
    switch (grade_target) {
        case 0:
            break;
        case 1:
            inv.microaneurysms = 1 + static_cast<long>(geo.next_below(3));
            break;
        case 2:
            inv.microaneurysms = static_cast<long>(geo.next_below(3));
            if (geo.next_below(2) == 0)
                inv.hemorrhages = 1 + static_cast<long>(geo.next_below(3));
            else
                inv.hard_exudates = 1 + static_cast<long>(geo.next_below(2));
            break;
        case 3:
            inv.microaneurysms = static_cast<long>(geo.next_below(3));
            inv.hard_exudates = static_cast<long>(geo.next_below(2));
            if (geo.next_below(2) == 0) {
                inv.soft_exudates = 1 + static_cast<long>(geo.next_below(2));
                inv.hemorrhages = static_cast<long>(geo.next_below(4));
            } else {
                inv.hemorrhages = 4 + static_cast<long>(geo.next_below(3));
            }
            break;
        case 4:
            inv.neovascular_tangles = 1 + static_cast<long>(geo.next_below(2));
            inv.microaneurysms = static_cast<long>(geo.next_below(3));
            inv.hemorrhages = static_cast<long>(geo.next_below(6));
            inv.hard_exudates = static_cast<long>(geo.next_below(3));
            inv.soft_exudates = static_cast<long>(geo.next_below(2));
            break;
        default:
            throw ContractError("draw_inventory: grade " + std::to_string(grade_target) +
                                " outside [0, 4]");
    }
    if (assign_grade(inv) != grade_target)
        throw ContractError("draw_inventory: drew an inventory of grade " +
                            std::to_string(assign_grade(inv)) + " instead of " +
                            std::to_string(grade_target));
    return inv;
}

}  // namespace detail

inline SyntheticSample generate_image(std::uint64_t global_seed, long seed_index, long grade_target,
                                      const DomainSpec& domain) {
    if (grade_target < 0 || grade_target >= kGradeCount)
        throw ContractError("generate_image: grade_target " + std::to_string(grade_target) +
                            " outside [0, " + std::to_string(kGradeCount - 1) + "]");
    validate_domain(domain);

    std::uint64_t geom_seed = splitmix64_finalize(global_seed ^ static_cast<std::uint64_t>(seed_index));
    Rng geo(geom_seed);
    Rng style(splitmix64_finalize(geom_seed ^ fnv1a64(domain.domain_id)));

    LesionInventory inv = detail::draw_inventory(geo, grade_target);

    const std::size_t plane = static_cast<std::size_t>(kImageSize * kImageSize);
    double cx = 31.5 + geo.uniform(-3.0, 3.0);
    double cy = 31.5 + geo.uniform(-3.0, 3.0);
    double disc_r = 23.0 + geo.uniform(0.0, 4.0);

    std::vector<double> shade(plane);
    for (long y = 0; y < kImageSize; ++y)
        for (long x = 0; x < kImageSize; ++x) {
            double dx = (static_cast<double>(x) - cx) / disc_r;
            double dy = (static_cast<double>(y) - cy) / disc_r;
            double d2 = dx * dx + dy * dy;
            shade[static_cast<std::size_t>(y * kImageSize + x)] =
                d2 <= 1.0 ? 0.55 - 0.25 * d2 : 0.05;
        }

    // Vessels: random walks from near the disc center outward. The walk itself
    // never reads the domain, only the stamped width does, so centerlines are
    // identical across domains.
    std::vector<double> vessel(plane, 0.0);
    long n_vessels = 3 + static_cast<long>(geo.next_below(5));
    for (long v = 0; v < n_vessels; ++v) {
        double angle = geo.uniform(0.0, 2.0 * 3.14159265358979323846);
        double r0 = geo.uniform(2.0, 5.0);
        double px = cx + r0 * std::cos(angle);
        double py = cy + r0 * std::sin(angle);
        double width = geo.uniform(0.8, 1.4) * domain.vessel_thickness;
        for (long step = 0; step < 60; ++step) {
            angle += geo.uniform(-0.35, 0.35);
            px += std::cos(angle);
            py += std::sin(angle);
            double ddx = (px - cx) / disc_r;
            double ddy = (py - cy) / disc_r;
            if (ddx * ddx + ddy * ddy > 1.05) break;
            detail::stamp_soft_disc(vessel, px, py, width);
        }
    }

    // Lesions, all placed within 0.8 of the disc radius.
    std::vector<double> lesions(plane, 0.0);
    auto place = [&geo, cx, cy, disc_r](double& px, double& py) {
        double rr = disc_r * std::sqrt(geo.uniform(0.0, 0.64));
        double aa = geo.uniform(0.0, 2.0 * 3.14159265358979323846);
        px = cx + rr * std::cos(aa);
        py = cy + rr * std::sin(aa);
    };
    for (long i = 0; i < inv.microaneurysms; ++i) {
        double px, py;
        place(px, py);
        detail::stamp_blob(lesions, px, py, geo.uniform(0.7, 1.3), -0.25);
    }
    for (long i = 0; i < inv.hemorrhages; ++i) {
        double px, py;
        place(px, py);
        detail::stamp_blob(lesions, px, py, geo.uniform(2.0, 3.8), -0.30);
    }
    for (long i = 0; i < inv.hard_exudates; ++i) {
        double px, py;
        place(px, py);
        detail::stamp_blob(lesions, px, py, geo.uniform(1.0, 2.4), 0.35);
    }
    for (long i = 0; i < inv.soft_exudates; ++i) {
        double px, py;
        place(px, py);
        detail::stamp_blob(lesions, px, py, geo.uniform(2.8, 4.6), 0.20);
    }
    for (long i = 0; i < inv.neovascular_tangles; ++i) {
        double px, py;
        place(px, py);
        double a = geo.uniform(0.0, 2.0 * 3.14159265358979323846);
        double qx = px, qy = py;
        for (long step = 0; step < 36; ++step) {
            a += geo.uniform(-1.1, 1.1);
            qx += 0.7 * std::cos(a);
            qy += 0.7 * std::sin(a);
            double lx = qx - px, ly = qy - py;
            double lim = 4.5;
            if (lx * lx + ly * ly > lim * lim) {
                qx = px;
                qy = py;
            }
            detail::stamp_soft_disc(vessel, qx, qy, 0.8 * domain.vessel_thickness);
        }
    }

    // Grayscale structure, capped below 0.95 so additive style stays in range.
    std::vector<double> gray(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        double s = shade[i] - 0.38 * vessel[i] + lesions[i];
        gray[i] = std::min(0.9, std::max(0.0, s));
    }

    // Style: red-dominant coloring, tone curve, blur, illumination gradient,
    // tint, then noise. The gradient direction comes from the style stream.
    const double weights[3] = {0.95, 0.62, 0.40};
    double light_angle = style.uniform(0.0, 2.0 * 3.14159265358979323846);
    double ux = std::cos(light_angle), uy = std::sin(light_angle);

    // The affine envelope keeps styled values away from the [0, 1] clamp rails,
    // so a tint of built-in magnitude shifts the channel mean by exactly the
    // tint rather than saturating on dark background pixels.
    std::vector<double> img(static_cast<std::size_t>(kImageChannels) * plane);
    for (long c = 0; c < kImageChannels; ++c) {
        std::vector<double> ch(plane);
        for (std::size_t i = 0; i < plane; ++i)
            ch[i] = 0.18 + 0.62 * std::pow(weights[c] * gray[i], domain.gamma);
        detail::blur_plane(ch, domain.blur_sigma);
        for (long y = 0; y < kImageSize; ++y)
            for (long x = 0; x < kImageSize; ++x) {
                double fx = static_cast<double>(x) / (kImageSize - 1) - 0.5;
                double fy = static_cast<double>(y) / (kImageSize - 1) - 0.5;
                std::size_t at = static_cast<std::size_t>(y * kImageSize + x);
                ch[at] *= 1.0 + domain.illumination * (ux * fx + uy * fy);
                ch[at] += domain.tint[static_cast<std::size_t>(c)];
            }
        for (std::size_t i = 0; i < plane; ++i)
            img[static_cast<std::size_t>(c) * plane + i] = ch[i];
    }
    if (domain.noise_sigma > 0.0)
        for (double& v : img) v += domain.noise_sigma * style.gaussian();
    for (double& v : img) v = std::min(1.0, std::max(0.0, v));

    SyntheticSample out;
    out.image = Tensor::from_data(img, {kImageChannels, kImageSize, kImageSize});
    out.grade = grade_target;
    out.inventory = inv;
    out.domain_id = domain.domain_id;
    out.seed_index = seed_index;
    return out;
}

// Draws the grade uniformly from a stream tied to (global_seed, seed_index),
// so a sample's grade never depends on generation order or batching.
inline SyntheticSample generate_sample(std::uint64_t global_seed, long seed_index,
                                       const DomainSpec& domain) {
    Rng pick(splitmix64_finalize(splitmix64_finalize(global_seed ^ static_cast<std::uint64_t>(seed_index)) ^
                                 0xa5a5a5a5a5a5a5a5ULL));
    long grade = static_cast<long>(pick.next_below(kGradeCount));
    return generate_image(global_seed, seed_index, grade, domain);
}

inline std::vector<SyntheticSample> generate_dataset(std::uint64_t global_seed,
                                                     const DomainSpec& domain, long count,
                                                     long first_index) {
    if (count < 0) throw ContractError("generate_dataset: negative count");
    std::vector<SyntheticSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i)
        out.push_back(generate_sample(global_seed, first_index + i, domain));
    return out;
}

// Dataset container format, little-endian throughout:
//   magic "LODG1\n", then u32 sample count, u32 channels, u32 height, u32 width,
//   then per sample: u32 id length, id bytes, i64 seed index, u32 grade,
//   5 x u32 lesion counts, channels*height*width f32 pixels.
namespace detail {

inline void ds_write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void ds_write_i64(std::ostream& os, std::int64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t ds_read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ConfigError("read_dataset: truncated file " + path);
    return v;
}

inline std::int64_t ds_read_i64(std::istream& is, const std::string& path) {
    std::int64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
        throw ConfigError("read_dataset: truncated file " + path);
    return v;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const std::vector<SyntheticSample>& samples) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("write_dataset: cannot open " + path + " for writing");
    os.write("LODG1\n", 6);
    detail::ds_write_u32(os, static_cast<std::uint32_t>(samples.size()));
    detail::ds_write_u32(os, static_cast<std::uint32_t>(kImageChannels));
    detail::ds_write_u32(os, static_cast<std::uint32_t>(kImageSize));
    detail::ds_write_u32(os, static_cast<std::uint32_t>(kImageSize));
    for (const SyntheticSample& s : samples) {
        if (s.image.rank() != 3 || s.image.dim(0) != kImageChannels ||
            s.image.dim(1) != kImageSize || s.image.dim(2) != kImageSize)
            throw ContractError("write_dataset: sample image has shape " + shape_str(s.image.shape()));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.domain_id.size()));
        os.write(s.domain_id.data(), static_cast<std::streamsize>(s.domain_id.size()));
        detail::ds_write_i64(os, s.seed_index);
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.grade));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.inventory.microaneurysms));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.inventory.hemorrhages));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.inventory.hard_exudates));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.inventory.soft_exudates));
        detail::ds_write_u32(os, static_cast<std::uint32_t>(s.inventory.neovascular_tangles));
        const double* p = s.image.data();
        for (long i = 0; i < s.image.size(); ++i) {
            float f = static_cast<float>(p[i]);
            os.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
    }
    if (!os) throw ConfigError("write_dataset: write to " + path + " failed");
}

inline std::vector<SyntheticSample> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("read_dataset: cannot open " + path);
    char magic[6] = {};
    if (!is.read(magic, 6) || std::memcmp(magic, "LODG1\n", 6) != 0)
        throw ConfigError("read_dataset: " + path + " is not a LODG1 dataset");
    std::uint32_t count = detail::ds_read_u32(is, path);
    std::uint32_t channels = detail::ds_read_u32(is, path);
    std::uint32_t height = detail::ds_read_u32(is, path);
    std::uint32_t width = detail::ds_read_u32(is, path);
    if (channels != kImageChannels || height != kImageSize || width != kImageSize)
        throw ConfigError("read_dataset: " + path + " declares unsupported image shape " +
                          std::to_string(channels) + "x" + std::to_string(height) + "x" +
                          std::to_string(width));

    std::vector<SyntheticSample> out;
    out.reserve(count);
    const std::size_t plane = static_cast<std::size_t>(kImageChannels) *
                              static_cast<std::size_t>(kImageSize) *
                              static_cast<std::size_t>(kImageSize);
    for (std::uint32_t n = 0; n < count; ++n) {
        SyntheticSample s;
        std::uint32_t id_len = detail::ds_read_u32(is, path);
        if (id_len > 4096) throw ConfigError("read_dataset: implausible domain id length in " + path);
        s.domain_id.resize(id_len);
        if (id_len > 0 && !is.read(s.domain_id.data(), id_len))
            throw ConfigError("read_dataset: truncated file " + path);
        s.seed_index = static_cast<long>(detail::ds_read_i64(is, path));
        s.grade = static_cast<long>(detail::ds_read_u32(is, path));
        s.inventory.microaneurysms = static_cast<long>(detail::ds_read_u32(is, path));
        s.inventory.hemorrhages = static_cast<long>(detail::ds_read_u32(is, path));
        s.inventory.hard_exudates = static_cast<long>(detail::ds_read_u32(is, path));
        s.inventory.soft_exudates = static_cast<long>(detail::ds_read_u32(is, path));
        s.inventory.neovascular_tangles = static_cast<long>(detail::ds_read_u32(is, path));
        if (s.grade != assign_grade(s.inventory))
            throw ConfigError("read_dataset: sample " + std::to_string(n) + " in " + path +
                              " has grade " + std::to_string(s.grade) +
                              " inconsistent with its lesion counts");
        std::vector<double> img(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            float f = 0.0f;
            if (!is.read(reinterpret_cast<char*>(&f), sizeof f))
                throw ConfigError("read_dataset: truncated file " + path);
            img[i] = static_cast<double>(f);
        }
        s.image = Tensor::from_data(img, {kImageChannels, kImageSize, kImageSize});
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace loasp
