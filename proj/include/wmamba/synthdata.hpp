// Procedural corpus: "real" images are smooth gradient composites with thin
// anti-aliased elliptical contour arcs; "fake" counterparts blend an affine-
// warped, color-jittered copy of an elliptical region back into the source
// across a feathered boundary. Every sample is a pure function of its seed.
#pragma once

#include <filesystem>

#include "wmamba/serialize.hpp"

namespace wmamba {

struct synth_sample {
    tensor<float> image;    // [3,S,S], values in [0,1]
    int label = 0;          // 0 real, 1 fake
    tensor<float> mask;     // [1,S,S] feathered blend mask; fakes only
    tensor<float> contour;  // [1,S,S] 0/1 raster of drawn arcs; reals only
    uint64_t seed = 0;
};

namespace detail {

struct plane_image {
    size_t size = 0;
    std::vector<double> ch[3];  // [S*S] each
    explicit plane_image(size_t s) : size(s) {
        for (auto& c : ch) c.assign(s * s, 0.0);
    }
};

inline double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// clamp-to-edge bilinear lookup on a double plane
inline double sample_clamped(const std::vector<double>& p, size_t S, double x,
                             double y) {
    x = std::clamp(x, 0.0, double(S - 1));
    y = std::clamp(y, 0.0, double(S - 1));
    const size_t x0 = size_t(x), y0 = size_t(y);
    const size_t x1 = std::min(x0 + 1, S - 1), y1 = std::min(y0 + 1, S - 1);
    const double wx = x - double(x0), wy = y - double(y0);
    return (1 - wy) * ((1 - wx) * p[y0 * S + x0] + wx * p[y0 * S + x1]) +
           wy * ((1 - wx) * p[y1 * S + x0] + wx * p[y1 * S + x1]);
}

inline void draw_arc(plane_image& img, std::vector<double>& cov_out, rng& r) {
    const size_t S = img.size;
    const double cx = r.uniform(0.2 * S, 0.8 * S);
    const double cy = r.uniform(0.2 * S, 0.8 * S);
    const double a = r.uniform(0.12 * S, 0.45 * S);
    const double b = r.uniform(0.12 * S, 0.45 * S);
    const double phi = r.uniform(0, 3.14159265358979);
    const double t0 = r.uniform(0, 6.28318530717959);
    const double span = r.uniform(0.6 * 3.14159265358979, 1.8 * 3.14159265358979);
    const double half_w = r.uniform(0.4, 0.9);  // total thickness ~1-2 px
    const double alpha = r.uniform(0.75, 1.0);
    const double mag = r.uniform(0.3, 0.55);
    const double sign = r.next_double() < 0.5 ? -1.0 : 1.0;
    double shade[3];
    for (auto& s : shade) s = sign * mag * r.uniform(0.8, 1.2);

    std::vector<double> cov(S * S, 0.0);
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    const size_t steps = size_t(span * std::max(a, b) / 0.3) + 2;
    for (size_t i = 0; i <= steps; ++i) {
        const double t = t0 + span * double(i) / double(steps);
        const double ex = a * std::cos(t), ey = b * std::sin(t);
        const double px = cx + ex * cphi - ey * sphi;
        const double py = cy + ex * sphi + ey * cphi;
        const long x_lo = std::max(0L, long(std::floor(px - half_w - 1)));
        const long x_hi = std::min(long(S) - 1, long(std::ceil(px + half_w + 1)));
        const long y_lo = std::max(0L, long(std::floor(py - half_w - 1)));
        const long y_hi = std::min(long(S) - 1, long(std::ceil(py + half_w + 1)));
        for (long y = y_lo; y <= y_hi; ++y)
            for (long x = x_lo; x <= x_hi; ++x) {
                const double d = std::hypot(double(x) - px, double(y) - py);
                const double c = std::clamp(half_w + 0.5 - d, 0.0, 1.0);
                auto& cell = cov[size_t(y) * S + size_t(x)];
                if (c > cell) cell = c;
            }
    }
    for (size_t i = 0; i < S * S; ++i) {
        const double c = cov[i] * alpha;
        if (c <= 0) continue;
        for (int k = 0; k < 3; ++k) {
            const double target = std::clamp(img.ch[k][i] + shade[k], 0.0, 1.0);
            img.ch[k][i] = img.ch[k][i] * (1 - c) + target * c;
        }
        if (cov[i] > 0.5) cov_out[i] = 1.0;
    }
}

inline tensor<float> planes_to_tensor(const plane_image& img) {
    const size_t S = img.size;
    std::vector<float> data(3 * S * S);
    for (int k = 0; k < 3; ++k)
        for (size_t i = 0; i < S * S; ++i)
            data[size_t(k) * S * S + i] = float(std::clamp(img.ch[k][i], 0.0, 1.0));
    return tensor<float>::constant({3, S, S}, std::move(data));
}

}  // namespace detail

// Deterministic per seed: gradients and arcs are drawn from fixed RNG streams
// keyed by (seed, purpose).
inline synth_sample generate_real(uint64_t seed, size_t size) {
    check(size >= 32 && size % 2 == 0, "generate_real: size must be even and >= 32");
    const size_t S = size;
    detail::plane_image img(S);

    rng bg(seed, 0);
    double base[3];
    for (auto& b : base) b = bg.uniform(0.35, 0.65);
    for (int k = 0; k < 3; ++k)
        for (auto& v : img.ch[k]) v = base[k];

    const size_t blobs = 2 + bg.next_below(3);  // 2..4
    for (size_t bi = 0; bi < blobs; ++bi) {
        const double cx = bg.uniform(0, double(S));
        const double cy = bg.uniform(0, double(S));
        const double sx = bg.uniform(0.25 * S, 0.7 * S);
        const double sy = bg.uniform(0.25 * S, 0.7 * S);
        const double phi = bg.uniform(0, 3.14159265358979);
        double amp[3];
        for (auto& a : amp) a = bg.uniform(-0.22, 0.22);
        const double cp = std::cos(phi), sp = std::sin(phi);
        for (size_t y = 0; y < S; ++y)
            for (size_t x = 0; x < S; ++x) {
                const double dx = double(x) - cx, dy = double(y) - cy;
                const double u = (dx * cp + dy * sp) / sx;
                const double v = (-dx * sp + dy * cp) / sy;
                const double g = std::exp(-0.5 * (u * u + v * v));
                const size_t i = y * S + x;
                for (int k = 0; k < 3; ++k) img.ch[k][i] += amp[k] * g;
            }
    }
    // soft range normalization, keeps everything smooth
    double lo = 1e9, hi = -1e9;
    for (int k = 0; k < 3; ++k)
        for (double v : img.ch[k]) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (lo < 0.06 || hi > 0.94) {
        const double scale = (0.94 - 0.06) / std::max(hi - lo, 1e-9);
        for (int k = 0; k < 3; ++k)
            for (auto& v : img.ch[k]) v = 0.06 + (v - lo) * scale;
    }

    // low-frequency noise: coarse gaussian grid, C1-smooth upsampling
    rng nz(seed, 1);
    const size_t G = 6;
    std::vector<double> grid((G + 1) * (G + 1));
    for (auto& g : grid) g = 0.02 * nz.gaussian();
    for (size_t y = 0; y < S; ++y)
        for (size_t x = 0; x < S; ++x) {
            const double u = double(x) / double(S - 1) * G;
            const double v = double(y) / double(S - 1) * G;
            const size_t u0 = std::min(size_t(u), G - 1), v0 = std::min(size_t(v), G - 1);
            const double fu = detail::smoothstep01(u - double(u0));
            const double fv = detail::smoothstep01(v - double(v0));
            const double g00 = grid[v0 * (G + 1) + u0], g01 = grid[v0 * (G + 1) + u0 + 1];
            const double g10 = grid[(v0 + 1) * (G + 1) + u0],
                         g11 = grid[(v0 + 1) * (G + 1) + u0 + 1];
            const double n =
                (1 - fv) * ((1 - fu) * g00 + fu * g01) + fv * ((1 - fu) * g10 + fu * g11);
            const size_t i = y * S + x;
            for (int k = 0; k < 3; ++k) img.ch[k][i] += n;
        }

    rng arcs(seed, 2);
    std::vector<double> contour(S * S, 0.0);
    const size_t n_arcs = 2 + arcs.next_below(3);  // 2..4
    for (size_t i = 0; i < n_arcs; ++i) detail::draw_arc(img, contour, arcs);

    synth_sample sample;
    sample.image = detail::planes_to_tensor(img);
    sample.label = 0;
    sample.seed = seed;
    std::vector<float> cm(S * S);
    for (size_t i = 0; i < S * S; ++i) cm[i] = float(contour[i]);
    sample.contour = tensor<float>::constant({1, S, S}, std::move(cm));
    return sample;
}

// Self-blend: an elliptical region of the source is affine-warped, color
// jittered and alpha-blended back across a feathered boundary. Outside the
// mask support the result equals the source bit-exactly.
inline synth_sample generate_fake(const synth_sample& real, uint64_t seed) {
    check(real.label == 0, "generate_fake: input must be a real sample");
    const size_t S = real.image.size(1);
    const auto& src = real.image.data();

    std::vector<double> srcd[3];
    for (int k = 0; k < 3; ++k) {
        srcd[k].resize(S * S);
        for (size_t i = 0; i < S * S; ++i) srcd[k][i] = double(src[size_t(k) * S * S + i]);
    }

    for (uint64_t attempt = 0;; ++attempt) {
        check(attempt < 16, "generate_fake: rejected 16 degenerate draws in a row");
        rng rg(seed + attempt, 3);

        const double cx = rg.uniform(0.3 * S, 0.7 * S);
        const double cy = rg.uniform(0.3 * S, 0.7 * S);
        const double a = rg.uniform(double(S) / 6.0, double(S) / 3.0);
        const double b = rg.uniform(double(S) / 6.0, double(S) / 3.0);
        const double phi = rg.uniform(0, 3.14159265358979);
        const double feather = rg.uniform(1.0, 2.0);

        // whole-pixel translation keeps the copy sharp (no resampling loss),
        // so the blend ring and the misaligned content carry the artifact
        const double tx = (rg.next_double() < 0.5 ? -1.0 : 1.0) *
                          double(1 + rg.next_below(2));
        const double ty = (rg.next_double() < 0.5 ? -1.0 : 1.0) *
                          double(1 + rg.next_below(2));
        const double ang = 0.0;
        const double sc = 1.0;

        double gain[3], bright[3];
        for (int k = 0; k < 3; ++k) {
            gain[k] = rg.uniform(0.90, 1.10);
            bright[k] = rg.uniform(-0.05, 0.05);
        }
        const double contrast = rg.uniform(0.92, 1.08);
        const double noise_sigma = rg.uniform(0.012, 0.024);

        const double cphi = std::cos(phi), sphi = std::sin(phi);
        const double ca = std::cos(ang), sa = std::sin(ang);
        const double min_ab = std::min(a, b);

        std::vector<float> out(3 * S * S);
        std::vector<float> mask(S * S, 0.0f);
        double diff_sum = 0.0;
        size_t diff_count = 0;
        for (size_t y = 0; y < S; ++y)
            for (size_t x = 0; x < S; ++x) {
                const size_t i = y * S + x;
                const double dx = double(x) - cx, dy = double(y) - cy;
                const double u = (dx * cphi + dy * sphi) / a;
                const double v = (-dx * sphi + dy * cphi) / b;
                const double sd = (std::sqrt(u * u + v * v) - 1.0) * min_ab;
                if (sd >= 0.0) {  // outside: copy source bits untouched
                    for (int k = 0; k < 3; ++k)
                        out[size_t(k) * S * S + i] = src[size_t(k) * S * S + i];
                    continue;
                }
                const double m = detail::smoothstep01(-sd / feather);
                mask[i] = float(m);
                // inverse affine about the region center, clamp-to-edge lookup
                const double rx = (dx * ca + dy * sa) / sc + cx - tx;
                const double ry = (-dx * sa + dy * ca) / sc + cy - ty;
                ++diff_count;
                const double nz = noise_sigma * rg.gaussian();
                for (int k = 0; k < 3; ++k) {
                    const double w = detail::sample_clamped(srcd[k], S, rx, ry);
                    double j = 0.5 + (w * gain[k] + bright[k] - 0.5) * contrast + nz;
                    j = std::clamp(j, 0.0, 1.0);
                    const double blended = srcd[k][i] * (1.0 - m) + j * m;
                    out[size_t(k) * S * S + i] = float(std::clamp(blended, 0.0, 1.0));
                    diff_sum += std::abs(blended - srcd[k][i]);
                }
            }
        if (diff_count == 0 || diff_sum / double(3 * diff_count) < 1e-3)
            continue;  // degenerate: warp+jitter hit near-identity, resample

        synth_sample fake;
        fake.image = tensor<float>::constant({3, S, S}, std::move(out));
        fake.label = 1;
        fake.seed = seed + attempt;
        fake.mask = tensor<float>::constant({1, S, S}, std::move(mask));
        return fake;
    }
}

// High-pass residual energy after a 3x3 box filter (edge replicated); the
// cheap baseline score that the corpus is required to defeat.
inline double mean3_residual_score(const tensor<float>& image) {
    const size_t C = image.size(0), S = image.size(1);
    const auto& d = image.data();
    double acc = 0;
    for (size_t c = 0; c < C; ++c) {
        const float* p = d.data() + c * S * S;
        for (size_t y = 0; y < S; ++y)
            for (size_t x = 0; x < S; ++x) {
                double m = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const size_t yy = size_t(std::clamp(long(y) + dy, 0L, long(S) - 1));
                        const size_t xx = size_t(std::clamp(long(x) + dx, 0L, long(S) - 1));
                        m += double(p[yy * S + xx]);
                    }
                acc += std::abs(double(p[y * S + x]) - m / 9.0);
            }
    }
    return acc / double(C * S * S);
}

// ---------------------------------------------------------------------------
// Corpus on disk: interleaved real/fake .tns images plus a manifest of
// "relative_path<TAB>label<TAB>seed" lines and a trailing fingerprint.
// ---------------------------------------------------------------------------

struct corpus_entry {
    std::string path;
    int label = 0;
    uint64_t seed = 0;
};

struct corpus_manifest {
    std::vector<corpus_entry> entries;
    std::string fingerprint;  // fnv1a-64 hex of all payloads in order
};

// In-memory generation; pair j yields (real, fake) with independent keys.
inline std::pair<synth_sample, synth_sample> generate_pair(uint64_t corpus_seed,
                                                           size_t pair_index,
                                                           size_t size) {
    const uint64_t rs = derive_key(corpus_seed, 2 * pair_index);
    const uint64_t fs = derive_key(corpus_seed, 2 * pair_index + 1);
    synth_sample real = generate_real(rs, size);
    synth_sample fake = generate_fake(real, fs);
    return {std::move(real), std::move(fake)};
}

inline corpus_manifest generate_corpus(size_t n, size_t size, uint64_t seed,
                                       const std::string& out_dir) {
    check(n >= 2 && n % 2 == 0, "generate_corpus: n must be even and >= 2, got ", n);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    check(!ec, "generate_corpus: cannot create directory ", out_dir);

    const size_t pairs = n / 2;
    std::vector<std::string> blobs(n);  // serialized .tns bytes per sample
    corpus_manifest man;
    man.entries.resize(n);
    parallel_for(pairs, [&](size_t lo, size_t hi) {
        for (size_t j = lo; j < hi; ++j) {
            auto [real, fake] = generate_pair(seed, j, size);
            for (int which = 0; which < 2; ++which) {
                const synth_sample& s = which == 0 ? real : fake;
                const size_t idx = 2 * j + size_t(which);
                char name[32];
                std::snprintf(name, sizeof(name), "img_%05zu.tns", idx);
                std::ostringstream os(std::ios::binary);
                write_tns(os, s.image);
                blobs[idx] = os.str();
                man.entries[idx] = {name, s.label, s.seed};
            }
        }
    });

    fnv1a hash;
    for (size_t i = 0; i < n; ++i) {
        hash.update(blobs[i].data(), blobs[i].size());
        const std::string full = out_dir + "/" + man.entries[i].path;
        std::ofstream os(full, std::ios::binary);
        check(bool(os), "generate_corpus: cannot open ", full);
        os.write(blobs[i].data(), std::streamsize(blobs[i].size()));
        check(bool(os), "generate_corpus: write failed for ", full);
    }
    man.fingerprint = hash.hex();

    const std::string man_path = out_dir + "/manifest.tsv";
    std::ofstream os(man_path);
    check(bool(os), "generate_corpus: cannot open ", man_path);
    for (const auto& e : man.entries)
        os << e.path << "\t" << e.label << "\t" << e.seed << "\n";
    os << "# fp=" << man.fingerprint << "\n";
    check(bool(os), "generate_corpus: write failed for ", man_path);
    return man;
}

inline corpus_manifest read_manifest(const std::string& dir) {
    const std::string man_path = dir + "/manifest.tsv";
    std::ifstream is(man_path);
    check(bool(is), "read_manifest: cannot open ", man_path);
    corpus_manifest man;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# fp=";
            if (line.rfind(tag, 0) == 0) man.fingerprint = line.substr(tag.size());
            continue;
        }
        const size_t t1 = line.find('\t');
        const size_t t2 = line.find('\t', t1 + 1);
        check(t1 != std::string::npos && t2 != std::string::npos,
              "read_manifest: bad line '", line, "'");
        corpus_entry e;
        e.path = line.substr(0, t1);
        e.label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
        e.seed = std::stoull(line.substr(t2 + 1));
        man.entries.push_back(std::move(e));
    }
    return man;
}

struct loaded_corpus {
    std::vector<tensor<float>> images;
    std::vector<int> labels;
    std::vector<std::string> paths;
    std::string fingerprint;
};

inline loaded_corpus load_corpus(const std::string& dir, bool verify_fingerprint = true) {
    const corpus_manifest man = read_manifest(dir);
    loaded_corpus out;
    fnv1a hash;
    for (const auto& e : man.entries) {
        const std::string full = dir + "/" + e.path;
        std::ifstream is(full, std::ios::binary);
        check(bool(is), "load_corpus: cannot open ", full);
        std::string bytes((std::istreambuf_iterator<char>(is)),
                          std::istreambuf_iterator<char>());
        hash.update(bytes.data(), bytes.size());
        std::istringstream ss(bytes, std::ios::binary);
        out.images.push_back(read_tns<float>(ss));
        out.labels.push_back(e.label);
        out.paths.push_back(e.path);
    }
    out.fingerprint = hash.hex();
    if (verify_fingerprint && !man.fingerprint.empty())
        check(out.fingerprint == man.fingerprint,
              "load_corpus: fingerprint mismatch in ", dir, " (manifest ",
              man.fingerprint, ", computed ", out.fingerprint, ")");
    return out;
}

}  // namespace wmamba
