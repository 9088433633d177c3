#include "dcelanm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcelanm/errors.hpp"
#include "dcelanm/png_io.hpp"

namespace fs = std::filesystem;

namespace dcelanm {

Tensor<float> load_image_png(const std::string& path) {
    ImageU8 img = read_png(path);
    Tensor<float> t({3, img.height, img.width});
    const float inv = 1.0f / 255.0f;
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                const int64_t sc = img.channels == 1 ? 0 : c;
                t[(c * img.height + y) * img.width + x] =
                    static_cast<float>(img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + sc)]) * inv;
            }
    return t;
}

Tensor<float> load_mask_png(const std::string& path) {
    ImageU8 img = read_png(path);
    Tensor<float> t({1, img.height, img.width});
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x) {
            int v = 0;
            for (int64_t c = 0; c < img.channels; ++c)
                v += img.pixels[static_cast<size_t>((y * img.width + x) * img.channels + c)];
            v /= static_cast<int>(img.channels);
            t[y * img.width + x] = v > 127 ? 1.0f : 0.0f;
        }
    return t;
}

void save_image_png(const Tensor<float>& image, const std::string& path) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DataError("save_image_png: expected [3,H,W]");
    ImageU8 img;
    img.height = image.dim(1);
    img.width = image.dim(2);
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(img.height * img.width * 3));
    for (int64_t y = 0; y < img.height; ++y)
        for (int64_t x = 0; x < img.width; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = image[(c * img.height + y) * img.width + x];
                v = std::min(1.0f, std::max(0.0f, v));
                img.pixels[static_cast<size_t>((y * img.width + x) * 3 + c)] =
                    static_cast<uint8_t>(std::lround(v * 255.0f));
            }
    write_png(path, img);
}

void save_mask_png(const Tensor<float>& mask, const std::string& path) {
    if (mask.rank() != 3 || mask.dim(0) != 1) throw DataError("save_mask_png: expected [1,H,W]");
    ImageU8 img;
    img.height = mask.dim(1);
    img.width = mask.dim(2);
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(img.height * img.width));
    for (int64_t i = 0; i < img.height * img.width; ++i)
        img.pixels[static_cast<size_t>(i)] = mask[i] > 0.5f ? 255 : 0;
    write_png(path, img);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    fs::path base = fs::path(path).parent_path();
    DatasetManifest m;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string id, img, msk;
        if (!std::getline(is, id, '\t') || !std::getline(is, img, '\t') || !std::getline(is, msk, '\t'))
            throw DataError("manifest " + path + " line " + std::to_string(lineno) + ": expected id<TAB>image<TAB>mask");
        for (const auto& e : m.entries)
            if (e.id == id) throw DataError("manifest " + path + ": duplicate id '" + id + "'");
        m.entries.push_back({id, (base / img).string(), (base / msk).string()});
    }
    if (m.entries.empty()) throw DataError("manifest " + path + " lists no samples");
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write manifest: " + path);
    fs::path base = fs::path(path).parent_path();
    for (const auto& e : m.entries) {
        f << e.id << "\t" << fs::relative(e.image_path, base).string() << "\t"
          << fs::relative(e.mask_path, base).string() << "\n";
    }
}

DatasetManifest scan_image_mask_dir(const std::string& dir) {
    fs::path images = fs::path(dir) / "images";
    fs::path masks = fs::path(dir) / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw DataError("dataset dir " + dir + " must contain images/ and masks/");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    DatasetManifest m;
    for (const auto& n : names) {
        fs::path mp = masks / n;
        if (!fs::exists(mp)) throw DataError("missing mask for image '" + n + "' in " + masks.string());
        m.entries.push_back({fs::path(n).stem().string(), (images / n).string(), mp.string()});
    }
    if (m.entries.empty()) throw DataError("no PNG images found under " + images.string());
    return m;
}

DatasetManifest open_dataset(const std::string& dir_or_manifest) {
    if (fs::is_regular_file(dir_or_manifest)) return load_manifest(dir_or_manifest);
    if (fs::is_directory(dir_or_manifest)) {
        fs::path mf = fs::path(dir_or_manifest) / "manifest.tsv";
        if (fs::exists(mf)) return load_manifest(mf.string());
        return scan_image_mask_dir(dir_or_manifest);
    }
    throw DataError("dataset path does not exist: " + dir_or_manifest);
}

namespace {

struct AxisMap {
    std::vector<int64_t> i0, i1;
    std::vector<float> w1;
};

AxisMap bilinear_axis(int64_t out_len, int64_t in_len) {
    AxisMap m;
    m.i0.resize(static_cast<size_t>(out_len));
    m.i1.resize(static_cast<size_t>(out_len));
    m.w1.resize(static_cast<size_t>(out_len));
    const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
    for (int64_t i = 0; i < out_len; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        double fl = std::floor(src);
        int64_t a = static_cast<int64_t>(fl);
        float f = static_cast<float>(src - fl);
        int64_t b = a + 1;
        a = std::clamp<int64_t>(a, 0, in_len - 1);
        b = std::clamp<int64_t>(b, 0, in_len - 1);
        m.i0[static_cast<size_t>(i)] = a;
        m.i1[static_cast<size_t>(i)] = b;
        m.w1[static_cast<size_t>(i)] = f;
    }
    return m;
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3) throw DataError("resize: expected [C,H,W]");
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (out_h == H && out_w == W) return img.clone();
    AxisMap ym = bilinear_axis(out_h, H), xm = bilinear_axis(out_w, W);
    Tensor<float> out({C, out_h, out_w});
    for (int64_t c = 0; c < C; ++c) {
        const float* plane = img.ptr() + c * H * W;
        float* oplane = out.ptr() + c * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
            const float* r0 = plane + ym.i0[static_cast<size_t>(y)] * W;
            const float* r1 = plane + ym.i1[static_cast<size_t>(y)] * W;
            const float fy = ym.w1[static_cast<size_t>(y)];
            float* orow = oplane + y * out_w;
            for (int64_t x = 0; x < out_w; ++x) {
                const int64_t a = xm.i0[static_cast<size_t>(x)], b = xm.i1[static_cast<size_t>(x)];
                const float fx = xm.w1[static_cast<size_t>(x)];
                const float top = r0[a] + fx * (r0[b] - r0[a]);
                const float bot = r1[a] + fx * (r1[b] - r1[a]);
                orow[x] = top + fy * (bot - top);
            }
        }
    }
    return out;
}

Tensor<float> resize_nearest(const Tensor<float>& img, int64_t out_h, int64_t out_w) {
    if (img.rank() != 3) throw DataError("resize: expected [C,H,W]");
    const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    if (out_h == H && out_w == W) return img.clone();
    std::vector<int64_t> ys(static_cast<size_t>(out_h)), xs(static_cast<size_t>(out_w));
    for (int64_t y = 0; y < out_h; ++y)
        ys[static_cast<size_t>(y)] =
            std::clamp<int64_t>(static_cast<int64_t>(std::floor((y + 0.5) * static_cast<double>(H) / out_h)), 0, H - 1);
    for (int64_t x = 0; x < out_w; ++x)
        xs[static_cast<size_t>(x)] =
            std::clamp<int64_t>(static_cast<int64_t>(std::floor((x + 0.5) * static_cast<double>(W) / out_w)), 0, W - 1);
    Tensor<float> out({C, out_h, out_w});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < out_h; ++y) {
            const float* row = img.ptr() + (c * H + ys[static_cast<size_t>(y)]) * W;
            float* orow = out.ptr() + (c * out_h + y) * out_w;
            for (int64_t x = 0; x < out_w; ++x) orow[x] = row[xs[static_cast<size_t>(x)]];
        }
    return out;
}

namespace {

Tensor<float> pad_hw(const Tensor<float>& t, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    const int64_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
    Tensor<float> out({C, H + top + bottom, W + left + right});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y) {
            const float* src = t.ptr() + (c * H + y) * W;
            float* dst = out.ptr() + (c * (H + top + bottom) + y + top) * (W + left + right) + left;
            std::copy(src, src + W, dst);
        }
    return out;
}

}  // namespace

SegSample pad_to_square_resize(const SegSample& s, int64_t side) {
    const int64_t H = s.image.dim(1), W = s.image.dim(2);
    if (s.mask.dim(1) != H || s.mask.dim(2) != W)
        throw DataError("sample '" + s.id + "': image and mask dims differ");
    const int64_t sq = std::max(H, W);
    const int64_t pv = sq - H, ph = sq - W;
    const int64_t top = pv / 2, bottom = pv - pv / 2;
    const int64_t left = ph / 2, right = ph - ph / 2;
    SegSample out;
    out.id = s.id;
    Tensor<float> img = (pv || ph) ? pad_hw(s.image, top, bottom, left, right) : s.image;
    Tensor<float> msk = (pv || ph) ? pad_hw(s.mask, top, bottom, left, right) : s.mask;
    out.image = resize_bilinear(img, side, side);
    out.mask = resize_nearest(msk, side, side);
    return out;
}

Tensor<float> invert_pad_to_square(const Tensor<float>& pred, int64_t orig_h, int64_t orig_w) {
    if (pred.rank() != 3) throw DataError("invert_pad_to_square: expected [C,side,side]");
    const int64_t sq = std::max(orig_h, orig_w);
    Tensor<float> up = resize_bilinear(pred, sq, sq);
    const int64_t pv = sq - orig_h, ph = sq - orig_w;
    const int64_t top = pv / 2, left = ph / 2;
    Tensor<float> out({pred.dim(0), orig_h, orig_w});
    for (int64_t c = 0; c < pred.dim(0); ++c)
        for (int64_t y = 0; y < orig_h; ++y) {
            const float* src = up.ptr() + (c * sq + y + top) * sq + left;
            float* dst = out.ptr() + (c * orig_h + y) * orig_w;
            std::copy(src, src + orig_w, dst);
        }
    return out;
}

const std::vector<int64_t>& multiscale_sides() {
    static const std::vector<int64_t> sides{192, 224, 256, 288, 320};
    return sides;
}

int64_t draw_multiscale_side(Rng& rng) {
    const auto& s = multiscale_sides();
    return s[static_cast<size_t>(rng.next_below(s.size()))];
}

SegSample multiscale_resize(const SegSample& s, Rng& rng) {
    const int64_t side = draw_multiscale_side(rng);
    SegSample out;
    out.id = s.id;
    out.image = resize_bilinear(s.image, side, side);
    out.mask = resize_nearest(s.mask, side, side);
    return out;
}

namespace {

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v <= 1.0;
    }
    double radius2(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v;
    }
};

}  // namespace

std::vector<SegSample> synth_dataset(int64_t n, int64_t side, Rng& rng) {
    if (n < 1) throw DataError("synth_dataset: n must be >= 1");
    std::vector<SegSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Rng r = rng.fork(static_cast<uint64_t>(i));
        SegSample s;
        s.id = "synth" + std::to_string(i);
        s.image = Tensor<float>({3, side, side});
        s.mask = Tensor<float>({1, side, side});

        // textured gradient background
        float base[3], gx[3], gy[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = static_cast<float>(0.20 + 0.15 * r.next_double());
            gx[c] = static_cast<float>(r.uniform(-0.12, 0.12));
            gy[c] = static_cast<float>(r.uniform(-0.12, 0.12));
        }

        // 1-3 ellipses, resampled until the union covers 2%..40%
        std::vector<Ellipse> blobs;
        const double lo = 0.02 * static_cast<double>(side * side);
        const double hi = 0.40 * static_cast<double>(side * side);
        for (int attempt = 0; attempt < 100; ++attempt) {
            blobs.clear();
            const int64_t nb = 1 + static_cast<int64_t>(r.next_below(3));
            for (int64_t k = 0; k < nb; ++k) {
                Ellipse e;
                e.cx = r.uniform(0.25, 0.75) * static_cast<double>(side);
                e.cy = r.uniform(0.25, 0.75) * static_cast<double>(side);
                e.a = r.uniform(0.06, 0.22) * static_cast<double>(side);
                e.b = r.uniform(0.06, 0.22) * static_cast<double>(side);
                const double t = r.uniform(0.0, 3.14159265358979323846);
                e.cos_t = std::cos(t);
                e.sin_t = std::sin(t);
                blobs.push_back(e);
            }
            int64_t count = 0;
            for (int64_t y = 0; y < side; ++y)
                for (int64_t x = 0; x < side; ++x)
                    for (const auto& e : blobs)
                        if (e.contains(x + 0.5, y + 0.5)) {
                            ++count;
                            break;
                        }
            if (count >= lo && count <= hi) break;
        }

        float amp[3];
        for (int c = 0; c < 3; ++c) amp[c] = static_cast<float>(0.40 + 0.15 * r.next_double());
        for (int64_t y = 0; y < side; ++y)
            for (int64_t x = 0; x < side; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                double best = 1e30;
                for (const auto& e : blobs) best = std::min(best, e.radius2(px, py));
                const bool fg = best <= 1.0;
                s.mask[y * side + x] = fg ? 1.0f : 0.0f;
                const float bump = fg ? static_cast<float>(1.0 - best) : 0.0f;
                for (int c = 0; c < 3; ++c) {
                    float v = base[c] + gx[c] * static_cast<float>(x) / static_cast<float>(side) +
                              gy[c] * static_cast<float>(y) / static_cast<float>(side);
                    v += amp[c] * bump;
                    v += static_cast<float>(r.normal()) * 0.015f;
                    s.image[(c * side + y) * side + x] = std::min(1.0f, std::max(0.0f, v));
                }
            }
        out.push_back(std::move(s));
    }
    return out;
}

void write_synth_dataset(const std::string& dir, int64_t n, int64_t side, Rng& rng) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    auto samples = synth_dataset(n, side, rng);
    DatasetManifest m;
    for (const auto& s : samples) {
        std::string img = (fs::path(dir) / "images" / (s.id + ".png")).string();
        std::string msk = (fs::path(dir) / "masks" / (s.id + ".png")).string();
        save_image_png(s.image, img);
        save_mask_png(s.mask, msk);
        m.entries.push_back({s.id, img, msk});
    }
    write_manifest(m, (fs::path(dir) / "manifest.tsv").string());
}

Dataset::Dataset(DatasetManifest manifest, int64_t side) : manifest_(std::move(manifest)), side_(side) {
    cache_enabled_ = manifest_.entries.size() <= 64;
    if (cache_enabled_) cache_.resize(manifest_.entries.size());
}

SegSample Dataset::canonical(size_t index) const {
    if (index >= manifest_.entries.size()) throw DataError("dataset index out of range");
    if (cache_enabled_ && cache_[index]) return *cache_[index];
    const auto& e = manifest_.entries[index];
    SegSample raw;
    raw.id = e.id;
    raw.image = load_image_png(e.image_path);
    raw.mask = load_mask_png(e.mask_path);
    if (raw.image.dim(1) != raw.mask.dim(1) || raw.image.dim(2) != raw.mask.dim(2))
        throw DataError("sample '" + e.id + "': image and mask dims differ");
    SegSample canon = pad_to_square_resize(raw, side_);
    if (cache_enabled_) cache_[index] = canon;
    return canon;
}

}  // namespace dcelanm
