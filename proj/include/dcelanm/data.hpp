#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcelanm/rng.hpp"
#include "dcelanm/tensor.hpp"

namespace dcelanm {

/// One (image, binary mask) pair in canonical layout: image [3,H,W] in [0,1],
/// mask [1,H,W] with values in {0,1}, matching spatial dims.
struct SegSample {
    Tensor<float> image;
    Tensor<float> mask;
    std::string id;
};

/// Image loads scale to [0,1]; grayscale replicates to 3 channels.
Tensor<float> load_image_png(const std::string& path);

/// Masks binarize at 127/255 (RGB masks are averaged first).
Tensor<float> load_mask_png(const std::string& path);

void save_image_png(const Tensor<float>& image, const std::string& path);

/// Binary mask written as 8-bit gray {0,255}; save then load round-trips
/// bitwise for binary masks.
void save_mask_png(const Tensor<float>& mask, const std::string& path);

struct DatasetManifest {
    struct Entry {
        std::string id;
        std::string image_path;  // absolute after loading
        std::string mask_path;
    };
    std::vector<Entry> entries;
};

/// TSV manifest: `id<TAB>image<TAB>mask` per line, paths relative to the
/// manifest's directory.
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const DatasetManifest& m, const std::string& path);

/// images/ and masks/ subdirectories with matching filenames.
DatasetManifest scan_image_mask_dir(const std::string& dir);

/// Loads either a manifest.tsv or an images/+masks/ layout.
DatasetManifest open_dataset(const std::string& dir_or_manifest);

// ---- preprocessing (runs outside the autodiff tape) ----

/// General bilinear resize of [C,H,W], align-corners=false. Returns a copy
/// when the size is unchanged.
Tensor<float> resize_bilinear(const Tensor<float>& img, int64_t out_h, int64_t out_w);

/// Nearest-neighbor resize (keeps masks binary).
Tensor<float> resize_nearest(const Tensor<float>& img, int64_t out_h, int64_t out_w);

/// Zero-pad the shorter axis symmetrically to a square (odd split: extra row/
/// column at bottom/right), then resize to side x side (bilinear image,
/// nearest mask). Idempotent on its own output.
SegSample pad_to_square_resize(const SegSample& s, int64_t side = 256);

/// Inverse of pad_to_square_resize for predictions: side x side map back to
/// the original resolution (bilinear to the padded square, then crop).
Tensor<float> invert_pad_to_square(const Tensor<float>& pred, int64_t orig_h, int64_t orig_w);

/// Admissible multi-scale training sides: multiples of 32 in [192, 320].
const std::vector<int64_t>& multiscale_sides();
int64_t draw_multiscale_side(Rng& rng);

/// Resize a canonical 256 sample to a randomly drawn admissible side.
SegSample multiscale_resize(const SegSample& s, Rng& rng);

// ---- synthetic data ----

/// Blobby synthetic segmentation samples: 1-3 filled random ellipses with
/// smooth intensity bumps over a textured gradient background; the mask is
/// exactly the analytic ellipse-union indicator. Foreground fraction is
/// rejected into [2%, 40%]. Per-sample streams fork from (rng, index).
std::vector<SegSample> synth_dataset(int64_t n, int64_t side, Rng& rng);

/// Writes images/, masks/ and manifest.tsv under dir.
void write_synth_dataset(const std::string& dir, int64_t n, int64_t side, Rng& rng);

/// Lazy-loading dataset view over a manifest; samples come back already
/// pad-to-square-resized to `side`. Small datasets are cached in memory.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(DatasetManifest manifest, int64_t side = 256);

    size_t size() const { return manifest_.entries.size(); }
    const DatasetManifest& manifest() const { return manifest_; }
    SegSample canonical(size_t index) const;

private:
    DatasetManifest manifest_;
    int64_t side_ = 256;
    mutable std::vector<std::optional<SegSample>> cache_;
    bool cache_enabled_ = false;
};

}  // namespace dcelanm
