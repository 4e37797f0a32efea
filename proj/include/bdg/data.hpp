#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bdg/bdm.hpp"
#include "bdg/image_io.hpp"
#include "bdg/tensor.hpp"

namespace bdg {

struct SampleRecord {
    std::string id;
    RgbImage image;
    BinaryMask mask;
    std::string dataset;
};

/// Where one dataset's images and masks live. Paired by file stem.
struct DatasetLayout {
    std::string name;
    std::filesystem::path images;
    std::filesystem::path masks;
    /// Lower-case extensions including the dot, e.g. ".png".
    std::vector<std::string> extensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
};

/// Layout manifest: one section per dataset,
///
///   [kvasir]
///   images = Kvasir/images
///   masks = Kvasir/masks
///   extensions = .png .jpg
///
/// Relative directories resolve against the manifest's own directory.
std::vector<DatasetLayout> read_layout(const std::filesystem::path& manifest);

/// Stems of the files in `dir` whose extension is accepted, sorted.
std::map<std::string, std::filesystem::path> list_by_stem(const std::filesystem::path& dir,
                                                          const std::vector<std::string>& extensions);

/// Loads every image/mask pair, sorted by stem. Throws DataError naming the
/// stem when one side of a pair is missing or the sizes differ.
std::vector<SampleRecord> ingest(const DatasetLayout& layout);

struct SplitManifest {
    std::uint64_t seed = 0;
    /// Per dataset: (train ids, test ids).
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> datasets;
};

/// Seeded Fisher-Yates shuffle of each dataset's records (in stem order);
/// the first train_count go to train.
SplitManifest make_split(const std::vector<SampleRecord>& records, std::size_t train_count, std::uint64_t seed);

void write_split(const std::filesystem::path& path, const SplitManifest& split);
SplitManifest read_split(const std::filesystem::path& path);

struct Normalization {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
};

/// One network-ready triple at the working resolution.
struct PreparedSample {
    std::string id;
    /// (1, 3, S, S) standardised image.
    Tensor<float> image;
    BinaryMask mask;
    BoundaryDistributionMap bdm;
};

struct PreprocessOptions {
    int size = 352;
    double sigma = 5.0;
    bool normalized_bdm = true;
    BoundaryMode boundary = BoundaryMode::inner;
    Normalization norm;
};

/// Bilinear (half-pixel) image resize to size x size.
Tensor<float> resize_image(const RgbImage& image, int size);
/// Nearest-neighbour at pixel centres: src = floor((dst + 0.5) * in / out).
BinaryMask resize_mask(const BinaryMask& mask, int height, int width);
void standardize(Tensor<float>& image, const Normalization& norm);

/// Resize, standardise, then compute the ideal BDM of the resized mask.
PreparedSample preprocess(const SampleRecord& record, const PreprocessOptions& opt);

/// Dihedral transform: optional horizontal flip, vertical flip, then k
/// counter-clockwise quarter turns.
struct Dihedral {
    bool flip_h = false;
    bool flip_v = false;
    int quarter_turns = 0;

    static Dihedral random(std::uint64_t seed);
};

Tensor<float> apply(const Dihedral& t, const Tensor<float>& image);
BinaryMask apply(const Dihedral& t, const BinaryMask& mask);

/// Transforms image and mask identically and regenerates the BDM from the
/// transformed mask.
PreparedSample augment(const PreparedSample& sample, std::uint64_t seed, const PreprocessOptions& opt);

/// Stacked batch tensors in the order of `indices`.
struct Batch {
    std::vector<std::string> ids;
    Tensor<float> images;  // (B, 3, S, S)
    Tensor<float> masks;   // (B, 1, S, S)
    Tensor<float> bdms;    // (B, 1, S, S)
};

Batch make_batch(const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& indices);

}  // namespace bdg
