#include "bdg/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bdg/errors.hpp"
#include "bdg/kernels.hpp"

namespace bdg {

namespace fs = std::filesystem;

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

std::vector<DatasetLayout> read_layout(const fs::path& manifest) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(manifest.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        throw DataError("cannot read layout manifest: " + std::string(e.what()));
    }
    const fs::path base = manifest.parent_path();
    std::vector<DatasetLayout> out;
    for (const auto& [name, section] : tree) {
        if (section.empty()) throw DataError("layout manifest: '" + name + "' is not a section");
        DatasetLayout layout;
        layout.name = name;
        const auto images = section.get_optional<std::string>("images");
        const auto masks = section.get_optional<std::string>("masks");
        if (!images || !masks) throw DataError("layout manifest: section [" + name + "] needs images and masks");
        layout.images = fs::path(*images).is_absolute() ? fs::path(*images) : base / *images;
        layout.masks = fs::path(*masks).is_absolute() ? fs::path(*masks) : base / *masks;
        if (const auto ext = section.get_optional<std::string>("extensions")) {
            layout.extensions.clear();
            for (auto& e : split_words(*ext)) {
                e = lower(e);
                if (!e.empty() && e[0] == '*') e.erase(0, 1);
                if (!e.empty() && e[0] != '.') e.insert(0, ".");
                layout.extensions.push_back(e);
            }
        }
        out.push_back(std::move(layout));
    }
    if (out.empty()) throw DataError("layout manifest lists no datasets: " + manifest.string());
    return out;
}

std::map<std::string, fs::path> list_by_stem(const fs::path& dir, const std::vector<std::string>& extensions) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = lower(entry.path().extension().string());
        if (std::find(extensions.begin(), extensions.end(), ext) == extensions.end()) continue;
        const std::string stem = entry.path().stem().string();
        const auto [it, inserted] = out.emplace(stem, entry.path());
        if (!inserted) {
            // Deterministic choice regardless of directory order.
            if (entry.path() < it->second) it->second = entry.path();
        }
    }
    return out;
}

std::vector<SampleRecord> ingest(const DatasetLayout& layout) {
    const auto images = list_by_stem(layout.images, layout.extensions);
    const auto masks = list_by_stem(layout.masks, layout.extensions);
    for (const auto& [stem, path] : masks) {
        if (!images.count(stem)) throw DataError("image missing for mask stem '" + stem + "' in " + layout.name);
    }
    std::vector<SampleRecord> out;
    out.reserve(images.size());
    for (const auto& [stem, path] : images) {
        const auto m = masks.find(stem);
        if (m == masks.end()) throw DataError("mask missing for stem '" + stem + "' in " + layout.name);
        SampleRecord rec{stem, read_rgb(path), read_mask(m->second), layout.name};
        if (rec.image.height != rec.mask.height() || rec.image.width != rec.mask.width()) {
            throw DataError("image and mask sizes differ for stem '" + stem + "' in " + layout.name);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

SplitManifest make_split(const std::vector<SampleRecord>& records, std::size_t train_count, std::uint64_t seed) {
    std::map<std::string, std::vector<std::string>> by_dataset;
    for (const auto& r : records) by_dataset[r.dataset].push_back(r.id);
    SplitManifest split;
    split.seed = seed;
    for (auto& [name, ids] : by_dataset) {
        std::sort(ids.begin(), ids.end());
        if (train_count > ids.size()) {
            throw DataError("dataset " + name + " has " + std::to_string(ids.size()) + " records, fewer than " +
                            std::to_string(train_count));
        }
        std::mt19937_64 rng(seed);
        for (std::size_t i = ids.size(); i > 1; --i) {
            const std::size_t j = rng() % i;
            std::swap(ids[i - 1], ids[j]);
        }
        auto& [train, test] = split.datasets[name];
        train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train_count));
        test.assign(ids.begin() + static_cast<std::ptrdiff_t>(train_count), ids.end());
    }
    return split;
}

void write_split(const fs::path& path, const SplitManifest& split) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << "seed = " << split.seed << '\n';
    for (const auto& [name, parts] : split.datasets) {
        os << "\n[" << name << ".train]\n";
        for (const auto& id : parts.first) os << id << '\n';
        os << "\n[" << name << ".test]\n";
        for (const auto& id : parts.second) os << id << '\n';
    }
}

SplitManifest read_split(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open split manifest " + path.string());
    SplitManifest split;
    std::vector<std::string>* current = nullptr;
    std::string line;
    bool have_seed = false;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            const std::string section = line.substr(1, line.size() - 2);
            const auto dot = section.rfind('.');
            const std::string part = dot == std::string::npos ? "" : section.substr(dot + 1);
            if (part != "train" && part != "test") throw DataError("split manifest: bad section [" + section + "]");
            auto& entry = split.datasets[section.substr(0, dot)];
            current = part == "train" ? &entry.first : &entry.second;
            continue;
        }
        if (current == nullptr) {
            const auto eq = line.find('=');
            if (eq == std::string::npos || trim(line.substr(0, eq)) != "seed") {
                throw DataError("split manifest: unexpected line '" + line + "'");
            }
            split.seed = std::stoull(trim(line.substr(eq + 1)));
            have_seed = true;
            continue;
        }
        current->push_back(line);
    }
    if (!have_seed) throw DataError("split manifest has no seed: " + path.string());
    for (const auto& [name, parts] : split.datasets) {
        std::set<std::string> train(parts.first.begin(), parts.first.end());
        for (const auto& id : parts.second) {
            if (train.count(id)) throw DataError("split manifest: '" + id + "' is in both train and test of " + name);
        }
    }
    return split;
}

Tensor<float> resize_image(const RgbImage& image, int size) {
    Tensor<float> t(Shape{1, 3, image.height, image.width});
    for (int c = 0; c < 3; ++c) {
        float* plane = t.plane(0, c);
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                plane[static_cast<std::size_t>(y) * image.width + x] = static_cast<float>(image.at(y, x, c)) / 255.0f;
            }
        }
    }
    return kernels::resize_bilinear_forward(t, size, size);
}

BinaryMask resize_mask(const BinaryMask& mask, int height, int width) {
    BinaryMask out(height, width);
    const std::int64_t ih = mask.height(), iw = mask.width();
    for (int y = 0; y < height; ++y) {
        const int sy = static_cast<int>(((2 * static_cast<std::int64_t>(y) + 1) * ih) / (2 * height));
        for (int x = 0; x < width; ++x) {
            const int sx = static_cast<int>(((2 * static_cast<std::int64_t>(x) + 1) * iw) / (2 * width));
            out.set(y, x, mask(sy, sx));
        }
    }
    return out;
}

void standardize(Tensor<float>& image, const Normalization& norm) {
    for (int n = 0; n < image.n(); ++n) {
        for (int c = 0; c < 3; ++c) {
            float* p = image.plane(n, c);
            const float mean = static_cast<float>(norm.mean[c]);
            const float inv = static_cast<float>(1.0 / norm.std[c]);
            for (std::size_t i = 0; i < image.shape().plane(); ++i) p[i] = (p[i] - mean) * inv;
        }
    }
}

PreparedSample preprocess(const SampleRecord& record, const PreprocessOptions& opt) {
    PreparedSample s;
    s.id = record.id;
    s.image = resize_image(record.image, opt.size);
    standardize(s.image, opt.norm);
    s.mask = resize_mask(record.mask, opt.size, opt.size);
    s.bdm = ideal_bdm(s.mask, opt.sigma, opt.normalized_bdm, opt.boundary);
    return s;
}

Dihedral Dihedral::random(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::uint64_t v = rng();
    return Dihedral{(v & 1) != 0, (v & 2) != 0, static_cast<int>((v >> 2) & 3)};
}

namespace {

/// Row-major source index for every destination pixel, built by applying
/// the flips and then the quarter turns to an identity index grid.
Grid<std::int32_t> source_indices(const Dihedral& t, int h, int w) {
    Grid<std::int32_t> idx(h, w);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int32_t>(i);
    if (t.flip_h) {
        for (int y = 0; y < h; ++y) std::reverse(&idx(y, 0), &idx(y, 0) + w);
    }
    if (t.flip_v) {
        for (int y = 0; y < h / 2; ++y) std::swap_ranges(&idx(y, 0), &idx(y, 0) + w, &idx(h - 1 - y, 0));
    }
    for (int k = 0; k < t.quarter_turns; ++k) {
        // Counter-clockwise: new(r, c) = old(c, W - 1 - r).
        Grid<std::int32_t> turned(idx.width(), idx.height());
        for (int r = 0; r < turned.height(); ++r) {
            for (int c = 0; c < turned.width(); ++c) turned(r, c) = idx(c, idx.width() - 1 - r);
        }
        idx = std::move(turned);
    }
    return idx;
}

}  // namespace

Tensor<float> apply(const Dihedral& t, const Tensor<float>& image) {
    const Grid<std::int32_t> idx = source_indices(t, image.h(), image.w());
    Tensor<float> out(Shape{image.n(), image.c(), idx.height(), idx.width()});
    for (int n = 0; n < image.n(); ++n) {
        for (int c = 0; c < image.c(); ++c) {
            const float* src = image.plane(n, c);
            float* dst = out.plane(n, c);
            for (std::size_t i = 0; i < idx.size(); ++i) dst[i] = src[idx[i]];
        }
    }
    return out;
}

BinaryMask apply(const Dihedral& t, const BinaryMask& mask) {
    const Grid<std::int32_t> idx = source_indices(t, mask.height(), mask.width());
    BinaryMask out(idx.height(), idx.width());
    for (std::size_t i = 0; i < idx.size(); ++i) out.set(i, mask[static_cast<std::size_t>(idx[i])]);
    return out;
}

PreparedSample augment(const PreparedSample& sample, std::uint64_t seed, const PreprocessOptions& opt) {
    const Dihedral t = Dihedral::random(seed);
    PreparedSample out;
    out.id = sample.id;
    out.image = apply(t, sample.image);
    out.mask = apply(t, sample.mask);
    out.bdm = ideal_bdm(out.mask, opt.sigma, opt.normalized_bdm, opt.boundary);
    return out;
}

Batch make_batch(const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const PreparedSample& first = samples.at(indices[0]);
    const int h = first.image.h(), w = first.image.w();
    const int b = static_cast<int>(indices.size());
    Batch batch;
    batch.images = Tensor<float>(Shape{b, 3, h, w});
    batch.masks = Tensor<float>(Shape{b, 1, h, w});
    batch.bdms = Tensor<float>(Shape{b, 1, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < b; ++i) {
        const PreparedSample& s = samples.at(indices[i]);
        if (s.image.h() != h || s.image.w() != w || s.mask.height() != h || s.mask.width() != w) {
            throw DataError("make_batch: sample '" + s.id + "' has a different size");
        }
        batch.ids.push_back(s.id);
        std::copy(s.image.data(), s.image.data() + 3 * plane, batch.images.sample(i));
        float* m = batch.masks.sample(i);
        float* d = batch.bdms.sample(i);
        for (std::size_t k = 0; k < plane; ++k) {
            m[k] = s.mask[k] ? 1.0f : 0.0f;
            d[k] = static_cast<float>(s.bdm.values[k]);
        }
    }
    return batch;
}

}  // namespace bdg
