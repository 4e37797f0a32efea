#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "bdg/data.hpp"
#include "bdg/errors.hpp"
#include "bdg/kernels.hpp"
#include "bdg/image_io.hpp"
#include "disk_fixture.hpp"
#include "support.hpp"

using namespace bdg;
namespace fs = std::filesystem;

namespace {

std::vector<SampleRecord> dummy_records(const std::string& dataset, int n) {
    std::vector<SampleRecord> out;
    for (int i = 0; i < n; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "%04d", i);
        out.push_back({id, RgbImage{1, 1, {0, 0, 0}}, BinaryMask(1, 1), dataset});
    }
    return out;
}

}  // namespace

TEST_CASE("image io: RGB order, 16-bit samples and mask thresholds") {
    testing::TempDir tmp("io");
    cv::Mat bgr(1, 2, CV_8UC3);
    bgr.at<cv::Vec3b>(0, 0) = cv::Vec3b(10, 20, 30);
    bgr.at<cv::Vec3b>(0, 1) = cv::Vec3b(200, 100, 0);
    testing::write_png(tmp.path() / "rgb.png", bgr);
    const RgbImage img = read_rgb(tmp.path() / "rgb.png");
    CHECK(img.pixels == std::vector<std::uint8_t>{30, 20, 10, 0, 100, 200});

    cv::Mat deep(1, 4, CV_16UC1);
    deep.at<std::uint16_t>(0, 0) = 0;
    deep.at<std::uint16_t>(0, 1) = 32767;
    deep.at<std::uint16_t>(0, 2) = 32768;
    deep.at<std::uint16_t>(0, 3) = 65535;
    testing::write_png(tmp.path() / "deep.png", deep);
    const BinaryMask dm = read_mask(tmp.path() / "deep.png");
    CHECK(std::vector<bool>{dm[0], dm[1], dm[2], dm[3]} == std::vector<bool>{false, false, true, true});

    // Luma (299 R + 587 G + 114 B + 500) / 1000, then >= 128.
    cv::Mat colour(1, 4, CV_8UC3);
    colour.at<cv::Vec3b>(0, 0) = cv::Vec3b(0, 0, 255);      // red: 76
    colour.at<cv::Vec3b>(0, 1) = cv::Vec3b(0, 255, 0);      // green: 150
    colour.at<cv::Vec3b>(0, 2) = cv::Vec3b(128, 128, 128);  // 128
    colour.at<cv::Vec3b>(0, 3) = cv::Vec3b(127, 127, 127);  // 127
    testing::write_png(tmp.path() / "colour.png", colour);
    const BinaryMask cm = read_mask(tmp.path() / "colour.png");
    CHECK(std::vector<bool>{cm[0], cm[1], cm[2], cm[3]} == std::vector<bool>{false, true, true, false});
    CHECK(read_mask(tmp.path() / "colour.png") == cm);

    CHECK_THROWS_AS(read_rgb(tmp.path() / "missing.png"), DataError);
    std::ofstream(tmp.path() / "junk.png") << "not an image";
    CHECK_THROWS_AS(read_rgb(tmp.path() / "junk.png"), DataError);
}

TEST_CASE("raw boundary maps round-trip as float32") {
    testing::TempDir tmp("raw");
    std::mt19937_64 rng(1);
    const BoundaryDistributionMap bdm = ideal_bdm(testing::blob_mask(9, 13, rng), 3.0, false);
    write_bdm_raw(tmp.path() / "a.bdm", bdm);
    const BoundaryDistributionMap back = read_bdm_raw(tmp.path() / "a.bdm");
    CHECK(back.sigma == 3.0);
    CHECK_FALSE(back.normalized);
    REQUIRE(back.values.same_shape(bdm.values));
    for (std::size_t i = 0; i < bdm.values.size(); ++i) CHECK(back.values[i] == static_cast<double>(static_cast<float>(bdm.values[i])));
    CHECK(fs::file_size(tmp.path() / "a.bdm") > 9 * 13 * 4);
}

TEST_CASE("ingestion pairs by stem") {
    testing::TempDir tmp("ingest");
    testing::write_pairs(tmp.path(), 3);
    DatasetLayout layout{"toy", tmp.path() / "images", tmp.path() / "masks"};
    const auto records = ingest(layout);
    REQUIRE(records.size() == 3);
    CHECK(records[0].id == "case0");
    CHECK(records[2].dataset == "toy");
    CHECK(records[1].image.height == records[1].mask.height());

    fs::remove(tmp.path() / "masks" / "case1.png");
    try {
        ingest(layout);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("case1") != std::string::npos);
    }
}

TEST_CASE("layout manifest resolves relative directories") {
    testing::TempDir tmp("layout");
    testing::write_pairs(tmp.path() / "Kvasir", 2);
    std::ofstream(tmp.path() / "layout.ini") << "[kvasir]\nimages = Kvasir/images\nmasks = Kvasir/masks\nextensions = png\n";
    const auto layouts = read_layout(tmp.path() / "layout.ini");
    REQUIRE(layouts.size() == 1);
    CHECK(layouts[0].name == "kvasir");
    CHECK(layouts[0].extensions == std::vector<std::string>{".png"});
    CHECK(ingest(layouts[0]).size() == 2);
    std::ofstream(tmp.path() / "bad.ini") << "[x]\nimages = a\n";
    CHECK_THROWS_AS(read_layout(tmp.path() / "bad.ini"), DataError);
}

TEST_CASE("splits: counts, disjointness, determinism, file round-trip") {
    auto records = dummy_records("kvasir", 1000);
    auto clinic = dummy_records("clinicdb", 612);
    records.insert(records.end(), clinic.begin(), clinic.end());

    const SplitManifest s900 = make_split(dummy_records("kvasir", 1000), 900, 42);
    CHECK(s900.datasets.at("kvasir").first.size() == 900);
    CHECK(s900.datasets.at("kvasir").second.size() == 100);
    const SplitManifest s550 = make_split(clinic, 550, 42);
    CHECK(s550.datasets.at("clinicdb").first.size() == 550);
    CHECK(s550.datasets.at("clinicdb").second.size() == 62);

    const SplitManifest a = make_split(records, 10, 7), b = make_split(records, 10, 7), c = make_split(records, 10, 8);
    CHECK(a.datasets == b.datasets);
    CHECK_FALSE(a.datasets == c.datasets);
    for (const auto& [name, sides] : a.datasets) {
        std::set<std::string> train(sides.first.begin(), sides.first.end());
        for (const auto& id : sides.second) CHECK(train.count(id) == 0);
    }

    testing::TempDir tmp("split");
    write_split(tmp.path() / "split.ini", a);
    const SplitManifest back = read_split(tmp.path() / "split.ini");
    CHECK(back.seed == 7);
    CHECK(back.datasets == a.datasets);
    CHECK_THROWS(make_split(records, 700, 1));
}

TEST_CASE("preprocessing: shapes, binary masks, map computed after resizing") {
    std::mt19937_64 rng(2);
    auto records = testing::synthetic_polyps(1, 50, 3);
    PreprocessOptions opt;
    opt.size = 352;
    const PreparedSample s = preprocess(records[0], opt);
    CHECK(s.image.shape() == Shape{1, 3, 352, 352});
    CHECK(s.mask.height() == 352);
    CHECK(s.bdm.values.height() == 352);
    for (std::size_t i = 0; i < s.mask.size(); ++i) REQUIRE((s.mask[i] == 0 || s.mask[i] == 1));
    CHECK(s.bdm.values == ideal_bdm(s.mask, opt.sigma, opt.normalized_bdm).values);

    // Resampling the original map gives something else.
    const BoundaryDistributionMap small = ideal_bdm(records[0].mask, opt.sigma);
    Tensor<double> t(Shape{1, 1, 50, 50}, small.values.values());
    const Tensor<double> up = kernels::resize_bilinear_forward(t, 352, 352);
    double diff = 0.0;
    for (std::size_t i = 0; i < up.numel(); ++i) diff = std::max(diff, std::fabs(up[i] - s.bdm.values[i]));
    CHECK(diff > 0.1);

    // Standardisation with the configured constants.
    RgbImage flat{2, 2, std::vector<std::uint8_t>(12, 255)};
    Tensor<float> img = resize_image(flat, 2);
    standardize(img, Normalization{});
    CHECK(img.at(0, 0, 0, 0) == doctest::Approx((1.0 - 0.485) / 0.229));
    CHECK(img.at(0, 2, 1, 1) == doctest::Approx((1.0 - 0.406) / 0.225));

    const BinaryMask m = testing::random_mask(7, 9, rng);
    const BinaryMask r = resize_mask(m, 21, 27);
    for (int y = 0; y < 21; ++y) {
        for (int x = 0; x < 27; ++x) REQUIRE(r(y, x) == m(y / 3, x / 3));
    }
    CHECK(resize_mask(m, 7, 9) == m);
}

TEST_CASE("dihedral transforms") {
    std::mt19937_64 rng(3);
    const BinaryMask m = testing::random_mask(6, 9, rng);
    for (int q = 0; q < 4; ++q) {
        for (bool h : {false, true}) {
            for (bool v : {false, true}) {
                const Dihedral t{h, v, q};
                const BinaryMask out = apply(t, m);
                CHECK(out.count() == m.count());
                CHECK(out.height() == (q % 2 ? 9 : 6));
            }
        }
    }
    CHECK(apply(Dihedral{true, false, 0}, apply(Dihedral{true, false, 0}, m)) == m);
    CHECK(apply(Dihedral{false, true, 0}, apply(Dihedral{false, true, 0}, m)) == m);
    BinaryMask r = m;
    for (int i = 0; i < 4; ++i) r = apply(Dihedral{false, false, 1}, r);
    CHECK(r == m);
    // One counter-clockwise quarter turn moves the top-right corner to the top-left.
    BinaryMask corner(3, 4);
    corner.set(0, 3, true);
    CHECK(apply(Dihedral{false, false, 1}, corner)(0, 0));

    std::set<std::tuple<bool, bool, int>> seen;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const Dihedral d = Dihedral::random(s);
        seen.insert({d.flip_h, d.flip_v, d.quarter_turns});
        const Dihedral again = Dihedral::random(s);
        CHECK((d.flip_h == again.flip_h && d.flip_v == again.flip_v && d.quarter_turns == again.quarter_turns));
    }
    CHECK(seen.size() == 16);
}

TEST_CASE("augmentation keeps image, mask and map in correspondence") {
    std::mt19937_64 rng(4);
    PreparedSample s;
    s.id = "x";
    s.mask = testing::blob_mask(16, 16, rng);
    s.image = Tensor<float>(Shape{1, 3, 16, 16});
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            s.image.at(0, 0, y, x) = s.mask(y, x) ? 1.0f : 0.0f;
            s.image.at(0, 1, y, x) = static_cast<float>(y * 16 + x);
        }
    }
    PreprocessOptions opt;
    s.bdm = ideal_bdm(s.mask, opt.sigma);
    for (std::uint64_t seed = 0; seed < 16; ++seed) {
        const PreparedSample a = augment(s, seed, opt);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) REQUIRE((a.image.at(0, 0, y, x) == 1.0f) == a.mask(y, x));
        }
        CHECK(a.bdm.values == ideal_bdm(a.mask, opt.sigma).values);
        const PreparedSample b = augment(s, seed, opt);
        CHECK(a.image == b.image);
        CHECK(a.mask == b.mask);
    }
}

TEST_CASE("batches stack samples in order") {
    std::mt19937_64 rng(5);
    PreprocessOptions opt;
    opt.size = 32;
    std::vector<PreparedSample> samples;
    for (const auto& r : testing::synthetic_polyps(3, 40, 6)) samples.push_back(preprocess(r, opt));
    const Batch b = make_batch(samples, {2, 0});
    CHECK(b.ids == std::vector<std::string>{"synthetic_2", "synthetic_0"});
    CHECK(b.images.shape() == Shape{2, 3, 32, 32});
    CHECK(b.masks.at(1, 0, 5, 5) == (samples[0].mask(5, 5) ? 1.0f : 0.0f));
    CHECK(b.bdms.at(0, 0, 7, 3) == static_cast<float>(samples[2].bdm.values(7, 3)));
    CHECK_THROWS(make_batch(samples, {}));
}
