#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "icicle/data.hpp"
#include "icicle/rng.hpp"

using namespace icicle;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.samples_per_class = 12;
    spec.glyph_library = 12;
    return spec;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("synthetic generation: shapes, ranges, determinism") {
    SyntheticSpec spec = small_spec();
    Dataset a = generate_synthetic(spec, 5);
    CHECK(a.size() == spec.num_classes * spec.samples_per_class);
    CHECK(a.h == 32);
    CHECK(a.c == 3);
    for (const auto& img : a.images)
        for (double v : img.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    Dataset b = generate_synthetic(spec, 5);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
    CHECK(a.labels == b.labels);

    Dataset c = generate_synthetic(spec, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
        any_diff = a.images[i].data != c.images[i].data;
    CHECK(any_diff);
}

TEST_CASE("noise-free generation is bitwise reproducible") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    Dataset a = generate_synthetic(spec, 9);
    Dataset b = generate_synthetic(spec, 9);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i].data == b.images[i].data);
}

TEST_CASE("single-class spec gives every image the same glyph multiset") {
    SyntheticSpec spec = small_spec();
    spec.num_classes = 1;
    GlyphAssignment g = assign_glyphs(spec);
    REQUIRE(g.per_class.size() == 1);
    // one class: every image draws the same distinctive + common ids
    std::multiset<std::size_t> expect(g.per_class[0].begin(), g.per_class[0].end());
    expect.insert(g.common.begin(), g.common.end());
    CHECK(expect.size() == spec.parts_per_image);
}

TEST_CASE("glyph assignment is disjoint across classes and from commons") {
    SyntheticSpec spec = small_spec();
    GlyphAssignment g = assign_glyphs(spec);
    std::set<std::size_t> seen;
    for (const auto& cls : g.per_class)
        for (std::size_t id : cls) CHECK(seen.insert(id).second);
    for (std::size_t id : g.common) CHECK(seen.insert(id).second);
    CHECK(seen.size() <= spec.glyph_library);
}

TEST_CASE("split_tasks: even split, one-per-class boundary, remainder rule") {
    SyntheticSpec spec = small_spec();
    spec.num_classes = 20;
    spec.samples_per_class = 10;
    spec.glyph_library = 44;
    Dataset data = generate_synthetic(spec, 3);

    TaskStream s4 = split_tasks(data, 4, 3);
    REQUIRE(s4.tasks.size() == 4);
    std::set<int> all;
    for (const auto& t : s4.tasks) {
        CHECK(t.classes.size() == 5);
        for (int c : t.classes) CHECK(all.insert(c).second);  // pairwise disjoint
    }
    CHECK(all.size() == 20);

    TaskStream s20 = split_tasks(data, 20, 3);
    for (const auto& t : s20.tasks) CHECK(t.classes.size() == 1);

    SyntheticSpec spec10 = small_spec();
    spec10.num_classes = 10;
    spec10.glyph_library = 24;
    Dataset d10 = generate_synthetic(spec10, 4);
    TaskStream s3 = split_tasks(d10, 3, 4);
    REQUIRE(s3.tasks.size() == 3);
    CHECK(s3.tasks[0].classes.size() == 4);
    CHECK(s3.tasks[1].classes.size() == 3);
    CHECK(s3.tasks[2].classes.size() == 3);
}

TEST_CASE("split_tasks stratifies 70/15/15 per class without overlap") {
    SyntheticSpec spec = small_spec();
    spec.samples_per_class = 20;
    Dataset data = generate_synthetic(spec, 7);
    TaskStream stream = split_tasks(data, 2, 7);
    for (const auto& t : stream.tasks) {
        std::set<std::size_t> seen;
        for (auto idx : t.split.train) CHECK(seen.insert(idx).second);
        for (auto idx : t.split.val) CHECK(seen.insert(idx).second);
        for (auto idx : t.split.test) CHECK(seen.insert(idx).second);
        // every index belongs to this task's classes
        std::set<int> cls(t.classes.begin(), t.classes.end());
        for (auto idx : seen) CHECK(cls.count(data.labels[idx]) == 1);
        // 20 per class: 14 train / 3 val / 3 test
        CHECK(t.split.train.size() == 14 * t.classes.size());
        CHECK(t.split.val.size() == 3 * t.classes.size());
        CHECK(t.split.test.size() == 3 * t.classes.size());
    }
    // same seed -> same split
    TaskStream again = split_tasks(data, 2, 7);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(stream.tasks[i].classes == again.tasks[i].classes);
        CHECK(stream.tasks[i].split.train == again.tasks[i].split.train);
    }
}

TEST_CASE("dataset container round-trips bitwise") {
    SyntheticSpec spec = small_spec();
    Dataset data = generate_synthetic(spec, 11);
    TempFile tmp("test_data_roundtrip.icds");
    save_dataset(tmp.path, data);
    Dataset back = load_dataset(tmp.path);
    CHECK(back.num_classes == data.num_classes);
    CHECK(back.h == data.h);
    CHECK(back.labels == data.labels);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        // pixels pass through f32, which is the container's precision
        REQUIRE(back.images[i].data.size() == data.images[i].data.size());
        for (std::size_t j = 0; j < data.images[i].data.size(); ++j)
            CHECK(back.images[i].data[j] ==
                  doctest::Approx(data.images[i].data[j]).epsilon(1e-7));
    }

    // a second save produces identical bytes
    TempFile tmp2("test_data_roundtrip2.icds");
    save_dataset(tmp2.path, data);
    std::ifstream f1(tmp.path, std::ios::binary), f2(tmp2.path, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("dataset loader rejects corrupted files") {
    SyntheticSpec spec = small_spec();
    Dataset data = generate_synthetic(spec, 12);
    TempFile tmp("test_data_corrupt.icds");
    save_dataset(tmp.path, data);

    // corrupt the magic
    {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS(load_dataset(tmp.path));

    // corrupt a payload byte -> CRC failure
    save_dataset(tmp.path, data);
    {
        std::fstream f(tmp.path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char c = 0x5a;
        f.write(&c, 1);
    }
    CHECK_THROWS(load_dataset(tmp.path));
    CHECK_THROWS(load_dataset("no_such_file.icds"));
}

TEST_CASE("ppm round-trip and exact byte layout") {
    TensorF img({2, 2, 3});
    // values chosen to hit exact bytes after the 255 scaling
    double vals[] = {0.0, 1.0, 128.0 / 255, 64.0 / 255, 32.0 / 255, 16.0 / 255,
                     8.0 / 255, 4.0 / 255, 2.0 / 255, 1.0 / 255, 0.0, 1.0};
    std::copy(std::begin(vals), std::end(vals), img.data.begin());
    TempFile tmp("test_data_img.ppm");
    save_image_ppm(tmp.path, img);

    std::ifstream f(tmp.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::string expect = "P6\n2 2\n255\n";
    unsigned char pixels[] = {0, 255, 128, 64, 32, 16, 8, 4, 2, 1, 0, 255};
    expect.append(reinterpret_cast<const char*>(pixels), 12);
    CHECK(bytes == expect);

    TensorF back = load_image_ppm(tmp.path);
    REQUIRE(back.shape == img.shape);
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1.0 / 255));
}

TEST_CASE("heatmap pgm scales similarities into [0,255]") {
    TempFile tmp("test_data_map.pgm");
    double eta = 1e-4;
    std::vector<double> map = {0.0, std::log(1.0 / eta), 0.5 * std::log(1.0 / eta), 1.0};
    save_heatmap_pgm(tmp.path, map, 2, 2, eta);
    std::ifstream f(tmp.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.substr(0, 3) == "P5\n");
    unsigned char lo = static_cast<unsigned char>(bytes[bytes.size() - 4]);
    unsigned char hi = static_cast<unsigned char>(bytes[bytes.size() - 3]);
    unsigned char mid = static_cast<unsigned char>(bytes[bytes.size() - 2]);
    CHECK(lo == 0);
    CHECK(hi == 255);
    CHECK((mid == 127 || mid == 128));  // 0.5 scales to 127.5
}

TEST_CASE("distinctive glyph templates make classes 1-NN separable") {
    // learnability oracle: classify each image by which class's distinctive
    // glyph template best matches some patch (minimum SSD over positions)
    SyntheticSpec spec;
    spec.num_classes = 6;
    spec.samples_per_class = 20;
    spec.glyph_library = 16;
    Dataset data = generate_synthetic(spec, 21);
    GlyphAssignment glyphs = assign_glyphs(spec);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TensorF& img = data.images[i];
        double best_score = 1e30;
        int best_cls = -1;
        for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
            // every image carries all of its class's distinctive glyphs, so
            // the class score sums each glyph's best patch match
            double score = 0.0;
            for (std::size_t gid : glyphs.per_class[cls]) {
                Glyph g = render_glyph(gid, data.c);
                double best_ssd = 1e30;
                for (std::size_t r = 0; r + 5 <= data.h; ++r)
                    for (std::size_t cc = 0; cc + 5 <= data.w; ++cc) {
                        double ssd = 0.0;
                        for (std::size_t y = 0; y < 5; ++y)
                            for (std::size_t x = 0; x < 5; ++x) {
                                double v = img.at3(r + y, cc + x, g.channel);
                                double t = g.pattern[y * 5 + x];
                                ssd += (v - t) * (v - t);
                            }
                        best_ssd = std::min(best_ssd, ssd);
                    }
                score += best_ssd;
            }
            if (score < best_score) {
                best_score = score;
                best_cls = static_cast<int>(cls);
            }
        }
        if (best_cls == data.labels[i]) ++correct;
    }
    double acc = static_cast<double>(correct) / static_cast<double>(data.size());
    CHECK(acc > 0.90);
}
