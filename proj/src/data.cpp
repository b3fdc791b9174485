#include "icicle/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "icicle/pnm.hpp"
#include "icicle/rng.hpp"

namespace icicle {

void SyntheticSpec::validate() const {
    if (num_classes < 1) throw std::invalid_argument("SyntheticSpec: need at least 1 class");
    if (distinct_parts < 1) throw std::invalid_argument("SyntheticSpec: distinct_parts >= 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("SyntheticSpec: sigma must be >= 0");
    if (image_h < 5 || image_w < 5)
        throw std::invalid_argument("SyntheticSpec: image too small for 5x5 glyphs");
    if (parts_per_image < distinct_parts)
        throw std::invalid_argument("SyntheticSpec: parts_per_image < distinct_parts");
    std::size_t needed = num_classes * distinct_parts + (parts_per_image - distinct_parts);
    if (glyph_library < needed)
        throw std::invalid_argument("SyntheticSpec: glyph library too small (" +
                                    std::to_string(glyph_library) + " < " +
                                    std::to_string(needed) + ")");
}

namespace {

constexpr std::size_t kGlyphSide = 5;
constexpr std::size_t kNumTemplates = 16;

// 16 hand-drawn 5x5 templates: bars, diagonals, corners, dots, crosses.
const char* kTemplates[kNumTemplates] = {
    "#####"
    "..#.."
    "..#.."
    "..#.."
    "#####",  // I-beam
    "#...."
    "#...."
    "#...."
    "#...."
    "#####",  // L
    "#####"
    "..#.."
    "..#.."
    "..#.."
    "..#..",  // T
    "#####"
    "...#."
    "..#.."
    ".#..."
    "#####",  // Z
    "#...#"
    ".#.#."
    "..#.."
    ".#.#."
    "#...#",  // X
    "#####"
    "#...#"
    "#...#"
    "#...#"
    "#####",  // O
    "#...#"
    "#...#"
    "#...#"
    "#...#"
    "#####",  // U
    "#####"
    "#...."
    "#...."
    "#...."
    "#####",  // C
    "#####"
    "....#"
    "....#"
    "....#"
    "#####",  // mirrored C
    "#...#"
    "#...#"
    "#####"
    "#...#"
    "#...#",  // H
    "#####"
    "#...."
    "#####"
    "....#"
    "#####",  // S
    "#####"
    "#...."
    "####."
    "#...."
    "#####",  // E
    "#...#"
    "##..#"
    "#.#.#"
    "#..##"
    "#...#",  // N
    "..#.."
    "..#.."
    "#####"
    "..#.."
    "..#..",  // plus
    "#...."
    ".#..."
    "..#.."
    "...#."
    "....#",  // diagonal
    "....#"
    "...#."
    "..#.."
    ".#..."
    "#....",  // anti-diagonal
};

}  // namespace

Glyph render_glyph(std::size_t glyph_id, std::size_t num_channels) {
    Glyph g;
    g.template_id = glyph_id % kNumTemplates;
    g.channel = (glyph_id / kNumTemplates) % num_channels;
    g.pattern.resize(kGlyphSide * kGlyphSide);
    const char* t = kTemplates[g.template_id];
    for (std::size_t i = 0; i < g.pattern.size(); ++i) g.pattern[i] = t[i] == '#' ? 1.0 : 0.0;
    return g;
}

GlyphAssignment assign_glyphs(const SyntheticSpec& spec) {
    spec.validate();
    GlyphAssignment a;
    std::size_t next = 0;
    a.per_class.resize(spec.num_classes);
    for (std::size_t cls = 0; cls < spec.num_classes; ++cls)
        for (std::size_t i = 0; i < spec.distinct_parts; ++i) a.per_class[cls].push_back(next++);
    for (std::size_t i = spec.distinct_parts; i < spec.parts_per_image; ++i)
        a.common.push_back(next++);
    return a;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    GlyphAssignment glyphs = assign_glyphs(spec);
    Rng rng(seed);

    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.h = spec.image_h;
    ds.w = spec.image_w;
    ds.c = spec.image_c;

    for (std::size_t cls = 0; cls < spec.num_classes; ++cls) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            TensorF img({ds.h, ds.w, ds.c});
            // smooth background from the same family for every class, with a
            // per-image phase so no background patch repeats verbatim across
            // images (otherwise background patches would be the easiest thing
            // for a prototype to match)
            double ph_i = rng.uniform(0.0, 6.283185307179586);
            double ph_j = rng.uniform(0.0, 6.283185307179586);
            for (std::size_t i = 0; i < ds.h; ++i)
                for (std::size_t j = 0; j < ds.w; ++j)
                    for (std::size_t ch = 0; ch < ds.c; ++ch)
                        img.at3(i, j, ch) =
                            0.25 +
                            0.1 * std::sin(0.35 * static_cast<double>(i + 2 * ch) + ph_i) *
                                std::cos(0.35 * static_cast<double>(j) + ph_j);

            std::vector<std::size_t> parts = glyphs.per_class[cls];
            for (std::size_t id : glyphs.common) parts.push_back(id);
            for (std::size_t id : parts) {
                Glyph g = render_glyph(id, ds.c);
                std::size_t top = rng.uniform_index(ds.h - kGlyphSide + 1);
                std::size_t left = rng.uniform_index(ds.w - kGlyphSide + 1);
                for (std::size_t gy = 0; gy < kGlyphSide; ++gy)
                    for (std::size_t gx = 0; gx < kGlyphSide; ++gx)
                        if (g.pattern[gy * kGlyphSide + gx] > 0.0)
                            img.at3(top + gy, left + gx, g.channel % ds.c) = 1.0;
            }

            for (auto& v : img.data) {
                if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
                v = std::clamp(v, 0.0, 1.0);
                // quantize through f32 so the ICDS round trip is bit exact
                v = static_cast<double>(static_cast<float>(v));
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(static_cast<int>(cls));
        }
    }
    return ds;
}

TaskStream split_tasks(const Dataset& data, std::size_t num_tasks, std::uint64_t seed,
                       double train_frac, double val_frac) {
    if (num_tasks == 0 || num_tasks > data.num_classes)
        throw std::invalid_argument("split_tasks: need 1 <= T <= num_classes");

    Rng rng(seed);
    std::vector<int> classes(data.num_classes);
    std::iota(classes.begin(), classes.end(), 0);
    rng.shuffle(classes);

    // even partition, remainder classes to the earliest tasks
    std::size_t base = data.num_classes / num_tasks;
    std::size_t rem = data.num_classes % num_tasks;

    std::vector<std::vector<std::size_t>> by_class(data.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i)
        by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

    TaskStream stream;
    stream.data = &data;
    std::size_t next_class = 0;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        TaskSpec task;
        task.task_id = static_cast<int>(t) + 1;
        std::size_t count = base + (t < rem ? 1 : 0);
        for (std::size_t i = 0; i < count; ++i) task.classes.push_back(classes[next_class++]);
        for (int cls : task.classes) {
            std::vector<std::size_t> idx = by_class[static_cast<std::size_t>(cls)];
            if (idx.empty()) throw std::invalid_argument("split_tasks: class with no samples");
            rng.shuffle(idx);
            auto n = idx.size();
            auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
            auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
            n_train = std::max<std::size_t>(1, std::min(n_train, n - 2));
            n_val = std::max<std::size_t>(1, std::min(n_val, n - n_train - 1));
            for (std::size_t i = 0; i < n; ++i) {
                if (i < n_train)
                    task.split.train.push_back(idx[i]);
                else if (i < n_train + n_val)
                    task.split.val.push_back(idx[i]);
                else
                    task.split.test.push_back(idx[i]);
            }
        }
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

namespace {

constexpr char kDatasetMagic[4] = {'I', 'C', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;

void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    std::uint16_t u16() {
        if (pos + 2 > buf.size()) throw std::runtime_error("ICDS: truncated payload");
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        if (pos + 4 > buf.size()) throw std::runtime_error("ICDS: truncated payload");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void save_dataset(const std::string& path, const Dataset& data) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kDatasetMagic, kDatasetMagic + 4);
    put_u16(buf, kDatasetVersion);
    put_u32(buf, static_cast<std::uint32_t>(data.num_classes));
    put_u32(buf, static_cast<std::uint32_t>(data.size()));
    put_u32(buf, static_cast<std::uint32_t>(data.h));
    put_u32(buf, static_cast<std::uint32_t>(data.w));
    put_u32(buf, static_cast<std::uint32_t>(data.c));
    for (int label : data.labels) put_u32(buf, static_cast<std::uint32_t>(label));
    for (const TensorF& img : data.images) {
        if (img.numel() != data.h * data.w * data.c)
            throw std::invalid_argument("save_dataset: image shape mismatch");
        for (double v : img.data) put_f32(buf, static_cast<float>(v));
    }
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kDatasetMagic, 4) != 0)
        throw std::runtime_error("load_dataset: bad magic in " + path);
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(buf[buf.size() - 4 + i]) << (8 * i);
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc) throw std::runtime_error("load_dataset: checksum mismatch in " + path);

    Reader r{buf, 4};
    if (r.u16() != kDatasetVersion) throw std::runtime_error("load_dataset: unsupported version");
    Dataset ds;
    ds.num_classes = r.u32();
    std::size_t n = r.u32();
    ds.h = r.u32();
    ds.w = r.u32();
    ds.c = r.u32();
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = static_cast<int>(r.u32());
    for (std::size_t i = 0; i < n; ++i) {
        TensorF img({ds.h, ds.w, ds.c});
        for (auto& v : img.data) v = static_cast<double>(r.f32());
        ds.images.push_back(std::move(img));
    }
    if (r.pos != buf.size() - 4) throw std::runtime_error("load_dataset: trailing bytes");
    return ds;
}

void save_image_ppm(const std::string& path, const TensorF& image) {
    if (image.shape.size() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("save_image_ppm: image must be H x W x 3");
    PnmImage out;
    out.height = image.shape[0];
    out.width = image.shape[1];
    out.channels = 3;
    out.pixels.resize(image.numel());
    for (std::size_t i = 0; i < image.numel(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(image.data[i], 0.0, 1.0) * 255.0));
    save_ppm(path, out);
}

TensorF load_image_ppm(const std::string& path) {
    PnmImage img = load_pnm(path);
    if (img.channels != 3) throw std::runtime_error("load_image_ppm: not a P6 file");
    TensorF t({img.height, img.width, 3});
    for (std::size_t i = 0; i < t.numel(); ++i)
        t.data[i] = static_cast<double>(img.pixels[i]) / 255.0;
    return t;
}

void save_heatmap_pgm(const std::string& path, const std::vector<double>& map, std::size_t h,
                      std::size_t w, double eta) {
    if (map.size() != h * w) throw std::invalid_argument("save_heatmap_pgm: size mismatch");
    double max_sim = std::log(1.0 / eta);
    PnmImage out;
    out.height = h;
    out.width = w;
    out.channels = 1;
    out.pixels.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(map[i] / max_sim, 0.0, 1.0) * 255.0));
    save_pgm(path, out,
             "similarity map scaled linearly from [0, ln(1/eta)] to [0,255], eta=" +
                 std::to_string(eta));
}

}  // namespace icicle
