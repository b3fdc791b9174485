#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icicle/tensor.hpp"

namespace icicle {

// Synthetic fine-grained dataset: all classes share a background pattern and
// a pool of common glyphs; each class additionally carries its own
// distinctive 5x5 glyphs, so a patch-level feature suffices to tell classes
// apart.
struct SyntheticSpec {
    std::size_t num_classes = 20;
    std::size_t image_h = 32, image_w = 32, image_c = 3;
    std::size_t parts_per_image = 4;     // common + distinctive glyphs per image
    std::size_t glyph_library = 48;      // 16 templates x 3 channels
    std::size_t distinct_parts = 2;      // distinctive glyphs per class
    double noise_sigma = 0.02;
    std::size_t samples_per_class = 80;

    void validate() const;
};

struct Dataset {
    std::size_t num_classes = 0;
    std::size_t h = 0, w = 0, c = 0;
    std::vector<TensorF> images;  // each h x w x c, values in [0,1]
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
};

// A rendered 5x5 glyph template painted into one color channel.
struct Glyph {
    std::size_t template_id = 0;
    std::size_t channel = 0;
    std::vector<double> pattern;  // 5x5, values in {0,1}
};

Glyph render_glyph(std::size_t glyph_id, std::size_t num_channels);

// Glyph ids assigned to each class (distinctive) and shared by all
// (common); exposed for the learnability oracle in tests.
struct GlyphAssignment {
    std::vector<std::vector<std::size_t>> per_class;  // distinctive glyph ids
    std::vector<std::size_t> common;
};

GlyphAssignment assign_glyphs(const SyntheticSpec& spec);

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct TaskSplit {
    std::vector<std::size_t> train, val, test;  // indices into the dataset
};

struct TaskSpec {
    int task_id = 0;
    std::vector<int> classes;
    TaskSplit split;
};

struct TaskStream {
    const Dataset* data = nullptr;
    std::vector<TaskSpec> tasks;
};

// Shuffles classes by seed, partitions them as evenly as possible
// (remainder classes go to the earliest tasks), and stratifies each class
// 70/15/15 into train/val/test.
TaskStream split_tasks(const Dataset& data, std::size_t num_tasks, std::uint64_t seed,
                       double train_frac = 0.70, double val_frac = 0.15);

// "ICDS" binary container: magic, version, counts as little-endian u32,
// labels as u32, pixels as f32 in [0,1], trailing CRC32.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

// Image <-> 8-bit netpbm conversion (values linearly scaled to [0,255]).
void save_image_ppm(const std::string& path, const TensorF& image);
TensorF load_image_ppm(const std::string& path);

// Similarity-map heatmap export, linearly scaled from [0, ln(1/eta)].
void save_heatmap_pgm(const std::string& path, const std::vector<double>& map,
                      std::size_t h, std::size_t w, double eta);

}  // namespace icicle
