#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "magic/imaging.hpp"
#include "magic/quasi_robust.hpp"

namespace magic::data {

/// Procedural 10-class shape dataset (disc, ring, square, square outline,
/// triangle, plus, diagonal cross, horizontal bars, vertical bars, diamond)
/// rendered on gradient backgrounds with noise. Shape is the only class
/// signal; colors are random per sample.
inline constexpr int kNumClasses = 10;

const char* class_name(int cls);

struct ShapesConfig {
    int size = 32;
    int per_class_train = 120;
    int per_class_test = 40;
    double noise = 0.04;
    uint64_t seed = 7;
};

struct ShapesData {
    qr::LabeledImages train;
    qr::LabeledImages test;
    std::vector<double> channel_mean;  // of the train split
    std::vector<double> channel_std;
};

ShapesData make_shapes_dataset(const ShapesConfig& cfg);

/// Renders one sample; returns the image and optionally the foreground mask.
imaging::Image render_sample(int cls, int size, double noise, Rng& rng,
                             imaging::BinaryMask* mask_out = nullptr);

/// Source pair for the synthesis runs: a disc scene at the given canvas size
/// with the object placed left of center so the guide mask can travel right.
struct SynthesisFixture {
    imaging::Image x_src;
    imaging::BinaryMask y_src;
    int rendered_class = 0;
};

SynthesisFixture make_synthesis_fixture(int size, uint64_t seed);

}  // namespace magic::data
