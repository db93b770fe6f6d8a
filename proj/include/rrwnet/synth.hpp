#pragma once

// Seeded synthetic A/V benchmark: smooth random curves on a fundus-coloured
// background. Each curve carries a weak colour cue for its class, and the cue
// flips sign along one stretch of the curve, so a purely local classifier
// makes errors that only the curve's context can undo.

#include <cstdint>
#include <filesystem>

#include "rrwnet/data.hpp"

namespace rrwnet::synth {

using data::FundusSample;

struct SynthConfig {
  std::size_t size = 64;
  int min_curves = 2;
  int max_curves = 4;
  int min_width = 1;
  int max_width = 3;
  // Class cue in 8-bit units on the blue channel, which otherwise shows no
  // vessel contrast (artery +, vein -).
  double cue = 20.0;
  double noise = 4.0;
  // Reversed stretch length as a fraction of the curve's arclength.
  double reverse_min = 0.2;
  double reverse_max = 0.35;
};

struct SynthImage {
  ByteImage rgb;
  ByteImage gt_rgb;
  Mask roi;
  // Pixels whose local cue contradicts their label.
  Mask reversed;
};

SynthImage generate(std::uint64_t seed, const SynthConfig& config = {});

// Decoded and preprocessed, as the dataset loader would produce it.
FundusSample to_sample(const SynthImage& image, const std::string& identifier);
FundusSample generate_sample(std::uint64_t seed, const SynthConfig& config = {});

// Writes root/{train,test}/{images,av,mask}/NNN.png. Image i of the train
// split uses seed (seed, i); the test split continues the stream.
void write_dataset(const std::filesystem::path& root, std::size_t train_count, std::size_t test_count,
                   std::uint64_t seed, const SynthConfig& config = {});

// Per-image seed for index i of a benchmark drawn from `seed`.
std::uint64_t image_seed(std::uint64_t seed, std::size_t index);

}  // namespace rrwnet::synth
