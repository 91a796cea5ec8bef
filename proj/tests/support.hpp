#pragma once

// Fixtures shared by the unit suites and the acceptance runner.

#include <cstdint>
#include <random>

#include "teachclip/teachclip.hpp"

namespace teachclip::support {

inline std::vector<FrameFeatureSequence> random_videos(std::mt19937_64& rng, std::size_t b, std::size_t m,
                                                       std::size_t d) {
  return gaussian_videos(rng, b, m, d);
}

inline std::vector<TextFeatureInput> random_texts(std::mt19937_64& rng, std::size_t b, std::size_t dt) {
  return gaussian_texts(rng, b, dt);
}

inline void jitter(StudentParams& p, std::mt19937_64& rng, double scale) { jitter_params(p, rng, scale); }

inline GradCheckReport full_network_grad_check(std::uint64_t seed, std::size_t d = 8, std::size_t m = 4,
                                               std::size_t layers = 1, std::size_t b = 3, std::size_t heads = 1,
                                               double h = 1e-5) {
  return network_grad_check(seed, {d, m, layers, b, heads, h});
}

}  // namespace teachclip::support
