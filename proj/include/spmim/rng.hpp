#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace spmim {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

// Deterministic seed for a sub-stream identified by `path`, e.g.
// derive_seed(seed, {epoch, image_index, kMaskStream}).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

// Uniform integer in [0, n) by rejection; portable across standard libraries
// (unlike std::uniform_int_distribution).
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

// Uniform double in [0, 1) from the top 53 bits.
double uniform_unit(std::mt19937_64& rng);

// Fisher-Yates shuffle of 0..n-1.
std::vector<int> shuffled_indices(int n, std::mt19937_64& rng);

template <typename T>
void shuffle_in_place(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// Named stream tags for derive_seed paths.
enum StreamTag : std::uint64_t {
  kMaskStream = 0x6d61736b,
  kAugmentStream = 0x61756720,
  kDropoutStream = 0x64726f70,
  kShuffleStream = 0x73687566,
  kInitStream = 0x696e6974,
  kSplitStream = 0x73706c74,
};

}  // namespace spmim
