#ifndef CLIPOT_RANDOM_HPP_
#define CLIPOT_RANDOM_HPP_

#include <cstddef>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace clipot {

/// Fisher-Yates driven by raw engine output, so a seed gives the same order
/// with every standard library.
template <typename T>
void shuffle_in_place(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<int> random_permutation(int count, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, rng);
  return order;
}

}  // namespace clipot

#endif  // CLIPOT_RANDOM_HPP_
