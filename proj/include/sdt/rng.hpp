#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sdt {

// Seeded random source. Distribution transforms are written out here rather
// than taken from <random> so that streams are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for (seed, a, b), e.g. (dataset seed, clip index, purpose).
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t index(std::size_t n);  // uniform in [0, n)
  std::uint64_t next_u64() { return engine_(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace sdt
