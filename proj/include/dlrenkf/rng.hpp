#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace dlrenkf {

// Counter-based noise streams. Every stream is derived deterministically from
// (master seed, domain, step index, particle index), so runs are reproducible
// regardless of evaluation order or thread count, and FOM/DLR runs sharing a
// seed consume identical draws.
enum class NoiseDomain : std::uint64_t {
  prior_theta = 1,
  prior_perturb = 2,
  observation = 3,
  analysis_perturb = 4,
  initial_state = 5,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, NoiseDomain domain, std::uint64_t step = 0,
              std::uint64_t particle = 0) {
    std::uint64_t s = seed;
    state_ = splitmix64(s);
    s ^= static_cast<std::uint64_t>(domain) * 0x9E3779B97F4A7C15ull;
    state_ ^= splitmix64(s);
    s ^= step * 0xD1B54A32D192ED03ull;
    state_ ^= splitmix64(s);
    s ^= particle * 0x8CB92BA72F3D8DD7ull;
    state_ ^= splitmix64(s);
  }

  // uniform in (0, 1]
  double uniform() {
    const std::uint64_t bits = splitmix64(state_);
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * M_PI * u2;
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // column p is the draw for particle p
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dlrenkf
