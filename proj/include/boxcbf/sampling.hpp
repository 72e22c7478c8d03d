#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "boxcbf/cbf_core.hpp"

namespace boxcbf {

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generator for sample `index` of a run seeded with `seed`; independent of how
// many draws earlier samples consumed.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline Vector uniform_in_box(const Vector& lo, const Vector& hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) x(i) = lo(i) + (hi(i) - lo(i)) * unit(rng);
  return x;
}

// Uniform draw from the model's sampling box, rejected until inside the valid region.
inline Vector sample_state(const SystemModel& model, std::mt19937_64& rng,
                           std::size_t max_attempts = 1000) {
  if (model.sample_lower.size() != model.state_dim || model.sample_upper.size() != model.state_dim) {
    throw SamplingError("model '" + model.name + "' has no sampling box");
  }
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    Vector x = uniform_in_box(model.sample_lower, model.sample_upper, rng);
    if (model.in_valid_region(x)) return x;
  }
  std::ostringstream os;
  os << "sampling: " << max_attempts << " consecutive draws from the box of '" << model.name
     << "' fell outside its valid region";
  throw SamplingError(os.str());
}

// `count` states: the two extreme corners of the sampling box first, then
// uniform draws. The corners are not filtered by the region predicate.
inline std::vector<Vector> sample_states_with_corners(const SystemModel& model, std::size_t count,
                                                      std::uint64_t seed) {
  std::vector<Vector> out;
  if (count > 0) out.push_back(model.sample_lower);
  if (count > 1) out.push_back(model.sample_upper);
  for (std::size_t i = out.size(); i < count; ++i) {
    auto rng = sample_rng(seed, i);
    out.push_back(uniform_in_box(model.sample_lower, model.sample_upper, rng));
  }
  return out;
}

}  // namespace boxcbf
