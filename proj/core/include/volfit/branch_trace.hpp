#pragma once

#include <cstdint>

namespace volfit {

/// Fingerprint of the discrete decisions taken by a forward evaluation
/// (trilinear cell, domain and clamp tests, opacity saturation, activation
/// sign...). Two evaluations with equal signatures lie on the same smooth
/// piece of the function, which is what finite-difference checks need.
///
/// Recording is thread-local and off unless a BranchTrace is alive on the
/// calling thread. Events combine commutatively so the signature does not
/// depend on evaluation order.
class BranchTrace {
 public:
  BranchTrace() : previous_(sink()) { sink() = &value_; }
  ~BranchTrace() { sink() = previous_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  std::uint64_t signature() const { return value_; }

  static bool active() { return sink() != nullptr; }

  static void record(std::uint64_t tag, std::int64_t a, std::int64_t b = 0, std::int64_t c = 0) {
    if (std::uint64_t* s = sink()) {
      std::uint64_t h = mix(tag);
      h = mix(h ^ static_cast<std::uint64_t>(a));
      h = mix(h ^ static_cast<std::uint64_t>(b));
      h = mix(h ^ static_cast<std::uint64_t>(c));
      *s += h;
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }
  static std::uint64_t*& sink() {
    thread_local std::uint64_t* s = nullptr;
    return s;
  }

  std::uint64_t value_ = 0;
  std::uint64_t* previous_;
};

namespace trace_tag {
inline constexpr std::uint64_t kTrilinearCell = 1;
inline constexpr std::uint64_t kTrilinearOutside = 2;
inline constexpr std::uint64_t kTrilinearClamp = 3;
inline constexpr std::uint64_t kMarchSteps = 4;
inline constexpr std::uint64_t kMarchSaturated = 5;
inline constexpr std::uint64_t kLogClamp = 6;
inline constexpr std::uint64_t kOpacityClamp = 7;
inline constexpr std::uint64_t kLeakyRelu = 8;
inline constexpr std::uint64_t kTvZeroNorm = 9;
inline constexpr std::uint64_t kMeshHit = 10;
}  // namespace trace_tag

}  // namespace volfit
