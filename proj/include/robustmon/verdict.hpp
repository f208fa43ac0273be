#ifndef ROBUSTMON_VERDICT_HPP
#define ROBUSTMON_VERDICT_HPP

namespace robustmon {

inline constexpr double kUnsafeThreshold = 0.5;

enum class Verdict { safe = 0, unsafe = 1 };

/// Monitor output for one window. Ties at the threshold resolve to unsafe.
struct MonitorVerdict {
  double p_unsafe = 0.0;
  Verdict predicted = Verdict::safe;

  static MonitorVerdict from_probability(double p) {
    return {p, p >= kUnsafeThreshold ? Verdict::unsafe : Verdict::safe};
  }
  bool unsafe() const { return predicted == Verdict::unsafe; }
};

}  // namespace robustmon

#endif  // ROBUSTMON_VERDICT_HPP
