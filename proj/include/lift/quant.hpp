#ifndef LIFT_QUANT_HPP
#define LIFT_QUANT_HPP

#include <cstdint>
#include <span>
#include <vector>

namespace lift {

/// Affine INT8 parameters: real = (q - zero_point) * scale.
struct QuantParams {
  float scale = 1.0f;
  int32_t zero_point = 0;

  /// Throws ParameterError unless scale is positive and finite and the zero
  /// point fits in int8.
  void validate() const;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// round-half-to-even(x / scale) + zero_point, saturated to [-128, 127].
int8_t quantize(double x, const QuantParams& qp);

double dequantize(int8_t q, const QuantParams& qp);

/// Rounds half to even, independent of the current floating-point mode.
double round_half_even(double x);

struct CalibrationMode {
  enum class Kind { kMinMax, kPercentile };
  Kind kind = Kind::kMinMax;
  double percentile = 99.9;  // used by kPercentile, in (0, 100]

  static CalibrationMode minmax() { return {}; }
  static CalibrationMode clipped(double p) { return {Kind::kPercentile, p}; }
};

/**
 * Asymmetric activation calibration.
 *
 * minmax: the observed range is widened to include zero, then
 * scale = (max - min) / 255 and zero_point = -128 - round(min / scale), so min
 * maps to -128. If every sample is equal the result is
 * scale = max(|v|, 1) / 127, zero_point = 0.
 * percentile(p): samples are first clipped to +-t where t is the p-th
 * percentile (linear interpolation) of |samples|.
 *
 * Throws CalibrationError on empty or non-finite input.
 */
QuantParams calibrate(std::span<const double> samples, CalibrationMode mode);
QuantParams calibrate(std::span<const float> samples, CalibrationMode mode);

/// Same rule applied to an already-reduced range.
QuantParams params_from_range(double min_v, double max_v);

/// Symmetric params (zero_point 0) with max_abs mapped to 127.
QuantParams symmetric_params(double max_abs);

/**
 * Fixed-point rescaling of an int32 accumulator:
 * out = clamp(round_half_even(acc * multiplier / 2^shift) + zero_point).
 * multiplier lies in [2^30, 2^31) and shift in [0, 62], so representable
 * factors span [2^-32, 2).
 */
class Requantizer {
 public:
  Requantizer() = default;

  /// Throws ParameterError when factor is not finite or falls outside
  /// [2^-32, 2).
  static Requantizer from_factor(double factor, int32_t output_zero_point);

  int32_t multiplier() const { return multiplier_; }
  int32_t shift() const { return shift_; }
  int32_t zero_point() const { return zero_point_; }
  double factor() const;

  /// round_half_even(acc * factor) with no offset and no clamping.
  int64_t scale(int64_t acc) const;

  int8_t apply(int32_t acc) const;
  /// As apply(), but clamps below at the zero point (fused ReLU).
  int8_t apply_relu(int32_t acc) const;

 private:
  int32_t multiplier_ = 1 << 30;
  int32_t shift_ = 30;
  int32_t zero_point_ = 0;
};

int8_t requantize(int32_t acc, const Requantizer& r);

/// Largest factor a Requantizer accepts.
inline constexpr double kMaxRequantFactor = 2.0;

int8_t saturate_int8(int64_t v);

/**
 * Per-output-channel symmetric quantization of a kernel whose last axis is
 * the output channel (row-major [..., cout]). Returns the int8 payload and
 * writes one scale per channel. All-zero channels get scale 1.
 */
std::vector<int8_t> quantize_per_channel(std::span<const double> weights, int cout,
                                         std::vector<float>& scales);

}  // namespace lift

#endif  // LIFT_QUANT_HPP
