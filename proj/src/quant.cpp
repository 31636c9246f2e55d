#include "lift/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lift/common.hpp"

namespace lift {

void QuantParams::validate() const {
  if (!(scale > 0.0f) || !std::isfinite(scale)) {
    throw ParameterError("quantization scale must be positive and finite");
  }
  if (zero_point < -128 || zero_point > 127) {
    throw ParameterError("zero point " + std::to_string(zero_point) +
                         " outside [-128, 127]");
  }
}

double round_half_even(double x) {
  const double f = std::floor(x);
  const double diff = x - f;
  if (diff < 0.5) return f;
  if (diff > 0.5) return f + 1.0;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

int8_t saturate_int8(int64_t v) {
  return static_cast<int8_t>(std::clamp<int64_t>(v, -128, 127));
}

int8_t quantize(double x, const QuantParams& qp) {
  if (std::isnan(x)) return saturate_int8(qp.zero_point);
  const double q = round_half_even(x / static_cast<double>(qp.scale)) + qp.zero_point;
  return static_cast<int8_t>(std::clamp(q, -128.0, 127.0));
}

double dequantize(int8_t q, const QuantParams& qp) {
  return static_cast<double>(static_cast<int32_t>(q) - qp.zero_point) *
         static_cast<double>(qp.scale);
}

QuantParams params_from_range(double min_v, double max_v) {
  if (!std::isfinite(min_v) || !std::isfinite(max_v) || min_v > max_v) {
    throw CalibrationError("invalid calibration range");
  }
  if (min_v == max_v) {
    return {static_cast<float>(std::max(std::abs(min_v), 1.0) / 127.0), 0};
  }
  const double lo = std::min(min_v, 0.0);
  const double hi = std::max(max_v, 0.0);
  QuantParams qp;
  qp.scale = static_cast<float>((hi - lo) / 255.0);
  // lo * 255 / (hi - lo) is lo / scale without the float rounding of scale,
  // so a symmetric range like [-1, 1] lands exactly on -127.5 -> zero point 0.
  const double offset = round_half_even(lo * 255.0 / (hi - lo));
  qp.zero_point = static_cast<int32_t>(std::clamp(-128.0 - offset, -128.0, 127.0));
  return qp;
}

QuantParams symmetric_params(double max_abs) {
  if (!(max_abs > 0.0) || !std::isfinite(max_abs)) return {1.0f, 0};
  return {static_cast<float>(max_abs / 127.0), 0};
}

namespace {

template <typename T>
QuantParams calibrate_impl(std::span<const T> samples, CalibrationMode mode) {
  if (samples.empty()) throw CalibrationError("calibration needs at least one sample");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (T s : samples) {
    const double v = static_cast<double>(s);
    if (!std::isfinite(v)) throw CalibrationError("non-finite calibration sample");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (mode.kind == CalibrationMode::Kind::kPercentile) {
    if (!(mode.percentile > 0.0) || mode.percentile > 100.0) {
      throw CalibrationError("percentile must lie in (0, 100]");
    }
    std::vector<double> mags;
    mags.reserve(samples.size());
    for (T s : samples) mags.push_back(std::abs(static_cast<double>(s)));
    std::sort(mags.begin(), mags.end());
    const double rank = mode.percentile / 100.0 * static_cast<double>(mags.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(rank));
    const std::size_t above = std::min(below + 1, mags.size() - 1);
    const double t = mags[below] + (rank - static_cast<double>(below)) * (mags[above] - mags[below]);
    lo = std::max(lo, -t);
    hi = std::min(hi, t);
  }
  return params_from_range(lo, hi);
}

}  // namespace

QuantParams calibrate(std::span<const double> samples, CalibrationMode mode) {
  return calibrate_impl(samples, mode);
}

QuantParams calibrate(std::span<const float> samples, CalibrationMode mode) {
  return calibrate_impl(samples, mode);
}

Requantizer Requantizer::from_factor(double factor, int32_t output_zero_point) {
  if (!std::isfinite(factor) || factor < 0x1.0p-32 || factor >= kMaxRequantFactor) {
    throw ParameterError("requantization factor " + std::to_string(factor) +
                         " outside [2^-32, 2)");
  }
  if (output_zero_point < -128 || output_zero_point > 127) {
    throw ParameterError("output zero point outside int8 range");
  }
  int exponent = 0;
  const double mantissa = std::frexp(factor, &exponent);  // [0.5, 1)
  auto multiplier = static_cast<int64_t>(round_half_even(std::ldexp(mantissa, 31)));
  if (multiplier == (int64_t{1} << 31)) {
    multiplier >>= 1;
    ++exponent;
  }
  Requantizer r;
  r.multiplier_ = static_cast<int32_t>(multiplier);
  r.shift_ = 31 - exponent;
  r.zero_point_ = output_zero_point;
  return r;
}

double Requantizer::factor() const {
  return std::ldexp(static_cast<double>(multiplier_), -shift_);
}

int64_t Requantizer::scale(int64_t acc) const {
  const int64_t product = acc * static_cast<int64_t>(multiplier_);
  if (shift_ == 0) return product;
  const int64_t q = product >> shift_;  // floor
  const int64_t rem = product - (q << shift_);
  const int64_t half = int64_t{1} << (shift_ - 1);
  if (rem > half || (rem == half && (q & 1) != 0)) return q + 1;
  return q;
}

int8_t Requantizer::apply(int32_t acc) const {
  return saturate_int8(scale(acc) + zero_point_);
}

int8_t Requantizer::apply_relu(int32_t acc) const {
  return saturate_int8(std::max<int64_t>(scale(acc), 0) + zero_point_);
}

int8_t requantize(int32_t acc, const Requantizer& r) { return r.apply(acc); }

std::vector<int8_t> quantize_per_channel(std::span<const double> weights, int cout,
                                         std::vector<float>& scales) {
  if (cout <= 0 || weights.size() % static_cast<std::size_t>(cout) != 0) {
    throw ShapeError("kernel size is not a multiple of the output channel count");
  }
  const std::size_t channels = static_cast<std::size_t>(cout);
  std::vector<double> max_abs(channels, 0.0);
  for (std::size_t idx = 0; idx < weights.size(); ++idx) {
    max_abs[idx % channels] = std::max(max_abs[idx % channels], std::abs(weights[idx]));
  }
  scales.assign(channels, 1.0f);
  for (std::size_t c = 0; c < channels; ++c) {
    if (max_abs[c] > 0.0) scales[c] = static_cast<float>(max_abs[c] / 127.0);
  }
  std::vector<int8_t> q(weights.size());
  for (std::size_t idx = 0; idx < weights.size(); ++idx) {
    const double v = round_half_even(weights[idx] / static_cast<double>(scales[idx % channels]));
    q[idx] = static_cast<int8_t>(std::clamp(v, -127.0, 127.0));
  }
  return q;
}

}  // namespace lift
