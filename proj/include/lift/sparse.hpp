#ifndef LIFT_SPARSE_HPP
#define LIFT_SPARSE_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "lift/common.hpp"
#include "lift/quant.hpp"

namespace lift {

/// Set of active coordinates of a 2D grid, held in canonical (j, i) order with
/// O(1) coordinate lookup. Immutable; shared between tensors with the same
/// sparsity pattern (every submanifold layer reuses its input's set).
class ActiveSet {
 public:
  /// Sorts `coords` canonically. Throws RangeError on out-of-grid or
  /// duplicate coordinates.
  static std::shared_ptr<const ActiveSet> make(int width, int height,
                                               std::vector<Coord> coords);
  /// `coords` must already be canonical and unique.
  static std::shared_ptr<const ActiveSet> make_sorted(int width, int height,
                                                      std::vector<Coord> coords);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  std::span<const Coord> coords() const { return coords_; }
  const Coord& operator[](std::size_t idx) const { return coords_[idx]; }

  /// Row index of `c`, or -1 when inactive or outside the grid.
  int32_t find(Coord c) const;
  bool contains(Coord c) const { return find(c) >= 0; }

  bool same_coords(const ActiveSet& other) const {
    return width_ == other.width_ && height_ == other.height_ && coords_ == other.coords_;
  }

 private:
  ActiveSet(int width, int height, std::vector<Coord> coords);

  int width_ = 0;
  int height_ = 0;
  std::vector<Coord> coords_;
  // Dense row-major lookup for grids up to kDenseLimit cells, hash otherwise.
  std::vector<int32_t> dense_;
  std::unordered_map<int64_t, int32_t> sparse_;

  static constexpr int64_t kDenseLimit = int64_t{1} << 24;
};

using ActiveSetPtr = std::shared_ptr<const ActiveSet>;

/// Sparse 2D feature map: one `channels`-wide row per active coordinate.
/// The int8 instantiation always carries QuantParams.
template <typename T>
class SparseTensor {
 public:
  SparseTensor() : SparseTensor(ActiveSet::make_sorted(0, 0, {}), 1, {}) {}

  SparseTensor(ActiveSetPtr set, int channels, std::vector<T> features,
               std::optional<QuantParams> quant = std::nullopt);

  /// Builds from unsorted (coord, row) pairs; rows follow their coordinates.
  static SparseTensor from_entries(int width, int height, int channels,
                                   std::span<const Coord> coords,
                                   std::span<const T> features,
                                   std::optional<QuantParams> quant = std::nullopt);

  static SparseTensor empty(int width, int height, int channels,
                            std::optional<QuantParams> quant = std::nullopt) {
    return SparseTensor(ActiveSet::make_sorted(width, height, {}), channels, {}, quant);
  }

  int width() const { return set_->width(); }
  int height() const { return set_->height(); }
  int channels() const { return channels_; }
  std::size_t size() const { return set_->size(); }
  bool empty() const { return set_->empty(); }

  const ActiveSet& active() const { return *set_; }
  const ActiveSetPtr& active_ptr() const { return set_; }
  std::span<const Coord> coords() const { return set_->coords(); }

  std::span<const T> features() const { return features_; }
  std::span<const T> row(std::size_t idx) const {
    return {features_.data() + idx * static_cast<std::size_t>(channels_),
            static_cast<std::size_t>(channels_)};
  }
  /// Row at coordinate `c`, empty span when inactive.
  std::span<const T> at(Coord c) const {
    const int32_t idx = set_->find(c);
    return idx < 0 ? std::span<const T>{} : row(static_cast<std::size_t>(idx));
  }

  const std::optional<QuantParams>& quant() const { return quant_; }

 private:
  ActiveSetPtr set_;
  int channels_ = 1;
  std::vector<T> features_;
  std::optional<QuantParams> quant_;
};

using RealTensor = SparseTensor<float>;
using QTensor = SparseTensor<int8_t>;

/// Dequantizes every feature.
RealTensor dequantize_tensor(const QTensor& x);
QTensor quantize_tensor(const RealTensor& x, const QuantParams& qp);

// ---------------------------------------------------------------------------
// Convolution weights and rulebooks

/// Real-valued kernel in [ky][kx][cin][cout] layout plus per-output bias.
struct ConvWeights {
  int kernel = 3;
  int cin = 0;
  int cout = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static ConvWeights zeros(int kernel, int cin, int cout);
  void validate() const;

  double& at(int ky, int kx, int ci, int co) {
    return weight[index(ky, kx, ci, co)];
  }
  double at(int ky, int kx, int ci, int co) const {
    return weight[index(ky, kx, ci, co)];
  }
  std::size_t index(int ky, int kx, int ci, int co) const {
    return ((static_cast<std::size_t>(ky) * kernel + kx) * cin + ci) * cout + co;
  }
};

struct RulePair {
  int32_t in = 0;   // row in the input active set
  int32_t out = 0;  // row in the output active set
};

/// Gather/scatter plan of one convolution. Offset k = dy * kernel + dx
/// connects output o to input stride * o + (dx, dy) - kernel / 2.
struct Rulebook {
  int kernel = 3;
  int stride = 1;
  ActiveSetPtr input;
  ActiveSetPtr output;
  std::vector<std::vector<RulePair>> pairs;  // per offset, ascending `out`
  // neighbors[o * kernel^2 + k]: input row feeding output o at offset k, or -1.
  std::vector<int32_t> neighbors;

  std::size_t offsets() const { return static_cast<std::size_t>(kernel) * kernel; }
  std::size_t pair_count() const;
};

/// Output grid size for a `kernel`/`stride` convolution with padding kernel / 2.
int conv_output_extent(int extent, int kernel, int stride);

/// Output active set of a regular (dilating) sparse convolution: o is active
/// iff some tap of o lands on an active input.
ActiveSetPtr regular_output_set(const ActiveSet& in, int kernel, int stride);

/// Pairs every output in `out` with the active inputs under its taps.
Rulebook build_rulebook(ActiveSetPtr in, ActiveSetPtr out, int kernel, int stride);

Rulebook build_submanifold_rulebook(ActiveSetPtr in, int kernel);
Rulebook build_regular_rulebook(ActiveSetPtr in, int kernel, int stride);

enum class Activation { kNone, kRelu };

/// Real-path core: bias + sum of taps for every output row, accumulated in
/// double in ascending offset then input-channel order.
std::vector<double> conv_accumulate(const RealTensor& x, const Rulebook& rb,
                                    const ConvWeights& w);

/// Applies activation and packages accumulators as a tensor on rb.output.
RealTensor finish_real(const Rulebook& rb, int cout, std::span<const double> acc,
                       Activation act);

RealTensor conv(const RealTensor& x, const Rulebook& rb, const ConvWeights& w,
                Activation act = Activation::kNone);

/// Output active set equals input active set; padding kernel / 2.
RealTensor submanifold_conv(const RealTensor& x, const ConvWeights& w,
                            Activation act = Activation::kNone);
/// Stride-1 regular convolution: the active set dilates by the kernel.
RealTensor regular_conv(const RealTensor& x, const ConvWeights& w,
                        Activation act = Activation::kNone);
/// 3x3, stride 2, padding 1 downsampling convolution.
RealTensor sparse_conv_stride2(const RealTensor& x, const ConvWeights& w,
                               Activation act = Activation::kNone);

// ---------------------------------------------------------------------------
// INT8 convolution

/// Stored form of a quantized kernel: per-output-channel symmetric int8
/// weights plus real bias (quantized against the input scale at prepare time).
struct QConvParams {
  int kernel = 3;
  int cin = 0;
  int cout = 0;
  std::vector<int8_t> weight;        // [ky][kx][cin][cout]
  std::vector<float> weight_scales;  // per cout
  std::vector<float> bias;           // real, per cout

  static QConvParams from_real(const ConvWeights& w);
  ConvWeights dequantized() const;
  void validate() const;
};

/// Executable int8 layer: int32 bias in units of s_in * s_w[c] and one
/// Requantizer per output channel with factor s_in * s_w[c] / s_out.
struct QConvLayer {
  QConvParams params;
  QuantParams input;
  QuantParams output;
  Activation act = Activation::kNone;
  std::vector<int32_t> bias_q;
  std::vector<Requantizer> requant;

  static QConvLayer prepare(QConvParams params, QuantParams input, QuantParams output,
                            Activation act);
};

/// Smallest output scale a layer with these input/weight scales can use.
double min_output_scale(double input_scale, std::span<const float> weight_scales);

/// int32 accumulators: bias_q + sum (x - zp_in) * w over taps.
std::vector<int32_t> conv_accumulate_int8(const QTensor& x, const Rulebook& rb,
                                          const QConvLayer& layer);

QTensor conv(const QTensor& x, const Rulebook& rb, const QConvLayer& layer);
QTensor submanifold_conv(const QTensor& x, const QConvLayer& layer);
QTensor regular_conv(const QTensor& x, const QConvLayer& layer);
QTensor sparse_conv_stride2(const QTensor& x, const QConvLayer& layer);

// ---------------------------------------------------------------------------
// Multi-scale addition and pooling

/**
 * out[c] = base[c] + other[floor(c / factor)] where that coarse coordinate is
 * active, base[c] otherwise. The output active set is base's.
 */
RealTensor sparse_add_projected(const RealTensor& base, const RealTensor& other,
                                int factor);

/// Integer variant: both operands are rescaled to `output` with fixed-point
/// multipliers, summed, offset and saturated.
QTensor sparse_add_projected(const QTensor& base, const QTensor& other, int factor,
                             const QuantParams& output);

/// Submanifold max pooling: out[o][c] = max of x[.][c] over active sites in
/// the k x k window centered on o.
template <typename T>
SparseTensor<T> sparse_max_pool(const SparseTensor<T>& x, int kernel = 3);

}  // namespace lift

#endif  // LIFT_SPARSE_HPP
