#ifndef LIFT_ENGINE_HPP
#define LIFT_ENGINE_HPP

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lift/config.hpp"
#include "lift/network.hpp"
#include "lift/pillarizer.hpp"
#include "lift/sparse.hpp"
#include "lift/types.hpp"

namespace lift {

/// Fully quantized network in stored form. Every tensor is int8 with
/// per-tensor activation parameters; kernels are per-output-channel
/// symmetric. The encoder kernel acts on integer-centered input features
/// (q_f - zp_f): the per-feature input scales are folded into it before
/// quantization, so its input scale is 1.
struct QuantizedModel {
  std::vector<QuantParams> input;  // one per point feature
  QConvParams encoder;             // 1x1, cin = features, cout = half
  QuantParams encoder_out;
  std::vector<std::vector<QConvParams>> stages;
  std::vector<std::vector<QuantParams>> stage_out;
  QConvParams align;
  QuantParams align_out;
  QuantParams add1_out;
  QuantParams add2_out;
  QConvParams heatmap_hidden;
  QuantParams heatmap_hidden_out;
  QConvParams heatmap_out;
  QuantParams heatmap_out_out;
  QConvParams regression_hidden;
  QuantParams regression_hidden_out;
  QConvParams regression_out;
  QuantParams regression_out_out;
};

/// Real-valued weights recovered from a quantized model (encoder unfolded).
FusedWeights dequantize_model(const QuantizedModel& model);

struct StageStats {
  std::size_t points = 0;   // points kept in pillars
  std::size_t pillars = 0;
  std::array<std::size_t, 4> stage_sites{};
  std::size_t head_sites = 0;
};

struct InferenceResult {
  std::vector<DetectionBox> boxes;
  RealTensor heatmap;     // logits (dequantized on the int8 path)
  RealTensor regression;  // dequantized on the int8 path
  StageStats stats;
};

InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const FusedWeights& weights, const ForwardHooks& hooks = {});
InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const TrainWeights& weights, const ForwardHooks& hooks = {});
InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const QuantizedModel& model, const ForwardHooks& hooks = {});

template <typename Weights>
InferenceResult infer_cloud(const PointCloud& cloud, const EngineConfig& cfg,
                            const Weights& weights, const ForwardHooks& hooks = {}) {
  return infer(pillarize(cloud, cfg.grid, cfg.features), cfg, weights, hooks);
}

/// Integer DBPFN: per point acc = bias_q + sum w_q * (q_f - zp_f), requantized
/// to `output`, then channel max / min over the pillar.
QTensor dbpfn_encode_int8(const PillarSet& pillars, std::span<const QuantParams> input,
                          const QConvParams& encoder, const QuantParams& output);

/// Accumulates activation statistics by name. The "input" activation keeps
/// one statistic per feature; every other name is per-tensor.
class ActivationObserver {
 public:
  struct Stats {
    double min = 0.0;
    double max = 0.0;
    std::size_t count = 0;
    std::vector<float> sample;  // deterministic decimated subsample
    std::size_t stride = 1;
    std::size_t seen = 0;

    void add(float v);
  };

  void record(std::string_view name, std::span<const float> values, int channels);
  ForwardHooks hooks();

  const Stats& get(const std::string& name) const;
  bool contains(const std::string& name) const { return stats_.contains(name); }
  QuantParams params(const std::string& name, CalibrationMode mode) const;

  static constexpr std::size_t kSampleCap = std::size_t{1} << 18;

 private:
  std::map<std::string, Stats, std::less<>> stats_;
};

/// Runs float inference over `clouds`, collects activation ranges and builds a
/// quantized model. Output scales are floored so every requantization factor
/// stays representable. Throws CalibrationError when `clouds` is empty.
QuantizedModel calibrate_model(const FusedWeights& weights, const EngineConfig& cfg,
                               std::span<const PointCloud> clouds);

/// Builds the quantized model from observed statistics.
QuantizedModel quantize_model(const FusedWeights& weights, const EngineConfig& cfg,
                              const ActivationObserver& observer);

}  // namespace lift

#endif  // LIFT_ENGINE_HPP
