#ifndef LIFT_MODEL_IO_HPP
#define LIFT_MODEL_IO_HPP

#include <filesystem>

#include "lift/config.hpp"
#include "lift/engine.hpp"
#include "lift/network.hpp"
#include "lift/weight_file.hpp"

namespace lift {

// Tensor naming (S from 1, L from 0):
//   encoder.linear.{weight,bias}          [f_in, half], [half]
//   encoder.bn.{gamma,beta,mean,var,eps}  training form only
//   stage{S}.layer{L}.conv3x3.weight      [3, 3, cin, cout] + .gamma ... .eps
//   stage{S}.layer{L}.conv1x1.weight      [1, 1, cin, cout] + .gamma ... .eps
//   stage{S}.layer{L}.identity.{gamma,beta,mean,var,eps}
//   stage{S}.layer{L}.fused.{weight,bias}
//   {align,head.heatmap.hidden,head.regression.hidden}.conv.{weight,gamma,...}
//   {align,head.heatmap.hidden,head.regression.hidden}.fused.{weight,bias}
//   head.{heatmap,regression}.out.{weight,bias}
//   act.<activation>                      int8 form: zero-element marker
//                                         carrying the activation QuantParams
// Kernels are [ky][kx][cin][cout]. The int8 form stores kernels as i8 with
// per-channel scales on the last axis and keeps biases as f32.

enum class WeightForm { kTraining, kFused, kQuantized };

const char* to_string(WeightForm form);

/// Throws FormatError when the file holds no recognizable network.
WeightForm detect_form(const WeightFile& file);

WeightFile to_weight_file(const TrainWeights& weights);
WeightFile to_weight_file(const FusedWeights& weights);
WeightFile to_weight_file(const QuantizedModel& model);

// Readers check every tensor against the shapes implied by `cfg`, in file
// naming order, and throw ShapeError naming the first mismatch. Missing or
// unexpected tensors raise FormatError.
TrainWeights read_train_weights(const WeightFile& file, const EngineConfig& cfg);
FusedWeights read_fused_weights(const WeightFile& file, const EngineConfig& cfg);
QuantizedModel read_quantized_model(const WeightFile& file, const EngineConfig& cfg);

/// Copy of `base` with the network shape and feature count taken from the
/// tensors of `file` (encoder width, stage widths and depths, head sizes).
EngineConfig config_from_weights(const WeightFile& file, EngineConfig base = {});

}  // namespace lift

#endif  // LIFT_MODEL_IO_HPP
