#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "drio/tensor.hpp"

namespace drio {

enum class BackboneKind { kMlp, kBiRnn };
enum class Activation { kRelu, kTanh };

BackboneKind parse_backbone_kind(std::string_view name);
std::string_view to_string(BackboneKind kind);
Activation parse_activation(std::string_view name);
std::string_view to_string(Activation act);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kMlp;
  std::size_t n_features = 1;  // D; fixes input width 2D and output width D
  std::size_t hidden_dim = 32;
  std::size_t layers = 2;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Layout size of the flat parameter vector.
///  mlp:   (2D -> H) + (layers - 1) x (H -> H) + (H -> D), each weights + bias.
///  birnn: per layer and direction a two-gate recurrent cell with input
///         width 2D (first layer) or 2H, 3 (H in + H H + H) parameters;
///         then a (2H -> D) per-timestep projection.
std::size_t count_params(const BackboneSpec& spec);

struct ImputerParams {
  BackboneSpec spec;
  std::vector<double> flat;

  void validate() const;
};

/// Glorot-uniform weights (a = sqrt(6 / (fan_in + fan_out)) per matrix),
/// zero biases, deterministic in spec.seed.
ImputerParams init_params(const BackboneSpec& spec);

struct ImputerInput {
  RealTensor x_filled;  // observed values, missing entries batch-mean filled
  MaskTensor mask;
};

struct ImputerOutput {
  RealTensor g_raw;  // generator output at every position
  RealTensor x_hat;  // x_obs + (1 - M) * g_raw
};

/// Runs the backbone over every sample. The network input at each timestep
/// is the 2D-channel column [x_filled(:, t); mask(:, t)].
ImputerOutput forward(const ImputerParams& params, const ImputerInput& input);

/// A scalar loss of the imputer output together with its partial
/// derivatives. Either gradient tensor may be left empty (treated as zero).
struct OutputLoss {
  double value = 0.0;
  RealTensor d_g_raw;
  RealTensor d_x_hat;
};

using LossClosure = std::function<OutputLoss(const ImputerOutput&)>;

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same length as params.flat
};

/// Exact gradient of closure(forward(params, input)) with respect to every
/// parameter; d_x_hat is chained into g_raw through (1 - M).
LossAndGrad loss_grad(const ImputerParams& params, const ImputerInput& input, const LossClosure& closure);

}  // namespace drio
