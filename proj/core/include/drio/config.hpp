#pragma once

#include <filesystem>
#include <string>

#include "drio/cv.hpp"
#include "drio/data_model.hpp"
#include "drio/imputer.hpp"
#include "drio/train.hpp"

namespace drio {

/// Everything a training run needs besides data.
struct RunConfig {
  TrainConfig train{};
  BackboneSpec backbone{};
};

/// Parses the training config JSON:
///   {alpha, gamma, inner_steps, inner_lr, lr, weight_decay, batch_size, epochs,
///    input_drop, seed, tau, epsilon: {mode, value}, backbone: {kind, hidden_dim, layers, activation}}
/// Missing keys keep the values already in `base`. tau may be "balanced".
/// Unknown keys throw ValidationError naming the key.
RunConfig parse_run_config(const std::string& json_text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Resolved config as JSON (same schema; backbone also lists n_features).
std::string run_config_json(const RunConfig& cfg);

/// Grid file: {"alphas": [...], "gammas": [...]} plus any run-config keys.
GridSpec parse_grid(const std::string& json_text, const RunConfig& base);
GridSpec load_grid(const std::filesystem::path& path, const RunConfig& base);

/// params.bin: one JSON line describing the backbone, then the flat vector
/// as little-endian f64.
void save_params(const ImputerParams& params, const std::filesystem::path& path);
ImputerParams load_params(const std::filesystem::path& path);
std::string params_bytes(const ImputerParams& params);

/// Normalizer stats in the same layout: JSON header line, then mean and std.
void save_norm_stats(const NormStats& stats, const std::filesystem::path& path);
NormStats load_norm_stats(const std::filesystem::path& path);

}  // namespace drio
