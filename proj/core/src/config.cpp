#include "drio/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "drio/dataset_io.hpp"
#include "drio/error.hpp"

namespace drio {

namespace {

using nlohmann::json;

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config: bad value for key '" + key + "'");
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) throw ValidationError("config: key '" + key + "' must be an integer");
  const auto v = j.get<long long>();
  if (v < 0) throw ValidationError("config: key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

void apply_backbone(const json& j, BackboneSpec& spec) {
  if (!j.is_object()) throw ValidationError("config: 'backbone' must be an object");
  for (const auto& [key, val] : j.items()) {
    if (key == "kind") {
      spec.kind = parse_backbone_kind(get_as<std::string>(val, key));
    } else if (key == "hidden_dim") {
      spec.hidden_dim = get_count(val, key);
    } else if (key == "layers") {
      spec.layers = get_count(val, key);
    } else if (key == "activation") {
      spec.activation = parse_activation(get_as<std::string>(val, key));
    } else if (key == "n_features") {
      spec.n_features = get_count(val, key);
    } else if (key == "seed") {
      spec.seed = get_as<std::uint64_t>(val, key);
    } else {
      throw ValidationError("config: unknown key 'backbone." + key + "'");
    }
  }
}

// Returns false for keys it does not know.
bool apply_key(const std::string& key, const json& val, RunConfig& cfg) {
  TrainConfig& t = cfg.train;
  if (key == "alpha") {
    t.alpha = get_as<double>(val, key);
  } else if (key == "gamma") {
    t.gamma = get_as<double>(val, key);
  } else if (key == "inner_steps") {
    t.inner_steps = get_count(val, key);
  } else if (key == "inner_lr") {
    t.inner_lr = get_as<double>(val, key);
  } else if (key == "lr") {
    t.lr = get_as<double>(val, key);
  } else if (key == "weight_decay") {
    t.weight_decay = get_as<double>(val, key);
  } else if (key == "input_drop") {
    t.input_drop = get_as<double>(val, key);
  } else if (key == "batch_size") {
    t.batch_size = get_count(val, key);
  } else if (key == "epochs") {
    t.epochs = get_count(val, key);
  } else if (key == "seed") {
    t.seed = get_as<std::uint64_t>(val, key);
    cfg.backbone.seed = t.seed;
  } else if (key == "tau") {
    if (val.is_string()) {
      if (val.get<std::string>() != "balanced") throw ValidationError("config: tau must be a number or \"balanced\"");
      t.sinkhorn.tau = SinkhornParams::kBalanced;
    } else {
      t.sinkhorn.tau = get_as<double>(val, key);
    }
  } else if (key == "epsilon") {
    if (!val.is_object()) throw ValidationError("config: 'epsilon' must be an object");
    for (const auto& [ek, ev] : val.items()) {
      if (ek == "mode") {
        const auto mode = get_as<std::string>(ev, "epsilon.mode");
        if (mode == "adaptive") {
          t.sinkhorn.epsilon_mode = EpsilonMode::kAdaptive;
        } else if (mode == "fixed") {
          t.sinkhorn.epsilon_mode = EpsilonMode::kFixed;
        } else {
          throw ValidationError("config: epsilon.mode must be \"adaptive\" or \"fixed\"");
        }
      } else if (ek == "value") {
        t.sinkhorn.epsilon = get_as<double>(ev, "epsilon.value");
      } else {
        throw ValidationError("config: unknown key 'epsilon." + ek + "'");
      }
    }
  } else if (key == "backbone") {
    apply_backbone(val, cfg.backbone);
  } else {
    return false;
  }
  return true;
}

void validate_run(const RunConfig& cfg) {
  cfg.train.validate();
  cfg.backbone.validate();
}

json backbone_json(const BackboneSpec& s) {
  return json{{"kind", std::string(to_string(s.kind))},
              {"n_features", s.n_features},
              {"hidden_dim", s.hidden_dim},
              {"layers", s.layers},
              {"activation", std::string(to_string(s.activation))},
              {"seed", s.seed}};
}

// Reads the descriptor line of a binary file and returns it parsed.
json read_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.filename().string() + ": missing header line");
  try {
    return json::parse(line);
  } catch (const json::parse_error&) {
    throw ValidationError(path.filename().string() + ": header is not JSON");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, RunConfig base) {
  const json j = parse_json(json_text, "config");
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  for (const auto& [key, val] : j.items()) {
    if (!apply_key(key, val, base)) throw ValidationError("config: unknown key '" + key + "'");
  }
  validate_run(base);
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  return parse_run_config(read_text(path), std::move(base));
}

std::string run_config_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  json j{{"alpha", t.alpha},
         {"gamma", t.gamma},
         {"inner_steps", t.inner_steps},
         {"inner_lr", t.inner_lr},
         {"lr", t.lr},
         {"weight_decay", t.weight_decay},
         {"input_drop", t.input_drop},
         {"batch_size", t.batch_size},
         {"epochs", t.epochs},
         {"seed", t.seed},
         {"epsilon",
          {{"mode", t.sinkhorn.epsilon_mode == EpsilonMode::kAdaptive ? "adaptive" : "fixed"},
           {"value", t.sinkhorn.epsilon}}},
         {"backbone", backbone_json(cfg.backbone)}};
  if (t.sinkhorn.balanced()) {
    j["tau"] = "balanced";
  } else {
    j["tau"] = t.sinkhorn.tau;
  }
  return j.dump(2);
}

GridSpec parse_grid(const std::string& json_text, const RunConfig& base) {
  const json j = parse_json(json_text, "grid");
  if (!j.is_object()) throw ValidationError("grid: top level must be an object");
  GridSpec grid;
  RunConfig cfg = base;
  for (const auto& [key, val] : j.items()) {
    if (key == "alphas") {
      grid.alphas = get_as<std::vector<double>>(val, key);
    } else if (key == "gammas") {
      grid.gammas = get_as<std::vector<double>>(val, key);
    } else if (!apply_key(key, val, cfg)) {
      throw ValidationError("grid: unknown key '" + key + "'");
    }
  }
  validate_run(cfg);
  grid.base = cfg.train;
  grid.backbone = cfg.backbone;
  grid.validate();
  return grid;
}

GridSpec load_grid(const std::filesystem::path& path, const RunConfig& base) {
  return parse_grid(read_text(path), base);
}

std::string params_bytes(const ImputerParams& params) {
  params.validate();
  json head = backbone_json(params.spec);
  head["n_params"] = params.flat.size();
  std::ostringstream os(std::ios::binary);
  os << head.dump() << '\n';
  write_f64_le(os, params.flat);
  return os.str();
}

void save_params(const ImputerParams& params, const std::filesystem::path& path) {
  write_file_atomic(path, params_bytes(params));
}

ImputerParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  const json head = read_header(in, path);
  ImputerParams p;
  RunConfig holder;
  try {
    json spec = head;
    spec.erase("n_params");
    apply_backbone(spec, holder.backbone);
  } catch (const ValidationError& e) {
    throw ValidationError("params.bin: " + std::string(e.what()));
  }
  p.spec = holder.backbone;
  if (!head.contains("n_params")) throw ValidationError("params.bin: header lacks n_params");
  const std::size_t n = get_count(head["n_params"], "n_params");
  if (n != count_params(p.spec)) throw ValidationError("params.bin: n_params does not match backbone layout");
  p.flat = read_f64_le(in, n);
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError("params.bin: trailing bytes");
  p.validate();
  return p;
}

void save_norm_stats(const NormStats& stats, const std::filesystem::path& path) {
  json head{{"d", stats.mean.d()}, {"t", stats.mean.t()}};
  std::ostringstream os(std::ios::binary);
  os << head.dump() << '\n';
  write_f64_le(os, stats.mean.storage());
  write_f64_le(os, stats.std.storage());
  write_file_atomic(path, os.str());
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing file: " + path.string());
  const json head = read_header(in, path);
  if (!head.contains("d") || !head.contains("t")) throw ValidationError("normalizer: header lacks d/t");
  const std::size_t d = get_count(head["d"], "d"), t = get_count(head["t"], "t");
  NormStats s{RealTensor(1, d, t), RealTensor(1, d, t)};
  s.mean.storage() = read_f64_le(in, d * t);
  s.std.storage() = read_f64_le(in, d * t);
  for (double v : s.std.storage()) {
    if (!(v > 0.0)) throw ValidationError("normalizer: non-positive std");
  }
  return s;
}

}  // namespace drio
