#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "drio/config.hpp"
#include "drio/error.hpp"

using namespace drio;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("drio_config_" + name + "_" + std::to_string(getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, MissingKeysKeepBase) {
  RunConfig base;
  base.train.epochs = 7;
  const RunConfig r = parse_run_config(R"({"alpha": 0.25, "backbone": {"kind": "birnn", "hidden_dim": 8}})", base);
  EXPECT_EQ(r.train.alpha, 0.25);
  EXPECT_EQ(r.train.epochs, 7u);
  EXPECT_EQ(r.backbone.kind, BackboneKind::kBiRnn);
  EXPECT_EQ(r.backbone.hidden_dim, 8u);
  EXPECT_EQ(r.backbone.layers, base.backbone.layers);
}

TEST(Config, AllKeys) {
  const RunConfig r = parse_run_config(R"({
    "alpha": 0.9, "gamma": 5, "inner_steps": 3, "inner_lr": 0.02, "lr": 0.001,
    "weight_decay": 0, "input_drop": 0.1, "batch_size": 16, "epochs": 4, "seed": 9,
    "tau": "balanced", "epsilon": {"mode": "fixed", "value": 0.2},
    "backbone": {"kind": "mlp", "hidden_dim": 12, "layers": 3, "activation": "tanh"}})");
  EXPECT_EQ(r.train.gamma, 5.0);
  EXPECT_EQ(r.train.inner_steps, 3u);
  EXPECT_EQ(r.train.input_drop, 0.1);
  EXPECT_EQ(r.train.seed, 9u);
  EXPECT_EQ(r.backbone.seed, 9u);
  EXPECT_TRUE(r.train.sinkhorn.balanced());
  EXPECT_EQ(r.train.sinkhorn.epsilon_mode, EpsilonMode::kFixed);
  EXPECT_EQ(r.train.sinkhorn.epsilon, 0.2);
  EXPECT_EQ(r.backbone.activation, Activation::kTanh);
  EXPECT_EQ(r.backbone.layers, 3u);
}

TEST(Config, UnknownAndBadValues) {
  EXPECT_NE(what_of([] { parse_run_config(R"({"alhpa": 0.5})"); }).find("unknown key 'alhpa'"), std::string::npos);
  EXPECT_NE(what_of([] { parse_run_config(R"({"epsilon": {"mod": "fixed"}})"); }).find("epsilon.mod"),
            std::string::npos);
  EXPECT_THROW(parse_run_config(R"({"alpha": 2})"), ValidationError);
  EXPECT_THROW(parse_run_config(R"({"alpha": "high"})"), ValidationError);
  EXPECT_THROW(parse_run_config(R"({"tau": "loose"})"), ValidationError);
  EXPECT_THROW(parse_run_config(R"({"batch_size": -1})"), ValidationError);
  EXPECT_THROW(parse_run_config(R"({"backbone": {"kind": "lstm"}})"), ValidationError);
  EXPECT_THROW(parse_run_config("[1, 2]"), ValidationError);
  EXPECT_THROW(parse_run_config("{not json"), ValidationError);
}

TEST(Config, JsonRoundTrip) {
  RunConfig r;
  r.train.alpha = 0.3;
  r.train.sinkhorn.tau = SinkhornParams::kBalanced;
  r.backbone.n_features = 5;
  r.backbone.kind = BackboneKind::kBiRnn;
  const RunConfig back = parse_run_config(run_config_json(r));
  EXPECT_EQ(back.train.alpha, 0.3);
  EXPECT_TRUE(back.train.sinkhorn.balanced());
  EXPECT_EQ(back.backbone, r.backbone);
  EXPECT_EQ(run_config_json(back), run_config_json(r));
}

TEST(Config, GridFile) {
  RunConfig base;
  base.backbone.n_features = 3;
  const GridSpec g = parse_grid(R"({"alphas": [0.5, 0.9], "gammas": [1], "epochs": 2})", base);
  EXPECT_EQ(g.alphas, (std::vector<double>{0.5, 0.9}));
  EXPECT_EQ(g.gammas, (std::vector<double>{1.0}));
  EXPECT_EQ(g.base.epochs, 2u);
  EXPECT_EQ(g.backbone.n_features, 3u);
  const GridSpec d = parse_grid("{}", base);
  EXPECT_EQ(d.alphas.size(), 5u);
  EXPECT_EQ(d.gammas.size(), 4u);
  EXPECT_THROW(parse_grid(R"({"alphas": [0.5, 0.5]})", base), ValidationError);
  EXPECT_THROW(parse_grid(R"({"betas": [1]})", base), ValidationError);
}

TEST(Config, ParamsRoundTrip) {
  const fs::path dir = temp_dir("params");
  BackboneSpec b;
  b.kind = BackboneKind::kBiRnn;
  b.n_features = 3;
  b.hidden_dim = 5;
  b.layers = 2;
  b.seed = 4;
  const ImputerParams p = init_params(b);
  save_params(p, dir / "params.bin");
  const ImputerParams q = load_params(dir / "params.bin");
  EXPECT_EQ(q.spec, p.spec);
  EXPECT_EQ(q.flat, p.flat);
  EXPECT_EQ(params_bytes(q), params_bytes(p));

  // Layout mismatch and trailing garbage are rejected.
  {
    std::ofstream out(dir / "params.bin", std::ios::binary | std::ios::app);
    out << 'x';
  }
  EXPECT_THROW(load_params(dir / "params.bin"), ValidationError);
  std::string bytes = params_bytes(p);
  bytes.replace(bytes.find("\"hidden_dim\":5"), 14, "\"hidden_dim\":6");
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << bytes;
  }
  EXPECT_THROW(load_params(dir / "bad.bin"), ValidationError);
  EXPECT_THROW(load_params(dir / "absent.bin"), ValidationError);
  fs::remove_all(dir);
}

TEST(Config, NormalizerRoundTrip) {
  const fs::path dir = temp_dir("norm");
  NormStats s{RealTensor(1, 2, 3), RealTensor(1, 2, 3, 1.0)};
  for (std::size_t k = 0; k < 6; ++k) {
    s.mean[k] = 0.1 * static_cast<double>(k) - 0.2;
    s.std[k] = 1.0 + static_cast<double>(k) / 3.0;
  }
  save_norm_stats(s, dir / "normalizer.bin");
  const NormStats r = load_norm_stats(dir / "normalizer.bin");
  EXPECT_EQ(r.mean, s.mean);
  EXPECT_EQ(r.std, s.std);
  fs::remove_all(dir);
}
