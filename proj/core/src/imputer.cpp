#include "drio/imputer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drio/error.hpp"
#include "drio/random.hpp"

namespace drio {

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "mlp") return BackboneKind::kMlp;
  if (name == "birnn") return BackboneKind::kBiRnn;
  throw ValidationError("unknown backbone kind '" + std::string(name) + "'");
}

std::string_view to_string(BackboneKind kind) { return kind == BackboneKind::kMlp ? "mlp" : "birnn"; }

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ValidationError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) { return act == Activation::kRelu ? "relu" : "tanh"; }

void BackboneSpec::validate() const {
  if (n_features < 1) throw ValidationError("backbone: n_features must be >= 1");
  if (hidden_dim < 1) throw ValidationError("backbone: hidden_dim must be >= 1");
  if (layers < 1) throw ValidationError("backbone: layers must be >= 1");
}

namespace {

// ---------------------------------------------------------------------------
// Layout

struct Dense {
  std::size_t in = 0, out = 0, w = 0, b = 0;  // offsets of W (out x in, row-major) and b
};

struct GruCell {
  std::size_t in = 0, hidden = 0;
  // W* are hidden x in, U* hidden x hidden, b* hidden.
  std::size_t wz = 0, uz = 0, bz = 0, wr = 0, ur = 0, br = 0, wh = 0, uh = 0, bh = 0;
};

struct Layout {
  std::vector<Dense> dense;        // mlp stack, or the single birnn projection
  std::vector<GruCell> cells;      // birnn: layer l forward = 2l, backward = 2l + 1
  std::size_t total = 0;
};

Dense make_dense(std::size_t in, std::size_t out, std::size_t& offset) {
  Dense d{in, out, offset, offset + in * out};
  offset += in * out + out;
  return d;
}

GruCell make_cell(std::size_t in, std::size_t h, std::size_t& offset) {
  GruCell c;
  c.in = in;
  c.hidden = h;
  auto take = [&offset](std::size_t size) {
    const std::size_t at = offset;
    offset += size;
    return at;
  };
  c.wz = take(h * in);
  c.uz = take(h * h);
  c.bz = take(h);
  c.wr = take(h * in);
  c.ur = take(h * h);
  c.br = take(h);
  c.wh = take(h * in);
  c.uh = take(h * h);
  c.bh = take(h);
  return c;
}

Layout make_layout(const BackboneSpec& spec) {
  spec.validate();
  Layout lay;
  std::size_t offset = 0;
  const std::size_t d = spec.n_features, h = spec.hidden_dim;
  if (spec.kind == BackboneKind::kMlp) {
    lay.dense.push_back(make_dense(2 * d, h, offset));
    for (std::size_t l = 1; l < spec.layers; ++l) lay.dense.push_back(make_dense(h, h, offset));
    lay.dense.push_back(make_dense(h, d, offset));
  } else {
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const std::size_t in = l == 0 ? 2 * d : 2 * h;
      lay.cells.push_back(make_cell(in, h, offset));
      lay.cells.push_back(make_cell(in, h, offset));
    }
    lay.dense.push_back(make_dense(2 * h, d, offset));
  }
  lay.total = offset;
  return lay;
}

// ---------------------------------------------------------------------------
// Small dense kernels

// y = W x + b
void affine(const double* w, const double* b, const double* x, std::size_t in, std::size_t out, double* y) {
  for (std::size_t o = 0; o < out; ++o) {
    double s = b ? b[o] : 0.0;
    const double* row = w + o * in;
    for (std::size_t k = 0; k < in; ++k) s += row[k] * x[k];
    y[o] = s;
  }
}

// dW += dy x^T, db += dy, dx += W^T dy (any of db / dx may be null)
void affine_backward(const double* w, const double* x, const double* dy, std::size_t in, std::size_t out, double* dw,
                     double* db, double* dx) {
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    double* drow = dw + o * in;
    const double* row = w + o * in;
    for (std::size_t k = 0; k < in; ++k) drow[k] += g * x[k];
    if (db) db[o] += g;
    if (dx) {
      for (std::size_t k = 0; k < in; ++k) dx[k] += g * row[k];
    }
  }
}

double activate(Activation act, double z) { return act == Activation::kRelu ? std::max(0.0, z) : std::tanh(z); }

// Derivative expressed through the pre-activation z and output a.
double activate_grad(Activation act, double z, double a) {
  return act == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Per-sample network. Sequences are stored time-major: seq[t * width + k].

struct MlpCache {
  // For each dense layer: its input column and (hidden layers) pre-activation.
  std::vector<std::vector<double>> inputs, pre;
};

struct GruStep {
  std::vector<double> z, r, c, c_pre, h_prev;
};

struct DirectionCache {
  std::vector<GruStep> steps;  // indexed by time
};

struct RnnCache {
  std::vector<std::vector<double>> layer_inputs;  // per layer, T x in
  std::vector<DirectionCache> directions;          // 2 per layer
  std::vector<double> top;                         // T x 2H, input of projection
};

struct SampleCache {
  std::vector<double> input;  // T x 2D
  std::vector<MlpCache> mlp;  // one per timestep
  RnnCache rnn;
};

class Network {
 public:
  Network(const BackboneSpec& spec, std::span<const double> theta)
      : spec_(spec), layout_(make_layout(spec)), theta_(theta) {
    if (theta.size() != layout_.total) throw ValidationError("imputer: parameter vector has wrong length");
  }

  const Layout& layout() const { return layout_; }

  // input: T x 2D, out: T x D.
  void forward(const std::vector<double>& input, std::size_t steps, std::vector<double>& out,
               SampleCache* cache) const {
    if (spec_.kind == BackboneKind::kMlp) {
      forward_mlp(input, steps, out, cache);
    } else {
      forward_rnn(input, steps, out, cache);
    }
  }

  // d_out: T x D. Accumulates into grad.
  void backward(const SampleCache& cache, std::size_t steps, const std::vector<double>& d_out,
                std::vector<double>& grad) const {
    if (spec_.kind == BackboneKind::kMlp) {
      backward_mlp(cache, steps, d_out, grad);
    } else {
      backward_rnn(cache, steps, d_out, grad);
    }
  }

 private:
  const double* at(std::size_t offset) const { return theta_.data() + offset; }

  void forward_mlp(const std::vector<double>& input, std::size_t steps, std::vector<double>& out,
                   SampleCache* cache) const {
    const std::size_t d = spec_.n_features;
    if (cache) cache->mlp.assign(steps, MlpCache{});
    std::vector<double> a, z;
    for (std::size_t t = 0; t < steps; ++t) {
      a.assign(input.begin() + static_cast<std::ptrdiff_t>(t * 2 * d),
               input.begin() + static_cast<std::ptrdiff_t>((t + 1) * 2 * d));
      for (std::size_t l = 0; l < layout_.dense.size(); ++l) {
        const Dense& layer = layout_.dense[l];
        z.assign(layer.out, 0.0);
        affine(at(layer.w), at(layer.b), a.data(), layer.in, layer.out, z.data());
        if (cache) cache->mlp[t].inputs.push_back(a);
        const bool last = l + 1 == layout_.dense.size();
        if (!last) {
          if (cache) cache->mlp[t].pre.push_back(z);
          for (double& v : z) v = activate(spec_.activation, v);
        }
        a.swap(z);
      }
      std::copy(a.begin(), a.end(), out.begin() + static_cast<std::ptrdiff_t>(t * d));
    }
  }

  void backward_mlp(const SampleCache& cache, std::size_t steps, const std::vector<double>& d_out,
                    std::vector<double>& grad) const {
    const std::size_t d = spec_.n_features;
    std::vector<double> delta, d_in;
    for (std::size_t t = 0; t < steps; ++t) {
      const MlpCache& c = cache.mlp[t];
      delta.assign(d_out.begin() + static_cast<std::ptrdiff_t>(t * d),
                   d_out.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
      for (std::size_t l = layout_.dense.size(); l-- > 0;) {
        const Dense& layer = layout_.dense[l];
        d_in.assign(layer.in, 0.0);
        affine_backward(at(layer.w), c.inputs[l].data(), delta.data(), layer.in, layer.out, grad.data() + layer.w,
                        grad.data() + layer.b, l > 0 ? d_in.data() : nullptr);
        if (l == 0) break;
        // d_in is w.r.t. the activated output of layer l - 1.
        const auto& pre = c.pre[l - 1];
        const auto& act = c.inputs[l];
        for (std::size_t k = 0; k < layer.in; ++k) d_in[k] *= activate_grad(spec_.activation, pre[k], act[k]);
        delta.swap(d_in);
      }
    }
  }

  void run_cell(const GruCell& cell, const std::vector<double>& seq, std::size_t steps, bool reverse,
                std::vector<double>& out, std::size_t out_stride, std::size_t out_offset,
                DirectionCache* cache) const {
    const std::size_t h = cell.hidden, in = cell.in;
    std::vector<double> hidden(h, 0.0), az(h), ar(h), ac(h), rh(h), tmp(h);
    if (cache) cache->steps.assign(steps, GruStep{});
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = reverse ? steps - 1 - s : s;
      const double* u = seq.data() + t * in;
      affine(at(cell.wz), at(cell.bz), u, in, h, az.data());
      affine(at(cell.uz), nullptr, hidden.data(), h, h, tmp.data());
      for (std::size_t k = 0; k < h; ++k) az[k] = sigmoid(az[k] + tmp[k]);
      affine(at(cell.wr), at(cell.br), u, in, h, ar.data());
      affine(at(cell.ur), nullptr, hidden.data(), h, h, tmp.data());
      for (std::size_t k = 0; k < h; ++k) ar[k] = sigmoid(ar[k] + tmp[k]);
      for (std::size_t k = 0; k < h; ++k) rh[k] = ar[k] * hidden[k];
      affine(at(cell.wh), at(cell.bh), u, in, h, ac.data());
      affine(at(cell.uh), nullptr, rh.data(), h, h, tmp.data());
      std::vector<double> c_pre(h), c(h);
      for (std::size_t k = 0; k < h; ++k) {
        c_pre[k] = ac[k] + tmp[k];
        c[k] = activate(spec_.activation, c_pre[k]);
      }
      if (cache) {
        GruStep& st = cache->steps[t];
        st.z = az;
        st.r = ar;
        st.h_prev = hidden;
        st.c_pre = c_pre;
        st.c = c;
      }
      for (std::size_t k = 0; k < h; ++k) hidden[k] = (1.0 - az[k]) * hidden[k] + az[k] * c[k];
      std::copy(hidden.begin(), hidden.end(), out.begin() + static_cast<std::ptrdiff_t>(t * out_stride + out_offset));
    }
  }

  // d_h_out: T x 2H (only columns [offset, offset + H) used); accumulates d_in (T x in).
  void backward_cell(const GruCell& cell, const std::vector<double>& seq, const DirectionCache& cache,
                     std::size_t steps, bool reverse, const std::vector<double>& d_h_out, std::size_t stride,
                     std::size_t offset, std::vector<double>& grad, std::vector<double>* d_in) const {
    const std::size_t h = cell.hidden, in = cell.in;
    std::vector<double> dh(h, 0.0), dh_next(h, 0.0), dz(h), dr(h), dc(h), drh(h), rh(h);
    for (std::size_t s = steps; s-- > 0;) {
      const std::size_t t = reverse ? steps - 1 - s : s;
      const GruStep& st = cache.steps[t];
      const double* u = seq.data() + t * in;
      double* du = d_in ? d_in->data() + t * in : nullptr;
      for (std::size_t k = 0; k < h; ++k) dh[k] = d_h_out[t * stride + offset + k] + dh_next[k];
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      for (std::size_t k = 0; k < h; ++k) {
        dh_next[k] += dh[k] * (1.0 - st.z[k]);
        dz[k] = dh[k] * (st.c[k] - st.h_prev[k]) * st.z[k] * (1.0 - st.z[k]);
        dc[k] = dh[k] * st.z[k] * activate_grad(spec_.activation, st.c_pre[k], st.c[k]);
        rh[k] = st.r[k] * st.h_prev[k];
      }
      // Candidate.
      std::fill(drh.begin(), drh.end(), 0.0);
      affine_backward(at(cell.wh), u, dc.data(), in, h, grad.data() + cell.wh, grad.data() + cell.bh, du);
      affine_backward(at(cell.uh), rh.data(), dc.data(), h, h, grad.data() + cell.uh, nullptr, drh.data());
      for (std::size_t k = 0; k < h; ++k) {
        dh_next[k] += drh[k] * st.r[k];
        dr[k] = drh[k] * st.h_prev[k] * st.r[k] * (1.0 - st.r[k]);
      }
      // Gates.
      affine_backward(at(cell.wz), u, dz.data(), in, h, grad.data() + cell.wz, grad.data() + cell.bz, du);
      affine_backward(at(cell.uz), st.h_prev.data(), dz.data(), h, h, grad.data() + cell.uz, nullptr, dh_next.data());
      affine_backward(at(cell.wr), u, dr.data(), in, h, grad.data() + cell.wr, grad.data() + cell.br, du);
      affine_backward(at(cell.ur), st.h_prev.data(), dr.data(), h, h, grad.data() + cell.ur, nullptr, dh_next.data());
    }
  }

  void forward_rnn(const std::vector<double>& input, std::size_t steps, std::vector<double>& out,
                   SampleCache* cache) const {
    const std::size_t h = spec_.hidden_dim, d = spec_.n_features;
    std::vector<double> seq = input, next(steps * 2 * h);
    if (cache) {
      cache->rnn.layer_inputs.clear();
      cache->rnn.directions.assign(layout_.cells.size(), DirectionCache{});
    }
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      if (cache) cache->rnn.layer_inputs.push_back(seq);
      run_cell(layout_.cells[2 * l], seq, steps, false, next, 2 * h, 0, cache ? &cache->rnn.directions[2 * l] : nullptr);
      run_cell(layout_.cells[2 * l + 1], seq, steps, true, next, 2 * h, h,
               cache ? &cache->rnn.directions[2 * l + 1] : nullptr);
      seq = next;
    }
    if (cache) cache->rnn.top = seq;
    const Dense& proj = layout_.dense.front();
    for (std::size_t t = 0; t < steps; ++t) affine(at(proj.w), at(proj.b), seq.data() + t * 2 * h, 2 * h, d, out.data() + t * d);
  }

  void backward_rnn(const SampleCache& cache, std::size_t steps, const std::vector<double>& d_out,
                    std::vector<double>& grad) const {
    const std::size_t h = spec_.hidden_dim, d = spec_.n_features;
    const Dense& proj = layout_.dense.front();
    std::vector<double> d_seq(steps * 2 * h, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      affine_backward(at(proj.w), cache.rnn.top.data() + t * 2 * h, d_out.data() + t * d, 2 * h, d,
                      grad.data() + proj.w, grad.data() + proj.b, d_seq.data() + t * 2 * h);
    }
    for (std::size_t l = spec_.layers; l-- > 0;) {
      const auto& seq = cache.rnn.layer_inputs[l];
      const std::size_t in = layout_.cells[2 * l].in;
      std::vector<double> d_in(steps * in, 0.0);
      std::vector<double>* d_in_ptr = l > 0 ? &d_in : nullptr;
      backward_cell(layout_.cells[2 * l], seq, cache.rnn.directions[2 * l], steps, false, d_seq, 2 * h, 0, grad,
                    d_in_ptr);
      backward_cell(layout_.cells[2 * l + 1], seq, cache.rnn.directions[2 * l + 1], steps, true, d_seq, 2 * h, h,
                    grad, d_in_ptr);
      if (l > 0) d_seq = std::move(d_in);
    }
  }

  const BackboneSpec& spec_;
  Layout layout_;
  std::span<const double> theta_;
};

void check_input(const ImputerParams& params, const ImputerInput& input) {
  if (!(input.x_filled.shape() == input.mask.shape())) throw ValidationError("imputer: input/mask shape mismatch");
  if (input.x_filled.d() != params.spec.n_features) {
    throw ValidationError("imputer: input has " + std::to_string(input.x_filled.d()) + " features, backbone expects " +
                          std::to_string(params.spec.n_features));
  }
}

std::vector<double> sample_input(const ImputerInput& input, std::size_t i) {
  const std::size_t d = input.x_filled.d(), steps = input.x_filled.t();
  std::vector<double> seq(steps * 2 * d);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t f = 0; f < d; ++f) {
      seq[t * 2 * d + f] = input.x_filled(i, f, t);
      seq[t * 2 * d + d + f] = input.mask(i, f, t) ? 1.0 : 0.0;
    }
  }
  return seq;
}

void compose(const ImputerInput& input, ImputerOutput& out) {
  out.x_hat = RealTensor(out.g_raw.shape());
  for (std::size_t k = 0; k < out.g_raw.size(); ++k) {
    out.x_hat[k] = input.mask[k] ? input.x_filled[k] : out.g_raw[k];
  }
}

}  // namespace

std::size_t count_params(const BackboneSpec& spec) { return make_layout(spec).total; }

void ImputerParams::validate() const {
  if (flat.size() != count_params(spec)) throw ValidationError("imputer params: length does not match layout");
  for (double v : flat) {
    if (!std::isfinite(v)) throw ValidationError("imputer params: non-finite entry");
  }
}

ImputerParams init_params(const BackboneSpec& spec) {
  const Layout lay = make_layout(spec);
  ImputerParams params{spec, std::vector<double>(lay.total, 0.0)};
  Rng rng = make_rng(spec.seed, 0x1A17ULL);
  auto glorot = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t k = 0; k < fan_in * fan_out; ++k) params.flat[offset + k] = dist(rng);
  };
  for (const GruCell& c : lay.cells) {
    glorot(c.wz, c.in, c.hidden);
    glorot(c.uz, c.hidden, c.hidden);
    glorot(c.wr, c.in, c.hidden);
    glorot(c.ur, c.hidden, c.hidden);
    glorot(c.wh, c.in, c.hidden);
    glorot(c.uh, c.hidden, c.hidden);
  }
  for (const Dense& dn : lay.dense) glorot(dn.w, dn.in, dn.out);
  return params;
}

ImputerOutput forward(const ImputerParams& params, const ImputerInput& input) {
  check_input(params, input);
  const Network net(params.spec, params.flat);
  const std::size_t d = input.x_filled.d(), steps = input.x_filled.t();
  ImputerOutput out{RealTensor(input.x_filled.shape()), {}};
  std::vector<double> seq_out(steps * d);
  for (std::size_t i = 0; i < input.x_filled.n(); ++i) {
    net.forward(sample_input(input, i), steps, seq_out, nullptr);
    for (std::size_t f = 0; f < d; ++f) {
      for (std::size_t t = 0; t < steps; ++t) out.g_raw(i, f, t) = seq_out[t * d + f];
    }
  }
  compose(input, out);
  return out;
}

LossAndGrad loss_grad(const ImputerParams& params, const ImputerInput& input, const LossClosure& closure) {
  check_input(params, input);
  const Network net(params.spec, params.flat);
  const std::size_t b = input.x_filled.n(), d = input.x_filled.d(), steps = input.x_filled.t();

  std::vector<SampleCache> caches(b);
  ImputerOutput out{RealTensor(input.x_filled.shape()), {}};
  std::vector<double> seq_out(steps * d);
  for (std::size_t i = 0; i < b; ++i) {
    caches[i].input = sample_input(input, i);
    net.forward(caches[i].input, steps, seq_out, &caches[i]);
    for (std::size_t f = 0; f < d; ++f) {
      for (std::size_t t = 0; t < steps; ++t) out.g_raw(i, f, t) = seq_out[t * d + f];
    }
  }
  compose(input, out);

  const OutputLoss loss = closure(out);
  if (!std::isfinite(loss.value)) throw Error("loss_grad: non-finite loss");
  RealTensor d_g(out.g_raw.shape(), 0.0);
  if (!loss.d_g_raw.empty()) {
    if (!(loss.d_g_raw.shape() == d_g.shape())) throw ValidationError("loss_grad: d_g_raw shape mismatch");
    d_g = loss.d_g_raw;
  }
  if (!loss.d_x_hat.empty()) {
    if (!(loss.d_x_hat.shape() == d_g.shape())) throw ValidationError("loss_grad: d_x_hat shape mismatch");
    for (std::size_t k = 0; k < d_g.size(); ++k) {
      if (!input.mask[k]) d_g[k] += loss.d_x_hat[k];
    }
  }

  LossAndGrad res{loss.value, std::vector<double>(params.flat.size(), 0.0)};
  std::vector<double> d_seq(steps * d);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      for (std::size_t t = 0; t < steps; ++t) d_seq[t * d + f] = d_g(i, f, t);
    }
    net.backward(caches[i], steps, d_seq, res.grad);
  }
  return res;
}

}  // namespace drio
