#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flowrl/rng.hpp"
#include "flowrl/tensor.hpp"

namespace flowrl {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

enum class Norm { none, layer_norm };

struct DenseLayer {
  Tensor w;  // [out, in]
  Tensor b;  // [out]
};

struct NormLayer {
  Tensor gain;  // [d]
  Tensor bias;  // [d]
};

// Plain MLP: affine -> (layer_norm?) -> gelu on every hidden layer, final
// layer affine only. Value networks enable layer_norm, policy networks
// leave it off.
struct Mlp {
  std::vector<DenseLayer> layers;
  std::vector<NormLayer> norms;  // one per hidden layer when norm is on
  Norm norm = Norm::none;

  // dims = {in, hidden..., out}; Glorot-uniform weights, zero biases
  static Mlp make(const std::vector<int>& dims, Norm norm, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp::make: need at least input and output dims");
    Mlp net;
    net.norm = norm;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      int in = dims[l], out = dims[l + 1];
      if (in <= 0 || out <= 0) throw std::invalid_argument("Mlp::make: dims must be positive");
      double limit = std::sqrt(6.0 / (in + out));
      std::vector<double> w(static_cast<std::size_t>(in) * out);
      for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
      net.layers.push_back({Tensor::from({out, in}, std::move(w), true),
                            Tensor::zeros({out}, true)});
      bool hidden = l + 2 < dims.size();
      if (hidden && norm == Norm::layer_norm)
        net.norms.push_back({Tensor::full({out}, 1.0, true), Tensor::zeros({out}, true)});
    }
    return net;
  }

  int in_dim() const { return layers.front().w.dim(1); }
  int out_dim() const { return layers.back().w.dim(0); }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      h = linear(h, layers[l].w, layers[l].b);
      if (l + 1 < layers.size()) {
        if (norm == Norm::layer_norm) h = layer_norm(h, norms[l].gain, norms[l].bias);
        h = gelu(h);
      }
    }
    return h;
  }

  void params(std::vector<Tensor>& out) const {
    for (const auto& l : layers) {
      out.push_back(l.w);
      out.push_back(l.b);
    }
    for (const auto& n : norms) {
      out.push_back(n.gain);
      out.push_back(n.bias);
    }
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    params(out);
    return out;
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.emplace_back(prefix + ".l" + std::to_string(l) + ".w", layers[l].w);
      out.emplace_back(prefix + ".l" + std::to_string(l) + ".b", layers[l].b);
    }
    for (std::size_t l = 0; l < norms.size(); ++l) {
      out.emplace_back(prefix + ".n" + std::to_string(l) + ".gain", norms[l].gain);
      out.emplace_back(prefix + ".n" + std::to_string(l) + ".bias", norms[l].bias);
    }
  }

  // Deep copy; the copy owns fresh leaves (used for target networks and
  // read-only evaluation snapshots).
  Mlp clone() const {
    Mlp c;
    c.norm = norm;
    for (const auto& l : layers) c.layers.push_back({l.w.clone(true), l.b.clone(true)});
    for (const auto& n : norms) c.norms.push_back({n.gain.clone(true), n.bias.clone(true)});
    return c;
  }
};

// hidden architecture helper: {in, hidden.., out} from a hidden spec
inline std::vector<int> mlp_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims;
  dims.push_back(in);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(out);
  return dims;
}

}  // namespace flowrl
