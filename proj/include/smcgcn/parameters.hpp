#pragma once

// The shared trainable parameter set (Chebyshev layers + MLP head), the
// Adam optimizer and the checkpoint container.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smcgcn/classifier_head.hpp"
#include "smcgcn/error.hpp"
#include "smcgcn/gcn_backbone.hpp"
#include "smcgcn/types.hpp"

namespace smcgcn {

struct ModelShape {
  Index rois = 0;          // node count R; also the feature width carried by particles
  Index d_hidden = 64;
  Index layers = 2;        // Chebyshev layers: R -> d_hidden -> ... -> R
  Index cheb_order = 3;
  Index d_mlp = 32;
  Index classes = 2;

  void validate() const {
    if (rois < 2) throw InputError("model needs at least 2 nodes");
    if (layers < 2) throw InputError("model needs at least 2 Chebyshev layers");
    if (d_hidden < 1 || d_mlp < 1) throw InputError("hidden widths must be positive");
    if (cheb_order < 1) throw InputError("Chebyshev order must be >= 1");
    if (classes < 2) throw InputError("need at least 2 classes");
  }
};

struct ModelParameters {
  ModelShape shape;
  std::uint64_t init_seed = 0;
  std::vector<ChebLayer> layers;
  MlpHead head;

  // Visits every tensor in a fixed order with a stable name.
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t k = 0; k < layers[l].weights.size(); ++k)
        f("cheb" + std::to_string(l) + ".W" + std::to_string(k), layers[l].weights[k]);
      f("cheb" + std::to_string(l) + ".bias", layers[l].bias);
    }
    f(std::string("mlp.w1"), head.w1);
    f(std::string("mlp.b1"), head.b1);
    f(std::string("mlp.w2"), head.w2);
    f(std::string("mlp.b2"), head.b2);
  }

  template <class F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParameters*>(this)->for_each_tensor(
        [&f](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  void zero_grad() {
    for_each_tensor([](const std::string&, Tensor& t) { t.zero_grad(); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&n](const std::string&, const Tensor& t) { n += static_cast<std::size_t>(t.value.size()); });
    return n;
  }

  // Width of the embedding handed to the readout.
  Index hidden_width() const { return layers.size() >= 2 ? layers[layers.size() - 2].d_out() : 0; }

  void validate() const {
    if (layers.size() < 2) throw InputError("model needs at least 2 Chebyshev layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].validate();
      if (l + 1 < layers.size() && layers[l].d_out() != layers[l + 1].d_in())
        throw InputError("Chebyshev layer " + std::to_string(l) + " output width " +
                         std::to_string(layers[l].d_out()) + " does not match layer " +
                         std::to_string(l + 1) + " input width " +
                         std::to_string(layers[l + 1].d_in()));
    }
    if (layers.front().d_in() != layers.back().d_out())
      throw InputError("last Chebyshev layer must map back to the node feature width");
    head.validate();
    if (head.input_width() != 2 * hidden_width())
      throw InputError("MLP input width must be 2 x hidden width");
  }
};

inline ModelParameters make_model_parameters(const ModelShape& shape, std::uint64_t seed) {
  shape.validate();
  ModelParameters p;
  p.shape = shape;
  p.init_seed = seed;
  Rng rng(seed);
  for (Index l = 0; l < shape.layers; ++l) {
    const Index in = l == 0 ? shape.rois : shape.d_hidden;
    const Index out = l + 1 == shape.layers ? shape.rois : shape.d_hidden;
    p.layers.push_back(make_cheb_layer(in, out, shape.cheb_order, rng));
  }
  p.head = make_mlp_head(shape.d_hidden, shape.d_mlp, shape.classes, rng);
  p.validate();
  return p;
}

// Output of the transition GCN for one particle.
struct GcnOutput {
  Matrix features;  // last layer, identity activation
  Matrix hidden;    // last hidden layer after ReLU, used by the readout
};

inline GcnOutput gcn_forward(const Matrix& features, const Matrix& lap,
                             const std::vector<ChebLayer>& layers) {
  GcnOutput out;
  Matrix h = features;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool last = l + 1 == layers.size();
    h = cheb_forward(h, lap, layers[l], !last);
    if (l + 2 == layers.size()) out.hidden = h;
  }
  out.features = std::move(h);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

// One Adam update from the accumulated gradients; gradients are zeroed
// afterwards.
inline void adam_step(ModelParameters& params, AdamState& state, const AdamConfig& cfg) {
  params.for_each_tensor([](const std::string& name, Tensor& t) {
    if (!t.grad.allFinite()) throw NumericalError("non-finite gradient in " + name);
  });
  if (state.m.empty()) {
    params.for_each_tensor([&state](const std::string&, Tensor& t) {
      state.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
      state.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    });
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string&, Tensor& t) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    ++i;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * t.grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * t.grad.cwiseAbs2();
    t.value.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
    t.zero_grad();
  });
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON container, numbers written in shortest round-trip form.

inline constexpr const char* kCheckpointFormat = "smcgcn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  j["data"] = data;
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) throw InputError("checkpoint matrix size mismatch");
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}
}  // namespace detail

inline nlohmann::json checkpoint_to_json(const ModelParameters& params, const AdamState& adam) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["shape"] = {{"rois", params.shape.rois},         {"d_hidden", params.shape.d_hidden},
                {"layers", params.shape.layers},     {"cheb_order", params.shape.cheb_order},
                {"d_mlp", params.shape.d_mlp},       {"classes", params.shape.classes}};
  j["init_seed"] = params.init_seed;
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each_tensor([&tensors](const std::string& name, const Tensor& t) {
    auto e = detail::matrix_to_json(t.value);
    e["name"] = name;
    tensors.push_back(std::move(e));
  });
  j["tensors"] = std::move(tensors);
  nlohmann::json moments = nlohmann::json::array();
  for (std::size_t i = 0; i < adam.m.size(); ++i)
    moments.push_back({{"m", detail::matrix_to_json(adam.m[i])}, {"v", detail::matrix_to_json(adam.v[i])}});
  j["adam"] = {{"step", adam.step}, {"moments", std::move(moments)}};
  return j;
}

inline void checkpoint_from_json(const nlohmann::json& j, ModelParameters& params, AdamState& adam) {
  if (j.value("format", "") != kCheckpointFormat) throw InputError("not a checkpoint file");
  if (j.value("version", 0) != kCheckpointVersion)
    throw InputError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  const auto& s = j.at("shape");
  ModelShape shape;
  shape.rois = s.at("rois").get<Index>();
  shape.d_hidden = s.at("d_hidden").get<Index>();
  shape.layers = s.at("layers").get<Index>();
  shape.cheb_order = s.at("cheb_order").get<Index>();
  shape.d_mlp = s.at("d_mlp").get<Index>();
  shape.classes = s.at("classes").get<Index>();
  params = make_model_parameters(shape, j.at("init_seed").get<std::uint64_t>());
  const auto& tensors = j.at("tensors");
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw InputError("checkpoint is missing tensor " + name);
    const auto& e = tensors[i++];
    if (e.at("name").get<std::string>() != name)
      throw InputError("checkpoint tensor order mismatch at " + name);
    Matrix m = detail::matrix_from_json(e);
    if (m.rows() != t.value.rows() || m.cols() != t.value.cols())
      throw InputError("checkpoint tensor " + name + " has wrong shape");
    t = Tensor(std::move(m));
  });
  if (i != tensors.size()) throw InputError("checkpoint has extra tensors");
  params.validate();
  adam = AdamState{};
  const auto& a = j.at("adam");
  adam.step = a.at("step").get<std::int64_t>();
  for (const auto& mv : a.at("moments")) {
    adam.m.push_back(detail::matrix_from_json(mv.at("m")));
    adam.v.push_back(detail::matrix_from_json(mv.at("v")));
  }
}

inline void save_checkpoint(const std::string& path, const ModelParameters& params,
                            const AdamState& adam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path);
  out << checkpoint_to_json(params, adam).dump() << '\n';
}

inline void load_checkpoint(const std::string& path, ModelParameters& params, AdamState& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint " + path + ": " + e.what());
  }
  try {
    checkpoint_from_json(j, params, adam);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint " + path + ": " + e.what());
  }
}

}  // namespace smcgcn
