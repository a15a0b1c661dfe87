#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slat/tape.hpp"
#include "slat/tensor.hpp"

namespace slat {

enum class Activation { relu, softplus };

Activation parse_activation(const std::string& name);
const char* to_string(Activation act);

struct Param {
  std::string name;
  Tensor value;
};

enum class LayerKind { dense, conv2d, activation, maxpool2x2, flatten };

struct Layer {
  LayerKind kind;
  // Indices into Model::params for dense/conv2d.
  std::size_t weight = 0;
  std::size_t bias = 0;
};

/// Perturbation per injection site, keyed by site id.
using Deltas = std::map<int, Tensor>;

/// Valid input range; applied to the input after injection at site 0.
struct InputRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Layer stack grouped into blocks. Site k is the input of block k, so site 0
/// is the input layer and sites 1..L-1 are the hidden representations
/// between blocks. The output of the last block is the logits and is never a
/// site.
class Model {
 public:
  Model(Shape input_shape, std::size_t classes, Activation activation);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t classes() const noexcept { return classes_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  const std::vector<std::vector<Layer>>& blocks() const noexcept { return blocks_; }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::size_t parameter_count() const;

  const std::vector<int>& sites() const noexcept { return sites_; }
  /// Replaces K. Throws UnknownSite for ids outside 0..L-1.
  void set_sites(std::vector<int> sites);
  double eta(int site) const;
  /// Same step size at every site in K.
  void set_eta(double eta);
  void set_eta(int site, double eta);
  const std::map<int, double>& etas() const noexcept { return eta_; }

  /// True when every op is dense or softplus (double differentiation works).
  bool twice_differentiable() const;

  // Builder interface used by the zoo.
  std::size_t add_param(std::string name, Tensor value);
  void begin_block();
  void add_layer(Layer layer);

 private:
  Shape input_shape_;
  std::size_t classes_;
  Activation activation_;
  std::vector<Param> params_;
  std::vector<std::vector<Layer>> blocks_;
  std::vector<int> sites_;
  std::map<int, double> eta_;
};

/// Single dense layer; K = {0}.
Model build_linear(std::size_t d_in, std::size_t classes, std::uint64_t seed = 0);
/// dense(2->hidden) + activation, dense(hidden->2); K = {0, 1}.
Model build_toy_mlp(std::size_t hidden, Activation activation, std::uint64_t seed = 0);
/// conv3x3x16-act-pool, conv3x3x32-act-pool, flatten+dense. K = {0, 1, 2}, or
/// {0, 2} for the deep variant. Throws ShapeTooSmall when H or W < 8.
Model build_small_cnn(const Shape& in_shape, std::size_t classes, Activation activation = Activation::relu,
                      bool deep_sites = false, std::uint64_t seed = 0);

struct ForwardOptions {
  bool param_grad = false;
  bool input_grad = false;
  std::optional<InputRange> clamp;
};

/// One recorded forward pass. `sites` holds h_k for every k in K, taken
/// before the site's perturbation is added.
struct ForwardResult {
  Tape tape;
  NodeId input;
  NodeId logits;
  std::vector<NodeId> params;
  std::map<int, NodeId> sites;

  const Tensor& logit_values() const { return tape.value(logits); }
  Tensor latent(int site) const { return tape.value(tape.site(site)); }
};

/// x is [B, input_shape...]. Deltas keys must be sites of the model.
ForwardResult forward_with_latents(const Model& model, const Tensor& x, const Deltas& deltas = {},
                                   const ForwardOptions& options = {});

/// Runs blocks k..L-1 on h (a leaf that requires grad); the truncated
/// network f_{k:L}. Registers h as site k.
ForwardResult forward_from(const Model& model, int site, const Tensor& h, const ForwardOptions& options = {});

/// Logits only.
Tensor predict(const Model& model, const Tensor& x);

/// Parameter gradients of `loss` in Model::params order; zeros where absent.
std::vector<Tensor> param_grads(const ForwardResult& fw, const Gradients& grads);

void save_checkpoint(const Model& model, std::ostream& out);
void save_checkpoint(const Model& model, const std::string& path);
/// Loads into a model of the same architecture; names and shapes must match.
void load_checkpoint(Model& model, std::istream& in);
void load_checkpoint(Model& model, const std::string& path);

}  // namespace slat
