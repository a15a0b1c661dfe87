#include "slat/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "slat/error.hpp"
#include "slat/rng.hpp"

namespace slat {

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw Error("unknown activation '" + name + "'");
}

const char* to_string(Activation act) { return act == Activation::relu ? "relu" : "softplus"; }

Model::Model(Shape input_shape, std::size_t classes, Activation activation)
    : input_shape_(std::move(input_shape)), classes_(classes), activation_(activation) {}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Model::set_sites(std::vector<int> sites) {
  std::sort(sites.begin(), sites.end());
  sites.erase(std::unique(sites.begin(), sites.end()), sites.end());
  for (int k : sites) {
    if (k < 0 || k >= static_cast<int>(blocks_.size())) throw UnknownSite(k);
  }
  std::map<int, double> eta;
  for (int k : sites) eta[k] = eta_.count(k) ? eta_.at(k) : 0.0;
  sites_ = std::move(sites);
  eta_ = std::move(eta);
}

double Model::eta(int site) const {
  const auto it = eta_.find(site);
  if (it == eta_.end()) throw UnknownSite(site);
  return it->second;
}

void Model::set_eta(double eta) {
  for (int k : sites_) set_eta(k, eta);
}

void Model::set_eta(int site, double eta) {
  if (!eta_.count(site)) throw UnknownSite(site);
  if (!(eta >= 0.0)) throw Error("step size must be non-negative");
  eta_[site] = eta;
}

bool Model::twice_differentiable() const {
  for (const auto& block : blocks_)
    for (const auto& layer : block) {
      if (layer.kind == LayerKind::dense) continue;
      if (layer.kind == LayerKind::activation && activation_ == Activation::softplus) continue;
      return false;
    }
  return true;
}

std::size_t Model::add_param(std::string name, Tensor value) {
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

void Model::begin_block() { blocks_.emplace_back(); }

void Model::add_layer(Layer layer) {
  if (blocks_.empty()) begin_block();
  blocks_.back().push_back(layer);
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

void add_dense(Model& m, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Layer l{LayerKind::dense};
  l.weight = m.add_param(name + ".weight", glorot(Shape{out, in}, in, out, rng));
  l.bias = m.add_param(name + ".bias", Tensor(Shape{out}));
  m.add_layer(l);
}

void add_conv(Model& m, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  Layer l{LayerKind::conv2d};
  l.weight = m.add_param(name + ".weight", glorot(Shape{out, in, k, k}, in * k * k, out * k * k, rng));
  l.bias = m.add_param(name + ".bias", Tensor(Shape{out}));
  m.add_layer(l);
}

}  // namespace

Model build_linear(std::size_t d_in, std::size_t classes, std::uint64_t seed) {
  Model m(Shape{d_in}, classes, Activation::relu);
  Rng rng(seed);
  m.begin_block();
  add_dense(m, "fc", d_in, classes, rng);
  m.set_sites({0});
  return m;
}

Model build_toy_mlp(std::size_t hidden, Activation activation, std::uint64_t seed) {
  Model m(Shape{2}, 2, activation);
  Rng rng(seed);
  m.begin_block();
  add_dense(m, "fc1", 2, hidden, rng);
  m.add_layer({LayerKind::activation});
  m.begin_block();
  add_dense(m, "fc2", hidden, 2, rng);
  m.set_sites({0, 1});
  return m;
}

Model build_small_cnn(const Shape& in_shape, std::size_t classes, Activation activation, bool deep_sites,
                      std::uint64_t seed) {
  if (in_shape.size() != 3) throw ShapeMismatch("build_small_cnn", "[C,H,W]", to_string(in_shape));
  if (in_shape[1] < 8 || in_shape[2] < 8) {
    throw ShapeTooSmall("build_small_cnn: spatial size " + to_string(in_shape) + " below 8x8");
  }
  Model m(in_shape, classes, activation);
  Rng rng(seed);
  m.begin_block();
  add_conv(m, "conv1", in_shape[0], 16, 3, rng);
  m.add_layer({LayerKind::activation});
  m.add_layer({LayerKind::maxpool2x2});
  m.begin_block();
  add_conv(m, "conv2", 16, 32, 3, rng);
  m.add_layer({LayerKind::activation});
  m.add_layer({LayerKind::maxpool2x2});
  m.begin_block();
  m.add_layer({LayerKind::flatten});
  const std::size_t flat = 32 * (in_shape[1] / 2 / 2) * (in_shape[2] / 2 / 2);
  add_dense(m, "fc", flat, classes, rng);
  m.set_sites(deep_sites ? std::vector<int>{0, 2} : std::vector<int>{0, 1, 2});
  return m;
}

namespace {

NodeId apply_layer(const Model& model, const Layer& layer, Tape& tape, NodeId h, const std::vector<NodeId>& params) {
  switch (layer.kind) {
    case LayerKind::dense:
      return tape.dense(h, params[layer.weight], params[layer.bias]);
    case LayerKind::conv2d:
      return tape.conv2d(h, params[layer.weight], params[layer.bias]);
    case LayerKind::activation:
      return model.activation() == Activation::relu ? tape.relu(h) : tape.softplus(h);
    case LayerKind::maxpool2x2:
      return tape.maxpool2x2(h);
    case LayerKind::flatten:
      return tape.flatten(h);
  }
  throw Error("unknown layer kind");
}

void check_deltas(const Model& model, const Deltas& deltas) {
  for (const auto& [k, d] : deltas) {
    if (std::find(model.sites().begin(), model.sites().end(), k) == model.sites().end()) throw UnknownSite(k);
  }
}

ForwardResult run_blocks(const Model& model, ForwardResult fw, std::size_t first, NodeId h, const Deltas& deltas) {
  const auto& blocks = model.blocks();
  for (std::size_t b = first; b < blocks.size(); ++b) {
    const int k = static_cast<int>(b);
    const bool is_site = std::find(model.sites().begin(), model.sites().end(), k) != model.sites().end();
    if (is_site && b != first) {
      fw.tape.register_site(k, h);
      fw.sites[k] = h;
    }
    if (b != first) {
      if (auto it = deltas.find(k); it != deltas.end()) {
        const Tensor& d = it->second;
        if (d.shape() != fw.tape.value(h).shape()) {
          throw ShapeMismatch("inject site " + std::to_string(k), to_string(fw.tape.value(h).shape()),
                              to_string(d.shape()));
        }
        h = fw.tape.add(h, fw.tape.leaf(d));
      }
    }
    for (const Layer& layer : blocks[b]) h = apply_layer(model, layer, fw.tape, h, fw.params);
  }
  fw.logits = h;
  return fw;
}

void add_params(const Model& model, ForwardResult& fw, bool grad) {
  for (const auto& p : model.params()) fw.params.push_back(fw.tape.leaf(p.value, grad));
}

}  // namespace

ForwardResult forward_with_latents(const Model& model, const Tensor& x, const Deltas& deltas,
                                   const ForwardOptions& options) {
  Shape expected{x.rank() > 0 ? x.dim(0) : 0};
  expected.insert(expected.end(), model.input_shape().begin(), model.input_shape().end());
  if (x.rank() == 0 || x.shape() != expected) {
    throw ShapeMismatch("forward", "[B," + to_string(model.input_shape()) + "]", to_string(x.shape()));
  }
  check_deltas(model, deltas);
  count_forward_pass();

  ForwardResult fw;
  Tensor input = x;
  if (auto it = deltas.find(0); it != deltas.end()) {
    if (it->second.shape() != x.shape()) {
      throw ShapeMismatch("inject site 0", to_string(x.shape()), to_string(it->second.shape()));
    }
    input = x + it->second;
  }
  if (options.clamp && deltas.count(0)) input = clamp(input, options.clamp->lo, options.clamp->hi);
  fw.input = fw.tape.leaf(std::move(input), options.input_grad);
  add_params(model, fw, options.param_grad);
  if (std::find(model.sites().begin(), model.sites().end(), 0) != model.sites().end()) {
    fw.tape.register_site(0, fw.input);
    fw.sites[0] = fw.input;
  }
  const NodeId in = fw.input;
  return run_blocks(model, std::move(fw), 0, in, deltas);
}

ForwardResult forward_from(const Model& model, int site, const Tensor& h, const ForwardOptions& options) {
  if (site < 0 || site >= static_cast<int>(model.num_blocks())) throw UnknownSite(site);
  count_forward_pass();
  ForwardResult fw;
  fw.input = fw.tape.leaf(h, true);
  add_params(model, fw, options.param_grad);
  fw.tape.register_site(site, fw.input);
  fw.sites[site] = fw.input;
  const NodeId in = fw.input;
  return run_blocks(model, std::move(fw), static_cast<std::size_t>(site), in, {});
}

Tensor predict(const Model& model, const Tensor& x) { return forward_with_latents(model, x).logit_values(); }

std::vector<Tensor> param_grads(const ForwardResult& fw, const Gradients& grads) {
  std::vector<Tensor> out;
  out.reserve(fw.params.size());
  for (NodeId p : fw.params) {
    out.push_back(grads.has(p) ? grads.at(p) : Tensor(fw.tape.value(p).shape()));
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'S', 'L', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put_le(std::ostream& out, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, sizeof(U));
}

template <class U>
bool get_le(std::istream& in, U& v) {
  unsigned char buf[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(U))) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return true;
}

template <class U>
void need_le(std::istream& in, U& v, const char* what) {
  if (!get_le(in, v)) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
}

}  // namespace

void save_checkpoint(const Model& model, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  for (const auto& p : model.params()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : p.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw CheckpointError("checkpoint write failed");
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  save_checkpoint(model, out);
}

void load_checkpoint(Model& model, std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  need_le(in, version, "version");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  std::vector<Tensor> loaded;
  auto& params = model.params();
  std::uint32_t name_len = 0;
  while (get_le(in, name_len)) {
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated reading name");
    std::uint32_t rank = 0;
    need_le(in, rank, "rank");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      need_le(in, v, "dims");
      d = static_cast<std::size_t>(v);
    }
    const std::size_t idx = loaded.size();
    if (idx >= params.size() || params[idx].name != name || params[idx].value.shape() != shape) {
      throw CheckpointError("checkpoint parameter '" + name + "' " + to_string(shape) +
                            " does not match the model");
    }
    Tensor t(shape);
    for (double& v : t.data()) {
      std::uint64_t bits = 0;
      need_le(in, bits, "data");
      v = std::bit_cast<double>(bits);
    }
    loaded.push_back(std::move(t));
  }
  if (loaded.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(loaded.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(loaded[i]);
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  load_checkpoint(model, in);
}

}  // namespace slat
