#pragma once

// One scalar test graph per tape op, with random smooth inputs. Shared by the
// unit tests and the acceptance run.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "slat/rng.hpp"
#include "slat/tape.hpp"

namespace opcases {

struct OpCase {
  std::string name;
  std::vector<slat::Tensor> inputs;
  oracle::MultiBuilder build;
};

// Contracts a non-scalar node with fixed random weights so every output
// coordinate contributes to the scalar.
inline slat::NodeId contract(slat::Tape& t, slat::NodeId node, std::uint64_t seed) {
  const slat::Tensor w = oracle::random_tensor(t.value(node).shape(), seed);
  return t.sum(t.mul(node, t.leaf(w)));
}

// Entries at least `gap` away from zero.
inline slat::Tensor away_from_zero(const slat::Shape& shape, std::uint64_t seed, double gap = 0.1) {
  slat::Rng rng(seed);
  slat::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(gap, 1.0);
    t[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Entries whose 2x2 pool windows have a unique maximum with a margin.
inline slat::Tensor pool_friendly(const slat::Shape& shape, std::uint64_t seed) {
  slat::Rng rng(seed);
  slat::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(rng.below(1000)) * 1e-3;
  // Break ties with a distinct offset per position, far above the FD step.
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += static_cast<double>(i % 7) * 1e-4 + static_cast<double>(i) * 1e-7;
  return t;
}

inline std::vector<int> labels(std::size_t batch, std::size_t classes, std::uint64_t seed) {
  slat::Rng rng(seed);
  std::vector<int> y(batch);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

/// Every differentiable op kind, drawn at point index `p`.
inline std::vector<OpCase> all_cases(std::uint64_t p) {
  using oracle::random_tensor;
  using slat::NodeId;
  using slat::Shape;
  using slat::Tape;
  using slat::Tensor;
  const std::uint64_t s = slat::mix_seed(p, 77);
  auto seed = [s](std::uint64_t salt) { return slat::mix_seed(s, salt); };
  std::vector<OpCase> cases;

  cases.push_back({"dense",
                   {random_tensor(Shape{3, 4}, seed(1)), random_tensor(Shape{5, 4}, seed(2)),
                    random_tensor(Shape{5}, seed(3))},
                   [c = seed(4)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.dense(in[0], in[1], in[2]), c);
                   }});
  cases.push_back({"dense_single_example",
                   {random_tensor(Shape{4}, seed(5)), random_tensor(Shape{3, 4}, seed(6)),
                    random_tensor(Shape{3}, seed(7))},
                   [c = seed(8)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.dense(in[0], in[1], in[2]), c);
                   }});
  cases.push_back({"conv2d",
                   {random_tensor(Shape{2, 2, 5, 4}, seed(9)), random_tensor(Shape{3, 2, 3, 3}, seed(10)),
                    random_tensor(Shape{3}, seed(11))},
                   [c = seed(12)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.conv2d(in[0], in[1], in[2]), c);
                   }});
  cases.push_back({"relu", {away_from_zero(Shape{4, 3}, seed(13))},
                   [c = seed(14)](Tape& t, const std::vector<NodeId>& in) { return contract(t, t.relu(in[0]), c); }});
  cases.push_back({"softplus", {random_tensor(Shape{4, 3}, seed(15), -3.0, 3.0)},
                   [c = seed(16)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.softplus(in[0]), c);
                   }});
  cases.push_back({"sigmoid", {random_tensor(Shape{4, 3}, seed(17), -3.0, 3.0)},
                   [c = seed(18)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.sigmoid(in[0]), c);
                   }});
  cases.push_back({"maxpool2x2", {pool_friendly(Shape{2, 2, 5, 4}, seed(19))},
                   [c = seed(20)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.maxpool2x2(in[0]), c);
                   }});
  cases.push_back({"flatten", {random_tensor(Shape{2, 3, 2, 2}, seed(21))},
                   [c = seed(22)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.flatten(in[0]), c);
                   }});
  cases.push_back({"add", {random_tensor(Shape{3, 2}, seed(23)), random_tensor(Shape{3, 2}, seed(24))},
                   [c = seed(25)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.add(in[0], in[1]), c);
                   }});
  cases.push_back({"scale", {random_tensor(Shape{3, 2}, seed(26))},
                   [c = seed(27)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.scale(in[0], -1.7), c);
                   }});
  cases.push_back({"mul", {random_tensor(Shape{3, 2}, seed(28)), random_tensor(Shape{3, 2}, seed(29))},
                   [c = seed(30)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.mul(in[0], in[1]), c);
                   }});
  cases.push_back({"mul_scalar", {random_tensor(Shape{3, 2}, seed(31)), random_tensor(Shape{1}, seed(32))},
                   [c = seed(33)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.mul_scalar(in[0], in[1]), c);
                   }});
  cases.push_back({"sum", {random_tensor(Shape{2, 3}, seed(34))},
                   [](Tape& t, const std::vector<NodeId>& in) { return t.sum(t.mul(in[0], in[0])); }});
  for (auto red : {slat::Reduction::mean, slat::Reduction::sum}) {
    const std::string suffix = red == slat::Reduction::mean ? "_mean" : "_sum";
    cases.push_back({"softmax_xent" + suffix, {random_tensor(Shape{4, 5}, seed(35), -2.0, 2.0)},
                     [y = labels(4, 5, seed(36)), red](Tape& t, const std::vector<NodeId>& in) {
                       return t.softmax_xent(in[0], y, red);
                     }});
    cases.push_back({"xent_grad" + suffix, {random_tensor(Shape{4, 5}, seed(37), -2.0, 2.0)},
                     [y = labels(4, 5, seed(38)), red, c = seed(39)](Tape& t, const std::vector<NodeId>& in) {
                       return contract(t, t.xent_grad(in[0], y, red), c);
                     }});
  }
  cases.push_back({"softmax_xent_single", {random_tensor(Shape{3}, seed(40), -2.0, 2.0)},
                   [](Tape& t, const std::vector<NodeId>& in) {
                     const std::vector<int> y{2};
                     return t.softmax_xent(in[0], y);
                   }});
  cases.push_back({"matmul_nn", {random_tensor(Shape{3, 4}, seed(41)), random_tensor(Shape{4, 2}, seed(42))},
                   [c = seed(43)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.matmul_nn(in[0], in[1]), c);
                   }});
  cases.push_back({"matmul_tn", {random_tensor(Shape{4, 3}, seed(44)), random_tensor(Shape{4, 2}, seed(45))},
                   [c = seed(46)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.matmul_tn(in[0], in[1]), c);
                   }});
  cases.push_back({"sum_rows", {random_tensor(Shape{4, 3}, seed(47))},
                   [c = seed(48)](Tape& t, const std::vector<NodeId>& in) {
                     return contract(t, t.sum_rows(in[0]), c);
                   }});
  cases.push_back({"row_cosine", {random_tensor(Shape{3, 4}, seed(49))},
                   [r = random_tensor(Shape{3, 4}, seed(50))](Tape& t, const std::vector<NodeId>& in) {
                     return t.row_cosine(in[0], r);
                   }});
  return cases;
}

/// Op kinds covered by all_cases (leaf is covered implicitly).
inline std::vector<slat::OpKind> covered_kinds() {
  using K = slat::OpKind;
  return {K::dense, K::conv2d, K::relu,    K::softplus,     K::sigmoid,   K::maxpool2x2, K::flatten,
          K::add,   K::scale,  K::mul,     K::mul_scalar,   K::sum,       K::softmax_xent, K::xent_grad,
          K::matmul_nn, K::matmul_tn, K::sum_rows, K::row_cosine};
}

}  // namespace opcases
