#include "slat/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "slat/error.hpp"
#include "slat/rng.hpp"

namespace slat {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

constexpr const char* kL1Prefix = "l1_grad_k";

}  // namespace

void write_metrics_csv(std::ostream& out, std::span<const MetricRecord> records, std::span<const int> sites) {
  out << "step,epoch,clean_acc,pgd_acc,adv_loss,grad_align";
  for (int k : sites) out << ',' << kL1Prefix << k;
  out << ",logits_l2,lr\n";
  for (const auto& r : records) {
    out << r.step << ',' << fmt(r.epoch) << ',' << fmt(r.clean_acc) << ',' << fmt(r.pgd_acc) << ','
        << fmt(r.adv_loss) << ',' << fmt(r.grad_align);
    for (int k : sites) {
      const auto it = r.l1_grad.find(k);
      out << ',' << fmt(it == r.l1_grad.end() ? 0.0 : it->second);
    }
    out << ',' << fmt(r.logits_l2) << ',' << fmt(r.lr) << '\n';
  }
}

void write_metrics_csv(const std::string& path, std::span<const MetricRecord> records, std::span<const int> sites) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_metrics_csv(out, records, sites);
}

std::vector<MetricRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("metrics csv: missing header");
  const auto header = split(line, ',');
  std::vector<MetricRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) {
      throw Error("metrics csv line " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                  " fields, got " + std::to_string(cells.size()));
    }
    MetricRecord r;
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string& h = header[i];
      const std::string& c = cells[i];
      if (h == "step") r.step = std::stol(c);
      else if (h == "epoch") r.epoch = std::stod(c);
      else if (h == "clean_acc") r.clean_acc = std::stod(c);
      else if (h == "pgd_acc") r.pgd_acc = std::stod(c);
      else if (h == "adv_loss") r.adv_loss = std::stod(c);
      else if (h == "grad_align") r.grad_align = std::stod(c);
      else if (h == "logits_l2") r.logits_l2 = std::stod(c);
      else if (h == "lr") r.lr = std::stod(c);
      else if (h.rfind(kL1Prefix, 0) == 0) r.l1_grad[std::stoi(h.substr(std::string(kL1Prefix).size()))] = std::stod(c);
      else throw Error("metrics csv: unknown column '" + h + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_metrics_csv(in);
}

double accuracy(const Model& model, const Tensor& x, std::span<const int> y) {
  const auto ok = correct_predictions(predict(model, x), y);
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(y.size());
}

namespace {

template <class F>
double batched_mean(const LabeledDataset& data, std::size_t batch, F&& per_batch) {
  double correct = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch) {
    const std::size_t end = std::min(data.size(), begin + batch);
    const LabeledDataset part = data.slice(begin, end);
    correct += per_batch(part.xs, std::span<const int>(part.ys)) * static_cast<double>(end - begin);
  }
  return correct / static_cast<double>(data.size());
}

}  // namespace

double accuracy(const Model& model, const LabeledDataset& data, std::size_t batch) {
  return batched_mean(data, batch, [&](const Tensor& x, std::span<const int> y) { return accuracy(model, x, y); });
}

double grad_alignment(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                      std::uint64_t seed, const std::optional<InputRange>& clamp) {
  Rng rng(seed);
  Tensor moved(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) moved[i] = x[i] + epsilon * rng.uniform(-1.0, 1.0);
  if (clamp) moved = slat::clamp(moved, clamp->lo, clamp->hi);
  const Tensor g0 = input_gradient(model, x, y);
  const Tensor g1 = input_gradient(model, moved, y);
  const std::size_t rows = y.size();
  const std::size_t width = x.size() / rows;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    total += cosine(g0.data().subspan(r * width, width), g1.data().subspan(r * width, width));
  }
  return std::clamp(total / static_cast<double>(rows), -1.0, 1.0);
}

std::map<int, double> feature_grad_l1(const Model& model, const Tensor& x, std::span<const int> y) {
  ForwardOptions opts;
  opts.input_grad = true;
  ForwardResult fw = forward_with_latents(model, x, {}, opts);
  const NodeId loss = fw.tape.softmax_xent(fw.logits, y, Reduction::sum);
  const Gradients grads = fw.tape.backward(loss);
  std::map<int, double> out;
  for (int k : model.sites()) {
    const NodeId h = fw.tape.site(k);
    out[k] = grads.has(h) ? l1_norm(grads.at(h)) / static_cast<double>(y.size()) : 0.0;
  }
  return out;
}

double linear_approx_error(const Model& model, const Tensor& x, std::span<const int> y, int site,
                           const Tensor& perturbation) {
  ForwardOptions opts;
  opts.input_grad = true;
  ForwardResult clean = forward_with_latents(model, x, {}, opts);
  const NodeId loss = clean.tape.softmax_xent(clean.logits, y);
  const Gradients grads = clean.tape.backward(loss);
  const NodeId h = clean.tape.site(site);
  const Tensor g = grads.has(h) ? grads.at(h) : Tensor(clean.tape.value(h).shape());

  ForwardResult moved = forward_with_latents(model, x, {{site, perturbation}});
  const double l1 = moved.tape.value(moved.tape.softmax_xent(moved.logits, y)).item();
  const double l0 = clean.tape.value(loss).item();
  return std::abs(l1 - l0 - dot(g, perturbation));
}

LandscapeGrid loss_landscape(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                             std::size_t n, std::uint64_t seed) {
  if (n < 2) throw Error("loss_landscape: n must be >= 2");
  const Tensor s = sign(input_gradient(model, x, y));
  const Tensor r = rademacher(x.shape(), seed);
  LandscapeGrid grid;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = epsilon * static_cast<double>(i) / static_cast<double>(n - 1);
    grid.a.push_back(t);
    grid.b.push_back(t);
  }
  grid.values.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Tensor point = x + (grid.a[i] * s + grid.b[j] * r);
      ForwardResult fw = forward_with_latents(model, point);
      grid.values[i * n + j] = fw.tape.value(fw.tape.softmax_xent(fw.logits, y)).item();
    }
  return grid;
}

void write_landscape_csv(const LandscapeGrid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "adv\\rademacher";
  for (double b : grid.b) out << ',' << fmt(b);
  out << '\n';
  for (std::size_t i = 0; i < grid.a.size(); ++i) {
    out << fmt(grid.a[i]);
    for (std::size_t j = 0; j < grid.b.size(); ++j) out << ',' << fmt(grid.at(i, j));
    out << '\n';
  }
}

double plane_fit_residual(const LandscapeGrid& grid) {
  // Normal equations for z = c0 + c1 a + c2 b.
  std::array<std::array<double, 4>, 3> m{};
  double zsum = 0.0;
  for (std::size_t i = 0; i < grid.a.size(); ++i)
    for (std::size_t j = 0; j < grid.b.size(); ++j) {
      const std::array<double, 3> f{1.0, grid.a[i], grid.b[j]};
      const double z = grid.at(i, j);
      zsum += z;
      for (int p = 0; p < 3; ++p) {
        for (int q = 0; q < 3; ++q) m[p][q] += f[p] * f[q];
        m[p][3] += f[p] * z;
      }
    }
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int r = c + 1; r < 3; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    std::swap(m[c], m[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == c || m[c][c] == 0.0) continue;
      const double f = m[r][c] / m[c][c];
      for (int q = c; q < 4; ++q) m[r][q] -= f * m[c][q];
    }
  }
  std::array<double, 3> coef{};
  for (int c = 0; c < 3; ++c) coef[c] = m[c][c] == 0.0 ? 0.0 : m[c][3] / m[c][c];

  const double zmean = zsum / static_cast<double>(grid.values.size());
  double res = 0.0, spread = 0.0;
  for (std::size_t i = 0; i < grid.a.size(); ++i)
    for (std::size_t j = 0; j < grid.b.size(); ++j) {
      const double z = grid.at(i, j);
      const double fit = coef[0] + coef[1] * grid.a[i] + coef[2] * grid.b[j];
      res += (z - fit) * (z - fit);
      spread += (z - zmean) * (z - zmean);
    }
  return spread == 0.0 ? 0.0 : std::sqrt(res / spread);
}

double robust_accuracy(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  if (spec.kind == AttackKind::pgd) {
    const PgdResult r =
        pgd_detailed(model, x, y, spec.epsilon, spec.alpha, spec.steps, spec.restarts, spec.clamp, spec.seed);
    const auto fooled = std::count(r.any_success.begin(), r.any_success.end(), 1);
    return 1.0 - static_cast<double>(fooled) / static_cast<double>(y.size());
  }
  return accuracy(model, run_attack(model, x, y, spec), y);
}

double robust_accuracy(const Model& model, const LabeledDataset& data, const AttackSpec& spec, std::size_t batch) {
  std::size_t index = 0;
  return batched_mean(data, batch, [&](const Tensor& x, std::span<const int> y) {
    AttackSpec part = spec;
    part.seed = mix_seed(spec.seed, index++);
    return robust_accuracy(model, x, y, part);
  });
}

double logits_l2_distance(const Model& model, const Tensor& x, std::span<const int> y, double epsilon,
                          double alpha, std::uint64_t seed, const std::optional<InputRange>& clamp) {
  if (epsilon == 0.0) return 0.0;
  const Tensor a = predict(model, fgsm(model, x, y, epsilon, clamp));
  const Tensor b = predict(model, r_fgsm(model, x, y, epsilon, alpha, clamp, seed));
  const std::size_t rows = y.size();
  const std::size_t C = a.size() / rows;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = a[r * C + c] - b[r * C + c];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(rows);
}

std::optional<long> detect_catastrophic_overfitting(std::span<const MetricRecord> records,
                                                    const OverfitDetector& detector) {
  for (std::size_t j = 0; j < records.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      if (records[j].step - records[i].step > detector.window) continue;
      const bool robust_drop = records[i].pgd_acc - records[j].pgd_acc > detector.pgd_drop;
      const bool clean_kept = records[i].clean_acc - records[j].clean_acc <= detector.clean_tolerance;
      if (robust_drop && clean_kept) return records[j].step;
    }
  }
  return std::nullopt;
}

BoundaryProbe toy_probe(const ToySpec& spec, std::size_t n) {
  const double hx = std::abs(spec.mu_x) + 3.0 * spec.sigma_x;
  const double hy = std::abs(spec.mu_y) + 3.0 * spec.sigma_y;
  return {-hx, hx, -hy, hy, n};
}

double boundary_nonrobust_ratio(const Model& model, const BoundaryProbe& probe) {
  if (model.input_shape() != Shape{2} || model.classes() != 2) {
    throw ShapeMismatch("boundary_nonrobust_ratio", "2-input binary model", to_string(model.input_shape()));
  }
  const std::size_t n = probe.n;
  if (n < 2) throw Error("boundary probe needs n >= 2");
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    xs[i] = probe.x_lo + t * (probe.x_hi - probe.x_lo);
    ys[i] = probe.y_lo + t * (probe.y_hi - probe.y_lo);
  }
  // d[r * n + c] = logit1 - logit0 at (xs[c], ys[r])
  std::vector<double> d(n * n);
  const std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < n * n; begin += chunk) {
    const std::size_t end = std::min(n * n, begin + chunk);
    Tensor pts(Shape{end - begin, 2});
    for (std::size_t p = begin; p < end; ++p) {
      pts[2 * (p - begin)] = xs[p % n];
      pts[2 * (p - begin) + 1] = ys[p / n];
    }
    const Tensor z = predict(model, pts);
    for (std::size_t p = begin; p < end; ++p) d[p] = z[2 * (p - begin) + 1] - z[2 * (p - begin)];
  }

  std::vector<std::array<double, 2>> pts;
  auto crossing = [&](double v0, double v1, double x0, double y0, double x1, double y1) {
    if (v0 == 0.0) {
      pts.push_back({x0, y0});
    } else if ((v0 < 0.0) != (v1 < 0.0) && v1 != 0.0) {
      const double t = v0 / (v0 - v1);
      pts.push_back({x0 + t * (x1 - x0), y0 + t * (y1 - y0)});
    }
  };
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c + 1 < n; ++c)
      crossing(d[r * n + c], d[r * n + c + 1], xs[c], ys[r], xs[c + 1], ys[r]);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 0; r + 1 < n; ++r)
      crossing(d[r * n + c], d[(r + 1) * n + c], xs[c], ys[r], xs[c], ys[r + 1]);
  if (pts.size() < 2) throw DegenerateBoundary("no decision boundary inside the probe window");

  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p[0];
    my += p[1];
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& p : pts) {
    sxx += (p[0] - mx) * (p[0] - mx);
    syy += (p[1] - my) * (p[1] - my);
    sxy += (p[0] - mx) * (p[1] - my);
  }
  // The line normal is the eigenvector of the scatter matrix with the
  // smaller eigenvalue.
  double nx, ny;
  if (sxy == 0.0) {
    nx = sxx <= syy ? 1.0 : 0.0;
    ny = sxx <= syy ? 0.0 : 1.0;
  } else {
    const double half = 0.5 * (sxx + syy);
    const double lmin = half - std::sqrt(0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy);
    const double ax = sxy, ay = lmin - sxx;
    const double bx = lmin - syy, by = sxy;
    if (ax * ax + ay * ay >= bx * bx + by * by) {
      nx = ax;
      ny = ay;
    } else {
      nx = bx;
      ny = by;
    }
  }
  constexpr double kCap = 1e6;
  if (nx == 0.0) return kCap;
  return std::min(kCap, std::abs(ny) / std::abs(nx));
}

}  // namespace slat
