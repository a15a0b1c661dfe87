#include "slat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "slat/error.hpp"
#include "slat/rng.hpp"

namespace slat {

Shape LabeledDataset::example_shape() const { return Shape(xs.shape().begin() + 1, xs.shape().end()); }

Tensor LabeledDataset::gather(std::span<const std::size_t> indices) const {
  Shape shape = xs.shape();
  shape[0] = indices.size();
  const std::size_t width = shape_size(example_shape());
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(xs.raw() + indices[i] * width, width, out.raw() + i * width);
  }
  return out;
}

std::vector<int> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ys.at(i));
  return out;
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  LabeledDataset out = *this;
  out.xs = slice_rows(xs, begin, end);
  out.ys.assign(ys.begin() + static_cast<long>(begin), ys.begin() + static_cast<long>(end));
  return out;
}

LabeledDataset gen_toy(const ToySpec& spec) {
  if (!(spec.sigma_x > 0.0) || !(spec.sigma_y > 0.0)) throw Error("toy: sigma entries must be positive");
  if (spec.n_per_class < 1) throw Error("toy: n_per_class must be >= 1");
  Rng rng(spec.seed);
  LabeledDataset d;
  d.name = "toy";
  d.classes = 2;
  const std::size_t n = 2 * spec.n_per_class;
  d.xs = Tensor(Shape{n, 2});
  d.ys.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? 1 : 0;
    const double s = label == 1 ? 1.0 : -1.0;
    d.xs[2 * i] = s * spec.mu_x + spec.sigma_x * rng.normal();
    d.xs[2 * i + 1] = s * spec.mu_y + spec.sigma_y * rng.normal();
    d.ys[i] = label;
  }
  d.lo = *std::min_element(d.xs.data().begin(), d.xs.data().end());
  d.hi = *std::max_element(d.xs.data().begin(), d.xs.data().end());
  return d;
}

void write_toy_csv(const LabeledDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "x1,x2,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.xs[2 * i] << ',' << data.xs[2 * i + 1] << ',' << (data.ys[i] == 1 ? 1 : -1) << '\n';
  }
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (b.size() < off + 4) throw IdxError(IdxError::Kind::TruncatedFile, path + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char buf[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
  out.write(buf, 4);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  const std::uint32_t im = be32(img, 0, images_path);
  if (im != kImageMagic) {
    throw IdxError(IdxError::Kind::BadMagic, images_path + ": bad magic, expected 0x00000803");
  }
  const std::uint32_t lm = be32(lab, 0, labels_path);
  if (lm != kLabelMagic) {
    throw IdxError(IdxError::Kind::BadMagic, labels_path + ": bad magic, expected 0x00000801");
  }
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_labels = be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw IdxError(IdxError::Kind::CountMismatch, "IDX count mismatch: " + std::to_string(n) + " images, " +
                                                      std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = n * rows * cols;
  if (img.size() != 16 + pixels) {
    throw IdxError(IdxError::Kind::TruncatedFile, images_path + ": expected " + std::to_string(16 + pixels) +
                                                      " bytes, found " + std::to_string(img.size()));
  }
  if (lab.size() != 8 + n) {
    throw IdxError(IdxError::Kind::TruncatedFile, labels_path + ": expected " + std::to_string(8 + n) +
                                                      " bytes, found " + std::to_string(lab.size()));
  }

  LabeledDataset d;
  d.name = "idx";
  d.xs = Tensor(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i) d.xs[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.ys.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.ys[i] = lab[8 + i];
    max_label = std::max(max_label, d.ys[i]);
  }
  d.classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return d;
}

void write_idx(const LabeledDataset& data, const std::string& images_path, const std::string& labels_path) {
  if (data.xs.rank() != 4 || data.xs.dim(1) != 1) {
    throw ShapeMismatch("write_idx", "[N,1,H,W]", to_string(data.xs.shape()));
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError(IdxError::Kind::Io, "cannot open IDX output files");
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(data.xs.dim(2)));
  put_be32(img, static_cast<std::uint32_t>(data.xs.dim(3)));
  for (double v : data.xs.data()) {
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.ys) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
}

Tensor pad_crop(const Tensor& image, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (image.rank() != 3) throw ShapeMismatch("pad_crop", "[C,H,W]", to_string(image.shape()));
  if (dy > 2 * pad || dx > 2 * pad) throw Error("pad_crop: crop offset exceeds 2 * pad");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t r = 0; r < H; ++r) {
      // Output (r, col) reads padded (r + dy, col + dx) = original (r + dy - pad, col + dx - pad).
      const long sr = static_cast<long>(r + dy) - static_cast<long>(pad);
      if (sr < 0 || sr >= static_cast<long>(H)) continue;
      for (std::size_t col = 0; col < W; ++col) {
        const long sc = static_cast<long>(col + dx) - static_cast<long>(pad);
        if (sc < 0 || sc >= static_cast<long>(W)) continue;
        out[(c * H + r) * W + col] = image[(c * H + static_cast<std::size_t>(sr)) * W + static_cast<std::size_t>(sc)];
      }
    }
  return out;
}

Tensor augment_pad_crop(const Tensor& batch, std::size_t pad, std::uint64_t seed) {
  if (pad == 0) return batch;
  if (batch.rank() != 4) throw ShapeMismatch("augment_pad_crop", "[B,C,H,W]", to_string(batch.shape()));
  Rng rng(seed);
  Tensor out(batch.shape());
  const Shape one{batch.dim(1), batch.dim(2), batch.dim(3)};
  const std::size_t width = shape_size(one);
  for (std::size_t b = 0; b < batch.dim(0); ++b) {
    const std::size_t dy = rng.below(2 * pad + 1);
    const std::size_t dx = rng.below(2 * pad + 1);
    Tensor img(one, std::vector<double>(batch.raw() + b * width, batch.raw() + (b + 1) * width));
    const Tensor cropped = pad_crop(img, pad, dy, dx);
    std::copy_n(cropped.raw(), width, out.raw() + b * width);
  }
  return out;
}

Tensor rademacher(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = rng.rademacher();
  return t;
}

}  // namespace slat
