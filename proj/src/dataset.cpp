#include "oqc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

namespace oqc {

namespace {

using Rng = std::mt19937_64;

// Sign codes over the basis pairs, distinct per class while codes last.
std::vector<std::vector<double>> class_codes(const SyntheticDatasetSpec& spec, Rng& rng) {
  const int pairs = spec.pairs;
  const std::uint64_t space = pairs >= 63 ? ~0ULL : (1ULL << pairs);
  std::vector<std::uint64_t> chosen;
  std::uniform_int_distribution<std::uint64_t> pick(0, space - 1);
  while (static_cast<int>(chosen.size()) < spec.n_classes) {
    const std::uint64_t c = pick(rng);
    if (static_cast<std::uint64_t>(chosen.size()) < space &&
        std::find(chosen.begin(), chosen.end(), c) != chosen.end()) {
      continue;
    }
    chosen.push_back(c);
  }
  std::vector<std::vector<double>> codes;
  for (std::uint64_t c : chosen) {
    std::vector<double> code(static_cast<std::size_t>(pairs));
    for (int j = 0; j < pairs; ++j) code[j] = ((c >> j) & 1ULL) ? spec.correlation : -spec.correlation;
    codes.push_back(std::move(code));
  }
  return codes;
}

void fill_split(ImageSet& out, const SyntheticDatasetSpec& spec, int per_class,
                const Eigen::MatrixXd& basis_a, const Eigen::MatrixXd& basis_b,
                const std::vector<std::vector<double>>& codes, Rng& rng) {
  const int size = spec.image_size;
  const int cell = spec.cell;
  const int cells = size / cell;
  const Eigen::Index channels = 3;
  out.channels = channels;
  out.size = size;
  out.n_classes = spec.n_classes;
  const Eigen::Index n = static_cast<Eigen::Index>(per_class) * spec.n_classes;
  out.pixels.resize(channels * size * size, n);
  out.labels.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho_scale = std::sqrt(std::max(0.0, 1.0 - spec.correlation * spec.correlation));

  Eigen::Index col = 0;
  // Interleave classes so any prefix is roughly balanced.
  for (int i = 0; i < per_class; ++i) {
    for (int k = 0; k < spec.n_classes; ++k, ++col) {
      out.labels[static_cast<std::size_t>(col)] = k;
      const auto& code = codes[static_cast<std::size_t>(k)];
      for (int cy = 0; cy < cells; ++cy) {
        for (int cx = 0; cx < cells; ++cx) {
          Eigen::VectorXd patch = Eigen::VectorXd::Zero(basis_a.rows());
          for (int j = 0; j < spec.pairs; ++j) {
            const double a = normal(rng);
            const double b = code[static_cast<std::size_t>(j)] * a + rho_scale * normal(rng);
            patch += a * basis_a.col(j) + b * basis_b.col(j);
          }
          for (Eigen::Index p = 0; p < patch.size(); ++p) patch(p) += spec.noise * normal(rng);
          Eigen::Index idx = 0;
          for (Eigen::Index c = 0; c < channels; ++c)
            for (int dy = 0; dy < cell; ++dy)
              for (int dx = 0; dx < cell; ++dx) {
                const int y = cy * cell + dy;
                const int x = cx * cell + dx;
                out.pixels(c * size * size + y * size + x, col) = static_cast<float>(patch(idx++));
              }
        }
      }
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticDatasetSpec& spec) {
  if (spec.n_classes < 2) throw std::invalid_argument("dataset.n_classes: must be >= 2");
  if (spec.cell < 1 || spec.image_size % spec.cell != 0) {
    throw std::invalid_argument("dataset.cell: must divide dataset image size");
  }
  if (spec.pairs < 1) throw std::invalid_argument("dataset.pairs: must be >= 1");
  if (std::abs(spec.correlation) > 1.0) throw std::invalid_argument("dataset.correlation: must lie in [-1, 1]");
  if (spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw std::invalid_argument("dataset.train_per_class/test_per_class: must be >= 1");
  }

  Rng root(spec.seed);
  Rng basis_rng(root());
  Rng code_rng(root());
  Rng train_rng(root());
  Rng test_rng(root());

  const Eigen::Index dim = 3 * spec.cell * spec.cell;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd basis(dim, 2 * spec.pairs);
  for (Eigen::Index j = 0; j < basis.cols(); ++j)
    for (Eigen::Index i = 0; i < dim; ++i) basis(i, j) = normal(basis_rng);
  // Orthonormal basis directions so pairs do not leak into each other.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, basis.cols());
  q *= std::sqrt(static_cast<double>(dim)) / std::sqrt(static_cast<double>(2 * spec.pairs));
  const Eigen::MatrixXd basis_a = q.leftCols(spec.pairs);
  const Eigen::MatrixXd basis_b = q.rightCols(spec.pairs);

  const auto codes = class_codes(spec, code_rng);
  Dataset d;
  fill_split(d.train, spec, spec.train_per_class, basis_a, basis_b, codes, train_rng);
  fill_split(d.test, spec, spec.test_per_class, basis_a, basis_b, codes, test_rng);
  return d;
}

namespace {

int read_ppm_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return std::stoi(tok);
  }
  throw std::runtime_error("truncated PPM header");
}

Eigen::VectorXf read_ppm(const std::filesystem::path& path, int& size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P3" && magic != "P6") throw std::runtime_error(path.string() + ": not a P3/P6 PPM");
  const int w = read_ppm_token(in);
  const int h = read_ppm_token(in);
  const int maxval = read_ppm_token(in);
  if (w != h) throw std::runtime_error(path.string() + ": images must be square");
  if (maxval <= 0 || maxval > 255) throw std::runtime_error(path.string() + ": only 8-bit PPM supported");
  size = w;
  Eigen::VectorXf px(3 * w * h);
  in.get();  // single whitespace after header
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        int v = 0;
        if (magic == "P6") {
          v = static_cast<unsigned char>(in.get());
        } else {
          in >> v;
        }
        if (!in) throw std::runtime_error(path.string() + ": truncated pixel data");
        // Center to roughly zero mean, unit range.
        px(c * w * h + y * w + x) = (static_cast<float>(v) / static_cast<float>(maxval) - 0.5f) * 2.0f;
      }
  return px;
}

ImageSet load_split(const std::filesystem::path& dir, const std::vector<std::string>& classes) {
  ImageSet set;
  set.n_classes = static_cast<int>(classes.size());
  std::vector<Eigen::VectorXf> images;
  int size = -1;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    std::vector<std::filesystem::path> files;
    const auto class_dir = dir / classes[k];
    if (!std::filesystem::exists(class_dir)) continue;
    for (const auto& e : std::filesystem::directory_iterator(class_dir))
      if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      int s = 0;
      images.push_back(read_ppm(f, s));
      if (size >= 0 && s != size) throw std::runtime_error(f.string() + ": image size differs");
      size = s;
      set.labels.push_back(static_cast<int>(k));
    }
  }
  if (images.empty()) throw std::runtime_error("no .ppm images under " + dir.string());
  set.size = size;
  set.pixels.resize(images.front().size(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) set.pixels.col(static_cast<Eigen::Index>(i)) = images[i];
  return set;
}

}  // namespace

Dataset load_image_folder(const std::filesystem::path& root) {
  const auto train_dir = root / "train";
  if (!std::filesystem::is_directory(train_dir)) {
    throw std::runtime_error("image folder missing " + train_dir.string());
  }
  std::vector<std::string> classes;
  for (const auto& e : std::filesystem::directory_iterator(train_dir))
    if (e.is_directory()) classes.push_back(e.path().filename().string());
  std::sort(classes.begin(), classes.end());
  Dataset d;
  d.train = load_split(train_dir, classes);
  d.test = load_split(root / "test", classes);
  if (d.train.size != d.test.size) throw std::runtime_error("train and test image sizes differ");
  return d;
}

}  // namespace oqc
