#include "xmodal/synthetic.hpp"

#include <string>
#include <unordered_map>

namespace xmodal::synthetic {

Eigen::MatrixXd gaussian(std::size_t n, std::size_t d, Rng& rng) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
  }
  return m;
}

Eigen::MatrixXd random_orthogonal(std::size_t d, Rng& rng) {
  const Eigen::MatrixXd g = gaussian(d, d, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

RotationPairs rotation_pairs(const RotationPairsOptions& o) {
  Rng rng(o.seed);
  const Eigen::MatrixXd rotation = random_orthogonal(o.dim, rng);
  const Eigen::MatrixXd base = gaussian(o.n_groups, o.dim, rng);

  const auto n_text = o.n_groups * o.captions_per_group;
  Eigen::MatrixXd text(static_cast<Eigen::Index>(n_text), static_cast<Eigen::Index>(o.dim));
  std::vector<std::string> text_ids;
  std::vector<std::string> image_ids;
  PairManifest manifest;
  for (std::size_t g = 0; g < o.n_groups; ++g) {
    image_ids.push_back("i" + std::to_string(g));
    for (std::size_t c = 0; c < o.captions_per_group; ++c) {
      const auto row = static_cast<Eigen::Index>(g * o.captions_per_group + c);
      text.row(row) = base.row(static_cast<Eigen::Index>(g));
      if (o.caption_spread > 0.0) {
        for (Eigen::Index j = 0; j < text.cols(); ++j) text(row, j) += o.caption_spread * rng.normal();
      }
      text_ids.push_back("t" + std::to_string(g) + "_" + std::to_string(c));
      manifest.entries.push_back({text_ids.back(), image_ids.back(), "g" + std::to_string(g)});
    }
  }
  Eigen::MatrixXd image = base * rotation;
  if (o.noise > 0.0) {
    for (Eigen::Index i = 0; i < image.rows(); ++i) {
      for (Eigen::Index j = 0; j < image.cols(); ++j) image(i, j) += o.noise * rng.normal();
    }
  }
  return {EmbeddingMatrix::from_double(text, std::move(text_ids)),
          EmbeddingMatrix::from_double(image, std::move(image_ids)), std::move(manifest), rotation};
}

PairManifest slice_groups(const PairManifest& manifest, std::size_t first, std::size_t last) {
  PairManifest out;
  std::unordered_map<std::string, std::size_t> order;
  for (const auto& e : manifest.entries) {
    const auto [it, inserted] = order.try_emplace(e.group, order.size());
    if (it->second >= first && it->second < last) out.entries.push_back(e);
  }
  return out;
}

}  // namespace xmodal::synthetic
