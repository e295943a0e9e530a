#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>

#include "xmodal/embstore.hpp"
#include "xmodal/random.hpp"

namespace xmodal::synthetic {

// n x d with i.i.d. standard normal entries.
Eigen::MatrixXd gaussian(std::size_t n, std::size_t d, Rng& rng);

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
// of R's diagonal folded into Q.
Eigen::MatrixXd random_orthogonal(std::size_t d, Rng& rng);

struct RotationPairsOptions {
  std::size_t n_groups = 100;
  std::size_t captions_per_group = 1;
  std::size_t dim = 32;
  double noise = 0.05;           // std of the image-side noise
  double caption_spread = 0.0;   // std of per-caption offsets around the group's text vector
  std::uint64_t seed = 0;
};

// Text rows "t<g>_<c>" (captions) and image rows "i<g>", one group "g<g>"
// per image: text = base + spread, image = base * rotation + noise, with
// base ~ N(0, I).
struct RotationPairs {
  EmbeddingMatrix text;
  EmbeddingMatrix image;
  PairManifest manifest;
  Eigen::MatrixXd rotation;
};

RotationPairs rotation_pairs(const RotationPairsOptions& options);

// Keeps the manifest entries whose group index lies in [first, last).
PairManifest slice_groups(const PairManifest& manifest, std::size_t first, std::size_t last);

}  // namespace xmodal::synthetic
