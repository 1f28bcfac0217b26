#pragma once

// Small learnable image sets for tests that must not depend on MNIST.

#include <algorithm>
#include <vector>

#include "ccm/data.hpp"
#include "ccm/rng.hpp"

namespace ccm::testing {

/// Class c shows a bright 3x3 square at a class-dependent spot over
/// uniform noise in [0, noise]. Rows are grouped by class.
inline LabeledDataset blob_dataset(std::size_t num_classes, std::size_t per_class,
                                   std::size_t side, Rng& rng, std::size_t channels = 1,
                                   double noise = 0.3) {
  const std::size_t n = num_classes * per_class;
  const std::size_t plane = side * side;
  Tensor images({n, channels, side, side});
  std::vector<int> labels;
  auto px = images.mutable_data();
  const std::size_t cells = side - 2;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t spot = (c * 7919) % (cells * cells);
    const std::size_t y0 = spot / cells, x0 = spot % cells;
    for (std::size_t k = 0; k < per_class; ++k) {
      const std::size_t row = c * per_class + k;
      labels.push_back(static_cast<int>(c));
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double* p = px.data() + (row * channels + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = rng.uniform(0.0, noise);
        for (std::size_t y = y0; y < y0 + 3; ++y)
          for (std::size_t x = x0; x < x0 + 3; ++x)
            p[y * side + x] = std::min(1.0, 0.7 + rng.uniform(0.0, 0.3));
      }
    }
  }
  return LabeledDataset(images, labels);
}

}  // namespace ccm::testing
