/* Copyright 2026 The splitnas Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Synthetic image classification task: each class is a bar with its own
// orientation, drawn at a random offset over Gaussian noise.

#ifndef SPLITNAS_DATASET_HPP_
#define SPLITNAS_DATASET_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/rng.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
};

struct DataSplit {
  Dataset train;
  Dataset val;
};

struct ToyDataOptions {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 3;
  std::size_t num_classes = 4;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  double noise = 0.3;
  std::uint64_t seed = 1;
};

inline Tensor toy_image(const ToyDataOptions& o, std::size_t label, Rng& rng) {
  Tensor img({o.height, o.width, o.channels});
  const double angle = M_PI * static_cast<double>(label) / static_cast<double>(o.num_classes);
  const double nx = -std::sin(angle), ny = std::cos(angle);  // unit normal of the bar
  const double cy = (static_cast<double>(o.height) - 1.0) * (0.25 + 0.5 * rng.uniform());
  const double cx = (static_cast<double>(o.width) - 1.0) * (0.25 + 0.5 * rng.uniform());
  for (std::size_t y = 0; y < o.height; ++y) {
    for (std::size_t x = 0; x < o.width; ++x) {
      const double dist = std::abs((static_cast<double>(y) - cy) * ny + (static_cast<double>(x) - cx) * nx);
      const double bar = dist < 0.75 ? 1.0 : 0.0;
      for (std::size_t c = 0; c < o.channels; ++c) {
        const double gain = 1.0 - 0.25 * static_cast<double>(c % 4);
        img.data[(y * o.width + x) * o.channels + c] = gain * bar + rng.normal(0.0, o.noise);
      }
    }
  }
  return img;
}

inline Dataset toy_samples(const ToyDataOptions& o, std::size_t count, Rng& rng) {
  Dataset d;
  d.num_classes = o.num_classes;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t label = rng.index(o.num_classes);
    d.inputs.push_back(toy_image(o, label, rng));
    d.labels.push_back(label);
  }
  return d;
}

inline DataSplit make_toy_dataset(const ToyDataOptions& o) {
  if (o.height == 0 || o.width == 0 || o.channels == 0) throw ValidationError("image dims must be positive");
  if (o.num_classes < 2) throw ValidationError("need at least two classes");
  if (!(o.noise >= 0.0)) throw ValidationError("noise must be >= 0");
  Rng rng(o.seed);
  DataSplit s;
  s.train = toy_samples(o, o.train_size, rng);
  s.val = toy_samples(o, o.val_size, rng);
  return s;
}

}  // namespace splitnas

#endif  // SPLITNAS_DATASET_HPP_
