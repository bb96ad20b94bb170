// Copyright 2026 The LTDR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Synthetic multimodal token source. Vision concepts follow a Zipf law with
// a dominant background head; language concepts are uniform. A token is its
// concept's unit-norm mean plus isotropic Gaussian noise.

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ltdr/moe.hpp"
#include "ltdr/rng.hpp"
#include "ltdr/tensor.hpp"

namespace ltdr {

struct WorldParams {
  int vision_concepts = 16;
  int language_concepts = 16;
  int width = 32;
  double noise_sigma = 0.1;
  double zipf_exponent = 1.2;
  std::vector<int> background_concepts{0};
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

// P(rank r) proportional to (r + 1)^-s for r in [0, count).
std::vector<double> zipf_pmf(int count, double exponent);

class ZipfSampler {
 public:
  ZipfSampler(int count, double exponent);
  int operator()(Rng& rng) const;
  const std::vector<double>& pmf() const { return pmf_; }

 private:
  std::vector<double> pmf_;
  std::vector<double> cdf_;
};

// One draw; builds the table on every call, so prefer ZipfSampler in loops.
int zipf_sample(int count, double exponent, Rng& rng);

// Class ids: vision concept c is class c, language concept c is class
// vision_concepts + c.
struct TokenBatch {
  Tensor features;  // m x d
  ModalityMask modality;
  std::vector<int> labels;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t vision_count() const;
};

class ConceptWorld {
 public:
  // Draws the concept means from the seed. Throws ConfigError if no draw
  // separates every pair of means by more than 4 * noise_sigma.
  explicit ConceptWorld(WorldParams params);

  const WorldParams& params() const { return params_; }
  int num_classes() const { return params_.vision_concepts + params_.language_concepts; }
  int width() const { return params_.width; }
  // Mean of a class id, length `width`.
  std::span<const double> concept_mean(int class_id) const;
  double min_pairwise_distance() const;

  bool is_vision_class(int class_id) const { return class_id < params_.vision_concepts; }
  bool is_background_class(int class_id) const;

  const ZipfSampler& vision_sampler() const { return vision_sampler_; }

  // Vision tokens first, then language tokens.
  TokenBatch generate_batch(int n_vision, int n_language, Rng& rng) const;
  TokenBatch generate_batch(int n_vision, int n_language, std::uint64_t seed) const;

 private:
  WorldParams params_;
  std::vector<double> means_;  // classes x width
  ZipfSampler vision_sampler_;
};

// token_id,modality,concept,f0..f{d-1}
void write_batch_csv(std::ostream& os, const TokenBatch& batch);

}  // namespace ltdr
