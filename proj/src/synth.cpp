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

#include "ltdr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "ltdr/csv.hpp"
#include "ltdr/errors.hpp"

namespace ltdr {

void WorldParams::validate() const {
  if (vision_concepts < 1) throw ConfigError("world.vision_concepts must be >= 1");
  if (language_concepts < 1) throw ConfigError("world.language_concepts must be >= 1");
  if (width < 1) throw ConfigError("world.width must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("world.noise_sigma must be finite and >= 0");
  }
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) {
    throw ConfigError("world.zipf_exponent must be finite and >= 0");
  }
  for (int c : background_concepts) {
    if (c < 0 || c >= vision_concepts) {
      throw ConfigError("world.background_concepts: " + std::to_string(c) +
                        " is not a vision concept");
    }
  }
}

std::vector<double> zipf_pmf(int count, double exponent) {
  if (count < 1) throw ContractError("zipf: need at least one rank");
  if (exponent < 0.0) throw ContractError("zipf: exponent must be >= 0");
  std::vector<double> pmf(static_cast<std::size_t>(count));
  double total = 0.0;
  for (int r = 0; r < count; ++r) {
    pmf[static_cast<std::size_t>(r)] = std::pow(static_cast<double>(r + 1), -exponent);
    total += pmf[static_cast<std::size_t>(r)];
  }
  for (double& p : pmf) p /= total;
  return pmf;
}

ZipfSampler::ZipfSampler(int count, double exponent) : pmf_(zipf_pmf(count, exponent)) {
  cdf_.resize(pmf_.size());
  double acc = 0.0;
  for (std::size_t r = 0; r < pmf_.size(); ++r) {
    acc += pmf_[r];
    cdf_[r] = acc;
  }
  cdf_.back() = 1.0;
}

int ZipfSampler::operator()(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                   static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
}

int zipf_sample(int count, double exponent, Rng& rng) { return ZipfSampler(count, exponent)(rng); }

std::size_t TokenBatch::vision_count() const {
  return static_cast<std::size_t>(std::count(modality.begin(), modality.end(), 0));
}

ConceptWorld::ConceptWorld(WorldParams params)
    : params_(std::move(params)),
      vision_sampler_((params_.validate(), params_.vision_concepts), params_.zipf_exponent) {
  const auto classes = static_cast<std::size_t>(num_classes());
  const auto d = static_cast<std::size_t>(params_.width);
  Rng rng(params_.seed, 0x636f6e63657074ULL);
  for (int attempt = 0; attempt < 100; ++attempt) {
    means_.assign(classes * d, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          means_[c * d + j] = rng.normal();
          norm += means_[c * d + j] * means_[c * d + j];
        }
      } while (norm == 0.0);
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) means_[c * d + j] /= norm;
    }
    if (classes < 2 || min_pairwise_distance() > 4.0 * params_.noise_sigma) return;
  }
  throw ConfigError("world: could not draw concept means separated by more than 4 * noise_sigma");
}

std::span<const double> ConceptWorld::concept_mean(int class_id) const {
  if (class_id < 0 || class_id >= num_classes()) {
    throw std::out_of_range("concept id " + std::to_string(class_id));
  }
  const auto d = static_cast<std::size_t>(params_.width);
  return std::span<const double>(means_).subspan(static_cast<std::size_t>(class_id) * d, d);
}

double ConceptWorld::min_pairwise_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_classes(); ++a) {
    for (int b = a + 1; b < num_classes(); ++b) {
      const auto ma = concept_mean(a), mb = concept_mean(b);
      double s = 0.0;
      for (std::size_t j = 0; j < ma.size(); ++j) s += (ma[j] - mb[j]) * (ma[j] - mb[j]);
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

bool ConceptWorld::is_background_class(int class_id) const {
  const auto& bg = params_.background_concepts;
  return std::find(bg.begin(), bg.end(), class_id) != bg.end();
}

TokenBatch ConceptWorld::generate_batch(int n_vision, int n_language, Rng& rng) const {
  if (n_vision < 0 || n_language < 0) throw ContractError("generate_batch: negative token count");
  const auto m = static_cast<std::size_t>(n_vision + n_language);
  const auto d = static_cast<std::size_t>(params_.width);
  TokenBatch batch;
  batch.modality.assign(m, 0);
  batch.labels.resize(m);
  std::vector<double> features(m * d);
  for (std::size_t t = 0; t < m; ++t) {
    int label;
    if (t < static_cast<std::size_t>(n_vision)) {
      label = vision_sampler_(rng);
    } else {
      batch.modality[t] = 1;
      label = params_.vision_concepts +
              static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(params_.language_concepts)));
    }
    batch.labels[t] = label;
    const auto mean = concept_mean(label);
    for (std::size_t j = 0; j < d; ++j) {
      features[t * d + j] = params_.noise_sigma > 0.0 ? mean[j] + params_.noise_sigma * rng.normal()
                                                      : mean[j];
    }
  }
  batch.features = Tensor::from_values({m, d}, std::move(features));
  return batch;
}

TokenBatch ConceptWorld::generate_batch(int n_vision, int n_language, std::uint64_t seed) const {
  Rng rng(seed, 0x6261746368ULL);
  TokenBatch batch = generate_batch(n_vision, n_language, rng);
  batch.seed = seed;
  return batch;
}

void write_batch_csv(std::ostream& os, const TokenBatch& batch) {
  const std::size_t d = batch.size() ? batch.features.cols() : 0;
  os << "token_id,modality,concept";
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t t = 0; t < batch.size(); ++t) {
    os << t << ',' << (batch.modality[t] ? "language" : "vision") << ',' << batch.labels[t];
    for (std::size_t j = 0; j < d; ++j) os << ',' << format_real(batch.features.at(t, j));
    os << '\n';
  }
}

}  // namespace ltdr
