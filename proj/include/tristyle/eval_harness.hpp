#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tristyle/autoencoder.hpp"
#include "tristyle/denoiser.hpp"
#include "tristyle/errors.hpp"

namespace tristyle {

// One embedding per row.
using Embeddings = Eigen::MatrixXd;

enum class Modality { Image, Text, ImageText };

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Modality modality() const = 0;
  // images: [N, 3, H, W] -> [N, dim]
  virtual Embeddings embed_images(const Tensor& images) const;
  virtual Eigen::VectorXd embed_text(const std::string& prompt) const;
};

// Per-channel mean and standard deviation of the frozen autoencoder latent.
class LatentStatsEmbedder : public Embedder {
 public:
  explicit LatentStatsEmbedder(const Autoencoder& ae) : ae_(ae) {}
  std::string name() const override { return "ae-stats"; }
  int dim() const override { return 2 * ae_.config().latent_channels; }
  Modality modality() const override { return Modality::Image; }
  Embeddings embed_images(const Tensor& images) const override;

 private:
  const Autoencoder& ae_;
};

// Joint color space: images map to a soft histogram over the vocabulary
// colors, prompts to the normalized indicator of the colors they name.
class ColorJointEmbedder : public Embedder {
 public:
  std::string name() const override { return "color"; }
  int dim() const override;
  Modality modality() const override { return Modality::ImageText; }
  Embeddings embed_images(const Tensor& images) const override;
  Eigen::VectorXd embed_text(const std::string& prompt) const override;
};

std::unique_ptr<Embedder> make_embedder(const std::string& name, const Autoencoder* ae);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). Appends advisory
// notes (small sample sizes, jitter retries) to `warnings` when given.
double frechet_distance(const Embeddings& a, const Embeddings& b, std::vector<std::string>* warnings = nullptr);

// Mean cosine similarity over all (sample, reference) pairs.
double pairwise_similarity_score(const Embeddings& samples, const Embeddings& references);
double pairwise_similarity_score(const Tensor& samples, const Tensor& references, const Embedder& embedder);

// Mean cosine similarity between each image embedding and the prompt embedding.
double text_image_score(const Embeddings& images, const Eigen::VectorXd& prompt);
double text_image_score(const Tensor& images, const std::string& prompt, const Embedder& embedder);

// LPIPS-style distance: per-layer channel-normalized squared feature
// differences averaged over positions, then averaged over layers. Layers are
// the raw pixels, the autoencoder latent and the denoiser encoder levels.
class PerceptualDistance {
 public:
  PerceptualDistance(const Autoencoder* ae, const Denoiser* denoiser) : ae_(ae), denoiser_(denoiser) {}

  double operator()(const Tensor& a, const Tensor& b) const;
  // Row-wise distances between equally sized batches [N, 3, H, W].
  std::vector<double> batch(const Tensor& a, const Tensor& b) const;
  // Full [Na, Nb] distance matrix.
  Eigen::MatrixXd matrix(const Tensor& a, const Tensor& b) const;

 private:
  std::vector<Tensor> features(const Tensor& images) const;

  const Autoencoder* ae_;
  const Denoiser* denoiser_;
};

// Assigns samples to their nearest reference (ties: lowest index) and returns
// the mean over clusters with >= 2 members of the mean pairwise distance.
double intra_cluster_from_distances(const Eigen::MatrixXd& sample_ref, const Eigen::MatrixXd& sample_sample);

template <typename Sample, typename Distance>
double intra_cluster_lpips(const std::vector<Sample>& samples, const std::vector<Sample>& references, Distance&& dist) {
  require(!samples.empty() && !references.empty(), "intra-cluster metric needs samples and references");
  const auto n = static_cast<Eigen::Index>(samples.size()), r = static_cast<Eigen::Index>(references.size());
  Eigen::MatrixXd to_ref(n, r), pair(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < r; ++j) to_ref(i, j) = dist(samples[i], references[j]);
  for (Eigen::Index i = 0; i < n; ++i) {
    pair(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) pair(i, j) = pair(j, i) = dist(samples[i], samples[j]);
  }
  return intra_cluster_from_distances(to_ref, pair);
}

struct MetricReport {
  std::string metric;
  double value = 0.0;
  int samples = 0;
  int references = 0;
  std::string embedder;
  std::string config_hash;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

std::string reports_csv(const std::vector<MetricReport>& reports);

struct RankTest {
  double statistic = 0.0;  // Spearman rho or t
  double p_value = 1.0;    // one-sided
  int n = 0;
};

// Spearman rank correlation with average ranks for ties; p-value for rho > 0
// from the t approximation with n - 2 degrees of freedom.
RankTest spearman_increasing(const std::vector<double>& x, const std::vector<double>& y);
// Paired one-sided t-test of mean(a - b) < 0.
RankTest paired_t_less(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tristyle
