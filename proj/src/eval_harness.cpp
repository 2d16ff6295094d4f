#include "tristyle/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "tristyle/synth.hpp"
#include "tristyle/text.hpp"

namespace tristyle {

Embeddings Embedder::embed_images(const Tensor&) const {
  fail(ErrorKind::InvalidInput, "embedder '" + name() + "' does not embed images");
}

Eigen::VectorXd Embedder::embed_text(const std::string&) const {
  fail(ErrorKind::InvalidInput, "embedder '" + name() + "' does not embed text");
}

Embeddings LatentStatsEmbedder::embed_images(const Tensor& images) const {
  const Tensor z = ae_.encode(images);
  const int n = z.dim(0), c = z.dim(1);
  const std::size_t hw = static_cast<std::size_t>(z.dim(2)) * z.dim(3);
  Embeddings out(n, 2 * c);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = z.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
      double m = 0.0, s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) m += p[i];
      m /= static_cast<double>(hw);
      for (std::size_t i = 0; i < hw; ++i) s += (p[i] - m) * (p[i] - m);
      out(b, ch) = m;
      out(b, c + ch) = std::sqrt(s / static_cast<double>(hw));
    }
  return out;
}

int ColorJointEmbedder::dim() const { return static_cast<int>(Vocabulary::standard().color_words().size()); }

Embeddings ColorJointEmbedder::embed_images(const Tensor& images) const {
  require(images.rank() == 4 && images.dim(1) == 3, "expected [N, 3, H, W] images, got " + shape_string(images.shape()));
  const auto& colors = Vocabulary::standard().color_words();
  std::vector<std::vector<float>> protos;
  for (const auto& c : colors) protos.push_back(color_rgb(c));
  constexpr double kInvTwoSigma2 = 1.0 / (2.0 * 0.15 * 0.15);
  const int n = images.dim(0);
  const std::size_t hw = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
  Embeddings out = Embeddings::Zero(n, static_cast<Eigen::Index>(colors.size()));
  std::vector<double> w(colors.size());
  for (int b = 0; b < n; ++b) {
    const float* base = images.data() + static_cast<std::size_t>(b) * 3 * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double total = 0.0;
      for (std::size_t k = 0; k < protos.size(); ++k) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = base[c * hw + i] - protos[k][c];
          d2 += d * d;
        }
        w[k] = std::exp(-d2 * kInvTwoSigma2);
        total += w[k];
      }
      if (total <= 0.0) continue;
      for (std::size_t k = 0; k < protos.size(); ++k) out(b, static_cast<Eigen::Index>(k)) += w[k] / total;
    }
    out.row(b) /= static_cast<double>(hw);
  }
  return out;
}

Eigen::VectorXd ColorJointEmbedder::embed_text(const std::string& prompt) const {
  const auto& colors = Vocabulary::standard().color_words();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(colors.size()));
  for (const auto& w : split_words(prompt)) {
    const auto it = std::find(colors.begin(), colors.end(), w);
    if (it != colors.end()) v(it - colors.begin()) += 1.0;
  }
  if (v.sum() > 0) v /= v.sum();
  return v;
}

std::unique_ptr<Embedder> make_embedder(const std::string& name, const Autoencoder* ae) {
  if (name == "ae-stats") {
    if (!ae || !ae->loaded()) fail(ErrorKind::State, "embedder 'ae-stats' needs a trained autoencoder");
    return std::make_unique<LatentStatsEmbedder>(*ae);
  }
  if (name == "color") return std::make_unique<ColorJointEmbedder>();
  fail(ErrorKind::InvalidInput, "unknown embedder '" + name + "'", {{"known", {"ae-stats", "color"}}});
}

namespace {

Eigen::MatrixXd covariance(const Embeddings& x, const Eigen::RowVectorXd& mean) {
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double trace_sqrt_product(const Eigen::MatrixXd& sa, const Eigen::MatrixXd& sb) {
  const Eigen::MatrixXd ra = sqrt_psd(sa);
  Eigen::MatrixXd m = ra * sb * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return std::nan("");
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double frechet_distance(const Embeddings& a, const Embeddings& b, std::vector<std::string>* warnings) {
  require(a.cols() == b.cols(), "embedding dimensions differ: " + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()));
  require(a.rows() >= 2 && b.rows() >= 2, "frechet distance needs at least two embeddings per set");
  if (warnings && (a.rows() < a.cols() + 1 || b.rows() < b.cols() + 1))
    warnings->push_back("set sizes " + std::to_string(a.rows()) + "/" + std::to_string(b.rows()) +
                        " are below dim+1=" + std::to_string(a.cols() + 1) + "; covariance is rank deficient");
  const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
  Eigen::MatrixXd sa = covariance(a, ma), sb = covariance(b, mb);
  double tr = trace_sqrt_product(sa, sb);
  if (!std::isfinite(tr)) {
    const auto eye = Eigen::MatrixXd::Identity(sa.rows(), sa.cols());
    sa += 1e-10 * eye;
    sb += 1e-10 * eye;
    tr = trace_sqrt_product(sa, sb);
    if (!std::isfinite(tr))
      fail(ErrorKind::Numerical, "covariance square root failed even after 1e-10 diagonal jitter");
    if (warnings) warnings->push_back("covariance square root needed 1e-10 diagonal jitter");
  }
  const double d = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr;
  return std::max(0.0, d);
}

namespace {

Eigen::MatrixXd unit_rows(const Embeddings& e, const char* what) {
  Eigen::MatrixXd out = e;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    const double n = e.row(i).norm();
    if (!(n > 0.0)) fail(ErrorKind::InvalidInput, std::string("zero-norm embedding for ") + what + " " + std::to_string(i),
                         {{"index", i}});
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

double pairwise_similarity_score(const Embeddings& samples, const Embeddings& references) {
  require(samples.rows() > 0 && references.rows() > 0, "similarity needs non-empty sample and reference sets");
  require(samples.cols() == references.cols(), "embedding dimensions differ");
  const Eigen::MatrixXd s = unit_rows(samples, "sample"), r = unit_rows(references, "reference");
  return (s * r.transpose()).mean();
}

double pairwise_similarity_score(const Tensor& samples, const Tensor& references, const Embedder& embedder) {
  return pairwise_similarity_score(embedder.embed_images(samples), embedder.embed_images(references));
}

double text_image_score(const Embeddings& images, const Eigen::VectorXd& prompt) {
  if (images.rows() == 0) fail(ErrorKind::InvalidInput, "text-image score needs at least one image");
  require(images.cols() == prompt.size(), "image and prompt embedding dimensions differ");
  const double pn = prompt.norm();
  if (!(pn > 0.0)) fail(ErrorKind::InvalidInput, "prompt embedding has zero norm");
  const Eigen::MatrixXd s = unit_rows(images, "image");
  return (s * (prompt / pn)).mean();
}

double text_image_score(const Tensor& images, const std::string& prompt, const Embedder& embedder) {
  if (embedder.modality() != Modality::ImageText)
    fail(ErrorKind::InvalidInput, "embedder '" + embedder.name() + "' does not embed both images and text");
  if (images.empty() || images.dim(0) == 0) fail(ErrorKind::InvalidInput, "text-image score needs at least one image");
  return text_image_score(embedder.embed_images(images), embedder.embed_text(prompt));
}

std::vector<Tensor> PerceptualDistance::features(const Tensor& images) const {
  std::vector<Tensor> layers{images};
  if (ae_) {
    Tensor z = ae_->encode(images);
    if (denoiser_) {
      auto enc = denoiser_->encoder_features(z);
      layers.push_back(std::move(z));
      for (auto& f : enc) layers.push_back(std::move(f));
    } else {
      layers.push_back(std::move(z));
    }
  }
  // Channel-normalize every layer except the raw pixels.
  for (std::size_t l = 1; l < layers.size(); ++l) {
    Tensor& f = layers[l];
    const int n = f.dim(0), c = f.dim(1);
    const std::size_t hw = static_cast<std::size_t>(f.dim(2)) * f.dim(3);
    for (int b = 0; b < n; ++b) {
      float* p = f.data() + static_cast<std::size_t>(b) * c * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) s += static_cast<double>(p[ch * hw + i]) * p[ch * hw + i];
        const auto inv = static_cast<float>(1.0 / (std::sqrt(s) + 1e-10));
        for (int ch = 0; ch < c; ++ch) p[ch * hw + i] *= inv;
      }
    }
  }
  return layers;
}

namespace {

double layer_distance(const Tensor& fa, int ia, const Tensor& fb, int ib) {
  const int c = fa.dim(1);
  const std::size_t hw = static_cast<std::size_t>(fa.dim(2)) * fa.dim(3);
  const float* pa = fa.data() + static_cast<std::size_t>(ia) * c * hw;
  const float* pb = fb.data() + static_cast<std::size_t>(ib) * c * hw;
  double s = 0.0;
  for (std::size_t i = 0; i < c * hw; ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    s += d * d;
  }
  return s / static_cast<double>(hw);
}

double combine(const std::vector<Tensor>& fa, int ia, const std::vector<Tensor>& fb, int ib) {
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) total += layer_distance(fa[l], ia, fb[l], ib);
  return total / static_cast<double>(fa.size());
}

Tensor as_batch(const Tensor& t) { return t.rank() == 3 ? t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}) : t; }

}  // namespace

double PerceptualDistance::operator()(const Tensor& a, const Tensor& b) const {
  const Tensor ba = as_batch(a), bb = as_batch(b);
  if (ba.shape() != bb.shape() || ba.dim(0) != 1)
    fail(ErrorKind::InvalidInput, "perceptual distance needs two images of one resolution, got " +
                                      shape_string(a.shape()) + " and " + shape_string(b.shape()));
  return batch(ba, bb)[0];
}

std::vector<double> PerceptualDistance::batch(const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape())
    fail(ErrorKind::InvalidInput, "perceptual distance resolution mismatch: " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  const auto fa = features(a), fb = features(b);
  std::vector<double> out(static_cast<std::size_t>(a.dim(0)));
  for (int i = 0; i < a.dim(0); ++i) out[static_cast<std::size_t>(i)] = combine(fa, i, fb, i);
  return out;
}

Eigen::MatrixXd PerceptualDistance::matrix(const Tensor& a, const Tensor& b) const {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    fail(ErrorKind::InvalidInput, "perceptual distance resolution mismatch: " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  const auto fa = features(a), fb = features(b);
  Eigen::MatrixXd out(a.dim(0), b.dim(0));
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < b.dim(0); ++j) out(i, j) = combine(fa, i, fb, j);
  return out;
}

double intra_cluster_from_distances(const Eigen::MatrixXd& sample_ref, const Eigen::MatrixXd& sample_sample) {
  const Eigen::Index n = sample_ref.rows();
  require(n > 0 && sample_ref.cols() > 0, "intra-cluster metric needs samples and references");
  require(sample_sample.rows() == n && sample_sample.cols() == n, "pairwise sample distances must be n x n");
  std::map<Eigen::Index, std::vector<Eigen::Index>> clusters;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < sample_ref.cols(); ++j)
      if (sample_ref(i, j) < sample_ref(i, best)) best = j;
    clusters[best].push_back(i);
  }
  double total = 0.0;
  int used = 0;
  for (const auto& [ref, members] : clusters) {
    if (members.size() < 2) continue;
    double s = 0.0;
    int pairs = 0;
    for (std::size_t x = 0; x < members.size(); ++x)
      for (std::size_t y = x + 1; y < members.size(); ++y) {
        s += sample_sample(members[x], members[y]);
        ++pairs;
      }
    total += s / pairs;
    ++used;
  }
  if (used == 0)
    fail(ErrorKind::UndefinedMetric, "every cluster is a singleton; intra-cluster distance is undefined",
         {{"clusters", clusters.size()}});
  return total / used;
}

nlohmann::json MetricReport::to_json() const {
  return {{"metric", metric},     {"value", value},   {"samples", samples},         {"references", references},
          {"embedder", embedder}, {"config_hash", config_hash}, {"warnings", warnings}};
}

std::string reports_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os.precision(10);
  os << "metric,value,samples,references,embedder,config_hash\n";
  for (const auto& r : reports)
    os << r.metric << ',' << r.value << ',' << r.samples << ',' << r.references << ',' << r.embedder << ','
       << r.config_hash << '\n';
  return os.str();
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

RankTest spearman_increasing(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 3, "spearman needs at least three paired observations");
  const auto rx = ranks(x), ry = ranks(y);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  RankTest out;
  out.n = static_cast<int>(x.size());
  out.statistic = (sxx > 0 && syy > 0) ? sxy / std::sqrt(sxx * syy) : 0.0;
  if (out.statistic >= 1.0) {
    out.p_value = 0.0;
    return out;
  }
  const double t = out.statistic * std::sqrt((n - 2.0) / (1.0 - out.statistic * out.statistic));
  boost::math::students_t dist(n - 2.0);
  out.p_value = boost::math::cdf(boost::math::complement(dist, t));
  return out;
}

RankTest paired_t_less(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "paired t-test needs at least two paired observations");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  RankTest out;
  out.n = static_cast<int>(a.size());
  if (sd == 0.0) {
    out.statistic = mean < 0 ? -INFINITY : (mean > 0 ? INFINITY : 0.0);
    out.p_value = mean < 0 ? 0.0 : 1.0;
    return out;
  }
  out.statistic = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1.0);
  out.p_value = boost::math::cdf(dist, out.statistic);
  return out;
}

}  // namespace tristyle
