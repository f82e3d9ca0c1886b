#include "eval/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <sstream>

namespace storygen::eval {

CharMetrics char_metrics(const std::vector<std::vector<uint8_t>>& predicted,
                         const std::vector<std::vector<uint8_t>>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("char_metrics: prediction/truth frame counts differ (" +
                                std::to_string(predicted.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  CharMetrics m;
  int exact = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != truth[i].size())
      throw std::invalid_argument("char_metrics: character count mismatch at frame " +
                                  std::to_string(i));
    bool all_match = true;
    for (size_t c = 0; c < predicted[i].size(); ++c) {
      const bool p = predicted[i][c] != 0, t = truth[i][c] != 0;
      if (p != t) all_match = false;
      m.tp += (p && t) ? 1 : 0;
      m.fp += (p && !t) ? 1 : 0;
      m.fn += (!p && t) ? 1 : 0;
    }
    exact += all_match ? 1 : 0;
  }
  m.frames = static_cast<int>(predicted.size());
  const double denom = static_cast<double>(2 * m.tp + m.fp + m.fn);
  m.f1 = denom > 0 ? 2.0 * static_cast<double>(m.tp) / denom : 1.0;
  m.accuracy = m.frames > 0 ? static_cast<double>(exact) / m.frames : 1.0;
  return m;
}

double frechet_feature_distance(const std::vector<std::vector<double>>& features_a,
                                const std::vector<std::vector<double>>& features_b) {
  if (features_a.empty() || features_b.empty())
    throw std::invalid_argument("frechet_feature_distance: empty feature set");
  const int dim = static_cast<int>(features_a.front().size());
  if (dim < 1 || static_cast<int>(features_b.front().size()) != dim)
    throw std::invalid_argument("frechet_feature_distance: feature dimensions differ");
  if (static_cast<int>(features_a.size()) < dim + 1 ||
      static_cast<int>(features_b.size()) < dim + 1)
    throw std::invalid_argument("frechet_feature_distance: need at least dim+1 samples per set");

  auto stats = [dim](const std::vector<std::vector<double>>& rows, Eigen::VectorXd& mu,
                     Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(rows.size());
    Eigen::MatrixXd x(n, dim);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim; ++j) x(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / static_cast<double>(n - 1);
    cov.diagonal().array() += 1e-6;
  };

  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  stats(features_a, mu_a, cov_a);
  stats(features_b, mu_b, cov_b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  if (es_a.info() != Eigen::Success)
    throw std::runtime_error("frechet_feature_distance: covariance eigendecomposition failed");
  Eigen::VectorXd eig_a = es_a.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd sqrt_a =
      es_a.eigenvectors() * eig_a.cwiseSqrt().asDiagonal() * es_a.eigenvectors().transpose();

  // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}), and the inner
  // matrix is symmetric PSD
  Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(inner);
  if (es_m.info() != Eigen::Success)
    throw std::runtime_error("frechet_feature_distance: matrix square root did not converge");
  const double trace_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
}

std::string MetricsReport::to_json() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "{\"char_f1\": %.6f, \"char_acc\": %.6f, \"ffd\": %.6f, "
                "\"n_stories\": %d, \"n_frames\": %d, \"tp\": %lld, \"fp\": %lld, \"fn\": %lld}",
                char_f1, char_acc, ffd, n_stories, n_frames, static_cast<long long>(tp),
                static_cast<long long>(fp), static_cast<long long>(fn));
  return std::string(buf);
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %10.4f\n", "char_f1", char_f1);
  out << line;
  std::snprintf(line, sizeof line, "%-12s %10.4f\n", "char_acc", char_acc);
  out << line;
  std::snprintf(line, sizeof line, "%-12s %10.4f\n", "ffd", ffd);
  out << line;
  std::snprintf(line, sizeof line, "%-12s %10d\n", "stories", n_stories);
  out << line;
  std::snprintf(line, sizeof line, "%-12s %10d\n", "frames", n_frames);
  out << line;
  return out.str();
}

}  // namespace storygen::eval
