#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace storygen::eval {

struct CharMetrics {
  double f1 = 0;        // micro-averaged over all (frame, character) slots
  double accuracy = 0;  // exact-set-match fraction per frame
  int64_t tp = 0, fp = 0, fn = 0;
  int frames = 0;
};

CharMetrics char_metrics(const std::vector<std::vector<uint8_t>>& predicted,
                         const std::vector<std::vector<uint8_t>>& truth);

// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)) with unbiased covariances
// and a small diagonal regularizer. Needs at least dim+1 samples per side.
double frechet_feature_distance(const std::vector<std::vector<double>>& features_a,
                                const std::vector<std::vector<double>>& features_b);

// Story-continuation evaluation drops the first frame of every story before
// metrics are computed; applies to generated and ground-truth sides alike.
template <typename T>
std::vector<std::vector<T>> story_continuation_filter(const std::vector<std::vector<T>>& stories) {
  std::vector<std::vector<T>> out;
  out.reserve(stories.size());
  for (const auto& story : stories) {
    if (story.size() < 2)
      throw std::invalid_argument("story_continuation_filter: stories need at least 2 frames");
    out.emplace_back(story.begin() + 1, story.end());
  }
  return out;
}

struct MetricsReport {
  double char_f1 = 0;
  double char_acc = 0;
  double ffd = 0;
  int n_stories = 0;
  int n_frames = 0;
  int64_t tp = 0, fp = 0, fn = 0;

  // deterministic single-record serialization
  std::string to_json() const;
  std::string to_table() const;
};

}  // namespace storygen::eval
