#include "sic/head.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace sic {

EvidenceVector evidence(const Vec& latent) {
  return EvidenceVector{latent.cwiseMax(0.0f)};
}

Scalar similarity(const EvidenceVector& f_plus, const EvidenceVector& support, Scalar b_exponent) {
  if (!(support.values.norm() > 0.0f)) {
    throw degenerate_support_error("similarity: zero support vector");
  }
  return bcos_transform(f_plus.values, support.values, b_exponent);
}

const SupportEntry& SupportSet::at(int class_id, int i) const {
  if (class_id < 0 || class_id >= num_classes || i < 0 || i >= n_support) {
    throw contract_error("SupportSet: index out of range");
  }
  return entries[static_cast<size_t>(class_id) * n_support + i];
}

void HeadConfig::validate() const {
  if (!(temperature > 0.0f)) throw config_error("HeadConfig: temperature must be positive");
  if (n_support < 1) throw config_error("HeadConfig: n_support must be >= 1");
  if (num_classes < 1) throw config_error("HeadConfig: num_classes must be >= 1");
  if (b_exponent < 1.0f) throw config_error("HeadConfig: b_exponent must be >= 1");
}

namespace {

Tensor scaled_similarities(const Tensor& f_latent, const std::vector<Tensor>& support_vectors,
                           const HeadConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(support_vectors.size()) != cfg.num_classes * cfg.n_support) {
    throw contract_error("head: support count does not match classes * n_support");
  }
  Tensor f_plus = relu(f_latent);
  Tensor v_mat = concat_rows(support_vectors);
  // zero rows stay zero: an uninformative support contributes no similarity
  Tensor v_unit = normalize_rows(v_mat, /*allow_zero_rows=*/true);
  const int d = f_latent.dim(0);
  Tensor s = matmul(v_unit, reshape(f_plus, {d, 1}));
  Tensor n = l2_norm(f_plus);
  Tensor sims = bcos_scale(s, n, cfg.b_exponent);
  const int m = static_cast<int>(support_vectors.size());
  return scale(reshape(sims, {m}), 1.0f / cfg.temperature);
}

}  // namespace

Tensor head_evidence_scores(const Tensor& f_latent, const std::vector<Tensor>& support_vectors,
                            const HeadConfig& cfg) {
  return scaled_similarities(f_latent, support_vectors, cfg);
}

Tensor head_logits(const Tensor& f_latent, const std::vector<Tensor>& support_vectors,
                   const HeadConfig& cfg) {
  Tensor scores = scaled_similarities(f_latent, support_vectors, cfg);
  std::vector<int> sizes(cfg.num_classes, cfg.n_support);
  return add_scalar(class_sums(scores, sizes), cfg.bias);
}

Vec logits(const EvidenceVector& f_plus, const SupportSet& supports, const HeadConfig& cfg) {
  if (supports.num_classes != cfg.num_classes || supports.n_support != cfg.n_support ||
      supports.entries.size() != static_cast<size_t>(cfg.num_classes) * cfg.n_support) {
    throw contract_error("logits: support set does not match head configuration");
  }
  std::vector<Tensor> vs;
  vs.reserve(supports.entries.size());
  for (const SupportEntry& e : supports.entries) {
    if (!(e.vector.norm() > 0.0f)) throw degenerate_support_error("logits: zero support vector");
    vs.push_back(make_tensor({static_cast<int>(e.vector.size())}, e.vector));
  }
  Tensor f = make_tensor({static_cast<int>(f_plus.values.size())}, f_plus.values);
  // head_logits applies its own ReLU; evidence vectors are already
  // non-negative, so the gate is the identity on them.
  return head_logits(f, vs, cfg).values();
}

SupportSet sample_supports(const std::vector<ClassLatents>& latents, int n_support, std::mt19937& rng) {
  if (n_support < 1) throw config_error("sample_supports: n_support must be >= 1");
  SupportSet set;
  set.num_classes = static_cast<int>(latents.size());
  set.n_support = n_support;
  for (const ClassLatents& cls : latents) {
    const int n = static_cast<int>(cls.vectors.size());
    if (n < n_support) {
      throw dataset_error("sample_supports: class " + std::to_string(cls.class_id) + " has " +
                          std::to_string(n) + " eligible samples, needs " + std::to_string(n_support));
    }
    std::vector<int> indices(n);
    std::iota(indices.begin(), indices.end(), 0);
    std::vector<int> chosen;
    std::sample(indices.begin(), indices.end(), std::back_inserter(chosen), n_support, rng);
    for (int idx : chosen) {
      set.entries.push_back(SupportEntry{cls.vectors[idx], cls.sample_ids[idx], cls.class_id});
    }
  }
  return set;
}

namespace {

double sq_dist(const Vec& a, const Vec& b) {
  return double((a - b).squaredNorm());
}

struct Lloyd {
  const std::vector<Vec>& points;
  int k;

  KMeansResult run(std::vector<Vec> centroids) const {
    const int n = static_cast<int>(points.size());
    std::vector<int> assignment(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = sq_dist(points[i], centroids[0]);
        for (int c = 1; c < k; ++c) {
          const double d = sq_dist(points[i], centroids[c]);
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        if (assignment[i] != best) {
          assignment[i] = best;
          changed = true;
        }
      }
      // reseed empty clusters from the farthest point
      std::vector<int> counts(k, 0);
      for (int a : assignment) ++counts[a];
      bool reseeded = false;
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) continue;
        int farthest = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          if (counts[assignment[i]] <= 1) continue;  // keep donor clusters non-empty
          const double d = sq_dist(points[i], centroids[assignment[i]]);
          if (d > far_d) {
            far_d = d;
            farthest = i;
          }
        }
        if (farthest < 0) continue;
        --counts[assignment[farthest]];
        assignment[farthest] = c;
        counts[c] = 1;
        centroids[c] = points[farthest];
        reseeded = true;
      }
      if (!changed && !reseeded && iter > 0) break;
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;
        Vec mean = Vec::Zero(points[0].size());
        for (int i = 0; i < n; ++i) {
          if (assignment[i] == c) mean += points[i];
        }
        centroids[c] = mean / Scalar(counts[c]);
      }
    }
    KMeansResult result;
    result.centroids = std::move(centroids);
    result.assignment = std::move(assignment);
    result.sse = 0.0;
    for (int i = 0; i < n; ++i) {
      result.sse += sq_dist(points[i], result.centroids[result.assignment[i]]);
    }
    return result;
  }
};

std::vector<Vec> kmeanspp_seed(const std::vector<Vec>& points, int k, std::mt19937& rng) {
  const int n = static_cast<int>(points.size());
  std::vector<Vec> centroids;
  std::vector<char> taken(n, 0);
  std::uniform_int_distribution<int> first(0, n - 1);
  int idx = first(rng);
  centroids.push_back(points[idx]);
  taken[idx] = 1;
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const Vec& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = taken[i] ? 0.0 : best;
      total += d2[i];
    }
    int next = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (int i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          next = i;
          break;
        }
      }
      if (next < 0) next = n - 1;
    }
    if (next < 0 || taken[next]) {
      for (int i = 0; i < n; ++i) {
        if (!taken[i]) {
          next = i;
          break;
        }
      }
    }
    taken[next] = 1;
    centroids.push_back(points[next]);
  }
  return centroids;
}

// Walks all k-subsets of [0,n); small n only.
bool next_combination(std::vector<int>& comb, int n) {
  const int k = static_cast<int>(comb.size());
  for (int i = k - 1; i >= 0; --i) {
    if (comb[i] < n - k + i) {
      ++comb[i];
      for (int j = i + 1; j < k; ++j) comb[j] = comb[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec>& points, int k, std::mt19937& rng) {
  const int n = static_cast<int>(points.size());
  if (k < 1) throw contract_error("kmeans: k must be >= 1");
  if (n < k) throw contract_error("kmeans: fewer points than clusters");
  for (const Vec& p : points) {
    if (p.size() != points[0].size()) throw dimension_error("kmeans: inconsistent point dimensions");
  }
  Lloyd lloyd{points, k};
  KMeansResult best;
  best.sse = std::numeric_limits<double>::max();
  if (n <= 10) {
    std::vector<int> comb(k);
    std::iota(comb.begin(), comb.end(), 0);
    do {
      std::vector<Vec> init;
      init.reserve(k);
      for (int idx : comb) init.push_back(points[idx]);
      KMeansResult r = lloyd.run(std::move(init));
      if (r.sse < best.sse) best = std::move(r);
    } while (next_combination(comb, n));
  } else {
    constexpr int kRestarts = 8;
    for (int restart = 0; restart < kRestarts; ++restart) {
      KMeansResult r = lloyd.run(kmeanspp_seed(points, k, rng));
      if (r.sse < best.sse) best = std::move(r);
    }
  }
  return best;
}

SupportSet extract_supports(const std::vector<ClassLatents>& latents, int n_support, std::mt19937& rng) {
  if (n_support < 1) throw config_error("extract_supports: n_support must be >= 1");
  SupportSet set;
  set.num_classes = static_cast<int>(latents.size());
  set.n_support = n_support;
  for (const ClassLatents& cls : latents) {
    if (cls.vectors.size() != cls.sample_ids.size()) {
      throw contract_error("extract_supports: ids/vectors length mismatch");
    }
    KMeansResult km = kmeans(cls.vectors, n_support, rng);
    for (int i = 0; i < n_support; ++i) {
      // nearest same-class latent; skip all-zero vectors, break ties toward
      // the lowest sample index
      int best = -1;
      double best_d = std::numeric_limits<double>::max();
      for (size_t j = 0; j < cls.vectors.size(); ++j) {
        if (!(cls.vectors[j].norm() > 0.0f)) continue;
        const double d = sq_dist(cls.vectors[j], km.centroids[i]);
        if (d < best_d || (d == best_d && best >= 0 && cls.sample_ids[j] < cls.sample_ids[best])) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      if (best < 0) {
        throw degenerate_support_error("extract_supports: class " + std::to_string(cls.class_id) +
                                       " has no non-zero evidence vector");
      }
      set.entries.push_back(SupportEntry{cls.vectors[best], cls.sample_ids[best], cls.class_id});
    }
  }
  return set;
}

SicModel::Prediction SicModel::predict(const Tensor& image6) const {
  if (supports.empty()) throw contract_error("SicModel: supports not extracted");
  for (const SupportEntry& e : supports.entries) {
    if (!(e.vector.norm() > 0.0f)) throw degenerate_support_error("predict: zero support vector");
  }
  Prediction p;
  Tensor f = net.forward(image6);
  p.latent = f.values();
  p.evidence_values = p.latent.cwiseMax(0.0f);
  std::vector<Tensor> vs = support_tensors();
  p.evidence_scores = head_evidence_scores(f, vs, head).values();
  p.logits = head_logits(f, vs, head).values();
  return p;
}

std::vector<Tensor> SicModel::support_tensors() const {
  std::vector<Tensor> vs;
  vs.reserve(supports.entries.size());
  for (const SupportEntry& e : supports.entries) {
    vs.push_back(make_tensor({static_cast<int>(e.vector.size())}, e.vector));
  }
  return vs;
}

}  // namespace sic
