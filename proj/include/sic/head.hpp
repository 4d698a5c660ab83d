#pragma once

#include <random>
#include <vector>

#include "sic/bcos.hpp"
#include "sic/ops.hpp"
#include "sic/tensor.hpp"

namespace sic {

/// Non-negative latent vector (ReLU-rectified network output).
struct EvidenceVector {
  Vec values;
};

/// ReLU gate into evidence space; absent features become exact zeros.
EvidenceVector evidence(const Vec& latent);

/// B-cos similarity with the support vector as the (internally normalized)
/// weight. Non-negative whenever both operands are. A zero support vector is
/// a degenerate-support error.
Scalar similarity(const EvidenceVector& f_plus, const EvidenceVector& support, Scalar b_exponent);

struct SupportEntry {
  Vec vector;        // evidence vector of the source training sample
  int source_index;  // training-sample id
  int class_id;
};

/// Fixed entries[c * n_support + i] layout, classes contiguous.
struct SupportSet {
  int num_classes = 0;
  int n_support = 0;
  std::vector<SupportEntry> entries;

  bool empty() const { return entries.empty(); }
  const SupportEntry& at(int class_id, int i) const;
};

struct HeadConfig {
  Scalar temperature = 30.0f;
  Scalar bias = 0.0f;
  int n_support = 3;
  int num_classes = 0;
  Scalar b_exponent = 2.0f;

  void validate() const;
};

/// mu_c = bias + sum_i sim(f+, v_i^c) / T, built from tape ops so the same
/// arithmetic serves eager inference and on-tape training. support_vectors
/// are ordered class-major, n_support per class. Returns [C].
Tensor head_logits(const Tensor& f_latent, const std::vector<Tensor>& support_vectors,
                   const HeadConfig& cfg);

/// Temperature-scaled per-support similarities sim/T, [C * n_support].
Tensor head_evidence_scores(const Tensor& f_latent, const std::vector<Tensor>& support_vectors,
                            const HeadConfig& cfg);

/// Per-class latent vectors with sample provenance.
struct ClassLatents {
  int class_id = 0;
  std::vector<int> sample_ids;
  std::vector<Vec> vectors;
};

Vec logits(const EvidenceVector& f_plus, const SupportSet& supports, const HeadConfig& cfg);

/// Uniform without-replacement selection of n_support vectors per class.
SupportSet sample_supports(const std::vector<ClassLatents>& latents, int n_support, std::mt19937& rng);

struct KMeansResult {
  std::vector<Vec> centroids;
  std::vector<int> assignment;
  double sse = 0.0;
};

/// Lloyd's iterations to an assignment fixpoint (max 100 sweeps). Seeding is
/// k-means++ with restarts; tiny instances enumerate every k-subset init so
/// the solution matches exhaustive partition search. Empty clusters are
/// reseeded from the farthest point.
KMeansResult kmeans(const std::vector<Vec>& points, int k, std::mt19937& rng);

/// Per class: k-means centroids snapped to the nearest same-class latent
/// (ties to the lowest sample index; all-zero vectors are skipped).
SupportSet extract_supports(const std::vector<ClassLatents>& latents, int n_support, std::mt19937& rng);

/// Frozen classifier: B-cos feature extractor + evidence head + supports.
struct SicModel {
  BCosNetwork net;
  HeadConfig head;
  SupportSet supports;

  struct Prediction {
    Vec latent;
    Vec evidence_values;
    Vec evidence_scores;  // sim/T per support, class-major
    Vec logits;
  };

  Prediction predict(const Tensor& image6) const;
  std::vector<Tensor> support_tensors() const;
};

}  // namespace sic
