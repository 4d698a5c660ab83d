#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sic/head.hpp"

namespace sic {

/// Interleaved RGBA, values in [0,1], row-major pixels.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<Scalar> rgba;

  Scalar alpha(int y, int x) const { return rgba[(size_t(y) * width + x) * 4 + 3]; }
};

enum class RenderMode {
  Prediction,  // negative-contribution pixels become transparent
  Diagnostic,  // negatives stay visible (temperature debugging)
};

/// B-cos RGBA recipe: color-pair normalization to sum 1, alpha from the
/// 99.9th percentile of per-pixel weight norms, 9x9 mean smoothing with
/// replicate padding.
RgbaImage render_rgba(const Tensor& weights6, const Tensor& image6, RenderMode mode);

struct SupportExplanation {
  int class_id = 0;
  int support_index = 0;
  Tensor map;  // [H,W], signed
  RgbaImage render;
  double pixel_sum = 0.0;
  double support_norm = 0.0;
  double negative_ratio = 0.0;  // |negative mass| / positive mass
  bool negative_mass_flag = false;
};

struct Explanation {
  int target_class = 0;
  Scalar logit = 0.0f;
  Scalar bias = 0.0f;
  std::vector<Scalar> support_evidence;  // sim/T for the target class
  Tensor test_map;                       // [H,W], signed
  RgbaImage test_render;
  std::vector<SupportExplanation> support_explanations;  // when sources given
};

using SourceImageLookup = std::function<std::optional<Tensor>(int sample_id)>;

/// Frozen-scaling gradient row of the class logit through net + head:
/// W row of (mu_c - b) over the flattened input.
Vec model_logit_row(const SicModel& model, const Tensor& image6, int target_class);

/// Same route for one raw similarity unit sim(f+, v_i^c).
Vec model_similarity_row(const SicModel& model, const Tensor& image6, int class_id, int support_index);

/// Explicit-matrix route through net + head, [C x input]; the oracle for
/// implementation invariance at model level.
RowMat model_logit_matrix_explicit(const SicModel& model, const Tensor& image6);

/// Threefold local explanation: support evidence scores, test contribution
/// map, and (when source images resolve) the support self-explanations.
Explanation explain_prediction(const SicModel& model, const Tensor& image6, int target_class,
                               const SourceImageLookup& sources = nullptr);

/// Self-explanation of one support on its own source image; the pixel sum
/// recovers ||v|| and excessive negative mass flags a too-small temperature.
SupportExplanation explain_support(const SicModel& model, int class_id, int support_index,
                                   const Tensor& source_image);

struct AxiomResult {
  std::string name;
  bool pass = false;
  double max_deviation = 0.0;
  int probes = 0;
  std::vector<std::uint32_t> failing_seeds;
};

struct AuditReport {
  std::uint32_t seed = 0;
  std::vector<AxiomResult> axioms;

  bool all_pass() const;
};

/// Executable proofs of the six attribution axioms on randomized small
/// networks: completeness, sensitivity, implementation invariance, dummy,
/// linearity, symmetry.
AuditReport audit_axioms(std::uint32_t seed, int probes_per_axiom = 100);

struct HeatmapReport {
  Mat similarities;  // [M x M], rows index the vector treated as input
  bool silhouette_defined = false;
  double silhouette = 0.0;
};

/// Pairwise B-cos similarities of all supports plus the silhouette of the
/// class clustering (Euclidean); a single class leaves it undefined.
HeatmapReport similarity_heatmap(const SupportSet& supports, Scalar b_exponent);

/// Mean silhouette over points with label clusters; singleton clusters score 0.
double silhouette_score(const std::vector<Vec>& points, const std::vector<int>& labels);

/// Top-2 PCA of mean-centered latents, [n x 2]; rank-deficient directions are
/// zero-filled. Labels are carried by callers for plotting and only checked
/// for length here.
Mat project_latents(const std::vector<Vec>& latents, const std::vector<int>& labels);

}  // namespace sic
