#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdeh/attacks.hpp"
#include "mdeh/models.hpp"
#include "mdeh/scene.hpp"
#include "mdeh/synthesis.hpp"

namespace mdeh {

/// The five depth metrics over a masked region, plus the sample/pixel counts
/// they aggregate.
struct MetricReport {
  double abse = 0, rmse = 0, absr = 0, sqr = 0, delta = 0;
  std::int64_t sample_count = 0;
  std::int64_t pixel_count = 0;
};

/// ABSE/RMSE/ABSR/SQR and the delta threshold metric over mask pixels.
/// Throws on empty masks or non-positive reference values.
MetricReport depth_metrics(const Tensor& estimated, const Tensor& reference,
                           const Tensor& mask);

/// Unweighted mean of per-sample reports (the delta fraction averages too).
MetricReport average_reports(const std::vector<MetricReport>& reports);

struct EvalProtocol {
  int scene_count = 100;
  PlacementSampler placements{5.0, 30.0, 30.0, 0};
  std::uint64_t seed = 0;
  bool lighting_match = true;
  void validate() const;
};

/// Single-image depth inference (no gradients), (C,H,W) -> (H,W) meters.
Tensor depth_infer(DepthNet& model, const Tensor& image_chw);

/// Applies a prebuilt adversarial object across protocol samples: the
/// reference is the model's own depth on the benign composite, compared on the
/// object mask against its depth on the adversarial composite.
MetricReport evaluate_object(DepthNet& model, const ObjectAsset& asset,
                             const Tensor& adversarial_image,
                             const std::vector<const SceneSample*>& scenes,
                             const EvalProtocol& protocol);

/// Generates the attack under `attack` and evaluates it under `protocol`.
MetricReport evaluate_attack(DepthNet& model, const ObjectAsset& asset,
                             const AttackConfig& attack,
                             const std::vector<const SceneSample*>& scenes,
                             const EvalProtocol& protocol);

/// Model depth against ground truth over full images (invalid pixels masked).
MetricReport benign_eval(DepthNet& model, const std::vector<const SceneSample*>& scenes);

/// Black-box transfer: attack generated against each source model, evaluated
/// on every other model. The diagonal stays empty.
struct TransferMatrix {
  std::vector<std::string> model_names;
  std::vector<std::vector<MetricReport>> cells;  // [source][target]
  std::vector<std::vector<bool>> filled;
};
TransferMatrix transfer_matrix(std::vector<DepthNet*> models,
                               const std::vector<std::string>& names,
                               const ObjectAsset& asset, const AttackConfig& attack,
                               const std::vector<const SceneSample*>& scenes,
                               const EvalProtocol& protocol);

std::string report_csv_header();
std::string report_csv_row(const std::string& label, const MetricReport& r);
void write_transfer_csv(const std::string& path, const TransferMatrix& m);

}  // namespace mdeh
