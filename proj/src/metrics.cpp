#include "mdeh/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdeh {

MetricReport depth_metrics(const Tensor& estimated, const Tensor& reference,
                           const Tensor& mask) {
  require_same_shape(estimated, reference, "depth_metrics");
  require_same_shape(estimated, mask, "depth_metrics(mask)");
  double abse = 0, sq = 0, absr = 0, sqr = 0;
  std::int64_t n = 0, within = 0;
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] == 0.0f) continue;
    const double x = estimated[i], y = reference[i];
    if (!(y > 0) || !std::isfinite(y))
      throw std::invalid_argument("depth_metrics: reference must be positive on the mask");
    if (!(x > 0) || !std::isfinite(x))
      throw std::invalid_argument("depth_metrics: estimate must be positive on the mask");
    const double d = x - y;
    abse += std::fabs(d);
    sq += d * d;
    absr += std::fabs(d) / y;
    sqr += d * d / y;
    if (std::max(x / y, y / x) < 1.25) ++within;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_metrics: empty mask");
  MetricReport r;
  r.abse = abse / static_cast<double>(n);
  r.rmse = std::sqrt(sq / static_cast<double>(n));
  r.absr = absr / static_cast<double>(n);
  r.sqr = sqr / static_cast<double>(n);
  r.delta = static_cast<double>(within) / static_cast<double>(n);
  r.sample_count = 1;
  r.pixel_count = n;
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  MetricReport out;
  for (const auto& r : reports) {
    out.abse += r.abse;
    out.rmse += r.rmse;
    out.absr += r.absr;
    out.sqr += r.sqr;
    out.delta += r.delta;
    out.pixel_count += r.pixel_count;
  }
  const double n = static_cast<double>(reports.size());
  out.abse /= n;
  out.rmse /= n;
  out.absr /= n;
  out.sqr /= n;
  out.delta /= n;
  out.sample_count = static_cast<std::int64_t>(reports.size());
  return out;
}

void EvalProtocol::validate() const {
  if (scene_count < 1) throw std::invalid_argument("eval protocol: scene count must be >= 1");
  placements.validate();
}

Tensor depth_infer(DepthNet& model, const Tensor& image_chw) {
  Tape tape;
  Var img = tape.constant(nchw(image_chw));
  Var depth = depth_forward(tape, model, img, nullptr);
  return Tensor({image_chw.dim(1), image_chw.dim(2)},
                std::vector<float>(tape.value(depth).values().begin(),
                                   tape.value(depth).values().end()));
}

MetricReport evaluate_object(DepthNet& model, const ObjectAsset& asset,
                             const Tensor& adversarial_image,
                             const std::vector<const SceneSample*>& scenes,
                             const EvalProtocol& protocol) {
  protocol.validate();
  if (scenes.empty()) throw std::invalid_argument("evaluate_object: no scenes");
  SynthesisOptions opts;
  opts.lighting_match = protocol.lighting_match;
  std::vector<MetricReport> per_sample;
  for (int i = 0; i < protocol.scene_count; ++i) {
    const SceneSample& scene = *scenes[static_cast<size_t>(i) % scenes.size()];
    const BoardPlacement placement =
        sample_placement(protocol.placements, asset, static_cast<std::uint64_t>(i));
    SynthesizedViews views;
    try {
      views = synthesize_pair(asset, scene, placement, &adversarial_image, opts);
    } catch (const std::runtime_error&) {
      continue;  // empty projection: unusable sample
    }
    const Tensor ref = depth_infer(model, views.it);
    const Tensor est = depth_infer(model, views.it_adv);
    per_sample.push_back(depth_metrics(est, ref, views.object_mask));
  }
  if (per_sample.empty()) throw std::runtime_error("evaluate_object: zero usable samples");
  return average_reports(per_sample);
}

MetricReport evaluate_attack(DepthNet& model, const ObjectAsset& asset,
                             const AttackConfig& attack,
                             const std::vector<const SceneSample*>& scenes,
                             const EvalProtocol& protocol) {
  const AdversarialObject adv = gen_attack(model, asset, scenes, attack);
  return evaluate_object(model, asset, adv.image, scenes, protocol);
}

MetricReport benign_eval(DepthNet& model, const std::vector<const SceneSample*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("benign_eval: no scenes");
  std::vector<MetricReport> per_sample;
  for (const SceneSample* s : scenes) {
    if (!s->has_depth()) throw std::invalid_argument("benign_eval: scene lacks ground truth");
    const Tensor est = depth_infer(model, s->it);
    Tensor mask({s->depth_gt.dim(0), s->depth_gt.dim(1)});
    for (std::int64_t i = 0; i < mask.numel(); ++i)
      mask[i] = (s->depth_gt[i] > 0 && std::isfinite(s->depth_gt[i])) ? 1.0f : 0.0f;
    per_sample.push_back(depth_metrics(est, s->depth_gt, mask));
  }
  return average_reports(per_sample);
}

TransferMatrix transfer_matrix(std::vector<DepthNet*> models,
                               const std::vector<std::string>& names,
                               const ObjectAsset& asset, const AttackConfig& attack,
                               const std::vector<const SceneSample*>& scenes,
                               const EvalProtocol& protocol) {
  if (models.size() < 2)
    throw std::invalid_argument("transfer_matrix: need at least 2 models");
  if (names.size() != models.size())
    throw std::invalid_argument("transfer_matrix: name count mismatch");
  TransferMatrix m;
  m.model_names = names;
  m.cells.assign(models.size(), std::vector<MetricReport>(models.size()));
  m.filled.assign(models.size(), std::vector<bool>(models.size(), false));
  for (size_t src = 0; src < models.size(); ++src) {
    const AdversarialObject adv = gen_attack(*models[src], asset, scenes, attack);
    for (size_t dst = 0; dst < models.size(); ++dst) {
      if (dst == src) continue;  // diagonal stays empty
      m.cells[src][dst] = evaluate_object(*models[dst], asset, adv.image, scenes, protocol);
      m.filled[src][dst] = true;
    }
  }
  return m;
}

std::string report_csv_header() {
  return "label,abse,rmse,absr,sqr,delta,samples,pixels";
}

std::string report_csv_row(const std::string& label, const MetricReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << label << "," << r.abse << "," << r.rmse << "," << r.absr << "," << r.sqr << ","
     << r.delta << "," << r.sample_count << "," << r.pixel_count;
  return os.str();
}

void write_transfer_csv(const std::string& path, const TransferMatrix& m) {
  std::ostringstream os;
  os.precision(9);
  os << "source\\target";
  for (const auto& n : m.model_names) os << "," << n << "_abse," << n << "_delta";
  os << "\n";
  for (size_t i = 0; i < m.model_names.size(); ++i) {
    os << m.model_names[i];
    for (size_t j = 0; j < m.model_names.size(); ++j) {
      if (!m.filled[i][j]) {
        os << ",,";
      } else {
        os << "," << m.cells[i][j].abse << "," << m.cells[i][j].delta;
      }
    }
    os << "\n";
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("write_transfer_csv: cannot open " + tmp);
    f << os.str();
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mdeh
