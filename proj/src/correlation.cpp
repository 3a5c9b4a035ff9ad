#include "shiftkit/correlation.hpp"

#include <optional>

#include "shiftkit/error.hpp"
#include "shiftkit/stats.hpp"

namespace shiftkit {

ModalCorrelation modal_correlation(const ShiftSeries& v, const ShiftSeries& q, const ShiftSeries& joint) {
  if (v.size() != joint.size() || q.size() != joint.size()) {
    throw Error(Errc::LengthMismatch, "modal series lengths differ (" + std::to_string(v.size()) + ", " +
                                          std::to_string(q.size()) + ", " + std::to_string(joint.size()) + ")");
  }
  ModalCorrelation out;
  out.dataset_id = joint.dataset_id;
  out.n = joint.size();
  out.r_v_joint = pearson(v.scores, joint.scores);
  out.r_q_joint = pearson(q.scores, joint.scores);
  return out;
}

ModalCorrelationAverage average_modal_correlation(const std::vector<ModalCorrelation>& per_dataset) {
  if (per_dataset.empty()) throw Error(Errc::EmptyList, "no per-dataset correlations to average");
  ModalCorrelationAverage avg;
  for (const auto& c : per_dataset) {
    avg.r_v_joint += c.r_v_joint;
    avg.r_q_joint += c.r_q_joint;
  }
  avg.r_v_joint /= static_cast<double>(per_dataset.size());
  avg.r_q_joint /= static_cast<double>(per_dataset.size());
  return avg;
}

namespace {

Eigen::Index find_row(const ShiftHeatmap& heatmap, Modality modality, const std::string& method) {
  std::optional<Eigen::Index> found;
  for (std::size_t r = 0; r < heatmap.row_labels.size(); ++r) {
    const auto& tag = heatmap.row_labels[r];
    if (tag.modality != modality || tag.state_label() != method) continue;
    if (found) {
      throw Error(Errc::MissingRow, "heatmap has several " + std::string(to_string(modality)) +
                                        " rows for method '" + method + "'");
    }
    found = static_cast<Eigen::Index>(r);
  }
  if (!found) {
    throw Error(Errc::MissingRow,
                "heatmap has no " + std::string(to_string(modality)) + " row for method '" + method + "'");
  }
  return *found;
}

}  // namespace

ShiftPerformanceCorrelation shift_perf_correlation(const ShiftHeatmap& heatmap, const DatasetManifest& manifest,
                                                   const std::string& method) {
  const Eigen::Index rv = find_row(heatmap, Modality::V, method);
  const Eigen::Index rq = find_row(heatmap, Modality::Q, method);
  const Eigen::Index rj = find_row(heatmap, Modality::VQ, method);

  ShiftPerformanceCorrelation out;
  out.method = method;
  std::vector<double> acc, sv, sq, sj;
  for (std::size_t c = 0; c < heatmap.col_labels.size(); ++c) {
    const auto* entry = manifest.find(heatmap.col_labels[c]);
    if (!entry || !entry->published_accuracy || entry->role == DatasetRole::IdTrain) continue;
    const auto col = static_cast<Eigen::Index>(c);
    out.datasets_used.push_back(heatmap.col_labels[c]);
    acc.push_back(*entry->published_accuracy);
    sv.push_back(heatmap.values(rv, col));
    sq.push_back(heatmap.values(rq, col));
    sj.push_back(heatmap.values(rj, col));
  }
  if (acc.size() < kMinCorrelationDatasets) {
    throw Error(Errc::InsufficientDatasets, "only " + std::to_string(acc.size()) +
                                                " datasets carry both a shift score and a published accuracy");
  }
  out.r_v = pearson(sv, acc);
  out.r_q = pearson(sq, acc);
  out.r_joint = pearson(sj, acc);
  return out;
}

}  // namespace shiftkit
