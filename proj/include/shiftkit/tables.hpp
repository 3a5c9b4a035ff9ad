#pragma once

#include <string>

#include "shiftkit/report.hpp"
#include "shiftkit/shift_metrics.hpp"
#include "shiftkit/stats.hpp"
#include "shiftkit/toy_trainer.hpp"

namespace shiftkit {

/// First column "tag", then one column per dataset.
CsvTable heatmap_to_table(const ShiftHeatmap& heatmap);
/// Inverse of heatmap_to_table. Throws BadCsv or BadTag.
ShiftHeatmap heatmap_from_table(const CsvTable& table);
ShiftHeatmap read_heatmap_csv(const std::filesystem::path& path);
/// {"rows": [...], "cols": [...], "values": [[...]]}.
std::string heatmap_to_json(const ShiftHeatmap& heatmap);

/// edge_lo,edge_hi,count; underflow has an empty edge_lo and overflow an
/// empty edge_hi.
CsvTable histogram_to_table(const Histogram& h);
Histogram histogram_from_table(const CsvTable& table);

/// method,id_acc,<one column per OOD split>,ood_avg,error.
CsvTable benchmark_to_table(const BenchmarkTable& table);
/// method,layer,epoch,gamma,deviation.
CsvTable gamma_history_to_table(const BenchmarkTable& table);

}  // namespace shiftkit
