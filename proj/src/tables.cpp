#include "shiftkit/tables.hpp"

#include <json.hpp>

#include "shiftkit/error.hpp"

namespace shiftkit {

CsvTable heatmap_to_table(const ShiftHeatmap& heatmap) {
  CsvRow header{"tag"};
  header.insert(header.end(), heatmap.col_labels.begin(), heatmap.col_labels.end());
  CsvTable t(std::move(header));
  for (std::size_t r = 0; r < heatmap.row_labels.size(); ++r) {
    CsvRow row{heatmap.row_labels[r].str()};
    for (std::size_t c = 0; c < heatmap.col_labels.size(); ++c) {
      row.push_back(format_double(heatmap.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))));
    }
    t.add_row(std::move(row));
  }
  return t;
}

ShiftHeatmap heatmap_from_table(const CsvTable& table) {
  if (table.header().empty() || table.header()[0] != "tag") {
    throw Error(Errc::BadCsv, "heatmap table must start with a 'tag' column");
  }
  ShiftHeatmap h;
  h.col_labels.assign(table.header().begin() + 1, table.header().end());
  const auto rows = static_cast<Eigen::Index>(table.rows().size());
  const auto cols = static_cast<Eigen::Index>(h.col_labels.size());
  h.values.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const CsvRow& row = table.rows()[static_cast<std::size_t>(r)];
    h.row_labels.push_back(ModalityTag::parse(row[0]));
    for (Eigen::Index c = 0; c < cols; ++c) h.values(r, c) = parse_double(row[static_cast<std::size_t>(c) + 1]);
  }
  return h;
}

ShiftHeatmap read_heatmap_csv(const std::filesystem::path& path) { return heatmap_from_table(read_csv(path)); }

std::string heatmap_to_json(const ShiftHeatmap& heatmap) {
  nlohmann::ordered_json doc;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& t : heatmap.row_labels) doc["rows"].push_back(t.str());
  doc["cols"] = heatmap.col_labels;
  doc["values"] = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < heatmap.values.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < heatmap.values.cols(); ++c) row.push_back(heatmap.values(r, c));
    doc["values"].push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

CsvTable histogram_to_table(const Histogram& h) {
  CsvTable t({"edge_lo", "edge_hi", "count"});
  if (h.edges.empty()) return t;
  t.add_row({"", format_double(h.edges.front()), std::to_string(h.underflow)});
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    t.add_row({format_double(h.edges[i]), format_double(h.edges[i + 1]), std::to_string(h.counts[i])});
  }
  t.add_row({format_double(h.edges.back()), "", std::to_string(h.overflow)});
  return t;
}

Histogram histogram_from_table(const CsvTable& table) {
  const auto lo = table.column("edge_lo");
  const auto hi = table.column("edge_hi");
  const auto count = table.column("count");
  Histogram h;
  for (const auto& row : table.rows()) {
    const auto n = static_cast<std::uint64_t>(parse_double(row[count]));
    if (row[lo].empty()) {
      h.underflow = n;
      h.edges.push_back(parse_double(row[hi]));
    } else if (row[hi].empty()) {
      h.overflow = n;
    } else {
      h.counts.push_back(n);
      h.edges.push_back(parse_double(row[hi]));
    }
  }
  return h;
}

CsvTable benchmark_to_table(const BenchmarkTable& table) {
  CsvRow header{"method", "id_acc"};
  for (const auto& n : table.ood_names) header.push_back(n);
  header.push_back("ood_avg");
  header.push_back("error");
  CsvTable t(std::move(header));
  for (const auto& row : table.rows) {
    CsvRow out{std::string(to_string(row.config.method))};
    if (row.result) {
      out.push_back(format_double(row.result->id_acc));
      for (double a : row.result->ood_acc) out.push_back(format_double(a));
      out.push_back(format_double(row.ood_average()));
    } else {
      out.insert(out.end(), table.ood_names.size() + 2, std::string());
    }
    out.push_back(row.error);
    t.add_row(std::move(out));
  }
  return t;
}

CsvTable gamma_history_to_table(const BenchmarkTable& table) {
  CsvTable t({"method", "layer", "epoch", "gamma", "deviation"});
  for (const auto& row : table.rows) {
    if (!row.result) continue;
    const auto& r = *row.result;
    for (std::size_t l = 0; l < r.gamma_history.size(); ++l) {
      for (std::size_t e = 0; e < r.gamma_history[l].size(); ++e) {
        t.add_row({std::string(to_string(row.config.method)), r.model.layers[l].name, std::to_string(e),
                   format_double(r.gamma_history[l][e]), format_double(r.deviation_history[l][e])});
      }
    }
  }
  return t;
}

}  // namespace shiftkit
