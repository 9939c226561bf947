#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlmm/types.hpp"

namespace mtlmm {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

/// Strict full-token parse; throws ValidationError on failure.
double parse_double(const std::string& s);

std::uint64_t fnv1a64(const std::string& s);

/// Plain CSV table: header plus string cells. No quoting or embedded commas;
/// the interchange files this project emits never need them.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 when missing
};

Table read_csv(const std::string& path);
void write_csv(const std::string& path, const Table& table);

/// Matrix file with one leading label column, then named numeric columns.
struct LabeledMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> col_names;
    std::vector<std::string> row_labels;
    std::string label_header = "row";
};

void write_matrix_csv(const std::string& path, const LabeledMatrix& m);
LabeledMatrix read_matrix_csv(const std::string& path);

/// Designation of dataset columns: one group column, r response columns,
/// optional random-effect design columns (default: a synthesized all-ones
/// column). Every remaining column is a fixed-effect predictor; the
/// intercept is synthesized as fixed-effect column 1.
struct DatasetSchema {
    std::string group_column = "group";
    std::vector<std::string> response_columns;
    std::vector<std::string> random_effect_columns;
    bool standardize = false;  // scale predictor columns to unit sample sd
};

struct Dataset {
    GroupedDataset grouped;
    std::vector<std::string> predictor_names;  // "(Intercept)" first
    std::vector<std::string> response_names;
    std::vector<int> stacked_of_file_row;      // file data-row -> stacked row
    std::vector<std::string> group_of_file_row;
    Eigen::VectorXd predictor_scale;           // divisors applied per X column
};

/// Reads a delimited dataset; `keep_rows` (file data-row indices) restricts
/// to a split. Schema violations name the offending row and column.
Dataset read_dataset_csv(const std::string& path, const DatasetSchema& schema,
                         const std::set<int>* keep_rows = nullptr);

void write_dataset_csv(const std::string& path, const GroupedDataset& data,
                       const std::vector<std::string>& response_names,
                       const std::vector<std::string>& predictor_names);

/// Validated run configuration: a nested JSON document in which unknown
/// keys are rejected section by section.
struct RunConfig {
    nlohmann::json root;
    std::string path;

    static RunConfig load(const std::string& path);

    const nlohmann::json* section(const std::string& name) const;
    std::uint64_t hash() const;
};

/// Throws ValidationError when `obj` holds a key outside `allowed`.
void require_keys(const nlohmann::json& obj, const std::string& where,
                  const std::set<std::string>& allowed);

}  // namespace mtlmm
