#include "mtlmm/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mtlmm/errors.hpp"

namespace mtlmm {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("failed to format a double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || s.empty()) {
        throw ValidationError("not a number: '" + s + "'");
    }
    return v;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

int Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

Table read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    Table table;
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    table.header = split_line(line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != table.header.size()) {
            throw ValidationError("'" + path + "' row " +
                                  std::to_string(table.rows.size() + 1) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(table.header.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    return table;
}

void write_csv(const std::string& path, const Table& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
    if (!out) throw IoError("write to '" + path + "' failed");
}

void write_matrix_csv(const std::string& path, const LabeledMatrix& m) {
    if (static_cast<Eigen::Index>(m.col_names.size()) != m.values.cols() ||
        static_cast<Eigen::Index>(m.row_labels.size()) != m.values.rows()) {
        throw ShapeError("labeled matrix names do not match its shape");
    }
    Table t;
    t.header.push_back(m.label_header);
    t.header.insert(t.header.end(), m.col_names.begin(), m.col_names.end());
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        std::vector<std::string> row;
        row.push_back(m.row_labels[i]);
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            row.push_back(format_double(m.values(i, j)));
        }
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

LabeledMatrix read_matrix_csv(const std::string& path) {
    const Table t = read_csv(path);
    if (t.header.empty()) throw ValidationError("'" + path + "' has no columns");
    LabeledMatrix m;
    m.label_header = t.header.front();
    m.col_names.assign(t.header.begin() + 1, t.header.end());
    m.values.resize(static_cast<Eigen::Index>(t.rows.size()),
                    static_cast<Eigen::Index>(m.col_names.size()));
    m.row_labels.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        m.row_labels.push_back(t.rows[i][0]);
        for (std::size_t j = 1; j < t.rows[i].size(); ++j) {
            try {
                m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) =
                    parse_double(t.rows[i][j]);
            } catch (const ValidationError&) {
                throw ValidationError("'" + path + "' row " + std::to_string(i + 1) +
                                      ", column '" + t.header[j] + "': not a number");
            }
        }
    }
    return m;
}

Dataset read_dataset_csv(const std::string& path, const DatasetSchema& schema,
                         const std::set<int>* keep_rows) {
    const Table t = read_csv(path);
    const int group_col = t.column(schema.group_column);
    if (group_col < 0) {
        throw ValidationError("'" + path + "': missing group column '" +
                              schema.group_column + "'");
    }
    if (schema.response_columns.empty()) {
        throw ValidationError("dataset schema designates no response columns");
    }
    std::vector<int> resp_cols;
    for (const auto& name : schema.response_columns) {
        const int c = t.column(name);
        if (c < 0) throw ValidationError("'" + path + "': missing response column '" + name + "'");
        resp_cols.push_back(c);
    }
    std::vector<int> re_cols;
    for (const auto& name : schema.random_effect_columns) {
        const int c = t.column(name);
        if (c < 0) {
            throw ValidationError("'" + path + "': missing random-effect column '" + name + "'");
        }
        re_cols.push_back(c);
    }
    std::set<int> designated(resp_cols.begin(), resp_cols.end());
    designated.insert(re_cols.begin(), re_cols.end());
    designated.insert(group_col);

    Dataset ds;
    ds.response_names = schema.response_columns;
    ds.predictor_names.push_back("(Intercept)");
    std::vector<int> pred_cols;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (!designated.count(static_cast<int>(c))) {
            pred_cols.push_back(static_cast<int>(c));
            ds.predictor_names.push_back(t.header[c]);
        }
    }

    auto cell_number = [&](std::size_t row, int col) {
        const std::string& s = t.rows[row][col];
        double v;
        try {
            v = parse_double(s);
        } catch (const ValidationError&) {
            throw ValidationError("'" + path + "' row " + std::to_string(row + 1) +
                                  ", column '" + t.header[col] + "': not a number");
        }
        if (!std::isfinite(v)) {
            throw ValidationError("'" + path + "' row " + std::to_string(row + 1) +
                                  ", column '" + t.header[col] + "': non-finite value");
        }
        return v;
    };

    // Groups in order of first appearance; rows keep file order within groups.
    std::vector<std::string> group_order;
    std::map<std::string, std::vector<int>> rows_of_group;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        if (keep_rows && !keep_rows->count(static_cast<int>(i))) continue;
        const std::string& label = t.rows[i][group_col];
        if (label.empty()) {
            throw ValidationError("'" + path + "' row " + std::to_string(i + 1) +
                                  ": empty group label");
        }
        auto [it, inserted] = rows_of_group.try_emplace(label);
        if (inserted) group_order.push_back(label);
        it->second.push_back(static_cast<int>(i));
    }
    if (group_order.empty()) throw ValidationError("'" + path + "' has no data rows");
    for (const auto& label : group_order) {
        if (rows_of_group[label].size() < 2) {
            throw ValidationError("group '" + label + "' has fewer than 2 rows");
        }
    }

    const int p = static_cast<int>(pred_cols.size()) + 1;
    const int r = static_cast<int>(resp_cols.size());
    const int q = re_cols.empty() ? 1 : static_cast<int>(re_cols.size());

    ds.stacked_of_file_row.assign(t.rows.size(), -1);
    ds.group_of_file_row.resize(t.rows.size());
    std::vector<GroupBlock> blocks;
    int stacked = 0;
    for (const auto& label : group_order) {
        const auto& file_rows = rows_of_group[label];
        GroupBlock b;
        b.label = label;
        const Eigen::Index m = static_cast<Eigen::Index>(file_rows.size());
        b.X.resize(m, p);
        b.Z.resize(m, q);
        b.Y.resize(m, r);
        for (Eigen::Index i = 0; i < m; ++i) {
            const int row = file_rows[i];
            ds.stacked_of_file_row[row] = stacked++;
            ds.group_of_file_row[row] = label;
            b.X(i, 0) = 1.0;
            for (std::size_t c = 0; c < pred_cols.size(); ++c) {
                b.X(i, static_cast<Eigen::Index>(c + 1)) = cell_number(row, pred_cols[c]);
            }
            if (re_cols.empty()) {
                b.Z(i, 0) = 1.0;
            } else {
                for (std::size_t c = 0; c < re_cols.size(); ++c) {
                    b.Z(i, static_cast<Eigen::Index>(c)) = cell_number(row, re_cols[c]);
                }
            }
            for (std::size_t c = 0; c < resp_cols.size(); ++c) {
                b.Y(i, static_cast<Eigen::Index>(c)) = cell_number(row, resp_cols[c]);
            }
        }
        blocks.push_back(std::move(b));
    }
    ds.grouped = GroupedDataset::from_blocks(std::move(blocks));

    ds.predictor_scale = Eigen::VectorXd::Ones(p);
    if (schema.standardize && p > 1) {
        const Eigen::MatrixXd x = ds.grouped.stacked_X();
        const double n = static_cast<double>(x.rows());
        for (int c = 1; c < p; ++c) {
            const double mean = x.col(c).mean();
            const double sd = std::sqrt((x.col(c).array() - mean).square().sum() /
                                        std::max(n - 1.0, 1.0));
            if (sd <= 0.0) {
                throw ValidationError("cannot standardize constant predictor '" +
                                      ds.predictor_names[c] + "'");
            }
            ds.predictor_scale[c] = sd;
            for (auto& g : ds.grouped.groups) g.X.col(c) /= sd;
        }
    }
    return ds;
}

void write_dataset_csv(const std::string& path, const GroupedDataset& data,
                       const std::vector<std::string>& response_names,
                       const std::vector<std::string>& predictor_names) {
    if (static_cast<int>(response_names.size()) != data.dims.r) {
        throw ShapeError("response name count does not match r");
    }
    if (static_cast<int>(predictor_names.size()) != data.dims.p) {
        throw ShapeError("predictor name count does not match p (intercept included)");
    }
    Table t;
    t.header.push_back("group");
    t.header.insert(t.header.end(), response_names.begin(), response_names.end());
    t.header.insert(t.header.end(), predictor_names.begin() + 1, predictor_names.end());
    for (const auto& g : data.groups) {
        for (Eigen::Index i = 0; i < g.X.rows(); ++i) {
            std::vector<std::string> row;
            row.push_back(g.label);
            for (Eigen::Index c = 0; c < g.Y.cols(); ++c) {
                row.push_back(format_double(g.Y(i, c)));
            }
            for (Eigen::Index c = 1; c < g.X.cols(); ++c) {
                row.push_back(format_double(g.X(i, c)));
            }
            t.rows.push_back(std::move(row));
        }
    }
    write_csv(path, t);
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    RunConfig cfg;
    cfg.path = path;
    try {
        in >> cfg.root;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!cfg.root.is_object()) {
        throw ValidationError("config '" + path + "' must be a JSON object");
    }
    return cfg;
}

const nlohmann::json* RunConfig::section(const std::string& name) const {
    auto it = root.find(name);
    return it == root.end() ? nullptr : &*it;
}

std::uint64_t RunConfig::hash() const {
    return fnv1a64(root.dump());
}

void require_keys(const nlohmann::json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) {
        throw ValidationError("config section '" + where + "' must be an object");
    }
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            throw ValidationError("config section '" + where + "': unknown key '" + key + "'");
        }
    }
}

}  // namespace mtlmm
