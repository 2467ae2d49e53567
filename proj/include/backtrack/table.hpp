#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace backtrack {

// Column-major table of doubles with named columns. Used for factual data,
// fitting data and CSV interchange. Booleans are encoded as 0/1 reals.
struct ColumnTable {
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;

    ColumnTable() = default;
    explicit ColumnTable(std::vector<std::string> column_names) : names(std::move(column_names)) {
        cols.resize(names.size());
    }

    std::size_t rows() const { return cols.empty() ? 0 : cols.front().size(); }
    std::size_t width() const { return names.size(); }

    bool has(const std::string& name) const {
        for (const auto& n : names)
            if (n == name) return true;
        return false;
    }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw std::out_of_range("no column named '" + name + "'");
    }

    const std::vector<double>& col(const std::string& name) const { return cols[index_of(name)]; }
    std::vector<double>& col(const std::string& name) { return cols[index_of(name)]; }

    void add_col(std::string name, std::vector<double> values) {
        if (!cols.empty() && !cols.front().empty() && values.size() != rows())
            throw std::invalid_argument("column '" + name + "' has mismatched length");
        names.push_back(std::move(name));
        cols.push_back(std::move(values));
    }

    void reserve_rows(std::size_t n) {
        for (auto& c : cols) c.reserve(n);
    }
};

// Factual dataset: one row per individual, exogenous values recorded or
// abduced beside the observed endogenous values.
struct FactualTable {
    std::vector<std::int64_t> ids;
    ColumnTable u;  // exogenous columns
    ColumnTable v;  // endogenous columns

    std::size_t rows() const { return ids.size(); }
};

}  // namespace backtrack
