#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cgm/codec.hpp"

#include "json.hpp"

namespace cgm {

// Column-typed table with a presence mask. Numerical columns store parsed
// doubles; categorical columns keep the raw strings.
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::categorical;
    std::vector<double> nums;
    std::vector<std::string> cats;
    std::vector<std::uint8_t> present;

    Value value(std::size_t row) const;
};

struct TableDataset {
    std::vector<Column> columns;
    std::size_t row_count = 0;

    int column_index(const std::string& name) const;  // -1 when absent
    TableDataset take_rows(const std::vector<std::size_t>& rows) const;
    void append_row(const std::vector<std::optional<Value>>& values);
    static TableDataset like(const TableDataset& other);  // same header, zero rows
};

struct CsvOptions {
    std::vector<std::string> missing_markers = {"", "NA"};
    // {column: {"kind": "categorical"|"numerical", "bins": int}}
    nlohmann::json schema_hints = nlohmann::json::object();
};

TableDataset load_csv(const std::string& path, const CsvOptions& options = {});
TableDataset parse_csv(const std::string& text, const CsvOptions& options = {});
void write_csv(const TableDataset& ds, const std::string& path);
std::string to_csv(const TableDataset& ds);
std::string format_double(double v);  // round-trip precision

struct SplitSpec {
    double test_fraction = 0.25;
    std::uint64_t seed = 0;
    std::optional<std::string> stratify_column;
};

// Disjoint, exhaustive, seed-deterministic split.
std::pair<TableDataset, TableDataset> split(const TableDataset& ds, const SplitSpec& spec);

// Fits one schema per column on `ds` (the train split). `bins` applies to
// numerical columns unless overridden by a hint.
std::vector<FeatureSchema> fit_schemas(const TableDataset& ds, int bins = kDefaultBins,
                                       const nlohmann::json& hints = nlohmann::json::object());

// Rows as per-feature class indices; -1 marks a missing cell.
struct EncodedTable {
    std::vector<std::vector<std::int32_t>> classes;  // [column][row]
    std::size_t row_count = 0;
    std::size_t column_count = 0;
};

EncodedTable encode_table(const TableDataset& ds, const std::vector<const FeatureCodec*>& codecs);

// One training example: the example's present features in permuted order with
// their target classes. Prefix subsampling marks query-only features that
// contribute no key to the sequence.
struct PermutedExample {
    std::size_t row = 0;
    std::vector<int> features;           // feature ids, permuted order
    std::vector<std::int32_t> targets;   // aligned class indices
    std::vector<std::uint8_t> is_input;  // aligned; 0 = dropped from the input sequence
    int input_len = 0;                   // number of is_input == 1 entries
};

// Shuffles rows each epoch (seeded), draws a fresh feature permutation per
// example, groups batches by present-feature count. Every row with at least
// one present feature appears exactly once per epoch.
std::vector<std::vector<PermutedExample>> batches(const EncodedTable& table, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch,
                                                  double subsample_p = 0.0);

}  // namespace cgm
