#include "cgm/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cgm/rng.hpp"

namespace cgm {

Value Column::value(std::size_t row) const {
    if (!present[row]) throw ContractError("column '" + name + "': value() on missing cell");
    if (kind == ColumnKind::numerical) return nums[row];
    return cats[row];
}

int TableDataset::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

TableDataset TableDataset::like(const TableDataset& other) {
    TableDataset ds;
    for (const Column& c : other.columns) {
        Column col;
        col.name = c.name;
        col.kind = c.kind;
        ds.columns.push_back(std::move(col));
    }
    return ds;
}

TableDataset TableDataset::take_rows(const std::vector<std::size_t>& rows) const {
    TableDataset out = like(*this);
    out.row_count = rows.size();
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const Column& src = columns[c];
        Column& dst = out.columns[c];
        dst.present.reserve(rows.size());
        for (std::size_t r : rows) {
            dst.present.push_back(src.present[r]);
            if (src.kind == ColumnKind::numerical) {
                dst.nums.push_back(src.nums[r]);
            } else {
                dst.cats.push_back(src.cats[r]);
            }
        }
    }
    return out;
}

void TableDataset::append_row(const std::vector<std::optional<Value>>& values) {
    if (values.size() != columns.size()) throw ContractError("append_row: wrong cell count");
    for (std::size_t c = 0; c < columns.size(); ++c) {
        Column& col = columns[c];
        col.present.push_back(values[c].has_value() ? 1 : 0);
        if (col.kind == ColumnKind::numerical) {
            col.nums.push_back(values[c] ? std::get<double>(*values[c]) : 0.0);
        } else {
            col.cats.push_back(values[c] ? std::get<std::string>(*values[c]) : std::string());
        }
    }
    row_count += 1;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

// RFC-4180 field splitter; returns records of raw cells, tracking the line
// number each record started on for error messages.
struct CsvRecord {
    std::vector<std::string> cells;
    std::size_t line = 0;
};

std::vector<CsvRecord> tokenize_csv(const std::string& text) {
    std::vector<CsvRecord> records;
    CsvRecord current;
    std::string cell;
    std::size_t line = 1;
    current.line = 1;
    bool quoted = false;
    bool cell_started = false;

    auto end_cell = [&]() {
        current.cells.push_back(std::move(cell));
        cell.clear();
        cell_started = false;
    };
    auto end_record = [&]() {
        end_cell();
        if (!(current.cells.size() == 1 && current.cells[0].empty())) {
            records.push_back(std::move(current));
        }
        current = CsvRecord{};
        current.line = line;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                cell.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                if (!cell_started && cell.empty()) {
                    quoted = true;
                    cell_started = true;
                } else {
                    cell.push_back(ch);
                }
                break;
            case ',':
                end_cell();
                break;
            case '\r':
                break;
            case '\n':
                ++line;
                end_record();
                break;
            default:
                cell_started = true;
                cell.push_back(ch);
        }
    }
    if (quoted) throw DataError("csv: unterminated quote at end of input");
    if (cell_started || !cell.empty() || !current.cells.empty()) end_record();
    return records;
}

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

bool is_missing(const std::string& cell, const std::vector<std::string>& markers) {
    return std::find(markers.begin(), markers.end(), cell) != markers.end();
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw NumericError("format_double failed");
    return std::string(buf, ptr);
}

TableDataset parse_csv(const std::string& text, const CsvOptions& options) {
    std::vector<CsvRecord> records = tokenize_csv(text);
    if (records.empty()) throw DataError("csv: no header row");

    const std::vector<std::string>& header = records[0].cells;
    std::unordered_set<std::string> names;
    for (const std::string& h : header) {
        if (!names.insert(h).second) {
            throw DataError("csv: duplicate header '" + h + "' on line " + std::to_string(records[0].line));
        }
    }

    const std::size_t width = header.size();
    std::vector<std::vector<std::string>> cells(width);
    std::vector<std::vector<std::uint8_t>> present(width);
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].cells.size() != width) {
            throw DataError("csv: row on line " + std::to_string(records[r].line) + " has " +
                            std::to_string(records[r].cells.size()) + " cells, expected " +
                            std::to_string(width));
        }
        for (std::size_t c = 0; c < width; ++c) {
            const std::string& cell = records[r].cells[c];
            const bool missing = is_missing(cell, options.missing_markers);
            present[c].push_back(missing ? 0 : 1);
            cells[c].push_back(missing ? std::string() : cell);
        }
    }

    TableDataset ds;
    ds.row_count = records.size() - 1;
    for (std::size_t c = 0; c < width; ++c) {
        Column col;
        col.name = header[c];
        col.present = std::move(present[c]);

        std::optional<ColumnKind> hinted;
        if (options.schema_hints.contains(col.name)) {
            const std::string kind = options.schema_hints.at(col.name).value("kind", "");
            if (kind == "categorical") hinted = ColumnKind::categorical;
            else if (kind == "numerical") hinted = ColumnKind::numerical;
            else if (!kind.empty()) throw DataError("schema hint for '" + col.name + "': unknown kind '" + kind + "'");
        }

        bool all_numeric = true;
        std::vector<double> nums(cells[c].size(), 0.0);
        for (std::size_t r = 0; r < cells[c].size(); ++r) {
            if (!col.present[r]) continue;
            if (!parse_double(cells[c][r], nums[r])) {
                all_numeric = false;
                break;
            }
        }
        col.kind = hinted.value_or(all_numeric ? ColumnKind::numerical : ColumnKind::categorical);
        if (col.kind == ColumnKind::numerical) {
            if (!all_numeric) {
                for (std::size_t r = 0; r < cells[c].size(); ++r) {
                    if (col.present[r] && !parse_double(cells[c][r], nums[r])) {
                        throw DataError("csv: column '" + col.name + "' hinted numerical but cell '" +
                                        cells[c][r] + "' is not numeric");
                    }
                }
            }
            col.nums = std::move(nums);
        } else {
            col.cats = std::move(cells[c]);
        }
        ds.columns.push_back(std::move(col));
    }
    return ds;
}

TableDataset load_csv(const std::string& path, const CsvOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), options);
}

namespace {

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\n\r") != std::string::npos;
}

void write_cell(std::string& out, const std::string& s) {
    if (!needs_quoting(s)) {
        out += s;
        return;
    }
    out += '"';
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
}

}  // namespace

std::string to_csv(const TableDataset& ds) {
    std::string out;
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
        if (c) out += ',';
        write_cell(out, ds.columns[c].name);
    }
    out += '\n';
    for (std::size_t r = 0; r < ds.row_count; ++r) {
        for (std::size_t c = 0; c < ds.columns.size(); ++c) {
            if (c) out += ',';
            const Column& col = ds.columns[c];
            if (!col.present[r]) continue;  // missing -> empty cell
            if (col.kind == ColumnKind::numerical) {
                out += format_double(col.nums[r]);
            } else {
                write_cell(out, col.cats[r]);
            }
        }
        out += '\n';
    }
    return out;
}

void write_csv(const TableDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << to_csv(ds);
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

std::pair<TableDataset, TableDataset> split(const TableDataset& ds, const SplitSpec& spec) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
        throw ContractError("split: test_fraction must be in (0, 1)");
    }
    std::vector<std::vector<std::size_t>> groups;
    if (spec.stratify_column) {
        const int c = ds.column_index(*spec.stratify_column);
        if (c < 0) throw DataError("split: no column '" + *spec.stratify_column + "'");
        const Column& col = ds.columns[c];
        std::map<std::string, std::vector<std::size_t>> by_class;
        for (std::size_t r = 0; r < ds.row_count; ++r) {
            std::string key = col.present[r]
                                  ? (col.kind == ColumnKind::numerical ? format_double(col.nums[r]) : col.cats[r])
                                  : std::string("\x01missing");
            by_class[key].push_back(r);
        }
        for (auto& [key, rows] : by_class) groups.push_back(std::move(rows));
    } else {
        groups.emplace_back(ds.row_count);
        std::iota(groups[0].begin(), groups[0].end(), 0);
    }

    std::mt19937_64 rng = rng_stream(spec.seed, {kStreamSplit});
    std::vector<std::size_t> train_rows, test_rows;
    for (std::vector<std::size_t>& rows : groups) {
        std::shuffle(rows.begin(), rows.end(), rng);
        const std::size_t n_test = static_cast<std::size_t>(
            std::llround(spec.test_fraction * static_cast<double>(rows.size())));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            (i < n_test ? test_rows : train_rows).push_back(rows[i]);
        }
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {ds.take_rows(train_rows), ds.take_rows(test_rows)};
}

// ---------------------------------------------------------------------------
// Schemas and encoding
// ---------------------------------------------------------------------------

std::vector<FeatureSchema> fit_schemas(const TableDataset& ds, int bins, const nlohmann::json& hints) {
    std::vector<FeatureSchema> schemas;
    schemas.reserve(ds.columns.size());
    for (const Column& col : ds.columns) {
        int col_bins = bins;
        if (hints.contains(col.name) && hints.at(col.name).contains("bins")) {
            col_bins = hints.at(col.name).at("bins").get<int>();
        }
        if (col.kind == ColumnKind::numerical) {
            schemas.push_back(fit_schema_numeric(col.name, col.nums, col.present, col_bins));
        } else {
            schemas.push_back(fit_schema(col.name, col.cats, col.present, ColumnKind::categorical, col_bins));
        }
    }
    return schemas;
}

EncodedTable encode_table(const TableDataset& ds, const std::vector<const FeatureCodec*>& codecs) {
    if (codecs.size() != ds.columns.size()) {
        throw ContractError("encode_table: codec count does not match columns");
    }
    EncodedTable out;
    out.row_count = ds.row_count;
    out.column_count = ds.columns.size();
    out.classes.resize(codecs.size());
    for (std::size_t c = 0; c < codecs.size(); ++c) {
        out.classes[c].assign(ds.row_count, -1);
        const Column& col = ds.columns[c];
        for (std::size_t r = 0; r < ds.row_count; ++r) {
            if (col.present[r]) {
                out.classes[c][r] = codecs[c]->class_of(col.value(r));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<std::vector<PermutedExample>> batches(const EncodedTable& table, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch,
                                                  double subsample_p) {
    if (batch_size < 1) throw ContractError("batches: batch_size must be >= 1");

    std::vector<std::size_t> order(table.row_count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng = rng_stream(seed, {kStreamShuffle, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    // Group by present-feature count so sequences in a batch share a length.
    std::map<int, std::vector<PermutedExample>> by_count;
    for (std::size_t r : order) {
        PermutedExample ex;
        ex.row = r;
        for (std::size_t c = 0; c < table.column_count; ++c) {
            if (table.classes[c][r] >= 0) ex.features.push_back(static_cast<int>(c));
        }
        if (ex.features.empty()) continue;  // skipped; caller may warn

        std::mt19937_64 perm_rng = rng_stream(seed, {kStreamPermute, epoch, r});
        std::shuffle(ex.features.begin(), ex.features.end(), perm_rng);
        ex.targets.reserve(ex.features.size());
        for (int f : ex.features) ex.targets.push_back(table.classes[f][r]);

        ex.is_input.assign(ex.features.size(), 1);
        if (subsample_p > 0.0) {
            std::mt19937_64 drop_rng = rng_stream(seed, {kStreamSubsample, epoch, r});
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (std::size_t i = 0; i < ex.is_input.size(); ++i) {
                if (unif(drop_rng) < subsample_p) ex.is_input[i] = 0;
            }
        }
        ex.input_len = static_cast<int>(std::count(ex.is_input.begin(), ex.is_input.end(), 1));
        by_count[static_cast<int>(ex.features.size())].push_back(std::move(ex));
    }

    std::vector<std::vector<PermutedExample>> result;
    for (auto& [count, group] : by_count) {
        for (std::size_t i = 0; i < group.size(); i += batch_size) {
            const std::size_t end = std::min(group.size(), i + batch_size);
            result.emplace_back(group.begin() + i, group.begin() + end);
        }
    }
    return result;
}

}  // namespace cgm
