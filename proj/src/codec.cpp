#include "cgm/codec.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace cgm {

int FeatureSchema::num_classes() const {
    if (kind == ColumnKind::categorical) return static_cast<int>(categories.size());
    return static_cast<int>(edges.size()) - 1;
}

nlohmann::json FeatureSchema::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["kind"] = kind == ColumnKind::categorical ? "categorical" : "numerical";
    if (kind == ColumnKind::categorical) {
        j["categories"] = categories;
    } else {
        j["edges"] = edges;
        j["bin_count"] = bin_count;
    }
    j["missing_allowed"] = missing_allowed;
    return j;
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
    FeatureSchema s;
    s.name = j.at("name").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "categorical") {
        s.kind = ColumnKind::categorical;
        s.categories = j.at("categories").get<std::vector<std::string>>();
    } else if (kind == "numerical") {
        s.kind = ColumnKind::numerical;
        s.edges = j.at("edges").get<std::vector<double>>();
        s.bin_count = j.at("bin_count").get<int>();
    } else {
        throw DataError("schema: unknown kind '" + kind + "'");
    }
    s.missing_allowed = j.value("missing_allowed", false);
    return s;
}

double sorted_quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ContractError("quantile of empty vector");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

FeatureSchema fit_schema(const std::string& name, const std::vector<std::string>& raw_values,
                         const std::vector<std::uint8_t>& present, ColumnKind kind, int bins) {
    if (kind == ColumnKind::numerical) {
        std::vector<double> nums(raw_values.size(), 0.0);
        for (std::size_t i = 0; i < raw_values.size(); ++i) {
            if (present[i]) {
                try {
                    nums[i] = std::stod(raw_values[i]);
                } catch (const std::exception&) {
                    throw DataError("column '" + name + "': value '" + raw_values[i] + "' is not numeric");
                }
            }
        }
        return fit_schema_numeric(name, nums, present, bins);
    }

    FeatureSchema s;
    s.name = name;
    s.kind = ColumnKind::categorical;
    std::unordered_map<std::string, int> seen;
    bool any_missing = false;
    for (std::size_t i = 0; i < raw_values.size(); ++i) {
        if (!present[i]) {
            any_missing = true;
            continue;
        }
        if (seen.emplace(raw_values[i], static_cast<int>(s.categories.size())).second) {
            s.categories.push_back(raw_values[i]);
        }
    }
    if (s.categories.empty()) throw DataError("column '" + name + "': all values missing");
    s.missing_allowed = any_missing;
    return s;
}

FeatureSchema fit_schema_numeric(const std::string& name, const std::vector<double>& values,
                                 const std::vector<std::uint8_t>& present, int bins) {
    if (bins < 1) throw ContractError("fit_schema: bin count must be >= 1");
    std::vector<double> sorted;
    bool any_missing = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (present.empty() || present[i]) {
            if (!std::isfinite(values[i])) {
                throw DataError("column '" + name + "': non-finite value");
            }
            sorted.push_back(values[i]);
        } else {
            any_missing = true;
        }
    }
    if (sorted.empty()) throw DataError("column '" + name + "': all values missing");
    std::sort(sorted.begin(), sorted.end());

    FeatureSchema s;
    s.name = name;
    s.kind = ColumnKind::numerical;
    s.bin_count = bins;
    s.missing_allowed = any_missing;
    s.edges.reserve(bins + 1);
    for (int b = 0; b <= bins; ++b) {
        const double e = sorted_quantile(sorted, static_cast<double>(b) / bins);
        // Degenerate bins merge: keep edges strictly increasing.
        if (s.edges.empty() || e > s.edges.back()) s.edges.push_back(e);
    }
    if (s.edges.size() < 2) {
        // Constant column: a single bin of zero width around the value.
        s.edges = {sorted.front(), sorted.front()};
    }
    return s;
}

// ---------------------------------------------------------------------------
// FeatureCodec shared behavior
// ---------------------------------------------------------------------------

Tensor FeatureCodec::encode(const Value& value) const { return encode_class(class_of(value)); }

Tensor FeatureCodec::loss(const Tensor& y, const Value& value) const {
    return class_loss(y, class_of(value));
}

Tensor FeatureCodec::class_loss(const Tensor& y, int cls) const {
    return cross_entropy_logits(conditional_logits(y), cls);
}

int FeatureCodec::sample_class(const Tensor& y, std::mt19937_64& rng, double temperature) const {
    Tensor logits = conditional_logits(y);
    const int d = logits.cols();
    const double* pl = logits.data();
    double m = pl[0] / temperature;
    for (int i = 1; i < d; ++i) m = std::max(m, pl[i] / temperature);
    std::vector<double> probs(d);
    double sum = 0.0;
    for (int i = 0; i < d; ++i) {
        probs[i] = std::exp(pl[i] / temperature - m);
        sum += probs[i];
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng) * sum;
    for (int i = 0; i < d; ++i) {
        u -= probs[i];
        if (u <= 0.0) return i;
    }
    return d - 1;
}

Value FeatureCodec::decode_sample(const Tensor& y, std::mt19937_64& rng, double temperature,
                                  bool midpoint) const {
    return value_of(sample_class(y, rng, temperature), rng, midpoint);
}

// ---------------------------------------------------------------------------
// CategoricalCodec
// ---------------------------------------------------------------------------

CategoricalCodec::CategoricalCodec(FeatureSchema schema, int hidden, std::mt19937_64& rng)
    : schema_(std::move(schema)), hidden_(hidden),
      embedding_(Tensor::randn({static_cast<int>(schema_.categories.size()), hidden}, rng,
                               kWeightInitStd, true)) {}

CategoricalCodec::CategoricalCodec(FeatureSchema schema, Tensor embedding)
    : schema_(std::move(schema)), hidden_(embedding.cols()), embedding_(std::move(embedding)) {
    if (embedding_.rows() != static_cast<int>(schema_.categories.size())) {
        throw ContractError("categorical codec: embedding rows do not match categories");
    }
}

int CategoricalCodec::class_of(const Value& value) const {
    const std::string* s = std::get_if<std::string>(&value);
    if (!s) throw ContractError("column '" + schema_.name + "': expected a category value");
    for (std::size_t i = 0; i < schema_.categories.size(); ++i) {
        if (schema_.categories[i] == *s) return static_cast<int>(i);
    }
    throw DataError("column '" + schema_.name + "': unknown category '" + *s + "'");
}

Value CategoricalCodec::value_of(int cls, std::mt19937_64&, bool) const {
    if (cls < 0 || cls >= num_classes()) throw ContractError("categorical decode: class out of range");
    return schema_.categories[cls];
}

Tensor CategoricalCodec::encode_class(int cls) const {
    if (cls < 0 || cls >= num_classes()) throw ContractError("categorical encode: class out of range");
    return slice_rows(embedding_, cls, 1);
}

Tensor CategoricalCodec::conditional_logits(const Tensor& y) const {
    return matmul_nt(y, embedding_);
}

// ---------------------------------------------------------------------------
// QuantileNumericalCodec
// ---------------------------------------------------------------------------

QuantileNumericalCodec::QuantileNumericalCodec(FeatureSchema schema, int hidden, std::mt19937_64& rng)
    : schema_(std::move(schema)), hidden_(hidden),
      embedding_(Tensor::randn({static_cast<int>(schema_.edges.size()) - 1, hidden}, rng,
                               kWeightInitStd, true)) {}

QuantileNumericalCodec::QuantileNumericalCodec(FeatureSchema schema, Tensor embedding)
    : schema_(std::move(schema)), hidden_(embedding.cols()), embedding_(std::move(embedding)) {
    if (embedding_.rows() != static_cast<int>(schema_.edges.size()) - 1) {
        throw ContractError("numerical codec: embedding rows do not match bins");
    }
}

int QuantileNumericalCodec::bin_of(double v) const {
    const std::vector<double>& e = schema_.edges;
    const int bins = num_classes();
    // Left-closed bins, last bin right-closed; out-of-range values clamp.
    if (v <= e.front()) return 0;
    if (v >= e.back()) return bins - 1;
    const auto it = std::upper_bound(e.begin(), e.end(), v);
    return static_cast<int>(it - e.begin()) - 1;
}

int QuantileNumericalCodec::class_of(const Value& value) const {
    const double* v = std::get_if<double>(&value);
    if (!v) throw ContractError("column '" + schema_.name + "': expected a numeric value");
    if (!std::isfinite(*v)) throw DataError("column '" + schema_.name + "': non-finite value");
    return bin_of(*v);
}

Value QuantileNumericalCodec::value_of(int cls, std::mt19937_64& rng, bool midpoint) const {
    if (cls < 0 || cls >= num_classes()) throw ContractError("numerical decode: bin out of range");
    const double lo = schema_.edges[cls];
    const double hi = schema_.edges[cls + 1];
    if (midpoint || lo == hi) return 0.5 * (lo + hi);
    std::uniform_real_distribution<double> unif(lo, hi);
    return unif(rng);
}

Tensor QuantileNumericalCodec::encode_class(int cls) const {
    if (cls < 0 || cls >= num_classes()) throw ContractError("numerical encode: bin out of range");
    return slice_rows(embedding_, cls, 1);
}

Tensor QuantileNumericalCodec::conditional_logits(const Tensor& y) const {
    return matmul_nt(y, embedding_);
}

std::unique_ptr<FeatureCodec> make_codec(const FeatureSchema& schema, int hidden, std::mt19937_64& rng) {
    if (schema.kind == ColumnKind::categorical) {
        return std::make_unique<CategoricalCodec>(schema, hidden, rng);
    }
    return std::make_unique<QuantileNumericalCodec>(schema, hidden, rng);
}

std::unique_ptr<FeatureCodec> make_codec(const FeatureSchema& schema, Tensor embedding) {
    if (schema.kind == ColumnKind::categorical) {
        return std::make_unique<CategoricalCodec>(schema, std::move(embedding));
    }
    return std::make_unique<QuantileNumericalCodec>(schema, std::move(embedding));
}

}  // namespace cgm
