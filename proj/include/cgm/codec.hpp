#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "cgm/tensor.hpp"

#include "json.hpp"

namespace cgm {

enum class ColumnKind { categorical, numerical };

// A cell value in its original domain: a double for numerical columns, a
// category string otherwise. Missing cells never reach a codec.
using Value = std::variant<double, std::string>;

// Per-column description. Numerical columns carry B-quantile bin edges fitted
// on the training split (duplicates merged); categoricals carry the category
// list indexed by first appearance.
struct FeatureSchema {
    std::string name;
    ColumnKind kind = ColumnKind::categorical;
    std::vector<std::string> categories;  // categorical
    std::vector<double> edges;            // numerical: effective_bins + 1 edges
    int bin_count = 0;                    // requested B (numerical)
    bool missing_allowed = false;

    int num_classes() const;

    nlohmann::json to_json() const;
    static FeatureSchema from_json(const nlohmann::json& j);
};

FeatureSchema fit_schema(const std::string& name, const std::vector<std::string>& raw_values,
                         const std::vector<std::uint8_t>& present, ColumnKind kind, int bins);
FeatureSchema fit_schema_numeric(const std::string& name, const std::vector<double>& values,
                                 const std::vector<std::uint8_t>& present, int bins);

// Linear-interpolation quantile of already-sorted values, q in [0, 1].
double sorted_quantile(const std::vector<double>& sorted, double q);

// The feature-type interface: encoder into R^h, sampling decoder out of R^h,
// and the training loss. Implementations own their parameters.
class FeatureCodec {
  public:
    virtual ~FeatureCodec() = default;

    virtual const FeatureSchema& schema() const = 0;
    virtual int num_classes() const = 0;
    virtual int hidden() const = 0;

    // Latent for a raw value; MISSING values are never encoded.
    Tensor encode(const Value& value) const;
    // -log P(value | y) under the conditional head.
    Tensor loss(const Tensor& y, const Value& value) const;
    // Draw a value from P(. | y). `midpoint` selects deterministic
    // dequantization for numerical codecs.
    Value decode_sample(const Tensor& y, std::mt19937_64& rng, double temperature = 1.0,
                        bool midpoint = false) const;

    // Class-index fast path used by training and evaluation.
    virtual int class_of(const Value& value) const = 0;
    virtual Value value_of(int cls, std::mt19937_64& rng, bool midpoint) const = 0;
    virtual Tensor encode_class(int cls) const = 0;
    virtual Tensor conditional_logits(const Tensor& y) const = 0;
    Tensor class_loss(const Tensor& y, int cls) const;
    int sample_class(const Tensor& y, std::mt19937_64& rng, double temperature) const;

    // The tied embedding matrix (rows are per-class latents).
    virtual Tensor embedding() const = 0;
};

// Categorical codec: one embedding matrix shared between encoder and the
// conditional logits (logits = embedding . y).
class CategoricalCodec : public FeatureCodec {
  public:
    CategoricalCodec(FeatureSchema schema, int hidden, std::mt19937_64& rng);
    CategoricalCodec(FeatureSchema schema, Tensor embedding);

    const FeatureSchema& schema() const override { return schema_; }
    int num_classes() const override { return static_cast<int>(schema_.categories.size()); }
    int hidden() const override { return hidden_; }

    int class_of(const Value& value) const override;
    Value value_of(int cls, std::mt19937_64& rng, bool midpoint) const override;
    Tensor encode_class(int cls) const override;
    Tensor conditional_logits(const Tensor& y) const override;
    Tensor embedding() const override { return embedding_; }

  private:
    FeatureSchema schema_;
    int hidden_;
    Tensor embedding_;  // [num_classes x hidden]
};

// Numerical codec: quantile-bin quantization wrapped around a categorical
// codec over the bins. Decoding dequantizes uniformly within the sampled bin
// (bin midpoint in deterministic mode).
class QuantileNumericalCodec : public FeatureCodec {
  public:
    QuantileNumericalCodec(FeatureSchema schema, int hidden, std::mt19937_64& rng);
    QuantileNumericalCodec(FeatureSchema schema, Tensor embedding);

    const FeatureSchema& schema() const override { return schema_; }
    int num_classes() const override { return static_cast<int>(schema_.edges.size()) - 1; }
    int hidden() const override { return hidden_; }

    int bin_of(double v) const;
    int class_of(const Value& value) const override;
    Value value_of(int cls, std::mt19937_64& rng, bool midpoint) const override;
    Tensor encode_class(int cls) const override;
    Tensor conditional_logits(const Tensor& y) const override;
    Tensor embedding() const override { return embedding_; }

  private:
    FeatureSchema schema_;
    int hidden_;
    Tensor embedding_;  // [bins x hidden]
};

std::unique_ptr<FeatureCodec> make_codec(const FeatureSchema& schema, int hidden, std::mt19937_64& rng);
std::unique_ptr<FeatureCodec> make_codec(const FeatureSchema& schema, Tensor embedding);

constexpr int kDefaultBins = 100;

}  // namespace cgm
